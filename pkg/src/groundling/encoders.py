"""Bimodal encoders mapping waveforms and frame stacks to a shared unit sphere.

The audio encoder is a strided 1-D convolution stack over the raw waveform
followed by dimension-wise attention pooling, a linear projection and L2
normalization.  The video encoder applies a 2-D convolution stack per frame,
a 1-D temporal convolution across frames, then the same pooling/projection
head; the static variant drops the temporal convolution and is therefore
exactly permutation-invariant over frames.  Variable-length batches are
padded and masked: embeddings never depend on padding beyond the true input
length.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, asdict, field
from pathlib import Path

import numpy as np

from .nn import (AttentionPool, Conv1d, Conv2d, Linear, Param, conv1d_out_len,
                 l2_normalize, l2_normalize_backward, relu, relu_backward)

MIN_AUDIO_SECONDS = 0.05


@dataclass(frozen=True)
class EncoderConfig:
    joint_dim: int = 128
    audio_channels: tuple[int, ...] = (16, 24, 32, 64)
    audio_kernels: tuple[int, ...] = (25, 9, 7, 5)
    audio_strides: tuple[int, ...] = (5, 2, 2, 2)
    video_channels: tuple[int, ...] = (16, 32, 64)
    video_kernel: int = 3
    video_stride: int = 2
    frame_feature_dim: int = 64
    temporal_kernel: int = 3
    frame_height: int = 36
    frame_width: int = 20
    sample_rate: int = 8000

    @property
    def audio_feature_dim(self) -> int:
        return self.audio_channels[-1]

    def hash(self) -> str:
        blob = json.dumps(asdict(self), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:12]


def _spawn(rng_or_seed) -> np.random.Generator:
    if isinstance(rng_or_seed, np.random.Generator):
        return rng_or_seed
    return np.random.default_rng(rng_or_seed)


class AudioEncoder:
    """Waveform (B, L) + lengths -> unit-norm embeddings (B, joint_dim)."""

    def __init__(self, config: EncoderConfig, rng, dtype=np.float32):
        rng = _spawn(rng)
        self.config = config
        self.dtype = dtype
        chans = (1,) + tuple(config.audio_channels)
        self.stack = [
            Conv1d(f"audio.feat{i}", chans[i], chans[i + 1],
                   config.audio_kernels[i], config.audio_strides[i], rng, dtype)
            for i in range(len(config.audio_channels))
        ]
        d = config.audio_feature_dim
        self.pool = AttentionPool("audio.pool", d, rng, dtype)
        self.proj = Linear("audio.proj", d, config.joint_dim, rng, dtype, init="xavier")

    def feature_params(self) -> list[Param]:
        return [p for layer in self.stack for p in layer.params()]

    def head_params(self) -> list[Param]:
        return self.pool.params() + self.proj.params()

    def params(self) -> list[Param]:
        return self.feature_params() + self.head_params()

    def feature_lengths(self, lengths: np.ndarray) -> np.ndarray:
        out = np.asarray(lengths)
        for layer in self.stack:
            out = conv1d_out_len(out, layer.k, layer.stride)
        return out

    def forward_features(self, waves: np.ndarray, lengths: np.ndarray):
        """(B, L) padded waveforms -> (B, T, D) feature sequence + mask."""
        feat_lengths = self.feature_lengths(lengths)
        if (feat_lengths < 1).any():
            raise ValueError("waveform too short: empty feature sequence")
        x = waves[:, None, :].astype(self.dtype, copy=False)
        caches = []
        for layer in self.stack:
            x, c = layer.forward(x)
            x, m = relu(x)
            caches.append((c, m))
        seq = np.ascontiguousarray(x.transpose(0, 2, 1))
        mask = np.arange(seq.shape[1])[None, :] < feat_lengths[:, None]
        return seq, mask, caches

    def backward_features(self, caches, dseq: np.ndarray) -> None:
        dh = np.ascontiguousarray(dseq.transpose(0, 2, 1))
        for layer, (c, m) in zip(reversed(self.stack), reversed(caches)):
            dh = relu_backward(m, dh)
            dh = layer.backward(c, dh)

    def forward(self, waves: np.ndarray, lengths: np.ndarray):
        seq, mask, feat_caches = self.forward_features(waves, lengths)
        z, pool_cache = self.pool.forward(seq, mask)
        e, proj_cache = self.proj.forward(z)
        emb, norm_cache = l2_normalize(e)
        return emb, (feat_caches, pool_cache, proj_cache, norm_cache)

    def backward(self, cache, demb: np.ndarray,
                 skip_features: bool = False) -> None:
        feat_caches, pool_cache, proj_cache, norm_cache = cache
        de = l2_normalize_backward(norm_cache, demb)
        dz = self.proj.backward(proj_cache, de)
        dseq = self.pool.backward(pool_cache, dz)
        if not skip_features:
            self.backward_features(feat_caches, dseq)

    def encode(self, waves: np.ndarray, lengths: np.ndarray) -> np.ndarray:
        return self.forward(waves, lengths)[0]


class VideoEncoder:
    """Frames (B, T, H, W, 3) + lengths -> unit-norm embeddings.

    ``temporal=False`` gives the static baseline: per-frame encoding plus
    attention pooling only, exactly permutation-invariant over frames.
    """

    def __init__(self, config: EncoderConfig, rng, temporal: bool = True,
                 dtype=np.float32):
        rng = _spawn(rng)
        self.config = config
        self.temporal = temporal
        self.dtype = dtype
        chans = (3,) + tuple(config.video_channels)
        self.spatial = [
            Conv2d(f"video.spat{i}", chans[i], chans[i + 1], config.video_kernel,
                   config.video_stride, rng, dtype)
            for i in range(len(config.video_channels))
        ]
        h, w = config.frame_height, config.frame_width
        for _ in self.spatial:
            h = (h - config.video_kernel) // config.video_stride + 1
            w = (w - config.video_kernel) // config.video_stride + 1
        self._flat_dim = h * w * config.video_channels[-1]
        d = config.frame_feature_dim
        self.frame_proj = Linear("video.frame", self._flat_dim, d, rng, dtype)
        self.temporal_conv = Conv1d("video.temporal", d, d, config.temporal_kernel,
                                    1, rng, dtype) if temporal else None
        self.pool = AttentionPool("video.pool", d, rng, dtype)
        self.proj = Linear("video.proj", d, config.joint_dim, rng, dtype, init="xavier")

    def feature_params(self) -> list[Param]:
        out = [p for layer in self.spatial for p in layer.params()]
        out += self.frame_proj.params()
        if self.temporal_conv is not None:
            out += self.temporal_conv.params()
        return out

    def head_params(self) -> list[Param]:
        return self.pool.params() + self.proj.params()

    def params(self) -> list[Param]:
        return self.feature_params() + self.head_params()

    def min_frames(self) -> int:
        return self.config.temporal_kernel if self.temporal_conv is not None else 1

    def forward_features(self, frames: np.ndarray, lengths: np.ndarray):
        b, t, h, w, c = frames.shape
        cfg = self.config
        if (h, w, c) != (cfg.frame_height, cfg.frame_width, 3):
            raise ValueError(f"frames have shape {h}x{w}x{c}, "
                             f"expected {cfg.frame_height}x{cfg.frame_width}x3")
        if (np.asarray(lengths) < 1).any():
            raise ValueError("every clip needs at least one frame")
        x = np.ascontiguousarray(
            frames.reshape(b * t, h, w, c).transpose(0, 3, 1, 2)).astype(
                self.dtype, copy=False)
        caches = []
        for layer in self.spatial:
            x, cc = layer.forward(x)
            x, m = relu(x)
            caches.append((cc, m))
        flat = x.reshape(b * t, self._flat_dim)
        f, frame_cache = self.frame_proj.forward(flat)
        seq = f.reshape(b, t, -1)
        feat_lengths = np.asarray(lengths).copy()
        tconv_cache = None
        if self.temporal_conv is not None:
            k = self.config.temporal_kernel
            if (feat_lengths < k).any():
                raise ValueError(f"temporal encoder needs at least {k} frames; "
                                 "pad short clips first")
            tc_in = np.ascontiguousarray(seq.transpose(0, 2, 1))
            th, conv_cache = self.temporal_conv.forward(tc_in)
            tr, m = relu(th)
            seq = np.ascontiguousarray(tr.transpose(0, 2, 1))
            feat_lengths = feat_lengths - (k - 1)
            tconv_cache = (conv_cache, m)
        mask = np.arange(seq.shape[1])[None, :] < feat_lengths[:, None]
        return seq, mask, (caches, frame_cache, tconv_cache, (b, t, x.shape))

    def backward_features(self, cache, dseq: np.ndarray) -> None:
        caches, frame_cache, tconv_cache, (b, t, xshape) = cache
        if tconv_cache is not None:
            conv_cache, m = tconv_cache
            dtr = np.ascontiguousarray(dseq.transpose(0, 2, 1))
            dth = relu_backward(m, dtr)
            dtc_in = self.temporal_conv.backward(conv_cache, dth)
            dseq = np.ascontiguousarray(dtc_in.transpose(0, 2, 1))
        df = dseq.reshape(b * t, -1)
        dflat = self.frame_proj.backward(frame_cache, df)
        dh = dflat.reshape(xshape)
        for layer, (cc, m) in zip(reversed(self.spatial), reversed(caches)):
            dh = relu_backward(m, dh)
            dh = layer.backward(cc, dh)

    def forward(self, frames: np.ndarray, lengths: np.ndarray):
        seq, mask, feat_cache = self.forward_features(frames, lengths)
        z, pool_cache = self.pool.forward(seq, mask)
        e, proj_cache = self.proj.forward(z)
        emb, norm_cache = l2_normalize(e)
        return emb, (feat_cache, pool_cache, proj_cache, norm_cache)

    def backward(self, cache, demb: np.ndarray) -> None:
        feat_cache, pool_cache, proj_cache, norm_cache = cache
        de = l2_normalize_backward(norm_cache, demb)
        dz = self.proj.backward(proj_cache, de)
        dseq = self.pool.backward(pool_cache, dz)
        self.backward_features(feat_cache, dseq)

    def encode(self, frames: np.ndarray, lengths: np.ndarray) -> np.ndarray:
        return self.forward(frames, lengths)[0]


def make_video_encoder(config: EncoderConfig, rng, static: bool = False,
                       dtype=np.float32) -> VideoEncoder:
    return VideoEncoder(config, rng, temporal=not static, dtype=dtype)


# ---------------------------------------------------------------------------
# batching helpers

def pad_waveforms(waves: list[np.ndarray], dtype=np.float32):
    """Stack 1-D waveforms into (B, L_max) with zero padding + true lengths."""
    lengths = np.array([len(w) for w in waves], dtype=np.int64)
    out = np.zeros((len(waves), int(lengths.max())), dtype=dtype)
    for i, w in enumerate(waves):
        out[i, :len(w)] = w
    return out, lengths


def pad_frame_stacks(stacks: list[np.ndarray], min_frames: int = 1,
                     dtype=np.float32):
    """Stack (T_i, H, W, 3) tensors into (B, T_max, H, W, 3) + true lengths.

    Clips shorter than ``min_frames`` are extended by repeating their last
    frame, which keeps the temporal convolution well-defined.
    """
    fixed = []
    for s in stacks:
        if s.shape[0] < min_frames:
            reps = np.repeat(s[-1:], min_frames - s.shape[0], axis=0)
            s = np.concatenate([s, reps], axis=0)
        fixed.append(s)
    lengths = np.array([s.shape[0] for s in fixed], dtype=np.int64)
    t_max = int(lengths.max())
    h, w, c = fixed[0].shape[1:]
    out = np.zeros((len(fixed), t_max, h, w, c), dtype=dtype)
    for i, s in enumerate(fixed):
        out[i, :s.shape[0]] = s
    return out, lengths


def encode_audio_clip(encoder: AudioEncoder, waveform: np.ndarray) -> np.ndarray:
    """Embed a single waveform; rejects inputs shorter than 0.05 s."""
    sr = encoder.config.sample_rate
    if len(waveform) < MIN_AUDIO_SECONDS * sr:
        raise ValueError(f"waveform shorter than {MIN_AUDIO_SECONDS} s")
    waves, lengths = pad_waveforms([waveform])
    return encoder.encode(waves, lengths)[0]


def encode_video_clip(encoder: VideoEncoder, frames: np.ndarray) -> np.ndarray:
    """Embed a single (T, H, W, 3) frame stack."""
    if frames.ndim != 4 or frames.shape[0] < 1:
        raise ValueError("expected a (T, H, W, 3) frame stack with T >= 1")
    stack, lengths = pad_frame_stacks([frames], encoder.min_frames())
    return encoder.encode(stack, lengths)[0]


def scramble_frames(frames: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Uniformly random permutation of the frames of one clip."""
    perm = rng.permutation(frames.shape[0])
    return frames[perm]


# ---------------------------------------------------------------------------
# checkpoints: raw float32 arrays + JSON header

CKPT_VERSION = 1


def save_weights(path: str | Path, params: list[Param],
                 config: EncoderConfig, meta: dict | None = None) -> None:
    """Write params as one little-endian float32 blob plus a JSON header."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    arrays = []
    offset = 0
    chunks = []
    for p in params:
        arr = np.ascontiguousarray(p.value, dtype="<f4")
        arrays.append({"name": p.name, "shape": list(arr.shape), "offset": offset})
        offset += arr.size
        chunks.append(arr.reshape(-1))
    header = {"version": CKPT_VERSION, "dtype": "float32",
              "config_hash": config.hash(), "config": asdict(config),
              "arrays": arrays, "meta": meta or {}}
    path.with_suffix(".json").write_text(json.dumps(header))
    blob = np.concatenate(chunks) if chunks else np.zeros(0, dtype="<f4")
    path.with_suffix(".f32").write_bytes(blob.tobytes())


def load_weights(path: str | Path) -> tuple[dict[str, np.ndarray], dict]:
    """Read a checkpoint; returns (name -> array, header)."""
    path = Path(path)
    header = json.loads(path.with_suffix(".json").read_text())
    if header.get("version") != CKPT_VERSION:
        raise ValueError(f"unknown checkpoint version {header.get('version')!r}")
    blob = np.frombuffer(path.with_suffix(".f32").read_bytes(), dtype="<f4")
    out = {}
    for spec in header["arrays"]:
        size = int(np.prod(spec["shape"])) if spec["shape"] else 1
        chunk = blob[spec["offset"]:spec["offset"] + size]
        if chunk.size != size:
            raise ValueError(f"checkpoint truncated at array {spec['name']!r}")
        out[spec["name"]] = chunk.reshape(spec["shape"]).copy()
    return out, header


def apply_weights(params: list[Param], weights: dict[str, np.ndarray],
                  strict: bool = False) -> list[str]:
    """Copy matching arrays into params by name; returns the loaded names."""
    loaded = []
    for p in params:
        if p.name in weights:
            w = weights[p.name]
            if w.shape != p.value.shape:
                raise ValueError(f"shape mismatch for {p.name}: "
                                 f"{w.shape} vs {p.value.shape}")
            p.value[...] = w.astype(p.value.dtype)
            loaded.append(p.name)
        elif strict:
            raise ValueError(f"checkpoint lacks parameter {p.name!r}")
    return loaded
