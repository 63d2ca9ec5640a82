"""Single-modality pretext pretraining for the encoder feature stacks.

Audio: masked-step prediction.  Feature frames are computed by the audio
stack, a random subset is replaced by a learned mask vector, and a small
temporal context network must pick each masked frame's true features out
of the other masked frames in the batch (cosine softmax).  Video: verb
classification.  The video feature path (spatial convs, frame projection,
temporal conv) feeds a mean-pool and a linear head that predicts which
motion pattern animates the clip.

Both return plain name->array weight dicts for the corresponding encoder
feature stacks; pooling and projection heads are always trained from
scratch during grounded training.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .encoders import AudioEncoder, EncoderConfig, VideoEncoder, \
    pad_frame_stacks, pad_waveforms
from .nn import (Adam, Conv1d, Linear, Param, l2_normalize,
                 l2_normalize_backward, relu, relu_backward,
                 softmax_cross_entropy, warmup_linear_decay)

log = logging.getLogger(__name__)


@dataclass
class AudioPretextConfig:
    epochs: int = 8
    batch_size: int = 8
    mask_ratio: float = 0.15
    temperature: float = 0.1
    learning_rate: float = 2e-3
    max_targets: int = 512
    min_clips: int = 100
    seed: int = 0

    def validate(self) -> None:
        if not 0.0 < self.mask_ratio <= 1.0:
            raise ValueError("mask_ratio must be in (0, 1]: a zero ratio "
                             "makes the pretext trivially solvable")
        if self.epochs < 1 or self.batch_size < 2:
            raise ValueError("need epochs >= 1 and batch_size >= 2")


@dataclass
class VideoPretextConfig:
    epochs: int = 10
    batch_size: int = 16
    learning_rate: float = 2e-3
    holdout_fraction: float = 0.2
    min_clips: int = 100
    seed: int = 0

    def validate(self) -> None:
        if self.epochs < 1 or self.batch_size < 2:
            raise ValueError("need epochs >= 1 and batch_size >= 2")
        if not 0.0 < self.holdout_fraction < 0.5:
            raise ValueError("holdout_fraction must be in (0, 0.5)")


class _PaddedConv1d:
    """Stride-1 conv with symmetric zero padding (length preserved)."""

    def __init__(self, name: str, c_in: int, c_out: int, k: int, rng):
        assert k % 2 == 1
        self.pad = (k - 1) // 2
        self.conv = Conv1d(name, c_in, c_out, k, 1, rng)

    def params(self):
        return self.conv.params()

    def forward(self, x):
        xp = np.pad(x, ((0, 0), (0, 0), (self.pad, self.pad)))
        return self.conv.forward(xp)

    def backward(self, cache, dy):
        dxp = self.conv.backward(cache, dy)
        return dxp[:, :, self.pad:-self.pad]


@dataclass
class PretextResult:
    weights: dict[str, np.ndarray]
    loss_trace: list[float]
    holdout_accuracy: list[float] = field(default_factory=list)


def pretrain_audio(waveforms: list[np.ndarray], config: AudioPretextConfig,
                   encoder_config: EncoderConfig | None = None) -> PretextResult:
    """Train the audio feature stack by masked-step prediction."""
    config.validate()
    if len(waveforms) < config.min_clips:
        raise ValueError(f"need at least {config.min_clips} clips, "
                         f"got {len(waveforms)}")
    encoder_config = encoder_config or EncoderConfig()
    rng = np.random.default_rng(np.random.SeedSequence(entropy=(config.seed, 10)))
    encoder = AudioEncoder(encoder_config, rng)
    d = encoder_config.audio_feature_dim
    ctx1 = _PaddedConv1d("ctx.conv1", d, d, 9, rng)
    ctx2 = _PaddedConv1d("ctx.conv2", d, d, 9, rng)
    mask_vec = Param("ctx.mask", (rng.standard_normal(d) * 0.1).astype(np.float32))

    params = encoder.feature_params() + ctx1.params() + ctx2.params() + [mask_vec]
    optimizer = Adam(params, lr=config.learning_rate)
    mask_rng = np.random.default_rng(np.random.SeedSequence(entropy=(config.seed, 11)))

    n = len(waveforms)
    steps_per_epoch = max(1, n // config.batch_size)
    total_steps = steps_per_epoch * config.epochs
    warmup = max(1, int(0.1 * total_steps))
    step = 0
    trace = []
    for epoch in range(config.epochs):
        order = mask_rng.permutation(n)
        losses = []
        for start in range(0, n - config.batch_size + 1, config.batch_size):
            idxs = order[start:start + config.batch_size]
            waves, lengths = pad_waveforms([waveforms[i] for i in idxs])
            seq, valid, caches = encoder.forward_features(waves, lengths)
            b, t, _ = seq.shape

            rows, cols = [], []
            for bi in range(b):
                n_valid = int(valid[bi].sum())
                n_mask = max(1, int(round(config.mask_ratio * n_valid)))
                pos = mask_rng.choice(n_valid, size=n_mask, replace=False)
                rows.extend([bi] * n_mask)
                cols.extend(pos.tolist())
            rows = np.asarray(rows)
            cols = np.asarray(cols)
            if len(rows) > config.max_targets:
                keep = mask_rng.choice(len(rows), size=config.max_targets,
                                       replace=False)
                rows, cols = rows[keep], cols[keep]
            if len(rows) < 2:
                continue

            masked = seq * valid[:, :, None]
            masked[rows, cols] = mask_vec.value
            x = np.ascontiguousarray(masked.transpose(0, 2, 1))
            h1, c1 = ctx1.forward(x)
            r1, m1 = relu(h1)
            h2, c2 = ctx2.forward(r1)
            ctxseq = np.ascontiguousarray(h2.transpose(0, 2, 1))

            preds = ctxseq[rows, cols]
            targets = seq[rows, cols]
            preds_n, pn_cache = l2_normalize(preds)
            targets_n, tn_cache = l2_normalize(targets)
            logits = (preds_n @ targets_n.T) / config.temperature
            loss, dlogits, _ = softmax_cross_entropy(logits,
                                                     np.arange(len(rows)))
            losses.append(loss)

            dpreds_n = (dlogits @ targets_n) / config.temperature
            dtargets_n = (dlogits.T @ preds_n) / config.temperature
            dpreds = l2_normalize_backward(pn_cache, dpreds_n)
            dtargets = l2_normalize_backward(tn_cache, dtargets_n)

            dctx = np.zeros_like(ctxseq)
            dctx[rows, cols] = dpreds
            dh2 = np.ascontiguousarray(dctx.transpose(0, 2, 1))
            dr1 = ctx2.backward(c2, dh2)
            dh1 = relu_backward(m1, dr1)
            dx = ctx1.backward(c1, dh1)
            dmasked = np.ascontiguousarray(dx.transpose(0, 2, 1))

            mask_vec.grad += dmasked[rows, cols].sum(axis=0)
            dseq = dmasked * valid[:, :, None]
            dseq[rows, cols] = dtargets
            encoder.backward_features(caches, dseq.astype(seq.dtype))

            optimizer.step(warmup_linear_decay(step, total_steps, warmup))
            optimizer.zero_grad()
            step += 1
        trace.append(float(np.mean(losses)))
        log.info("audio pretext epoch %d: loss=%.4f", epoch + 1, trace[-1])

    if trace and trace[-1] > 0.8 * trace[0]:
        log.warning("audio pretext loss fell only %.1f%% (contract asks >= 20%%)",
                    100 * (1 - trace[-1] / trace[0]))
    return PretextResult(
        weights={p.name: p.value.copy() for p in encoder.feature_params()},
        loss_trace=trace)


def _masked_mean_pool(seq: np.ndarray, mask: np.ndarray):
    counts = mask.sum(axis=1, keepdims=True).astype(seq.dtype)
    z = (seq * mask[:, :, None]).sum(axis=1) / counts
    return z, (mask, counts)


def _masked_mean_pool_backward(cache, dz: np.ndarray) -> np.ndarray:
    mask, counts = cache
    return (dz / counts)[:, None, :] * mask[:, :, None]


def pretrain_video(frame_stacks: list[np.ndarray], labels: list[int],
                   n_classes: int, config: VideoPretextConfig,
                   encoder_config: EncoderConfig | None = None) -> PretextResult:
    """Train the video feature path to classify clip motion patterns."""
    config.validate()
    if len(frame_stacks) < config.min_clips:
        raise ValueError(f"need at least {config.min_clips} clips, "
                         f"got {len(frame_stacks)}")
    if len(frame_stacks) != len(labels):
        raise ValueError("clip/label count mismatch")
    encoder_config = encoder_config or EncoderConfig()
    rng = np.random.default_rng(np.random.SeedSequence(entropy=(config.seed, 20)))
    encoder = VideoEncoder(encoder_config, rng, temporal=True)
    head = Linear("head", encoder_config.frame_feature_dim, n_classes, rng,
                  init="xavier")
    params = encoder.feature_params() + head.params()
    optimizer = Adam(params, lr=config.learning_rate)

    labels = np.asarray(labels)
    order = rng.permutation(len(frame_stacks))
    n_hold = max(1, int(config.holdout_fraction * len(frame_stacks)))
    hold, train = order[:n_hold], order[n_hold:]
    min_frames = encoder.min_frames()

    def batch(idxs):
        frames, fl = pad_frame_stacks([frame_stacks[i] for i in idxs], min_frames)
        return frames, fl, labels[idxs]

    def holdout_accuracy() -> float:
        correct = 0
        for start in range(0, len(hold), config.batch_size):
            idxs = hold[start:start + config.batch_size]
            frames, fl, y = batch(idxs)
            seq, mask, _ = encoder.forward_features(frames, fl)
            z, _ = _masked_mean_pool(seq, mask)
            logits, _ = head.forward(z)
            correct += int((logits.argmax(axis=1) == y).sum())
        return correct / len(hold)

    steps_per_epoch = max(1, len(train) // config.batch_size)
    total_steps = steps_per_epoch * config.epochs
    warmup = max(1, int(0.1 * total_steps))
    step = 0
    trace, acc_trace = [], []
    for epoch in range(config.epochs):
        rng.shuffle(train)
        losses = []
        for start in range(0, len(train) - 1, config.batch_size):
            idxs = train[start:start + config.batch_size]
            frames, fl, y = batch(idxs)
            seq, mask, cache = encoder.forward_features(frames, fl)
            z, pool_cache = _masked_mean_pool(seq, mask)
            logits, head_cache = head.forward(z)
            loss, dlogits, _ = softmax_cross_entropy(logits, y)
            losses.append(loss)
            dz = head.backward(head_cache, dlogits.astype(z.dtype))
            dseq = _masked_mean_pool_backward(pool_cache, dz)
            encoder.backward_features(cache, dseq)
            optimizer.step(warmup_linear_decay(step, total_steps, warmup))
            optimizer.zero_grad()
            step += 1
        trace.append(float(np.mean(losses)))
        acc_trace.append(holdout_accuracy())
        log.info("video pretext epoch %d: loss=%.4f holdout_acc=%.3f",
                 epoch + 1, trace[-1], acc_trace[-1])

    return PretextResult(
        weights={p.name: p.value.copy() for p in encoder.feature_params()},
        loss_trace=trace, holdout_accuracy=acc_trace)
