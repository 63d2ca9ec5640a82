"""Grounded contrastive training with in-batch negatives.

One optimizer step covers an effective batch of ``batch_size *
grad_accumulation`` clips: encoders run forward/backward in micro-batches
while the hinge loss and its negatives span the whole effective batch, so a
run with accumulation g is exactly equivalent to one with batch size B*g
and no accumulation.  After every epoch the model is scored on validation
narration data and the checkpoint with the best triplet accuracy (earliest
epoch on ties) is selected.
"""

from __future__ import annotations

import csv
import json
import logging
import warnings
from dataclasses import dataclass, asdict, field
from pathlib import Path

import numpy as np

from .encoders import (AudioEncoder, EncoderConfig, VideoEncoder,
                       pad_frame_stacks, pad_waveforms, save_weights)
from .episodes import Corpus
from .evaluation import (build_triplets, eq_scores, recall_at_n, embed_clips,
                         triplet_score_diffs)
from .losses import contrastive_loss_with_grad
from .nn import Adam, warmup_linear_decay
from .render import Clip, render_clip
from .segmentation import ClipSpan, DatasetSplits, utterance_spans

log = logging.getLogger(__name__)


@dataclass
class TrainingConfig:
    margin: float = 0.2
    batch_size: int = 8
    grad_accumulation: int = 8
    learning_rate: float = 2e-3
    warmup_steps: int | None = None      # None -> 10% of total steps
    epochs: int = 20
    seed: int = 0
    freeze_audio_features: bool = False
    pretrain_audio: bool = True
    pretrain_video: bool = True
    segmentation: str = "fixed"          # "fixed" or "jitter"
    static_video: bool = False

    def validate(self) -> None:
        if self.margin <= 0:
            raise ValueError("margin must be positive")
        if self.batch_size < 2:
            raise ValueError("batch_size must be >= 2 for in-batch negatives")
        if self.grad_accumulation < 1:
            raise ValueError("grad_accumulation must be >= 1")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.segmentation not in ("fixed", "jitter"):
            raise ValueError(f"unknown segmentation {self.segmentation!r}")


def render_spans(corpus: Corpus, spans: list[ClipSpan]) -> list[Clip]:
    """Materialize clips for a span list (cached upstream by the caller)."""
    by_episode = {ep.index: ep for ep in corpus.episodes}
    return [render_clip(corpus.world, by_episode[s.episode],
                        (s.audio_start, s.audio_end), (s.video_start, s.video_end))
            for s in spans]


@dataclass
class EpochStats:
    epoch: int
    loss: float
    val_recall10: float
    val_triplet_acc: float


@dataclass
class RunResult:
    config: TrainingConfig
    encoder_config: EncoderConfig
    epochs: list[EpochStats]
    selected_epoch: int
    audio_encoder: AudioEncoder
    video_encoder: VideoEncoder
    out_dir: Path | None = None


def _rng(seed: int, tag: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(entropy=(seed, tag)))


def _snapshot(params) -> dict[str, np.ndarray]:
    return {p.name: p.value.copy() for p in params}


def _restore(params, snap: dict[str, np.ndarray]) -> None:
    for p in params:
        p.value[...] = snap[p.name]


def train_grounded(config: TrainingConfig, splits: DatasetSplits, corpus: Corpus,
                   encoder_config: EncoderConfig | None = None,
                   audio_init: dict[str, np.ndarray] | None = None,
                   video_init: dict[str, np.ndarray] | None = None,
                   out_dir: str | Path | None = None,
                   trace_resamples: int = 100) -> RunResult:
    """Train the bimodal encoders on dialog spans; select by validation
    narration triplet accuracy.

    ``audio_init`` / ``video_init`` are pretext checkpoints (name -> array)
    applied to the encoder feature stacks before training.  With
    ``freeze_audio_features`` the audio feature stack is excluded from
    optimizer updates entirely.
    """
    config.validate()
    if not splits.train_dialog:
        raise ValueError("empty training split")
    world = corpus.world
    encoder_config = encoder_config or EncoderConfig(
        frame_height=world.config.frame_height,
        frame_width=world.config.frame_width,
        sample_rate=world.config.sample_rate)

    if config.freeze_audio_features and audio_init is None:
        warnings.warn("freezing a randomly initialized audio feature stack "
                      "(freeze without pretraining)", stacklevel=2)

    audio = AudioEncoder(encoder_config, _rng(config.seed, 1))
    video = VideoEncoder(encoder_config, _rng(config.seed, 2),
                         temporal=not config.static_video)
    if audio_init:
        from .encoders import apply_weights
        apply_weights(audio.feature_params(), audio_init)
    if video_init:
        from .encoders import apply_weights
        apply_weights(video.feature_params(), video_init)

    trainable = audio.head_params() + video.params()
    if not config.freeze_audio_features:
        trainable = audio.feature_params() + trainable
    optimizer = Adam(trainable, lr=config.learning_rate)
    all_params = audio.params() + video.params()

    train_clips = render_spans(corpus, splits.train_dialog)
    val_retrieval = render_spans(corpus, splits.val_narration)
    bounds = splits.boundaries
    if bounds is None:
        raise ValueError("splits lack boundary metadata")
    val_utt = render_spans(corpus, utterance_spans(corpus, bounds.val_narration))
    val_triplets = build_triplets(val_utt, _rng(config.seed, 3))
    if not val_triplets:
        raise ValueError("no validation triplets could be formed")

    eff = config.batch_size * config.grad_accumulation
    steps_per_epoch = max(1, -(-len(train_clips) // eff))
    total_steps = steps_per_epoch * config.epochs
    warmup = config.warmup_steps if config.warmup_steps is not None \
        else max(1, int(0.1 * total_steps))

    out_path = Path(out_dir) if out_dir is not None else None
    if out_path is not None:
        out_path.mkdir(parents=True, exist_ok=True)
        (out_path / "config.json").write_text(json.dumps(asdict(config), indent=1))

    batch_rng = _rng(config.seed, 4)
    stats: list[EpochStats] = []
    best: tuple[float, int, dict, dict] | None = None
    step = 0
    min_frames = video.min_frames()

    for epoch in range(1, config.epochs + 1):
        order = batch_rng.permutation(len(train_clips))
        losses = []
        for start in range(0, len(order), eff):
            idxs = order[start:start + eff]
            if len(idxs) < 2:
                continue
            chunks = [idxs[c:c + config.batch_size]
                      for c in range(0, len(idxs), config.batch_size)]
            a_embs, v_embs, a_caches, v_caches = [], [], [], []
            for chunk in chunks:
                waves, wl = pad_waveforms([train_clips[i].waveform for i in chunk])
                frames, fl = pad_frame_stacks(
                    [train_clips[i].frames for i in chunk], min_frames)
                ea, ca = audio.forward(waves, wl)
                ev, cv = video.forward(frames, fl)
                a_embs.append(ea)
                v_embs.append(ev)
                a_caches.append(ca)
                v_caches.append(cv)
            a_all = np.concatenate(a_embs, axis=0)
            v_all = np.concatenate(v_embs, axis=0)
            sims = a_all @ v_all.T
            loss, dsims = contrastive_loss_with_grad(sims, config.margin)
            if not np.isfinite(loss):
                raise RuntimeError(
                    f"training diverged: loss={loss} at epoch {epoch} step {step}")
            losses.append(loss)
            da_all = dsims @ v_all
            dv_all = dsims.T @ a_all
            pos = 0
            for chunk, ca, cv in zip(chunks, a_caches, v_caches):
                sl = slice(pos, pos + len(chunk))
                audio.backward(ca, da_all[sl].astype(a_all.dtype),
                               skip_features=config.freeze_audio_features)
                video.backward(cv, dv_all[sl].astype(v_all.dtype))
                pos += len(chunk)
            optimizer.step(warmup_linear_decay(step, total_steps, warmup))
            for p in all_params:
                p.zero_grad()
            step += 1

        epoch_stats = _evaluate_epoch(epoch, float(np.mean(losses)), audio, video,
                                      val_retrieval, val_triplets, config.seed,
                                      trace_resamples)
        stats.append(epoch_stats)
        log.info("epoch %d: loss=%.3f val_r10=%.3f val_triplet=%.3f",
                 epoch, epoch_stats.loss, epoch_stats.val_recall10,
                 epoch_stats.val_triplet_acc)
        if best is None or epoch_stats.val_triplet_acc > best[0]:
            best = (epoch_stats.val_triplet_acc, epoch,
                    _snapshot(audio.params()), _snapshot(video.params()))
        if out_path is not None:
            save_weights(out_path / f"epoch{epoch:03d}.audio", audio.params(),
                         encoder_config, {"epoch": epoch})
            save_weights(out_path / f"epoch{epoch:03d}.video", video.params(),
                         encoder_config, {"epoch": epoch})

    assert best is not None
    _, selected, audio_snap, video_snap = best
    _restore(audio.params(), audio_snap)
    _restore(video.params(), video_snap)

    if out_path is not None:
        with (out_path / "metrics.csv").open("w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["epoch", "loss", "val_recall10", "val_triplet_acc"])
            for s in stats:
                writer.writerow([s.epoch, f"{s.loss:.6f}", f"{s.val_recall10:.6f}",
                                 f"{s.val_triplet_acc:.6f}"])
        (out_path / "selected.json").write_text(json.dumps(
            {"selected_epoch": selected,
             "checkpoint": f"epoch{selected:03d}"}))

    return RunResult(config=config, encoder_config=encoder_config, epochs=stats,
                     selected_epoch=selected, audio_encoder=audio,
                     video_encoder=video, out_dir=out_path)


def _evaluate_epoch(epoch: int, loss: float, audio: AudioEncoder,
                    video: VideoEncoder, val_retrieval: list[Clip],
                    val_triplets, seed: int, resamples: int) -> EpochStats:
    diffs = triplet_score_diffs(val_triplets, audio, video)
    triplet_acc = float(eq_scores(diffs).mean())
    recall = float("nan")
    if len(val_retrieval) >= 100:
        a_embs, v_embs = embed_clips(val_retrieval, audio, video)
        recall = recall_at_n(a_embs, v_embs, n=10, candidate_size=100,
                             resamples=resamples, rng=_rng(seed, 5)).mean
    return EpochStats(epoch=epoch, loss=loss, val_recall10=recall,
                      val_triplet_acc=triplet_acc)
