"""Clip-span extraction (fixed and jitter strategies) and dataset splits.

Fixed segmentation cuts each annotated section into contiguous,
non-overlapping spans of a nominal length (2.3 s), keeping a trailing
remainder only when it is at least 0.3 s.  Jitter segmentation places
anchors at the same nominal stride but draws the audio and the video
duration independently from a clipped normal, so paired spans share a
center yet differ in length and neighbouring spans may overlap.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .episodes import Corpus, DIALOG, NARRATION, Section

SPAN_FILE_VERSION = 1

CLIP_LEN = 2.3
JITTER_SIGMA = 0.5
DURATION_MIN = 0.05
DURATION_MAX = 6.0
REMAINDER_MIN = 0.3


@dataclass(frozen=True)
class ClipSpan:
    episode: int
    kind: str
    audio_start: float
    audio_end: float
    video_start: float
    video_end: float

    @property
    def audio_duration(self) -> float:
        return self.audio_end - self.audio_start

    @property
    def video_duration(self) -> float:
        return self.video_end - self.video_start


def _span(episode: int, kind: str, a0: float, a1: float,
          v0: float | None = None, v1: float | None = None) -> ClipSpan:
    if v0 is None:
        v0, v1 = a0, a1
    r = lambda x: round(float(x), 6)
    return ClipSpan(episode=episode, kind=kind, audio_start=r(a0), audio_end=r(a1),
                    video_start=r(v0), video_end=r(v1))


def split_fixed(section: Section, episode: int,
                clip_len: float = CLIP_LEN) -> list[ClipSpan]:
    """Non-overlapping spans of ``clip_len``; short trailing remainder kept
    only when it is at least 0.3 s."""
    spans = []
    t = section.start
    while t + clip_len <= section.end + 1e-9:
        spans.append(_span(episode, section.kind, t, t + clip_len))
        t += clip_len
    remainder = section.end - t
    if remainder >= REMAINDER_MIN - 1e-9 and remainder >= DURATION_MIN:
        spans.append(_span(episode, section.kind, t, section.end))
    return spans


def sample_jitter_duration(rng: np.random.Generator, mean: float = CLIP_LEN,
                           sigma: float = JITTER_SIGMA) -> float:
    """One duration draw: min(6, max(0.05, Normal(mean, sigma)))."""
    return float(min(DURATION_MAX, max(DURATION_MIN, rng.normal(mean, sigma))))


def split_jitter(section: Section, episode: int, rng: np.random.Generator,
                 clip_len: float = CLIP_LEN,
                 sigma: float = JITTER_SIGMA) -> list[ClipSpan]:
    """Anchor centers at ``clip_len`` stride; audio and video durations drawn
    independently, spans clipped to the section."""
    if section.duration < DURATION_MIN:
        raise ValueError("section too short to segment")
    centers = []
    c = section.start + clip_len / 2.0
    while c < section.end:
        centers.append(c)
        c += clip_len
    if not centers:
        centers = [(section.start + section.end) / 2.0]

    spans = []
    for center in centers:
        d_audio = sample_jitter_duration(rng, clip_len, sigma)
        d_video = sample_jitter_duration(rng, clip_len, sigma)
        a0 = max(section.start, center - d_audio / 2.0)
        a1 = min(section.end, center + d_audio / 2.0)
        v0 = max(section.start, center - d_video / 2.0)
        v1 = min(section.end, center + d_video / 2.0)
        if a1 - a0 < DURATION_MIN or v1 - v0 < DURATION_MIN:
            continue
        spans.append(_span(episode, section.kind, a0, a1, v0, v1))
    return spans


@dataclass(frozen=True)
class SplitBoundaries:
    """Inclusive 1-based episode ranges per (split, kind)."""
    train_dialog: tuple[int, int]
    val_dialog: tuple[int, int]
    val_narration: tuple[int, int]
    test_narration: tuple[int, int]

    def validate(self) -> None:
        def overlap(a, b):
            return a[0] <= b[1] and b[0] <= a[1]
        if overlap(self.train_dialog, self.val_dialog):
            raise ValueError("train and validation dialog ranges overlap")
        if overlap(self.val_narration, self.test_narration):
            raise ValueError("validation and test narration ranges overlap")


# reference proportions: 209 episodes split 196/13 for dialog and 104/105
# for narration
_REF_TOTAL = 209
_REF_VAL_DIALOG = 13
_REF_VAL_NARR = 104


def default_boundaries(n_episodes: int) -> SplitBoundaries:
    """Scale the reference split proportions to ``n_episodes``.

    The validation-dialog share is rounded up (ceil) so there is always at
    least one validation episode; the narration halves split round-half-up.
    """
    if n_episodes < 2:
        raise ValueError("need at least 2 episodes to split")
    n_val_dialog = -(-n_episodes * _REF_VAL_DIALOG // _REF_TOTAL)  # ceil
    n_val_dialog = min(max(1, n_val_dialog), n_episodes - 1)
    n_val_narr = (2 * n_episodes * _REF_VAL_NARR + _REF_TOTAL) // (2 * _REF_TOTAL)
    n_val_narr = min(max(1, n_val_narr), n_episodes - 1)
    return SplitBoundaries(
        train_dialog=(1, n_episodes - n_val_dialog),
        val_dialog=(n_episodes - n_val_dialog + 1, n_episodes),
        val_narration=(1, n_val_narr),
        test_narration=(n_val_narr + 1, n_episodes),
    )


@dataclass
class DatasetSplits:
    train_dialog: list[ClipSpan] = field(default_factory=list)
    val_dialog: list[ClipSpan] = field(default_factory=list)
    val_narration: list[ClipSpan] = field(default_factory=list)
    test_narration: list[ClipSpan] = field(default_factory=list)
    strategy: str = "fixed"
    boundaries: SplitBoundaries | None = None

    def as_dict(self) -> dict[str, list[ClipSpan]]:
        return {"train_dialog": self.train_dialog,
                "val_dialog": self.val_dialog,
                "val_narration": self.val_narration,
                "test_narration": self.test_narration}


def make_splits(corpus: Corpus, boundaries: SplitBoundaries | None = None,
                train_strategy: str = "fixed",
                rng: np.random.Generator | None = None,
                clip_len: float = CLIP_LEN) -> DatasetSplits:
    """Assign fixed/jitter clip spans of the corpus to dataset splits.

    Training uses only dialog; narration is reserved for validation and
    test.  Evaluation splits always use fixed segmentation so that scores
    are comparable across training strategies.
    """
    n = len(corpus.episodes)
    boundaries = boundaries or default_boundaries(n)
    boundaries.validate()
    for name in ("train_dialog", "val_dialog", "val_narration", "test_narration"):
        lo, hi = getattr(boundaries, name)
        if hi > n:
            raise ValueError(f"{name} boundary {hi} exceeds corpus size {n}")
    if train_strategy not in ("fixed", "jitter"):
        raise ValueError(f"unknown strategy {train_strategy!r}")
    if train_strategy == "jitter" and rng is None:
        raise ValueError("jitter segmentation needs an rng")

    splits = DatasetSplits(strategy=train_strategy, boundaries=boundaries)
    for ep in corpus.episodes:
        for sec in ep.sections:
            if sec.kind == DIALOG:
                if boundaries.train_dialog[0] <= ep.index <= boundaries.train_dialog[1]:
                    if train_strategy == "jitter":
                        splits.train_dialog.extend(split_jitter(sec, ep.index, rng, clip_len))
                    else:
                        splits.train_dialog.extend(split_fixed(sec, ep.index, clip_len))
                elif boundaries.val_dialog[0] <= ep.index <= boundaries.val_dialog[1]:
                    splits.val_dialog.extend(split_fixed(sec, ep.index, clip_len))
            elif sec.kind == NARRATION:
                if boundaries.val_narration[0] <= ep.index <= boundaries.val_narration[1]:
                    splits.val_narration.extend(split_fixed(sec, ep.index, clip_len))
                elif boundaries.test_narration[0] <= ep.index <= boundaries.test_narration[1]:
                    splits.test_narration.extend(split_fixed(sec, ep.index, clip_len))
            # sections annotated neither dialog nor narration are discarded
    return splits


def utterance_spans(corpus: Corpus, episode_range: tuple[int, int],
                    kind: str = NARRATION) -> list[ClipSpan]:
    """Spans aligned to single utterances (audio span == video span)."""
    lo, hi = episode_range
    spans = []
    for ep in corpus.episodes:
        if not lo <= ep.index <= hi:
            continue
        for sec in ep.sections:
            if sec.kind != kind:
                continue
            for utt in sec.utterances:
                spans.append(_span(ep.index, sec.kind, utt.start, utt.end))
    return spans


# ---------------------------------------------------------------------------
# span-list files (JSON lines with a header record)

def write_spans(path: str | Path, splits: DatasetSplits) -> None:
    path = Path(path)
    with path.open("w") as fh:
        fh.write(json.dumps({"record": "header", "version": SPAN_FILE_VERSION,
                             "strategy": splits.strategy}) + "\n")
        for split_name, spans in splits.as_dict().items():
            for s in spans:
                fh.write(json.dumps({
                    "record": "span", "split": split_name, "episode": s.episode,
                    "kind": s.kind, "audio_start": s.audio_start,
                    "audio_end": s.audio_end, "video_start": s.video_start,
                    "video_end": s.video_end}) + "\n")


def read_spans(path: str | Path) -> DatasetSplits:
    path = Path(path)
    with path.open() as fh:
        lines = [json.loads(line) for line in fh if line.strip()]
    if not lines or lines[0].get("record") != "header":
        raise ValueError("span file lacks a header record")
    if lines[0].get("version") != SPAN_FILE_VERSION:
        raise ValueError(f"unknown span file version {lines[0].get('version')!r}")
    splits = DatasetSplits(strategy=lines[0]["strategy"])
    for rec in lines[1:]:
        span = ClipSpan(episode=rec["episode"], kind=rec["kind"],
                        audio_start=rec["audio_start"], audio_end=rec["audio_end"],
                        video_start=rec["video_start"], video_end=rec["video_end"])
        getattr(splits, rec["split"]).append(span)
    return splits
