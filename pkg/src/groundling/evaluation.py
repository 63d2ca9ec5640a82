"""Evaluation protocols: retrieval recall@N, length-matched triplets,
counterbalanced minimal pairs, bootstrap variance and the clip-duration
effect analysis.

All metrics are pure functions of (embeddings, seed): bootstrap resamples
are drawn from an explicit generator, similarity ties are broken by stable
candidate index, and a triplet scores (sign(cos(A,P) - cos(A,N)) + 1) / 2,
so an exact tie earns half credit.
"""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass, field

import numpy as np

from .encoders import AudioEncoder, VideoEncoder, pad_frame_stacks, pad_waveforms
from .render import Clip


@dataclass
class BootstrapReport:
    point: float
    resamples: np.ndarray

    @property
    def mean(self) -> float:
        return float(np.mean(self.resamples)) if len(self.resamples) else self.point

    @property
    def std(self) -> float:
        return float(np.std(self.resamples)) if len(self.resamples) else 0.0

    @property
    def n_resamples(self) -> int:
        return len(self.resamples)

    def as_dict(self) -> dict:
        return {"point": self.point, "mean": self.mean, "std": self.std,
                "n_resamples": self.n_resamples,
                "resamples": np.asarray(self.resamples).tolist()}


# ---------------------------------------------------------------------------
# embedding helpers

def embed_audio(clips: list[Clip], encoder: AudioEncoder,
                batch_size: int = 32) -> np.ndarray:
    n = len(clips)
    out = np.zeros((n, encoder.config.joint_dim), dtype=np.float64)
    order = sorted(range(n), key=lambda i: len(clips[i].waveform))
    for start in range(0, n, batch_size):
        idxs = order[start:start + batch_size]
        waves, wl = pad_waveforms([clips[i].waveform for i in idxs])
        out[idxs] = encoder.encode(waves, wl)
    return out


def embed_video(clips: list[Clip], encoder: VideoEncoder, batch_size: int = 32,
                scramble_rng: np.random.Generator | None = None) -> np.ndarray:
    """Encode clip frame stacks; with ``scramble_rng`` each clip's frames are
    shuffled along time first (test-time temporal ablation)."""
    n = len(clips)
    out = np.zeros((n, encoder.config.joint_dim), dtype=np.float64)
    order = sorted(range(n), key=lambda i: clips[i].frames.shape[0])
    for start in range(0, n, batch_size):
        idxs = order[start:start + batch_size]
        stacks = []
        for i in idxs:
            frames = clips[i].frames
            if scramble_rng is not None:
                frames = frames[scramble_rng.permutation(frames.shape[0])]
            stacks.append(frames)
        frames, fl = pad_frame_stacks(stacks, encoder.min_frames())
        out[idxs] = encoder.encode(frames, fl)
    return out


def embed_clips(clips: list[Clip], audio_encoder: AudioEncoder,
                video_encoder: VideoEncoder, batch_size: int = 32,
                scramble_rng: np.random.Generator | None = None):
    """Encode both modalities of a clip list; order preserved."""
    return (embed_audio(clips, audio_encoder, batch_size),
            embed_video(clips, video_encoder, batch_size, scramble_rng))


# ---------------------------------------------------------------------------
# retrieval

def rank_true_videos(sims: np.ndarray) -> np.ndarray:
    """Rank (0-based) of each row's true video, ties by stable index order.

    ``sims[i, j]`` scores query audio i against candidate video j; the true
    video of query i sits at column i.
    """
    c = sims.shape[0]
    true_sim = np.diagonal(sims)
    greater = (sims > true_sim[:, None]).sum(axis=1)
    earlier_tie = ((sims == true_sim[:, None])
                   & (np.arange(c)[None, :] < np.arange(c)[:, None])).sum(axis=1)
    return greater + earlier_tie


def recall_curve(audio_embs: np.ndarray, video_embs: np.ndarray,
                 max_n: int = 10, candidate_size: int = 100,
                 resamples: int = 500,
                 rng: np.random.Generator | None = None) -> dict[int, BootstrapReport]:
    """recall@1..max_n over shared resampled candidate sets."""
    rng = rng or np.random.default_rng(0)
    n_pairs = audio_embs.shape[0]
    if n_pairs < candidate_size:
        raise ValueError(f"need at least {candidate_size} pairs, have {n_pairs}")
    scores = np.zeros((resamples, max_n))
    for r in range(resamples):
        cand = rng.choice(n_pairs, size=candidate_size, replace=False)
        sims = audio_embs[cand] @ video_embs[cand].T
        ranks = rank_true_videos(sims)
        for n in range(1, max_n + 1):
            scores[r, n - 1] = float((ranks < n).mean())
    return {n: BootstrapReport(point=float(scores[:, n - 1].mean()),
                               resamples=scores[:, n - 1].copy())
            for n in range(1, max_n + 1)}


def recall_at_n(audio_embs: np.ndarray, video_embs: np.ndarray, n: int = 10,
                candidate_size: int = 100, resamples: int = 500,
                rng: np.random.Generator | None = None) -> BootstrapReport:
    """Fraction of queries whose true video ranks in the candidate top n."""
    return recall_curve(audio_embs, video_embs, max_n=n,
                        candidate_size=candidate_size, resamples=resamples,
                        rng=rng)[n]


# ---------------------------------------------------------------------------
# triplets

@dataclass
class TripletItem:
    anchor: Clip      # audio source
    positive: Clip    # the anchor's own video
    negative: Clip    # a distinct same-length video
    frame_count: int
    duration: float


def build_triplets(clips: list[Clip], rng: np.random.Generator) -> list[TripletItem]:
    """Disjointly pair same-length clips; anchor side chosen at random.

    Each clip joins at most one triplet; an odd clip per length group is
    left unused; groups of one produce nothing.
    """
    groups: dict[int, list[int]] = defaultdict(list)
    for i, clip in enumerate(clips):
        groups[clip.frames.shape[0]].append(i)
    triplets = []
    for count in sorted(groups):
        idxs = np.array(groups[count])
        rng.shuffle(idxs)
        for k in range(0, len(idxs) - 1, 2):
            first, second = clips[idxs[k]], clips[idxs[k + 1]]
            if rng.random() < 0.5:
                first, second = second, first
            triplets.append(TripletItem(
                anchor=first, positive=first, negative=second,
                frame_count=count,
                duration=first.video_span[1] - first.video_span[0]))
    return triplets


def eq_scores(diffs: np.ndarray) -> np.ndarray:
    """Discretize cosine differences: 1 if positive wins, 0 if it loses,
    0.5 on an exact tie."""
    return (np.sign(diffs) + 1.0) / 2.0


def triplet_score_diffs(triplets: list[TripletItem], audio_encoder: AudioEncoder,
                        video_encoder: VideoEncoder,
                        scramble_rng: np.random.Generator | None = None) -> np.ndarray:
    """Undiscretized scores cos(A, P) - cos(A, N) per triplet."""
    if not triplets:
        raise ValueError("empty triplet list")
    anchors = [t.anchor for t in triplets]
    a_embs = embed_audio(anchors, audio_encoder)
    p_embs = embed_video([t.positive for t in triplets], video_encoder,
                         scramble_rng=scramble_rng)
    n_embs = embed_video([t.negative for t in triplets], video_encoder,
                         scramble_rng=scramble_rng)
    return np.einsum("ij,ij->i", a_embs, p_embs) - np.einsum("ij,ij->i", a_embs, n_embs)


def bootstrap_mean(values: np.ndarray, resamples: int,
                   rng: np.random.Generator) -> BootstrapReport:
    values = np.asarray(values, dtype=np.float64)
    idx = rng.integers(0, len(values), size=(resamples, len(values)))
    return BootstrapReport(point=float(values.mean()),
                           resamples=values[idx].mean(axis=1))


def triplet_accuracy(triplets: list[TripletItem], audio_encoder: AudioEncoder,
                     video_encoder: VideoEncoder, resamples: int = 500,
                     rng: np.random.Generator | None = None,
                     scramble_rng: np.random.Generator | None = None) -> BootstrapReport:
    """Mean discretized triplet score, bootstrapped over triplets."""
    rng = rng or np.random.default_rng(0)
    scores = eq_scores(triplet_score_diffs(triplets, audio_encoder, video_encoder,
                                           scramble_rng=scramble_rng))
    return bootstrap_mean(scores, resamples, rng)


# ---------------------------------------------------------------------------
# minimal pairs

@dataclass
class MinimalPairItem:
    """An example triplet plus its video-flipped counterexample.

    The two clips' transcripts differ in exactly one word: ``target_word``
    (in the example's anchor) vs ``distractor_word``.  The counterexample
    anchors on the other clip's audio with positive and negative videos
    exchanged, cancelling any systematic video preference.
    """
    example_clip: Clip
    counter_clip: Clip
    target_word: str
    distractor_word: str
    pos: str
    duration: float


def mine_minimal_pairs(clips: list[Clip], train_word_freqs: dict[str, int],
                       min_duration: float = 0.3,
                       min_frequency: int = 10) -> list[MinimalPairItem]:
    """All clip pairs whose transcripts differ in exactly one word.

    Both differing words must reach ``min_frequency`` in the training set
    (each serves as the target of one of the two triplets) and the phrase
    must last at least ``min_duration`` seconds.
    """
    items = []
    texts = [tuple(t.word for t in c.transcript) for c in clips]
    poses = [tuple(t.pos for t in c.transcript) for c in clips]
    for i in range(len(clips)):
        dur_i = clips[i].audio_span[1] - clips[i].audio_span[0]
        if dur_i < min_duration or not texts[i]:
            continue
        for j in range(i + 1, len(clips)):
            if len(texts[j]) != len(texts[i]):
                continue
            dur_j = clips[j].audio_span[1] - clips[j].audio_span[0]
            if abs(dur_j - dur_i) > 1e-6:
                continue
            diff = [k for k, (a, b) in enumerate(zip(texts[i], texts[j])) if a != b]
            if len(diff) != 1:
                continue
            k = diff[0]
            target, distractor = texts[i][k], texts[j][k]
            if train_word_freqs.get(target, 0) < min_frequency:
                continue
            if train_word_freqs.get(distractor, 0) < min_frequency:
                continue
            items.append(MinimalPairItem(
                example_clip=clips[i], counter_clip=clips[j],
                target_word=target, distractor_word=distractor,
                pos=poses[i][k], duration=dur_i))
    return items


def minimal_pair_scores(items: list[MinimalPairItem], audio_encoder: AudioEncoder,
                        video_encoder: VideoEncoder,
                        scramble_rng: np.random.Generator | None = None) -> np.ndarray:
    """(n_items, 2) discretized scores: example triplet, counterexample triplet."""
    if not items:
        raise ValueError("no minimal pair items")
    ex_clips = [it.example_clip for it in items]
    cx_clips = [it.counter_clip for it in items]
    a_ex, v_ex = embed_clips(ex_clips, audio_encoder, video_encoder,
                             scramble_rng=scramble_rng)
    a_cx, v_cx = embed_clips(cx_clips, audio_encoder, video_encoder,
                             scramble_rng=scramble_rng)
    dot = lambda x, y: np.einsum("ij,ij->i", x, y)
    ex_diff = dot(a_ex, v_ex) - dot(a_ex, v_cx)     # anchor = example audio
    cx_diff = dot(a_cx, v_cx) - dot(a_cx, v_ex)     # videos flipped
    return np.stack([eq_scores(ex_diff), eq_scores(cx_diff)], axis=1)


@dataclass
class WordAccuracy:
    word: str
    pos: str
    n_items: int
    report: BootstrapReport


def minimal_pair_word_accuracy(items: list[MinimalPairItem],
                               audio_encoder: AudioEncoder,
                               video_encoder: VideoEncoder,
                               min_pairs: int = 100, bootstrap: int = 100,
                               rng: np.random.Generator | None = None,
                               scores: np.ndarray | None = None) -> list[WordAccuracy]:
    """Per-word accuracy over every item where the word is target or
    distractor; words with fewer than ``min_pairs`` items are not reported."""
    if not items:
        raise ValueError("no minimal pair items")
    rng = rng or np.random.default_rng(0)
    if scores is None:
        scores = minimal_pair_scores(items, audio_encoder, video_encoder)
    by_word: dict[str, list[int]] = defaultdict(list)
    pos_of: dict[str, str] = {}
    for idx, item in enumerate(items):
        for word in (item.target_word, item.distractor_word):
            by_word[word].append(idx)
            pos_of[word] = item.pos
    out = []
    for word in sorted(by_word):
        idxs = np.array(by_word[word])
        if len(idxs) < min_pairs:
            continue
        values = scores[idxs].mean(axis=1)   # both triplets of each item
        report = bootstrap_mean(values, bootstrap, rng)
        out.append(WordAccuracy(word=word, pos=pos_of[word],
                                n_items=len(idxs), report=report))
    return out


def minimal_pair_pos_accuracy(items: list[MinimalPairItem],
                              scores: np.ndarray, bootstrap: int = 100,
                              rng: np.random.Generator | None = None) -> dict[str, BootstrapReport]:
    """Pooled accuracy per part of speech (bootstrap over items)."""
    rng = rng or np.random.default_rng(0)
    out = {}
    for pos in ("noun", "verb"):
        idxs = np.array([i for i, it in enumerate(items) if it.pos == pos])
        if len(idxs) == 0:
            continue
        values = scores[idxs].mean(axis=1)
        out[pos] = bootstrap_mean(values, bootstrap, rng)
    return out


# ---------------------------------------------------------------------------
# duration effect

@dataclass
class DurationRow:
    duration: float
    delta: float
    count: int


def duration_effect(triplets: list[TripletItem],
                    model_a: tuple[AudioEncoder, VideoEncoder],
                    model_b: tuple[AudioEncoder, VideoEncoder],
                    bucket: float = 0.1) -> list[DurationRow]:
    """Binned mean difference of undiscretized triplet scores (a minus b).

    Buckets have ``bucket``-second granularity (one video frame by default);
    empty buckets are omitted.
    """
    diffs_a = triplet_score_diffs(triplets, *model_a)
    diffs_b = triplet_score_diffs(triplets, *model_b)
    by_bucket: dict[int, list[float]] = defaultdict(list)
    for t, da, db in zip(triplets, diffs_a, diffs_b):
        by_bucket[int(round(t.duration / bucket))].append(float(da - db))
    return [DurationRow(duration=k * bucket,
                        delta=float(np.mean(v)), count=len(v))
            for k, v in sorted(by_bucket.items())]
