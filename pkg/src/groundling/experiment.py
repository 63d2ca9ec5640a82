"""Experiment orchestration: corpus -> pretext -> runs -> metrics on disk.

A single experiment cell generates (or reuses) a corpus, optionally
pretrains each modality once, trains ``runs_per_config`` grounded models
with distinct derived seeds, evaluates each selected checkpoint on the
validation and test splits, and persists every number: an append-only
results store plus per-run JSON metric reports carrying full resample
vectors.  Everything persisted is a pure function of (config, master seed).
"""

from __future__ import annotations

import json
import logging
import warnings
from dataclasses import dataclass, asdict, field, replace
from pathlib import Path

import numpy as np

from .corpusio import read_manifest, write_manifest
from .encoders import EncoderConfig, load_weights, save_weights
from .episodes import Corpus, DIALOG, NARRATION, generate_corpus, word_frequencies
from .evaluation import (BootstrapReport, build_triplets, eq_scores,
                         embed_clips, mine_minimal_pairs,
                         minimal_pair_pos_accuracy, minimal_pair_scores,
                         minimal_pair_word_accuracy, recall_curve,
                         triplet_score_diffs, bootstrap_mean)
from .pretext import AudioPretextConfig, PretextResult, VideoPretextConfig, \
    pretrain_audio, pretrain_video
from .render import Clip
from .segmentation import (DatasetSplits, default_boundaries, make_splits,
                           split_jitter, utterance_spans, write_spans)
from .training import RunResult, TrainingConfig, render_spans, train_grounded
from .world import WorldConfig, generate_world

log = logging.getLogger(__name__)


@dataclass
class ExperimentConfig:
    name: str = "default"
    master_seed: int = 0
    runs_per_config: int = 4
    out_dir: str = "runs"
    # corpus
    world: WorldConfig = field(default_factory=WorldConfig)
    n_episodes: int = 20
    # ablation flags
    pretrain_audio: bool = True
    pretrain_video: bool = True
    freeze_audio_features: bool = False
    static_video: bool = False
    scramble_at_test: bool = False
    jitter: bool = False
    # component configs
    training: TrainingConfig = field(default_factory=TrainingConfig)
    audio_pretext: AudioPretextConfig = field(default_factory=AudioPretextConfig)
    video_pretext: VideoPretextConfig = field(default_factory=VideoPretextConfig)
    # evaluation settings
    candidate_size: int = 100
    recall_n: int = 10
    retrieval_resamples: int = 500
    triplet_resamples: int = 500
    minpair_bootstrap: int = 100
    minpair_min_pairs: int = 20
    minpair_min_duration: float = 0.3
    minpair_min_frequency: int = 10

    def validate(self) -> None:
        if self.runs_per_config < 1:
            raise ValueError("runs_per_config must be >= 1")
        self.training.validate()
        if self.freeze_audio_features and not self.pretrain_audio:
            warnings.warn("freezing a non-pretrained audio feature stack: "
                          "this is the degenerate frozen-random condition",
                          stacklevel=2)

    def hash(self) -> str:
        import hashlib
        blob = json.dumps(config_to_dict(self), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:12]


def config_to_dict(config: ExperimentConfig) -> dict:
    return asdict(config)


def config_from_dict(d: dict) -> ExperimentConfig:
    d = dict(d)
    if "world" in d and isinstance(d["world"], dict):
        w = dict(d["world"])
        for key in ("dialog_section_duration", "narration_section_duration",
                    "utterance_gap", "section_gap", "template_weights"):
            if key in w:
                w[key] = tuple(w[key])
        d["world"] = WorldConfig(**w)
    if "training" in d and isinstance(d["training"], dict):
        d["training"] = TrainingConfig(**d["training"])
    if "audio_pretext" in d and isinstance(d["audio_pretext"], dict):
        d["audio_pretext"] = AudioPretextConfig(**d["audio_pretext"])
    if "video_pretext" in d and isinstance(d["video_pretext"], dict):
        d["video_pretext"] = VideoPretextConfig(**d["video_pretext"])
    return ExperimentConfig(**d)


def _seed(master: int, *tags: int) -> int:
    ss = np.random.SeedSequence(entropy=(int(master),) + tuple(int(t) for t in tags))
    return int(ss.generate_state(1, dtype=np.uint64)[0] % (2 ** 63))


def _rng(master: int, *tags: int) -> np.random.Generator:
    return np.random.default_rng(_seed(master, *tags))


# ---------------------------------------------------------------------------
# results store

class ResultsStore:
    """Append-only JSON-lines store of metric summaries.

    Keys (config hash, run id, metric, split) are unique; attempting to
    rewrite one raises.
    """

    def __init__(self, path: str | Path):
        self.path = Path(path)
        self._keys: set[tuple] = set()
        self.records: list[dict] = []
        if self.path.exists():
            with self.path.open() as fh:
                for line in fh:
                    if line.strip():
                        self._ingest(json.loads(line), write=False)

    def _key(self, rec: dict) -> tuple:
        return (rec["config_hash"], rec["run"], rec["metric"], rec["split"])

    def _ingest(self, rec: dict, write: bool) -> None:
        key = self._key(rec)
        if key in self._keys:
            raise ValueError(f"duplicate results record {key}")
        self._keys.add(key)
        self.records.append(rec)
        if write:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            with self.path.open("a") as fh:
                fh.write(json.dumps(rec) + "\n")

    def append(self, cell: str, config_hash: str, run, metric: str, split: str,
               point: float, mean: float, std: float, n_resamples: int) -> None:
        self._ingest({"cell": cell, "config_hash": config_hash, "run": run,
                      "metric": metric, "split": split, "point": point,
                      "mean": mean, "std": std, "n_resamples": n_resamples},
                     write=True)

    def select(self, cell: str | None = None, metric: str | None = None,
               split: str | None = None, run=None) -> list[dict]:
        out = []
        for rec in self.records:
            if cell is not None and rec["cell"] != cell:
                continue
            if metric is not None and rec["metric"] != metric:
                continue
            if split is not None and rec["split"] != split:
                continue
            if run is not None and rec["run"] != run:
                continue
            out.append(rec)
        return out


# ---------------------------------------------------------------------------
# evaluation of one trained run

@dataclass
class EvalArtifacts:
    reports: dict[tuple[str, str], BootstrapReport]
    word_rows: list[dict]
    triplet_tables: dict[str, list[dict]]   # split -> rows of duration/diff


def _eval_rng(config: ExperimentConfig, run_id: int, tag: int) -> np.random.Generator:
    return _rng(config.master_seed, 90, run_id, tag)


def evaluate_run(config: ExperimentConfig, corpus: Corpus, splits: DatasetSplits,
                 result: RunResult, run_id: int) -> EvalArtifacts:
    """Score one selected checkpoint on every evaluation protocol."""
    audio, video = result.audio_encoder, result.video_encoder
    bounds = splits.boundaries or default_boundaries(len(corpus.episodes))
    scramble = config.scramble_at_test
    reports: dict[tuple[str, str], BootstrapReport] = {}
    triplet_tables: dict[str, list[dict]] = {}

    def scramble_rng(tag: int):
        return _eval_rng(config, run_id, tag) if scramble else None

    # retrieval on fixed segmentation
    retrieval_sets = {
        "val_dialog": splits.val_dialog,
        "val_narration": splits.val_narration,
        "test_narration": splits.test_narration,
    }
    for split_name, spans in retrieval_sets.items():
        if len(spans) < config.candidate_size:
            log.warning("skipping retrieval on %s: %d < %d pairs", split_name,
                        len(spans), config.candidate_size)
            continue
        clips = render_spans(corpus, spans)
        a_embs, v_embs = embed_clips(clips, audio, video,
                                     scramble_rng=scramble_rng(1))
        max_n = config.recall_n if split_name != "test_narration" else \
            max(config.recall_n, 10)
        curve = recall_curve(a_embs, v_embs, max_n=max_n,
                             candidate_size=config.candidate_size,
                             resamples=config.retrieval_resamples,
                             rng=_eval_rng(config, run_id, 2))
        reports[(f"recall@{config.recall_n}", split_name)] = curve[config.recall_n]
        if split_name == "test_narration":
            for n, rep in curve.items():
                reports[(f"recall@{n}", split_name)] = rep

    # retrieval with jitter-resegmented evaluation data
    jitter_spans = []
    jrng = _eval_rng(config, run_id, 3)
    for ep in corpus.episodes:
        if bounds.test_narration[0] <= ep.index <= bounds.test_narration[1]:
            for sec in ep.sections:
                if sec.kind == NARRATION:
                    jitter_spans.extend(split_jitter(sec, ep.index, jrng))
    if len(jitter_spans) >= config.candidate_size:
        clips = render_spans(corpus, jitter_spans)
        a_embs, v_embs = embed_clips(clips, audio, video,
                                     scramble_rng=scramble_rng(4))
        reports[(f"recall@{config.recall_n}_jitter", "test_narration")] = \
            recall_curve(a_embs, v_embs, max_n=config.recall_n,
                         candidate_size=config.candidate_size,
                         resamples=config.retrieval_resamples,
                         rng=_eval_rng(config, run_id, 5))[config.recall_n]

    # triplets on utterance-aligned clips
    triplet_sets = {
        "val_dialog": (bounds.val_dialog, DIALOG),
        "val_narration": (bounds.val_narration, NARRATION),
        "test_narration": (bounds.test_narration, NARRATION),
    }
    for split_name, (ep_range, kind) in triplet_sets.items():
        clips = render_spans(corpus, utterance_spans(corpus, ep_range, kind))
        triplets = build_triplets(clips, _eval_rng(config, run_id, 6))
        if not triplets:
            continue
        diffs = triplet_score_diffs(triplets, audio, video,
                                    scramble_rng=scramble_rng(7))
        scores = eq_scores(diffs)
        reports[("triplet_acc", split_name)] = bootstrap_mean(
            scores, config.triplet_resamples, _eval_rng(config, run_id, 8))
        triplet_tables[split_name] = [
            {"duration": round(t.duration, 4), "frames": t.frame_count,
             "diff": float(d)} for t, d in zip(triplets, diffs)]

    # minimal pairs on validation narration
    word_rows: list[dict] = []
    val_clips = render_spans(
        corpus, utterance_spans(corpus, bounds.val_narration, NARRATION))
    freqs = word_frequencies(corpus, bounds.train_dialog, DIALOG)
    items = mine_minimal_pairs(val_clips, freqs,
                               min_duration=config.minpair_min_duration,
                               min_frequency=config.minpair_min_frequency)
    if items:
        scores = minimal_pair_scores(items, audio, video,
                                     scramble_rng=scramble_rng(9))
        pos_reports = minimal_pair_pos_accuracy(
            items, scores, bootstrap=config.minpair_bootstrap,
            rng=_eval_rng(config, run_id, 10))
        for pos, rep in pos_reports.items():
            reports[(f"minpair_{pos}s", "val_narration")] = rep
        for wa in minimal_pair_word_accuracy(
                items, audio, video, min_pairs=config.minpair_min_pairs,
                bootstrap=config.minpair_bootstrap,
                rng=_eval_rng(config, run_id, 11), scores=scores):
            word_rows.append({"word": wa.word, "pos": wa.pos,
                              "pairs": wa.n_items, "mean": wa.report.mean,
                              "std": wa.report.std})
    return EvalArtifacts(reports=reports, word_rows=word_rows,
                         triplet_tables=triplet_tables)


# ---------------------------------------------------------------------------
# one experiment cell

def _prepare_corpus(config: ExperimentConfig, root: Path) -> tuple[Corpus, DatasetSplits]:
    corpus_dir = root / "corpus"
    if (corpus_dir / "manifest.jsonl").exists():
        corpus = read_manifest(corpus_dir)
    else:
        world = generate_world(_seed(config.master_seed, 1), config.world)
        corpus = generate_corpus(world, config.n_episodes)
        write_manifest(corpus, corpus_dir)
    strategy = "jitter" if config.jitter else "fixed"
    splits = make_splits(corpus, train_strategy=strategy,
                         rng=_rng(config.master_seed, 2))
    write_spans(root / "spans.jsonl", splits)
    return corpus, splits


def _prepare_pretext(config: ExperimentConfig, corpus: Corpus,
                     splits: DatasetSplits, root: Path):
    """Pretrain each flagged modality once; checkpoints shared by all runs."""
    audio_init = video_init = None
    enc = EncoderConfig(frame_height=corpus.world.config.frame_height,
                        frame_width=corpus.world.config.frame_width,
                        sample_rate=corpus.world.config.sample_rate)
    pret_dir = root / "pretext"
    if config.pretrain_audio:
        path = pret_dir / "audio"
        if path.with_suffix(".json").exists():
            audio_init, _ = load_weights(path)
        else:
            clips = render_spans(corpus, splits.train_dialog)
            cfg = replace(config.audio_pretext, seed=_seed(config.master_seed, 3))
            res = pretrain_audio([c.waveform for c in clips], cfg, enc)
            audio_init = res.weights
            _save_pretext(path, res, enc)
    if config.pretrain_video:
        path = pret_dir / "video"
        if path.with_suffix(".json").exists():
            video_init, _ = load_weights(path)
        else:
            stacks, labels, verb_ids = motion_labeled_clips(corpus, splits)
            cfg = replace(config.video_pretext, seed=_seed(config.master_seed, 4))
            res = pretrain_video(stacks, labels, len(verb_ids), cfg, enc)
            video_init = res.weights
            _save_pretext(path, res, enc)
    return audio_init, video_init


def _save_pretext(path: Path, res: PretextResult, enc: EncoderConfig) -> None:
    from .nn import Param
    params = [Param(name, arr) for name, arr in res.weights.items()]
    save_weights(path, params, enc,
                 {"loss_trace": res.loss_trace,
                  "holdout_accuracy": res.holdout_accuracy})


def motion_labeled_clips(corpus: Corpus, splits: DatasetSplits):
    """Video clips of training utterances with a grounded motion, labeled by
    the verb driving the first grounded event."""
    bounds = splits.boundaries or default_boundaries(len(corpus.episodes))
    verb_ids = [w.id for w in corpus.world.verbs]
    verb_index = {v: i for i, v in enumerate(verb_ids)}
    spans = []
    labels = []
    for ep in corpus.episodes:
        if not bounds.train_dialog[0] <= ep.index <= bounds.train_dialog[1]:
            continue
        for sec in ep.sections:
            if sec.kind != DIALOG:
                continue
            for utt in sec.utterances:
                verb = None
                for ev in utt.events:
                    verb_tok = utt.words[ev.verb_slot]
                    if verb_tok.grounded:   # motion is rendered even when the
                        verb = verb_tok.word  # carrier noun is displaced
                        break
                if verb is None:
                    continue
                spans.append((ep.index, utt.start, utt.end))
                labels.append(verb_index[verb])
    by_ep = {ep.index: ep for ep in corpus.episodes}
    from .render import render_clip
    stacks = [render_clip(corpus.world, by_ep[e], (s, t), (s, t)).frames
              for e, s, t in spans]
    return stacks, labels, verb_ids


def _persist_eval(root: Path, run_label, cell: str, config_hash: str,
                  store: ResultsStore, artifacts: EvalArtifacts,
                  config_echo: dict) -> None:
    metrics_dir = root / "metrics"
    metrics_dir.mkdir(parents=True, exist_ok=True)
    for (metric, split), report in sorted(artifacts.reports.items()):
        store.append(cell, config_hash, run_label, metric, split,
                     report.point, report.mean, report.std, report.n_resamples)
        payload = {"metric": metric, "split": split, "config": config_echo}
        payload.update(report.as_dict())
        safe = metric.replace("@", "_at_")
        (metrics_dir / f"{safe}__{split}.json").write_text(json.dumps(payload))
    if artifacts.word_rows:
        lines = ["word,pos,pairs,mean,std"]
        lines += [f"{r['word']},{r['pos']},{r['pairs']},{r['mean']:.6f},{r['std']:.6f}"
                  for r in artifacts.word_rows]
        (metrics_dir / "word_accuracy__val_narration.csv").write_text(
            "\n".join(lines) + "\n")
    for split, rows in artifacts.triplet_tables.items():
        lines = ["duration,frames,diff"]
        lines += [f"{r['duration']},{r['frames']},{r['diff']:.6f}" for r in rows]
        (metrics_dir / f"triplet_diffs__{split}.csv").write_text(
            "\n".join(lines) + "\n")


def run_experiment(config: ExperimentConfig,
                   corpus: Corpus | None = None) -> Path:
    """Execute one experiment cell end to end; returns its directory."""
    config.validate()
    root = Path(config.out_dir) / config.name
    root.mkdir(parents=True, exist_ok=True)
    (root / "config.json").write_text(json.dumps(config_to_dict(config), indent=1))

    if corpus is not None:
        corpus_dir = root / "corpus"
        if not (corpus_dir / "manifest.jsonl").exists():
            write_manifest(corpus, corpus_dir)
        strategy = "jitter" if config.jitter else "fixed"
        splits = make_splits(corpus, train_strategy=strategy,
                             rng=_rng(config.master_seed, 2))
        write_spans(root / "spans.jsonl", splits)
    else:
        corpus, splits = _prepare_corpus(config, root)

    audio_init, video_init = _prepare_pretext(config, corpus, splits, root)
    store = ResultsStore(root / "results.jsonl")
    config_hash = config.hash()
    config_echo = {"cell": config.name, "hash": config_hash,
                   "master_seed": config.master_seed}

    pooled: dict[tuple[str, str], list[BootstrapReport]] = {}
    for run_id in range(config.runs_per_config):
        run_dir = root / f"run{run_id}"
        tcfg = replace(config.training,
                       seed=_seed(config.master_seed, 5, run_id),
                       freeze_audio_features=config.freeze_audio_features,
                       pretrain_audio=config.pretrain_audio,
                       pretrain_video=config.pretrain_video,
                       static_video=config.static_video,
                       segmentation="jitter" if config.jitter else "fixed")
        result = train_grounded(tcfg, splits, corpus,
                                audio_init=audio_init, video_init=video_init,
                                out_dir=run_dir)
        artifacts = evaluate_run(config, corpus, splits, result, run_id)
        _persist_eval(run_dir, run_id, config.name, config_hash, store,
                      artifacts, config_echo)
        for key, rep in artifacts.reports.items():
            pooled.setdefault(key, []).append(rep)
        log.info("cell %s run %d: %s", config.name, run_id,
                 {f"{m}/{s}": round(r.mean, 3)
                  for (m, s), r in artifacts.reports.items()
                  if m in ("recall@10", "triplet_acc")})

    # variance pooled over runs x resamples
    for (metric, split), reps in sorted(pooled.items()):
        allsamples = np.concatenate([r.resamples for r in reps])
        store.append(config.name, config_hash, "pooled", metric, split,
                     float(np.mean([r.point for r in reps])),
                     float(allsamples.mean()), float(allsamples.std()),
                     int(len(allsamples)))
    return root


# ---------------------------------------------------------------------------
# ablation grids

def pretraining_grid(base: ExperimentConfig) -> dict[str, ExperimentConfig]:
    """The AV / A / V / None pretraining ablation."""
    cells = {}
    for name, (a, v) in (("AV", (True, True)), ("A", (True, False)),
                         ("V", (False, True)), ("None", (False, False))):
        cells[name] = replace(base, name=name, pretrain_audio=a, pretrain_video=v)
    return cells


def ablation_table_grid(base: ExperimentConfig) -> dict[str, ExperimentConfig]:
    """The eight-row ablation table: finetune/jitter/pretraining/temporal flags."""
    rows = {
        "row0_full": {},
        "row1_frozen": {"freeze_audio_features": True},
        "row2_fixed": {"jitter": False},
        "row3_nopretrain": {"pretrain_audio": False, "pretrain_video": False},
        "row4_videoonly": {"pretrain_audio": False},
        "row5_audioonly": {"pretrain_video": False},
        "row6_static": {"pretrain_video": False, "static_video": True},
        "row7_scrambled": {"scramble_at_test": True},
    }
    base = replace(base, jitter=True)
    return {name: replace(base, name=name, **flags) for name, flags in rows.items()}


def ablation_grid(cells: dict[str, ExperimentConfig],
                  corpus: Corpus | None = None) -> ResultsStore:
    """Run every named cell; cells must carry distinct names."""
    names = list(cells)
    if len(set(names)) != len(names):
        raise ValueError("duplicate cell names in grid")
    for name, cfg in cells.items():
        if cfg.name != name:
            raise ValueError(f"cell key {name!r} does not match config name "
                             f"{cfg.name!r}")
    combined: ResultsStore | None = None
    for name in names:
        cfg = cells[name]
        root = run_experiment(cfg, corpus=corpus)
        cell_store = ResultsStore(root / "results.jsonl")
        if combined is None:
            combined = ResultsStore(Path(cfg.out_dir) / "grid_results.jsonl")
        for rec in cell_store.records:
            key = (rec["config_hash"], rec["run"], rec["metric"], rec["split"])
            if key not in combined._keys:
                combined._ingest(rec, write=True)
    assert combined is not None
    return combined
