"""Command-line front end.

Subcommands: generate, segment, pretrain, train, evaluate, grid, report.
Every flag can also be supplied via ``--config FILE`` (flat JSON keyed by
flag name with dashes as underscores); an explicit command-line flag wins
over the config file, which wins over built-in defaults.  Exit codes:
0 success, 1 configuration error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

log = logging.getLogger("groundling")


class ConfigError(ValueError):
    pass


def _add(parser: argparse.ArgumentParser, *names, **kwargs):
    """Add an option whose absence is detectable (default=SUPPRESS)."""
    kwargs.setdefault("default", argparse.SUPPRESS)
    parser.add_argument(*names, **kwargs)


def _collect(args: argparse.Namespace, defaults: dict) -> dict:
    """defaults < config file < explicit flags."""
    ns = {k: v for k, v in vars(args).items() if k not in ("command", "func")}
    merged = dict(defaults)
    config_path = ns.pop("config", None)
    if config_path:
        try:
            file_values = json.loads(Path(config_path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config file {config_path}: {exc}")
        unknown = set(file_values) - set(defaults)
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        merged.update(file_values)
    merged.update(ns)
    return merged


def _world_config(opts: dict):
    from .world import WorldConfig
    return WorldConfig(
        n_nouns=opts["nouns"], n_verbs=opts["verbs"],
        n_characters=opts["characters"],
        displacement_prob=opts["displacement_prob"],
        co_occurrence=opts["co_occurrence"])


_WORLD_DEFAULTS = {"nouns": 20, "verbs": 10, "characters": 6,
                   "displacement_prob": 0.3, "co_occurrence": 0.9}


# ---------------------------------------------------------------------------
# subcommands

def cmd_generate(args) -> int:
    defaults = {"seed": 0, "episodes": 20, "out": "corpus", **_WORLD_DEFAULTS}
    opts = _collect(args, defaults)
    from .corpusio import write_manifest
    from .episodes import generate_corpus
    from .world import generate_world
    world = generate_world(opts["seed"], _world_config(opts))
    corpus = generate_corpus(world, opts["episodes"])
    path = write_manifest(corpus, opts["out"])
    print(f"wrote corpus manifest: {path}")
    return 0


def cmd_segment(args) -> int:
    defaults = {"corpus": "corpus", "strategy": "fixed", "seed": 0,
                "out": "spans.jsonl"}
    opts = _collect(args, defaults)
    from .corpusio import read_manifest
    from .segmentation import make_splits, write_spans
    corpus = read_manifest(opts["corpus"])
    rng = np.random.default_rng(opts["seed"])
    splits = make_splits(corpus, train_strategy=opts["strategy"], rng=rng)
    write_spans(opts["out"], splits)
    sizes = {k: len(v) for k, v in splits.as_dict().items()}
    print(f"wrote spans to {opts['out']}: {sizes}")
    return 0


def cmd_pretrain(args) -> int:
    defaults = {"corpus": "corpus", "modality": "audio", "epochs": None,
                "seed": 0, "out": "pretext_ckpt"}
    opts = _collect(args, defaults)
    from .corpusio import read_manifest
    from .encoders import EncoderConfig
    from .experiment import motion_labeled_clips, _save_pretext
    from .pretext import (AudioPretextConfig, VideoPretextConfig,
                          pretrain_audio, pretrain_video)
    from .segmentation import make_splits
    from .training import render_spans
    corpus = read_manifest(opts["corpus"])
    splits = make_splits(corpus)
    enc = EncoderConfig(frame_height=corpus.world.config.frame_height,
                        frame_width=corpus.world.config.frame_width,
                        sample_rate=corpus.world.config.sample_rate)
    if opts["modality"] == "audio":
        cfg = AudioPretextConfig(seed=opts["seed"])
        if opts["epochs"]:
            cfg = replace(cfg, epochs=opts["epochs"])
        clips = render_spans(corpus, splits.train_dialog)
        res = pretrain_audio([c.waveform for c in clips], cfg, enc)
    elif opts["modality"] == "video":
        cfg = VideoPretextConfig(seed=opts["seed"])
        if opts["epochs"]:
            cfg = replace(cfg, epochs=opts["epochs"])
        stacks, labels, verb_ids = motion_labeled_clips(corpus, splits)
        res = pretrain_video(stacks, labels, len(verb_ids), cfg, enc)
    else:
        raise ConfigError(f"unknown modality {opts['modality']!r}")
    _save_pretext(Path(opts["out"]), res, enc)
    print(f"wrote pretext checkpoint {opts['out']} "
          f"(final loss {res.loss_trace[-1]:.4f})")
    return 0


def cmd_train(args) -> int:
    defaults = {"corpus": "corpus", "out": "rundir", "seed": 0, "epochs": 20,
                "batch_size": 8, "grad_accumulation": 8, "learning_rate": 2e-3,
                "margin": 0.2, "freeze_audio_features": False,
                "static_video": False, "jitter": False,
                "audio_init": None, "video_init": None}
    opts = _collect(args, defaults)
    from .corpusio import read_manifest
    from .encoders import load_weights
    from .segmentation import make_splits
    from .training import TrainingConfig, train_grounded
    corpus = read_manifest(opts["corpus"])
    strategy = "jitter" if opts["jitter"] else "fixed"
    splits = make_splits(corpus, train_strategy=strategy,
                         rng=np.random.default_rng(opts["seed"]))
    tcfg = TrainingConfig(
        margin=opts["margin"], batch_size=opts["batch_size"],
        grad_accumulation=opts["grad_accumulation"],
        learning_rate=opts["learning_rate"], epochs=opts["epochs"],
        seed=opts["seed"], freeze_audio_features=opts["freeze_audio_features"],
        static_video=opts["static_video"], segmentation=strategy,
        pretrain_audio=opts["audio_init"] is not None,
        pretrain_video=opts["video_init"] is not None)
    audio_init = load_weights(opts["audio_init"])[0] if opts["audio_init"] else None
    video_init = load_weights(opts["video_init"])[0] if opts["video_init"] else None
    result = train_grounded(tcfg, splits, corpus, audio_init=audio_init,
                            video_init=video_init, out_dir=opts["out"])
    best = result.epochs[result.selected_epoch - 1]
    print(f"run complete: selected epoch {result.selected_epoch} "
          f"(val triplet accuracy {best.val_triplet_acc:.3f}); "
          f"checkpoints under {opts['out']}")
    return 0


def _load_run_encoders(run_dir: Path):
    from .encoders import (AudioEncoder, EncoderConfig, VideoEncoder,
                           apply_weights, load_weights)
    selected = json.loads((run_dir / "selected.json").read_text())
    base = run_dir / selected["checkpoint"]
    audio_w, header = load_weights(Path(str(base) + ".audio"))
    video_w, _ = load_weights(Path(str(base) + ".video"))
    enc = EncoderConfig(**header["config"])
    for key in ("audio_channels", "audio_kernels", "audio_strides",
                "video_channels"):
        object.__setattr__(enc, key, tuple(getattr(enc, key)))
    audio = AudioEncoder(enc, 0)
    temporal = any(name.startswith("video.temporal") for name in video_w)
    video = VideoEncoder(enc, 0, temporal=temporal)
    apply_weights(audio.params(), audio_w, strict=True)
    apply_weights(video.params(), video_w, strict=True)
    return audio, video


def cmd_evaluate(args) -> int:
    defaults = {"corpus": "corpus", "run": "rundir", "out": None, "seed": 0,
                "candidate_size": 100, "resamples": 500, "scramble": False}
    opts = _collect(args, defaults)
    from .corpusio import read_manifest
    from .evaluation import (build_triplets, embed_clips, recall_at_n,
                             triplet_accuracy)
    from .segmentation import default_boundaries, make_splits, utterance_spans
    from .training import render_spans
    corpus = read_manifest(opts["corpus"])
    splits = make_splits(corpus)
    run_dir = Path(opts["run"])
    audio, video = _load_run_encoders(run_dir)
    rng = np.random.default_rng(opts["seed"])
    scramble_rng = np.random.default_rng(opts["seed"] + 1) if opts["scramble"] \
        else None
    bounds = splits.boundaries or default_boundaries(len(corpus.episodes))
    results = {}
    for split_name, spans in (("val_narration", splits.val_narration),
                              ("test_narration", splits.test_narration)):
        clips = render_spans(corpus, spans)
        if len(clips) >= opts["candidate_size"]:
            a, v = embed_clips(clips, audio, video, scramble_rng=scramble_rng)
            rep = recall_at_n(a, v, n=10, candidate_size=opts["candidate_size"],
                              resamples=opts["resamples"], rng=rng)
            results[f"recall@10/{split_name}"] = rep
        ep_range = getattr(bounds, split_name)
        utt_clips = render_spans(corpus, utterance_spans(corpus, ep_range))
        triplets = build_triplets(utt_clips, rng)
        if triplets:
            rep = triplet_accuracy(triplets, audio, video,
                                   resamples=opts["resamples"], rng=rng,
                                   scramble_rng=scramble_rng)
            results[f"triplet_acc/{split_name}"] = rep
    for name, rep in results.items():
        print(f"{name}: {rep.mean:.4f} +- {rep.std:.4f} "
              f"({rep.n_resamples} resamples)")
    if opts["out"]:
        out = Path(opts["out"])
        out.parent.mkdir(parents=True, exist_ok=True)
        out.write_text(json.dumps({k: r.as_dict() for k, r in results.items()}))
        print(f"wrote {out}")
    return 0


def cmd_grid(args) -> int:
    defaults = {"preset": "pretraining", "out": "runs", "seed": 0,
                "episodes": 20, "runs_per_config": 4, "epochs": 20,
                **_WORLD_DEFAULTS}
    opts = _collect(args, defaults)
    from .experiment import (ExperimentConfig, ablation_grid,
                             ablation_table_grid, pretraining_grid,
                             run_experiment)
    from .training import TrainingConfig
    base = ExperimentConfig(
        master_seed=opts["seed"], out_dir=opts["out"],
        runs_per_config=opts["runs_per_config"],
        world=_world_config(opts), n_episodes=opts["episodes"],
        training=TrainingConfig(epochs=opts["epochs"]))
    if opts["preset"] == "pretraining":
        store = ablation_grid(pretraining_grid(base))
    elif opts["preset"] == "table":
        store = ablation_grid(ablation_table_grid(base))
    elif opts["preset"] == "single":
        root = run_experiment(base)
        print(f"cell written to {root}")
        return 0
    else:
        raise ConfigError(f"unknown grid preset {opts['preset']!r}")
    print(f"grid complete: {len(store.records)} records in {store.path}")
    return 0


def cmd_report(args) -> int:
    defaults = {"results": "runs", "kind": "summary", "out": "reports",
                "cell": None, "cells": None, "split": None}
    opts = _collect(args, defaults)
    from .reports import make_report
    kwargs = {}
    if opts["cell"]:
        kwargs["cell"] = opts["cell"]
    if opts["cells"]:
        kwargs["cells"] = [c.strip() for c in opts["cells"].split(",")]
    if opts["split"]:
        kwargs["split"] = opts["split"]
    paths = make_report(opts["kind"], opts["results"], opts["out"], **kwargs)
    for p in paths:
        print(f"wrote {p}")
    return 0


# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="groundling",
        description="Synthetic audio-visual grounded word learning at desk scale")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="generate a synthetic corpus")
    _add(p, "--config")
    _add(p, "--seed", type=int)
    _add(p, "--episodes", type=int)
    _add(p, "--nouns", type=int)
    _add(p, "--verbs", type=int)
    _add(p, "--characters", type=int)
    _add(p, "--displacement-prob", type=float, dest="displacement_prob")
    _add(p, "--co-occurrence", type=float, dest="co_occurrence")
    _add(p, "--out")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("segment", help="emit a clip-span file")
    _add(p, "--config")
    _add(p, "--corpus")
    _add(p, "--strategy", choices=["fixed", "jitter"])
    _add(p, "--seed", type=int)
    _add(p, "--out")
    p.set_defaults(func=cmd_segment)

    p = sub.add_parser("pretrain", help="self-supervised pretext pretraining")
    _add(p, "--config")
    _add(p, "--corpus")
    _add(p, "--modality", choices=["audio", "video"])
    _add(p, "--epochs", type=int)
    _add(p, "--seed", type=int)
    _add(p, "--out")
    p.set_defaults(func=cmd_pretrain)

    p = sub.add_parser("train", help="grounded contrastive training run")
    _add(p, "--config")
    _add(p, "--corpus")
    _add(p, "--out")
    _add(p, "--seed", type=int)
    _add(p, "--epochs", type=int)
    _add(p, "--batch-size", type=int, dest="batch_size")
    _add(p, "--grad-accumulation", type=int, dest="grad_accumulation")
    _add(p, "--learning-rate", type=float, dest="learning_rate")
    _add(p, "--margin", type=float)
    _add(p, "--freeze-audio-features", action="store_true",
         dest="freeze_audio_features")
    _add(p, "--static-video", action="store_true", dest="static_video")
    _add(p, "--jitter", action="store_true")
    _add(p, "--audio-init", dest="audio_init")
    _add(p, "--video-init", dest="video_init")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="evaluate a trained run directory")
    _add(p, "--config")
    _add(p, "--corpus")
    _add(p, "--run")
    _add(p, "--out")
    _add(p, "--seed", type=int)
    _add(p, "--candidate-size", type=int, dest="candidate_size")
    _add(p, "--resamples", type=int)
    _add(p, "--scramble", action="store_true")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("grid", help="run an ablation grid")
    _add(p, "--config")
    _add(p, "--preset", choices=["pretraining", "table", "single"])
    _add(p, "--out")
    _add(p, "--seed", type=int)
    _add(p, "--episodes", type=int)
    _add(p, "--runs-per-config", type=int, dest="runs_per_config")
    _add(p, "--epochs", type=int)
    _add(p, "--nouns", type=int)
    _add(p, "--verbs", type=int)
    _add(p, "--characters", type=int)
    _add(p, "--displacement-prob", type=float, dest="displacement_prob")
    _add(p, "--co-occurrence", type=float, dest="co_occurrence")
    p.set_defaults(func=cmd_grid)

    p = sub.add_parser("report", help="emit tables and plots from results")
    _add(p, "--config")
    _add(p, "--results")
    _add(p, "--kind", choices=["recall", "pretraining", "words", "duration",
                               "summary"])
    _add(p, "--out")
    _add(p, "--cell")
    _add(p, "--cells")
    _add(p, "--split")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO,
                        format="%(asctime)s %(levelname)s %(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 1 if exc.code not in (0, None) else 0
    try:
        return args.func(args)
    except (ConfigError, ValueError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # runtime failure
        log.exception("runtime failure: %s", exc)
        return 2


if __name__ == "__main__":
    sys.exit(main())
