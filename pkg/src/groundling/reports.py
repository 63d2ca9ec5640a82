"""Report generation: CSV tables and plots from persisted experiment results.

Kinds:
  recall      recall@N vs N curve for one cell (test narration)
  pretraining per-run score boxes across cells (pretraining ablation style)
  words       per-word minimal-pair accuracy bars
  duration    binned mean difference of undiscretized triplet scores
              between two cells
summary       one CSV row per pooled metric
"""

from __future__ import annotations

import csv
import json
from collections import defaultdict
from pathlib import Path

import numpy as np

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt

from .experiment import ResultsStore

REPORT_KINDS = ("recall", "pretraining", "words", "duration", "summary")


class ReportError(ValueError):
    pass


def _ensure(out_dir: str | Path) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _store(results_dir: str | Path) -> ResultsStore:
    root = Path(results_dir)
    for candidate in (root / "grid_results.jsonl", root / "results.jsonl", root):
        if candidate.is_file():
            store = ResultsStore(candidate)
            if store.records:
                return store
    raise ReportError(f"no results records under {results_dir}")


def report_summary(results_dir: str | Path, out_dir: str | Path) -> list[Path]:
    store = _store(results_dir)
    out = _ensure(out_dir)
    path = out / "summary.csv"
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["cell", "run", "metric", "split", "point", "mean",
                         "std", "n_resamples"])
        for rec in store.records:
            writer.writerow([rec["cell"], rec["run"], rec["metric"],
                             rec["split"], f"{rec['point']:.6f}",
                             f"{rec['mean']:.6f}", f"{rec['std']:.6f}",
                             rec["n_resamples"]])
    return [path]


def report_recall_curve(results_dir: str | Path, out_dir: str | Path,
                        cell: str | None = None,
                        split: str = "test_narration") -> list[Path]:
    store = _store(results_dir)
    cells = sorted({r["cell"] for r in store.records}) if cell is None else [cell]
    out = _ensure(out_dir)
    rows = []
    fig, ax = plt.subplots(figsize=(5, 3.5))
    plotted = False
    for cname in cells:
        points = []
        for n in range(1, 21):
            recs = store.select(cell=cname, metric=f"recall@{n}", split=split,
                                run="pooled")
            if recs:
                points.append((n, recs[0]["mean"], recs[0]["std"]))
        if len(points) < 2:
            continue
        plotted = True
        ns, means, stds = zip(*points)
        ax.errorbar(ns, means, yerr=stds, marker="o", capsize=2, label=cname)
        rows += [{"cell": cname, "n": n, "mean": m, "std": s}
                 for n, m, s in points]
    if not plotted:
        plt.close(fig)
        raise ReportError("no recall@N records to plot")
    ax.set_xlabel("N")
    ax.set_ylabel(f"recall@N ({split})")
    ax.legend()
    fig.tight_layout()
    png = out / "recall_curve.png"
    fig.savefig(png, dpi=150)
    plt.close(fig)
    csv_path = out / "recall_curve.csv"
    with csv_path.open("w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=["cell", "n", "mean", "std"])
        writer.writeheader()
        writer.writerows(rows)
    return [csv_path, png]


def _run_resamples(results_dir: Path, cell: str, metric: str,
                   split: str) -> dict[int, np.ndarray]:
    """Per-run resample vectors from the per-run metric report JSONs."""
    safe = metric.replace("@", "_at_")
    out = {}
    cell_dir = Path(results_dir) / cell
    for run_dir in sorted(cell_dir.glob("run*")):
        path = run_dir / "metrics" / f"{safe}__{split}.json"
        if path.exists():
            payload = json.loads(path.read_text())
            out[int(run_dir.name[3:])] = np.asarray(payload["resamples"])
    return out


def report_pretraining(results_dir: str | Path, out_dir: str | Path,
                       cells: list[str] | None = None) -> list[Path]:
    """Boxplot data per condition and run for recall@10 and triplet accuracy."""
    results_dir = Path(results_dir)
    store = _store(results_dir)
    if cells is None:
        cells = sorted({r["cell"] for r in store.records})
    out = _ensure(out_dir)
    metrics = [("recall@10", "val_dialog"), ("recall@10", "val_narration"),
               ("triplet_acc", "val_dialog"), ("triplet_acc", "val_narration")]
    fig, axes = plt.subplots(2, 2, figsize=(9, 6), sharey="row")
    rows = []
    any_data = False
    for ax, (metric, split) in zip(axes.ravel(), metrics):
        data, labels = [], []
        for cname in cells:
            for run, resamples in sorted(
                    _run_resamples(results_dir, cname, metric, split).items()):
                data.append(resamples)
                labels.append(f"{cname}/{run}")
                rows.append({"cell": cname, "run": run, "metric": metric,
                             "split": split,
                             "mean": float(resamples.mean()),
                             "std": float(resamples.std())})
        if data:
            any_data = True
            ax.boxplot(data, tick_labels=labels)
            ax.tick_params(axis="x", rotation=90, labelsize=6)
        ax.set_title(f"{metric} / {split}", fontsize=9)
    if not any_data:
        plt.close(fig)
        raise ReportError("no per-run metric reports found")
    fig.tight_layout()
    png = out / "pretraining_boxes.png"
    fig.savefig(png, dpi=150)
    plt.close(fig)
    csv_path = out / "pretraining_boxes.csv"
    with csv_path.open("w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=["cell", "run", "metric", "split",
                                                "mean", "std"])
        writer.writeheader()
        writer.writerows(rows)
    return [csv_path, png]


def report_words(results_dir: str | Path, out_dir: str | Path,
                 cell: str) -> list[Path]:
    """Per-word accuracy bars (and CSV) pooled over the cell's runs."""
    results_dir = Path(results_dir)
    cell_dir = results_dir / cell
    acc: dict[str, list[float]] = defaultdict(list)
    pos_of: dict[str, str] = {}
    pairs_of: dict[str, int] = {}
    for run_dir in sorted(cell_dir.glob("run*")):
        path = run_dir / "metrics" / "word_accuracy__val_narration.csv"
        if not path.exists():
            continue
        with path.open() as fh:
            for row in csv.DictReader(fh):
                acc[row["word"]].append(float(row["mean"]))
                pos_of[row["word"]] = row["pos"]
                pairs_of[row["word"]] = int(row["pairs"])
    if not acc:
        raise ReportError(f"no per-word accuracy files under {cell_dir}")
    out = _ensure(out_dir)
    rows = [{"word": w, "pos": pos_of[w], "pairs": pairs_of[w],
             "mean": float(np.mean(v)), "std": float(np.std(v))}
            for w, v in sorted(acc.items(), key=lambda kv: -np.mean(kv[1]))]
    csv_path = out / "word_accuracy.csv"
    with csv_path.open("w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=["word", "pos", "pairs", "mean", "std"])
        writer.writeheader()
        writer.writerows(rows)
    paths = [csv_path]
    for pos in ("noun", "verb"):
        sub = [r for r in rows if r["pos"] == pos]
        if not sub:
            continue
        fig, ax = plt.subplots(figsize=(6, 0.35 * len(sub) + 1))
        ax.barh([r["word"] for r in sub], [r["mean"] for r in sub],
                xerr=[r["std"] for r in sub])
        ax.axvline(0.5, color="gray", linestyle=":")
        ax.set_xlim(0, 1)
        ax.set_xlabel("minimal-pair accuracy")
        ax.invert_yaxis()
        fig.tight_layout()
        png = out / f"word_accuracy_{pos}s.png"
        fig.savefig(png, dpi=150)
        plt.close(fig)
        paths.append(png)
    return paths


def _triplet_diffs(results_dir: Path, cell: str,
                   split: str) -> dict[int, list[tuple[float, float]]]:
    out = {}
    for run_dir in sorted((Path(results_dir) / cell).glob("run*")):
        path = run_dir / "metrics" / f"triplet_diffs__{split}.csv"
        if not path.exists():
            continue
        rows = []
        with path.open() as fh:
            for row in csv.DictReader(fh):
                rows.append((float(row["duration"]), float(row["diff"])))
        out[int(run_dir.name[3:])] = rows
    return out


def report_duration_effect(results_dir: str | Path, out_dir: str | Path,
                           cell_a: str, cell_b: str,
                           split: str = "val_narration",
                           bucket: float = 0.1) -> list[Path]:
    """Binned mean difference (cell_a - cell_b) of undiscretized triplet
    scores by clip duration; the two cells must share the corpus seed so
    their triplet sets line up."""
    results_dir = Path(results_dir)
    diffs_a = _triplet_diffs(results_dir, cell_a, split)
    diffs_b = _triplet_diffs(results_dir, cell_b, split)
    if not diffs_a or not diffs_b:
        raise ReportError("missing triplet diff tables for one of the cells")
    buckets: dict[int, list[float]] = defaultdict(list)
    for run in sorted(set(diffs_a) & set(diffs_b)):
        ra, rb = diffs_a[run], diffs_b[run]
        if len(ra) != len(rb) or any(abs(x[0] - y[0]) > 1e-6
                                     for x, y in zip(ra, rb)):
            raise ReportError("triplet tables do not align between cells")
        for (dur, da), (_, db) in zip(ra, rb):
            buckets[int(round(dur / bucket))].append(da - db)
    rows = [{"duration": k * bucket, "delta": float(np.mean(v)), "count": len(v)}
            for k, v in sorted(buckets.items())]
    out = _ensure(out_dir)
    csv_path = out / "duration_effect.csv"
    with csv_path.open("w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=["duration", "delta", "count"])
        writer.writeheader()
        writer.writerows(rows)
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.scatter([r["duration"] for r in rows], [r["delta"] for r in rows],
               s=[10 + r["count"] for r in rows])
    ax.axhline(0.0, color="gray", linestyle=":")
    ax.set_xlabel("clip duration (s)")
    ax.set_ylabel(f"mean score difference ({cell_a} - {cell_b})")
    fig.tight_layout()
    png = out / "duration_effect.png"
    fig.savefig(png, dpi=150)
    plt.close(fig)
    return [csv_path, png]


def make_report(kind: str, results_dir: str | Path, out_dir: str | Path,
                **kwargs) -> list[Path]:
    if kind == "recall":
        return report_recall_curve(results_dir, out_dir,
                                   cell=kwargs.get("cell"),
                                   split=kwargs.get("split", "test_narration"))
    if kind == "pretraining":
        return report_pretraining(results_dir, out_dir, cells=kwargs.get("cells"))
    if kind == "words":
        cell = kwargs.get("cell")
        if not cell:
            raise ReportError("words report needs a cell name")
        return report_words(results_dir, out_dir, cell)
    if kind == "duration":
        cells = kwargs.get("cells") or []
        if len(cells) != 2:
            raise ReportError("duration report needs exactly two cells")
        return report_duration_effect(results_dir, out_dir, cells[0], cells[1],
                                      split=kwargs.get("split", "val_narration"))
    if kind == "summary":
        return report_summary(results_dir, out_dir)
    raise ReportError(f"unknown report kind {kind!r}; "
                      f"expected one of {REPORT_KINDS}")
