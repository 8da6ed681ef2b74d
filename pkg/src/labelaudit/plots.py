"""SVG rendering of emitted report CSVs.

Kept separate from the numeric pipeline so audit runs have no presentation
dependencies; the ``report`` CLI step reads the CSV artifacts back and draws
one plot per file family.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

__all__ = ["render_report"]


def _read_csv(path: Path):
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = list(reader)
    return header, rows


def _save(fig, path: Path):
    fig.tight_layout()
    fig.savefig(path, format="svg")
    plt.close(fig)


def _plot_auc_summary(path: Path, out: Path):
    _, rows = _read_csv(path)
    names = [r[0] for r in rows]
    means = [float(r[1]) for r in rows]
    stds = [float(r[2]) for r in rows]
    fig, ax = plt.subplots(figsize=(9, 4))
    ax.bar(range(len(names)), means, yerr=stds, capsize=3)
    ax.set_xticks(range(len(names)))
    ax.set_xticklabels(names, rotation=45, ha="right")
    ax.set_ylabel("mean AUC (cross-validated)")
    ax.set_ylim(0.0, 1.0)
    _save(fig, out)


def _plot_roc(path: Path, out: Path):
    _, rows = _read_csv(path)
    fpr = [float(r[0]) for r in rows]
    mean = [float(r[1]) for r in rows]
    std = [float(r[2]) for r in rows]
    lo = [max(m - s, 0.0) for m, s in zip(mean, std)]
    hi = [min(m + s, 1.0) for m, s in zip(mean, std)]
    fig, ax = plt.subplots(figsize=(5, 5))
    ax.plot(fpr, mean)
    ax.fill_between(fpr, lo, hi, alpha=0.3)
    ax.plot([0, 1], [0, 1], linestyle="--", color="gray", linewidth=0.8)
    ax.set_xlabel("false positive rate")
    ax.set_ylabel("true positive rate")
    ax.set_title(path.stem)
    _save(fig, out)


def _plot_predictions(path: Path, out: Path):
    header, rows = _read_csv(path)
    strategies = header[1:]
    data = [[float(r[c + 1]) for r in rows] for c in range(len(strategies))]
    fig, ax = plt.subplots(figsize=(9, 4))
    ax.violinplot(data, showmedians=True)
    ax.set_xticks(range(1, len(strategies) + 1))
    ax.set_xticklabels(strategies, rotation=45, ha="right")
    ax.set_ylabel("predicted recovery probability")
    ax.set_title(path.stem)
    _save(fig, out)


def _plot_retention(path: Path, out: Path):
    _, rows = _read_csv(path)
    names = [r[0] for r in rows]
    fracs = [float(r[2]) for r in rows]
    fig, ax = plt.subplots(figsize=(9, 4))
    ax.bar(range(len(names)), fracs)
    ax.set_xticks(range(len(names)))
    ax.set_xticklabels(names, rotation=45, ha="right")
    ax.set_ylabel(f"fraction at or below threshold {rows[0][1]}")
    _save(fig, out)


def _plot_conflict(path: Path, out: Path):
    header, rows = _read_csv(path)
    names = header[1:]
    counts = [[int(v) for v in r[1:]] for r in rows]
    fig, ax = plt.subplots(figsize=(7, 6))
    im = ax.imshow(counts, cmap="Reds")
    ax.set_xticks(range(len(names)))
    ax.set_xticklabels(names, rotation=45, ha="right")
    ax.set_yticks(range(len(names)))
    ax.set_yticklabels(names)
    for r in range(len(names)):
        for c in range(len(names)):
            ax.text(c, r, counts[r][c], ha="center", va="center", fontsize=7)
    fig.colorbar(im, ax=ax, shrink=0.8)
    ax.set_title(path.stem)
    _save(fig, out)


def _plot_fan(path: Path, out: Path):
    _, rows = _read_csv(path)
    names = [r[0] for r in rows]
    preds = [float(r[1]) for r in rows]
    fig, ax = plt.subplots(figsize=(9, 3.5))
    ax.scatter(range(len(names)), preds)
    ax.set_xticks(range(len(names)))
    ax.set_xticklabels(names, rotation=45, ha="right")
    ax.set_ylabel("predicted recovery probability")
    ax.set_ylim(-0.02, 1.02)
    ax.set_title(path.stem)
    _save(fig, out)


def _plot_disagreement(path: Path, out: Path):
    _, rows = _read_csv(path)
    groups = {"N_holdout": [], "W": []}
    for r in rows:
        groups.setdefault(r[0], []).append(float(r[2]))
    labels = [k for k in ("N_holdout", "W") if groups.get(k)]
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.boxplot([groups[k] for k in labels], tick_labels=labels)
    ax.set_ylabel("max cross-strategy prediction difference")
    _save(fig, out)


def _plot_tercile(path: Path, out: Path):
    with open(path) as fh:
        payload = json.load(fh)
    fig, ax = plt.subplots(figsize=(4, 4))
    ax.bar([0], [payload["count"]])
    ax.set_xticks([0])
    ax.set_xticklabels(["rank-unstable instances"])
    ax.set_ylabel("count")
    _save(fig, out)


def render_report(run_dir: str | Path, out_dir: str | Path | None = None) -> list[Path]:
    """Render one SVG per CSV/JSON artifact family; returns written paths."""
    run_dir = Path(run_dir)
    if not (run_dir / "index.json").exists():
        raise FileNotFoundError(f"{run_dir} does not look like a report directory")
    out_dir = Path(out_dir) if out_dir else run_dir
    out_dir.mkdir(parents=True, exist_ok=True)

    written = []
    dispatch = [
        ("auc_summary.csv", _plot_auc_summary),
        ("roc_*.csv", _plot_roc),
        ("predictions_*.csv", _plot_predictions),
        ("retention.csv", _plot_retention),
        ("conflict_*.csv", _plot_conflict),
        ("fan_*.csv", _plot_fan),
        ("disagreement_summary.csv", _plot_disagreement),
        ("tercile_instability.json", _plot_tercile),
    ]
    for pattern, fn in dispatch:
        for path in sorted(run_dir.glob(pattern)):
            out = out_dir / (path.stem + ".svg")
            fn(path, out)
            written.append(out)
    return written
