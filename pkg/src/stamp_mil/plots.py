"""SVG figures from result CSVs. Plotting never raises; failures are logged and skipped."""

from __future__ import annotations

import csv
import logging
from collections import defaultdict
from pathlib import Path

import numpy as np

log = logging.getLogger(__name__)


def _pyplot():
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    return plt


def roc_points(scores: np.ndarray, labels: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    order = np.argsort(-scores, kind="mergesort")
    s, y = scores[order], labels[order]
    distinct = np.r_[np.flatnonzero(np.diff(s)), y.size - 1]
    tps = np.cumsum(y)[distinct]
    fps = (distinct + 1) - tps
    return np.r_[0.0, fps / max(fps[-1], 1)], np.r_[0.0, tps / max(tps[-1], 1)]


def plot_roc(scores_csv: Path, out: Path) -> Path | None:
    try:
        with open(scores_csv, newline="") as fh:
            rows = list(csv.DictReader(fh))
        scores = np.array([float(r["score"]) for r in rows])
        labels = np.array([int(r["label"]) for r in rows])
        fpr, tpr = roc_points(scores, labels)
        plt = _pyplot()
        fig, ax = plt.subplots(figsize=(4, 4))
        ax.plot(fpr, tpr, lw=1.5)
        ax.plot([0, 1], [0, 1], ls="--", c="grey", lw=0.8)
        ax.set_xlabel("False positive rate")
        ax.set_ylabel("True positive rate")
        fig.tight_layout()
        fig.savefig(out, format="svg")
        plt.close(fig)
        return out
    except Exception as exc:
        log.warning("ROC plot from %s failed: %s", scores_csv, exc)
        return None


def plot_ablation_bars(long_csv: Path, out_dir: Path, metric: str = "ACC") -> list[Path]:
    """One grouped bar chart per comparison (branch / embedding / aggregation)."""
    written = []
    try:
        with open(long_csv, newline="") as fh:
            rows = [r for r in csv.DictReader(fh) if r["metric"] == metric]
        by_fig: dict[str, list[dict]] = defaultdict(list)
        for r in rows:
            by_fig[r["figure"]].append(r)
        plt = _pyplot()
        for figure, fr in by_fig.items():
            variants = list(dict.fromkeys(r["variant"] for r in fr))
            nps = sorted({int(r["n_p"]) for r in fr})
            width = 0.8 / len(variants)
            fig, ax = plt.subplots(figsize=(5, 3.2))
            for j, v in enumerate(variants):
                vals = {int(r["n_p"]): (float(r["mean"]), float(r["std"])) for r in fr if r["variant"] == v}
                xs = [i + j * width for i, n in enumerate(nps) if n in vals]
                ax.bar(xs, [vals[n][0] for n in nps if n in vals], width, yerr=[vals[n][1] for n in nps if n in vals], label=v)
            ax.set_xticks([i + 0.4 - width / 2 for i in range(len(nps))], [str(n) for n in nps])
            ax.set_xlabel("pattern number")
            ax.set_ylabel(metric)
            ax.legend(fontsize=8)
            fig.tight_layout()
            path = out_dir / f"ablation_{figure}_{metric}.svg"
            fig.savefig(path, format="svg")
            plt.close(fig)
            written.append(path)
    except Exception as exc:
        log.warning("ablation plot from %s failed: %s", long_csv, exc)
    return written
