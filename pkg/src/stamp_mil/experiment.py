"""Seed-averaged evaluation protocol and the ablation harness."""

from __future__ import annotations

import csv
import itertools
import json
import logging
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from stamp_mil.checkpoint import Checkpoint
from stamp_mil.data import InstanceBag
from stamp_mil.metrics import METRIC_NAMES, MetricsRecord
from stamp_mil.model import AGG_MODES, BRANCH_MODES, EMBED_VARIANTS, ModelConfig
from stamp_mil.train import TrainConfig, evaluate, mean_pattern_similarity, train

log = logging.getLogger(__name__)

Splits = Mapping[str, Sequence[InstanceBag]]
PAPER_SEEDS = (0, 1, 2, 3, 4, 5)
TABLE_COLUMNS = {"acc": "ACC", "auc": "AUC", "precision": "Precision", "recall": "Recall", "f1": "F1"}
BRANCH_LABELS = {"double": "double (H,T)", "head_only": "single (H)"}


class PartialResultsError(RuntimeError):
    def __init__(self, seed: int, records: list[MetricsRecord], cause: BaseException):
        super().__init__(f"run for seed {seed} failed: {cause}")
        self.seed = seed
        self.records = records


@dataclass
class SeedRun:
    record: MetricsRecord
    history: list[dict]
    checkpoint: Checkpoint
    scores: np.ndarray
    labels: np.ndarray
    pattern_similarity: float | None = None


def run_once(
    splits: Splits,
    model_cfg: ModelConfig,
    train_cfg: TrainConfig,
    model_name: str = "stamp",
    split: str = "test",
    tag: str = "",
) -> SeedRun:
    """Train on ``splits['train']`` (selecting on val) and evaluate on ``splits[split]``."""
    res = train(splits["train"], splits["val"], model_cfg, train_cfg, model_name)
    bags = splits[split]
    rec, scores = evaluate(
        res.model, bags, train_cfg.threshold, train_cfg.averaging, seed=train_cfg.seed, split=split, tag=tag or model_name
    )
    sim = mean_pattern_similarity(res.model, bags) if model_name == "stamp" else None
    return SeedRun(rec, res.history, res.checkpoint, scores, np.array([b.label for b in bags]), sim)


def aggregate(records: Sequence[MetricsRecord]) -> dict[str, float]:
    """Mean and population std of each metric."""
    if not records:
        raise ValueError("no records to aggregate")
    out = {}
    for m in METRIC_NAMES:
        vals = np.array([getattr(r, m) for r in records], dtype=np.float64)
        out[f"{m}_mean"] = float(vals.mean())
        out[f"{m}_std"] = float(vals.std())
    out["n_seeds"] = len(records)
    return out


@dataclass
class SeedAveraged:
    runs: list[SeedRun]
    summary: dict[str, float]

    @property
    def records(self) -> list[MetricsRecord]:
        return [r.record for r in self.runs]


def seed_averaged_run(
    splits: Splits,
    model_cfg: ModelConfig,
    train_cfg: TrainConfig,
    seeds: Sequence[int] = PAPER_SEEDS,
    model_name: str = "stamp",
    tag: str = "",
) -> SeedAveraged:
    if not seeds:
        raise ValueError("need at least one seed")
    runs: list[SeedRun] = []
    for seed in seeds:
        try:
            runs.append(run_once(splits, model_cfg, replace(train_cfg, seed=int(seed)), model_name, tag=tag))
        except Exception as exc:
            raise PartialResultsError(int(seed), [r.record for r in runs], exc) from exc
        log.info("%s seed %d: auc=%.4f", tag or model_name, seed, runs[-1].record.auc)
    return SeedAveraged(runs, aggregate([r.record for r in runs]))


@dataclass
class AblationGrid:
    """Ablation cells.

    ``design='one_factor'`` runs the base variant (first entry of each axis) at every
    pattern count plus each single-axis alternative at every pattern count, which is
    what the pattern-number table and the three paired-bar comparisons need;
    ``design='full'`` runs the whole cross product (PA cells need the double branch).
    """

    pattern_counts: list[int] = field(default_factory=lambda: [1, 2, 3, 4, 5])
    branch_modes: list[str] = field(default_factory=lambda: ["double", "head_only"])
    embed_variants: list[str] = field(default_factory=lambda: ["joint_projection", "token_append"])
    agg_modes: list[str] = field(default_factory=lambda: ["FA", "PA"])
    seeds: list[int] = field(default_factory=lambda: list(PAPER_SEEDS))
    design: str = "one_factor"

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        for name, allowed in (("branch_modes", BRANCH_MODES), ("embed_variants", EMBED_VARIANTS), ("agg_modes", AGG_MODES)):
            bad = [v for v in getattr(self, name) if v not in allowed]
            if bad:
                raise ValueError(f"{name}: unknown values {bad}")
        if any(k < 1 for k in self.pattern_counts):
            raise ValueError("pattern_counts must be >= 1")
        if self.design not in ("one_factor", "full"):
            raise ValueError("design must be 'one_factor' or 'full'")

    def cells(self) -> list[tuple[int, str, str, str]]:
        """(n_p, branch_mode, embed_variant, agg_mode) tuples, deduplicated, in a stable order."""
        axes = (self.branch_modes, self.embed_variants, self.agg_modes)
        if not self.pattern_counts or not self.seeds or not all(axes):
            return []
        if self.design == "full":
            combos = list(itertools.product(*axes))
        else:
            base = tuple(a[0] for a in axes)
            combos = [base]
            for i, axis in enumerate(axes):
                for v in axis[1:]:
                    c = list(base)
                    c[i] = v
                    combos.append(tuple(c))
        out = []
        for n_p in self.pattern_counts:
            for b, e, a in combos:
                if a == "PA" and b != "double":
                    continue
                if (n_p, b, e, a) not in out:
                    out.append((n_p, b, e, a))
        return out


def cell_tag(n_p: int, branch: str, embed: str, agg: str) -> str:
    return f"np{n_p}-{branch}-{embed}-{agg}"


@dataclass
class AblationResult:
    grid: AblationGrid
    cells: dict[tuple, SeedAveraged] = field(default_factory=dict)
    failures: dict[str, str] = field(default_factory=dict)


def ablation_suite(
    grid: AblationGrid,
    splits: Splits,
    base_model_cfg: ModelConfig,
    train_cfg: TrainConfig,
    out_dir: str | Path | None = None,
) -> AblationResult:
    cells = grid.cells()
    if not cells:
        raise ValueError("ablation grid is empty")
    result = AblationResult(grid)
    for cell in cells:
        n_p, b, e, a = cell
        tag = cell_tag(*cell)
        cfg = replace(base_model_cfg, n_p=n_p, branch_mode=b, embed_variant=e, agg_mode=a)
        try:
            result.cells[cell] = seed_averaged_run(splits, cfg, train_cfg, grid.seeds, "stamp", tag)
        except Exception as exc:  # one bad cell must not sink the suite
            log.error("ablation cell %s failed: %s", tag, exc)
            result.failures[tag] = str(exc)
    if out_dir is not None:
        write_ablation_reports(result, out_dir)
    return result


def _write_csv(path: Path, rows: list[dict]) -> None:
    if not rows:
        path.write_text("")
        return
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]))
        w.writeheader()
        w.writerows(rows)


def write_ablation_reports(result: AblationResult, out_dir: str | Path) -> dict[str, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    grid = result.grid
    base_b, base_e, base_a = grid.branch_modes[0], grid.embed_variants[0], grid.agg_modes[0]

    records, aggregates = [], []
    for (n_p, b, e, a), sa in result.cells.items():
        meta = {"tag": cell_tag(n_p, b, e, a), "n_p": n_p, "branch_mode": b, "embed_variant": e, "agg_mode": a}
        for r in sa.records:
            records.append({**meta, **r.to_dict()})
        aggregates.append({**meta, **sa.summary})

    table = []
    for n_p in grid.pattern_counts:
        sa = result.cells.get((n_p, base_b, base_e, base_a))
        if sa is not None:
            table.append({"Pattern Number": n_p, **{TABLE_COLUMNS[m]: sa.summary[f"{m}_mean"] for m in METRIC_NAMES}})

    long_rows = []
    comparisons = (
        ("branch", 0, grid.branch_modes, lambda v: BRANCH_LABELS.get(v, v)),
        ("embedding", 1, grid.embed_variants, str),
        ("aggregation", 2, grid.agg_modes, str),
    )
    for figure, axis, values, label in comparisons:
        if len(values) < 2:
            continue
        for n_p in grid.pattern_counts:
            for v in values:
                key = [base_b, base_e, base_a]
                key[axis] = v
                sa = result.cells.get((n_p, *key))
                if sa is None:
                    continue
                for m in METRIC_NAMES:
                    long_rows.append(
                        {
                            "figure": figure,
                            "variant": label(v),
                            "n_p": n_p,
                            "metric": TABLE_COLUMNS[m],
                            "mean": sa.summary[f"{m}_mean"],
                            "std": sa.summary[f"{m}_std"],
                        }
                    )

    best = {}
    for m in METRIC_NAMES:
        if aggregates:
            top = max(aggregates, key=lambda row: row[f"{m}_mean"])
            best[TABLE_COLUMNS[m]] = {"tag": top["tag"], "mean": top[f"{m}_mean"]}

    paths = {
        "records": out / "records.csv",
        "aggregates": out / "aggregates.csv",
        "pattern_table": out / "pattern_table.csv",
        "figure_data": out / "ablation_long.csv",
        "summary": out / "summary.json",
    }
    _write_csv(paths["records"], records)
    _write_csv(paths["aggregates"], aggregates)
    _write_csv(paths["pattern_table"], table)
    _write_csv(paths["figure_data"], long_rows)
    paths["summary"].write_text(
        json.dumps({"grid": asdict(grid), "best": best, "failures": result.failures, "cells": len(result.cells)}, indent=2)
    )
    return paths
