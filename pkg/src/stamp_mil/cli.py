"""Command-line entry point.

Exit codes: 0 success, 1 usage/config error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
import time
from dataclasses import replace
from pathlib import Path

from stamp_mil import __version__
from stamp_mil.checkpoint import load_checkpoint, save_checkpoint
from stamp_mil.config import ConfigError, RunConfig, parse_config
from stamp_mil.data import SPLITS, DatasetIndex, FormatError, generate_synthetic_dataset, split_dataset
from stamp_mil.experiment import ablation_suite
from stamp_mil.gradcheck import TINY, gradient_check
from stamp_mil.plots import plot_ablation_bars, plot_roc
from stamp_mil.train import evaluate, model_from_checkpoint, train

log = logging.getLogger("stamp_mil")

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="stamp-mil", description="Multi-pattern attention MIL: data, training, evaluation, ablations.")
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="cmd", required=True, parser_class=_Parser)

    s = sub.add_parser("synth", help="generate the synthetic benchmark")
    s.add_argument("--config", required=True)
    s.add_argument("--out")

    t = sub.add_parser("train", help="train one model")
    t.add_argument("--config", required=True)
    t.add_argument("--seed", type=int)
    t.add_argument("--model", choices=["stamp", "maxpool", "meanpool", "abmil"])
    t.add_argument("--n-p", dest="n_p", type=int)
    t.add_argument("--lambda", dest="lam", type=float)
    t.add_argument("--epochs", type=int)
    t.add_argument("--manifest")
    t.add_argument("--out")

    e = sub.add_parser("eval", help="evaluate a checkpoint")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--manifest", required=True)
    e.add_argument("--split", default="test", choices=SPLITS)
    e.add_argument("--out")

    a = sub.add_parser("ablate", help="run the ablation grid")
    a.add_argument("--config", required=True)
    a.add_argument("--manifest")
    a.add_argument("--out")

    g = sub.add_parser("gradcheck", help="finite-difference gradient check on a tiny model")
    g.add_argument("--tol", type=float, default=1e-4)
    g.add_argument("--out")

    r = sub.add_parser("report", help="render SVG plots from result CSVs")
    r.add_argument("--in", dest="in_dir", required=True)
    return p


def write_run_json(out: Path, cmd: str, cfg: RunConfig | None, extra: dict | None = None) -> Path:
    out.mkdir(parents=True, exist_ok=True)
    payload = {"command": cmd, "version": __version__, "created": time.strftime("%Y-%m-%dT%H:%M:%S")}
    if cfg is not None:
        payload["config"] = cfg.to_dict()
        payload["config_hash"] = cfg.config_hash()
    payload.update(extra or {})
    path = out / "run.json"
    path.write_text(json.dumps(payload, indent=2, default=str))
    return path


def _write_rows(path: Path, rows: list[dict]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]))
        w.writeheader()
        w.writerows(rows)


def _load_index(cfg: RunConfig) -> DatasetIndex:
    path = cfg.manifest_path()
    if not path.is_file():
        raise UsageError(f"manifest not found: {path} (run `synth` first or set 'manifest')")
    index = DatasetIndex.from_manifest(path)
    if cfg.split_ratios is not None:
        index = split_dataset(index, cfg.split_ratios, cfg.split_seed)
    try:
        index.check_training_splits()
    except ValueError as exc:
        raise UsageError(f"{path}: {exc}") from exc
    return index


def _splits(index: DatasetIndex) -> dict:
    return {name: index.load(name) for name in SPLITS}


def _model_cfg(cfg: RunConfig, index: DatasetIndex):
    if index.feature_dim != cfg.model_config.d:
        log.info("using feature dimension d=%d from the data (config had %d)", index.feature_dim, cfg.model_config.d)
        return replace(cfg.model_config, d=index.feature_dim)
    return cfg.model_config


def cmd_synth(args) -> int:
    cfg = parse_config(args.config, {"out": args.out})
    out = Path(cfg.out_dir) / "data"
    index = generate_synthetic_dataset(cfg.synth, out)
    write_run_json(out, "synth", cfg, {"bags": len(index)})
    print(f"wrote {len(index)} bags and {out / 'manifest.csv'}")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = parse_config(
        args.config,
        {"seed": args.seed, "model": args.model, "n_p": args.n_p, "lam": args.lam, "epochs": args.epochs,
         "manifest": args.manifest, "out": args.out},
    )
    index = _load_index(cfg)
    splits = _splits(index)
    model_cfg = _model_cfg(cfg, index)
    out = Path(cfg.out_dir) / f"train-{cfg.model}-seed{cfg.train.seed}"
    out.mkdir(parents=True, exist_ok=True)
    res = train(
        splits["train"], splits["val"], model_cfg, cfg.train, cfg.model,
        on_epoch=lambda row: log.info("epoch %d loss %.4f val_auc %.4f", row["epoch"], row["train_loss"], row["val_auc"]),
    )
    save_checkpoint(res.checkpoint, out / "checkpoint.smck")
    _write_rows(out / "history.csv", res.history)
    write_run_json(out, "train", cfg, {"best_epoch": res.checkpoint.epoch, "val_metrics": res.checkpoint.metrics})
    print(f"checkpoint: {out / 'checkpoint.smck'} (epoch {res.checkpoint.epoch})")
    return EXIT_OK


def cmd_eval(args) -> int:
    ckpt_path, manifest = Path(args.checkpoint), Path(args.manifest)
    for p in (ckpt_path, manifest):
        if not p.is_file():
            raise UsageError(f"file not found: {p}")
    cfg = parse_config(None, {"out": args.out, "manifest": args.manifest})
    ckpt = load_checkpoint(ckpt_path)
    index = DatasetIndex.from_manifest(manifest, feature_dim=ckpt.model_cfg.d)
    bags = index.load(args.split)
    if not bags:
        raise UsageError(f"split {args.split!r} is empty in {manifest}")
    model = model_from_checkpoint(ckpt)
    tc = ckpt.train_cfg
    rec, scores = evaluate(
        model, bags, tc.get("threshold", 0.5), tc.get("averaging", "macro"),
        seed=tc.get("seed"), split=args.split, tag=ckpt.model_name,
    )
    out = Path(cfg.out_dir) / f"eval-{ckpt.model_name}-{args.split}"
    out.mkdir(parents=True, exist_ok=True)
    _write_rows(out / "metrics.csv", [rec.to_dict()])
    (out / "metrics.json").write_text(json.dumps(rec.to_dict(), indent=2))
    _write_rows(out / "scores.csv", [{"bag_id": b.bag_id, "label": b.label, "score": s} for b, s in zip(bags, scores)])
    write_run_json(out, "eval", cfg, {"checkpoint": str(ckpt_path)})
    print(json.dumps(rec.to_dict()))
    return EXIT_OK


def cmd_ablate(args) -> int:
    cfg = parse_config(args.config, {"manifest": args.manifest, "out": args.out})
    if not cfg.ablation.cells():
        raise UsageError("ablation grid is empty")
    index = _load_index(cfg)
    out = Path(cfg.out_dir) / "ablation"
    result = ablation_suite(cfg.ablation, _splits(index), _model_cfg(cfg, index), cfg.train, out)
    write_run_json(out, "ablate", cfg, {"failures": result.failures})
    print(f"ablation reports in {out} ({len(result.cells)} cells, {len(result.failures)} failed)")
    return EXIT_RUNTIME if result.failures and not result.cells else EXIT_OK


def cmd_gradcheck(args) -> int:
    cfg = parse_config(None, {"out": args.out})
    report = gradient_check(TINY, args.tol)
    out = Path(cfg.out_dir) / "gradcheck"
    out.mkdir(parents=True, exist_ok=True)
    text = "\n".join(report.lines())
    (out / "report.txt").write_text(text + "\n")
    (out / "report.json").write_text(
        json.dumps({"tolerance": args.tol, "passed": report.passed, "tensors": [t.__dict__ for t in report.tensors]}, indent=2)
    )
    write_run_json(out, "gradcheck", cfg, {"passed": report.passed})
    print(text)
    return EXIT_OK if report.passed else EXIT_RUNTIME


def cmd_report(args) -> int:
    src = Path(args.in_dir)
    if not src.is_dir():
        raise UsageError(f"input directory not found: {src}")
    plots = src / "plots"
    plots.mkdir(exist_ok=True)
    written = []
    for i, scores in enumerate(sorted(src.rglob("scores.csv"))):
        name = scores.parent.name if scores.parent != src else f"roc{i}"
        p = plot_roc(scores, plots / f"roc_{name}.svg")
        if p:
            written.append(p)
    for long_csv in sorted(src.rglob("ablation_long.csv")):
        for metric in ("ACC", "AUC"):
            written.extend(plot_ablation_bars(long_csv, plots, metric))
    for p in written:
        print(p)
    if not written:
        print(f"no plottable CSVs found under {src}")
    return EXIT_OK


COMMANDS = {
    "synth": cmd_synth,
    "train": cmd_train,
    "eval": cmd_eval,
    "ablate": cmd_ablate,
    "gradcheck": cmd_gradcheck,
    "report": cmd_report,
}


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.cmd](args)
    except (UsageError, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (FormatError, RuntimeError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
