"""Run configuration: a JSON file with fixed sections, validated before any compute.

Top-level keys (all optional)::

    model          "stamp" | "maxpool" | "meanpool" | "abmil"
    model_config   ModelConfig fields
    train          TrainConfig fields
    synth          SynthConfig fields
    ablation       AblationGrid fields
    seeds          list of ints (default 0..5)
    manifest       path to a manifest CSV (default <out_dir>/data/manifest.csv)
    out_dir        output directory (default "runs"; STAMP_OUT overrides)
    eval_split     split used for test metrics (default "test")
    split_ratios   re-split the manifest with these ratios (default: keep its splits)
    split_seed     seed for split_ratios
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from stamp_mil.data import SPLITS, SynthConfig
from stamp_mil.experiment import PAPER_SEEDS, AblationGrid
from stamp_mil.model import ModelConfig
from stamp_mil.train import MODELS, TrainConfig


class ConfigError(ValueError):
    pass


SECTIONS = {"model_config": ModelConfig, "train": TrainConfig, "synth": SynthConfig, "ablation": AblationGrid}


@dataclass
class RunConfig:
    model: str = "stamp"
    model_config: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    synth: SynthConfig = field(default_factory=SynthConfig)
    ablation: AblationGrid = field(default_factory=AblationGrid)
    seeds: list[int] = field(default_factory=lambda: list(PAPER_SEEDS))
    manifest: str | None = None
    out_dir: str = "runs"
    eval_split: str = "test"
    split_ratios: list[float] | None = None
    split_seed: int = 0

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def config_hash(self) -> str:
        canon = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canon.encode("utf-8")).hexdigest()

    def manifest_path(self) -> Path:
        return Path(self.manifest) if self.manifest else Path(self.out_dir) / "data" / "manifest.csv"


def _check_value(key: str, value: Any, default: Any) -> Any:
    """Type-check ``value`` against the kind of the field default."""

    def bad(kind: str) -> ConfigError:
        return ConfigError(f"{key}: expected {kind}, got {type(value).__name__} {value!r}")

    def is_num(v):
        return isinstance(v, (int, float)) and not isinstance(v, bool)

    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise bad("boolean")
    elif isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, int):
            raise bad("integer")
    elif isinstance(default, float):
        if not is_num(value):
            raise bad("number")
        value = float(value)
    elif isinstance(default, str):
        if not isinstance(value, str):
            raise bad("string")
    elif isinstance(default, (list, tuple)):
        if not isinstance(value, list):
            raise bad("list")
        if default and all(is_num(d) for d in default) and not all(is_num(v) for v in value):
            raise bad("list of numbers")
        if default and all(isinstance(d, int) for d in default) and not all(isinstance(v, int) and not isinstance(v, bool) for v in value):
            raise bad("list of integers")
    elif isinstance(default, dict):
        if not isinstance(value, dict):
            raise bad("object")
    return value


def _build_section(name: str, cls, raw: Any):
    if not isinstance(raw, dict):
        raise ConfigError(f"{name}: expected an object")
    defaults = cls()
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(raw) - known)
    if unknown:
        raise ConfigError(f"{name}.{unknown[0]}: unknown key")
    kwargs = {}
    for k, v in raw.items():
        default = getattr(defaults, k)
        if default is None:
            if v is not None and not (isinstance(v, list) and all(isinstance(x, (int, float)) for x in v)):
                raise ConfigError(f"{name}.{k}: expected null or a list of numbers")
        else:
            v = _check_value(f"{name}.{k}", v, default)
        kwargs[k] = v
    try:
        return cls(**kwargs)
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"{name}: {exc}") from exc


def build_run_config(raw: dict) -> RunConfig:
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    known = {f.name for f in dataclasses.fields(RunConfig)}
    unknown = sorted(set(raw) - known)
    if unknown:
        raise ConfigError(f"{unknown[0]}: unknown key")
    defaults = RunConfig()
    kwargs: dict[str, Any] = {}
    for key, value in raw.items():
        if key in SECTIONS:
            kwargs[key] = _build_section(key, SECTIONS[key], value)
        elif key in ("manifest", "split_ratios"):
            if value is not None:
                kwargs[key] = _check_value(key, value, "" if key == "manifest" else [0.0])
            else:
                kwargs[key] = None
        else:
            kwargs[key] = _check_value(key, value, getattr(defaults, key))
    cfg = RunConfig(**kwargs)
    validate(cfg)
    return cfg


def validate(cfg: RunConfig) -> None:
    if cfg.model not in MODELS:
        raise ConfigError(f"model: must be one of {MODELS}, got {cfg.model!r}")
    if not cfg.seeds:
        raise ConfigError("seeds: need at least one seed")
    if cfg.eval_split not in SPLITS:
        raise ConfigError(f"eval_split: must be one of {SPLITS}")
    if cfg.split_ratios is not None and (
        len(cfg.split_ratios) != 3 or min(cfg.split_ratios) <= 0 or abs(sum(cfg.split_ratios) - 1) > 1e-9
    ):
        raise ConfigError("split_ratios: need three positive ratios summing to 1")
    if cfg.synth.d != cfg.model_config.d:
        raise ConfigError(f"model_config.d: {cfg.model_config.d} does not match synth.d={cfg.synth.d}")


# flag name -> (section or None, key)
OVERRIDES = {
    "n_p": ("model_config", "n_p"),
    "lam": ("train", "lam"),
    "epochs": ("train", "epochs"),
    "seed": ("train", "seed"),
    "model": (None, "model"),
    "manifest": (None, "manifest"),
    "out": (None, "out_dir"),
}


def load_raw(path: str | Path | None) -> dict:
    if path is None:
        return {}
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    text = path.read_text(encoding="utf-8")
    if not text.strip():
        return {}
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON: {exc}") from exc


def parse_config(path: str | Path | None = None, overrides: dict[str, Any] | None = None, env=None) -> RunConfig:
    """Load a config file, apply flag overrides, then the STAMP_OUT environment override."""
    raw = load_raw(path)
    for flag, value in (overrides or {}).items():
        if value is None:
            continue
        section, key = OVERRIDES[flag]
        if section is None:
            raw[key] = value
        else:
            if not isinstance(raw.setdefault(section, {}), dict):
                raise ConfigError(f"{section}: expected an object")
            raw[section][key] = value
    env = os.environ if env is None else env
    if env.get("STAMP_OUT"):
        raw["out_dir"] = env["STAMP_OUT"]
    if "synth" in raw and isinstance(raw["synth"], dict) and "d" in raw["synth"]:
        mc = raw.setdefault("model_config", {})
        if isinstance(mc, dict):
            mc.setdefault("d", raw["synth"]["d"])
    return build_run_config(raw)
