"""Training loop (batch size 1, Ranger, per-step cosine schedule) and evaluation helpers."""

from __future__ import annotations

import copy
import logging
import math
import time
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np
import torch
from torch import nn

from stamp_mil.baselines import BASELINES, init_baseline
from stamp_mil.checkpoint import Checkpoint
from stamp_mil.data import InstanceBag
from stamp_mil.losses import cross_entropy, similarity_loss, total_loss
from stamp_mil.metrics import AVERAGING, MetricsRecord, UndefinedMetricError, compute_record
from stamp_mil.model import ModelConfig, init_model
from stamp_mil.optim import Ranger, cosine_lr

log = logging.getLogger(__name__)

MODELS = ("stamp",) + BASELINES
SELECTION_RULES = ("best_val_auc", "last")


@dataclass
class TrainConfig:
    epochs: int = 50
    batch_size: int = 1
    lr0: float = 1e-4
    lr_min: float = 5e-6
    weight_decay: float = 1e-5
    lam: float = 0.9
    seed: int = 0
    lookahead_k: int = 6
    lookahead_alpha: float = 0.5
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    selection: str = "best_val_auc"
    class_weights: tuple[float, float] | None = None
    threshold: float = 0.5
    averaging: str = "macro"

    def __post_init__(self):
        self.betas = tuple(self.betas)
        if self.class_weights is not None:
            self.class_weights = tuple(self.class_weights)
        self.validate()

    def validate(self) -> None:
        if not 0.0 <= self.lam <= 1.0:
            raise ValueError(f"lam must be in [0, 1], got {self.lam}")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_size != 1:
            raise ValueError("batch_size is fixed at 1")
        if not 0 < self.lr_min <= self.lr0:
            raise ValueError("need 0 < lr_min <= lr0")
        if self.weight_decay < 0:
            raise ValueError("weight_decay must be >= 0")
        if self.lookahead_k < 1 or not 0 <= self.lookahead_alpha <= 1:
            raise ValueError("need lookahead_k >= 1 and lookahead_alpha in [0, 1]")
        if self.selection not in SELECTION_RULES:
            raise ValueError(f"selection must be one of {SELECTION_RULES}")
        if self.averaging not in AVERAGING:
            raise ValueError(f"averaging must be one of {AVERAGING}")
        if not 0 < self.threshold < 1:
            raise ValueError("threshold must be in (0, 1)")
        if self.class_weights is not None and (len(self.class_weights) != 2 or min(self.class_weights) <= 0):
            raise ValueError("class_weights must be two positive numbers")

    def to_dict(self) -> dict:
        return asdict(self)


class TrainingError(RuntimeError):
    pass


def build_model(name: str, cfg: ModelConfig, seed: int) -> nn.Module:
    if name == "stamp":
        return init_model(cfg, seed)
    if name in BASELINES:
        return init_baseline(name, cfg.d, cfg.L, cfg.D, seed)
    raise ValueError(f"unknown model {name!r}; expected one of {MODELS}")


def model_from_checkpoint(ckpt: Checkpoint) -> nn.Module:
    model = build_model(ckpt.model_name, ckpt.model_cfg, seed=0)
    state = {k: torch.from_numpy(v.copy()) for k, v in ckpt.tensors.items()}
    model.load_state_dict(state, strict=True)
    return model.eval()


def bag_loss(model: nn.Module, x: torch.Tensor, label: int, lam: float, class_weights=None):
    """Returns (total, ce, sim, output). Models without a pattern summary get sim = 0."""
    out = model(x)
    ce = cross_entropy(out.probs, label, class_weights)
    if out.H is None:
        sim = torch.zeros((), dtype=ce.dtype)
        lam = 1.0
    else:
        sim = similarity_loss(out.H)
    return total_loss(ce, sim, lam), ce, sim, out


def _tensor(bag: InstanceBag, dtype=torch.float32) -> torch.Tensor:
    return torch.from_numpy(bag.features).to(dtype)


@torch.no_grad()
def score_bags(model: nn.Module, bags: Sequence[InstanceBag]) -> np.ndarray:
    dtype = next(model.parameters()).dtype
    return np.array([float(model(_tensor(b, dtype)).probs[1]) for b in bags])


@torch.no_grad()
def mean_pattern_similarity(model: nn.Module, bags: Sequence[InstanceBag]) -> float:
    """Average over bags of the mean positive-part pairwise cosine of the pattern summary rows."""
    dtype = next(model.parameters()).dtype
    vals = []
    for b in bags:
        out = model(_tensor(b, dtype))
        if out.H is None:
            raise ValueError("model has no pattern summary")
        vals.append(float(similarity_loss(out.H)))
    return float(np.mean(vals))


def evaluate(
    model: nn.Module,
    bags: Sequence[InstanceBag],
    threshold: float = 0.5,
    averaging: str = "macro",
    **meta,
) -> tuple[MetricsRecord, np.ndarray]:
    """Score every bag once; returns the record and the positive-class scores."""
    model.eval()
    scores = score_bags(model, bags)
    labels = np.array([b.label for b in bags])
    return compute_record(scores, labels, threshold, averaging, **meta), scores


@dataclass
class TrainResult:
    checkpoint: Checkpoint
    history: list[dict] = field(default_factory=list)
    model: nn.Module | None = None


def train(
    train_bags: Sequence[InstanceBag],
    val_bags: Sequence[InstanceBag],
    model_cfg: ModelConfig,
    train_cfg: TrainConfig,
    model_name: str = "stamp",
    on_epoch: Callable[[dict], None] | None = None,
) -> TrainResult:
    if not train_bags or not val_bags:
        raise ValueError("train and val splits must be nonempty")
    model = build_model(model_name, model_cfg, train_cfg.seed)
    opt = Ranger(
        model.named_parameters(),
        lr=train_cfg.lr0,
        betas=train_cfg.betas,
        eps=train_cfg.eps,
        weight_decay=train_cfg.weight_decay,
        k=train_cfg.lookahead_k,
        alpha=train_cfg.lookahead_alpha,
    )
    cw = None if train_cfg.class_weights is None else torch.tensor(train_cfg.class_weights)
    rng = np.random.default_rng(train_cfg.seed)
    xs = [_tensor(b) for b in train_bags]
    total_steps = train_cfg.epochs * len(train_bags)
    history: list[dict] = []
    best_key, best_state, best_epoch, best_metrics = None, None, 0, {}
    step = 0
    for epoch in range(1, train_cfg.epochs + 1):
        model.train()
        t0 = time.perf_counter()
        sums = np.zeros(3)
        for i in rng.permutation(len(train_bags)):
            lr = cosine_lr(step, total_steps, train_cfg.lr0, train_cfg.lr_min)
            loss, ce, sim, _ = bag_loss(model, xs[i], train_bags[i].label, train_cfg.lam, cw)
            if not torch.isfinite(loss):
                raise TrainingError(f"non-finite loss at epoch {epoch}, bag {train_bags[i].bag_id!r}")
            opt.zero_grad()
            loss.backward()
            opt.step(lr=lr)
            sums += (loss.item(), ce.item(), sim.item())
            step += 1
        row = {
            "epoch": epoch,
            "lr": lr,
            "train_loss": sums[0] / len(train_bags),
            "train_ce": sums[1] / len(train_bags),
            "train_sim": sums[2] / len(train_bags),
        }
        row.update(_validate(model, val_bags, train_cfg))
        history.append(row)
        if on_epoch is not None:
            on_epoch(row)
        log.debug("epoch %d (%.1fs) %s", epoch, time.perf_counter() - t0, row)
        key = _selection_key(row, train_cfg.selection)
        if best_key is None or key > best_key:
            best_key, best_epoch = key, epoch
            best_state = copy.deepcopy(model.state_dict())
            best_metrics = {k: v for k, v in row.items() if k.startswith("val_")}
    model.load_state_dict(best_state)
    model.eval()
    ckpt = Checkpoint(
        tensors={k: v.detach().numpy().astype(np.float32) for k, v in model.state_dict().items()},
        model_name=model_name,
        model_cfg=model_cfg,
        train_cfg=train_cfg.to_dict(),
        epoch=best_epoch,
        metrics=best_metrics,
    )
    return TrainResult(ckpt, history, model)


@torch.no_grad()
def _validate(model: nn.Module, bags: Sequence[InstanceBag], cfg: TrainConfig) -> dict:
    model.eval()
    losses, scores = [], []
    for b in bags:
        loss, _, _, out = bag_loss(model, _tensor(b), b.label, cfg.lam)
        losses.append(loss.item())
        scores.append(float(out.probs[1]))
    row = {"val_loss": float(np.mean(losses))}
    try:
        rec = compute_record(scores, [b.label for b in bags], cfg.threshold, cfg.averaging)
        row.update({f"val_{k}": getattr(rec, k) for k in ("acc", "auc", "precision", "recall", "f1")})
    except UndefinedMetricError:
        row.update({f"val_{k}": math.nan for k in ("acc", "auc", "precision", "recall", "f1")})
    return row


def _selection_key(row: dict, rule: str) -> tuple:
    if rule == "last":
        return (row["epoch"],)
    # strict improvement only, so ties keep the earlier epoch; undefined AUC falls back to val loss
    auc = row["val_auc"]
    if math.isnan(auc):
        return (-math.inf, -row["val_loss"])
    return (auc, 0.0)
