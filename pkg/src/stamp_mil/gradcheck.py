"""Finite-difference verification of the autograd gradients of the total loss."""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
import torch

from stamp_mil.model import ModelConfig
from stamp_mil.train import bag_loss, build_model

TINY = ModelConfig(d=8, L=16, n_p=2, D=8, heads=2)


@dataclass
class TensorCheck:
    name: str
    shape: tuple[int, ...]
    max_rel_error: float
    max_abs_error: float


@dataclass
class GradCheckReport:
    tolerance: float
    tensors: list[TensorCheck] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(t.max_rel_error < self.tolerance for t in self.tensors)

    def lines(self) -> list[str]:
        out = [f"{'tensor':<32} {'shape':<14} {'max rel err':>12}  ok"]
        for t in self.tensors:
            ok = "PASS" if t.max_rel_error < self.tolerance else "FAIL"
            out.append(f"{t.name:<32} {str(t.shape):<14} {t.max_rel_error:12.3e}  {ok}")
        out.append(f"overall: {'PASS' if self.passed else 'FAIL'} (tolerance {self.tolerance:g})")
        return out


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-6) -> float:
    """max |a - n| scaled by the larger of the two gradients' max magnitudes (at least ``floor``)."""
    scale = max(np.abs(analytic).max(initial=0.0), np.abs(numeric).max(initial=0.0), floor)
    return float(np.abs(analytic - numeric).max(initial=0.0) / scale)


def gradient_check(
    model_cfg: ModelConfig = TINY,
    tolerance: float = 1e-4,
    model_name: str = "stamp",
    n: int = 6,
    lam: float = 0.9,
    label: int = 1,
    step: float = 1e-5,
    seed: int = 0,
) -> GradCheckReport:
    """Compare autograd gradients of the total loss with central differences, in float64."""
    torch.manual_seed(seed)
    model = build_model(model_name, replace(model_cfg), seed).double()
    x = torch.from_numpy(np.random.default_rng(seed).standard_normal((n, model_cfg.d)))

    def loss_fn() -> torch.Tensor:
        return bag_loss(model, x, label, lam)[0]

    model.zero_grad()
    loss_fn().backward()
    report = GradCheckReport(tolerance)
    for name, p in model.named_parameters():
        analytic = p.grad.detach().numpy().copy() if p.grad is not None else np.zeros(tuple(p.shape))
        numeric = np.zeros_like(analytic)
        flat = p.data.view(-1)
        with torch.no_grad():
            for i in range(flat.numel()):
                orig = flat[i].item()
                flat[i] = orig + step
                up = loss_fn().item()
                flat[i] = orig - step
                down = loss_fn().item()
                flat[i] = orig
                numeric.reshape(-1)[i] = (up - down) / (2 * step)
        report.tensors.append(
            TensorCheck(
                name,
                tuple(p.shape),
                relative_error(analytic, numeric),
                float(np.abs(analytic - numeric).max(initial=0.0)),
            )
        )
    return report
