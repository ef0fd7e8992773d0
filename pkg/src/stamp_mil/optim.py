"""Cosine learning-rate schedule and the Ranger optimizer (RAdam + Lookahead)."""

from __future__ import annotations

import math
from typing import Iterable

import numba
import numpy as np
import torch


def cosine_lr(step: int, total_steps: int, lr0: float, lr_min: float) -> float:
    """Cosine annealing from ``lr0`` at step 0 to ``lr_min`` at ``total_steps``."""
    if total_steps <= 0:
        return lr0
    if not 0 <= step <= total_steps:
        raise ValueError(f"step {step} outside [0, {total_steps}]")
    return lr_min + 0.5 * (lr0 - lr_min) * (1.0 + math.cos(math.pi * step / total_steps))


class NonFiniteGradientError(FloatingPointError):
    def __init__(self, name: str):
        super().__init__(f"non-finite gradient in parameter {name!r}")
        self.name = name


def radam_rectifier(step: int, beta2: float) -> float | None:
    """Variance rectification term r_t, or None while the variance is intractable (rho_t <= 4)."""
    rho_inf = 2.0 / (1.0 - beta2) - 1.0
    beta2_t = beta2**step
    rho_t = rho_inf - 2.0 * step * beta2_t / (1.0 - beta2_t)
    if rho_t <= 4.0:
        return None
    return math.sqrt((rho_t - 4.0) * (rho_t - 2.0) * rho_inf / ((rho_inf - 4.0) * (rho_inf - 2.0) * rho_t))


# scalars arrive in the parameter dtype so float32 loops vectorize
@numba.njit(cache=True, fastmath=True, error_model="numpy")
def _radam_adaptive(p, g, m, v, beta1, one_m_beta1, beta2, one_m_beta2, decay, step, inv_v_corr, eps):
    for i in range(p.size):
        gi = g[i]
        mi = beta1 * m[i] + one_m_beta1 * gi
        vi = beta2 * v[i] + one_m_beta2 * gi * gi
        m[i] = mi
        v[i] = vi
        p[i] = p[i] * decay - step * mi / (math.sqrt(vi * inv_v_corr) + eps)


@numba.njit(cache=True, fastmath=True, error_model="numpy")
def _radam_plain(p, g, m, v, beta1, one_m_beta1, beta2, one_m_beta2, decay, step):
    for i in range(p.size):
        gi = g[i]
        mi = beta1 * m[i] + one_m_beta1 * gi
        m[i] = mi
        v[i] = beta2 * v[i] + one_m_beta2 * gi * gi
        p[i] = p[i] * decay - step * mi


@numba.njit(cache=True, fastmath={"reassoc"}, error_model="numpy")
def _all_finite(g):
    acc = g.dtype.type(0)
    for i in range(g.size):
        acc += g[i] * 0.0
    return acc == 0.0


class Ranger(torch.optim.Optimizer):
    """RAdam with decoupled weight decay, wrapped in Lookahead.

    Takes ``named_parameters()`` so that a non-finite gradient can be reported by name.
    Every ``k`` fast steps the slow weights move ``alpha`` of the way toward the fast
    weights, and the fast weights are reset to the slow ones.
    """

    def __init__(
        self,
        named_params: Iterable[tuple[str, torch.Tensor]],
        lr: float = 1e-4,
        betas: tuple[float, float] = (0.9, 0.999),
        eps: float = 1e-8,
        weight_decay: float = 1e-5,
        k: int = 6,
        alpha: float = 0.5,
    ):
        named = [(n, p) for n, p in named_params if p.requires_grad]
        if k < 1 or not 0.0 <= alpha <= 1.0:
            raise ValueError("lookahead needs k >= 1 and alpha in [0, 1]")
        defaults = dict(lr=lr, betas=betas, eps=eps, weight_decay=weight_decay)
        super().__init__([p for _, p in named], defaults)
        self.names = {p: n for n, p in named}
        self.k = k
        self.alpha = alpha
        self.steps = 0
        for p in self.names:
            st = self.state[p]
            st["exp_avg"] = torch.zeros_like(p, memory_format=torch.contiguous_format)
            st["exp_avg_sq"] = torch.zeros_like(p, memory_format=torch.contiguous_format)
            st["slow"] = p.detach().clone()

    @torch.no_grad()
    def step(self, closure=None, lr: float | None = None):
        loss = closure() if closure is not None else None
        if lr is not None:
            for group in self.param_groups:
                group["lr"] = lr
        live = [p for p in self.names if p.grad is not None]
        for p in live:
            if not _all_finite(_flat(p.grad)):
                raise NonFiniteGradientError(self.names[p])
        self.steps += 1
        t = self.steps
        for group in self.param_groups:
            beta1, beta2 = group["betas"]
            lr_t = group["lr"]
            rect = radam_rectifier(t, beta2)
            m_scale = lr_t / (1.0 - beta1**t)
            v_corr = 1.0 - beta2**t
            decay = 1.0 - lr_t * group["weight_decay"]
            for p in group["params"]:
                if p.grad is None:
                    continue
                st = self.state[p]
                f = _flat(p).dtype.type
                args = (
                    _flat(p), _flat(p.grad), _flat(st["exp_avg"]), _flat(st["exp_avg_sq"]),
                    f(beta1), f(1.0 - beta1), f(beta2), f(1.0 - beta2), f(decay),
                )
                if rect is None:
                    _radam_plain(*args, f(m_scale))
                else:
                    _radam_adaptive(*args, f(m_scale * rect), f(1.0 / v_corr), f(group["eps"]))
        if t % self.k == 0:
            for p in self.names:
                slow = self.state[p]["slow"]
                slow.lerp_(p, self.alpha)
                p.copy_(slow)
        return loss


def _flat(t: torch.Tensor) -> np.ndarray:
    if not t.is_contiguous():
        raise ValueError("Ranger requires contiguous tensors")
    return t.detach().numpy().reshape(-1)
