from __future__ import annotations

import warnings

import torch

PROB_FLOOR = 1e-12


def cross_entropy(probs: torch.Tensor, label: int, class_weights: torch.Tensor | None = None) -> torch.Tensor:
    """-log p[label], with the probability floored at 1e-12."""
    loss = -probs[label].clamp_min(PROB_FLOOR).log()
    if class_weights is not None:
        loss = loss * class_weights[label]
    return loss


def similarity_loss(H: torch.Tensor) -> torch.Tensor:
    """Mean over ordered pairs i != j of relu(cos(H_i, H_j)).

    Zero rows have cosine 0 with everything. A single row has no pairs; the loss
    is 0 and a warning is emitted.
    """
    k = H.shape[0]
    if k < 2:
        warnings.warn("similarity_loss on fewer than 2 rows; returning 0", RuntimeWarning, stacklevel=2)
        return H.sum() * 0.0
    # rescale by the max-abs entry first so tiny rows do not underflow in the norm
    scale = H.detach().abs().amax(dim=1, keepdim=True)
    nonzero = scale > 0
    Hs = H / torch.where(nonzero, scale, torch.ones_like(scale))
    unit = torch.where(nonzero, Hs / Hs.norm(dim=1, keepdim=True).clamp_min(1.0), torch.zeros_like(H))
    cos = unit @ unit.T
    off_diag = ~torch.eye(k, dtype=torch.bool, device=H.device)
    return torch.relu(cos[off_diag]).sum() / (k * (k - 1))


def total_loss(ce: torch.Tensor | float, sim: torch.Tensor | float, lam: float) -> torch.Tensor | float:
    if not 0.0 <= lam <= 1.0:
        raise ValueError(f"lambda must be in [0, 1], got {lam}")
    return lam * ce + (1.0 - lam) * sim
