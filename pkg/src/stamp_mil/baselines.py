"""Reference MIL baselines: instance max pooling, mean pooling and gated-attention ABMIL.

All share one instance projection (Linear + ReLU) and a two-class linear head, and
return the same ``Output`` tuple as the STAMP model (with ``H=None``).
"""

from __future__ import annotations

import torch
from torch import nn

from stamp_mil.model import Output, gated_attention, init_parameters

BASELINES = ("maxpool", "meanpool", "abmil")


class BaselineMIL(nn.Module):
    def __init__(self, kind: str, d: int, L: int = 512, D: int = 128):
        super().__init__()
        if kind not in BASELINES:
            raise ValueError(f"unknown baseline {kind!r}; expected one of {BASELINES}")
        self.kind = kind
        self.d = d
        self.project = nn.Sequential(nn.Linear(d, L), nn.ReLU())
        if kind == "abmil":
            self.w_v = nn.Linear(L, D, bias=False)
            self.w_u = nn.Linear(L, D, bias=False)
            self.w_a = nn.Linear(D, 1, bias=False)
        self.classifier = nn.Linear(L, 2)

    def forward(self, x: torch.Tensor) -> Output:
        if x.ndim != 2 or x.shape[0] < 1:
            raise ValueError("bag must contain at least one instance")
        if x.shape[1] != self.d:
            raise ValueError(f"expected features of shape (n, {self.d}), got {tuple(x.shape)}")
        h = self.project(x)
        n = h.shape[0]
        if self.kind == "maxpool":
            logits = self.classifier(h)
            bag_logits, idx = logits.max(dim=0)
            # each class's argmax instance gets half the attention mass
            attention = torch.zeros(n, dtype=h.dtype).index_add_(0, idx, torch.full((2,), 0.5, dtype=h.dtype))
            return Output(torch.softmax(bag_logits, dim=-1), attention, h[idx].mean(0), None)
        if self.kind == "meanpool":
            M = h.mean(0)
            attention = torch.full((n,), 1.0 / n, dtype=h.dtype)
        else:
            attention, M = gated_attention(h, self.w_v, self.w_u, self.w_a)
        return Output(torch.softmax(self.classifier(M), dim=-1), attention, M, None)


def init_baseline(kind: str, d: int, L: int, D: int, seed: int) -> BaselineMIL:
    return init_parameters(BaselineMIL(kind, d, L, D), seed)
