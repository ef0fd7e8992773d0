"""Dual-token multi-pattern attention MIL model.

Shape ladder for a bag of ``n`` instances::

    X (n, d) -> X_b (n_p + n, L) -> H (branches * n_p, L) -> A (branches * n_p,) -> M (L,) -> probs (2,)
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import NamedTuple

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

BRANCH_MODES = ("double", "head_only")
EMBED_VARIANTS = ("joint_projection", "token_append")
AGG_MODES = ("FA", "PA")
PA_LEVELS = ("feature", "probability")
ATTENTION_MODES = ("exact", "nystrom")


@dataclass
class ModelConfig:
    d: int = 64
    L: int = 512
    n_p: int = 3
    D: int = 128
    branch_mode: str = "double"
    embed_variant: str = "joint_projection"
    agg_mode: str = "FA"
    pa_level: str = "feature"
    attention_mode: str = "exact"
    heads: int = 8
    ffn_mult: int = 2
    nystrom_landmarks: int = 64
    pinv_iterations: int = 6

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        for name in ("d", "L", "n_p", "D", "heads", "ffn_mult", "pinv_iterations"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.L % self.heads:
            raise ValueError(f"L={self.L} is not divisible by heads={self.heads}")
        if self.nystrom_landmarks < 1:
            raise ValueError(f"nystrom_landmarks must be >= 1, got {self.nystrom_landmarks}")
        for name, allowed in (
            ("branch_mode", BRANCH_MODES),
            ("embed_variant", EMBED_VARIANTS),
            ("agg_mode", AGG_MODES),
            ("pa_level", PA_LEVELS),
            ("attention_mode", ATTENTION_MODES),
        ):
            if getattr(self, name) not in allowed:
                raise ValueError(f"{name} must be one of {allowed}, got {getattr(self, name)!r}")
        if self.agg_mode == "PA" and self.branch_mode != "double":
            raise ValueError("PA aggregation requires branch_mode='double'")

    @property
    def n_branches(self) -> int:
        return 2 if self.branch_mode == "double" else 1

    def to_dict(self) -> dict:
        return asdict(self)


class Output(NamedTuple):
    probs: torch.Tensor
    attention: torch.Tensor
    M: torch.Tensor
    H: torch.Tensor | None


@dataclass
class Prediction:
    probs: np.ndarray
    attention: np.ndarray
    M: np.ndarray

    @property
    def score(self) -> float:
        """Positive-class probability."""
        return float(self.probs[1])


def exact_attention(q: torch.Tensor, k: torch.Tensor, v: torch.Tensor) -> torch.Tensor:
    """Softmax attention; q is pre-scaled. Shapes (heads, m, dh)."""
    return torch.softmax(q @ k.transpose(-1, -2), dim=-1) @ v


def iterative_pinv(x: torch.Tensor, iters: int) -> torch.Tensor:
    """Newton-Schulz style Moore-Penrose pseudo-inverse over the last two dims."""
    eye = torch.eye(x.shape[-1], dtype=x.dtype, device=x.device)
    ax = x.abs()
    z = x.transpose(-1, -2) / (ax.sum(-1).amax(-1, keepdim=True)[..., None] * ax.sum(-2).amax(-1, keepdim=True)[..., None])
    for _ in range(iters):
        xz = x @ z
        z = 0.25 * z @ (13 * eye - xz @ (15 * eye - xz @ (7 * eye - xz)))
    return z


def nystrom_attention(q: torch.Tensor, k: torch.Tensor, v: torch.Tensor, landmarks: int, iters: int = 6) -> torch.Tensor:
    """Landmark approximation of softmax attention.

    Inputs are (heads, m, dh) with q pre-scaled. The sequence is zero-padded at the
    front to a multiple of the landmark count; padded keys are masked out of the
    full-key kernel and padded query rows are dropped from the result.
    """
    if landmarks < 1:
        raise ValueError("nystrom landmarks must be >= 1")
    m = q.shape[-2]
    l = min(m, landmarks)
    pad = (-m) % l
    if pad:
        q, k, v = (F.pad(t, (0, 0, pad, 0)) for t in (q, k, v))
    seg = (m + pad) // l
    q_l = q.reshape(*q.shape[:-2], l, seg, q.shape[-1]).mean(-2)
    k_l = k.reshape(*k.shape[:-2], l, seg, k.shape[-1]).mean(-2)
    k1 = torch.softmax(q @ k_l.transpose(-1, -2), dim=-1)
    k2 = torch.softmax(q_l @ k_l.transpose(-1, -2), dim=-1)
    logits3 = q_l @ k.transpose(-1, -2)
    if pad:
        mask = torch.zeros(m + pad, dtype=torch.bool, device=q.device)
        mask[:pad] = True
        logits3 = logits3.masked_fill(mask, float("-inf"))
    k3 = torch.softmax(logits3, dim=-1)
    out = (k1 @ iterative_pinv(k2, iters)) @ (k3 @ v)
    return out[..., pad:, :]


class TransLayer(nn.Module):
    """One pre-norm residual block: x + attn(LN(x)), then x + FFN(LN(x))."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        L = cfg.L
        self.heads = cfg.heads
        self.attention_mode = cfg.attention_mode
        self.landmarks = cfg.nystrom_landmarks
        self.pinv_iterations = cfg.pinv_iterations
        self.norm1 = nn.LayerNorm(L)
        self.to_q = nn.Linear(L, L, bias=False)
        self.to_k = nn.Linear(L, L, bias=False)
        self.to_v = nn.Linear(L, L, bias=False)
        self.to_out = nn.Linear(L, L)
        self.norm2 = nn.LayerNorm(L)
        self.ff_in = nn.Linear(L, cfg.ffn_mult * L)
        self.ff_out = nn.Linear(cfg.ffn_mult * L, L)

    def _split_heads(self, t: torch.Tensor) -> torch.Tensor:
        m, L = t.shape
        return t.reshape(m, self.heads, L // self.heads).transpose(0, 1)

    def forward(self, x: torch.Tensor, rows: torch.Tensor | slice | None = None) -> torch.Tensor:
        """Encode ``x`` (m, L). With ``rows``, only those output rows are computed and returned."""
        if x.shape[0] < 1:
            raise ValueError("sequence must have at least one row")
        L = x.shape[-1]
        dh = L // self.heads
        h = self.norm1(x)
        w_q, w_k, w_v = self.to_q.weight, self.to_k.weight, self.to_v.weight
        scale = dh**-0.5
        if self.attention_mode == "exact" and rows is not None:
            # few query rows: fold W_k into the queries and apply W_v after pooling,
            # avoiding the (m, L) x (L, 2L) key/value projection
            q = self._split_heads(h[rows] @ w_q.T) * scale
            q_in = q @ w_k.reshape(self.heads, dh, L)
            weights = torch.softmax(q_in @ h.T, dim=-1)
            att = (weights @ h) @ w_v.reshape(self.heads, dh, L).transpose(-1, -2)
        elif self.attention_mode == "exact":
            q = self._split_heads(h @ w_q.T) * scale
            att = exact_attention(q, self._split_heads(h @ w_k.T), self._split_heads(h @ w_v.T))
        else:
            k, v = self._split_heads(h @ w_k.T), self._split_heads(h @ w_v.T)
            q = self._split_heads(h @ w_q.T) * scale
            att = nystrom_attention(q, k, v, self.landmarks, self.pinv_iterations)
            if rows is not None:
                att = att[:, rows]
        att = att.transpose(0, 1).reshape(-1, L)
        x = (x if rows is None else x[rows]) + self.to_out(att)
        return x + self.ff_out(F.gelu(self.ff_in(self.norm2(x))))


def gated_attention(H: torch.Tensor, w_v: nn.Linear, w_u: nn.Linear, w_a: nn.Linear) -> tuple[torch.Tensor, torch.Tensor]:
    """Gated attention pooling over the rows of ``H`` (k, L); returns weights A (k,) and M (L,)."""
    scores = w_a(torch.tanh(w_v(H)) * torch.sigmoid(w_u(H))).squeeze(-1)
    A = torch.softmax(scores, dim=0)
    return A, A @ H


class MPAA(nn.Module):
    def __init__(self, L: int, D: int):
        super().__init__()
        self.w_v = nn.Linear(L, D, bias=False)
        self.w_u = nn.Linear(L, D, bias=False)
        self.w_a = nn.Linear(D, 1, bias=False)

    def forward(self, H: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        return gated_attention(H, self.w_v, self.w_u, self.w_a)


class StampModel(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        cfg.validate()
        self.cfg = cfg
        tok_dim = cfg.d if cfg.embed_variant == "joint_projection" else cfg.L
        self.tokens_head = nn.Parameter(torch.zeros(cfg.n_p, tok_dim))
        self.proj_head = nn.Linear(cfg.d, cfg.L)
        self.enc_head = TransLayer(cfg)
        if cfg.branch_mode == "double":
            self.tokens_tail = nn.Parameter(torch.zeros(cfg.n_p, tok_dim))
            self.proj_tail = nn.Linear(cfg.d, cfg.L)
            self.enc_tail = TransLayer(cfg)
        if cfg.agg_mode == "FA":
            self.mpaa = MPAA(cfg.L, cfg.D)
        else:
            self.mpaa_head = MPAA(cfg.L, cfg.D)
            self.mpaa_tail = MPAA(cfg.L, cfg.D)
        self.classifier = nn.Linear(cfg.L, 2)

    def _branches(self):
        yield self.tokens_head, self.proj_head, self.enc_head
        if self.cfg.branch_mode == "double":
            yield self.tokens_tail, self.proj_tail, self.enc_tail

    def token_rows(self, n: int) -> slice:
        """Row positions of the pattern tokens in an embedded sequence of ``n`` instances."""
        n_p = self.cfg.n_p
        return slice(0, n_p) if self.cfg.embed_variant == "joint_projection" else slice(n, n + n_p)

    def embed_tokens(self, x: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor | None]:
        if x.ndim != 2 or x.shape[1] != self.cfg.d:
            raise ValueError(f"expected features of shape (n, {self.cfg.d}), got {tuple(x.shape)}")
        out = []
        for tokens, proj, _ in self._branches():
            if self.cfg.embed_variant == "joint_projection":
                out.append(proj(torch.cat([tokens, x], dim=0)))
            else:
                out.append(torch.cat([proj(x), tokens], dim=0))
        return out[0], (out[1] if len(out) > 1 else None)

    def select_pattern_tokens(self, H_h: torch.Tensor, H_t: torch.Tensor | None, n: int) -> torch.Tensor:
        rows = self.token_rows(n)
        parts = [H_h] if H_t is None else [H_h, H_t]
        for p in parts:
            if rows.stop > p.shape[0]:
                raise IndexError(f"token rows {rows} out of range for {p.shape[0]} encoded rows")
        return torch.cat([p[rows] for p in parts], dim=0)

    def encode(self, x: torch.Tensor) -> torch.Tensor:
        """Pattern summary H: (branches * n_p, L)."""
        n = x.shape[0]
        rows = self.token_rows(n)
        X_h, X_t = self.embed_tokens(x)
        encs = [enc for _, _, enc in self._branches()]
        # only token rows survive selection, so encode just those
        H_h = encs[0](X_h, rows)
        H_t = encs[1](X_t, rows) if X_t is not None else None
        return torch.cat([H_h] if H_t is None else [H_h, H_t], dim=0)

    def classify(self, M: torch.Tensor) -> torch.Tensor:
        return torch.softmax(self.classifier(M), dim=-1)

    def pa_aggregate(self, H_h: torch.Tensor, H_t: torch.Tensor):
        """Per-branch MPAA; returns (A over both branches, M_h, M_t)."""
        if self.cfg.branch_mode != "double" or self.cfg.agg_mode != "PA":
            raise ValueError("pa_aggregate requires branch_mode='double' and agg_mode='PA'")
        A_h, M_h = self.mpaa_head(H_h)
        A_t, M_t = self.mpaa_tail(H_t)
        return torch.cat([A_h, A_t]) / 2, M_h, M_t

    def head(self, H: torch.Tensor) -> Output:
        """Aggregate a pattern summary and classify it."""
        if self.cfg.agg_mode == "FA":
            A, M = self.mpaa(H)
            return Output(self.classify(M), A, M, H)
        n_p = self.cfg.n_p
        A, M_h, M_t = self.pa_aggregate(H[:n_p], H[n_p:])
        M = (M_h + M_t) / 2
        if self.cfg.pa_level == "feature":
            probs = self.classify(M)
        else:
            probs = (self.classify(M_h) + self.classify(M_t)) / 2
        return Output(probs, A, M, H)

    def forward(self, x: torch.Tensor) -> Output:
        return self.head(self.encode(x))


def init_parameters(model: nn.Module, seed: int) -> nn.Module:
    """Deterministic init: fan-in scaled uniform weights, zero biases, unit layer norms, N(0,1) tokens."""
    gen = torch.Generator().manual_seed(int(seed))
    with torch.no_grad():
        for name, module in model.named_modules():
            if isinstance(module, nn.Linear):
                bound = 1.0 / math.sqrt(module.in_features)
                module.weight.copy_(torch.rand(module.weight.shape, generator=gen, dtype=torch.float64) * 2 * bound - bound)
                if module.bias is not None:
                    module.bias.zero_()
            elif isinstance(module, nn.LayerNorm):
                module.weight.fill_(1.0)
                module.bias.zero_()
        for name, p in model.named_parameters(recurse=False):
            p.copy_(torch.randn(p.shape, generator=gen, dtype=torch.float64))
    return model


def init_model(cfg: ModelConfig, seed: int) -> StampModel:
    return init_parameters(StampModel(cfg), seed)


def predict(model: nn.Module, features: np.ndarray | torch.Tensor) -> Prediction:
    dtype = next(model.parameters()).dtype
    x = torch.as_tensor(np.asarray(features), dtype=dtype)
    with torch.no_grad():
        out = model(x)
    return Prediction(out.probs.numpy().copy(), out.attention.numpy().copy(), out.M.numpy().copy())
