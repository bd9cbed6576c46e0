"""Training objectives: group contrastive, margin rank, MSE and L1.

Batches follow the ``ContrastiveBatch`` ordering: the first ``p*N`` rows
belong to the lower bitrate tier (group A), the remaining rows to the
higher tier (group B).

The group contrastive term for an anchor ``i`` and a same-group partner
``j`` is::

    -log( exp(sim(z_i, z_j) / tau) / sum_k exp(sim(z_i, z_k) / tau) )

where ``k`` runs over the group opposite to the anchor. The partner is not
added to the denominator, so individual terms (and the summed loss) can
be negative. Setting ``denominator="literal"`` instead uses the fixed
index range ``k > (1 - p) * N`` for every anchor.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import torch

from .errors import ConfigError, NumericError, ShapeError

EPS = 1e-12


@dataclass
class LossConfig:
    tau: float = 0.1
    p: float = 0.5
    margin: float | None = None  # None: 5% of the label scale span
    lambda1: float = 0.1
    lambda2: float = 1.0
    denominator: str = "opposing"

    def validate(self) -> "LossConfig":
        for name in ("tau", "p", "lambda1", "lambda2"):
            v = getattr(self, name)
            if not isinstance(v, (int, float)) or not math.isfinite(v):
                raise ConfigError(f"loss.{name}={v!r} must be a finite number")
        if self.tau <= 0:
            raise ConfigError(f"loss.tau={self.tau} must be > 0")
        if not 0.0 < self.p < 1.0:
            raise ConfigError(f"loss.p={self.p} must lie in (0, 1)")
        if self.lambda1 < 0 or self.lambda2 < 0:
            raise ConfigError("loss.lambda1 and loss.lambda2 must be >= 0")
        if self.margin is not None and (not math.isfinite(self.margin) or self.margin < 0):
            raise ConfigError(f"loss.margin={self.margin} must be a finite number >= 0")
        if self.denominator not in ("opposing", "literal"):
            raise ConfigError(f"loss.denominator must be 'opposing' or 'literal', got {self.denominator!r}")
        return self

    def resolved_margin(self, label_span: float = 100.0) -> float:
        return 0.05 * label_span if self.margin is None else float(self.margin)


@dataclass
class BatchOutputs:
    embeddings: torch.Tensor  # N x D
    predictions: torch.Tensor  # N
    labels: torch.Tensor  # N


@dataclass
class LossBreakdown:
    mse: float
    l1: float
    gc: float
    rank: float
    total: float
    extras: dict = field(default_factory=dict)

    def as_dict(self) -> dict:
        return {"mse": self.mse, "l1": self.l1, "gc": self.gc, "rank": self.rank, "total": self.total}


def _tensor(x) -> torch.Tensor:
    if isinstance(x, torch.Tensor):
        return x
    return torch.as_tensor(x, dtype=torch.float64)


def _check_finite(t: torch.Tensor, what: str) -> None:
    if not torch.isfinite(t).all():
        raise NumericError(f"non-finite values in {what}")


def cosine_similarity(a, b, eps: float = EPS) -> torch.Tensor:
    """dot(a, b) / (|a| |b|) along the last axis, each norm floored at ``eps``."""
    a, b = _tensor(a), _tensor(b)
    _check_finite(a, "similarity input")
    _check_finite(b, "similarity input")
    na = a.norm(dim=-1).clamp_min(eps)
    nb = b.norm(dim=-1).clamp_min(eps)
    return (a * b).sum(-1) / (na * nb)


def similarity_matrix(z: torch.Tensor, eps: float = EPS) -> torch.Tensor:
    _check_finite(z, "embeddings")
    unit = z / z.norm(dim=-1, keepdim=True).clamp_min(eps)
    return unit @ unit.T


def group_slices(N: int, p: float) -> tuple[slice, slice]:
    n_a = p * N
    if abs(n_a - round(n_a)) > 1e-9:
        raise ConfigError(f"p*N = {n_a:g} must be an integer (N={N}, p={p})")
    n_a = int(round(n_a))
    if n_a < 1 or n_a >= N:
        raise ConfigError(f"p={p}, N={N} leaves an empty group")
    return slice(0, n_a), slice(n_a, N)


def _denominator_mask(N: int, cfg: LossConfig) -> torch.Tensor:
    """Boolean N x N mask; row i marks the k that enter anchor i's denominator."""
    ga, gb = group_slices(N, cfg.p)
    mask = torch.zeros(N, N, dtype=torch.bool)
    if cfg.denominator == "literal":
        start = N - ga.stop  # k > (1 - p) N in 1-based indexing
        if start < ga.stop:
            raise ConfigError(
                f"literal group ranges overlap for p={cfg.p}, N={N}; use p <= 0.5"
            )
        mask[:, start:] = True
    else:
        mask[ga, gb] = True
        mask[gb, ga] = True
    return mask


def _pair_mask(N: int, cfg: LossConfig) -> torch.Tensor:
    """Ordered within-group pairs (i, j), i != j, summed by the group loss."""
    ga, gb = group_slices(N, cfg.p)
    if cfg.denominator == "literal":
        start = N - ga.stop
        gb = slice(start, N)
    mask = torch.zeros(N, N, dtype=torch.bool)
    mask[ga, ga] = True
    mask[gb, gb] = True
    mask.fill_diagonal_(False)
    return mask


def gc_pair_term(i: int, j: int, embeddings, cfg: LossConfig) -> torch.Tensor:
    """Group contrastive term for anchor ``i`` and same-group partner ``j``."""
    cfg.validate()
    z = _tensor(embeddings)
    N = z.shape[0]
    if i == j:
        raise ValueError("anchor and partner must differ")
    if not _pair_mask(N, cfg)[i, j]:
        raise ValueError(f"indices {i} and {j} are not in the same group")
    sims = cosine_similarity(z[i].unsqueeze(0), z) / cfg.tau
    den = sims[_denominator_mask(N, cfg)[i]]
    return torch.logsumexp(den, dim=0) - sims[j]


def gc_loss(embeddings, cfg: LossConfig, N: int | None = None) -> torch.Tensor:
    """Sum of ``gc_pair_term`` over every ordered within-group pair of both groups."""
    cfg.validate()
    z = _tensor(embeddings)
    if z.ndim != 2:
        raise ShapeError(f"embeddings must be N x D, got shape {tuple(z.shape)}")
    if N is not None and z.shape[0] != N:
        raise ShapeError(f"expected {N} embeddings, got {z.shape[0]}")
    N = z.shape[0]
    logits = similarity_matrix(z) / cfg.tau
    den_mask = _denominator_mask(N, cfg)
    lse = torch.logsumexp(logits.masked_fill(~den_mask, -math.inf), dim=1)
    pairs = _pair_mask(N, cfg)
    terms = lse.unsqueeze(1) - logits
    return terms[pairs].sum()


def all_pairs(n: int) -> list[tuple[int, int]]:
    return [(i, j) for i in range(n) for j in range(i + 1, n)]


def rank_loss(predictions, labels, margin: float,
              pairs: Sequence[tuple[int, int]] | None = None) -> torch.Tensor:
    """Sum over pairs of ``max(0, margin - (pred_i - pred_j) * (label_i - label_j))``.

    Defaults to every unordered pair in the batch.
    """
    pred, lab = _tensor(predictions), _tensor(labels)
    if pred.shape != lab.shape or pred.ndim != 1:
        raise ShapeError(f"predictions {tuple(pred.shape)} and labels {tuple(lab.shape)} must be equal-length vectors")
    n = pred.shape[0]
    if pairs is None:
        pairs = all_pairs(n)
    if len(pairs) == 0:
        return pred.sum() * 0.0
    idx = torch.as_tensor(pairs, dtype=torch.long)
    if idx.min() < 0 or idx.max() >= n:
        raise IndexError(f"pair index out of range for {n} predictions")
    dp = pred[idx[:, 0]] - pred[idx[:, 1]]
    dl = lab[idx[:, 0]] - lab[idx[:, 1]]
    return torch.clamp(margin - dp * dl, min=0.0).sum()


def _check_regression(pred, lab):
    pred, lab = _tensor(pred), _tensor(lab)
    if pred.shape != lab.shape or pred.numel() == 0:
        raise ShapeError("predictions and labels must be non-empty and equally shaped")
    return pred, lab


def mse_loss(predictions, labels) -> torch.Tensor:
    pred, lab = _check_regression(predictions, labels)
    return ((pred - lab) ** 2).mean()


def l1_loss(predictions, labels) -> torch.Tensor:
    pred, lab = _check_regression(predictions, labels)
    return (pred - lab).abs().mean()


def total_loss(outputs: BatchOutputs, cfg: LossConfig,
               label_span: float = 100.0) -> tuple[torch.Tensor, LossBreakdown]:
    """MSE + L1 + lambda1 * group contrastive + lambda2 * rank.

    A term whose weight is zero is not evaluated and is reported as 0, so
    the ``lambda1 = lambda2 = 0`` objective is exactly MSE + L1.
    """
    cfg.validate()
    pred, lab = _tensor(outputs.predictions), _tensor(outputs.labels)
    mse = mse_loss(pred, lab)
    l1 = l1_loss(pred, lab)
    total = mse + l1
    zero = pred.new_zeros(())
    gc = rank = zero
    if cfg.lambda1 > 0:
        gc = gc_loss(outputs.embeddings, cfg)
        total = total + cfg.lambda1 * gc
    if cfg.lambda2 > 0:
        rank = rank_loss(pred, lab, cfg.resolved_margin(label_span))
        total = total + cfg.lambda2 * rank
    breakdown = LossBreakdown(*(float(t.detach()) for t in (mse, l1, gc, rank, total)))
    if not math.isfinite(breakdown.total):
        b = breakdown
        raise NumericError(f"non-finite loss (mse={b.mse}, l1={b.l1}, gc={b.gc}, rank={b.rank})")
    return total, breakdown
