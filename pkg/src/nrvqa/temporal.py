"""Temporal fusion of frame embeddings into a video score."""

from __future__ import annotations

import torch
import torch.nn as nn

from .errors import ShapeError
from .spatial import _encoder_layer, identity_init_


class TemporalFusion(nn.Module):
    """Learned frame-index positions + ``layers`` pre-norm encoder layers + mean over time.

    ``video_embedding`` returns the pooled feature before the scalar head;
    ``forward`` maps it to an unbounded quality score.
    """

    def __init__(self, dim: int, layers: int = 1, heads: int = 4, max_frames: int = 64, ff_mult: int = 2):
        super().__init__()
        self.dim = dim
        self.max_frames = max_frames
        self.pos = nn.Parameter(torch.zeros(max_frames, dim))
        nn.init.normal_(self.pos, std=0.02)
        self.layers = nn.ModuleList(_encoder_layer(dim, heads, ff_mult) for _ in range(layers))
        self.head = nn.Linear(dim, 1)

    def identity_init_(self) -> "TemporalFusion":
        for layer in self.layers:
            identity_init_(layer)
        return self

    def zero_positions_(self) -> "TemporalFusion":
        with torch.no_grad():
            self.pos.zero_()
        return self

    def _check(self, seq: torch.Tensor) -> torch.Tensor:
        if isinstance(seq, (list, tuple)):
            if not seq:
                raise ShapeError("empty frame sequence")
            dims = {int(f.shape[-1]) for f in seq}
            if len(dims) != 1:
                raise ShapeError(f"frame embeddings have mixed widths {sorted(dims)}")
            seq = torch.stack(list(seq))
        if seq.ndim == 2:
            seq = seq.unsqueeze(0)
        if seq.ndim != 3:
            raise ShapeError(f"expected B x T x D embeddings, got shape {tuple(seq.shape)}")
        T, D = seq.shape[1], seq.shape[2]
        if T == 0:
            raise ShapeError("empty frame sequence")
        if D != self.dim:
            raise ShapeError(f"frame embedding width {D} != temporal width {self.dim}")
        if T > self.max_frames:
            raise ShapeError(f"{T} frames exceed max_frames={self.max_frames}")
        return seq

    def video_embedding(self, seq) -> torch.Tensor:
        h = self._check(seq)
        h = h + self.pos[: h.shape[1]]
        for layer in self.layers:
            h = layer(h)
        return h.mean(dim=1)

    def forward(self, seq) -> torch.Tensor:
        return self.head(self.video_embedding(seq)).squeeze(-1)


def temporal_fuse(sequence, fusion: TemporalFusion) -> torch.Tensor:
    return fusion(sequence)


def video_embedding(sequence, fusion: TemporalFusion) -> torch.Tensor:
    return fusion.video_embedding(sequence)
