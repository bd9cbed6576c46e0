"""Spatial encoder + temporal fusion assembled into one video quality model."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
import torch.nn as nn

from .config import ModelConfig
from .errors import ShapeError
from .spatial import SpatialEncoder, build_backbone
from .temporal import TemporalFusion


@dataclass
class ModelOutput:
    scores: torch.Tensor  # B
    video_z: torch.Tensor  # B x D, pre-head pooled temporal feature
    frame_z: torch.Tensor  # B x T x D


def clips_to_tensor(clips, dtype=torch.float32) -> torch.Tensor:
    """``B x T x H x W x 3`` arrays (as produced by ClipLoader) -> ``B x T x 3 x H x W``."""
    if isinstance(clips, torch.Tensor):
        t = clips
    else:
        t = torch.from_numpy(np.ascontiguousarray(clips))
    if t.ndim == 4:
        t = t.unsqueeze(0)
    if t.ndim != 5:
        raise ShapeError(f"clips must be B x T x H x W x 3 or B x T x 3 x H x W, got {tuple(t.shape)}")
    if t.shape[-1] == 3 and t.shape[2] != 3:
        t = t.permute(0, 1, 4, 2, 3)
    return t.to(dtype).contiguous()


class VQAModel(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        cfg.validate()
        self.config = cfg
        backbone = build_backbone(cfg.backbone_spec())
        self.spatial = SpatialEncoder(
            backbone,
            target_tokens=cfg.target_tokens,
            token_dim=cfg.token_dim,
            embed_dim=cfg.embed_dim,
            fusion_layers=cfg.fusion_layers,
            fusion_heads=cfg.fusion_heads,
            ff_mult=cfg.ff_mult,
        )
        self.temporal = TemporalFusion(
            cfg.embed_dim, cfg.temporal_layers, cfg.temporal_heads, cfg.max_frames, cfg.ff_mult
        )

    @property
    def dtype(self) -> torch.dtype:
        return self.temporal.pos.dtype

    def frame_embeddings(self, clips) -> torch.Tensor:
        x = clips_to_tensor(clips, self.dtype)
        B, T = x.shape[:2]
        z = self.spatial(x.reshape(B * T, *x.shape[2:]))
        return z.reshape(B, T, -1)

    def forward(self, clips) -> ModelOutput:
        frame_z = self.frame_embeddings(clips)
        video_z = self.temporal.video_embedding(frame_z)
        scores = self.temporal.head(video_z).squeeze(-1)
        return ModelOutput(scores, video_z, frame_z)

    def contrastive_embeddings(self, out: ModelOutput) -> torch.Tensor:
        """Vectors fed to the group loss; frame level keeps batch order, so group A stays first."""
        if self.config.contrastive_level == "frame":
            return out.frame_z.reshape(-1, out.frame_z.shape[-1])
        return out.video_z

    def trainable_state_dict(self) -> dict[str, torch.Tensor]:
        # backbone weights are rebuilt from the config (stub seed or weights file)
        return {k: v for k, v in self.state_dict().items() if not k.startswith("spatial.backbone.")}
