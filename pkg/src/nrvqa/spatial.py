"""Per-frame quality features.

Pipeline for one frame::

    backbone stages -> pooled, unit-normalized, rescaled tokens
                    -> transformer fusion -> mean over tokens (global)
    concat(mean of tokens, global) -> linear -> frame embedding

Two backbones are available. ``stub`` is a fixed, seeded stack of random
linear patch projections, so everything downstream can be trained and
tested without weights. ``swin_v2_t``/``swin_v2_s``/``swin_v2_b`` wrap the
torchvision hierarchical-attention models and require a local weights file.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import BackboneLoadError, ConfigError, NumericError, ShapeError

NORM_EPS = 1e-12
SWIN_VARIANTS = ("swin_v2_t", "swin_v2_s", "swin_v2_b")
_SWIN_WIDTH = {"swin_v2_t": 96, "swin_v2_s": 96, "swin_v2_b": 128}
_IMAGENET_MEAN = (0.485, 0.456, 0.406)
_IMAGENET_STD = (0.229, 0.224, 0.225)


@dataclass
class BackboneSpec:
    kind: str = "stub"  # "stub" or one of SWIN_VARIANTS
    weights_path: str | None = None
    stage_dims: list[tuple[int, int, int]] = field(default_factory=lambda: [(16, 16, 32), (8, 8, 64)])
    input_size: tuple[int, int] = (64, 64)
    seed: int = 0

    def validate(self) -> "BackboneSpec":
        if self.kind == "stub":
            if not self.stage_dims:
                raise ConfigError("stub backbone needs stage_dims")
            H, W = self.input_size
            prev = None
            for h, w, c in self.stage_dims:
                if min(h, w, c) < 1:
                    raise ConfigError(f"stage dims {(h, w, c)} must be positive")
                if H % h or W % w:
                    raise ConfigError(f"stage grid {h}x{w} does not tile input {H}x{W}")
                if prev is not None and (h > prev[0] or w > prev[1]):
                    raise ConfigError("stage grids must shrink or stay equal with depth")
                prev = (h, w)
        elif self.kind in SWIN_VARIANTS:
            if not self.weights_path:
                raise ConfigError(f"{self.kind} backbone needs weights_path")
            H, W = self.input_size
            if H % 32 or W % 32:
                raise ConfigError(f"{self.kind} input size must be a multiple of 32, got {H}x{W}")
        else:
            raise ConfigError(f"unknown backbone kind {self.kind!r}")
        return self

    def resolved_stage_dims(self) -> list[tuple[int, int, int]]:
        if self.kind == "stub":
            return [tuple(int(v) for v in s) for s in self.stage_dims]
        H, W = self.input_size
        c = _SWIN_WIDTH[self.kind]
        return [(H // (4 * 2 ** s), W // (4 * 2 ** s), c * 2 ** s) for s in range(4)]


@dataclass
class LocalFeatureSet:
    stages: list[torch.Tensor]  # each B x c_s x h_s x w_s

    @property
    def shapes(self) -> list[tuple[int, int, int]]:
        return [(s.shape[2], s.shape[3], s.shape[1]) for s in self.stages]


class StubBackbone(nn.Module):
    """Seeded random linear projection of non-overlapping pixel patches, one per stage."""

    def __init__(self, spec: BackboneSpec, bias: bool = False):
        super().__init__()
        spec.validate()
        self.input_size = tuple(spec.input_size)
        self.stage_dims = spec.resolved_stage_dims()
        H, W = self.input_size
        gen = torch.Generator().manual_seed(int(spec.seed))
        self.patches = []
        for s, (h, w, c) in enumerate(self.stage_dims):
            ph, pw = H // h, W // w
            fan_in = 3 * ph * pw
            weight = torch.randn(c, fan_in, generator=gen) / math.sqrt(fan_in)
            b = torch.randn(c, generator=gen) * 0.1 if bias else torch.zeros(c)
            self.register_buffer(f"weight{s}", weight)
            self.register_buffer(f"bias{s}", b)
            self.patches.append((ph, pw))

    def forward(self, x: torch.Tensor) -> list[torch.Tensor]:
        out = []
        for s, ((h, w, c), (ph, pw)) in enumerate(zip(self.stage_dims, self.patches)):
            cols = F.unfold(x, kernel_size=(ph, pw), stride=(ph, pw))  # B x fan_in x (h*w)
            feat = torch.einsum("cf,bfl->bcl", getattr(self, f"weight{s}"), cols)
            feat = feat + getattr(self, f"bias{s}").view(1, c, 1)
            out.append(feat.reshape(x.shape[0], c, h, w))
        return out


def _load_state_dict(path: Path) -> dict:
    if not path.is_file():
        raise BackboneLoadError(f"backbone weights not found: {path}")
    try:
        state = torch.load(path, map_location="cpu", weights_only=True)
    except Exception as exc:  # torch raises several unrelated types for bad files
        raise BackboneLoadError(f"cannot read backbone weights {path}: {exc}") from None
    for key in ("state_dict", "model"):
        if isinstance(state, dict) and isinstance(state.get(key), dict):
            state = state[key]
    if not isinstance(state, dict):
        raise BackboneLoadError(f"{path} does not hold a state dict")
    clean = {}
    for k, v in state.items():
        for prefix in ("module.", "backbone."):
            if k.startswith(prefix):
                k = k[len(prefix):]
        clean[k] = v
    return clean


class SwinBackbone(nn.Module):
    """Frozen torchvision Swin Transformer V2 returning its four stage outputs."""

    def __init__(self, spec: BackboneSpec):
        super().__init__()
        spec.validate()
        import torchvision.models as tvm

        self.input_size = tuple(spec.input_size)
        self.stage_dims = spec.resolved_stage_dims()
        model = getattr(tvm, spec.kind)(weights=None)
        state = _load_state_dict(Path(spec.weights_path))
        feats = {k[len("features."):]: v for k, v in state.items() if k.startswith("features.")}
        try:
            model.features.load_state_dict(feats, strict=True)
        except RuntimeError as exc:
            raise BackboneLoadError(f"weights do not match {spec.kind}: {exc}") from None
        self.features = model.features
        self.features.requires_grad_(False)
        self.register_buffer("mean", torch.tensor(_IMAGENET_MEAN).view(1, 3, 1, 1))
        self.register_buffer("std", torch.tensor(_IMAGENET_STD).view(1, 3, 1, 1))

    def forward(self, x: torch.Tensor) -> list[torch.Tensor]:
        h = (x - self.mean) / self.std
        out = []
        for i, layer in enumerate(self.features):
            h = layer(h)
            if i % 2 == 1:  # stage blocks sit at odd positions after embedding/merging
                out.append(h.permute(0, 3, 1, 2))
        return out


def build_backbone(spec: BackboneSpec) -> nn.Module:
    spec.validate()
    if spec.kind == "stub":
        return StubBackbone(spec)
    return SwinBackbone(spec)


def frames_to_tensor(frames) -> torch.Tensor:
    """Accept FrameTensor(s), H x W x 3 arrays or B x 3 x H x W tensors."""
    if isinstance(frames, torch.Tensor):
        return frames if frames.ndim == 4 else frames.unsqueeze(0)
    if hasattr(frames, "pixels"):
        frames = [frames]
    if isinstance(frames, np.ndarray) and frames.ndim == 3:
        frames = [frames]
    arrs = [np.asarray(getattr(f, "pixels", f), dtype=np.float32) for f in frames]
    return torch.from_numpy(np.stack(arrs)).permute(0, 3, 1, 2).contiguous()


def extract_local_features(frame, backbone: nn.Module) -> LocalFeatureSet:
    x = frames_to_tensor(frame)
    ref = next((t for t in backbone.state_dict().values() if t.is_floating_point()), None)
    if ref is not None:
        x = x.to(ref.dtype)
    if tuple(x.shape[-2:]) != tuple(backbone.input_size):
        raise ShapeError(f"frame is {tuple(x.shape[-2:])}, backbone expects {tuple(backbone.input_size)}")
    return LocalFeatureSet(list(backbone(x)))


def token_grid(target_tokens: int) -> tuple[int, int]:
    """Most square (rows, cols) factorization with rows <= cols."""
    rows = int(math.isqrt(target_tokens))
    while target_tokens % rows:
        rows -= 1
    return rows, target_tokens // rows


class FeaturePooling(nn.Module):
    """Pool each stage to ``target_tokens`` tokens, project, L2-normalize, rescale."""

    def __init__(self, stage_dims: Sequence[tuple[int, int, int]], target_tokens: int, target_dim: int):
        super().__init__()
        if target_tokens < 1 or target_dim < 1:
            raise ConfigError("target_tokens and target_dim must be >= 1")
        self.grid = token_grid(target_tokens)
        for h, w, _ in stage_dims:
            if self.grid[0] > h or self.grid[1] > w:
                raise ConfigError(f"token grid {self.grid} exceeds stage grid {h}x{w}")
        self.target_tokens = target_tokens
        self.target_dim = target_dim
        self.proj = nn.ModuleList(nn.Linear(c, target_dim, bias=False) for _, _, c in stage_dims)
        self.scale = nn.Parameter(torch.ones(len(stage_dims)))

    def forward(self, features: LocalFeatureSet) -> torch.Tensor:
        if len(features.stages) != len(self.proj):
            raise ShapeError(f"expected {len(self.proj)} stages, got {len(features.stages)}")
        tokens = []
        for s, fmap in enumerate(features.stages):
            if not torch.isfinite(fmap).all():
                raise NumericError(f"non-finite values in stage {s} features")
            pooled = F.adaptive_avg_pool2d(fmap, self.grid).flatten(2).transpose(1, 2)
            t = self.proj[s](pooled)
            t = t / t.norm(dim=-1, keepdim=True).clamp_min(NORM_EPS)
            tokens.append(t * self.scale[s])
        return torch.cat(tokens, dim=1)  # B x (S * target_tokens) x target_dim


def pool_local_features(features: LocalFeatureSet, pooling: FeaturePooling) -> torch.Tensor:
    return pooling(features)


def _encoder_layer(dim: int, heads: int, ff_mult: int) -> nn.TransformerEncoderLayer:
    if dim % heads:
        raise ConfigError(f"width {dim} is not divisible by {heads} heads")
    return nn.TransformerEncoderLayer(
        d_model=dim, nhead=heads, dim_feedforward=ff_mult * dim, dropout=0.0,
        activation="gelu", batch_first=True, norm_first=True,
    )


def identity_init_(layer: nn.TransformerEncoderLayer) -> None:
    """Zero both residual branches so the layer maps its input to itself."""
    with torch.no_grad():
        layer.self_attn.out_proj.weight.zero_()
        layer.self_attn.out_proj.bias.zero_()
        layer.linear2.weight.zero_()
        layer.linear2.bias.zero_()


class GlobalFusion(nn.Module):
    """Pre-norm encoder layers over pooled tokens, then mean over tokens. No positional encoding."""

    def __init__(self, dim: int, layers: int = 2, heads: int = 4, ff_mult: int = 2):
        super().__init__()
        self.layers = nn.ModuleList(_encoder_layer(dim, heads, ff_mult) for _ in range(layers))
        self.dim = dim

    def identity_init_(self) -> "GlobalFusion":
        for layer in self.layers:
            identity_init_(layer)
        return self

    def forward(self, tokens: torch.Tensor) -> torch.Tensor:
        if tokens.ndim == 2:
            tokens = tokens.unsqueeze(0)
        if tokens.shape[1] == 0:
            raise ShapeError("cannot fuse an empty token sequence")
        if tokens.shape[-1] != self.dim:
            raise ShapeError(f"token width {tokens.shape[-1]} != fusion width {self.dim}")
        h = tokens
        for layer in self.layers:
            h = layer(h)
        return h.mean(dim=1)


def fuse_global(tokens: torch.Tensor, fusion: GlobalFusion) -> torch.Tensor:
    return fusion(tokens)


def concat_project(local_summary: torch.Tensor, global_feature: torch.Tensor, proj: nn.Linear) -> torch.Tensor:
    cat = torch.cat([local_summary, global_feature], dim=-1)
    if cat.shape[-1] != proj.in_features:
        raise ShapeError(f"concatenated width {cat.shape[-1]} != projection input {proj.in_features}")
    return proj(cat)


class SpatialEncoder(nn.Module):
    """Frames (B x 3 x H x W) -> frame embeddings (B x D)."""

    def __init__(self, backbone: nn.Module, target_tokens: int = 4, token_dim: int = 32,
                 embed_dim: int = 32, fusion_layers: int = 2, fusion_heads: int = 4, ff_mult: int = 2):
        super().__init__()
        self.backbone = backbone
        self.pooling = FeaturePooling(backbone.stage_dims, target_tokens, token_dim)
        self.fusion = GlobalFusion(token_dim, fusion_layers, fusion_heads, ff_mult)
        self.proj = nn.Linear(2 * token_dim, embed_dim)
        self.embed_dim = embed_dim

    def forward(self, frames: torch.Tensor) -> torch.Tensor:
        feats = extract_local_features(frames, self.backbone)
        tokens = self.pooling(feats)
        global_feature = self.fusion(tokens)
        return concat_project(tokens.mean(dim=1), global_feature, self.proj)
