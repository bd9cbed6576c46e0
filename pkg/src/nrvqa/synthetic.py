"""Small synthetic multi-bitrate corpora for smoke tests and demos.

Each clip is a drifting random texture degraded by block averaging and
additive noise whose strength falls with the clip's pseudo-label, so the
labels are recoverable from pixels while content varies freely.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import cv2
import numpy as np

from .data import LabelKind, VideoRecord, tier_for_bitrate, write_manifest


@dataclass
class SyntheticCorpus:
    manifest: Path
    scores: Path
    records: list[VideoRecord]
    labels: dict[str, float]


def _texture(rng: np.random.Generator, size: tuple[int, int], frames: int) -> np.ndarray:
    H, W = size
    yy, xx = np.mgrid[0:H, 0:W].astype(np.float64)
    out = np.zeros((frames, H, W, 3))
    waves = [(rng.uniform(0.05, 0.5, 2), rng.uniform(0, 2 * np.pi), rng.uniform(0.2, 1.0, 3)) for _ in range(4)]
    drift = rng.uniform(-1.5, 1.5, 2)
    for t in range(frames):
        img = np.zeros((H, W, 3))
        for (fy, fx), phase, colour in waves:
            img += np.sin(fy * (yy + drift[0] * t) + fx * (xx + drift[1] * t) + phase)[..., None] * colour
        out[t] = img
    out -= out.min()
    out /= max(out.max(), 1e-9)
    return out


def _degrade(clip: np.ndarray, quality: float, rng: np.random.Generator, block: int = 4) -> np.ndarray:
    d = (100.0 - quality) / 100.0
    T, H, W, _ = clip.shape
    blocky = clip.reshape(T, H // block, block, W // block, block, 3).mean(axis=(2, 4))
    blocky = np.repeat(np.repeat(blocky, block, axis=1), block, axis=2)
    mixed = (1 - d) * clip + d * blocky
    mixed += rng.normal(0.0, 0.3 * d, size=mixed.shape)
    return np.clip(mixed, 0.0, 1.0)


def _write_video(path: Path, clip: np.ndarray, fps: float = 10.0) -> None:
    frames = (clip * 255.0 + 0.5).astype(np.uint8)
    if path.suffix == ".npy":
        np.save(path, frames)
        return
    H, W = frames.shape[1:3]
    for fourcc in ("FFV1", "MJPG"):
        writer = cv2.VideoWriter(str(path), cv2.VideoWriter_fourcc(*fourcc), fps, (W, H))
        if writer.isOpened():
            break
    else:
        raise RuntimeError(f"no usable video writer for {path}")
    for f in frames:
        writer.write(cv2.cvtColor(f, cv2.COLOR_RGB2BGR))
    writer.release()


def make_synthetic_corpus(root, n_per_tier: int = 6, bitrates_kbps: Sequence[int] = (600, 4000),
                          tier_boundaries: Sequence[float] = (1000,),
                          label_ranges: Sequence[tuple[float, float]] = ((20.0, 50.0), (60.0, 95.0)),
                          frames: int = 12, size: tuple[int, int] = (32, 32), seed: int = 0,
                          fmt: str = "avi", with_labels: bool = False) -> SyntheticCorpus:
    """Write clips, a manifest (labels blank unless ``with_labels``) and a VMAF-style scores file.

    Tier ``k`` uses bitrate ``bitrates_kbps[k]`` and evenly spaced labels
    across ``label_ranges[k]``.
    """
    root = Path(root)
    (root / "videos").mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    records, labels = [], {}
    for k, (bitrate, (lo, hi)) in enumerate(zip(bitrates_kbps, label_ranges)):
        tier = tier_for_bitrate(bitrate, tier_boundaries)
        for i, q in enumerate(np.linspace(lo, hi, n_per_tier)):
            vid = f"t{k}_v{i:02d}"
            path = root / "videos" / f"{vid}.{fmt}"
            clip = _degrade(_texture(rng, size, frames), float(q), rng)
            _write_video(path, clip)
            labels[vid] = round(float(q), 3)
            records.append(VideoRecord(vid, path, int(bitrate), tier,
                                       labels[vid] if with_labels else None, LabelKind.VMAF_PSEUDO))
    manifest = write_manifest(root / "manifest.csv", records, tier_boundaries, LabelKind.VMAF_PSEUDO)
    scores = root / "vmaf_scores.json"
    scores.write_text(json.dumps(labels, indent=2), encoding="utf-8")
    return SyntheticCorpus(manifest, scores, records, labels)
