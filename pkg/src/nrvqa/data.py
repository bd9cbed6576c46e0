"""Dataset manifests, VMAF pseudo-labels, frame sampling and contrastive batches.

A manifest is a small delimited text file (or the equivalent JSON object)
with a header that fixes the label scale and the bitrate tier boundaries::

    # label_scale: vmaf_pseudo
    # tier_boundaries: 1000, 3000
    video_id,source_path,bitrate_kbps,bitrate_tier,label
    clip01_lo,videos/clip01_lo.avi,600,0,
    clip01_hi,videos/clip01_hi.avi,4500,2,

``bitrate_tier`` may be left empty and is then derived from the boundaries;
``label`` may be left empty until VMAF scores are ingested.
"""

from __future__ import annotations

import bisect
import csv
import json
import logging
import math
from collections import OrderedDict
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Iterable, Sequence

import cv2
import numpy as np

from .errors import (
    CompositionError,
    DecodeError,
    LabelValidationError,
    ManifestParseError,
    MissingInputError,
    ScoreParseError,
)

logger = logging.getLogger(__name__)

MANIFEST_COLUMNS = ("video_id", "source_path", "bitrate_kbps", "bitrate_tier", "label")


class LabelKind(str, Enum):
    VMAF_PSEUDO = "vmaf_pseudo"
    MOS = "mos"

    @property
    def bounds(self) -> tuple[float, float]:
        return (0.0, 100.0) if self is LabelKind.VMAF_PSEUDO else (1.0, 5.0)

    @property
    def span(self) -> float:
        lo, hi = self.bounds
        return hi - lo


def check_label(value: float, kind: LabelKind, where: str = "") -> float:
    value = float(value)
    lo, hi = kind.bounds
    if not math.isfinite(value) or not lo <= value <= hi:
        raise LabelValidationError(
            f"{where}label {value!r} outside the {kind.value} scale [{lo:g}, {hi:g}]"
        )
    return value


def tier_for_bitrate(bitrate_kbps: int, boundaries: Sequence[float]) -> int:
    """Tier index = number of boundaries that are <= the bitrate."""
    return bisect.bisect_right(sorted(boundaries), bitrate_kbps)


@dataclass(frozen=True)
class VideoRecord:
    video_id: str
    source_path: Path
    bitrate_kbps: int
    bitrate_tier: int
    label: float | None = None
    label_kind: LabelKind = LabelKind.VMAF_PSEUDO

    def __post_init__(self):
        if self.bitrate_kbps <= 0:
            raise LabelValidationError(f"{self.video_id}: bitrate_kbps must be positive")
        if self.bitrate_tier < 0:
            raise LabelValidationError(f"{self.video_id}: bitrate_tier must be >= 0")
        if self.label is not None:
            check_label(self.label, self.label_kind, where=f"{self.video_id}: ")


@dataclass
class FrameTensor:
    pixels: np.ndarray  # H x W x 3, float32 in [0, 1], RGB
    frame_index: int
    timestamp_s: float
    is_padding: bool = False


@dataclass
class ContrastiveBatch:
    """N records ordered so that the first ``p*N`` share the lower tier."""

    records: list[VideoRecord]
    p: float
    group_a_tier: int
    group_b_tier: int

    @property
    def N(self) -> int:
        return len(self.records)

    @property
    def group_a_size(self) -> int:
        return int(round(self.p * self.N))

    @property
    def video_ids(self) -> list[str]:
        return [r.video_id for r in self.records]

    def validate(self, batch_size: int | None = None) -> None:
        n_a = self.group_a_size
        if batch_size is not None and self.N != batch_size:
            raise CompositionError(f"batch has {self.N} samples, expected {batch_size}")
        if self.group_a_tier == self.group_b_tier:
            raise CompositionError("both groups drawn from the same tier")
        if any(r.bitrate_tier != self.group_a_tier for r in self.records[:n_a]):
            raise CompositionError("group A holds a record from another tier")
        if any(r.bitrate_tier != self.group_b_tier for r in self.records[n_a:]):
            raise CompositionError("group B holds a record from another tier")


# ---------------------------------------------------------------------------
# manifests


def _parse_header(lines: list[str]) -> dict[str, str]:
    header = {}
    for line in lines:
        body = line.lstrip("#").strip()
        if ":" in body:
            key, val = body.split(":", 1)
            header[key.strip().lower()] = val.strip()
    return header


def _parse_kind(raw) -> LabelKind:
    text = str(raw).strip().lower()
    if text == "vmaf":
        text = LabelKind.VMAF_PSEUDO.value
    try:
        return LabelKind(text)
    except ValueError:
        raise ManifestParseError(f"unknown label scale {raw!r}") from None


def _parse_boundaries(raw) -> list[float]:
    if raw is None or raw == "":
        return []
    items = raw if isinstance(raw, list) else str(raw).replace(";", ",").split(",")
    try:
        out = [float(x) for x in items if str(x).strip() != ""]
    except ValueError:
        raise ManifestParseError(f"tier boundaries {raw!r} are not numeric") from None
    if out != sorted(out) or len(set(out)) != len(out):
        raise ManifestParseError(f"tier boundaries {out} must be strictly increasing")
    return out


def _record_from_row(row: dict, where: str, base: Path, kind: LabelKind, boundaries: list[float]) -> VideoRecord:
    missing = [c for c in ("video_id", "source_path", "bitrate_kbps") if not str(row.get(c) or "").strip()]
    if missing:
        raise ManifestParseError(f"{where}: missing value for {', '.join(missing)}")
    vid = str(row["video_id"]).strip()
    try:
        bitrate = int(float(row["bitrate_kbps"]))
    except (TypeError, ValueError):
        raise ManifestParseError(f"{where}: bitrate_kbps {row['bitrate_kbps']!r} is not a number") from None
    derived = tier_for_bitrate(bitrate, boundaries)
    raw_tier = row.get("bitrate_tier")
    if raw_tier is None or str(raw_tier).strip() == "":
        tier = derived
    else:
        try:
            tier = int(raw_tier)
        except (TypeError, ValueError):
            raise ManifestParseError(f"{where}: bitrate_tier {raw_tier!r} is not an integer") from None
        if boundaries and tier != derived:
            raise LabelValidationError(
                f"{where}: bitrate_tier {tier} disagrees with boundaries {boundaries} (expected {derived})"
            )
    raw_label = row.get("label")
    label = None
    if raw_label is not None and str(raw_label).strip() != "":
        try:
            label = float(raw_label)
        except (TypeError, ValueError):
            raise ManifestParseError(f"{where}: label {raw_label!r} is not a number") from None
        check_label(label, kind, where=f"{where}: ")
    path = Path(str(row["source_path"]).strip())
    if not path.is_absolute():
        path = base / path
    return VideoRecord(vid, path, bitrate, tier, label, kind)


def load_manifest(path) -> list[VideoRecord]:
    """Read a ``.csv``/``.tsv`` or ``.json`` manifest into records.

    Relative ``source_path`` entries are resolved against the manifest's
    directory.
    """
    path = Path(path)
    if not path.is_file():
        raise MissingInputError(f"manifest not found: {path}")
    base = path.parent
    text = path.read_text(encoding="utf-8")

    if path.suffix.lower() == ".json":
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ManifestParseError(f"{path}: invalid JSON ({exc})") from None
        if not isinstance(doc, dict) or not isinstance(doc.get("videos", []), list):
            raise ManifestParseError(f"{path}: expected an object with a 'videos' list")
        kind = _parse_kind(doc.get("label_scale", LabelKind.VMAF_PSEUDO.value))
        boundaries = _parse_boundaries(doc.get("tier_boundaries"))
        rows = [(f"{path.name} entry {i}", r) for i, r in enumerate(doc.get("videos", []))]
        for where, r in rows:
            if not isinstance(r, dict):
                raise ManifestParseError(f"{where}: expected an object")
    else:
        lines = text.splitlines()
        comments = [ln for ln in lines if ln.lstrip().startswith("#")]
        body = [ln for ln in lines if ln.strip() and not ln.lstrip().startswith("#")]
        header = _parse_header(comments)
        kind = _parse_kind(header.get("label_scale", LabelKind.VMAF_PSEUDO.value))
        boundaries = _parse_boundaries(header.get("tier_boundaries"))
        if not body:
            raise ManifestParseError(f"{path}: no column header line")
        delimiter = "\t" if path.suffix.lower() == ".tsv" else ","
        reader = csv.DictReader(body, delimiter=delimiter)
        absent = [c for c in MANIFEST_COLUMNS if c not in (reader.fieldnames or [])]
        if absent:
            raise ManifestParseError(f"{path}: missing columns {absent}")
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if None in row or any(v is None for v in row.values()):
                raise ManifestParseError(f"{path.name} row {lineno - 1}: wrong number of fields")
            rows.append((f"{path.name} row {lineno - 1}", row))

    records, seen = [], set()
    for where, row in rows:
        rec = _record_from_row(row, where, base, kind, boundaries)
        if rec.video_id in seen:
            raise ManifestParseError(f"{where}: duplicate video_id {rec.video_id!r}")
        seen.add(rec.video_id)
        records.append(rec)
    return records


def write_manifest(path, records: Sequence[VideoRecord], tier_boundaries: Sequence[float] = (),
                   label_scale: LabelKind | str = LabelKind.VMAF_PSEUDO) -> Path:
    """Write records as a CSV manifest; source paths are stored relative when possible."""
    path = Path(path)
    kind = _parse_kind(label_scale.value if isinstance(label_scale, LabelKind) else label_scale)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8", newline="") as fh:
        fh.write(f"# label_scale: {kind.value}\n")
        fh.write(f"# tier_boundaries: {', '.join(f'{b:g}' for b in tier_boundaries)}\n")
        writer = csv.writer(fh)
        writer.writerow(MANIFEST_COLUMNS)
        for r in records:
            src = Path(r.source_path)
            try:
                src = src.relative_to(path.parent)
            except ValueError:
                pass
            writer.writerow([r.video_id, src.as_posix(), r.bitrate_kbps, r.bitrate_tier,
                             "" if r.label is None else repr(float(r.label))])
    return path


# ---------------------------------------------------------------------------
# VMAF pseudo-labels


@dataclass
class IngestResult:
    records: list[VideoRecord]
    unlabeled: list[str] = field(default_factory=list)
    unknown_ids: list[str] = field(default_factory=list)


def _score_value(video_id: str, raw) -> float:
    # libvmaf JSON logs nest the pooled score; plain maps give a number
    if isinstance(raw, dict):
        try:
            raw = raw["pooled_metrics"]["vmaf"]["mean"]
        except (KeyError, TypeError):
            raise ScoreParseError(f"{video_id}: no pooled_metrics.vmaf.mean in score object") from None
    if isinstance(raw, bool) or not isinstance(raw, (int, float, str)):
        raise ScoreParseError(f"{video_id}: score {raw!r} is not numeric")
    try:
        value = float(raw)
    except ValueError:
        raise ScoreParseError(f"{video_id}: score {raw!r} is not numeric") from None
    if not math.isfinite(value):
        raise ScoreParseError(f"{video_id}: score {raw!r} is not finite")
    return value


def read_vmaf_scores(scores_path) -> dict[str, float]:
    scores_path = Path(scores_path)
    if not scores_path.is_file():
        raise MissingInputError(f"VMAF scores file not found: {scores_path}")
    try:
        doc = json.loads(scores_path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ScoreParseError(f"{scores_path}: invalid JSON ({exc})") from None
    if isinstance(doc, dict) and isinstance(doc.get("scores"), dict):
        doc = doc["scores"]
    if not isinstance(doc, dict):
        raise ScoreParseError(f"{scores_path}: expected an object mapping video_id to score")
    return {str(k): _score_value(str(k), v) for k, v in doc.items()}


def ingest_vmaf_scores(scores_path, records: Sequence[VideoRecord]) -> IngestResult:
    """Attach VMAF scores as pseudo-labels.

    Records without a score keep their previous label and are listed in
    ``unlabeled``; ids in the scores file that match no record are listed in
    ``unknown_ids``. The record count never changes.
    """
    scores = read_vmaf_scores(scores_path)
    known = {r.video_id for r in records}
    out, unlabeled = [], []
    for r in records:
        if r.video_id in scores:
            value = check_label(scores[r.video_id], LabelKind.VMAF_PSEUDO, where=f"{r.video_id}: ")
            out.append(replace(r, label=value, label_kind=LabelKind.VMAF_PSEUDO))
        else:
            unlabeled.append(r.video_id)
            out.append(r)
    unknown = [k for k in scores if k not in known]
    if unlabeled:
        logger.warning("%d record(s) have no VMAF score: %s", len(unlabeled), ", ".join(unlabeled))
    if unknown:
        logger.warning("%d score(s) match no record: %s", len(unknown), ", ".join(unknown))
    return IngestResult(out, unlabeled, unknown)


# ---------------------------------------------------------------------------
# frames


def uniform_indices(total: int, count: int) -> list[int]:
    """Inclusive uniform sampling, k -> round(k*(total-1)/(count-1)).

    Rounds half up. When the video is shorter than ``count`` all frames are
    used and the last one is repeated.
    """
    if total < 1 or count < 1:
        raise ValueError("total and count must be >= 1")
    if total < count:
        return list(range(total)) + [total - 1] * (count - total)
    if count == 1:
        return [(total - 1) // 2]
    return [int(math.floor(k * (total - 1) / (count - 1) + 0.5)) for k in range(count)]


def _to_float_rgb(frame: np.ndarray, size: tuple[int, int] | None, bgr: bool) -> np.ndarray:
    if frame.ndim == 2:
        frame = np.repeat(frame[..., None], 3, axis=2)
    if frame.shape[2] != 3:
        raise DecodeError(f"frame has {frame.shape[2]} channels, expected 3")
    if bgr:
        frame = cv2.cvtColor(frame, cv2.COLOR_BGR2RGB)
    if size is not None and frame.shape[:2] != tuple(size):
        h, w = size
        frame = cv2.resize(frame, (w, h), interpolation=cv2.INTER_AREA)
    if frame.dtype == np.uint8:
        out = frame.astype(np.float32) / 255.0
    else:
        out = np.clip(frame.astype(np.float32), 0.0, 1.0)
    if not np.isfinite(out).all():
        raise DecodeError("decoded frame has non-finite pixels")
    return out


def _read_npy(path: Path, wanted: list[int], size):
    try:
        stack = np.load(path, mmap_mode="r")
    except (OSError, ValueError) as exc:
        raise DecodeError(f"cannot read frame stack {path}: {exc}") from None
    if stack.ndim != 4:
        raise DecodeError(f"{path}: frame stack must be T x H x W x 3, got shape {stack.shape}")
    return len(stack), 0.0, {i: _to_float_rgb(np.asarray(stack[i]), size, bgr=False) for i in set(wanted)}


def count_frames(path) -> int:
    path = Path(path)
    if path.suffix.lower() == ".npy":
        return int(np.load(path, mmap_mode="r").shape[0])
    cap = cv2.VideoCapture(str(path))
    if not cap.isOpened():
        raise DecodeError(f"cannot open video {path}")
    n = 0
    while cap.grab():
        n += 1
    cap.release()
    return n


def sample_frames(record: VideoRecord, frame_count: int = 8,
                  size: tuple[int, int] | None = None) -> list[FrameTensor]:
    """Decode ``frame_count`` uniformly spaced frames of ``record``.

    Frames are RGB float32 in [0, 1], resized to ``size`` = (H, W) when
    given. Repeated tail frames of a too-short video carry ``is_padding``.
    """
    if frame_count < 1:
        raise ValueError("frame_count must be >= 1")
    path = Path(record.source_path)
    if not path.exists():
        raise MissingInputError(f"{record.video_id}: video not found: {path}")

    if path.suffix.lower() == ".npy":
        total = count_frames(path)
        if total < 1:
            raise DecodeError(f"{record.video_id}: empty frame stack")
        indices = uniform_indices(total, frame_count)
        _, fps, decoded = _read_npy(path, indices, size)
    else:
        total = count_frames(path)
        if total < 1:
            raise DecodeError(f"{record.video_id}: no decodable frames in {path}")
        indices = uniform_indices(total, frame_count)
        wanted = set(indices)
        cap = cv2.VideoCapture(str(path))
        fps = cap.get(cv2.CAP_PROP_FPS) or 0.0
        decoded = {}
        for i in range(max(wanted) + 1):
            if not cap.grab():
                cap.release()
                raise DecodeError(f"{record.video_id}: stream ended at frame {i}")
            if i in wanted:
                ok, frame = cap.retrieve()
                if not ok or frame is None:
                    cap.release()
                    raise DecodeError(f"{record.video_id}: cannot decode frame {i}")
                decoded[i] = _to_float_rgb(frame, size, bgr=True)
        cap.release()

    frames = []
    for k, idx in enumerate(indices):
        pad = total < frame_count and k >= total
        ts = idx / fps if fps > 0 else 0.0
        frames.append(FrameTensor(decoded[idx].copy(), idx, ts, pad))
    if total < frame_count:
        logger.info("%s: %d frames < %d requested, padded with the last frame",
                    record.video_id, total, frame_count)
    return frames


class ClipLoader:
    """Caches sampled clips as ``T x H x W x 3`` arrays keyed by video id."""

    def __init__(self, frame_count: int = 8, size: tuple[int, int] | None = None,
                 workers: int = 0, max_cached: int = 4096):
        self.frame_count = frame_count
        self.size = tuple(size) if size is not None else None
        self.workers = workers
        self.max_cached = max_cached
        self._cache: OrderedDict[str, np.ndarray] = OrderedDict()

    def _load(self, record: VideoRecord) -> np.ndarray:
        frames = sample_frames(record, self.frame_count, self.size)
        return np.stack([f.pixels for f in frames])

    def clip(self, record: VideoRecord) -> np.ndarray:
        key = record.video_id
        if key in self._cache:
            self._cache.move_to_end(key)
            return self._cache[key]
        arr = self._load(record)
        self._cache[key] = arr
        if len(self._cache) > self.max_cached:
            self._cache.popitem(last=False)
        return arr

    def clips(self, records: Sequence[VideoRecord]) -> np.ndarray:
        todo = [r for r in records if r.video_id not in self._cache]
        if self.workers > 1 and len(todo) > 1:
            with ThreadPoolExecutor(self.workers) as pool:
                for r, arr in zip(todo, pool.map(self._load, todo)):
                    self._cache[r.video_id] = arr
        return np.stack([self.clip(r) for r in records])


# ---------------------------------------------------------------------------
# batches


def group_sizes(N: int, p: float) -> tuple[int, int]:
    if not 0.0 < p < 1.0:
        raise CompositionError(f"group proportion p={p} must lie in (0, 1)")
    n_a = p * N
    if abs(n_a - round(n_a)) > 1e-9:
        raise CompositionError(f"p*N = {n_a:g} is not an integer (N={N}, p={p})")
    n_a = int(round(n_a))
    if n_a < 1 or N - n_a < 1:
        raise CompositionError(f"p={p}, N={N} leaves an empty group")
    return n_a, N - n_a


def records_by_tier(records: Iterable[VideoRecord]) -> dict[int, list[VideoRecord]]:
    tiers: dict[int, list[VideoRecord]] = {}
    for r in records:
        tiers.setdefault(r.bitrate_tier, []).append(r)
    return dict(sorted(tiers.items()))


def build_contrastive_batch(records: Sequence[VideoRecord], N: int, p: float = 0.5,
                            rng_seed: int = 0) -> ContrastiveBatch:
    """Draw a two-tier batch: ``p*N`` records of the lower tier, then the rest from the higher.

    The tier pair is drawn uniformly among pairs that can fill both groups,
    then members are drawn without replacement.
    """
    if N < 2:
        raise CompositionError(f"batch size N={N} must be >= 2")
    n_a, n_b = group_sizes(N, p)
    tiers = records_by_tier(records)
    keys = list(tiers)
    pairs = [(a, b) for i, a in enumerate(keys) for b in keys[i + 1:]
             if len(tiers[a]) >= n_a and len(tiers[b]) >= n_b]
    if not pairs:
        counts = {t: len(v) for t, v in tiers.items()}
        raise CompositionError(
            f"no tier pair can fill a batch of N={N}: need {n_a} records in a lower tier and "
            f"{n_b} in a higher tier, tier counts are {counts}"
        )
    rng = np.random.default_rng(rng_seed)
    a, b = pairs[int(rng.integers(len(pairs)))]
    pick_a = rng.choice(len(tiers[a]), size=n_a, replace=False)
    pick_b = rng.choice(len(tiers[b]), size=n_b, replace=False)
    chosen = [tiers[a][i] for i in pick_a] + [tiers[b][i] for i in pick_b]
    return ContrastiveBatch(chosen, p, a, b)


def split_records(records: Sequence[VideoRecord], val_fraction: float = 0.2,
                  seed: int = 0) -> tuple[list[VideoRecord], list[VideoRecord]]:
    """Tier-stratified train/validation split."""
    if not 0.0 <= val_fraction < 1.0:
        raise ValueError("val_fraction must lie in [0, 1)")
    rng = np.random.default_rng(seed)
    train, val = [], []
    for tier_records in records_by_tier(records).values():
        order = rng.permutation(len(tier_records))
        n_val = int(round(val_fraction * len(tier_records)))
        val += [tier_records[i] for i in order[:n_val]]
        train += [tier_records[i] for i in order[n_val:]]
    return train, val
