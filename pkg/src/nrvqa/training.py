"""Training loop, evaluation, checkpoints and the loss ablation harness."""

from __future__ import annotations

import copy
import dataclasses
import hashlib
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
import torch

from .config import TrainConfig, config_from_dict, config_to_dict
from .data import (
    ClipLoader,
    LabelKind,
    VideoRecord,
    build_contrastive_batch,
    ingest_vmaf_scores,
    load_manifest,
    split_records,
)
from .errors import CheckpointNotFoundError, CompatibilityError, DataError, IntegrityError, NumericError
from .losses import BatchOutputs, total_loss
from .metrics import EvalReport, evaluate_predictions
from .model import VQAModel

logger = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "nrvqa-checkpoint"
CHECKPOINT_VERSION = 1


def lr_schedule(lr0: float, decay: float, epoch: int) -> float:
    """Exponential decay, evaluated in closed form: ``lr0 * decay ** epoch``."""
    return lr0 * decay ** epoch


@dataclass
class TrainState:
    epoch: int = 0  # completed epochs
    step: int = 0
    lr: float = 0.0
    best_srocc: float = float("-inf")
    rng_state: torch.Tensor | None = None


@dataclass
class StepRecord:
    step: int
    epoch: int
    mse: float
    l1: float
    gc: float
    rank: float
    total: float
    lr: float
    batch: list[str] = field(default_factory=list)

    def as_dict(self) -> dict:
        return dataclasses.asdict(self)


def batch_seed(seed: int, epoch: int, index: int) -> int:
    return int(np.random.SeedSequence([seed, epoch, index]).generate_state(1)[0])


def label_span(records: Sequence[VideoRecord]) -> float:
    kinds = {r.label_kind for r in records}
    return (kinds.pop() if len(kinds) == 1 else LabelKind.VMAF_PSEUDO).span


def make_optimizer(model: VQAModel, cfg: TrainConfig) -> torch.optim.Optimizer:
    params = [p for p in model.parameters() if p.requires_grad]
    return torch.optim.Adam(params, lr=cfg.lr0, betas=(cfg.beta1, cfg.beta2))


def _set_lr(optimizer: torch.optim.Optimizer, lr: float) -> None:
    for group in optimizer.param_groups:
        group["lr"] = lr


def train_epoch(state: TrainState, records: Sequence[VideoRecord], model: VQAModel,
                optimizer: torch.optim.Optimizer, loader: ClipLoader, cfg: TrainConfig,
                on_step: Callable[[StepRecord], None] | None = None) -> tuple[TrainState, list[StepRecord]]:
    """One epoch of contrastive batches, one optimizer update per batch."""
    unlabeled = [r.video_id for r in records if r.label is None]
    if unlabeled:
        raise DataError(f"training records without labels: {', '.join(unlabeled[:5])}")
    lr = lr_schedule(cfg.lr0, cfg.lr_decay, state.epoch)
    _set_lr(optimizer, lr)
    n_batches = cfg.batches_per_epoch or max(1, len(records) // cfg.batch_size)
    span = label_span(records)
    log: list[StepRecord] = []
    model.train()
    for b in range(n_batches):
        batch = build_contrastive_batch(records, cfg.batch_size, cfg.loss.p, batch_seed(cfg.seed, state.epoch, b))
        clips = loader.clips(batch.records)
        out = model(clips)
        labels = torch.tensor([r.label for r in batch.records], dtype=out.scores.dtype)
        outputs = BatchOutputs(model.contrastive_embeddings(out), out.scores, labels)
        try:
            total, parts = total_loss(outputs, cfg.loss, span)
        except NumericError as exc:
            raise NumericError(f"step {state.step}, batch {batch.video_ids}: {exc}") from None
        optimizer.zero_grad(set_to_none=True)
        total.backward()
        if cfg.grad_clip:
            torch.nn.utils.clip_grad_norm_(model.parameters(), cfg.grad_clip)
        optimizer.step()
        state.step += 1
        rec = StepRecord(state.step, state.epoch, parts.mse, parts.l1, parts.gc, parts.rank,
                         parts.total, lr, batch.video_ids)
        log.append(rec)
        if on_step is not None:
            on_step(rec)
    state.epoch += 1
    state.lr = lr_schedule(cfg.lr0, cfg.lr_decay, state.epoch)
    return state, log


@torch.no_grad()
def predict(model: VQAModel, records: Sequence[VideoRecord], loader: ClipLoader,
            batch_size: int = 16) -> np.ndarray:
    model.eval()
    scores = []
    for i in range(0, len(records), batch_size):
        scores.append(model(loader.clips(records[i:i + batch_size])).scores.double().numpy())
    return np.concatenate(scores) if scores else np.zeros(0)


def evaluate(model: VQAModel, records: Sequence[VideoRecord], loader: ClipLoader,
             apply_logistic: bool = False) -> EvalReport:
    """Score every record without gradients and correlate with its label."""
    if not records:
        raise DataError("evaluation split is empty")
    unlabeled = [r.video_id for r in records if r.label is None]
    if unlabeled:
        raise DataError(f"evaluation records without labels: {', '.join(unlabeled[:5])}")
    preds = predict(model, records, loader)
    report = evaluate_predictions(preds, [r.label for r in records], apply_logistic)
    if report.undefined:
        logger.warning("evaluation correlation undefined: %s", report.note)
    return report


# ---------------------------------------------------------------------------
# checkpoints


def _checksum(weights: dict[str, torch.Tensor]) -> str:
    h = hashlib.sha256()
    for k in sorted(weights):
        t = weights[k].detach().cpu().contiguous()
        h.update(k.encode())
        h.update(str(t.dtype).encode())
        h.update(t.reshape(-1).view(torch.uint8).numpy().tobytes() if t.numel() else b"")
    return h.hexdigest()


def save_checkpoint(path, state: TrainState, model: VQAModel, cfg: TrainConfig,
                    optimizer: torch.optim.Optimizer | None = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    weights = {k: v.detach().clone() for k, v in model.trainable_state_dict().items()}
    payload = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "backbone": cfg.model.backbone,
        "stage_dims": [list(s) for s in model.spatial.backbone.stage_dims],
        "config": json.dumps(config_to_dict(cfg)),
        "config_hash": cfg.model.config_hash(),
        "state": {"epoch": state.epoch, "step": state.step, "lr": state.lr, "best_srocc": state.best_srocc},
        "rng_state": state.rng_state if state.rng_state is not None else torch.get_rng_state(),
        "weights": weights,
        "checksum": _checksum(weights),
        "optimizer": optimizer.state_dict() if optimizer is not None else None,
    }
    tmp = path.with_suffix(path.suffix + ".tmp")
    torch.save(payload, tmp)
    tmp.replace(path)
    return path


@dataclass
class LoadedCheckpoint:
    state: TrainState
    model: VQAModel
    config: TrainConfig
    optimizer_state: dict | None


def load_checkpoint(path, expected: TrainConfig | None = None,
                    backbone_weights: str | None = None) -> LoadedCheckpoint:
    """Rebuild the model from a checkpoint.

    ``expected`` guards against architecture drift: its model config hash
    must equal the stored one. ``backbone_weights`` relocates a
    pretrained backbone file.
    """
    path = Path(path)
    if not path.is_file():
        raise CheckpointNotFoundError(f"checkpoint not found: {path}")
    try:
        payload = torch.load(path, map_location="cpu", weights_only=True)
    except Exception as exc:  # truncated or foreign files raise assorted errors
        raise IntegrityError(f"cannot read checkpoint {path}: {exc}") from None
    if not isinstance(payload, dict) or payload.get("format") != CHECKPOINT_FORMAT:
        raise IntegrityError(f"{path} is not an nrvqa checkpoint")
    if payload.get("version") != CHECKPOINT_VERSION:
        raise CompatibilityError(f"checkpoint version {payload.get('version')} is not supported")
    weights = payload["weights"]
    if _checksum(weights) != payload["checksum"]:
        raise IntegrityError(f"checksum mismatch in {path}")
    cfg = config_from_dict(json.loads(payload["config"]))
    if cfg.model.config_hash() != payload["config_hash"]:
        raise IntegrityError(f"stored config does not match stored hash in {path}")
    if expected is not None and expected.model.config_hash() != payload["config_hash"]:
        raise CompatibilityError(
            f"architecture mismatch: checkpoint {payload['config_hash']} vs config {expected.model.config_hash()}"
        )
    if backbone_weights is not None:
        cfg.model.backbone_weights = backbone_weights
    model = VQAModel(cfg.model)
    dtypes = {v.dtype for v in weights.values()}
    if dtypes == {torch.float64}:
        model.double()
    missing, unexpected = model.load_state_dict(weights, strict=False)
    missing = [k for k in missing if not k.startswith("spatial.backbone.")]
    if missing or unexpected:
        raise CompatibilityError(f"weights do not fit the model: missing={missing} unexpected={unexpected}")
    model.eval()
    s = payload["state"]
    state = TrainState(s["epoch"], s["step"], s["lr"], s["best_srocc"], payload.get("rng_state"))
    return LoadedCheckpoint(state, model, cfg, payload.get("optimizer"))


# ---------------------------------------------------------------------------
# full runs


@dataclass
class FitResult:
    model: VQAModel
    state: TrainState
    steps: list[StepRecord]
    reports: list[tuple[int, EvalReport]]
    train_records: list[VideoRecord]
    val_records: list[VideoRecord]

    @property
    def final_report(self) -> EvalReport | None:
        return self.reports[-1][1] if self.reports else None


def prepare_records(cfg: TrainConfig) -> tuple[list[VideoRecord], list[VideoRecord]]:
    if not cfg.data.manifest:
        raise DataError("data.manifest is not set")
    records = load_manifest(cfg.data.manifest)
    if cfg.data.vmaf_scores:
        records = ingest_vmaf_scores(cfg.data.vmaf_scores, records).records
    if cfg.data.val_manifest:
        val = load_manifest(cfg.data.val_manifest)
        if cfg.data.vmaf_scores:
            val = ingest_vmaf_scores(cfg.data.vmaf_scores, val).records
        return records, val
    return split_records(records, cfg.data.val_fraction, cfg.seed)


def make_loader(cfg: TrainConfig) -> ClipLoader:
    return ClipLoader(cfg.data.frame_count, tuple(cfg.model.input_size), cfg.data.workers)


class _JsonlWriter:
    def __init__(self, path: Path | None):
        self.path = path
        if path is not None:
            path.parent.mkdir(parents=True, exist_ok=True)
            path.write_text("")

    def write(self, record: dict) -> None:
        if self.path is not None:
            with self.path.open("a", encoding="utf-8") as fh:
                fh.write(json.dumps(record) + "\n")


def fit(cfg: TrainConfig, records: Sequence[VideoRecord] | None = None,
        val_records: Sequence[VideoRecord] | None = None, loader: ClipLoader | None = None,
        write_outputs: bool = True) -> FitResult:
    """Train from scratch per ``cfg``; evaluate every ``eval_every`` epochs.

    With ``write_outputs`` the run directory receives ``steps.jsonl``,
    ``epochs.jsonl``, ``config.yaml``, ``last.pt`` and ``best.pt``.
    """
    cfg.validate()
    if records is None:
        records, val_records = prepare_records(cfg)
    records = list(records)
    val_records = list(val_records or [])
    loader = loader or make_loader(cfg)
    torch.manual_seed(cfg.seed)
    model = VQAModel(cfg.model)
    if cfg.init_head_bias:
        with torch.no_grad():
            model.temporal.head.bias.fill_(float(np.mean([r.label for r in records if r.label is not None] or [0.0])))
    optimizer = make_optimizer(model, cfg)
    state = TrainState(lr=lr_schedule(cfg.lr0, cfg.lr_decay, 0))

    run_dir = Path(cfg.checkpoint_dir) if write_outputs else None
    step_log = _JsonlWriter(run_dir / "steps.jsonl" if run_dir else None)
    epoch_log = _JsonlWriter(run_dir / "epochs.jsonl" if run_dir else None)
    if run_dir is not None:
        from .config import save_config

        save_config(cfg, run_dir / "config.yaml")

    eval_set = val_records or records
    steps, reports = [], []
    for _ in range(cfg.epochs):
        state, log = train_epoch(state, records, model, optimizer, loader, cfg,
                                 on_step=lambda r: step_log.write(r.as_dict()))
        steps += log
        if state.epoch % cfg.eval_every == 0 or state.epoch == cfg.epochs:
            report = evaluate(model, eval_set, loader)
            reports.append((state.epoch, report))
            epoch_log.write({"epoch": state.epoch, "split": "val" if val_records else "train", **report.as_dict()})
            improved = not report.undefined and report.srocc > state.best_srocc
            if improved:
                state.best_srocc = report.srocc
            if run_dir is not None and improved:
                save_checkpoint(run_dir / "best.pt", state, model, cfg, optimizer)
    if run_dir is not None:
        save_checkpoint(run_dir / "last.pt", state, model, cfg, optimizer)
    return FitResult(model, state, steps, reports, records, val_records)


ABLATION_ARMS = ("GC and Rank", "no GC and Rank")


@dataclass
class AblationResult:
    rows: list[tuple[str, float, float]]  # (method, plcc, srocc)
    fits: dict[str, FitResult]

    def batch_orders(self) -> dict[str, list[list[str]]]:
        return {name: [s.batch for s in f.steps] for name, f in self.fits.items()}

    def to_table(self, delimiter: str = ",") -> str:
        lines = [delimiter.join(("method", "plcc", "srocc"))]
        lines += [delimiter.join((m, f"{p:.6f}", f"{s:.6f}")) for m, p, s in self.rows]
        return "\n".join(lines) + "\n"


def run_ablation(cfg: TrainConfig, records: Sequence[VideoRecord] | None = None,
                 val_records: Sequence[VideoRecord] | None = None,
                 write_outputs: bool = True) -> AblationResult:
    """Two seeded runs that differ only in ``lambda1``/``lambda2`` (full objective vs MSE + L1)."""
    cfg.validate()
    if records is None:
        records, val_records = prepare_records(cfg)
    if cfg.loss.lambda1 == 0 and cfg.loss.lambda2 == 0:
        logger.warning("config already disables both terms; the two arms will coincide")
    base = Path(cfg.checkpoint_dir)
    full = copy.deepcopy(cfg)
    plain = copy.deepcopy(cfg)
    plain.loss.lambda1 = 0.0
    plain.loss.lambda2 = 0.0
    full.checkpoint_dir = str(base / "gc_rank")
    plain.checkpoint_dir = str(base / "no_gc_rank")
    loader = make_loader(cfg)
    fits, rows = {}, []
    for name, arm in zip(ABLATION_ARMS, (full, plain)):
        result = fit(arm, records, val_records, loader, write_outputs)
        rep = result.final_report
        fits[name] = result
        rows.append((name, rep.plcc, rep.srocc))
    return AblationResult(rows, fits)
