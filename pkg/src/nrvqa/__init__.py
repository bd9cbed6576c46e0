"""No-reference video quality assessment with a coarse-to-fine contrastive objective."""

from .config import DataConfig, ModelConfig, TrainConfig, load_config
from .data import (
    ClipLoader,
    ContrastiveBatch,
    FrameTensor,
    LabelKind,
    VideoRecord,
    build_contrastive_batch,
    ingest_vmaf_scores,
    load_manifest,
    sample_frames,
)
from .losses import (
    BatchOutputs,
    LossConfig,
    gc_loss,
    gc_pair_term,
    l1_loss,
    mse_loss,
    rank_loss,
    total_loss,
)
from .metrics import EvalReport, evaluate_predictions, plcc, srocc
from .model import VQAModel
from .training import evaluate, fit, load_checkpoint, lr_schedule, run_ablation, save_checkpoint

__version__ = "0.1.0"
