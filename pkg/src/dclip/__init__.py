"""Desk-scale cross-modal teacher-student distillation.

A region-weighted cross-attention teacher fuses detector-proposed image
regions with caption tokens and distills its enriched global embeddings into
a unimodal student image encoder, with retrieval (Recall@K, MAP) and
zero-shot style evaluation throughout. Everything is deterministic given a
seed and runs in seconds on a single core.
"""

__version__ = "0.1.0"

from .data import SyntheticSpec, gen_synthetic, read_cache, write_cache
from .encoders import EncoderConfig, build_encoder_pair
from .evaluation import build_report, mean_average_precision, recall_at_k, zero_shot_topk
from .fusion import FusionParams, aggregate_global, bidirectional_fuse, cross_attend, teacher_forward
from .losses import cosine_distill, info_nce, student_loss
from .regions import Region, RegionSet, load_regions, region_weight
from .tensor import GradTape, Tensor, grad_check
from .training import TrainConfig, distill_student, epoch_sweep, train_teacher

__all__ = [
    "EncoderConfig",
    "FusionParams",
    "GradTape",
    "Region",
    "RegionSet",
    "SyntheticSpec",
    "Tensor",
    "TrainConfig",
    "aggregate_global",
    "bidirectional_fuse",
    "build_encoder_pair",
    "build_report",
    "cosine_distill",
    "cross_attend",
    "distill_student",
    "epoch_sweep",
    "gen_synthetic",
    "grad_check",
    "info_nce",
    "load_regions",
    "mean_average_precision",
    "read_cache",
    "recall_at_k",
    "region_weight",
    "student_loss",
    "teacher_forward",
    "train_teacher",
    "write_cache",
    "zero_shot_topk",
    "__version__",
]
