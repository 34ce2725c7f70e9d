"""Cross-modal alignment and fusion with entropic optimal transport.

Core pieces: a log-domain Sinkhorn-Knopp solver over token similarity
matrices, a two-sided contrastive alignment loss on the transport plan,
plan-weighted attention fusion, and a small fully differentiable training
pipeline (manual backprop, AdamW, warmup+cosine schedule) that exercises
all of it on synthetic correspondence data.
"""

from .config import ExperimentConfig, config_hash, load_config
from .data import Sample, SyntheticDatasetSpec, generate_dataset
from .errors import (
    ArgumentError,
    ConfigError,
    FormatError,
    NumericError,
    OtalignError,
    ShapeError,
    StateError,
)
from .fileio import read_fmat, write_fmat
from .fusion import baseline_cross_attention, concat_project, ot_attention
from .losses import LossBreakdown, LossWeights, ce_loss, ot_loss, total_loss
from .model import (
    ModelState,
    ScheduleConfig,
    adamw_step,
    backward,
    forward,
    init_model,
    lr_at,
)
from .numerics import entropy, finite_difference_grad, log_sum_exp, make_rng, matmul, row_softmax
from .sinkhorn import (
    SinkhornConfig,
    SinkhornResult,
    exact_ot_square,
    marginal_residual,
    similarity,
    sinkhorn_solve,
)
from .training import Metrics, evaluate, train

__version__ = "0.1.0"
