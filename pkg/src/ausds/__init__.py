"""Adversarial uncertainty sampling for pool-based active learning.

Labeled latents are pushed onto the decision boundary by an adversarial
attack, an exact KNN mapper grounds the boundary points back onto real
unlabeled samples, and an entropy-ranked mixture of adversarial and random
candidates goes to the oracle, so each selection step costs on the order of
the batch size instead of the pool size.
"""

from .attacks import (
    AdversarialPoint,
    AttackConfig,
    AttackItem,
    attack_batch,
    cw,
    deepfool,
    fgv,
)
from .data import (
    Dataset,
    Oracle,
    PoolState,
    SampleRecord,
    commit_selection,
    load_dataset,
    make_initial_pool,
)
from .encoder import EmbeddingStore, EncoderStack, LatentPoint, fine_tune
from .errors import (
    ConfigurationError,
    FormatError,
    NumericError,
    PoolInvariantError,
    ShapeError,
    StalenessError,
)
from .fileformats import DatasetManifest, read_manifest, write_manifest
from .knn import LatentMapper, build_mapper
from .loop import ActiveLoop, BudgetCheckpoint, LoopConfig, RunResult
from .model import (
    DecoderModel,
    TrainConfig,
    loss_and_input_grad,
    loss_and_param_grads,
    make_optimizer,
    margin,
    predict_label,
    predict_proba,
    train_step,
)
from .reports import eval_from_scratch, margin_report, speed_report, token_micro_f1
from .sampler import (
    SamplerConfig,
    SelectionReport,
    ausds_select,
    max_entropy,
    rm_select,
    total_token_entropy,
    us_select,
)
from .synth import SyntheticSpec, generate_synthetic

__version__ = "0.1.0"

__all__ = [
    "ActiveLoop",
    "AdversarialPoint",
    "AttackConfig",
    "AttackItem",
    "BudgetCheckpoint",
    "ConfigurationError",
    "Dataset",
    "DatasetManifest",
    "DecoderModel",
    "EmbeddingStore",
    "EncoderStack",
    "FormatError",
    "LatentMapper",
    "LatentPoint",
    "LoopConfig",
    "NumericError",
    "Oracle",
    "PoolInvariantError",
    "PoolState",
    "RunResult",
    "SampleRecord",
    "SamplerConfig",
    "SelectionReport",
    "ShapeError",
    "StalenessError",
    "SyntheticSpec",
    "TrainConfig",
    "attack_batch",
    "ausds_select",
    "build_mapper",
    "commit_selection",
    "cw",
    "deepfool",
    "eval_from_scratch",
    "fgv",
    "fine_tune",
    "generate_synthetic",
    "load_dataset",
    "loss_and_input_grad",
    "loss_and_param_grads",
    "make_initial_pool",
    "make_optimizer",
    "margin",
    "margin_report",
    "max_entropy",
    "predict_label",
    "predict_proba",
    "read_manifest",
    "rm_select",
    "speed_report",
    "token_micro_f1",
    "total_token_entropy",
    "train_step",
    "us_select",
    "write_manifest",
]
