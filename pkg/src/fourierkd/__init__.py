"""Spectral knowledge transfer between domains.

A frozen source-trained classifier teaches a smaller student on a shifted
target domain.  Per-block amplitude adapters refurbish the teacher's
domain-specific spectra while its phase content is passed to the student
through attention-gated feature matching, trained in one alternating
loop.  Everything runs on a from-scratch reverse-mode tensor engine over
numpy arrays.
"""

from .adapter import AdaptedTeacher, Adapter, attach_adapters, refurbish
from .data import (DomainSpec, SyntheticDataset, apply_domain, generate_base,
                   generate_dataset, hard_domains, linear_probe_accuracy,
                   load_dataset, reference_domains, save_dataset)
from .fusion import (ActivationParams, FeatureMapParams, activate, attention,
                     fuse, make_weighting, map_features, squeeze)
from .gradcheck import run_gradcheck
from .losses import ce_loss, dikt_loss, kt_loss, student_total, teacher_total
from .networks import NetworkSpec, ToyNet, count_params
from .optim import SGD, Adam
from .spectral import (amplitude, couple, decouple, decouple_featuremap, dft2,
                       idft2, phase)
from .tensor import Tensor, no_grad, set_debug_checks
from .training import (ABLATION_VARIANTS, DistillResult, TrainingConfig,
                       evaluate, load_checkpoint, load_network,
                       normalized_log_digest, pretrain_classifier,
                       run_ablation, run_distillation, run_sweep,
                       save_checkpoint, save_network, variant_config)

__version__ = "0.1.0"

__all__ = [
    "ABLATION_VARIANTS",
    "ActivationParams",
    "AdaptedTeacher",
    "Adapter",
    "Adam",
    "DistillResult",
    "DomainSpec",
    "FeatureMapParams",
    "NetworkSpec",
    "SGD",
    "SyntheticDataset",
    "Tensor",
    "ToyNet",
    "TrainingConfig",
    "activate",
    "amplitude",
    "apply_domain",
    "attach_adapters",
    "attention",
    "ce_loss",
    "count_params",
    "couple",
    "decouple",
    "decouple_featuremap",
    "dft2",
    "dikt_loss",
    "evaluate",
    "fuse",
    "generate_base",
    "generate_dataset",
    "hard_domains",
    "idft2",
    "kt_loss",
    "linear_probe_accuracy",
    "load_checkpoint",
    "load_dataset",
    "load_network",
    "make_weighting",
    "map_features",
    "no_grad",
    "normalized_log_digest",
    "phase",
    "pretrain_classifier",
    "reference_domains",
    "refurbish",
    "run_ablation",
    "run_distillation",
    "run_gradcheck",
    "run_sweep",
    "save_checkpoint",
    "save_dataset",
    "save_network",
    "set_debug_checks",
    "squeeze",
    "student_total",
    "teacher_total",
    "variant_config",
    "__version__",
]
