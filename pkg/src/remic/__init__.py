"""Reprogramming a frozen pretrained audio classifier for instrument recognition.

Train only a small input transform (additive noise, a CNN, or a U-Net) and an
output label mapping on top of an untouched backbone; handle datasets where
most labels are missing; evaluate with macro F1.
"""

from .backbone import ASTAdapter, FrozenBackbone, ToyBackbone
from .datamodel import (
    ClipRecord,
    LabelState,
    OPENMIC_INSTRUMENTS,
    Spectrogram,
    SplitTag,
    TriStateLabelVector,
    Vocabulary,
    observed_mask,
    validate_labels,
)
from .dataio import SyntheticSpec, generate_synthetic, label_stats, load_openmic, make_validation_split
from .errors import ReprogramError
from .estimator import ReprogrammedClassifier
from .evaluation import binarize, budget_report, macro_f1, positive_count_correlation
from .frontend import FrontendParams, compute_logmel, fit_to_length, normalize
from .mapping import FCLMapper, ManyToOneAssignment, fcl_forward, many_to_one_forward, parse_assignment
from .pipeline import FitResult, build_dataset, build_model, fit
from .reprogrammers import (
    CNNReprogrammer,
    IdentityReprogrammer,
    NoiseReprogrammer,
    ReprogrammerKind,
    UNetReprogrammer,
    init_reprogrammer,
    param_count,
)
from .training import ReprogrammedModel, TrainingPlan, Trainer, lr_at_epoch, partial_bce

__version__ = "0.1.0"

__all__ = [
    "ASTAdapter", "CNNReprogrammer", "ClipRecord", "FCLMapper", "FitResult",
    "FrontendParams", "FrozenBackbone", "IdentityReprogrammer", "LabelState",
    "ManyToOneAssignment", "NoiseReprogrammer", "OPENMIC_INSTRUMENTS",
    "ReprogramError", "ReprogrammedClassifier", "ReprogrammedModel",
    "ReprogrammerKind", "Spectrogram", "SplitTag", "SyntheticSpec",
    "ToyBackbone", "Trainer", "TrainingPlan", "TriStateLabelVector",
    "UNetReprogrammer", "Vocabulary", "binarize", "budget_report",
    "build_dataset", "build_model", "compute_logmel", "fcl_forward", "fit",
    "fit_to_length", "generate_synthetic", "init_reprogrammer", "label_stats",
    "load_openmic", "lr_at_epoch", "macro_f1", "make_validation_split",
    "many_to_one_forward", "normalize", "observed_mask", "param_count",
    "parse_assignment", "partial_bce", "positive_count_correlation",
    "validate_labels",
]
