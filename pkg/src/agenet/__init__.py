"""Ordinal, uncertainty-aware severity grading on a small numpy autodiff engine."""

from .checkpoint import load_checkpoint, load_eval_model, save_checkpoint
from .config import load_config
from .data import SynthSpec, generate, load_directory_dataset, split
from .estimator import AGENetRegressor
from .evidential import grade_from_score, nig_nll, predictive_variance
from .metrics import all_metrics, paired_tests, qwk
from .model import AGENet, ModelConfig, build_variant
from .tensor import Tensor, gradcheck, no_grad

__version__ = "0.1.0"

__all__ = [
    "AGENet",
    "AGENetRegressor",
    "ModelConfig",
    "SynthSpec",
    "Tensor",
    "all_metrics",
    "build_variant",
    "generate",
    "grade_from_score",
    "gradcheck",
    "load_checkpoint",
    "load_config",
    "load_directory_dataset",
    "load_eval_model",
    "nig_nll",
    "no_grad",
    "paired_tests",
    "predictive_variance",
    "qwk",
    "save_checkpoint",
    "split",
]
