"""Anomaly localization by regressing the in-slice location of brain MRI patches."""

from ._core import (
    Error,
    IoError,
    DivergenceError,
    LocModel,
    ValidationError,
    abnormality_score,
    auprc,
    best_dice,
    beta_nll,
    evaluate_subject,
    generate_phantom,
    run_cli,
    spearman,
)

__version__ = "0.1.0"

__all__ = [
    "Error",
    "IoError",
    "DivergenceError",
    "LocModel",
    "ValidationError",
    "abnormality_score",
    "auprc",
    "best_dice",
    "beta_nll",
    "evaluate_subject",
    "generate_phantom",
    "run_cli",
    "spearman",
]
