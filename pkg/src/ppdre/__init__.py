"""Projection-pursuit density ratio estimation with classical baselines,
synthetic worlds with known truths and downstream weighting pipelines."""
from .applications import (
    DoseResponseFit, KRRModel, estimate_mi, fit_adrf, fit_qdrf, krr_fit, krr_predict, krr_select_lambda,
)
from .baselines import (
    KernelRatioModel, LogisticRatioModel, kernel_evaluate, kliep_fit, logistic_ratio_fit, ulsif_fit,
)
from .basis import GaussianBasis, init_centers
from .estimator import (
    DegenerateProjectionError, FitConfig, PPRatioModel, Projection, SingularProfileError,
    empirical_loss, fit, fit_path, fit_projection, loss_grad, profile_beta,
)
from .io import StandardizedModel, load_model, save_model
from .selection import grid_search, kfold_split, select_K, validation_loss

__version__ = "0.1.0"

__all__ = [
    "DegenerateProjectionError", "DoseResponseFit", "FitConfig", "GaussianBasis", "KRRModel",
    "KernelRatioModel", "LogisticRatioModel", "PPRatioModel", "Projection", "SingularProfileError",
    "StandardizedModel", "empirical_loss", "estimate_mi", "fit", "fit_adrf", "fit_path", "fit_projection",
    "fit_qdrf", "grid_search", "init_centers", "kernel_evaluate", "kfold_split", "kliep_fit", "krr_fit",
    "krr_predict", "krr_select_lambda", "load_model", "logistic_ratio_fit", "loss_grad", "profile_beta",
    "save_model", "select_K", "ulsif_fit", "validation_loss",
]
