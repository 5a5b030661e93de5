"""nu-SVC classification stage: solver, calibration, one-against-one wrapper."""
from .multiclass import (
    DEFAULT_GAMMA_GRID,
    DEFAULT_NU_GRID,
    FeatureScaler,
    MulticlassModel,
    NoFeasibleParamsError,
    cross_validate,
    grid_scores,
    predict_probability_tensor,
    stratified_folds,
    train_multiclass,
)
from .probability import CouplingError, couple_batch, fit_platt, pairwise_coupling, platt_nll
from .solver import (
    BinaryModel,
    ConvergenceWarning,
    InfeasibleNuError,
    SvcParams,
    dual_objective,
    rbf_kernel,
    rbf_matrix,
    train_binary,
)

__all__ = [
    "BinaryModel",
    "ConvergenceWarning",
    "CouplingError",
    "DEFAULT_GAMMA_GRID",
    "DEFAULT_NU_GRID",
    "FeatureScaler",
    "InfeasibleNuError",
    "MulticlassModel",
    "NoFeasibleParamsError",
    "SvcParams",
    "couple_batch",
    "cross_validate",
    "dual_objective",
    "fit_platt",
    "grid_scores",
    "pairwise_coupling",
    "platt_nll",
    "predict_probability_tensor",
    "rbf_kernel",
    "rbf_matrix",
    "stratified_folds",
    "train_binary",
    "train_multiclass",
]
