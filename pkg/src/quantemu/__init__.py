"""Quantile-function emulation and adaptive quantile optimization.

The package emulates the full output distribution of a stochastic simulator
over a discrete input grid: empirical quantile functions on a shared
probability grid are decomposed on a greedily selected functional basis with
nonnegative coefficients, the coefficients are metamodeled by independent
Gaussian processes, and a chosen p-quantile is maximized by an expected
improvement loop that adds one simulator run per iteration.
"""

from .errors import (
    ConfigError,
    DegenerateEvaluationError,
    DomainError,
    FitError,
    InvalidInputError,
    QuantemuError,
    StateError,
    UnsupportedModeError,
)
from .quantile import (
    ProbabilityGrid,
    QuantileFunction,
    SampleBatch,
    default_grid,
    empirical_quantile_function,
    l2_distance,
    l2_norm,
    mean_objective,
    quantile_objective,
    read_quantile_csv,
    write_quantile_csv,
)
from .simulator import (
    DesignSpace,
    GaussianMixture,
    InputGrid,
    SyntheticModelSpec,
    SyntheticSimulator,
    default_input_grid,
    derive_seed,
    sample_design,
)
from .gp import GaussianProcessModel, Prediction, fit, load_model, log_likelihood, save_model
from .basis import (
    QuantileBasis,
    choose_basis_size,
    load_basis,
    mmp_select,
    project_nonneg,
    reconstruct,
    save_basis,
)
from .emulator import (
    QuantileEmulator,
    QuantilePrediction,
    global_quantile_error,
    load_emulator,
    predict_coefficients,
    predict_quantile,
    predict_quantile_values,
    save_emulator,
    train_emulator,
)
from .qfei import (
    DirectReport,
    EiScore,
    LoopComplete,
    QfeiConfig,
    QfeiReport,
    QfeiState,
    StepRecord,
    direct_optimize,
    expected_improvement,
    initial_state,
    qfei_step,
    quantile_posterior,
    run_qfei,
    score_candidates,
)

__version__ = "0.1.0"

__all__ = [
    "ConfigError",
    "DegenerateEvaluationError",
    "DomainError",
    "FitError",
    "InvalidInputError",
    "QuantemuError",
    "StateError",
    "UnsupportedModeError",
    "ProbabilityGrid",
    "QuantileFunction",
    "SampleBatch",
    "default_grid",
    "empirical_quantile_function",
    "l2_distance",
    "l2_norm",
    "mean_objective",
    "quantile_objective",
    "read_quantile_csv",
    "write_quantile_csv",
    "DesignSpace",
    "GaussianMixture",
    "InputGrid",
    "SyntheticModelSpec",
    "SyntheticSimulator",
    "default_input_grid",
    "derive_seed",
    "sample_design",
    "GaussianProcessModel",
    "Prediction",
    "fit",
    "load_model",
    "log_likelihood",
    "save_model",
    "QuantileBasis",
    "choose_basis_size",
    "load_basis",
    "mmp_select",
    "project_nonneg",
    "reconstruct",
    "save_basis",
    "QuantileEmulator",
    "QuantilePrediction",
    "global_quantile_error",
    "load_emulator",
    "predict_coefficients",
    "predict_quantile",
    "predict_quantile_values",
    "save_emulator",
    "train_emulator",
    "DirectReport",
    "EiScore",
    "LoopComplete",
    "QfeiConfig",
    "QfeiReport",
    "QfeiState",
    "StepRecord",
    "direct_optimize",
    "expected_improvement",
    "initial_state",
    "qfei_step",
    "quantile_posterior",
    "run_qfei",
    "score_candidates",
]
