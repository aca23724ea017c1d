"""Full quantile-function emulator: basis + coefficient metamodels.

Training projects every learning output onto a greedily selected basis,
transforms the nonnegative coefficients, and fits one GP per coefficient.
Prediction runs the GPs at a new input, undoes the transform and rebuilds a
quantile function from the basis.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import gp
from .basis import QuantileBasis, load_basis, mmp_select, project_nonneg, save_basis
from .errors import DegenerateEvaluationError, FitError, InvalidInputError
from .quantile import ProbabilityGrid, QuantileFunction, quantile_objective
from .simulator import InputGrid, _check_rows_in_grid

__all__ = [
    "TRANSFORMS",
    "QuantilePrediction",
    "QuantileEmulator",
    "train_emulator",
    "predict_coefficients",
    "predict_quantile",
    "predict_quantile_values",
    "global_quantile_error",
    "save_emulator",
    "load_emulator",
]

TRANSFORMS = ("log", "identity")

# slack for the monotonicity diagnostic on identity-mode predictions
_MONOTONE_RTOL = 1e-9


@dataclass(frozen=True)
class QuantilePrediction:
    """Predicted quantile function at one input, with diagnostics.

    ``values`` may be non-monotone in identity mode (negative predicted
    coefficients are allowed there); ``monotone`` records whether the
    predicted curve is a valid quantile function.  ``clamped`` counts
    coefficients pushed back to zero by the inverse log transform.
    """

    grid: ProbabilityGrid
    values: np.ndarray
    coefficients: np.ndarray
    coefficient_mse: np.ndarray
    monotone: bool
    clamped: int

    def function(self) -> QuantileFunction:
        if not self.monotone:
            raise InvalidInputError(
                "prediction is not monotone; no valid quantile function"
            )
        return QuantileFunction(self.grid, self.values)

    def at(self, p: float) -> float:
        if not 0.0 < p < 1.0:
            raise InvalidInputError(f"probability level {p} outside (0, 1)")
        return float(np.interp(p, self.grid.points, self.values))


@dataclass(frozen=True)
class QuantileEmulator:
    """Trained emulator: basis, coefficient table and one GP per coefficient."""

    space: InputGrid
    basis: QuantileBasis
    models: tuple[gp.GaussianProcessModel, ...]
    transform: str
    training_inputs: np.ndarray
    training_psi: np.ndarray

    def __post_init__(self):
        if self.transform not in TRANSFORMS:
            raise InvalidInputError(f"unknown transform {self.transform!r}")
        if len(self.models) != self.basis.q:
            raise InvalidInputError("one GP per basis function is required")
        if self.training_psi.shape != (self.training_inputs.shape[0], self.basis.q):
            raise InvalidInputError("coefficient table shape mismatch")

    @property
    def q(self) -> int:
        return self.basis.q

    @property
    def grid(self) -> ProbabilityGrid:
        return self.basis.grid

    @property
    def n_training(self) -> int:
        return self.training_inputs.shape[0]


def _coefficient_table(outputs, basis: QuantileBasis) -> np.ndarray:
    return np.array([project_nonneg(f, basis)[0] for f in outputs])


def train_emulator(
    space: InputGrid,
    inputs,
    outputs,
    q: int = 5,
    transform: str = "log",
    basis: QuantileBasis | None = None,
    **gp_options,
) -> QuantileEmulator:
    """Train the emulator on a learning sample.

    ``inputs`` are integer design points inside ``space``; ``outputs`` the
    matching quantile functions.  ``gp_options`` are forwarded to
    :func:`quantemu.gp.fit`.  Passing a prebuilt ``basis`` skips selection
    and only refreshes projections and GP fits.
    """
    if transform not in TRANSFORMS:
        raise InvalidInputError(f"unknown transform {transform!r}")
    X = _check_rows_in_grid(space, np.asarray(inputs), "learning design")
    outputs = list(outputs)
    if len(outputs) != X.shape[0]:
        raise InvalidInputError("design and outputs disagree in length")

    if basis is None:
        basis = mmp_select(outputs, q, inputs=X)
    elif basis.q != q:
        q = basis.q
    psi = _coefficient_table(outputs, basis)
    phi = np.log1p(psi) if transform == "log" else psi

    Xn = space.normalize(X)
    models = []
    for j in range(q):
        try:
            models.append(gp.fit(Xn, phi[:, j], **gp_options))
        except FitError as exc:
            raise FitError(f"coefficient {j + 1} of {q}: {exc}") from exc
    return QuantileEmulator(
        space=space,
        basis=basis,
        models=tuple(models),
        transform=transform,
        training_inputs=X,
        training_psi=psi,
    )


def predict_coefficients(
    emulator: QuantileEmulator, X
) -> tuple[np.ndarray, np.ndarray, int]:
    """Coefficient predictions at many inputs.

    Returns ``(psi_hat, mse, clamped)`` with shapes (n, q), (n, q); ``mse``
    is the GP predictive variance on the transformed scale.  In log mode the
    back-transform floors negative values at zero and ``clamped`` counts how
    many entries were floored; in identity mode predictions are returned as
    is and may be negative.
    """
    X = _check_rows_in_grid(emulator.space, np.asarray(X), "prediction input")
    Xn = emulator.space.normalize(X)
    means = np.empty((X.shape[0], emulator.q))
    mses = np.empty_like(means)
    for j, model in enumerate(emulator.models):
        means[:, j], mses[:, j] = model.predict(Xn)
    clamped = 0
    if emulator.transform == "log":
        psi_hat = np.expm1(means)
        clamped = int(np.count_nonzero(psi_hat < 0.0))
        psi_hat = np.maximum(psi_hat, 0.0)
    else:
        psi_hat = means
    return psi_hat, mses, clamped


def predict_quantile(emulator: QuantileEmulator, x) -> QuantilePrediction:
    """Predict the full quantile function at one input."""
    psi_hat, mse, clamped = predict_coefficients(emulator, np.atleast_2d(x))
    psi_hat, mse = psi_hat[0], mse[0]
    values = emulator.basis.matrix() @ psi_hat
    scale = max(1.0, float(np.max(np.abs(values))))
    monotone = bool(np.all(np.diff(values) >= -_MONOTONE_RTOL * scale))
    if not monotone:
        warnings.warn(
            "identity-mode prediction is non-monotone (negative coefficients)",
            stacklevel=2,
        )
    return QuantilePrediction(
        grid=emulator.grid,
        values=values,
        coefficients=psi_hat,
        coefficient_mse=mse,
        monotone=monotone,
        clamped=clamped,
    )


def predict_quantile_values(emulator: QuantileEmulator, X, p: float) -> np.ndarray:
    """Predicted p-quantile at many inputs (plug-in, no uncertainty)."""
    if not 0.0 < p < 1.0:
        raise InvalidInputError(f"probability level {p} outside (0, 1)")
    psi_hat, _, _ = predict_coefficients(emulator, X)
    return psi_hat @ emulator.basis.values_at(p)


def global_quantile_error(emulator: QuantileEmulator, points, truths, p: float) -> float:
    """Mean absolute p-quantile error over a test set, relative to the range
    of the true p-quantile over that set."""
    truths = list(truths)
    points = np.asarray(points)
    if len(truths) != points.shape[0]:
        raise InvalidInputError("points and reference outputs disagree in length")
    true_vals = np.array([quantile_objective(f, p) for f in truths])
    spread = float(np.max(true_vals) - np.min(true_vals))
    if spread <= 0.0:
        raise DegenerateEvaluationError(
            "true quantile is constant over the test set; relative error undefined"
        )
    pred_vals = predict_quantile_values(emulator, points, p)
    return float(np.mean(np.abs(true_vals - pred_vals)) / spread)


def save_emulator(emulator: QuantileEmulator, directory) -> None:
    """Dump a self-contained bundle: basis CSVs, one JSON per GP, manifest."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    save_basis(emulator.basis, directory)
    for j, model in enumerate(emulator.models, start=1):
        gp.save_model(model, directory / f"gp_{j:02d}.json")
    manifest = {
        "transform": emulator.transform,
        "q": emulator.q,
        "space_lows": list(emulator.space.lows),
        "space_highs": list(emulator.space.highs),
        "training_inputs": emulator.training_inputs.tolist(),
        "training_psi": emulator.training_psi.tolist(),
    }
    with open(directory / "emulator_manifest.json", "w", encoding="ascii", newline="\n") as fh:
        json.dump(manifest, fh, sort_keys=True, indent=1)
        fh.write("\n")


def load_emulator(directory) -> QuantileEmulator:
    directory = Path(directory)
    with open(directory / "emulator_manifest.json", "r", encoding="ascii") as fh:
        manifest = json.load(fh)
    basis = load_basis(directory)
    models = tuple(
        gp.load_model(directory / f"gp_{j:02d}.json")
        for j in range(1, manifest["q"] + 1)
    )
    return QuantileEmulator(
        space=InputGrid(
            lows=tuple(manifest["space_lows"]),
            highs=tuple(manifest["space_highs"]),
        ),
        basis=basis,
        models=models,
        transform=manifest["transform"],
        training_inputs=np.asarray(manifest["training_inputs"]),
        training_psi=np.asarray(manifest["training_psi"]),
    )
