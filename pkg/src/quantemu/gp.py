"""Scalar Gaussian-process regression (kriging).

Model: Y(x) = h(x) + Z(x) with a polynomial trend h of degree at most one
and a centered stationary process Z of variance sigma^2 and anisotropic
correlation K_theta.  Trend coefficients and the variance are profiled out
by generalized least squares; the correlation lengths maximize the profiled
log-likelihood through a multi-start bounded numerical search.  Predictions
use the exact conditional mean and the kriging variance.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_solve, cholesky, solve_triangular
from scipy.optimize import minimize
from scipy.stats import qmc

from .errors import FitError, InvalidInputError

__all__ = [
    "KERNELS",
    "GaussianProcessModel",
    "Prediction",
    "fit",
    "log_likelihood",
    "save_model",
    "load_model",
]

KERNELS = ("matern52", "gaussian")
TRENDS = ("linear", "constant")

DEFAULT_NUGGET = 1e-8
DEFAULT_THETA_BOUNDS = (1e-2, 10.0)

# during fitting, lengthscales whose correlation Cholesky leaves some point
# with conditional variance within this factor of the nugget are rejected
_CONDITION_FLOOR = 100.0
# fitted models must reproduce their own training data: candidates whose
# nugget-induced deviation at any design point exceeds this fraction of
# sd(Y) are rejected as numerically degenerate
_INTERP_TOL = 1e-6
_SQRT5 = math.sqrt(5.0)


def _trend_matrix(X: np.ndarray, trend: str) -> np.ndarray:
    n = X.shape[0]
    if trend == "constant":
        return np.ones((n, 1))
    if trend == "linear":
        return np.hstack([np.ones((n, 1)), X])
    raise InvalidInputError(f"unknown trend {trend!r}; options: {TRENDS}")


def _sq_diffs(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    """Per-coordinate squared differences, shape (len(A), len(B), d)."""
    diff = A[:, None, :] - B[None, :, :]
    return diff * diff


def _correlation(sq_diffs: np.ndarray, theta: np.ndarray, kernel: str) -> np.ndarray:
    r2 = sq_diffs @ (1.0 / (theta * theta))
    if kernel == "gaussian":
        return np.exp(-0.5 * r2)
    if kernel == "matern52":
        r = np.sqrt(np.maximum(r2, 0.0))
        t = _SQRT5 * r
        return (1.0 + t + (5.0 / 3.0) * r2) * np.exp(-t)
    raise InvalidInputError(f"unknown kernel {kernel!r}; options: {KERNELS}")


@dataclass(frozen=True)
class Prediction:
    """Conditional mean and kriging variance at one point."""

    mean: float
    variance: float


@dataclass(frozen=True)
class GaussianProcessModel:
    """A fully specified GP: hyperparameters plus the factorized design.

    Instances are immutable; the Cholesky factor of the (nugget-regularized)
    design correlation matrix and the weight vector for the conditional mean
    are computed once at construction.
    """

    X: np.ndarray
    Y: np.ndarray
    beta: np.ndarray
    sigma2: float
    theta: np.ndarray
    kernel: str = "matern52"
    trend: str = "linear"
    nugget: float = DEFAULT_NUGGET

    # cached factorization, set in __post_init__
    chol: np.ndarray = field(init=False, repr=False, compare=False)
    _alpha: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        X = np.atleast_2d(np.asarray(self.X, dtype=float))
        Y = np.asarray(self.Y, dtype=float).reshape(-1)
        theta = np.asarray(self.theta, dtype=float).reshape(-1)
        beta = np.asarray(self.beta, dtype=float).reshape(-1)
        if X.shape[0] != Y.size:
            raise InvalidInputError("design and outputs disagree in length")
        if theta.size != X.shape[1]:
            raise InvalidInputError("one correlation length per input dimension")
        if np.any(theta <= 0.0):
            raise InvalidInputError("correlation lengths must be positive")
        if self.sigma2 < 0.0:
            raise InvalidInputError("process variance must be nonnegative")
        for name, arr in (("X", X), ("Y", Y), ("beta", beta), ("theta", theta)):
            if not np.all(np.isfinite(arr)):
                raise InvalidInputError(f"{name} contains non-finite entries")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "Y", Y)
        object.__setattr__(self, "beta", beta)
        object.__setattr__(self, "theta", theta)

        R = _correlation(_sq_diffs(X, X), theta, self.kernel)
        R[np.diag_indices_from(R)] += self.nugget
        try:
            L = cholesky(R, lower=True)
        except np.linalg.LinAlgError as exc:
            raise FitError(
                f"design correlation matrix not positive definite at theta={theta}"
            ) from exc
        resid = Y - _trend_matrix(X, self.trend) @ beta
        object.__setattr__(self, "chol", L)
        object.__setattr__(self, "_alpha", cho_solve((L, True), resid))

    @property
    def n(self) -> int:
        return self.Y.size

    @property
    def dim(self) -> int:
        return self.X.shape[1]

    def predict(self, Xstar) -> tuple[np.ndarray, np.ndarray]:
        """Conditional means and kriging variances for a stack of points."""
        Xstar = np.atleast_2d(np.asarray(Xstar, dtype=float))
        r = _correlation(_sq_diffs(Xstar, self.X), self.theta, self.kernel)
        mean = _trend_matrix(Xstar, self.trend) @ self.beta + r @ self._alpha
        v = solve_triangular(self.chol, r.T, lower=True)
        variance = self.sigma2 * np.maximum(1.0 - np.einsum("ij,ij->j", v, v), 0.0)
        return mean, variance

    def predict_point(self, xstar) -> Prediction:
        mean, var = self.predict(np.asarray(xstar, dtype=float).reshape(1, -1))
        return Prediction(mean=float(mean[0]), variance=float(var[0]))


def _profiled_estimates(
    L: np.ndarray, H: np.ndarray, Y: np.ndarray
) -> tuple[np.ndarray, float, np.ndarray]:
    """GLS trend coefficients, ML variance and the whitened residual."""
    Ht = solve_triangular(L, H, lower=True)
    Yt = solve_triangular(L, Y, lower=True)
    beta, *_ = np.linalg.lstsq(Ht, Yt, rcond=None)
    resid = Yt - Ht @ beta
    sigma2 = float(resid @ resid) / Y.size
    return beta, sigma2, resid


def fit(
    X,
    Y,
    kernel: str = "matern52",
    trend: str = "linear",
    n_starts: int = 10,
    theta_bounds: tuple[float, float] = DEFAULT_THETA_BOUNDS,
    nugget: float = DEFAULT_NUGGET,
    maxiter: int = 60,
) -> GaussianProcessModel:
    """Maximum-likelihood fit of a GP to scalar observations.

    The profiled negative log-likelihood is minimized over log correlation
    lengths with L-BFGS-B (finite-difference gradients) restarted from a
    fixed space-filling set of points, so repeat fits on identical data are
    identical.  Lengths whose correlation matrix is so ill conditioned that
    the nugget would visibly perturb design-point predictions are excluded,
    so the returned model is the best likelihood among candidates that
    still reproduce their training data.

    Parameters
    ----------
    X, Y : array_like
        Design rows (already normalized) and scalar outputs.
    kernel, trend : str
        Kernel family and trend degree tags.
    n_starts : int
        Number of multi-start points in log-length space.
    theta_bounds : (float, float)
        Search box for every correlation length.
    nugget : float
        Relative diagonal regularization of the correlation matrix.
    maxiter : int
        L-BFGS-B iteration cap per start.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    Y = np.asarray(Y, dtype=float).reshape(-1)
    n, d = X.shape
    if Y.size != n:
        raise InvalidInputError("design and outputs disagree in length")
    if not np.all(np.isfinite(X)) or not np.all(np.isfinite(Y)):
        raise InvalidInputError("inputs and outputs must be finite")
    if np.unique(X, axis=0).shape[0] != n:
        raise InvalidInputError("duplicate design rows")
    n_min = d + 2 if trend == "linear" else 2
    if n < n_min:
        raise InvalidInputError(f"need at least {n_min} points for the {trend} trend")

    H = _trend_matrix(X, trend)
    D2 = _sq_diffs(X, X)
    y_var = float(np.var(Y))
    y_sd = math.sqrt(y_var)
    s2_floor = 1e-32 * max(y_var, 1e-32) + 1e-300
    diag = np.diag_indices(n)

    def negative_profiled_ll(log_theta: np.ndarray) -> float:
        theta = np.exp(log_theta)
        R = _correlation(D2, theta, kernel)
        R[diag] += nugget
        try:
            L = cholesky(R, lower=True)
        except np.linalg.LinAlgError:
            return 1e25
        # Reject the degenerate ML corner where a design point is explained
        # to within the nugget by the others: there the inflated-variance
        # optimum turns the interpolator into a smoother.
        if float(np.min(np.diag(L))) ** 2 <= _CONDITION_FLOOR * nugget:
            return 1e25
        _, sigma2, resid = _profiled_estimates(L, H, Y)
        # the conditional mean misses Y_i by exactly nugget * alpha_i, so an
        # ill-conditioned candidate that breaks interpolation is rejected
        # too (constant data has no scale to measure the miss against)
        if y_sd > 0.0:
            alpha = solve_triangular(L, resid, lower=True, trans=1)
            if nugget * float(np.max(np.abs(alpha), initial=0.0)) > _INTERP_TOL * y_sd:
                return 1e25
        return 0.5 * n * math.log(max(sigma2, s2_floor)) + float(
            np.sum(np.log(np.diag(L)))
        )

    lo, hi = math.log(theta_bounds[0]), math.log(theta_bounds[1])
    sampler = qmc.LatinHypercube(d=d, seed=0)
    starts = lo + (hi - lo) * sampler.random(n_starts)
    bounds = [(lo, hi)] * d

    best_val, best_theta = math.inf, None
    for start in starts:
        res = minimize(
            negative_profiled_ll,
            start,
            method="L-BFGS-B",
            bounds=bounds,
            options={"maxiter": maxiter},
        )
        if res.fun < best_val:
            best_val, best_theta = float(res.fun), np.exp(res.x)
    if best_val >= 1e25:
        # every start was stranded on a rejected plateau; restart from the
        # shortest lengths, the corner of the box where both screens hold
        res = minimize(
            negative_profiled_ll,
            np.full(d, lo),
            method="L-BFGS-B",
            bounds=bounds,
            options={"maxiter": maxiter},
        )
        if res.fun < best_val:
            best_val, best_theta = float(res.fun), np.exp(res.x)
    if best_theta is None or best_val >= 1e25:
        raise FitError(
            "likelihood search found no numerically sound correlation "
            f"lengths (bounds {theta_bounds})"
        )

    R = _correlation(D2, best_theta, kernel)
    R[diag] += nugget
    try:
        L = cholesky(R, lower=True)
    except np.linalg.LinAlgError as exc:
        raise FitError(
            f"correlation matrix not positive definite at theta={best_theta}"
        ) from exc
    beta, sigma2, _ = _profiled_estimates(L, H, Y)
    if sigma2 < 1e-12 * max(y_var, 1e-300):
        warnings.warn(
            "near-zero process variance: the trend explains the data "
            "(predictions revert to generalized least squares)",
            stacklevel=2,
        )
    return GaussianProcessModel(
        X=X,
        Y=Y,
        beta=beta,
        sigma2=sigma2,
        theta=best_theta,
        kernel=kernel,
        trend=trend,
        nugget=nugget,
    )


def log_likelihood(model: GaussianProcessModel) -> float:
    """Gaussian log-density of the stored outputs under the stored model."""
    if model.sigma2 <= 0.0:
        return -math.inf
    n = model.n
    resid = model.Y - _trend_matrix(model.X, model.trend) @ model.beta
    white = solve_triangular(model.chol, resid, lower=True)
    log_det = n * math.log(model.sigma2) + 2.0 * float(
        np.sum(np.log(np.diag(model.chol)))
    )
    return -0.5 * (
        n * math.log(2.0 * math.pi) + log_det + float(white @ white) / model.sigma2
    )


def save_model(model: GaussianProcessModel, path) -> None:
    """Dump hyperparameters and design to JSON; loading reproduces predictions."""
    payload = {
        "kernel": model.kernel,
        "trend": model.trend,
        "nugget": model.nugget,
        "beta": model.beta.tolist(),
        "sigma2": model.sigma2,
        "theta": model.theta.tolist(),
        "X": model.X.tolist(),
        "Y": model.Y.tolist(),
    }
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        json.dump(payload, fh, sort_keys=True, indent=1)
        fh.write("\n")


def load_model(path) -> GaussianProcessModel:
    with open(path, "r", encoding="ascii") as fh:
        payload = json.load(fh)
    return GaussianProcessModel(
        X=np.array(payload["X"], dtype=float),
        Y=np.array(payload["Y"], dtype=float),
        beta=np.array(payload["beta"], dtype=float),
        sigma2=float(payload["sigma2"]),
        theta=np.array(payload["theta"], dtype=float),
        kernel=payload["kernel"],
        trend=payload["trend"],
        nugget=float(payload["nugget"]),
    )
