"""Quantile functions on a fixed probability grid.

The central functional datum of the toolkit is a quantile function sampled
at an ordered set of probabilities inside (0, 1).  All integrals over the
probability interval use trapezoid weights extended to the open endpoints
by constant continuation, so the weights of a grid always sum to one.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import InvalidInputError

__all__ = [
    "ProbabilityGrid",
    "QuantileFunction",
    "SampleBatch",
    "default_grid",
    "empirical_quantile_function",
    "l2_distance",
    "l2_norm",
    "quantile_objective",
    "mean_objective",
    "write_quantile_csv",
    "read_quantile_csv",
]

# Tolerance for the monotonicity check, relative to the value scale.  Sums of
# monotone curves can pick up one-ulp dips that are not real violations.
_MONOTONE_RTOL = 1e-9


def _as_readonly(a: np.ndarray) -> np.ndarray:
    out = np.array(a, dtype=float)
    out.flags.writeable = False
    return out


@dataclass(frozen=True)
class ProbabilityGrid:
    """Strictly increasing probabilities p_1 < ... < p_m inside (0, 1)."""

    points: np.ndarray

    def __post_init__(self):
        pts = _as_readonly(np.atleast_1d(self.points))
        if pts.ndim != 1 or pts.size < 2:
            raise InvalidInputError("probability grid needs at least 2 points")
        if not (np.all(pts > 0.0) and np.all(pts < 1.0)):
            raise InvalidInputError("grid points must lie strictly inside (0, 1)")
        if not np.all(np.diff(pts) > 0.0):
            raise InvalidInputError("grid points must be strictly increasing")
        object.__setattr__(self, "points", pts)

    @property
    def size(self) -> int:
        return int(self.points.size)

    def weights(self) -> np.ndarray:
        """Integration weights: trapezoid rule plus constant continuation
        on (0, p_1] and [p_m, 1).  Weights sum to exactly one."""
        p = self.points
        w = np.empty_like(p)
        w[0] = p[0] + 0.5 * (p[1] - p[0])
        w[1:-1] = 0.5 * (p[2:] - p[:-2])
        w[-1] = (1.0 - p[-1]) + 0.5 * (p[-1] - p[-2])
        return w

    def __eq__(self, other) -> bool:
        return isinstance(other, ProbabilityGrid) and np.array_equal(
            self.points, other.points
        )

    def __hash__(self):
        return hash(self.points.tobytes())


def default_grid(m: int = 199) -> ProbabilityGrid:
    """Equispaced open grid p_k = k / (m + 1), k = 1..m."""
    if m < 2:
        raise InvalidInputError("grid size must be at least 2")
    k = np.arange(1, m + 1, dtype=float)
    return ProbabilityGrid(k / (m + 1))


@dataclass(frozen=True)
class QuantileFunction:
    """A quantile function discretized on a probability grid.

    ``values[k]`` is the quantile at ``grid.points[k]``; the sequence must be
    non-decreasing.  ``support`` is an optional diagnostic bound [a, b]: it is
    checked with a warning, never enforced as a clamp.
    """

    grid: ProbabilityGrid
    values: np.ndarray
    support: tuple[float, float] | None = field(default=None, compare=False)

    def __post_init__(self):
        vals = _as_readonly(np.atleast_1d(self.values))
        if vals.shape != self.grid.points.shape:
            raise InvalidInputError(
                f"values shape {vals.shape} does not match grid "
                f"({self.grid.size} points)"
            )
        if not np.all(np.isfinite(vals)):
            raise InvalidInputError("quantile values must be finite")
        scale = max(1.0, float(np.max(np.abs(vals))))
        if np.any(np.diff(vals) < -_MONOTONE_RTOL * scale):
            raise InvalidInputError("quantile values must be non-decreasing")
        object.__setattr__(self, "values", vals)
        if self.support is not None:
            a, b = self.support
            if vals[0] < a or vals[-1] > b:
                warnings.warn(
                    f"quantile values exit the declared support [{a}, {b}]",
                    stacklevel=2,
                )


@dataclass(frozen=True)
class SampleBatch:
    """Replicated simulator draws at one input point."""

    draws: np.ndarray
    source_input: tuple[int, ...]
    seed: int

    def __post_init__(self):
        draws = _as_readonly(np.atleast_1d(self.draws))
        if draws.size < 1:
            raise InvalidInputError("a sample batch needs at least one draw")
        if not np.all(np.isfinite(draws)):
            raise InvalidInputError("sample draws must be finite")
        object.__setattr__(self, "draws", draws)
        object.__setattr__(self, "source_input", tuple(self.source_input))

    @property
    def size(self) -> int:
        return int(self.draws.size)


def empirical_quantile_function(
    batch: SampleBatch,
    grid: ProbabilityGrid,
    support: tuple[float, float] | None = None,
) -> QuantileFunction:
    """Empirical quantile function of a batch on the given grid.

    The value at p is the order statistic of rank ceil(p * n), i.e. the
    left-continuous inverse of the empirical CDF; every output value is an
    attained draw, and monotonicity holds by construction.
    """
    n = batch.size
    ordered = np.sort(batch.draws)
    ranks = np.ceil(grid.points * n).astype(int)
    np.clip(ranks, 1, n, out=ranks)
    return QuantileFunction(grid, ordered[ranks - 1], support=support)


def _require_same_grid(f: QuantileFunction, g: QuantileFunction) -> None:
    if f.grid != g.grid:
        raise InvalidInputError("quantile functions are on different grids")


def l2_distance(f: QuantileFunction, g: QuantileFunction) -> float:
    """L2 distance on (0, 1), by trapezoid quadrature on the common grid."""
    _require_same_grid(f, g)
    diff = f.values - g.values
    return math.sqrt(float(f.grid.weights() @ (diff * diff)))


def l2_norm(f: QuantileFunction) -> float:
    """L2 norm on (0, 1) under the same quadrature as :func:`l2_distance`."""
    v = f.values
    return math.sqrt(float(f.grid.weights() @ (v * v)))


def quantile_objective(f: QuantileFunction, p: float) -> float:
    """Value of the quantile function at probability p (linear interpolation,
    exact at grid nodes, constant continuation beyond the outermost nodes)."""
    if not 0.0 < p < 1.0:
        raise InvalidInputError(f"probability must lie in (0, 1), got {p}")
    return float(np.interp(p, f.grid.points, f.values))


def mean_objective(f: QuantileFunction) -> float:
    """Integral of the quantile function over (0, 1): the distribution mean
    up to grid truncation error."""
    return float(f.grid.weights() @ f.values)


def write_quantile_csv(f: QuantileFunction, path) -> None:
    """Serialize as CSV with header ``p,value``, one row per grid point."""
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        fh.write("p,value\n")
        for p, v in zip(f.grid.points, f.values):
            fh.write(f"{float(p)!r},{float(v)!r}\n")


def read_quantile_csv(path, support: tuple[float, float] | None = None) -> QuantileFunction:
    """Read a quantile function written by :func:`write_quantile_csv`."""
    ps: list[float] = []
    vs: list[float] = []
    with open(path, "r", encoding="ascii") as fh:
        header = fh.readline().strip()
        if header != "p,value":
            raise InvalidInputError(f"{path}: line 1: expected header 'p,value'")
        for lineno, line in enumerate(fh, start=2):
            line = line.strip()
            if not line:
                continue
            parts = line.split(",")
            try:
                p, v = float(parts[0]), float(parts[1])
            except (ValueError, IndexError):
                raise InvalidInputError(
                    f"{path}: line {lineno}: expected 'p,value', got {line!r}"
                ) from None
            ps.append(p)
            vs.append(v)
    return QuantileFunction(ProbabilityGrid(np.array(ps)), np.array(vs), support=support)
