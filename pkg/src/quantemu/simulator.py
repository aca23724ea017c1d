"""Stochastic-simulator interface and the synthetic maintenance testbed.

The testbed mimics an economic maintenance-planning code: five discrete
inputs (four maintenance years, one recovery year) map to a random net
present value.  Output draws follow ``mu(x) + s(x) * T`` where T is a fixed
standardized two-component Gaussian mixture, so the exact quantile function
at every input is available in closed form up to a scalar root-find.  That
ground truth is what makes the emulation and optimization test protocols
self-contained.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import ndtr

from .errors import DomainError, InvalidInputError
from .quantile import ProbabilityGrid, QuantileFunction, SampleBatch

__all__ = [
    "InputGrid",
    "DesignSpace",
    "GaussianMixture",
    "SyntheticModelSpec",
    "SyntheticSimulator",
    "default_input_grid",
    "sample_design",
    "derive_seed",
]


@dataclass(frozen=True)
class InputGrid:
    """Full discrete input space F: a product of inclusive integer ranges."""

    lows: tuple[int, ...]
    highs: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "lows", tuple(int(v) for v in self.lows))
        object.__setattr__(self, "highs", tuple(int(v) for v in self.highs))
        if len(self.lows) != len(self.highs) or not self.lows:
            raise InvalidInputError("lows and highs must be non-empty, same length")
        for lo, hi in zip(self.lows, self.highs):
            if hi <= lo:
                raise InvalidInputError(f"coordinate range [{lo}, {hi}] is empty or flat")

    @property
    def dim(self) -> int:
        return len(self.lows)

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(hi - lo + 1 for lo, hi in zip(self.lows, self.highs))

    @property
    def size(self) -> int:
        return int(np.prod(self.shape))

    def contains(self, x) -> bool:
        x = np.asarray(x)
        if x.shape != (self.dim,):
            return False
        return bool(
            np.all(x == np.floor(x))
            and np.all(x >= self.lows)
            and np.all(x <= self.highs)
        )

    def decode(self, indices) -> np.ndarray:
        """Map lexicographic indices in [0, size) to integer coordinate rows."""
        offsets = np.unravel_index(np.asarray(indices, dtype=np.int64), self.shape)
        return np.stack(
            [off + lo for off, lo in zip(offsets, self.lows)], axis=-1
        ).astype(np.int64)

    def normalize(self, X) -> np.ndarray:
        """Affine map of each coordinate to [0, 1] (used by all GP work)."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        lows = np.asarray(self.lows, dtype=float)
        span = np.asarray(self.highs, dtype=float) - lows
        return (X - lows) / span


def default_input_grid() -> InputGrid:
    """Four maintenance years in 41..50 and one recovery year in 11..20."""
    return InputGrid(lows=(41, 41, 41, 41, 11), highs=(50, 50, 50, 50, 20))


def sample_design(grid: InputGrid, k: int, seed: int) -> np.ndarray:
    """Draw k distinct points uniformly without replacement from the grid."""
    if k < 1:
        raise InvalidInputError("design size must be positive")
    if k > grid.size:
        raise InvalidInputError(f"cannot draw {k} distinct points from {grid.size}")
    rng = np.random.default_rng(seed)
    idx = rng.choice(grid.size, size=k, replace=False)
    return grid.decode(idx)


def derive_seed(base_seed: int, *stream: int) -> int:
    """Deterministic child seed for a (base seed, stream index...) pair."""
    ss = np.random.SeedSequence([int(base_seed), *map(int, stream)])
    return int(ss.generate_state(1)[0])


def _check_rows_in_grid(grid: InputGrid, X: np.ndarray, label: str) -> np.ndarray:
    X = np.atleast_2d(np.asarray(X, dtype=np.int64))
    if X.shape[1] != grid.dim:
        raise InvalidInputError(f"{label}: expected {grid.dim} coordinates per point")
    for x in X:
        if not grid.contains(x):
            raise DomainError(f"{label}: point {tuple(int(c) for c in x)} outside the grid")
    if len({tuple(map(int, x)) for x in X}) != len(X):
        raise InvalidInputError(f"{label}: duplicate points")
    return X


@dataclass(frozen=True)
class DesignSpace:
    """Nested input sets: full grid F, learning design and candidate study set.

    The learning design is the set of points actually simulated up front;
    the study set is the (larger) pool over which emulation and optimization
    are carried out.  The two are sampled independently and may overlap.
    """

    grid: InputGrid
    learning: np.ndarray
    study: np.ndarray

    def __post_init__(self):
        object.__setattr__(
            self, "learning", _check_rows_in_grid(self.grid, self.learning, "learning set")
        )
        object.__setattr__(
            self, "study", _check_rows_in_grid(self.grid, self.study, "study set")
        )

    @classmethod
    def sample(
        cls, grid: InputGrid, n_learning: int, n_study: int, seed: int
    ) -> "DesignSpace":
        learning = sample_design(grid, n_learning, derive_seed(seed, 0))
        study = sample_design(grid, n_study, derive_seed(seed, 1))
        return cls(grid=grid, learning=learning, study=study)


class GaussianMixture:
    """Two-component Gaussian mixture standardized to mean 0, variance 1.

    Only the first component's weight, location and spread are free; the
    second component is solved from the standardization constraints.  The
    defaults give a right-skewed unimodal-looking noise law, so the mean,
    the median and other quantile orders genuinely differ.
    """

    def __init__(self, weight: float = 0.75, loc: float = -0.35, scale: float = 0.55):
        if not 0.0 < weight < 1.0:
            raise InvalidInputError("mixture weight must lie in (0, 1)")
        if scale <= 0.0:
            raise InvalidInputError("mixture scale must be positive")
        w, m1, s1 = float(weight), float(loc), float(scale)
        m2 = -w * m1 / (1.0 - w)
        s2_sq = (1.0 - w * (s1 * s1 + m1 * m1)) / (1.0 - w) - m2 * m2
        if s2_sq <= 0.0:
            raise InvalidInputError(
                "mixture parameters admit no standardized second component"
            )
        self.weight = w
        self.locs = (m1, m2)
        self.scales = (s1, math.sqrt(s2_sq))

    def cdf(self, t):
        t = np.asarray(t, dtype=float)
        (m1, m2), (s1, s2) = self.locs, self.scales
        return self.weight * ndtr((t - m1) / s1) + (1.0 - self.weight) * ndtr(
            (t - m2) / s2
        )

    def pdf(self, t):
        t = np.asarray(t, dtype=float)
        (m1, m2), (s1, s2) = self.locs, self.scales
        z1 = (t - m1) / s1
        z2 = (t - m2) / s2
        c = 1.0 / math.sqrt(2.0 * math.pi)
        return self.weight * c / s1 * np.exp(-0.5 * z1 * z1) + (
            1.0 - self.weight
        ) * c / s2 * np.exp(-0.5 * z2 * z2)

    def quantile(self, p) -> np.ndarray:
        """Inverse CDF by bisection, accurate to 1e-10 in t."""
        p = np.atleast_1d(np.asarray(p, dtype=float))
        if np.any(p <= 0.0) or np.any(p >= 1.0):
            raise InvalidInputError("quantile orders must lie in (0, 1)")
        lo_bound = min(self.locs) - 14.0 * max(self.scales)
        hi_bound = max(self.locs) + 14.0 * max(self.scales)
        lo = np.full(p.shape, lo_bound)
        hi = np.full(p.shape, hi_bound)
        # each bisection halves the bracket; 60 steps push it below 1e-10
        for _ in range(60):
            mid = 0.5 * (lo + hi)
            below = self.cdf(mid) < p
            lo = np.where(below, mid, lo)
            hi = np.where(below, hi, mid)
        return 0.5 * (lo + hi)

    def rvs(self, n: int, rng: np.random.Generator) -> np.ndarray:
        pick_first = rng.random(n) < self.weight
        z = rng.standard_normal(n)
        (m1, m2), (s1, s2) = self.locs, self.scales
        return np.where(pick_first, m1 + s1 * z, m2 + s2 * z)


@dataclass(frozen=True)
class SyntheticModelSpec:
    """Parameters of the synthetic testbed.

    Trend over normalized coordinates u in [0, 1]^d:

        mu(u) = intercept + linear . u
                + interaction * u[a] * u[b]
                + bump * sin(2 pi u[c])

    The heteroscedastic spread is ``s(u) = scale_base + scale_slope * u[k]``
    and must stay positive.  Noise is the standardized mixture above.
    """

    trend_intercept: float = -3.0
    trend_linear: tuple[float, ...] = (1.2, 0.8, -0.6, 0.05, 0.0)
    interaction_coeff: float = 0.6
    interaction_pair: tuple[int, int] = (0, 1)
    bump_coeff: float = 0.45
    bump_coordinate: int = 4
    scale_base: float = 0.4
    scale_slope: float = 0.5
    scale_coordinate: int = 3
    mixture_weight: float = 0.75
    mixture_loc: float = -0.35
    mixture_scale: float = 0.55
    seed: int = 0

    def __post_init__(self):
        if min(self.scale_base, self.scale_base + self.scale_slope) <= 0.0:
            raise InvalidInputError("spread s(x) must be positive over the grid")


class SyntheticSimulator:
    """Synthetic stochastic simulator with an exact quantile-function oracle."""

    def __init__(self, grid: InputGrid | None = None, spec: SyntheticModelSpec | None = None):
        self.grid = grid if grid is not None else default_input_grid()
        self.spec = spec if spec is not None else SyntheticModelSpec()
        d = self.grid.dim
        if len(self.spec.trend_linear) != d:
            raise InvalidInputError(
                f"trend has {len(self.spec.trend_linear)} linear terms, grid is {d}-dimensional"
            )
        for idx in (*self.spec.interaction_pair, self.spec.bump_coordinate,
                    self.spec.scale_coordinate):
            if not 0 <= idx < d:
                raise InvalidInputError(f"coordinate index {idx} outside 0..{d - 1}")
        self.mixture = GaussianMixture(
            self.spec.mixture_weight, self.spec.mixture_loc, self.spec.mixture_scale
        )
        self._noise_quantile_cache: dict[ProbabilityGrid, np.ndarray] = {}

    # -- deterministic structure ------------------------------------------

    def trend(self, X) -> np.ndarray:
        """mu(x) for one point or a stack of points."""
        U = self.grid.normalize(X)
        sp = self.spec
        a, b = sp.interaction_pair
        mu = (
            sp.trend_intercept
            + U @ np.asarray(sp.trend_linear)
            + sp.interaction_coeff * U[:, a] * U[:, b]
            + sp.bump_coeff * np.sin(2.0 * math.pi * U[:, sp.bump_coordinate])
        )
        return mu

    def spread(self, X) -> np.ndarray:
        """s(x) > 0 for one point or a stack of points."""
        U = self.grid.normalize(X)
        sp = self.spec
        return sp.scale_base + sp.scale_slope * U[:, sp.scale_coordinate]

    def noise_quantiles(self, grid: ProbabilityGrid) -> np.ndarray:
        """Quantiles of the standardized noise on a probability grid (cached)."""
        if grid not in self._noise_quantile_cache:
            self._noise_quantile_cache[grid] = self.mixture.quantile(grid.points)
        return self._noise_quantile_cache[grid]

    # -- stochastic code ---------------------------------------------------

    def simulate(self, x, n: int, seed: int) -> SampleBatch:
        """n i.i.d. output draws at x; bit-reproducible for fixed (x, n, seed)."""
        x = np.asarray(x, dtype=np.int64).reshape(-1)
        if not self.grid.contains(x):
            raise DomainError(f"input {tuple(int(c) for c in x)} outside the grid")
        if n < 1:
            raise InvalidInputError("replication count must be at least 1")
        rng = np.random.default_rng(seed)
        t = self.mixture.rvs(n, rng)
        mu = float(self.trend(x)[0])
        s = float(self.spread(x)[0])
        return SampleBatch(mu + s * t, tuple(int(c) for c in x), int(seed))

    def simulate_design(self, points, n: int, base_seed: int) -> list[SampleBatch]:
        """One batch per design row, with per-point seeds derived from base_seed."""
        points = np.atleast_2d(np.asarray(points, dtype=np.int64))
        return [
            self.simulate(x, n, derive_seed(base_seed, i))
            for i, x in enumerate(points)
        ]

    # -- ground-truth oracle ------------------------------------------------

    def true_quantile_function(self, x, grid: ProbabilityGrid) -> QuantileFunction:
        """Exact quantile function Q_x(p) = mu(x) + s(x) * Q_T(p)."""
        x = np.asarray(x, dtype=np.int64).reshape(-1)
        if not self.grid.contains(x):
            raise DomainError(f"input {tuple(int(c) for c in x)} outside the grid")
        qt = self.noise_quantiles(grid)
        mu = float(self.trend(x)[0])
        s = float(self.spread(x)[0])
        return QuantileFunction(grid, mu + s * qt)

    def true_quantile(self, X, p: float) -> np.ndarray:
        """Exact p-quantile of the output for a stack of points."""
        if not 0.0 < p < 1.0:
            raise InvalidInputError(f"probability must lie in (0, 1), got {p}")
        qt = float(self.mixture.quantile(p)[0])
        return self.trend(X) + self.spread(X) * qt
