"""Greedy functional basis selection and nonnegative projection.

A small number q of representative quantile functions is picked from a
learning sample by a greedy max-residual rule; every quantile function is
then approximated by a nonnegative combination of the picks.  Nonnegative
coefficients keep any reconstruction monotone, so reconstructions remain
valid quantile functions.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import nnls

from .errors import InvalidInputError
from .quantile import (
    ProbabilityGrid,
    QuantileFunction,
    l2_norm,
    read_quantile_csv,
    write_quantile_csv,
)

__all__ = [
    "QuantileBasis",
    "mmp_select",
    "choose_basis_size",
    "project_nonneg",
    "reconstruct",
    "save_basis",
    "load_basis",
]

# KKT tolerance for the active-set nonnegative least-squares solves
_NNLS_ATOL = 1e-10

# residual below this relative level means the candidates are numerically
# inside the span of the current basis
_DEGENERACY_RTOL = 1e-9


@dataclass(frozen=True)
class QuantileBasis:
    """Selected basis quantile functions plus selection metadata."""

    functions: tuple[QuantileFunction, ...]
    selected_indices: tuple[int, ...]
    step_residuals: tuple[float, ...]
    selected_inputs: np.ndarray | None = field(default=None, compare=False)

    def __post_init__(self):
        if not self.functions:
            raise InvalidInputError("a basis needs at least one function")
        grid = self.functions[0].grid
        for f in self.functions[1:]:
            if f.grid != grid:
                raise InvalidInputError("basis functions are on different grids")

    @property
    def q(self) -> int:
        return len(self.functions)

    @property
    def grid(self) -> ProbabilityGrid:
        return self.functions[0].grid

    def matrix(self) -> np.ndarray:
        """Basis values as columns, shape (grid size, q)."""
        return np.column_stack([f.values for f in self.functions])

    def values_at(self, p: float) -> np.ndarray:
        """Basis values interpolated at one probability, shape (q,)."""
        pts = self.grid.points
        return np.array([np.interp(p, pts, f.values) for f in self.functions])


def _projection_residual(
    weighted_basis: np.ndarray, weighted_target: np.ndarray
) -> tuple[np.ndarray, float]:
    psi, rnorm = nnls(weighted_basis, weighted_target, atol=_NNLS_ATOL)
    return psi, float(rnorm)


def project_nonneg(
    f: QuantileFunction, basis: QuantileBasis
) -> tuple[np.ndarray, float]:
    """Best nonnegative combination of the basis, in the L2 sense.

    Returns the coefficient vector (length q, all >= 0) and the achieved L2
    distance.  Solved by active-set nonnegative least squares on the
    quadrature-weighted grid, so the residual agrees with
    :func:`quantemu.quantile.l2_distance` of the reconstruction.
    """
    if f.grid != basis.grid:
        raise InvalidInputError("function and basis are on different grids")
    sqrt_w = np.sqrt(f.grid.weights())
    psi, resid = _projection_residual(
        basis.matrix() * sqrt_w[:, None], f.values * sqrt_w
    )
    return psi, resid


def reconstruct(psi, basis: QuantileBasis) -> QuantileFunction:
    """Nonnegative combination of the basis functions.

    Monotone by construction because every basis function is monotone and
    all coefficients are nonnegative.
    """
    psi = np.asarray(psi, dtype=float).reshape(-1)
    if psi.size != basis.q:
        raise InvalidInputError(f"expected {basis.q} coefficients, got {psi.size}")
    if np.any(psi < 0.0):
        raise InvalidInputError("coefficients must be nonnegative")
    if not np.any(psi > 0.0):
        warnings.warn(
            "all-zero coefficients: reconstruction degenerates to the zero function",
            stacklevel=2,
        )
    return QuantileFunction(basis.grid, basis.matrix() @ psi)


def mmp_select(
    outputs: list[QuantileFunction] | tuple[QuantileFunction, ...],
    q: int,
    inputs=None,
) -> QuantileBasis:
    """Greedy selection of q basis functions from a learning sample.

    The first pick is the output with maximal L2 norm; each later pick is the
    output farthest (in L2) from its own nonnegative projection onto the
    functions picked so far.  Ties break toward the lowest sample index.  If
    every remaining candidate is numerically inside the current span, a
    degeneracy warning is emitted and the greedy rule keeps picking anyway.
    """
    outputs = list(outputs)
    if not outputs:
        raise InvalidInputError("cannot select a basis from an empty sample")
    if not 1 <= q <= len(outputs):
        raise InvalidInputError(f"basis size {q} must lie in 1..{len(outputs)}")
    grid = outputs[0].grid
    for f in outputs[1:]:
        if f.grid != grid:
            raise InvalidInputError("learning outputs are on different grids")

    sqrt_w = np.sqrt(grid.weights())
    targets = np.column_stack([f.values for f in outputs]) * sqrt_w[:, None]

    norms = [l2_norm(f) for f in outputs]
    selected = [int(np.argmax(norms))]
    step_residuals = [float(norms[selected[0]])]
    scale = max(step_residuals[0], 1.0)

    while len(selected) < q:
        chosen = {tuple(outputs[i].values) for i in selected}
        candidates = [
            i
            for i in range(len(outputs))
            if i not in selected and tuple(outputs[i].values) not in chosen
        ]
        if not candidates:
            raise InvalidInputError(
                f"only {len(selected)} distinct outputs available, need {q}"
            )
        A = targets[:, selected]
        residuals = np.array(
            [_projection_residual(A, targets[:, i])[1] for i in candidates]
        )
        best = int(np.argmax(residuals))
        if residuals[best] <= _DEGENERACY_RTOL * scale:
            warnings.warn(
                "remaining outputs are numerically spanned by the current basis; "
                "further picks are degenerate",
                stacklevel=2,
            )
        selected.append(candidates[best])
        step_residuals.append(float(residuals[best]))

    return QuantileBasis(
        functions=tuple(outputs[i] for i in selected),
        selected_indices=tuple(selected),
        step_residuals=tuple(step_residuals),
        selected_inputs=(
            np.asarray(inputs)[selected] if inputs is not None else None
        ),
    )


def choose_basis_size(
    outputs,
    threshold: float = 0.01,
    q_max: int | None = None,
) -> int:
    """Smallest basis size whose worst relative projection error over the
    sample falls below ``threshold`` (greedy prefixes are nested, so one
    greedy pass suffices).  Falls back to ``q_max`` when never reached."""
    outputs = list(outputs)
    q_max = min(q_max or len(outputs), len(outputs))
    big = mmp_select(outputs, q_max)
    norms = np.array([max(l2_norm(f), 1e-300) for f in outputs])
    for j in range(1, q_max + 1):
        prefix = QuantileBasis(
            functions=big.functions[:j],
            selected_indices=big.selected_indices[:j],
            step_residuals=big.step_residuals[:j],
        )
        rel = np.array(
            [project_nonneg(f, prefix)[1] for f in outputs]
        ) / norms
        if float(np.max(rel)) <= threshold:
            return j
    return q_max


def save_basis(basis: QuantileBasis, directory) -> None:
    """Dump one CSV per basis function plus a JSON manifest."""
    from pathlib import Path

    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for j, f in enumerate(basis.functions, start=1):
        write_quantile_csv(f, directory / f"basis_{j:02d}.csv")
    manifest = {
        "q": basis.q,
        "selected_indices": list(basis.selected_indices),
        "step_residuals": list(basis.step_residuals),
        "selected_inputs": (
            basis.selected_inputs.tolist() if basis.selected_inputs is not None else None
        ),
    }
    with open(directory / "basis_manifest.json", "w", encoding="ascii", newline="\n") as fh:
        json.dump(manifest, fh, sort_keys=True, indent=1)
        fh.write("\n")


def load_basis(directory) -> QuantileBasis:
    from pathlib import Path

    directory = Path(directory)
    with open(directory / "basis_manifest.json", "r", encoding="ascii") as fh:
        manifest = json.load(fh)
    functions = tuple(
        read_quantile_csv(directory / f"basis_{j:02d}.csv")
        for j in range(1, manifest["q"] + 1)
    )
    inputs = manifest.get("selected_inputs")
    return QuantileBasis(
        functions=functions,
        selected_indices=tuple(manifest["selected_indices"]),
        step_residuals=tuple(manifest["step_residuals"]),
        selected_inputs=np.asarray(inputs) if inputs is not None else None,
    )
