"""Uniform 1D Dirichlet grid, discrete Laplacian, norms and Poincaré constants.

Fields are plain ``numpy`` arrays holding values at the interior nodes
``x_i = i*h``, ``i = 1..n_interior``; the boundary values are implicitly zero.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np


@dataclass(frozen=True)
class Grid1D:
    """Uniform grid on ``[0, L]`` with ``n_interior`` unknowns."""

    L: float = 1.0
    n_interior: int = 100

    def __post_init__(self):
        if not self.L > 0:
            raise ValueError("L must be positive")
        if int(self.n_interior) != self.n_interior or self.n_interior < 2:
            raise ValueError("n_interior must be an integer >= 2")

    @property
    def h(self) -> float:
        return self.L / (self.n_interior + 1)

    @property
    def x(self) -> np.ndarray:
        return self.h * np.arange(1, self.n_interior + 1)

    def zeros(self) -> np.ndarray:
        return np.zeros(self.n_interior)


class NonFiniteFieldError(FloatingPointError):
    """Raised when a field picks up NaN or Inf entries."""


def check_finite(f: np.ndarray, name: str = "field") -> np.ndarray:
    if not np.all(np.isfinite(f)):
        raise NonFiniteFieldError(f"{name} contains non-finite entries")
    return f


def _padded(f: np.ndarray) -> np.ndarray:
    return np.concatenate(([0.0], f, [0.0]))


def laplacian(f: np.ndarray, grid: Grid1D) -> np.ndarray:
    """Second-order central difference with zero ghost values."""
    fp = _padded(f)
    return (fp[:-2] - 2.0 * fp[1:-1] + fp[2:]) / grid.h**2


def gradient(f: np.ndarray, grid: Grid1D) -> np.ndarray:
    """Forward differences on the ``n_interior + 1`` edges (boundary zeros included)."""
    return np.diff(_padded(f)) / grid.h


def norm_L2_sq(f: np.ndarray, grid: Grid1D) -> float:
    return float(grid.h * np.dot(f, f))


def inner(f: np.ndarray, g: np.ndarray, grid: Grid1D) -> float:
    return float(grid.h * np.dot(f, g))


def grad_norm_sq(f: np.ndarray, grid: Grid1D) -> float:
    """Discrete Dirichlet energy ``h * sum(((f[i+1] - f[i]) / h)**2)`` over all edges.

    Pairs with :func:`laplacian` through summation by parts:
    ``inner(f, laplacian(f)) == -grad_norm_sq(f)``.
    """
    d = gradient(f, grid)
    return float(grid.h * np.dot(d, d))


def norm_Lp1(f: np.ndarray, p: float, grid: Grid1D) -> float:
    """``h * sum(|f|**(p+1))``, i.e. the discrete ``||f||_{p+1}^{p+1}``."""
    if not p > 1:
        raise ValueError("p must exceed 1")
    return float(grid.h * np.sum(np.abs(f) ** (p + 1)))


def first_dirichlet_eigenvalue(grid: Grid1D) -> float:
    """Smallest eigenvalue of ``-laplacian`` on the grid."""
    return 2.0 / grid.h**2 * (1.0 - np.cos(np.pi * grid.h / grid.L))


def poincare_constant(grid: Grid1D, mode: str = "discrete") -> float:
    """Constant ``C_p`` in ``||u||^2 <= C_p ||grad u||^2``.

    ``mode="continuum"`` gives ``(L/pi)**2``; ``mode="discrete"`` gives the
    reciprocal of the smallest discrete Dirichlet eigenvalue, which makes the
    inequality hold exactly for grid functions.
    """
    if mode == "continuum":
        return (grid.L / np.pi) ** 2
    if mode == "discrete":
        return 1.0 / first_dirichlet_eigenvalue(grid)
    raise ValueError(f"unknown Poincaré mode {mode!r}")


def sine_series(coeffs, grid: Grid1D) -> np.ndarray:
    """``sum_k c_k sin(k pi x / L)`` sampled on the interior nodes (k starts at 1)."""
    x = grid.x
    out = grid.zeros()
    for k, c in enumerate(coeffs, start=1):
        if c:
            out += c * np.sin(k * np.pi * x / grid.L)
    return out


def load_field_csv(path, grid: Grid1D) -> np.ndarray:
    """Read a two-column ``x, value`` CSV and linearly interpolate it onto the grid.

    Values outside the sampled range are taken as zero, consistent with the
    Dirichlet boundary.
    """
    data = np.loadtxt(Path(path), delimiter=",", ndmin=2, comments="#")
    if data.shape[1] != 2:
        raise ValueError(f"{path}: expected two columns (x, value)")
    order = np.argsort(data[:, 0])
    xs, vs = data[order, 0], data[order, 1]
    return check_finite(np.interp(grid.x, xs, vs, left=0.0, right=0.0), str(path))
