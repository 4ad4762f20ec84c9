"""Kirchhoff coefficient, energy ``E``, the functional ``I`` and the energy-rate check."""
from __future__ import annotations

import math
from dataclasses import dataclass, fields

import numpy as np

from .kernel import Kernel, kernel_eval
from .spatial import Grid1D, grad_norm_sq, norm_L2_sq, norm_Lp1


@dataclass(frozen=True)
class ModelParams:
    """``M(s) = a + b s**gamma`` and source ``|u|**(p-1) u``; damping is linear."""

    a: float = 1.0
    b: float = 0.0
    gamma: float = 1.0
    p: float = 3.0

    def __post_init__(self):
        if self.a < 0 or self.b < 0:
            raise ValueError("a and b must be non-negative")
        if not self.a + self.b > 0:
            raise ValueError("a + b must be positive")
        if not self.gamma > 0:
            raise ValueError("gamma must be positive")
        if not self.p > 1:
            raise ValueError("p must exceed 1")

    def M(self, s):
        return M_eval(self, s)

    def Mbar(self, s):
        return Mbar_eval(self, s)


def _check_s(s):
    s = np.asarray(s, dtype=float)
    if np.any(s < 0):
        raise ValueError("M is only defined for s >= 0")
    return s


def _out(x):
    return float(x) if np.ndim(x) == 0 else x


def M_eval(params: ModelParams, s):
    s = _check_s(s)
    return _out(params.a + params.b * s**params.gamma)


def Mbar_eval(params: ModelParams, s):
    """Primitive ``int_0^s M = a s + b s**(gamma+1) / (gamma+1)``."""
    s = _check_s(s)
    g = params.gamma
    return _out(params.a * s + params.b * s ** (g + 1) / (g + 1))


def i_functional(u: np.ndarray, params: ModelParams, grid: Grid1D) -> float:
    gs = grad_norm_sq(u, grid)
    return M_eval(params, gs) * gs - norm_Lp1(u, params.p, grid)


def energy_value(u: np.ndarray, u_t: np.ndarray, t: float, params: ModelParams,
                 kernel: Kernel, grid: Grid1D, g_circ_val: float = 0.0) -> float:
    """Energy at one time level given the precomputed ``(g o grad u)(t)``."""
    gs = grad_norm_sq(u, grid)
    mass_t = float(kernel.integral(t))
    return (0.5 * norm_L2_sq(u_t, grid) + 0.5 * Mbar_eval(params, gs)
            - 0.5 * mass_t * gs + 0.5 * g_circ_val
            - norm_Lp1(u, params.p, grid) / (params.p + 1))


def initial_energy(u0: np.ndarray, u1: np.ndarray, params: ModelParams,
                   grid: Grid1D) -> float:
    """``E(0)``; the memory terms vanish at ``t = 0``."""
    return energy_value(u0, u1, 0.0, params, Kernel.zero(), grid)


def energy_rate_rhs(ut_sq: float, grad_sq: float, t: float, kernel: Kernel,
                    gprime_circ_val: float) -> float:
    """``-||u_t||^2 - g(t)/2 ||grad u||^2 + (g' o grad u)/2``; never positive for (A1) kernels."""
    return -ut_sq - 0.5 * kernel_eval(kernel, t) * grad_sq + 0.5 * gprime_circ_val


CSV_COLUMNS = ("t", "E", "I", "L2_sq", "grad_sq", "Linf", "g_circ", "dE_residual",
               "G", "Gp", "Gpp", "concavity_residual")


@dataclass
class DiagnosticsRow:
    """Observed quantities at one accepted time level.

    The first twelve fields are the CSV columns, in order.  The rest are the
    ingredients the energy-identity, lemma and certificate monitors need.
    """

    t: float
    E: float
    I: float
    L2_sq: float
    grad_sq: float
    Linf: float
    g_circ: float = 0.0
    dE_residual: float = math.nan
    G: float = math.nan
    Gp: float = math.nan
    Gpp: float = math.nan
    concavity_residual: float = math.nan
    ut_sq: float = 0.0
    u_ut: float = 0.0
    Lp1: float = 0.0
    M: float = 0.0
    mass_t: float = 0.0
    gprime_circ: float = 0.0
    g_cross: float = 0.0
    rate_rhs: float = 0.0
    identity_residual: float = 0.0

    def csv_values(self) -> tuple:
        return tuple(getattr(self, c) for c in CSV_COLUMNS)

    def as_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


def energy_rate_residual(prev: DiagnosticsRow, cur: DiagnosticsRow,
                         nxt: DiagnosticsRow) -> float:
    """``|central dE/dt - energy_rate_rhs|`` at ``cur``."""
    if prev is None or nxt is None:
        return math.nan
    km, kp = cur.t - prev.t, nxt.t - cur.t
    # three-point derivative, second order on uneven steps as well
    dEdt = (km**2 * (nxt.E - cur.E) + kp**2 * (cur.E - prev.E)) / (km * kp * (km + kp))
    return abs(dEdt - cur.rate_rhs)
