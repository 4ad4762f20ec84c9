"""Explicit damped central-difference time stepping with memory and blow-up control.

The scheme, for steps ``k- = t - t_prev`` and ``k+ = t_next - t``, is::

    2[(u+ - u)/k+ - (u - u-)/k-]/(k+ + k-) + (u+ - u-)/(k+ + k-) = R(u, t)
    R = M(||grad u||^2) lap u - Conv(t) + |u|^(p-1) u + f(x, t)

which on uniform steps is ``u+ = [2u - u- + dt^2 R + (dt/2) u-] / (1 + dt/2)``.
``Conv(t) = int_0^t g(t-s) lap u(s) ds`` uses the trapezoid rule on the
accepted stamps, either by direct quadrature or by the per-mode recurrence.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from . import kernel as kern
from .functionals import (DiagnosticsRow, ModelParams, energy_rate_residual,
                          energy_rate_rhs, energy_value, M_eval)
from .kernel import History, Kernel
from .spatial import Grid1D, gradient, grad_norm_sq, inner, laplacian, norm_L2_sq, norm_Lp1

log = logging.getLogger(__name__)

CONVOLUTION_MODES = ("recurrence", "direct", "crosscheck")


@dataclass
class StepperConfig:
    dt_init: float = 1e-3
    dt_min: float = 1e-12
    dt_max: float = 1e-2
    cfl_safety: float = 0.5
    growth_tol: float = 0.05
    blowup_threshold: float = 1e8
    t_max: float = 1.0
    forcing: Optional[Callable[[np.ndarray, float], np.ndarray]] = None
    convolution: str = "recurrence"
    history_budget: Optional[int] = None
    quiet_steps: int = 10

    def __post_init__(self):
        for name in ("dt_init", "dt_min", "dt_max", "growth_tol", "blowup_threshold", "t_max"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if not self.dt_min <= self.dt_init <= self.dt_max:
            raise ValueError("need dt_min <= dt_init <= dt_max")
        if not 0 < self.cfl_safety <= 1:
            raise ValueError("cfl_safety must lie in (0, 1]")
        if self.convolution not in CONVOLUTION_MODES:
            raise ValueError(f"convolution must be one of {CONVOLUTION_MODES}")
        if self.history_budget is not None and self.history_budget < 4:
            raise ValueError("history_budget must be at least 4")


@dataclass
class SimState:
    t: float
    u: np.ndarray
    u_prev: Optional[np.ndarray]
    u1: np.ndarray
    dt_last: float
    lap: np.ndarray
    acc: np.ndarray
    lap_hist: Optional[History]
    grad_hist: Optional[History]
    step: int = 0
    status: str = "running"
    reason: str = ""
    dt_growth: float = 0.0
    quiet: int = 0
    last_growth: float = 0.0
    crosscheck_max: float = 0.0
    t_prev: float = 0.0


@dataclass(frozen=True)
class BlowupEstimate:
    blown: bool
    T_est: Optional[float] = None
    fit_residual: Optional[float] = None
    n_fit: int = 0


def detect_blowup(times, linf, p: float, threshold: float,
                  status: Optional[str] = None, max_fit: int = 50) -> BlowupEstimate:
    """Flag blow-up and extrapolate its time from ``||u||_inf**(-(p-1)/2)``.

    Near a self-similar blow-up of ``u_tt = |u|^(p-1) u`` the amplitude behaves
    like ``(T - t)**(-2/(p-1))``, so the transformed quantity is linear in
    ``t`` and its root estimates ``T``.
    """
    times = np.asarray(times, dtype=float)
    linf = np.asarray(linf, dtype=float)
    blown = status == "blown-up" or bool(linf.size and np.nanmax(linf) > threshold)
    finite = np.isfinite(linf)
    times, linf = times[finite], linf[finite]
    tail = np.flatnonzero(linf > 0.01 * threshold)[-max_fit:]
    if tail.size < 3:
        return BlowupEstimate(blown)
    y = linf[tail] ** (-(p - 1) / 2)
    tt = times[tail]
    slope, icpt = np.polyfit(tt, y, 1)
    if not slope < 0:
        return BlowupEstimate(blown, None, None, tail.size)
    resid = float(np.sqrt(np.mean((slope * tt + icpt - y) ** 2)))
    return BlowupEstimate(blown, float(-icpt / slope), resid, int(tail.size))


def centered_derivative(f_prev, f, f_next, k_minus: float, k_plus: float):
    """Second-order three-point derivative at the middle of a possibly uneven stencil."""
    return ((k_minus**2 * (f_next - f) + k_plus**2 * (f - f_prev))
            / (k_plus * k_minus * (k_plus + k_minus)))


def adapt_dt(state: SimState, cfg: StepperConfig, params: ModelParams,
             grid: Grid1D) -> Optional[float]:
    """Next step size, or ``None`` when it would collapse below ``dt_min``.

    Takes the minimum of ``dt_max``, the Kirchhoff-scaled CFL bound and the
    growth-controlled step, which halves after a step whose relative
    ``||u||_inf`` growth exceeded ``growth_tol`` and doubles after
    ``quiet_steps`` quiet steps.  The step is clipped to land on ``t_max``.
    """
    m = M_eval(params, grad_norm_sq(state.u, grid))
    cfl = cfg.cfl_safety * grid.h / math.sqrt(max(1.0, m))
    if state.step > 0 and state.last_growth > cfg.growth_tol:
        state.dt_growth = 0.5 * state.dt_last
        state.quiet = 0
    elif state.quiet >= cfg.quiet_steps:
        state.dt_growth = min(2.0 * state.dt_growth, cfg.dt_max)
        state.quiet = 0
    dt = min(cfg.dt_max, cfl, state.dt_growth)
    if dt < cfg.dt_min:
        return None
    remaining = cfg.t_max - state.t
    if dt * (1 + 1e-8) >= remaining:
        dt = remaining
    return dt


@dataclass
class SimulationResult:
    rows: list
    times: np.ndarray
    linf: np.ndarray
    status: str
    reason: str
    t_final: float
    steps: int
    blowup: BlowupEstimate
    E0: float
    crosscheck_max: float = 0.0
    last_good_t: float = 0.0


class Simulation:
    """One trajectory of the viscoelastic Kirchhoff equation on a 1D grid.

    ``monitor`` (optional) receives every finished :class:`DiagnosticsRow`
    through ``monitor.update(row)`` and may fill in certificate columns.
    """

    def __init__(self, u0, u1, params: ModelParams, kernel: Kernel, grid: Grid1D,
                 cfg: StepperConfig, monitor=None, on_row: Optional[Callable] = None):
        self.params, self.kernel, self.grid, self.cfg = params, kernel, grid, cfg
        self.monitor = monitor
        self.on_row = on_row
        u0 = np.array(u0, dtype=float)
        u1 = np.array(u1, dtype=float)
        if u0.shape != (grid.n_interior,) or u1.shape != u0.shape:
            raise ValueError("initial fields must live on the grid's interior nodes")
        mode = cfg.convolution
        if kernel.form == "table" and mode != "direct":
            log.info("tabulated kernel: using direct convolution")
            mode = "direct"
        self.mode = mode
        zero = kernel.is_zero
        n = grid.n_interior
        self.state = SimState(
            t=0.0, u=u0, u_prev=None, u1=u1, dt_last=cfg.dt_init, lap=laplacian(u0, grid),
            acc=np.zeros((0, n)) if kernel.form == "table" else kern.recurrence_init(kernel, n),
            lap_hist=None if zero or mode == "recurrence" else History(n),
            grad_hist=None if zero else History(n + 1),
            dt_growth=cfg.dt_init,
        )
        st = self.state
        if st.lap_hist is not None:
            st.lap_hist.append(0.0, st.lap)
        if st.grad_hist is not None:
            st.grad_hist.append(0.0, gradient(u0, grid))
        self.rows: list[DiagnosticsRow] = []
        self.times = [0.0]
        self.linf = [float(np.max(np.abs(u0)))]
        self._int_ut = self._int_gpc = self._int_ggs = 0.0
        self.E0 = math.nan

    # -- pieces of the right-hand side ---------------------------------------

    def convolution(self) -> np.ndarray:
        st, k = self.state, self.kernel
        if k.is_zero:
            return np.zeros_like(st.u)
        rec = st.acc.sum(axis=0) if self.mode in ("recurrence", "crosscheck") else None
        if self.mode == "recurrence":
            return rec
        direct = kern.convolve_direct(k, st.lap_hist.times, st.lap_hist.values, st.t)
        if self.mode == "crosscheck":
            scale = max(float(np.max(np.abs(direct))), 1e-300)
            st.crosscheck_max = max(st.crosscheck_max,
                                    float(np.max(np.abs(rec - direct))) / scale)
            return rec
        return direct

    def rhs(self, u: np.ndarray, lap: np.ndarray, t: float, conv: np.ndarray) -> np.ndarray:
        p = self.params.p
        m = M_eval(self.params, grad_norm_sq(u, self.grid))
        r = m * lap - conv + np.abs(u) ** (p - 1) * u
        if self.cfg.forcing is not None:
            r = r + self.cfg.forcing(self.grid.x, t)
        return r

    # -- stepping -------------------------------------------------------------

    def step(self) -> SimState:
        """Advance one accepted step and record diagnostics for the current level."""
        st, cfg, grid = self.state, self.cfg, self.grid
        if st.status != "running":
            raise RuntimeError(f"cannot step a {st.status} simulation")
        dt = adapt_dt(st, cfg, self.params, grid)
        if dt is None:
            st.status, st.reason = "blown-up", "dt collapse"
            return st
        conv = self.convolution()
        r = self.rhs(st.u, st.lap, st.t, conv)
        if st.u_prev is None:
            u_next = st.u + dt * st.u1 + 0.5 * dt**2 * (r - st.u1)
        else:
            km = st.dt_last
            u_next = (st.u + (dt / km) * (st.u - st.u_prev) + 0.5 * dt * st.u_prev
                      + 0.5 * dt * (dt + km) * r) / (1.0 + 0.5 * dt)
        t_next = st.t + dt if dt != cfg.t_max - st.t else cfg.t_max

        if not np.all(np.isfinite(u_next)):
            st.status, st.reason = "faulted", f"non-finite field after t={st.t!r}"
            return st

        if st.u_prev is None:
            u_t = st.u1
        else:
            u_t = centered_derivative(st.u_prev, st.u, u_next, st.t - st.t_prev, t_next - st.t)
        self._record_row(u_t, conv)

        lin_old = max(float(np.max(np.abs(st.u))), 1.0)
        lin_new = float(np.max(np.abs(u_next)))
        st.last_growth = (lin_new - float(np.max(np.abs(st.u)))) / lin_old
        st.quiet = st.quiet + 1 if st.last_growth <= 0.5 * cfg.growth_tol else 0

        lap_next = laplacian(u_next, grid)
        if st.acc.shape[0]:
            st.acc = kern.convolve_recurrence_step(st.acc, self.kernel, st.lap, lap_next, dt)
        if st.lap_hist is not None:
            st.lap_hist.append(t_next, lap_next)
            st.lap_hist.thin(cfg.history_budget)
        if st.grad_hist is not None:
            st.grad_hist.append(t_next, gradient(u_next, grid))
            st.grad_hist.thin(cfg.history_budget)

        st.t_prev, st.t = st.t, t_next
        st.u_prev, st.u, st.lap = st.u, u_next, lap_next
        st.dt_last = dt
        st.step += 1
        self.times.append(t_next)
        self.linf.append(lin_new)

        if lin_new > cfg.blowup_threshold:
            st.status, st.reason = "blown-up", "threshold"
        elif st.t >= cfg.t_max:
            st.status = "completed"
        return st

    def _record_final_row(self) -> None:
        """Diagnostics at ``t_max`` from a trial step that is not committed."""
        st = self.state
        if st.u_prev is None:
            return
        conv = self.convolution()
        r = self.rhs(st.u, st.lap, st.t, conv)
        k = st.dt_last
        u_trial = (st.u + (st.u - st.u_prev) + 0.5 * k * st.u_prev + k * k * r) / (1.0 + 0.5 * k)
        self._record_row(centered_derivative(st.u_prev, st.u, u_trial, st.t - st.t_prev, k),
                         conv)

    def _record_row(self, u_t: np.ndarray, conv: np.ndarray) -> None:
        st, grid, params, k = self.state, self.grid, self.params, self.kernel
        u, t = st.u, st.t
        gs = grad_norm_sq(u, grid)
        gc = gpc = 0.0
        if st.grad_hist is not None:
            times, vals = st.grad_hist.times, st.grad_hist.values
            d2 = kern.history_sq_distances(times, vals, vals[-1], grid.h)
            w = kern.trapezoid_weights(times)
            lags = np.maximum(t - times, 0.0)
            gc = float(np.dot(w * kern.kernel_eval(k, lags), d2))
            gpc = float(np.dot(w * k.derivative(lags), d2))
        ut_sq = norm_L2_sq(u_t, grid)
        lp1 = norm_Lp1(u, params.p, grid)
        m = M_eval(params, gs)
        row = DiagnosticsRow(
            t=t, E=energy_value(u, u_t, t, params, k, grid, gc), I=m * gs - lp1,
            L2_sq=norm_L2_sq(u, grid), grad_sq=gs, Linf=float(np.max(np.abs(u))),
            g_circ=gc, ut_sq=ut_sq, u_ut=inner(u, u_t, grid), Lp1=lp1, M=m,
            mass_t=float(k.integral(t)), gprime_circ=gpc,
            g_cross=-inner(u, conv, grid),
            rate_rhs=energy_rate_rhs(ut_sq, gs, t, k, gpc),
        )
        if not self.rows:
            self.E0 = row.E
        else:
            prev = self.rows[-1]
            half = 0.5 * (row.t - prev.t)
            self._int_ut += half * (prev.ut_sq + row.ut_sq)
            self._int_gpc += half * (prev.gprime_circ + row.gprime_circ)
            self._int_ggs += half * (kern.kernel_eval(k, prev.t) * prev.grad_sq
                                     + kern.kernel_eval(k, row.t) * row.grad_sq)
        row.identity_residual = (row.E - self.E0 + self._int_ut - 0.5 * self._int_gpc
                                 + 0.5 * self._int_ggs)
        if self.monitor is not None:
            self.monitor.update(row)
        if self.rows:
            prev = self.rows[-2] if len(self.rows) >= 2 else None
            self._finalize(self.rows[-1], prev, row)
        self.rows.append(row)

    def _finalize(self, row, prev, nxt) -> None:
        row.dE_residual = energy_rate_residual(prev, row, nxt)
        if self.on_row is not None:
            self.on_row(row)

    def run(self) -> SimulationResult:
        st = self.state
        while st.status == "running":
            self.step()
        if st.status == "completed":
            self._record_final_row()
        if self.on_row is not None and self.rows:
            self.on_row(self.rows[-1])
        last_good = self.rows[-1].t if self.rows else 0.0
        if st.status == "faulted":
            log.warning("simulation faulted: %s", st.reason)
        est = detect_blowup(self.times, self.linf, self.params.p,
                            self.cfg.blowup_threshold, st.status)
        return SimulationResult(
            rows=self.rows, times=np.array(self.times), linf=np.array(self.linf),
            status=st.status, reason=st.reason, t_final=st.t, steps=st.step,
            blowup=est, E0=self.E0, crosscheck_max=st.crosscheck_max, last_good_t=last_good)


def simulate(u0, u1, params: ModelParams, kernel: Kernel, grid: Grid1D,
             cfg: StepperConfig, monitor=None, on_row=None) -> SimulationResult:
    return Simulation(u0, u1, params, kernel, grid, cfg, monitor, on_row).run()
