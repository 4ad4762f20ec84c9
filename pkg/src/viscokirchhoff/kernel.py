"""Memory kernels ``g``, the (A1)/(A2) assumption checks and history convolutions.

All history quadratures use the composite trapezoid rule on the (possibly
nonuniform) stored time stamps, so the direct and recurrence paths compute the
same discrete quantity.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .spatial import Grid1D

FORMS = ("zero", "expsum", "table")
TOL_A2 = 1e-10


class UnsupportedKernelError(TypeError):
    pass


@dataclass(frozen=True)
class Kernel:
    """Relaxation kernel ``g(t)``.

    Use the constructors :meth:`zero`, :meth:`expsum`, :meth:`table` or
    :meth:`from_csv` rather than the raw dataclass fields.

    For ``form="expsum"``, ``terms`` holds ``(g0_i, kappa_i)`` pairs and
    ``g(t) = sum_i g0_i * exp(-kappa_i * t)``.  For ``form="table"`` the
    samples are linearly interpolated and continued past the last sample by an
    exponential tail with rate ``tail_rate``.
    """

    form: str = "zero"
    terms: tuple = ()
    t_samples: tuple = ()
    g_samples: tuple = ()
    tail_rate: float = 0.0

    def __post_init__(self):
        if self.form not in FORMS:
            raise ValueError(f"unknown kernel form {self.form!r}")
        if self.form == "expsum":
            for g0, kappa in self.terms:
                if g0 < 0 or not kappa > 0:
                    raise ValueError("expsum terms need g0 >= 0 and kappa > 0")

    @classmethod
    def zero(cls) -> "Kernel":
        return cls("zero")

    @classmethod
    def expsum(cls, terms) -> "Kernel":
        terms = tuple((float(g0), float(k)) for g0, k in terms)
        if not terms:
            return cls.zero()
        return cls("expsum", terms=terms)

    @classmethod
    def table(cls, t, g) -> "Kernel":
        t = np.asarray(t, dtype=float)
        g = np.asarray(g, dtype=float)
        if t.ndim != 1 or t.shape != g.shape or t.size < 2:
            raise ValueError("tabulated kernel needs at least two (t, g) samples")
        if t[0] != 0.0:
            raise ValueError("tabulated kernel must start at t = 0")
        if np.any(np.diff(t) <= 0):
            raise ValueError("tabulated kernel times must be strictly increasing")
        return cls("table", t_samples=tuple(t), g_samples=tuple(g),
                   tail_rate=_fit_tail_rate(t, g))

    @classmethod
    def from_csv(cls, path) -> "Kernel":
        data = np.loadtxt(Path(path), delimiter=",", ndmin=2, comments="#")
        if data.shape[1] != 2:
            raise ValueError(f"{path}: expected two columns (t, g)")
        return cls.table(data[:, 0], data[:, 1])

    @property
    def is_zero(self) -> bool:
        return self.form == "zero" or (
            self.form == "expsum" and all(g0 == 0 for g0, _ in self.terms))

    @property
    def coefficients(self) -> tuple[np.ndarray, np.ndarray]:
        """``(g0, kappa)`` arrays of an exponential sum."""
        if self.form == "zero":
            return np.zeros(0), np.zeros(0)
        if self.form != "expsum":
            raise UnsupportedKernelError("only exponential-sum kernels have modes")
        arr = np.array(self.terms, dtype=float)
        return arr[:, 0], arr[:, 1]

    def __call__(self, t):
        return kernel_eval(self, t)

    def derivative(self, t):
        """``g'(t)``: closed form for exponential sums, segment slopes for tables."""
        t = _nonneg(t)
        if self.form == "zero":
            return np.zeros_like(t)
        if self.form == "expsum":
            g0, kappa = self.coefficients
            return -np.sum(g0 * kappa * np.exp(-np.multiply.outer(t, kappa)), axis=-1)
        ts, gs = np.array(self.t_samples), np.array(self.g_samples)
        slopes = np.diff(gs) / np.diff(ts)
        idx = np.clip(np.searchsorted(ts, t, side="right") - 1, 0, len(slopes) - 1)
        tail = -self.tail_rate * gs[-1] * np.exp(-self.tail_rate * (t - ts[-1]))
        return np.where(t >= ts[-1], tail, slopes[idx])

    def integral(self, t):
        """``int_0^t g(s) ds`` in closed form (exact for the linear interpolant)."""
        t = _nonneg(t)
        if self.form == "zero":
            return np.zeros_like(t)
        if self.form == "expsum":
            g0, kappa = self.coefficients
            return np.sum(g0 / kappa * -np.expm1(-np.multiply.outer(t, kappa)), axis=-1)
        ts, gs = np.array(self.t_samples), np.array(self.g_samples)
        cum = np.concatenate(([0.0], np.cumsum(0.5 * np.diff(ts) * (gs[:-1] + gs[1:]))))
        idx = np.clip(np.searchsorted(ts, t, side="right") - 1, 0, len(ts) - 2)
        inside = cum[idx] + 0.5 * (t - ts[idx]) * (gs[idx] + np.interp(t, ts, gs))
        dt_tail = np.maximum(t - ts[-1], 0.0)
        if self.tail_rate > 0:
            tail = gs[-1] / self.tail_rate * -np.expm1(-self.tail_rate * dt_tail)
        else:
            tail = gs[-1] * dt_tail
        return np.where(t >= ts[-1], cum[-1] + tail, inside)

    @property
    def total_mass(self) -> float:
        """``int_0^inf g``; ``inf`` for a tabulated kernel with a non-decaying tail."""
        if self.form == "zero":
            return 0.0
        if self.form == "expsum":
            g0, kappa = self.coefficients
            return float(np.sum(g0 / kappa))
        ts, gs = np.array(self.t_samples), np.array(self.g_samples)
        body = float(np.sum(0.5 * np.diff(ts) * (gs[:-1] + gs[1:])))
        if gs[-1] == 0:
            return body
        if self.tail_rate <= 0:
            return float("inf")
        return body + gs[-1] / self.tail_rate


def _nonneg(t) -> np.ndarray:
    t = np.asarray(t, dtype=float)
    if np.any(t < 0):
        raise ValueError("kernel evaluated at negative time")
    return t


def _fit_tail_rate(t: np.ndarray, g: np.ndarray, n_fit: int = 3) -> float:
    """Least-squares decay rate of ``log g`` over the last few positive samples."""
    if g[-1] <= 0:
        return 0.0
    tt, gg = t[-n_fit:], g[-n_fit:]
    keep = gg > 0
    if keep.sum() < 2:
        return 0.0
    slope = np.polyfit(tt[keep], np.log(gg[keep]), 1)[0]
    return max(-float(slope), 0.0)


def kernel_eval(k: Kernel, t):
    """Evaluate ``g(t)``; scalar in, float out, array in, array out."""
    t = _nonneg(t)
    if k.form == "zero":
        out = np.zeros_like(t)
    elif k.form == "expsum":
        g0, kappa = k.coefficients
        out = np.sum(g0 * np.exp(-np.multiply.outer(t, kappa)), axis=-1)
    else:
        ts, gs = np.array(k.t_samples), np.array(k.g_samples)
        tail = gs[-1] * np.exp(-k.tail_rate * np.maximum(t - ts[-1], 0.0))
        out = np.where(t > ts[-1], tail, np.interp(t, ts, gs))
    return float(out) if out.ndim == 0 else out


# ---------------------------------------------------------------------------
# assumption checks
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class A1Report:
    mass: float
    l: float
    ok: bool
    reason: str = ""


def check_A1(k: Kernel, n_probe: int = 2001) -> A1Report:
    """Non-negativity, monotonicity and ``l = 1 - int g > 0``."""
    mass = k.total_mass
    reasons = []
    if k.form == "table":
        gs = np.array(k.g_samples)
        if np.any(gs < 0):
            reasons.append("g has negative samples")
        if np.any(np.diff(gs) > 0):
            reasons.append("g increases between samples")
        if k.tail_rate <= 0 and gs[-1] > 0:
            reasons.append("tail does not decay")
    elif k.form == "expsum":
        span = 10.0 / min(kappa for _, kappa in k.terms)
        vals = kernel_eval(k, np.linspace(0.0, span, n_probe))
        if np.any(vals < 0) or np.any(np.diff(vals) > 0):
            reasons.append("g fails sampled non-negativity/monotonicity")
    if not mass < 1:
        reasons.append(f"total mass {mass:.6g} >= 1")
    return A1Report(mass=mass, l=1.0 - mass, ok=not reasons, reason="; ".join(reasons))


@dataclass(frozen=True)
class PositiveTypeReport:
    tested_functions: int
    min_Q: float
    verdict: str  # "passed-samples" | "failed" | "certified-sufficient"
    tol: float = 0.0
    worst_function: str = ""


def positive_type_form(k: Kernel, v: np.ndarray, s: np.ndarray) -> tuple[float, float]:
    """Trapezoid value of ``int_0^t v(s) int_0^s e^{(s-z)/2} g(s-z) v(z) dz ds``.

    Returns ``(Q, scale)`` where ``scale`` is the same quadrature with absolute
    values, used to set the rounding floor.
    """
    ds = np.diff(s)
    lag = s[:, None] - s[None, :]
    lower = lag >= 0
    K = np.where(lower, np.exp(0.5 * np.where(lower, lag, 0.0)) *
                 kernel_eval(k, np.where(lower, lag, 0.0)), 0.0)
    n = len(s)
    # inner trapezoid weights on [0, s_i]
    W = np.zeros((n, n))
    for i in range(1, n):
        W[i, :i] += 0.5 * ds[:i]
        W[i, 1:i + 1] += 0.5 * ds[:i]
    outer = np.zeros(n)
    outer[:-1] += 0.5 * ds
    outer[1:] += 0.5 * ds
    KW = K * W
    Q = float(outer @ (v * (KW @ v)))
    scale = float(outer @ (np.abs(v) * (np.abs(KW) @ np.abs(v))))
    return Q, scale


def _test_battery(horizon: float, samples: int, rng: np.random.Generator, s: np.ndarray):
    for k in range(1, samples + 1):
        yield f"sin{k}", np.sin(k * np.pi * s / horizon)
        yield f"cos{k}", np.cos(k * np.pi * s / horizon)
    xi = 2.0 * s / horizon - 1.0
    for deg in range(samples + 1):
        coef = np.zeros(deg + 1)
        coef[-1] = 1.0
        yield f"legendre{deg}", np.polynomial.legendre.legval(xi, coef)
    for j in range(samples):
        knots = np.linspace(0.0, horizon, 9)
        yield f"pwlin{j}", np.interp(s, knots, rng.uniform(-1.0, 1.0, knots.size))


def check_A2(k: Kernel, horizon: float, samples: int, *, n_quad: int = 401,
             force_quadrature: bool = False, seed: int = 0) -> PositiveTypeReport:
    """Sampled test of the positive-type condition on ``e^{t/2} g(t)``.

    A sampled check can only falsify. The single positive certificate is the
    exponential-sum fast path: with every ``kappa_i >= 1/2`` the weighted kernel
    is completely monotone, hence of positive type.
    """
    if not horizon > 0 or samples < 1:
        raise ValueError("need horizon > 0 and samples >= 1")
    if not force_quadrature and k.form == "expsum" and all(
            kappa >= 0.5 for _, kappa in k.terms):
        return PositiveTypeReport(0, 0.0, "certified-sufficient")
    s = np.linspace(0.0, horizon, n_quad)
    rng = np.random.default_rng(seed)
    results = [(name, *positive_type_form(k, v, s))
               for name, v in _test_battery(horizon, samples, rng, s)]
    tol = TOL_A2 * max(scale for _, _, scale in results)
    name, min_q, _ = min(results, key=lambda r: r[1])
    verdict = "failed" if min_q < -tol else "passed-samples"
    return PositiveTypeReport(len(results), min_q, verdict, tol, name)


# ---------------------------------------------------------------------------
# history convolutions
# ---------------------------------------------------------------------------

@dataclass
class History:
    """Append-only record of time-stamped fields with amortized growth."""

    width: int
    _t: np.ndarray = field(init=False, repr=False)
    _w: np.ndarray = field(init=False, repr=False)
    size: int = field(init=False, default=0)

    def __post_init__(self):
        self._t = np.empty(64)
        self._w = np.empty((64, self.width))

    def append(self, t: float, w: np.ndarray) -> None:
        if self.size and not t > self._t[self.size - 1]:
            raise ValueError("history timestamps must be strictly increasing")
        if self.size == len(self._t):
            self._t = np.concatenate((self._t, np.empty(self.size)))
            self._w = np.concatenate((self._w, np.empty((self.size, self.width))))
        self._t[self.size] = t
        self._w[self.size] = w
        self.size += 1

    @property
    def times(self) -> np.ndarray:
        return self._t[: self.size]

    @property
    def values(self) -> np.ndarray:
        return self._w[: self.size]

    def __len__(self):
        return self.size

    def thin(self, budget: int) -> None:
        """Drop every other sample in the older half once ``budget`` is exceeded.

        The first sample is always kept, so trapezoid sums still start at 0.
        """
        if budget is None or self.size <= budget:
            return
        half = self.size // 2
        keep = np.concatenate((np.arange(0, half, 2), np.arange(half, self.size)))
        n = keep.size
        self._t[:n] = self._t[keep]
        self._w[:n] = self._w[keep]
        self.size = n


def trapezoid_weights(times: np.ndarray) -> np.ndarray:
    w = np.zeros(len(times))
    if len(times) > 1:
        d = np.diff(times)
        w[:-1] += 0.5 * d
        w[1:] += 0.5 * d
    return w


def _checked_times(times: np.ndarray, t: float) -> np.ndarray:
    times = np.asarray(times, dtype=float)
    if times.size and np.any(np.diff(times) <= 0):
        raise ValueError("history timestamps must be strictly increasing")
    if times.size and not np.isclose(times[-1], t, rtol=1e-12, atol=1e-14):
        raise ValueError("history must end at the evaluation time")
    return times


def convolve_direct(k: Kernel, times, values, t: float) -> np.ndarray:
    """``int_0^t g(t-s) w(s) ds`` nodewise, trapezoid over the stored stamps."""
    values = np.asarray(values, dtype=float)
    times = _checked_times(times, t)
    if times.size == 0 or k.is_zero:
        return np.zeros(values.shape[-1]) if values.ndim == 2 else np.zeros(0)
    weights = trapezoid_weights(times) * kernel_eval(k, np.maximum(t - times, 0.0))
    return weights @ values


def recurrence_init(k: Kernel, width: int) -> np.ndarray:
    g0, _ = k.coefficients
    return np.zeros((g0.size, width))


def convolve_recurrence_step(acc: np.ndarray, k: Kernel, w_old: np.ndarray,
                             w_new: np.ndarray, dt: float) -> np.ndarray:
    """Advance per-mode accumulators ``F_i`` over one step of length ``dt``.

    ``F_i <- e^{-kappa_i dt} F_i + dt/2 * g0_i (e^{-kappa_i dt} w_old + w_new)``,
    which is the trapezoid rule for mode ``i`` on the new interval, so that
    ``F.sum(axis=0)`` matches :func:`convolve_direct` on the same stamps.
    """
    if k.form == "table":
        raise UnsupportedKernelError("recurrence needs an exponential-sum kernel")
    if not dt > 0:
        raise ValueError("dt must be positive")
    g0, kappa = k.coefficients
    if g0.size == 0:
        return acc
    decay = np.exp(-kappa * dt)[:, None]
    return decay * acc + (0.5 * dt * g0)[:, None] * (decay * w_old[None, :] + w_new[None, :])


def history_sq_distances(times, values, w_now: np.ndarray, weight: float) -> np.ndarray:
    """``weight * sum((w_now - w(s_j))**2)`` for each stored stamp."""
    diff = np.asarray(values) - w_now[None, :]
    return weight * np.einsum("ij,ij->i", diff, diff)


def g_circ(k: Kernel, times, values, w_now: np.ndarray, t: float, grid: Grid1D,
           derivative: bool = False) -> float:
    """``(g o w)(t) = int_0^t g(t-s) ||w(t) - w(s)||^2 ds`` by trapezoid in ``s``.

    ``values`` may be node fields or edge (gradient) fields; the squared norm
    is ``h * sum`` either way.  With ``derivative=True`` the kernel is replaced
    by ``g'`` (the ``g' o w`` term of the energy rate).
    """
    times = _checked_times(times, t)
    if times.size == 0 or k.is_zero:
        return 0.0
    d2 = history_sq_distances(times, values, w_now, grid.h)
    lags = np.maximum(t - times, 0.0)
    gk = k.derivative(lags) if derivative else kernel_eval(k, lags)
    return float(np.dot(trapezoid_weights(times) * gk, d2))
