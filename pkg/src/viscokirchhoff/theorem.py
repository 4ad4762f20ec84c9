"""Blow-up certificates: (A3) constants, hypotheses on the data, and the concavity monitor.

The certificate instantiates the concavity argument for one datum
``(u0, u1)``: with

    G(t) = ||u||^2 + int_0^t ||u||^2 + (T0 - t)||u0||^2 + beta (t2 + t)^2

the quantity ``G'' G - (p+3)/4 G'^2`` stays non-negative, so ``G**(-theta)``
with ``theta = (p-1)/4`` is concave and ``G`` blows up no later than
``G(0) / (theta G'(0))``.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from .dynamics import centered_derivative
from .functionals import DiagnosticsRow, ModelParams, M_eval, Mbar_eval, initial_energy
from .kernel import Kernel
from .spatial import (Grid1D, grad_norm_sq, inner, norm_L2_sq, norm_Lp1,
                      poincare_constant, sine_series)

STRICT_TOL = 1e-12


class NoCertificateError(ValueError):
    """Neither branch of the (A3) replacement condition holds."""


class InfeasibleCertificateError(ValueError):
    pass


class InvalidCertificateError(ValueError):
    pass


@dataclass(frozen=True)
class Remark1Constants:
    m1: float
    alpha: float
    branch: str  # "a>0" or "a=0"
    s_min: float = 0.0  # (A3) is only claimed for s >= s_min


def remark1_constants(params: ModelParams, kernel: Kernel, u0: np.ndarray,
                      grid: Grid1D, cp_mode: str = "discrete") -> Remark1Constants:
    """``(m1, alpha=1)`` for ``M(s) = a + b s**gamma`` under the mass condition.

    For ``a = 0`` the bound relies on ``||grad u(t)||^2 >= ||u0||^2 / C_p``
    along the flow, so the returned ``s_min`` records where (A3) is valid.
    """
    a, b, gam, p = params.a, params.b, params.gamma, params.p
    mass = kernel.total_mass
    if b > 0 and not p > 1 + 2 * gam:
        raise NoCertificateError(f"p > 1 + 2*gamma violated: p={p!r}, gamma={gam!r}")
    if a > 0:
        bound = (p - 1) * a / (p + 1)
        if not mass < bound:
            raise NoCertificateError(
                f"int g < (p-1)a/(p+1) violated: {mass!r} >= {bound!r}")
        return Remark1Constants(0.5 * (bound - mass), 1.0, "a>0")
    cp = poincare_constant(grid, cp_mode)
    l2 = norm_L2_sq(u0, grid)
    bound = (p - 1 - 2 * gam) * b * l2**gam / (cp**gam * (p + 1) * (gam + 1))
    if not mass < bound:
        raise NoCertificateError(
            "int g < (p-1-2gamma) b ||u0||^(2gamma) / (C_p^gamma (p+1)(gamma+1)) "
            f"violated: {mass!r} >= {bound!r}")
    return Remark1Constants((p + 1) / 4 * (bound - mass), 1.0, "a=0", s_min=l2 / cp)


def a3_lhs(params: ModelParams, mass: float, s):
    """``(p+1)/2 Mbar(s) - [M(s) + (p+1)/2 mass] s`` (worst case over ``t``)."""
    p = params.p
    return (p + 1) / 2 * Mbar_eval(params, s) - (M_eval(params, s) + (p + 1) / 2 * mass) * s


@dataclass(frozen=True)
class A3Check:
    ok: bool
    violating_s: Optional[float] = None
    margin: float = math.inf


def check_A3_sampled(params: ModelParams, kernel_or_mass, m1: float, alpha: float,
                     s_samples) -> A3Check:
    """Check ``a3_lhs(s) >= m1 s**alpha`` on the given samples.

    ``int_0^t g`` is replaced by the total mass, which is the worst case
    because ``g >= 0``.
    """
    mass = (kernel_or_mass.total_mass if isinstance(kernel_or_mass, Kernel)
            else float(kernel_or_mass))
    s = np.asarray(s_samples, dtype=float)
    lhs = a3_lhs(params, mass, s)
    rhs = m1 * s**alpha
    slack = lhs - rhs
    floor = -1e-12 * (np.abs(lhs) + np.abs(rhs))
    bad = np.flatnonzero(slack < floor)
    margin = float(np.min(slack)) if s.size else math.inf
    if bad.size:
        return A3Check(False, float(s[bad[0]]), margin)
    return A3Check(True, None, margin)


@dataclass(frozen=True)
class HypothesisResult:
    lhs: float
    rhs: float
    ok: bool


@dataclass
class Certificate:
    """Constants and hypothesis truth table for one datum."""

    p: float
    hypotheses: dict
    m1: Optional[float] = None
    alpha: Optional[float] = None
    branch: Optional[str] = None
    E0: float = math.nan
    L2_0: float = math.nan
    u0u1: float = math.nan
    grad_sq_0: float = math.nan
    Cp: float = math.nan
    components: dict = field(default_factory=dict)
    beta: Optional[float] = None
    t2: Optional[float] = None
    T0: Optional[float] = None
    G0: Optional[float] = None
    Gp0: Optional[float] = None
    tstar_bound: Optional[float] = None
    error: str = ""

    @property
    def theta(self) -> float:
        return (self.p - 1) / 4

    @property
    def hypotheses_ok(self) -> bool:
        return bool(self.hypotheses) and all(h.ok for h in self.hypotheses.values())

    @property
    def valid(self) -> bool:
        return self.hypotheses_ok and self.T0 is not None

    def to_dict(self) -> dict:
        d = {k: v for k, v in asdict(self).items() if k != "hypotheses"}
        d["hypotheses"] = {k: asdict(v) for k, v in self.hypotheses.items()}
        d["theta"] = self.theta
        d["hypotheses_ok"] = self.hypotheses_ok
        d["valid"] = self.valid
        return d


def _strict_pos(value: float, scale: float) -> bool:
    return value > STRICT_TOL * max(scale, 1.0)


def check_hypotheses(u0: np.ndarray, u1: np.ndarray, params: ModelParams, kernel: Kernel,
                     grid: Grid1D, *, m1: Optional[float] = None,
                     alpha: Optional[float] = None, cp_mode: str = "discrete") -> Certificate:
    """Evaluate the four blow-up conditions with both sides recorded.

    ``m1``/``alpha`` override the mass-condition constants; otherwise a
    :class:`NoCertificateError` from :func:`remark1_constants` propagates.
    """
    p = params.p
    branch = None
    if m1 is None or alpha is None:
        rc = remark1_constants(params, kernel, u0, grid, cp_mode)
        m1 = rc.m1 if m1 is None else m1
        alpha = rc.alpha if alpha is None else alpha
        branch = rc.branch
    cp = poincare_constant(grid, cp_mode)
    gs0 = grad_norm_sq(u0, grid)
    l2 = norm_L2_sq(u0, grid)
    lp1 = norm_Lp1(u0, p, grid)
    kin = norm_L2_sq(u1, grid)
    e0 = initial_energy(u0, u1, params, grid)
    i0 = M_eval(params, gs0) * gs0 - lp1
    u0u1 = inner(u0, u1, grid)
    escale = 0.5 * kin + 0.5 * Mbar_eval(params, gs0) + lp1 / (p + 1)
    rhs_l2 = l2_threshold(cp, e0, p, m1, alpha)
    hyp = {
        "energy_positive": HypothesisResult(e0, 0.0, _strict_pos(e0, escale)),
        "I_negative": HypothesisResult(i0, 0.0, i0 < -STRICT_TOL * max(lp1, 1.0)),
        "u0u1_positive": HypothesisResult(u0u1, 0.0, _strict_pos(u0u1, math.sqrt(l2 * kin))),
        "l2_above_threshold": HypothesisResult(l2, rhs_l2, l2 > rhs_l2 and (l2 > 0)),
    }
    comps = {"L2_sq": l2, "grad_sq": gs0, "Lp1": lp1, "ut_sq": kin}
    return Certificate(p=p, hypotheses=hyp, m1=m1, alpha=alpha, branch=branch, E0=e0,
                       L2_0=l2, u0u1=u0u1, grad_sq_0=gs0, Cp=cp, components=comps)


@dataclass(frozen=True)
class CertificateParams:
    beta: float
    t2: float
    T0: float
    G0: float
    Gp0: float


def choose_certificate_params(L2_0: float, u0u1: float, grad_sq_0: float, p: float,
                              m1: float, alpha: float, E0: float) -> CertificateParams:
    """Pick ``beta``, ``t2`` and ``T0`` for the concavity function.

    ``beta`` is half of its largest admissible value at ``t = 0``; ``t2``
    satisfies ``(p-1)/2 (int u0 u1 + beta t2) >= ||u0||^2`` with a small
    margin; ``T0`` is 1.01 times the smallest root of the linear inequality
    ``T0 >= 4/(p-1) * G(0)/G'(0)``.
    """
    bracket = 2 * m1 * grad_sq_0**alpha - 2 * (p + 1) * E0
    if not bracket > 0:
        raise InfeasibleCertificateError(f"beta bracket is not positive: {bracket!r}")
    beta = 0.5 * bracket / (p + 1)
    need = (2 * L2_0 / (p - 1) - u0u1) / beta
    eps = 1e-6 * max(1.0, abs(need))
    t2 = max(eps, need + eps)
    Gp0 = 2 * u0u1 + 2 * beta * t2
    T0 = solve_T0(p, L2_0, beta * t2**2, Gp0)
    G0 = (1 + T0) * L2_0 + beta * t2**2
    return CertificateParams(beta, t2, T0, G0, Gp0)


def solve_T0(p: float, L2_0: float, beta_t2_sq: float, Gp0: float,
             safety: float = 1.01) -> float:
    """``safety`` times the root of ``theta G'(0) T0 = (1 + T0) ||u0||^2 + beta t2^2``."""
    denom = (p - 1) / 4 * Gp0 - L2_0
    if not denom > 0:
        raise InfeasibleCertificateError("T0 inequality is degenerate")
    return safety * (L2_0 + beta_t2_sq) / denom


def tstar_bound(p: float, G0: float, Gp0: float) -> float:
    """``G(0) / (theta G'(0))`` with ``theta = (p-1)/4``."""
    if not Gp0 > 0:
        raise InvalidCertificateError("G'(0) must be positive")
    return G0 / ((p - 1) / 4 * Gp0)


def build_certificate(u0, u1, params: ModelParams, kernel: Kernel, grid: Grid1D, *,
                      m1=None, alpha=None, cp_mode: str = "discrete") -> Certificate:
    """Hypotheses plus, when they all hold, the concavity constants and bound."""
    try:
        cert = check_hypotheses(u0, u1, params, kernel, grid, m1=m1, alpha=alpha,
                                cp_mode=cp_mode)
    except NoCertificateError as exc:
        return Certificate(p=params.p, hypotheses={}, error=str(exc))
    if not cert.hypotheses_ok:
        return cert
    try:
        cp = choose_certificate_params(cert.L2_0, cert.u0u1, cert.grad_sq_0, params.p,
                                       cert.m1, cert.alpha, cert.E0)
    except InfeasibleCertificateError as exc:
        cert.error = str(exc)
        return cert
    cert.beta, cert.t2, cert.T0, cert.G0, cert.Gp0 = cp.beta, cp.t2, cp.T0, cp.G0, cp.Gp0
    cert.tstar_bound = tstar_bound(params.p, cp.G0, cp.Gp0)
    return cert


# ---------------------------------------------------------------------------
# runtime monitors
# ---------------------------------------------------------------------------

@dataclass
class GMonitorState:
    int_L2: float = 0.0
    int_uut: float = 0.0
    int_utsq: float = 0.0
    G: float = math.nan
    Gp: float = math.nan
    A: float = math.nan
    C: float = math.nan
    cs_gap: float = math.nan
    worst_cs: float = -math.inf
    worst_concavity: float = math.inf
    beta_violations: list = field(default_factory=list)
    bound_violations: list = field(default_factory=list)
    max_Gpp_mismatch: float = 0.0


class GMonitor:
    """Tracks ``G``, ``G'``, ``G''`` and the Cauchy-Schwarz gap along a run.

    ``G''`` is the centered difference of ``G'`` and is stored on the previous
    row once the next row arrives; the closed-form expression for ``G''`` is
    kept alongside as a consistency check.
    """

    def __init__(self, p: float, beta: float, t2: float, T0: float, L2_0: float,
                 m1: Optional[float] = None, alpha: Optional[float] = None,
                 E0: Optional[float] = None):
        self.p, self.beta, self.t2, self.T0, self.L2_0 = p, beta, t2, T0, L2_0
        self.m1, self.alpha, self.E0 = m1, alpha, E0
        self.state = GMonitorState()
        self.rows: list[DiagnosticsRow] = []
        self.cs_ratio: list[float] = []
        self.gpp_exact: list[float] = []
        self.int_utsq: list[float] = []

    @classmethod
    def from_certificate(cls, cert: Certificate) -> "GMonitor":
        return cls(cert.p, cert.beta, cert.t2, cert.T0, cert.L2_0, cert.m1, cert.alpha, cert.E0)

    def update(self, row: DiagnosticsRow) -> None:
        st, b = self.state, self.beta
        if self.rows:
            prev = self.rows[-1]
            half = 0.5 * (row.t - prev.t)
            st.int_L2 += half * (prev.L2_sq + row.L2_sq)
            st.int_uut += half * (prev.u_ut + row.u_ut)
            st.int_utsq += half * (prev.ut_sq + row.ut_sq)
        s = self.t2 + row.t
        st.A = row.L2_sq + st.int_L2 + b * s**2
        B = row.u_ut + st.int_uut + b * s
        st.C = row.ut_sq + st.int_utsq + b
        self.int_utsq.append(st.int_utsq)
        st.cs_gap = B * B - st.A * st.C
        self.cs_ratio.append(st.cs_gap / (1.0 + st.A * st.C))
        st.worst_cs = max(st.worst_cs, self.cs_ratio[-1])
        st.G = row.L2_sq + st.int_L2 + (self.T0 - row.t) * self.L2_0 + b * s**2
        st.Gp = 2.0 * B
        row.G, row.Gp = st.G, st.Gp
        self.gpp_exact.append(2 * row.ut_sq - 2 * row.M * row.grad_sq + 2 * row.g_cross
                              + 2 * row.Lp1 + 2 * b)
        if self.m1 is not None:
            bracket = (2 * self.m1 * row.grad_sq**self.alpha - 2 * (self.p + 1) * self.E0
                       + (self.p + 0.5) * row.g_circ)
            if not (self.p + 1) * b < bracket:
                st.beta_violations.append(row.t)
        if len(self.rows) >= 2:
            self._second_derivative(self.rows[-2], self.rows[-1], row)
        self.rows.append(row)

    def _second_derivative(self, prev, cur, nxt) -> None:
        st = self.state
        cur.Gpp = centered_derivative(prev.Gp, cur.Gp, nxt.Gp, cur.t - prev.t, nxt.t - cur.t)
        cur.concavity_residual = cur.Gpp * cur.G - (self.p + 3) / 4 * cur.Gp**2
        rel = cur.concavity_residual / (1.0 + abs(cur.Gpp * cur.G))
        st.worst_concavity = min(st.worst_concavity, rel)
        exact = self.gpp_exact[-2]
        st.max_Gpp_mismatch = max(st.max_Gpp_mismatch,
                                  abs(cur.Gpp - exact) / (1.0 + abs(exact)))
        if self.m1 is not None:
            lower = self.lower_bound(cur, self.int_utsq[-2])
            if cur.Gpp < lower - 1e-6 * (1 + abs(lower)):
                st.bound_violations.append(cur.t)

    def lower_bound(self, row: DiagnosticsRow, int_utsq: float) -> float:
        """Lower bound for ``G''`` after (A3), the energy identity and the Young step."""
        p = self.p
        return ((p + 3) * row.ut_sq + 2 * self.m1 * row.grad_sq**self.alpha
                - 2 * (p + 1) * self.E0 + (p + 0.5) * row.g_circ
                + 2 * (p + 1) * int_utsq + 2 * self.beta)


@dataclass
class LemmaReport:
    growth_premise: list  # per-row bool or None where not evaluable
    l2_increasing: list
    I_negative: list
    l2_above_threshold: list
    warnings: list

    def all_hold(self, name: str) -> bool:
        vals = [v for v in getattr(self, name) if v is not None]
        return bool(vals) and all(vals)


def l2_threshold(Cp: float, E0: float, p: float, m1: float, alpha: float) -> float:
    """``C_p ((p+1) E(0) / m1)**(1/alpha)``, sign-preserving for ``E(0) <= 0``."""
    x = (p + 1) * E0 / m1
    return Cp * math.copysign(abs(x) ** (1.0 / alpha), x)


def lemma_monitors(rows, p: float, E0: float, u0u1: float, Cp: float,
                   m1: Optional[float] = None, alpha: Optional[float] = None) -> LemmaReport:
    """Per-step checks of the monotonicity and invariance lemmas, with ``H = ||u||^2``.

    * ``growth_premise``: ``H'' + H' > int_0^t g(t-s) (grad u(s), grad u(t)) ds``
      with ``H'``, ``H''`` from finite differences.
    * ``l2_increasing``: ``||u||^2`` grows whenever ``I(u) < 0`` and
      ``int u0 u1 > 0``.
    * ``I_negative`` and ``l2_above_threshold``: the two persistent bounds.

    Violations are collected as ``(name, t)`` warnings; whether one reflects
    a failed hypothesis or discretization error is settled by refinement.
    """
    n = len(rows)
    premise, inc, warns = [None] * n, [None] * n, []
    for i in range(1, n - 1):
        a, c, b = rows[i - 1], rows[i], rows[i + 1]
        hp = (b.L2_sq - a.L2_sq) / (b.t - a.t)
        hpp = 2 * ((b.L2_sq - c.L2_sq) / (b.t - c.t)
                   - (c.L2_sq - a.L2_sq) / (c.t - a.t)) / (b.t - a.t)
        premise[i] = hpp + hp > c.g_cross
        if c.I < 0 and not premise[i]:
            warns.append(("growth_premise", c.t))
        if c.I < 0 and u0u1 > 0:
            inc[i] = b.L2_sq > c.L2_sq
            if not inc[i]:
                warns.append(("l2_increasing", c.t))
    thr = None if m1 is None or alpha is None else l2_threshold(Cp, E0, p, m1, alpha)
    ineg = [r.I < 0 for r in rows]
    above = [None if thr is None else r.L2_sq > thr for r in rows]
    for r, neg, up in zip(rows, ineg, above):
        if not neg:
            warns.append(("I_negative", r.t))
        if up is False:
            warns.append(("l2_above_threshold", r.t))
    return LemmaReport(premise, inc, ineg, above, warns)


# ---------------------------------------------------------------------------
# admissible data search
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class FamilySpec:
    """Box for ``u0 = sum_k c_k sin(k pi x/L)``, ``u1 = lam u0 + mu sin(pi x/L)``."""

    c_bounds: tuple = ((0.0, 8.0), (-1.0, 1.0), (-1.0, 1.0))
    lam_bounds: tuple = (0.0, 0.5)
    mu_bounds: tuple = (0.0, 0.5)


@dataclass
class Candidate:
    coeffs: list
    lam: float
    mu: float
    u0: np.ndarray
    u1: np.ndarray
    certificate: Certificate

    def to_dict(self) -> dict:
        return {"coeffs": list(self.coeffs), "lam": self.lam, "mu": self.mu,
                "certificate": self.certificate.to_dict()}


def family_fields(coeffs, lam: float, mu: float, grid: Grid1D):
    u0 = sine_series(coeffs, grid)
    u1 = lam * u0 + mu * sine_series([1.0], grid)
    return u0, u1


def search_initial_data(family: FamilySpec, params: ModelParams, kernel: Kernel,
                        grid: Grid1D, budget: int, seed: int = 0, *, m1=None, alpha=None,
                        cp_mode: str = "discrete") -> list:
    """Random search over the family for data satisfying every hypothesis.

    Each hit carries its full certificate. An empty list only means nothing
    was found within ``budget`` draws.
    """
    rng = np.random.default_rng(seed)
    lo = np.array([b[0] for b in family.c_bounds] + [family.lam_bounds[0], family.mu_bounds[0]])
    hi = np.array([b[1] for b in family.c_bounds] + [family.lam_bounds[1], family.mu_bounds[1]])
    hits = []
    nc = len(family.c_bounds)
    for _ in range(int(budget)):
        x = rng.uniform(lo, hi)
        coeffs, lam, mu = x[:nc].tolist(), float(x[nc]), float(x[nc + 1])
        u0, u1 = family_fields(coeffs, lam, mu, grid)
        cert = build_certificate(u0, u1, params, kernel, grid, m1=m1, alpha=alpha,
                                 cp_mode=cp_mode)
        if cert.valid:
            hits.append(Candidate(coeffs, lam, mu, u0, u1, cert))
    return hits
