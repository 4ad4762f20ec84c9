import math

import numpy as np
import pytest

from viscokirchhoff.dynamics import (
    Simulation, StepperConfig, adapt_dt, centered_derivative, detect_blowup, simulate,
)
from viscokirchhoff.functionals import ModelParams
from viscokirchhoff.kernel import Kernel
from viscokirchhoff.spatial import Grid1D, grad_norm_sq

BENCH = ModelParams(1.0, 0.0, 1.0, 3.0)
EXP = Kernel.expsum([(0.1, 1.0)])


def test_zero_data_stays_zero():
    g = Grid1D(1.0, 50)
    res = simulate(g.zeros(), g.zeros(), BENCH, EXP, g, StepperConfig(t_max=0.2))
    assert res.status == "completed" and res.t_final == pytest.approx(0.2)
    for row in res.rows:
        assert row.E == 0.0 and row.Linf == 0.0 and row.g_circ == 0.0


def test_stepper_config_validation():
    with pytest.raises(ValueError):
        StepperConfig(dt_min=1.0, dt_max=0.1)
    with pytest.raises(ValueError):
        StepperConfig(convolution="fft")
    with pytest.raises(ValueError):
        StepperConfig(t_max=-1.0)


def test_initial_fields_must_match_grid():
    g = Grid1D(1.0, 10)
    with pytest.raises(ValueError):
        Simulation(np.zeros(9), np.zeros(9), BENCH, EXP, g, StepperConfig())


def test_centered_derivative_exact_for_quadratics():
    f = lambda t: 2 * t**2 + t
    assert centered_derivative(f(0.0), f(0.1), f(0.4), 0.1, 0.3) == pytest.approx(4 * 0.1 + 1)


def test_detect_blowup_on_exact_profile():
    T = 2.0
    t = T - np.geomspace(1.0, 1e-9, 400)
    est = detect_blowup(t, (T - t) ** -1.0, p=3.0, threshold=1e8)
    assert est.blown
    assert est.T_est == pytest.approx(2.0, abs=1e-3)
    assert est.fit_residual is not None


def test_detect_blowup_needs_a_tail():
    est = detect_blowup([0.0, 1.0], [1.0, 0.5], p=3.0, threshold=1e8)
    assert not est.blown and est.T_est is None


def _sim(u0, params=BENCH, **cfg):
    g = Grid1D(1.0, len(u0))
    return Simulation(u0, np.zeros_like(u0), params, Kernel.zero(), g, StepperConfig(**cfg))


def test_adapt_dt_quiescent_is_cfl_or_dt_max():
    g = Grid1D(1.0, 100)
    sim = _sim(0.01 * np.sin(np.pi * g.x), dt_init=1.0, dt_max=1.0, t_max=10.0)
    assert adapt_dt(sim.state, sim.cfg, sim.params, sim.grid) == pytest.approx(0.5 * g.h)
    sim = _sim(0.01 * np.sin(np.pi * g.x), dt_init=1e-3, dt_max=1e-3, t_max=10.0)
    assert adapt_dt(sim.state, sim.cfg, sim.params, sim.grid) == pytest.approx(1e-3)


def test_adapt_dt_halves_after_fast_growth():
    g = Grid1D(1.0, 100)
    sim = _sim(np.sin(np.pi * g.x), dt_init=1e-3, dt_max=1e-3, t_max=10.0, growth_tol=0.05)
    st = sim.state
    st.step, st.dt_last, st.last_growth = 5, 1e-3, 0.1
    assert adapt_dt(st, sim.cfg, sim.params, sim.grid) == pytest.approx(5e-4)


def test_adapt_dt_cfl_scales_with_kirchhoff_coefficient():
    g = Grid1D(1.0, 100)
    s = np.sin(np.pi * g.x)
    u = s * math.sqrt(100.0 / grad_norm_sq(s, g))
    sim = _sim(u, ModelParams(1.0, 1.0, 2.0, 7.0), dt_init=1.0, dt_max=1.0, t_max=10.0)
    dt = adapt_dt(sim.state, sim.cfg, sim.params, sim.grid)
    assert dt == pytest.approx(0.5 * g.h / math.sqrt(1 + 1e4), rel=1e-9)


def test_adapt_dt_lands_on_t_max_and_collapses():
    g = Grid1D(1.0, 20)
    sim = _sim(np.sin(np.pi * g.x), dt_init=1e-3, dt_max=1e-3, t_max=1.0)
    sim.state.t = 1.0 - 4e-4
    assert adapt_dt(sim.state, sim.cfg, sim.params, sim.grid) == pytest.approx(4e-4)
    sim = _sim(np.sin(np.pi * g.x), dt_init=1e-3, dt_min=1e-4, dt_max=1e-3, t_max=1.0)
    st = sim.state
    st.step, st.dt_last, st.last_growth = 3, 1.5e-4, 1.0
    assert adapt_dt(st, sim.cfg, sim.params, sim.grid) is None


def test_benchmark_blows_up_with_energy_and_flag():
    g = Grid1D(1.0, 100)
    res = simulate(6 * np.sin(np.pi * g.x), g.zeros(), BENCH, Kernel.zero(), g,
                   StepperConfig(t_max=2.0))
    assert res.status == "blown-up" and res.blowup.blown
    assert 0.3 < res.blowup.T_est < 0.42
    assert res.E0 < 0


def test_crosscheck_mode_agrees():
    g = Grid1D(1.0, 60)
    res = simulate(np.sin(np.pi * g.x), 0.5 * np.sin(2 * np.pi * g.x), BENCH,
                   Kernel.expsum([(0.1, 1.0), (0.05, 3.0)]), g,
                   StepperConfig(t_max=0.5, convolution="crosscheck"))
    assert res.status == "completed"
    assert res.crosscheck_max < 1e-10


def test_table_kernel_runs_with_direct_convolution():
    g = Grid1D(1.0, 40)
    t = np.linspace(0, 10, 201)
    k = Kernel.table(t, 0.1 * np.exp(-t))
    sim = Simulation(np.sin(np.pi * g.x), g.zeros(), BENCH, k, g, StepperConfig(t_max=0.3))
    assert sim.mode == "direct"
    res = sim.run()
    ref = simulate(np.sin(np.pi * g.x), g.zeros(), BENCH, EXP, g, StepperConfig(t_max=0.3))
    assert res.rows[-1].E == pytest.approx(ref.rows[-1].E, rel=1e-3)


def test_energy_decreases_with_memory():
    g = Grid1D(1.0, 80)
    res = simulate(np.sin(np.pi * g.x), np.sin(2 * np.pi * g.x), ModelParams(1, 1, 1, 3), EXP,
                   g, StepperConfig(t_max=1.0, dt_max=2e-3))
    E = np.array([r.E for r in res.rows])
    assert np.all(np.diff(E) <= 1e-6 * (1 + abs(E[0])))
    assert E[-1] < E[0]


def test_on_row_sees_every_row_once_in_order():
    g = Grid1D(1.0, 30)
    seen = []
    res = simulate(np.sin(np.pi * g.x), g.zeros(), BENCH, EXP, g,
                   StepperConfig(t_max=0.05), on_row=seen.append)
    assert [r.t for r in seen] == [r.t for r in res.rows]


def test_mms_forcing_converges():
    errs = []
    for n in (40, 80):
        g = Grid1D(1.0, n)
        phi = np.sin(np.pi * g.x)

        def forcing(x, t):
            s = np.sin(np.pi * x)
            return math.pi**2 * math.exp(-t) * s - math.exp(-3 * t) * s**3

        dt = 0.5 * g.h
        res = Simulation(phi, -phi, BENCH, Kernel.zero(), g,
                         StepperConfig(t_max=0.5, dt_init=dt, dt_max=dt, cfl_safety=1.0,
                                       forcing=forcing))
        res.run()
        errs.append(np.max(np.abs(res.state.u - math.exp(-res.state.t) * phi)))
    assert math.log(errs[0] / errs[1], 81 / 41) > 1.8
