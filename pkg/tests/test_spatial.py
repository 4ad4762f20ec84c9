import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from viscokirchhoff.spatial import (
    Grid1D, NonFiniteFieldError, check_finite, first_dirichlet_eigenvalue, grad_norm_sq,
    gradient, inner, laplacian, load_field_csv, norm_L2_sq, norm_Lp1, poincare_constant,
    sine_series,
)


def test_grid_spacing_and_nodes():
    g = Grid1D(2.0, 3)
    assert g.h == pytest.approx(0.5)
    np.testing.assert_allclose(g.x, [0.5, 1.0, 1.5])


@pytest.mark.parametrize("L, n", [(0.0, 10), (-1.0, 10), (1.0, 0)])
def test_grid_rejects_bad_sizes(L, n):
    with pytest.raises(ValueError):
        Grid1D(L, n)


def test_laplacian_of_quadratic_is_exact():
    g = Grid1D(1.0, 50)
    f = g.x * (1 - g.x)
    np.testing.assert_allclose(laplacian(f, g), -2.0, atol=1e-9)


def test_laplacian_sine_is_discrete_eigenfunction():
    g = Grid1D(1.0, 40)
    f = np.sin(np.pi * g.x)
    lam = (2 / g.h**2) * (1 - math.cos(math.pi * g.h))
    np.testing.assert_allclose(laplacian(f, g), -lam * f, atol=1e-10)


def test_norms_against_integrals():
    g = Grid1D(1.0, 999)
    s = np.sin(np.pi * g.x)
    assert norm_L2_sq(s, g) == pytest.approx(0.5, abs=1e-5)
    assert norm_Lp1(s, 3.0, g) == pytest.approx(0.375, abs=1e-5)
    assert norm_Lp1(2 * s, 3.0, g) == pytest.approx(6.0, abs=1e-4)
    assert grad_norm_sq(s, g) == pytest.approx(math.pi**2 / 2, rel=1e-5)
    assert norm_L2_sq(g.zeros(), g) == 0.0


def test_grad_norm_second_order():
    errs = []
    for n in (50, 100, 200):
        g = Grid1D(1.0, n)
        errs.append(abs(grad_norm_sq(np.sin(np.pi * g.x), g) - math.pi**2 / 2))
    orders = [math.log(errs[i] / errs[i + 1], 2) for i in range(2)]
    assert min(orders) > 1.9


def test_constant_field_riemann_sum():
    g = Grid1D(1.0, 1000)
    assert norm_L2_sq(np.full(g.n_interior, 3.0), g) == pytest.approx(9.0, rel=2e-3)


def test_norm_lp1_rejects_small_p():
    g = Grid1D(1.0, 5)
    with pytest.raises(ValueError, match="p must exceed 1"):
        norm_Lp1(g.zeros(), 1.0, g)


def test_gradient_lives_on_edges():
    g = Grid1D(1.0, 9)
    assert gradient(np.ones(9), g).shape == (10,)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-5, 5), min_size=12, max_size=12),
       st.lists(st.floats(-5, 5), min_size=12, max_size=12))
def test_summation_by_parts(a, b):
    g = Grid1D(1.3, 12)
    u, v = np.array(a), np.array(b)
    lhs = -inner(laplacian(u, g), v, g)
    rhs = g.h * float(gradient(u, g) @ gradient(v, g))
    assert lhs == pytest.approx(rhs, abs=1e-9 * (1 + abs(rhs)))


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-5, 5), min_size=20, max_size=20))
def test_discrete_poincare_inequality(a):
    g = Grid1D(1.0, 20)
    u = np.array(a)
    assert norm_L2_sq(u, g) <= poincare_constant(g) * grad_norm_sq(u, g) * (1 + 1e-12) + 1e-300


def test_poincare_constants():
    assert poincare_constant(Grid1D(1.0, 10), "continuum") == pytest.approx(1 / math.pi**2)
    assert poincare_constant(Grid1D(math.pi, 10), "continuum") == pytest.approx(1.0)
    errs = [abs(poincare_constant(Grid1D(1.0, n)) - 1 / math.pi**2) for n in (50, 100)]
    assert math.log(errs[0] / errs[1], 2) > 1.9
    g = Grid1D(1.0, 30)
    assert first_dirichlet_eigenvalue(g) == pytest.approx(1 / poincare_constant(g))


def test_check_finite():
    with pytest.raises(NonFiniteFieldError):
        check_finite(np.array([1.0, np.nan]))


def test_sine_series_and_csv(tmp_path):
    g = Grid1D(1.0, 20)
    f = sine_series([1.0, 0.5], g)
    np.testing.assert_allclose(f, np.sin(np.pi * g.x) + 0.5 * np.sin(2 * np.pi * g.x))
    path = tmp_path / "f.csv"
    np.savetxt(path, np.column_stack([g.x, f]), delimiter=",")
    np.testing.assert_allclose(load_field_csv(path, g), f, atol=1e-12)
    coarse = Grid1D(1.0, 9)
    np.testing.assert_allclose(load_field_csv(path, coarse),
                               np.interp(coarse.x, g.x, f, left=0.0, right=0.0))
    np.savetxt(path, np.column_stack([g.x, f, f]), delimiter=",")
    with pytest.raises(ValueError):
        load_field_csv(path, g)
