import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from glassflow.fixed_point import (bifurcation_scan, bifurcation_table, detect_onset, fixed_point_matrices,
                                   overlap_residual, solve_overlap)

# positive roots of artanh(q) = beta^2 q, from an independent 50-digit
# secant solve and a float64 Brent solve (they agree to 1e-16)
ARTANH_ROOTS = {1.01: 0.24120654485960730102, 1.5: 0.97549582573979363658, 2.0: 0.99932567301510824361}
# single root at beta = 0.5, h = 0.2 (Brent on the residual)
ROOT_FIELD = 0.01324434857227023


def _artanh_bisection(beta, lo=1e-6, hi=1 - 1e-15, dps=50):
    with mpmath.workdps(dps):
        f = lambda q: mpmath.atanh(q) - mpmath.mpf(beta) ** 2 * q
        a, b = mpmath.mpf(lo), mpmath.mpf(hi)
        fa = f(a)
        for _ in range(200):
            m = (a + b) / 2
            fm = f(m)
            if (fm < 0) == (fa < 0):
                a, fa = m, fm
            else:
                b = m
        return float((a + b) / 2)


def test_residual_values():
    assert overlap_residual(0.0, 1.7, 0.0) == 0.0
    r = overlap_residual(0.0, 0.5, 0.2)
    assert r == pytest.approx(1 - math.cosh(0.2), abs=1e-15) and r < 0
    assert overlap_residual(1 - 1e-12, 1.0) > 1e11
    with pytest.raises(ValueError):
        overlap_residual(1.0, 1.0)
    with pytest.raises(ValueError):
        overlap_residual(-0.1, 1.0)


def test_high_temperature_has_only_trivial_root():
    assert solve_overlap(0.8, 0.0).roots == [0.0]


@pytest.mark.parametrize("beta", sorted(ARTANH_ROOTS))
def test_low_temperature_root(beta):
    sol = solve_overlap(beta, 0.0)
    assert len(sol.roots) == 2 and sol.roots[0] == 0.0
    assert sol.roots[1] == pytest.approx(ARTANH_ROOTS[beta], abs=1e-14)
    assert sol.roots[1] == pytest.approx(_artanh_bisection(beta), abs=1e-14)
    assert all(abs(r) < 1e-12 for r in sol.residuals)


def test_field_gives_single_positive_root():
    sol = solve_overlap(0.5, 0.2)
    assert len(sol.roots) == 1
    assert sol.roots[0] == pytest.approx(ROOT_FIELD, abs=1e-15)


def test_scan_values():
    assert [q for _, q in bifurcation_scan([0.5, 0.9, 0.99])] == [0.0, 0.0, 0.0]
    q = [q for _, q in bifurcation_scan([1.01, 1.5, 2.0])]
    assert 0 < q[0] < q[1] < q[2]
    assert bifurcation_scan([1.0])[0][1] == 0.0
    with pytest.raises(ValueError):
        bifurcation_scan([1.0, 0.5])


def test_onset_on_fine_grid():
    grid = np.round(np.arange(0.95, 1.05 + 1e-9, 1e-3), 6)
    onset = detect_onset(grid)
    assert 1.000 <= onset <= 1.002


def test_table_rows():
    rows = bifurcation_table([0.9, 1.5])
    assert [tuple(r[:3]) for r in rows] == [(0.9, 0.0, 0), (1.5, 0.0, 0), (1.5, 0.0, 1)]


@settings(max_examples=25)
@given(st.floats(0.3, 2.5), st.floats(-0.5, 0.5))
def test_roots_sorted_with_tiny_residuals(beta, h):
    sol = solve_overlap(beta, h)
    assert sol.roots == sorted(sol.roots)
    assert all(0 <= q < 1 for q in sol.roots)
    assert all(abs(r) < 1e-12 for r in sol.residuals)


@pytest.mark.parametrize("beta", [0.8, 1.5])
def test_largest_root_continuous_in_field(beta):
    hs = np.linspace(0.0, 0.5, 51)
    q = np.array([solve_overlap(beta, h).largest for h in hs])
    assert np.all(np.diff(q) >= -1e-12)
    assert np.abs(np.diff(q)).max() < 0.05


def test_matrices_at_zero_overlap():
    fp = fixed_point_matrices(0.0, 1.3)
    np.testing.assert_array_equal(fp.K, np.eye(2))
    np.testing.assert_allclose(fp.upsilon, np.diag([0.65, 0.65]))
    assert not fp.kappa.any()


def test_matrices_reference_values():
    fp = fixed_point_matrices(0.5, 1.5)
    assert fp.upsilon[0, 0] == pytest.approx(0.9375, abs=1e-15)
    assert fp.upsilon[0, 1] == pytest.approx(0.75, abs=1e-15)
    np.testing.assert_array_equal(fp.K, [[1, 0.5], [0.5, 1]])
    assert not fp.kappa.any()
