import numpy as np
import pytest

from glassflow.flow import (FlowStabilityError, GridDensity, MassDriftError, flow_particle, flow_pde_m1,
                            gaussian_mixture_grid, grid_to_measure, measure_to_grid, pde_stable_dt,
                            sample_gaussian_mixture, silverman_bandwidth)
from glassflow.model import ConstantRate, EmpiricalMeasure, GlauberRate
from glassflow.moments import compute_moments
from glassflow.transport import wasserstein_m1

COMPS = [(1, 0.6, 0.5, 1.0), (-1, 0.4, -0.3, 0.8)]
SYMMETRIC = [(1, 0.5, 0.7, 1.0), (-1, 0.5, -0.7, 1.0)]


def _grid_distance(a, b):
    x, s, w = a.weighted_points()
    y, q, v = b.weighted_points()
    return wasserstein_m1(x, s, w, y, q, v)


def test_particle_spins_stay_signs():
    mu = sample_gaussian_mixture(COMPS, 500, 0)
    out = flow_particle(mu, GlauberRate(0.7), 1.0, 0.1, 500, 0.01, 0.5, seed=0, snapshot_times=[0, 0.25, 0.5])
    assert [t for t, _ in out] == [0, 0.25, 0.5]
    for _, m in out:
        assert np.all(np.abs(m.sigma) == 1)
        ms = compute_moments(m, GlauberRate(0.7), 0.1)
        assert ms.K[0, 0] == 1.0 and ms.H[0, 0] == pytest.approx(1.0)


def test_particle_replica_overlap_diagonal_is_one():
    g = np.random.default_rng(0)
    mu = EmpiricalMeasure(np.where(g.random((300, 3)) < 0.5, -1, 1), g.normal(size=(300, 3)))
    for _, m in flow_particle(mu, GlauberRate(0.6), 0.5, 0.1, 300, 0.01, 0.3, seed=1,
                              snapshot_times=[0, 0.1, 0.2, 0.3]):
        np.testing.assert_array_equal(np.diag(compute_moments(m, GlauberRate(0.6), 0.1).K), 1.0)


def test_particle_sign_symmetry():
    g = np.random.default_rng(1)
    half = EmpiricalMeasure(np.where(g.random((5000, 1)) < 0.5, -1, 1), g.normal(0.4, 1.0, (5000, 1)))
    mu = EmpiricalMeasure(np.vstack([half.sigma, -half.sigma]), np.vstack([half.x, -half.x]))
    for _, m in flow_particle(mu, GlauberRate(0.7, 0.0), 1.0, 0.1, mu.n, 0.01, 1.0, seed=2,
                              snapshot_times=[0.0, 0.5, 1.0]):
        s, x = m.sigma[:, 0].astype(float), m.x[:, 0]
        assert abs(s.mean()) <= 4 * s.std() / np.sqrt(m.n) + 1e-12
        assert abs(x.mean()) <= 4 * x.std() / np.sqrt(m.n) + 1e-12


def test_infinite_temperature_mean_relaxation():
    # beta = 0, s = 0: c = 1/2 so L = 1/2 and the drift is -x; E[x_t] = x_0 exp(-t)
    P = 10**5
    mu = EmpiricalMeasure(np.ones((1, 1)), np.full((1, 1), 2.0))
    ts = [0.0, 0.25, 0.5, 0.75, 1.0]
    out = flow_particle(mu, GlauberRate(0.0), 0.0, 0.1, P, 0.01, 1.0, seed=3, snapshot_times=ts)
    means = np.array([m.x.mean() for _, m in out])
    slope = np.polyfit(ts, np.log(means), 1)[0]
    assert abs(-slope - 1.0) <= 0.1


def test_frozen_constant_rate_matches_ou_variance():
    # s = 0, constant rate c: L = c, D = 2 sqrt(c); var(t) = v0 e^{-4ct} + 1 - e^{-4ct}
    c, P, t = 0.3, 20000, 1.0
    g = np.random.default_rng(4)
    mu = EmpiricalMeasure(np.where(g.random((P, 1)) < 0.5, -1, 1), g.normal(0, 2.0, (P, 1)))
    v0 = float(mu.x.var())
    out = flow_particle(mu, ConstantRate(c), 0.0, 0.1, P, 0.01, t, seed=4, frozen=True)
    v = float(out[-1][1].x.var())
    expect = v0 * np.exp(-4 * c * t) + 1 - np.exp(-4 * c * t)
    assert abs(v - expect) <= 4 * expect * np.sqrt(2 / P)


def test_particle_rejects_large_step():
    mu = sample_gaussian_mixture(COMPS, 10, 0)
    with pytest.raises(FlowStabilityError):
        flow_particle(mu, GlauberRate(0.7), 1.0, 0.1, 10, 0.05, 1.0, seed=0)
    with pytest.raises(ValueError):
        flow_particle(mu, GlauberRate(0.7), 1.0, 0.1, 10, 0.01, 0.015, seed=0)


def test_particle_is_deterministic_per_seed():
    mu = sample_gaussian_mixture(COMPS, 200, 0)
    a = flow_particle(mu, GlauberRate(0.7), 1.0, 0.1, 400, 0.01, 0.2, seed=5)[-1][1]
    b = flow_particle(mu, GlauberRate(0.7), 1.0, 0.1, 400, 0.01, 0.2, seed=5)[-1][1]
    assert np.array_equal(a.x, b.x) and np.array_equal(a.sigma, b.sigma)


def test_mixture_grid_mass():
    gd = gaussian_mixture_grid(COMPS)
    assert abs(gd.mass() - 1.0) < 1e-14
    assert gd.nx == 400 and gd.dx == pytest.approx(0.04)


def test_single_atom_grid():
    mu = EmpiricalMeasure(np.array([[1]]), np.array([[0.0]]))
    gd = measure_to_grid(mu)
    assert not gd.p_minus.any()
    assert abs(gd.mass() - 1.0) < 1e-14
    c = gd.centers
    assert abs((c * gd.p_plus).sum() * gd.dx) < 1e-12
    np.testing.assert_allclose(gd.p_plus, gd.p_plus[::-1], atol=1e-12)


def test_grid_roundtrip_moments():
    mu = sample_gaussian_mixture(COMPS, 4000, 1)
    gd = measure_to_grid(mu)
    bw = max(silverman_bandwidth(mu.x), gd.dx)
    nu = grid_to_measure(gd, 200000, seed=1)
    assert abs(nu.x.mean() - mu.x.mean()) < 0.02
    # smoothing adds bw^2 to the variance
    assert abs(nu.x.var() - mu.x.var() - bw**2) < 0.05
    assert abs(nu.x.var() - mu.x.var()) < 2 * bw**2 + 0.05


def test_grid_sampling_sign_frequencies():
    gd = gaussian_mixture_grid(COMPS)
    n = 50000
    mu = grid_to_measure(gd, n, seed=2)
    p = gd.p_plus.sum() * gd.dx
    assert abs((mu.sigma == 1).mean() - p) <= 4 * np.sqrt(p * (1 - p) / n)
    again = grid_to_measure(gd, n, seed=2)
    assert np.array_equal(mu.x, again.x)


def test_point_mass_density_sampling():
    pp = np.zeros(400)
    pp[123] = 1.0 / 0.04
    gd = GridDensity(-8.0, 8.0, 400, pp, np.zeros(400))
    mu = grid_to_measure(gd, 1000, seed=0)
    lo = -8.0 + 123 * 0.04
    assert np.all((mu.x >= lo) & (mu.x <= lo + 0.04)) and np.all(mu.sigma == 1)


def test_grid_rejects_out_of_range_atoms():
    with pytest.raises(ValueError):
        measure_to_grid(EmpiricalMeasure(np.array([[1]]), np.array([[9.0]])))


def _run(gd, beta=0.7, s=1.0, T=0.5, dt=None, **kw):
    rate = GlauberRate(beta, 0.0)
    dt = dt or 1.0 / np.ceil(1.0 / pde_stable_dt(gd, rate, s))
    return flow_pde_m1(gd, rate, s, dt, T, **kw)


def test_pde_mass_and_positivity():
    gd = gaussian_mixture_grid(COMPS)
    stats = {}
    out = _run(gd, T=0.5, snapshot_times=[0.0, 0.25, 0.5], stats=stats)
    for t, g in out:
        assert abs(g.mass() - 1.0) <= 1e-8 * max(t, 1.0)
        assert g.p_plus.min() >= -1e-12 and g.p_minus.min() >= -1e-12
    assert stats["boundary_mass"] < 1e-6


def test_pde_symmetry_at_zero_field():
    gd = gaussian_mixture_grid(SYMMETRIC)
    for _, g in _run(gd, T=0.5, snapshot_times=[0.0, 0.5]):
        np.testing.assert_allclose(g.p_plus, g.p_minus[::-1], atol=1e-8)


def test_pde_step_checks():
    gd = gaussian_mixture_grid(COMPS)
    with pytest.raises(FlowStabilityError):
        flow_pde_m1(gd, GlauberRate(0.7), 1.0, 0.01, 0.1)
    with pytest.raises(MassDriftError):
        _run(gd, T=0.01, dt=1e-4, mass_tol=-1.0)
    with pytest.raises(ValueError):
        flow_pde_m1(gaussian_mixture_grid(COMPS, nx=100), GlauberRate(0.7), 1.0, 1e-4, 0.01)


def test_pde_relaxes_toward_particle_flow_short_time():
    gd = gaussian_mixture_grid(COMPS)
    fin = _run(gd, T=0.25)[-1][1]
    mu = sample_gaussian_mixture(COMPS, 20000, 3)
    part = flow_particle(mu, GlauberRate(0.7), 1.0, 0.1, 20000, 0.005, 0.25, seed=3)[-1][1]
    x, s, w = fin.weighted_points(10)
    assert wasserstein_m1(x, s, w, part.x, part.sigma, np.ones(part.n)) <= 0.05


def test_pde_dt_halving_converges():
    gd = gaussian_mixture_grid(COMPS)
    fins = [_run(gd, T=0.25, dt=dt)[-1][1] for dt in (4e-4, 2e-4, 1e-4)]
    e1, e2 = _grid_distance(fins[0], fins[1]), _grid_distance(fins[1], fins[2])
    assert np.log2(e1 / e2) >= 1.0
