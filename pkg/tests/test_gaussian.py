import numpy as np
import pytest
from hypothesis import given, strategies as st

from glassflow.couplings import field, sample_couplings
from glassflow.experiments import random_gaussian_instance
from glassflow.gaussian import (SingularCovarianceError, StepMatrices, assemble_blocks, assemble_blocks_naive,
                                conditional_covariance, conditional_mean_direct, conditional_mean_reduced,
                                conditional_mean_reduced_all, flip_fractions, norm_bounds_check, step_matrices)

instance_args = st.tuples(st.integers(0, 2**32 - 1), st.sampled_from([0.0, 0.5, 1.0]), st.integers(1, 3),
                          st.integers(2, 12))


def _instance(args):
    seed, s, M, N = args
    N = max(N, 2 * M)
    g = np.random.default_rng(seed)
    return (*random_gaussian_instance(g, N, M, s), s)


def _two_by_two_draws(s, n, seed):
    """``n`` independent 2 x 2 coupling matrices with the prescribed covariance."""
    g = np.random.default_rng(seed)
    z = g.standard_normal((4, n))
    J = np.empty((n, 2, 2))
    J[:, 0, 1] = np.sqrt(s) * z[0] + np.sqrt(1 - s) * z[1]
    J[:, 1, 0] = np.sqrt(s) * z[0] + np.sqrt(1 - s) * z[2]
    J[:, 0, 0] = np.sqrt(1 + s) * z[3]
    J[:, 1, 1] = np.sqrt(1 + s) * g.standard_normal(n)
    return J


def _sampled_fields(s, a, b, n=10**6, seed=0):
    J = _two_by_two_draws(s, n, seed)
    G = J @ a / np.sqrt(2)
    F = J @ (b - a) / np.sqrt(2)
    return G, F


def test_no_flip_has_no_increment():
    g = np.random.default_rng(0)
    A, _, G = random_gaussian_instance(g, 8, 2, 1.0)
    bc = assemble_blocks(A, A, 1.0)
    assert not bc.K_tilde.any() and not bc.K_grave.any()
    assert not conditional_mean_direct(bc, G).any()
    np.testing.assert_array_equal(conditional_covariance(bc), bc.K_tilde)


@pytest.mark.parametrize("s", [0.0, 0.5, 1.0])
def test_field_covariance_matches_monte_carlo(s):
    a = np.array([1.0, 1.0])
    b = np.array([1.0, -1.0])
    G, F = _sampled_fields(s, a, b)
    bc = assemble_blocks(a, b, s)
    emp = np.cov(G.T)
    np.testing.assert_allclose(emp, bc.K_full, atol=5e-3)
    joint = np.cov(np.hstack([G, F]).T)
    np.testing.assert_allclose(joint[2:, 2:], bc.K_tilde, atol=2e-2)
    np.testing.assert_allclose(joint[2:, :2], bc.K_grave, atol=2e-2)


def test_conditional_covariance_matches_regression_residuals():
    s = 0.5
    a = np.array([1.0, -1.0])
    b = np.array([-1.0, -1.0])
    G, F = _sampled_fields(s, a, b, seed=1)
    coef, *_ = np.linalg.lstsq(G, F, rcond=None)
    resid = F - G @ coef
    R = conditional_covariance(assemble_blocks(a, b, s))
    np.testing.assert_allclose(np.cov(resid.T), R, atol=1e-2)


def test_independent_couplings_give_block_diagonal_covariance():
    g = np.random.default_rng(2)
    A, B, _ = random_gaussian_instance(g, 6, 2, 0.0)
    K = assemble_blocks(A, B, 0.0).K_full
    for j in range(6):
        for k in range(6):
            if j != k:
                assert not K[2 * j:2 * j + 2, 2 * k:2 * k + 2].any()


def test_zero_field_gives_zero_mean():
    g = np.random.default_rng(3)
    A, B, _ = random_gaussian_instance(g, 7, 2, 0.5)
    assert not conditional_mean_direct(assemble_blocks(A, B, 0.5), np.zeros((2, 7))).any()


def test_direct_equals_reduced_reference_instance():
    g = np.random.default_rng(4)
    A, B, G = random_gaussian_instance(g, 6, 2, 1.0)
    direct = conditional_mean_direct(assemble_blocks(A, B, 1.0), G)
    reduced = conditional_mean_reduced_all(step_matrices(A, B, G), 1.0, A, G)
    np.testing.assert_allclose(direct, reduced, rtol=0, atol=1e-10)
    for j in range(6):
        np.testing.assert_allclose(conditional_mean_reduced(step_matrices(A, B, G), 1.0, A[:, j], G[:, j]),
                                   reduced[:, j], atol=1e-14)


def test_reduced_mean_trivial_cases():
    g = np.random.default_rng(5)
    A, B, G = random_gaussian_instance(g, 9, 3, 0.5)
    sm = step_matrices(A, B, G)
    zero = StepMatrices(sm.K_step, np.zeros((3, 3)), np.zeros((3, 3)), sm.upsilon_step, sm.H_step)
    assert not conditional_mean_reduced_all(zero, 0.5, A, G).any()
    np.testing.assert_allclose(conditional_mean_reduced_all(sm, 0.0, A, G), -sm.L_step @ sm.H_step @ G, atol=1e-14)


def test_fields_outside_the_range_are_rejected():
    g = np.random.default_rng(6)
    A, B, _ = random_gaussian_instance(g, 8, 2, 1.0)
    bc = assemble_blocks(A, B, 1.0)
    with pytest.raises(SingularCovarianceError):
        conditional_mean_direct(bc, g.standard_normal((2, 8)))


def test_overlap_floor_is_enforced():
    A = np.array([[1, 1, 1, 1], [1, 1, 1, -1]], dtype=float)
    bc = assemble_blocks(A, A, 0.5)
    with pytest.raises(SingularCovarianceError):
        conditional_covariance(bc, c_floor=0.9)


def test_step_matrices_inverse():
    g = np.random.default_rng(7)
    A, B, G = random_gaussian_instance(g, 10, 3, 0.5)
    sm = step_matrices(A, B, G)
    np.testing.assert_allclose(sm.H_step @ sm.K_step, np.eye(3), atol=1e-10)
    np.testing.assert_allclose(np.diag(sm.K_step), 1.0)


@given(instance_args)
def test_direct_and_reduced_means_agree(args):
    A, B, G, s = _instance(args)
    direct = conditional_mean_direct(assemble_blocks(A, B, s), G)
    reduced = conditional_mean_reduced_all(step_matrices(A, B, G), s, A, G)
    np.testing.assert_allclose(direct, reduced, rtol=0, atol=1e-10)


@given(instance_args)
def test_block_assembly_matches_naive_loops(args):
    A, B, _, s = _instance(args)
    fast, slow = assemble_blocks(A, B, s), assemble_blocks_naive(A, B, s)
    for name in ("K_full", "K_tilde", "K_grave"):
        np.testing.assert_allclose(getattr(fast, name), getattr(slow, name), rtol=0, atol=1e-14)


@given(instance_args)
def test_covariances_psd_and_conditioning_shrinks(args):
    A, B, _, s = _instance(args)
    bc = assemble_blocks(A, B, s)
    R = conditional_covariance(bc)
    assert np.linalg.eigvalsh(bc.K_full)[0] >= -1e-10
    assert np.linalg.eigvalsh(bc.K_tilde)[0] >= -1e-10
    assert np.linalg.eigvalsh(R)[0] >= -1e-10
    assert np.linalg.norm(R, 2) <= np.linalg.norm(bc.K_tilde, 2) + 1e-10


@given(instance_args)
def test_increment_and_field_norm_bounds(args):
    A, B, G, s = _instance(args)
    bc = assemble_blocks(A, B, s)
    M = A.shape[0]
    U = flip_fractions(A, B).max()
    assert np.linalg.norm(bc.K_full, 2) <= M * (1 + s) + 1e-10
    assert np.linalg.norm(bc.K_tilde, 2) <= 4 * M * (1 + s) * U + 1e-10
    assert np.linalg.norm(bc.K_grave, 2) <= np.linalg.norm(step_matrices(A, B, G).L_step, 2) + 2 * s * M * np.sqrt(U) + 1e-10


def test_cross_covariance_bound_as_stated():
    # the published form |K_grave| <= |L_step| + sqrt(2/N) on random instances
    g = np.random.default_rng(8)
    bad = []
    for k in range(60):
        s = [0.0, 0.5, 1.0][k % 3]
        M = 1 + k % 3
        A, B, G = random_gaussian_instance(g, 12, M, s)
        bc = assemble_blocks(A, B, s)
        lhs = np.linalg.norm(bc.K_grave, 2)
        rhs = np.linalg.norm(step_matrices(A, B, G).L_step, 2) + np.sqrt(2 / 12)
        if lhs > rhs + 1e-10:
            bad.append((M, s, lhs, rhs))
    assert not bad, f"{len(bad)} of 60 instances violate the bound, e.g. {bad[:3]}"


def test_norm_report_lists_every_bound():
    g = np.random.default_rng(9)
    A, B, G = random_gaussian_instance(g, 10, 2, 0.5)
    checks = norm_bounds_check(assemble_blocks(A, B, 0.5), step_matrices(A, B, G), flip_fractions(A, B))
    names = [c.name for c in checks]
    assert len(names) == 7 and len(set(names)) == 7
    assert all(np.isfinite(c.lhs) or c.lhs == np.inf for c in checks)


def test_fields_from_a_coupling_draw_lie_in_the_range():
    N, M, s = 12, 3, 1.0
    g = np.random.default_rng(10)
    A = np.where(g.random((M, N)) < 0.5, -1.0, 1.0)
    B = A.copy()
    B[:, :3] *= -1
    bc = assemble_blocks(A, B, s)
    for seed in range(5):
        G = field(sample_couplings(N, s, seed), A)
        conditional_mean_direct(bc, G)
