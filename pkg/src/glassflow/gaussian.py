"""Conditional Gaussian law of one-step field increments.

Given spins ``A = sigma_b`` and ``B = sigma_{b+1}`` (``M x N``), the fields
``G = N^{-1/2} J A`` and increments ``F = N^{-1/2} J (B - A)`` are jointly
Gaussian over the couplings. Vectors are flattened spin-major: entry
``(i, j)`` sits at position ``j * M + i``.

When ``s > 0`` and ``M >= 2`` the field covariance can be singular (at
``s = 1`` the identity ``sum_j A[p,j] G[q,j] = sum_j A[q,j] G[p,j]`` holds
for every coupling draw), so solves go through a symmetric
eigendecomposition restricted to the range of ``K_full``.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

log = logging.getLogger(__name__)

RANK_RTOL = 1e-11


class SingularCovarianceError(np.linalg.LinAlgError):
    pass


def _spins(a) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    return a[None, :] if a.ndim == 1 else a


@dataclass(frozen=True)
class BlockCovariance:
    K_full: np.ndarray
    K_tilde: np.ndarray
    K_grave: np.ndarray
    M: int
    N: int
    s: float
    overlap: np.ndarray

    def flat(self, Y) -> np.ndarray:
        """``M x N`` array to a spin-major vector."""
        return np.asarray(Y, dtype=np.float64).T.reshape(-1)

    def unflat(self, v) -> np.ndarray:
        return np.asarray(v).reshape(self.N, self.M).T


def _two_index(X, Y, s, N, M):
    # kron(I_N, X Y^T / N) + (s/N) [Y[m,j] X[i,k]] at ((j,i), (k,m))
    local = np.kron(np.eye(N), (X @ Y.T) / N)
    cross = (s / N) * np.einsum("mj,ik->jikm", Y, X).reshape(N * M, N * M)
    return local + cross


def assemble_blocks(sigma_b, sigma_b1, s: float) -> BlockCovariance:
    """Covariances of the fields and their one-step increments.

    ``K_full = Cov(G, G)``, ``K_grave = Cov(F, G)``, ``K_tilde = Cov(F, F)``.
    """
    A = _spins(sigma_b)
    B = _spins(sigma_b1)
    if A.shape != B.shape:
        raise ValueError(f"shape mismatch: {A.shape} vs {B.shape}")
    M, N = A.shape
    D = B - A
    return BlockCovariance(
        K_full=_two_index(A, A, s, N, M),
        K_tilde=_two_index(D, D, s, N, M),
        K_grave=_two_index(D, A, s, N, M),
        M=M,
        N=N,
        s=float(s),
        overlap=(A @ A.T) / N,
    )


def assemble_blocks_naive(sigma_b, sigma_b1, s: float) -> BlockCovariance:
    """Entry-by-entry assembly straight from the defining sums (slow)."""
    A = _spins(sigma_b)
    B = _spins(sigma_b1)
    M, N = A.shape
    D = B - A
    Kf = np.zeros((N * M, N * M))
    Kg = np.zeros_like(Kf)
    Kt = np.zeros_like(Kf)
    for j in range(N):
        for i in range(M):
            for k in range(N):
                for m in range(M):
                    r, c = j * M + i, k * M + m
                    dl = 1.0 if j == k else 0.0
                    Kf[r, c] = dl * np.dot(A[i], A[m]) / N + s / N * A[m, j] * A[i, k]
                    Kg[r, c] = dl * np.dot(D[i], A[m]) / N + s / N * A[m, j] * D[i, k]
                    Kt[r, c] = dl * np.dot(D[i], D[m]) / N + s / N * D[m, j] * D[i, k]
    return BlockCovariance(Kf, Kt, Kg, M, N, float(s), (A @ A.T) / N)


class _RangeSolver:
    """Pseudo-inverse of a PSD matrix through its eigendecomposition."""

    def __init__(self, K):
        w, V = np.linalg.eigh(0.5 * (K + K.T))
        wmax = max(float(w[-1]), 1e-300)
        keep = w > RANK_RTOL * wmax
        self.rank = int(keep.sum())
        self.nullity = K.shape[0] - self.rank
        self.w = w[keep]
        self.V = V[:, keep]
        self.Vnull = V[:, ~keep]
        self.min_eig = float(w[0])
        if self.nullity:
            log.info("field covariance has a %d-dimensional null space; solving on its range", self.nullity)

    def solve(self, b):
        return self.V @ ((self.V.T @ b) / self.w[:, None] if b.ndim == 2 else (self.V.T @ b) / self.w)

    def null_component(self, b) -> float:
        if not self.nullity:
            return 0.0
        return float(np.linalg.norm(self.Vnull.T @ b))


def conditional_mean_direct(bc: BlockCovariance, G, c_floor: float | None = None, rtol: float = 1e-8) -> np.ndarray:
    """``E[F | G] = K_grave K_full^{-1} G`` returned as an ``M x N`` array.

    Raises ``SingularCovarianceError`` when ``G`` has a component outside
    the range of ``K_full`` (no coupling draw can produce it), or when the
    replica overlap eigenvalue is below ``c_floor``.
    """
    g = bc.flat(_spins(G))
    if g.size != bc.N * bc.M:
        raise ValueError("field array does not match the block dimensions")
    if c_floor is not None:
        _check_floor(bc, c_floor)
    solver = _RangeSolver(bc.K_full)
    off = solver.null_component(g)
    if off > rtol * max(np.linalg.norm(g), 1.0):
        raise SingularCovarianceError(
            f"fields are not in the range of the singular field covariance (residual {off:.3e}); "
            f"smallest eigenvalue {solver.min_eig:.3e}; raise the overlap floor or use fields from a coupling draw"
        )
    return bc.unflat(bc.K_grave @ solver.solve(g))


def conditional_covariance(bc: BlockCovariance, c_floor: float | None = None) -> np.ndarray:
    """``R = K_tilde - K_grave K_full^{-1} K_grave^T`` (pseudo-inverse on the range)."""
    if c_floor is not None:
        _check_floor(bc, c_floor)
    solver = _RangeSolver(bc.K_full)
    R = bc.K_tilde - bc.K_grave @ solver.solve(bc.K_grave.T)
    return 0.5 * (R + R.T)


def _check_floor(bc: BlockCovariance, c_floor: float):
    lam = float(np.linalg.eigvalsh(bc.overlap)[0])
    if lam < c_floor:
        raise SingularCovarianceError(f"overlap eigenvalue {lam:.4g} is below the floor c = {c_floor}")


@dataclass(frozen=True)
class StepMatrices:
    K_step: np.ndarray
    L_step: np.ndarray
    kappa_step: np.ndarray
    upsilon_step: np.ndarray
    H_step: np.ndarray

    @property
    def Lambda(self) -> float:
        return float(np.linalg.eigvalsh(self.K_step)[0])


def step_matrices(sigma_b, sigma_b1, G) -> StepMatrices:
    """Empirical ``M x M`` matrices of one step.

    ``L[p,q] = N^{-1} sum_k A[q,k] (A[p,k] - B[p,k])``,
    ``kappa[p,q] = N^{-1} sum_k G[q,k] (A[p,k] - B[p,k])``,
    ``upsilon[p,q] = N^{-1} sum_k A[p,k] G[q,k]``.
    """
    A = _spins(sigma_b)
    B = _spins(sigma_b1)
    Gm = _spins(G)
    N = A.shape[1]
    D = A - B
    K = (A @ A.T) / N
    try:
        H = np.linalg.inv(K)
    except np.linalg.LinAlgError as exc:
        raise SingularCovarianceError("overlap matrix of sigma_b is singular") from exc
    return StepMatrices(K, (D @ A.T) / N, (D @ Gm.T) / N, (A @ Gm.T) / N, 0.5 * (H + H.T))


def conditional_mean_reduced(sm: StepMatrices, s: float, sigma_b_col, G_col) -> np.ndarray:
    """Closed-form conditional mean at one site from the step matrices."""
    sig = np.asarray(sigma_b_col, dtype=np.float64)
    g = np.asarray(G_col, dtype=np.float64)
    H = sm.H_step
    LH = sm.L_step @ H
    return -LH @ g - s * (sm.kappa_step @ H @ sig) + s * (LH @ sm.upsilon_step @ H @ sig)


def conditional_mean_reduced_all(sm: StepMatrices, s: float, sigma_b, G) -> np.ndarray:
    """Vectorized ``conditional_mean_reduced`` over all sites (``M x N``)."""
    A = _spins(sigma_b)
    Gm = _spins(G)
    H = sm.H_step
    LH = sm.L_step @ H
    return -LH @ Gm - s * (sm.kappa_step @ H @ A) + s * (LH @ sm.upsilon_step @ H @ A)


@dataclass
class BoundCheck:
    name: str
    lhs: float
    rhs: float

    @property
    def margin(self) -> float:
        return self.rhs - self.lhs

    @property
    def ok(self) -> bool:
        return self.lhs <= self.rhs * (1 + 1e-10) + 1e-12


def norm_bounds_check(bc: BlockCovariance, sm: StepMatrices, flip_fractions) -> list:
    """Evaluate the matrix-norm inequalities; report only, never raises."""
    M, N, s = bc.M, bc.N, bc.s
    U = float(np.max(np.asarray(flip_fractions, dtype=np.float64)))
    norm = lambda X: float(np.linalg.norm(X, 2))
    R = conditional_covariance(bc)
    out = [
        BoundCheck("conditional <= marginal: |R| <= |K_tilde|", norm(R), norm(bc.K_tilde)),
        BoundCheck("increment covariance: |K_tilde| <= 4M(1+s) max_i U_i", norm(bc.K_tilde), 4 * M * (1 + s) * U),
        BoundCheck("cross covariance: |K_grave| <= |L_step| + sqrt(2/N)", norm(bc.K_grave),
                   norm(sm.L_step) + np.sqrt(2.0 / N)),
        BoundCheck("cross covariance: |K_grave| <= |L_step| + 2sM sqrt(max_i U_i)", norm(bc.K_grave),
                   norm(sm.L_step) + 2.0 * s * M * np.sqrt(U)),
        BoundCheck("field covariance: |K_full| <= M(1+s)", norm(bc.K_full), M * (1 + s)),
        BoundCheck("field covariance: |K_full| >= |K_step|", norm(sm.K_step), norm(bc.K_full)),
    ]
    wmin = float(np.linalg.eigvalsh(bc.K_full)[0])
    inv_full = np.inf if wmin <= RANK_RTOL * norm(bc.K_full) else 1.0 / wmin
    out.append(BoundCheck("nonsingular: |K_full^-1| <= |K_step^-1|", inv_full, norm(sm.H_step)))
    return out


def flip_fractions(sigma_b, sigma_b1) -> np.ndarray:
    """Fraction of sites that changed sign, per replica."""
    return np.mean(_spins(sigma_b) != _spins(sigma_b1), axis=1)
