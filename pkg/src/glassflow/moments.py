"""Coefficient matrices of a measure, the regularized inverse, drift and diffusion.

For a measure ``xi`` on ``{-1,+1}^M x R^M``::

    K[j,k]   = E[s^j s^k]
    L[j,k]   = E[s^k s^j c(s^j, x^j)]
    kappa[j,k] = E[x^k s^j c(s^j, x^j)]
    upsilon[j,k] = E[s^k x^j]

``H`` is ``K^{-1}`` when the smallest eigenvalue ``Lambda`` of ``K`` is at
least ``c_floor / 2`` and ``((c_floor/2 - Lambda) I + K)^{-1}`` otherwise.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import EmpiricalMeasure, RateFunction


def jacobi_eigh(A, tol: float = 1e-15, max_sweeps: int = 64):
    """Eigen-decomposition of a small symmetric matrix by cyclic Jacobi.

    Returns ascending eigenvalues and the matching orthonormal columns.
    """
    A = np.array(A, dtype=np.float64, copy=True)
    n = A.shape[0]
    if A.shape != (n, n):
        raise ValueError("matrix must be square")
    A = 0.5 * (A + A.T)
    V = np.eye(n)
    scale = max(np.abs(A).max(), 1e-300)
    for _ in range(max_sweeps):
        off = np.sqrt(np.sum(np.triu(A, 1) ** 2))
        if off <= tol * scale:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = A[p, q]
                if abs(apq) <= 1e-300:
                    continue
                theta = (A[q, q] - A[p, p]) / (2.0 * apq)
                t = np.sign(theta) / (abs(theta) + np.sqrt(theta * theta + 1.0)) if theta != 0 else 1.0
                c = 1.0 / np.sqrt(t * t + 1.0)
                s = t * c
                R = np.eye(n)
                R[p, p] = c
                R[q, q] = c
                R[p, q] = s
                R[q, p] = -s
                A = R.T @ A @ R
                A[p, q] = A[q, p] = 0.0
                V = V @ R
    w = np.diag(A).copy()
    order = np.argsort(w)
    return w[order], V[:, order]


def smallest_eigenvalue(K) -> float:
    K = np.asarray(K, dtype=np.float64)
    if K.shape[0] <= 8:
        return float(jacobi_eigh(K)[0][0])
    return float(np.linalg.eigvalsh(K)[0])


def overlap_matrix(sigma) -> np.ndarray:
    """``K = sigma sigma^T / N`` for an ``M x N`` spin array."""
    S = np.asarray(sigma, dtype=np.float64)
    return (S @ S.T) / S.shape[1]


def regularized_inverse(K, c_floor: float):
    """Return ``(H, Lambda)`` for the overlap matrix ``K``."""
    w, V = jacobi_eigh(K) if K.shape[0] <= 8 else np.linalg.eigh(K)
    lam = float(w[0])
    shift = 0.0 if lam >= 0.5 * c_floor else 0.5 * c_floor - lam
    H = (V / (w + shift)) @ V.T
    return 0.5 * (H + H.T), lam


@dataclass(frozen=True)
class MomentSet:
    K: np.ndarray
    L: np.ndarray
    kappa: np.ndarray
    upsilon: np.ndarray
    Lambda: float
    H: np.ndarray

    @property
    def M(self) -> int:
        return self.K.shape[0]


def compute_moments(mu: EmpiricalMeasure, rate: RateFunction, c_floor: float) -> MomentSet:
    S = mu.spin_float()
    X = mu.x
    n = mu.n
    C = rate.eval(S, X)
    SC = S * C
    K = (S.T @ S) / n
    L = (SC.T @ S) / n
    kappa = (SC.T @ X) / n
    upsilon = (X.T @ S) / n
    H, lam = regularized_inverse(K, c_floor)
    M = K.shape[0]
    return MomentSet(K, L, kappa, upsilon, float(min(max(lam, 0.0), M)), H)


def drift_matrices(ms: MomentSet, s: float):
    """Matrices ``(A, B)`` with ``m(sigma, x) = A x + B sigma``.

    The replica term uses ``upsilon^T`` (entries ``E[s^p x^q]``), the
    orientation in which the exact one-step conditional mean reduces to
    this drift.
    """
    LH = ms.L @ ms.H
    A = -2.0 * LH
    B = -2.0 * s * (ms.kappa @ ms.H) + 2.0 * s * (LH @ ms.upsilon.T @ ms.H)
    return A, B


def drift(ms: MomentSet, s: float, sigma, x) -> np.ndarray:
    sigma = np.asarray(sigma, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    if sigma.shape[-1] != ms.M or x.shape[-1] != ms.M:
        raise ValueError(f"expected vectors of length {ms.M}")
    A, B = drift_matrices(ms, s)
    return x @ A.T + sigma @ B.T


def diffusion(ms: MomentSet) -> np.ndarray:
    d = np.diag(ms.L)
    if np.any(d < 0):
        raise ValueError("negative diagonal entry in L; moment set is corrupted")
    return 2.0 * np.sqrt(d)


@dataclass
class LipschitzReport:
    quotients: dict
    skipped: int
    n_pairs: int

    @property
    def max_quotients(self) -> dict:
        return {k: (max(v) if v else 0.0) for k, v in self.quotients.items()}

    @property
    def bounded(self) -> bool:
        return all(np.isfinite(q) for v in self.quotients.values() for q in v)


def lipschitz_probe(pairs, rate: RateFunction, c_floor: float = 0.1) -> LipschitzReport:
    """Empirical quotients ``|delta matrix|_max / d_W`` over measure pairs."""
    from .transport import wasserstein_exact

    q = {"K": [], "L": [], "kappa": [], "upsilon": []}
    skipped = 0
    pairs = list(pairs)
    for mu, nu in pairs:
        d = wasserstein_exact(mu, nu)
        if d == 0.0:
            skipped += 1
            continue
        a = compute_moments(mu, rate, c_floor)
        b = compute_moments(nu, rate, c_floor)
        for name in q:
            q[name].append(float(np.abs(getattr(a, name) - getattr(b, name)).max() / d))
    return LipschitzReport(q, skipped, len(pairs))
