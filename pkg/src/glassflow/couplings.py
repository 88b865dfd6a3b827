"""Quenched Gaussian couplings with partial symmetry, and the local fields.

With ``J = sqrt(s) S + sqrt(1-s) A`` off the diagonal (``S`` symmetric,
``A`` i.i.d.) one gets ``E[J_jk J_lm] = d(j-l) d(k-m) + s d(j-m) d(k-l)``:
unit variance, ``Cov(J_jk, J_kj) = s``. The diagonal is drawn with
variance ``1 + s`` so the same formula holds at ``j = k``.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import rng as _rng

_MAGIC = b"GFJ1"


@dataclass(frozen=True, eq=False)
class CouplingMatrix:
    """Raw (unscaled) ``N x N`` coupling matrix.

    ``JT`` caches the transpose so a column of ``J`` is a contiguous row.
    """

    entries: np.ndarray
    s: float

    def __post_init__(self):
        J = np.ascontiguousarray(self.entries, dtype=np.float64)
        if J.ndim != 2 or J.shape[0] != J.shape[1]:
            raise ValueError(f"coupling matrix must be square, got {J.shape}")
        if not np.all(np.isfinite(J)):
            raise ValueError("coupling entries must be finite")
        J.setflags(write=False)
        JT = np.ascontiguousarray(J.T)
        JT.setflags(write=False)
        object.__setattr__(self, "entries", J)
        object.__setattr__(self, "JT", JT)

    @property
    def N(self) -> int:
        return self.entries.shape[0]

    def save(self, path) -> None:
        """Write the ``GFJ1`` binary: 16-byte header, then row-major <f8.

        The header is the magic, u32 ``N``, u32 reserved, and four zero
        bytes of padding.
        """
        with open(path, "wb") as f:
            f.write(_MAGIC + struct.pack("<II", self.N, 0) + bytes(4))
            f.write(self.entries.astype("<f8").tobytes(order="C"))

    @classmethod
    def load(cls, path, s: float = float("nan")) -> "CouplingMatrix":
        data = Path(path).read_bytes()
        if len(data) < 16 or data[:4] != _MAGIC:
            raise ValueError(f"{path}: not a GFJ1 coupling file")
        (N, _reserved) = struct.unpack("<II", data[4:12])
        body = np.frombuffer(data, dtype="<f8", offset=16)
        if body.size != N * N:
            raise ValueError(f"{path}: expected {N * N} entries, found {body.size}")
        return cls(body.reshape(N, N).astype(np.float64), s)


def sample_couplings(N: int, s: float, seed: int, index: int = 0) -> CouplingMatrix:
    """Draw ``J`` deterministically from ``(N, s, seed, index)``."""
    if not (0.0 <= s <= 1.0):
        raise ValueError(f"symmetry s must lie in [0, 1], got {s}")
    if N < 1:
        raise ValueError("N must be positive")
    g = _rng.stream(seed, "couplings", index)
    S = g.standard_normal((N, N))
    S = np.triu(S, 1)
    S = S + S.T
    A = g.standard_normal((N, N))
    diag = g.standard_normal(N) * np.sqrt(1.0 + s)
    if s == 1.0:
        J = S
    elif s == 0.0:
        J = A
    else:
        J = np.sqrt(s) * S + np.sqrt(1.0 - s) * A
    np.fill_diagonal(J, diag)
    return CouplingMatrix(J, float(s))


def field(J: CouplingMatrix, sigma) -> np.ndarray:
    """Local fields ``G[i, j] = N^{-1/2} sum_k J[j, k] sigma[i, k]`` (``M x N``)."""
    sig = np.asarray(sigma, dtype=np.float64)
    if sig.ndim == 1:
        sig = sig[None, :]
    if sig.shape[1] != J.N:
        raise ValueError(f"spin configuration has {sig.shape[1]} sites, couplings have {J.N}")
    return (sig @ J.JT) / np.sqrt(J.N)


def field_flip_update(G: np.ndarray, J: CouplingMatrix, sigma_old, i: int, j: int) -> np.ndarray:
    """Fields after flipping spin ``(i, j)``; ``sigma_old`` is pre-flip.

    Returns a new array; only row ``i`` changes.
    """
    M, N = G.shape
    if not (0 <= i < M and 0 <= j < N):
        raise IndexError(f"spin index ({i}, {j}) out of range for shape {(M, N)}")
    out = np.array(G, dtype=np.float64, copy=True)
    a = 2.0 * float(sigma_old[i, j]) * (1.0 / np.sqrt(N))
    out[i] -= a * J.JT[j]
    return out


def operator_norm_scaled(J: CouplingMatrix, tol: float = 1e-8, max_iter: int = 200, seed: int = 0) -> float:
    """Spectral norm of ``N^{-1/2} J`` by power iteration on ``J^T J``.

    The Rayleigh quotient converges to the top eigenvalue of ``J^T J`` at
    twice the rate of the vector, so the relative tolerance is met well
    within ``max_iter`` for the well-separated edge of a Gaussian matrix.
    """
    A = J.entries
    N = J.N
    if not np.any(A):
        return 0.0
    v = _rng.stream(seed, "probe", 0).standard_normal(N)
    v /= np.linalg.norm(v)
    lam_old = 0.0
    for _ in range(max_iter):
        w = A.T @ (A @ v)
        lam = float(v @ w)
        nw = np.linalg.norm(w)
        if nw == 0.0:
            return 0.0
        v = w / nw
        if abs(lam - lam_old) <= tol * abs(lam):
            break
        lam_old = lam
    return float(np.sqrt(lam / N))
