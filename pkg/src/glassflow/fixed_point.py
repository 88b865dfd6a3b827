"""Replica overlap equation and its bifurcation in beta.

The overlap ``q`` of a stationary two-replica state solves

    (1 + q) / (1 - q) - cosh(2 beta h) exp(2 beta^2 q) = 0.

Near ``q = 1`` the left side has slope about ``2 / (1 - q)^2``, so at
``beta = 2`` a float64 root cannot push the residual below ~1e-9. Roots
are therefore refined with mpmath and kept as ``mpf`` alongside their
float64 rounding; reported residuals are evaluated at the refined root.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import mpmath
import numpy as np

Q_MAX = 1.0 - 1e-9
GRID_POINTS = 10_000
RESIDUAL_TOL = 1e-12


def overlap_residual(q, beta, h=0.0):
    """Left side of the overlap equation.

    Accepts floats or mpmath numbers; mpmath inputs are evaluated in the
    current mpmath precision.
    """
    if q >= 1:
        raise ValueError(f"q must be < 1, got {q}")
    if q < 0:
        raise ValueError(f"q must be >= 0, got {q}")
    if isinstance(q, mpmath.mpf) or isinstance(beta, mpmath.mpf):
        q, beta, h = mpmath.mpf(q), mpmath.mpf(beta), mpmath.mpf(h)
        return (1 + q) / (1 - q) - mpmath.cosh(2 * beta * h) * mpmath.exp(2 * beta * beta * q)
    return (1.0 + q) / (1.0 - q) - math.cosh(2.0 * beta * h) * math.exp(2.0 * beta * beta * q)


@dataclass
class OverlapSolution:
    beta: float
    h: float
    roots: list
    residuals: list
    roots_mp: list = field(default_factory=list, repr=False)

    @property
    def largest(self) -> float:
        return self.roots[-1] if self.roots else float("nan")


def _bisect_mp(lo, hi, beta, h, dps: int):
    with mpmath.workdps(dps):
        a, b = mpmath.mpf(lo), mpmath.mpf(hi)
        B, H = mpmath.mpf(beta), mpmath.mpf(h)
        fa = overlap_residual(a, B, H)
        eps = mpmath.mpf(10) ** (-(dps - 5))
        while b - a > eps:
            m = (a + b) / 2
            fm = overlap_residual(m, B, H)
            if fm == 0:
                return m
            if (fm < 0) == (fa < 0):
                a, fa = m, fm
            else:
                b = m
        return (a + b) / 2


def solve_overlap(beta: float, h: float = 0.0, n_grid: int = GRID_POINTS, dps: int = 40) -> OverlapSolution:
    """All roots in ``[0, 1 - 1e-9]`` by grid bracketing and bisection.

    At ``h = 0`` the root ``q = 0`` is exact and always included.
    """
    if beta < 0:
        raise ValueError("beta must be nonnegative")
    grid = np.linspace(0.0, Q_MAX, n_grid)
    with np.errstate(over="ignore"):
        vals = (1.0 + grid) / (1.0 - grid) - np.cosh(2.0 * beta * h) * np.exp(2.0 * beta * beta * grid)
    roots_mp = []
    if h == 0.0:
        roots_mp.append(mpmath.mpf(0))
        start = 1
    else:
        start = 0
        if vals[0] == 0.0:
            roots_mp.append(mpmath.mpf(0))
            start = 1
    for k in range(start, n_grid - 1):
        a, b = vals[k], vals[k + 1]
        if a == 0.0 and k > start:
            continue
        if (a < 0) != (b < 0) or b == 0.0:
            roots_mp.append(_bisect_mp(grid[k], grid[k + 1], beta, h, dps))
    roots_mp.sort()
    with mpmath.workdps(dps):
        res = [float(overlap_residual(r, mpmath.mpf(beta), mpmath.mpf(h))) for r in roots_mp]
    return OverlapSolution(float(beta), float(h), [float(r) for r in roots_mp], res, roots_mp)


def bifurcation_scan(beta_grid, h: float = 0.0):
    """Rows ``(beta, largest_root)`` for an increasing grid."""
    beta_grid = [float(b) for b in beta_grid]
    if any(b2 <= b1 for b1, b2 in zip(beta_grid, beta_grid[1:])):
        raise ValueError("beta grid must be increasing")
    return [(b, solve_overlap(b, h).largest) for b in beta_grid]


def bifurcation_table(beta_grid, h: float = 0.0):
    """Rows ``(beta, h, root_index, q, residual)`` listing every root."""
    rows = []
    for b in beta_grid:
        sol = solve_overlap(float(b), h)
        for k, (q, r) in enumerate(zip(sol.roots, sol.residuals)):
            rows.append((float(b), float(h), k, q, r))
    return rows


def detect_onset(beta_grid, h: float = 0.0, q_min: float = 0.0):
    """Smallest beta on the grid whose largest root exceeds ``q_min``."""
    for b in beta_grid:
        sol = solve_overlap(float(b), h, n_grid=GRID_POINTS)
        if sol.largest > q_min:
            return float(b)
    return None


@dataclass(frozen=True)
class FixedPointMatrices:
    K: np.ndarray
    upsilon: np.ndarray
    kappa: np.ndarray


def fixed_point_matrices(q: float, beta: float) -> FixedPointMatrices:
    """Two-replica matrix elements at overlap ``q``."""
    if not (0.0 <= q < 1.0):
        raise ValueError("q must lie in [0, 1)")
    K = np.array([[1.0, q], [q, 1.0]])
    d = 0.5 * beta * (1.0 + q * q)
    ups = np.array([[d, beta * q], [beta * q, d]])
    return FixedPointMatrices(K, ups, np.zeros((2, 2)))
