"""The mean-field flow: a self-consistent particle system for any M and a
finite-volume solver for the M = 1 density equations.

Particles carry ``(sigma, x)``. Each step recomputes the moment matrices of
the ensemble, advances ``x`` by Euler-Maruyama with drift ``m`` and
diffusion ``D``, and flips each spin with probability
``1 - exp(-dt c(sigma, x))`` at the pre-step state.

For M = 1 the densities ``p(+1, x)``, ``p(-1, x)`` obey

    dp/dt(a, x) = c(-a, x) p(-a, x) - c(a, x) p(a, x)
                  + 2 L d2p/dx2 - d/dx (m(a, x) p(a, x))

with ``m(a, x) = -2 L x - 2 s kappa a + 2 s L upsilon a``.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr

from . import rng as _rng
from .model import EmpiricalMeasure, RateFunction
from .moments import compute_moments, diffusion, drift_matrices

log = logging.getLogger(__name__)


class FlowStabilityError(ValueError):
    """Time step too large for the explicit scheme."""


class MassDriftError(RuntimeError):
    pass


def _step_times(T: float, dt: float):
    n = int(round(T / dt))
    if n < 1 or abs(n * dt - T) > 1e-9 * max(1.0, T):
        raise ValueError(f"T = {T} is not a whole number of steps dt = {dt}")
    return n


def _snapshot_steps(snapshot_times, n, dt):
    if snapshot_times is None:
        return {0: 0.0, n: n * dt}
    out = {}
    for t in snapshot_times:
        k = int(round(t / dt))
        if abs(k * dt - t) > 1e-9 or not (0 <= k <= n):
            raise ValueError(f"snapshot time {t} is not on the step grid")
        out[k] = float(t)
    return out


def initial_ensemble(init: EmpiricalMeasure, P: int, seed: int) -> EmpiricalMeasure:
    """``P`` particles from ``init``: exact copies when ``P`` is a multiple of
    the atom count, otherwise a uniform resample with replacement."""
    if init.n == 0:
        raise ValueError("initial measure is empty")
    if P % init.n == 0:
        return init.tile(P // init.n)
    g = _rng.stream(seed, "resample", 1)
    return init.subset(g.integers(0, init.n, size=P))


def flow_particle(init: EmpiricalMeasure, rate: RateFunction, s: float, c_floor: float, P: int, dt: float, T: float,
                  seed: int, snapshot_times=None, frozen: bool = False, index: int = 0):
    """Integrate the particle system; returns ``[(t, EmpiricalMeasure), ...]``.

    With ``frozen`` the moment matrices are computed once at ``t = 0`` and
    held, giving independent hybrid diffusions.
    """
    if init is None or init.n == 0:
        raise ValueError("initial measure is empty")
    if P < 1:
        raise ValueError("P must be positive")
    if dt > 0.01 / rate.c1 + 1e-15:
        raise FlowStabilityError(f"dt = {dt} exceeds 0.01 / c1 = {0.01 / rate.c1}")
    n = _step_times(T, dt)
    snaps = _snapshot_steps(snapshot_times, n, dt)
    ens = initial_ensemble(init, P, seed)
    S = ens.spin_float()
    X = ens.x.copy()
    g = _rng.stream(seed, "flow", index)
    out = []
    sq = np.sqrt(dt)
    ms = None
    for k in range(n + 1):
        if k in snaps:
            out.append((snaps[k], EmpiricalMeasure(S.astype(np.int8), X.copy(), check=False)))
        if k == n:
            break
        if ms is None or not frozen:
            ms = compute_moments(EmpiricalMeasure(S.astype(np.int8), X, check=False), rate, c_floor)
            A, B = drift_matrices(ms, s)
            D = diffusion(ms)
        C = rate.eval(S, X)
        xi = g.standard_normal(X.shape)
        u = g.random(X.shape)
        X = X + dt * (X @ A.T + S @ B.T) + sq * D * xi
        S = np.where(u < -np.expm1(-dt * C), -S, S)
    return out


# --------------------------------------------------------------------------
# M = 1 grid


@dataclass
class GridDensity:
    x_min: float
    x_max: float
    nx: int
    p_plus: np.ndarray
    p_minus: np.ndarray

    def __post_init__(self):
        self.p_plus = np.asarray(self.p_plus, dtype=np.float64)
        self.p_minus = np.asarray(self.p_minus, dtype=np.float64)
        if self.p_plus.shape != (self.nx,) or self.p_minus.shape != (self.nx,):
            raise ValueError("density arrays must have length nx")
        if not self.x_max > self.x_min:
            raise ValueError("x_max must exceed x_min")

    @property
    def dx(self) -> float:
        return (self.x_max - self.x_min) / self.nx

    @property
    def centers(self) -> np.ndarray:
        return self.x_min + (np.arange(self.nx) + 0.5) * self.dx

    @property
    def edges(self) -> np.ndarray:
        return np.linspace(self.x_min, self.x_max, self.nx + 1)

    def mass(self) -> float:
        return float((self.p_plus.sum() + self.p_minus.sum()) * self.dx)

    def copy(self) -> "GridDensity":
        return GridDensity(self.x_min, self.x_max, self.nx, self.p_plus.copy(), self.p_minus.copy())

    def validate(self, tol: float = 1e-8) -> None:
        if np.any(self.p_plus < 0) or np.any(self.p_minus < 0):
            raise ValueError("densities must be nonnegative")
        if abs(self.mass() - 1.0) > tol:
            raise ValueError(f"total mass {self.mass()} differs from 1")

    def weighted_points(self, sub: int = 1):
        """Quadrature points ``(x, sigma, w)`` with ``sub`` midpoints per cell."""
        off = (np.arange(sub) + 0.5) / sub * self.dx
        x = (self.edges[:-1, None] + off[None, :]).ravel()
        wp = np.repeat(self.p_plus * self.dx / sub, sub)
        wm = np.repeat(self.p_minus * self.dx / sub, sub)
        xs = np.concatenate([x, x])
        ss = np.concatenate([np.ones_like(x), -np.ones_like(x)])
        ws = np.concatenate([wp, wm])
        keep = ws > 0
        return xs[keep], ss[keep], ws[keep]


def gaussian_mixture_grid(components, nx: int = 400, x_min: float = -8.0, x_max: float = 8.0) -> GridDensity:
    """Exact cell averages of a mixture ``[(sign, weight, mean, std), ...]``,
    renormalized to unit mass on the grid."""
    edges = np.linspace(x_min, x_max, nx + 1)
    dx = (x_max - x_min) / nx
    pp, pm = np.zeros(nx), np.zeros(nx)
    for sign, w, mean, sd in components:
        cdf = ndtr((edges - mean) / sd)
        cell = w * np.diff(cdf) / dx
        if sign > 0:
            pp += cell
        else:
            pm += cell
    gd = GridDensity(x_min, x_max, nx, pp, pm)
    total = gd.mass()
    gd.p_plus /= total
    gd.p_minus /= total
    return gd


def sample_gaussian_mixture(components, n: int, seed: int, index: int = 0) -> EmpiricalMeasure:
    """``n`` atoms drawn from the same mixture as ``gaussian_mixture_grid``."""
    g = _rng.stream(seed, "grid", index)
    w = np.array([c[1] for c in components], dtype=np.float64)
    pick = g.choice(len(components), size=n, p=w / w.sum())
    sig = np.array([components[k][0] for k in pick], dtype=np.int8)
    mean = np.array([components[k][2] for k in pick])
    sd = np.array([components[k][3] for k in pick])
    return EmpiricalMeasure(sig[:, None], (mean + sd * g.standard_normal(n))[:, None])


def silverman_bandwidth(x) -> float:
    x = np.ravel(x)
    return 1.06 * float(np.std(x)) * x.size ** (-0.2)


def measure_to_grid(mu: EmpiricalMeasure, nx: int = 400, x_min: float = -8.0, x_max: float = 8.0,
                    bandwidth: float | None = None) -> GridDensity:
    """Gaussian kernel density per spin sign, as exact cell averages.

    The bandwidth is Silverman's rule on the pooled field values, floored
    at one cell width.
    """
    if mu.M != 1:
        raise ValueError("measure_to_grid needs M = 1")
    x = mu.x[:, 0]
    if np.any(x < x_min) or np.any(x > x_max):
        raise ValueError("atoms lie outside the grid")
    dx = (x_max - x_min) / nx
    bw = silverman_bandwidth(x) if bandwidth is None else float(bandwidth)
    bw = max(bw, dx)
    edges = np.linspace(x_min, x_max, nx + 1)
    out = []
    for sign in (1, -1):
        xs = x[mu.sigma[:, 0] == sign]
        if xs.size == 0:
            out.append(np.zeros(nx))
            continue
        cells = np.zeros(nx)
        for chunk in np.array_split(xs, max(1, xs.size // 2048)):
            cdf = ndtr((edges[None, :] - chunk[:, None]) / bw)
            cells += np.diff(cdf, axis=1).sum(axis=0)
        out.append(cells / (mu.n * dx))
    gd = GridDensity(x_min, x_max, nx, out[0], out[1])
    total = gd.mass()
    gd.p_plus /= total
    gd.p_minus /= total
    return gd


def grid_to_measure(gd: GridDensity, n_atoms: int, seed: int, index: int = 0) -> EmpiricalMeasure:
    """Inverse-CDF sampling over (sign, cell), uniform within the cell."""
    g = _rng.stream(seed, "grid", 1000 + index)
    w = np.concatenate([gd.p_plus, gd.p_minus]) * gd.dx
    cdf = np.cumsum(w)
    cdf /= cdf[-1]
    u = g.random(n_atoms)
    idx = np.minimum(np.searchsorted(cdf, u, side="right"), w.size - 1)
    sign = np.where(idx < gd.nx, 1, -1).astype(np.int8)
    cell = idx % gd.nx
    x = gd.x_min + (cell + g.random(n_atoms)) * gd.dx
    return EmpiricalMeasure(sign[:, None], x[:, None])


class _PDE:
    def __init__(self, gd: GridDensity, rate: RateFunction, s: float):
        self.nx = gd.nx
        self.dx = gd.dx
        self.xc = gd.centers
        self.xf = gd.edges[1:-1]
        self.rate = rate
        self.s = s
        self.cp = rate.eval(np.ones_like(self.xc), self.xc)
        self.cm = rate.eval(-np.ones_like(self.xc), self.xc)

    def coefficients(self, pp, pm):
        dx = self.dx
        L = float(np.sum(self.cp * pp + self.cm * pm) * dx)
        kappa = float(np.sum(self.xc * (self.cp * pp - self.cm * pm)) * dx)
        ups = float(np.sum(self.xc * (pp - pm)) * dx)
        return L, kappa, ups

    def velocities(self, L, kappa, ups):
        b = -2.0 * self.s * kappa + 2.0 * self.s * L * ups
        return -2.0 * L * self.xf + b, -2.0 * L * self.xf - b

    def max_dt(self, L, kappa, ups):
        vp, vm = self.velocities(L, kappa, ups)
        vmax = max(np.abs(vp).max(), np.abs(vm).max(), 1e-300)
        return min(self.dx**2 / (8.0 * max(L, 1e-300)), self.dx / (2.0 * vmax))

    def _transport(self, p, v, L):
        dx = self.dx
        flux = np.maximum(v, 0.0) * p[:-1] + np.minimum(v, 0.0) * p[1:]
        flux -= 2.0 * L * (p[1:] - p[:-1]) / dx
        div = np.zeros_like(p)
        div[:-1] -= flux
        div[1:] += flux
        return div / dx

    def rhs(self, pp, pm):
        L, kappa, ups = self.coefficients(pp, pm)
        vp, vm = self.velocities(L, kappa, ups)
        # exchange: mass leaving + arrives at -, and vice versa
        ex = self.cm * pm - self.cp * pp
        return self._transport(pp, vp, L) + ex, self._transport(pm, vm, L) - ex, (L, kappa, ups)


def flow_pde_m1(init: GridDensity, rate: RateFunction, s: float, dt: float, T: float, snapshot_times=None,
                stats: dict | None = None, mass_tol: float = 1e-6, boundary_tol: float = 1e-6):
    """Integrate the M = 1 density equations with Heun's method (SSP-RK2).

    Returns ``[(t, GridDensity), ...]``. ``stats`` (if given) receives
    clipped mass, boundary mass and the largest stable step seen.
    """
    if init.nx < 200:
        raise ValueError("grid needs at least 200 cells")
    init.validate(1e-8)
    n = _step_times(T, dt)
    snaps = _snapshot_steps(snapshot_times, n, dt)
    pde = _PDE(init, rate, s)
    pp, pm = init.p_plus.copy(), init.p_minus.copy()
    m0 = float((pp.sum() + pm.sum()) * pde.dx)
    clipped = 0.0
    min_dt_bound = np.inf
    out = []
    for k in range(n + 1):
        if k in snaps:
            out.append((snaps[k], GridDensity(init.x_min, init.x_max, init.nx, pp.copy(), pm.copy())))
        if k == n:
            break
        r1p, r1m, coef = pde.rhs(pp, pm)
        bound = pde.max_dt(*coef)
        min_dt_bound = min(min_dt_bound, bound)
        if dt > bound * (1 + 1e-12):
            raise FlowStabilityError(f"dt = {dt} violates the stability bound {bound:.3e} at t = {k * dt:.4f}")
        qp, qm = pp + dt * r1p, pm + dt * r1m
        r2p, r2m, _ = pde.rhs(qp, qm)
        pp = 0.5 * (pp + qp + dt * r2p)
        pm = 0.5 * (pm + qm + dt * r2m)
        neg = np.minimum(pp, 0.0).sum() + np.minimum(pm, 0.0).sum()
        if neg < 0:
            clipped += -neg * pde.dx
            np.maximum(pp, 0.0, out=pp)
            np.maximum(pm, 0.0, out=pm)
        mass = float((pp.sum() + pm.sum()) * pde.dx)
        if abs(mass - m0) > mass_tol:
            raise MassDriftError(f"mass drifted to {mass} at t = {(k + 1) * dt:.4f}")
    edge = float((pp[:3].sum() + pm[:3].sum() + pp[-3:].sum() + pm[-3:].sum()) * pde.dx)
    if edge > boundary_tol:
        log.warning("boundary cells hold mass %.3e; widen the grid", edge)
    if clipped > 0:
        log.info("clipped %.3e of negative mass", clipped)
    if stats is not None:
        stats.update(clipped_mass=clipped, boundary_mass=edge, dt_bound=min_dt_bound)
    return out


def pde_stable_dt(gd: GridDensity, rate: RateFunction, s: float, safety: float = 0.9) -> float:
    """Largest step allowed at ``gd``, times ``safety``, with ``L`` at its cap
    ``c1`` so the bound stays valid as the coefficients evolve."""
    pde = _PDE(gd, rate, s)
    L, kappa, ups = pde.coefficients(gd.p_plus, gd.p_minus)
    vmax = 2.0 * rate.c1 * max(abs(gd.x_min), abs(gd.x_max)) + 2.0 * s * (abs(kappa) + rate.c1 * abs(ups)) * 2.0
    return safety * min(gd.dx**2 / (8.0 * rate.c1), gd.dx / (2.0 * vmax))
