"""Event-driven simulation of replica Glauber dynamics with quenched couplings.

Uniformization: a global Poisson clock of rate ``N M c1`` proposes a site
``(i, j)`` uniformly; the flip is accepted with probability
``c(sigma, G) / c1``. Event arrays are drawn in Python from a Philox
stream and handed to the kernel, so the compiled and fallback kernels
replay exactly the same randomness.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field as dc_field

import numpy as np

from . import kernels
from . import rng as _rng
from .couplings import CouplingMatrix, field
from .model import EmpiricalMeasure, GlauberRate, ModelParams, RateFunction
from .moments import overlap_matrix, smallest_eigenvalue

RESYNC_EVERY = 10**6


class ThinningBoundError(RuntimeError):
    """A rate above the declared bound ``c1`` was met during thinning."""


class StateSpaceTooLarge(ValueError):
    pass


def spin_configurations(n: int) -> np.ndarray:
    """All ``2^n`` sign vectors, ``(-1, ..., -1)`` first, last coordinate fastest."""
    return np.array(list(itertools.product((-1, 1), repeat=n)), dtype=np.int8).reshape(-1, n)


def init_spins_iid(params: ModelParams, law=None, gen: np.random.Generator | None = None, index: int = 0):
    """Draw ``N`` i.i.d. spin columns; returns an ``M x N`` int8 array.

    ``law`` is ``None`` (uniform on ``{-1,+1}^M``), a length ``2^M``
    probability vector over ``spin_configurations(M)``, or a dict mapping
    sign tuples to probabilities.
    """
    M, N = params.M, params.N
    if gen is None:
        gen = _rng.stream(params.seed, "init", index)
    if law is None:
        return np.where(gen.random((M, N)) < 0.5, -1, 1).astype(np.int8)
    configs = spin_configurations(M)
    if isinstance(law, dict):
        probs = np.zeros(len(configs))
        lookup = {tuple(int(v) for v in c): r for r, c in enumerate(configs)}
        for key, p in law.items():
            key = tuple(int(v) for v in np.atleast_1d(key))
            if key not in lookup:
                raise ValueError(f"{key} is not a sign vector of length {M}")
            probs[lookup[key]] = p
    else:
        probs = np.asarray(law, dtype=np.float64)
        if probs.shape != (len(configs),):
            raise ValueError(f"law must have {len(configs)} entries")
    if np.any(probs < 0) or not np.isclose(probs.sum(), 1.0, atol=1e-12):
        raise ValueError("law must be a probability vector")
    picks = gen.choice(len(configs), size=N, p=probs / probs.sum())
    return np.ascontiguousarray(configs[picks].T)


@dataclass
class SimState:
    t: float
    sigma: np.ndarray
    G: np.ndarray
    flips: np.ndarray
    n_events: int = 0
    n_accepted: int = 0


@dataclass
class Trajectory:
    snapshot_times: list
    snapshots: list
    stopped_at: float | None
    lambdas: list
    flip_counts: list | None = None
    final: SimState | None = None
    max_resync_drift: float = 0.0
    backend: str = dc_field(default="")


def snapshot_measure(state: SimState) -> EmpiricalMeasure:
    return EmpiricalMeasure.from_state(state.sigma.copy(), state.G.copy())


class EventStream:
    """Batches of proposal events ``(time, site, uniform)`` from one stream."""

    def __init__(self, gen: np.random.Generator, total_rate: float, n_sites: int, batch: int = 65536):
        self.gen = gen
        self.total_rate = float(total_rate)
        self.n_sites = int(n_sites)
        self.batch = int(batch)

    def draw(self, t0: float):
        waits = self.gen.exponential(1.0 / self.total_rate, size=self.batch)
        times = t0 + np.cumsum(waits)
        ks = self.gen.integers(0, self.n_sites, size=self.batch, dtype=np.int64)
        us = self.gen.random(self.batch)
        return times, ks, us


def _batch_size(expected: float) -> int:
    return int(min(65536, max(16, expected + 6.0 * np.sqrt(expected) + 16)))


def run_until(state: SimState, J: CouplingMatrix, rate: RateFunction, stream: EventStream, buf: list,
              t_stop: float, backend=None, resync_every: int = RESYNC_EVERY) -> float:
    """Advance ``state`` through all events with time ``<= t_stop``.

    ``buf`` holds ``[times, ks, us, next_index]`` across calls. Returns the
    largest field drift observed at a re-sync.
    """
    N = J.N
    inv = 1.0 / np.sqrt(N)
    c1 = float(rate.c1)
    glauber = isinstance(rate, GlauberRate)
    fn = kernels.get_backend(backend) if glauber else kernels.generic_events
    drift = 0.0
    since = state.n_accepted % resync_every
    while True:
        times, ks, us, idx = buf
        if idx >= times.shape[0]:
            t0 = float(times[-1]) if times.shape[0] else state.t
            times, ks, us = stream.draw(t0)
            buf[:] = [times, ks, us, 0]
            idx = 0
        budget = resync_every - since
        if glauber:
            nxt, acc, status = fn(times, ks, us, idx, t_stop, budget, state.sigma, state.G, J.JT,
                                  float(rate.beta), float(rate.h), c1, inv, state.flips)
        else:
            nxt, acc, status = fn(times, ks, us, idx, t_stop, budget, state.sigma, state.G, J.JT,
                                  rate, c1, inv, state.flips)
        state.n_events += nxt - idx
        state.n_accepted += acc
        since += acc
        buf[3] = nxt
        if status == 3:
            raise ThinningBoundError(f"rate exceeded c1 = {c1} at event {nxt}")
        if status == 2 or since >= resync_every:
            fresh = field(J, state.sigma)
            drift = max(drift, float(np.abs(fresh - state.G).max()))
            state.G[...] = fresh
            since = 0
            if status == 2:
                continue
        if status == 0:
            state.t = t_stop
            return drift


def simulate(params: ModelParams, J: CouplingMatrix, sigma0, snapshot_times, rate: RateFunction | None = None,
             backend: str | None = None, record_flips: bool = False, run_index: int = 0,
             gen: np.random.Generator | None = None, resync_every: int = RESYNC_EVERY) -> Trajectory:
    """Simulate to the last snapshot time, recording the empirical measure.

    The overlap floor is checked at each snapshot; the first snapshot with
    ``Lambda < c_floor`` is kept, ``stopped_at`` is set and the run ends.
    """
    if rate is None:
        rate = GlauberRate(params.beta, params.h)
    times_req = [float(t) for t in snapshot_times]
    if any(b <= a for a, b in zip(times_req, times_req[1:])):
        raise ValueError("snapshot times must be strictly increasing")
    if times_req and (times_req[0] < 0 or times_req[-1] > params.T + 1e-12):
        raise ValueError("snapshot times must lie in [0, T]")
    sigma = np.array(sigma0, dtype=np.int8, copy=True)
    if sigma.ndim == 1:
        sigma = sigma[None, :]
    if sigma.shape != (params.M, params.N) or sigma.shape[1] != J.N:
        raise ValueError(f"sigma0 has shape {sigma.shape}, expected {(params.M, params.N)}")
    state = SimState(0.0, sigma, field(J, sigma), np.zeros(sigma.shape, dtype=np.int64))
    NM = params.N * params.M
    total = NM * float(rate.c1)
    horizon = times_req[-1] if times_req else 0.0
    if gen is None:
        gen = _rng.stream(params.seed, "sim", run_index)
    stream = EventStream(gen, total, NM, _batch_size(total * horizon))
    buf = [np.empty(0), np.empty(0, dtype=np.int64), np.empty(0), 0]
    traj = Trajectory([], [], None, [], [] if record_flips else None,
                      backend=(kernels.BACKEND if backend is None else backend))
    for ts in times_req:
        traj.max_resync_drift = max(traj.max_resync_drift,
                                    run_until(state, J, rate, stream, buf, ts, backend, resync_every))
        lam = smallest_eigenvalue(overlap_matrix(state.sigma))
        traj.snapshot_times.append(ts)
        traj.snapshots.append(snapshot_measure(state))
        traj.lambdas.append(lam)
        if record_flips:
            traj.flip_counts.append(state.flips.copy())
        if lam < params.c_floor:
            traj.stopped_at = ts
            break
    traj.final = state
    return traj


def kolmogorov_oracle(params: ModelParams, J: CouplingMatrix, t: float, p0=None,
                      rate: RateFunction | None = None, dt: float = 1e-4) -> np.ndarray:
    """Exact law of the spins at time ``t`` from the master equation.

    States are ordered as ``spin_configurations(N)``; ``p0`` defaults to
    the uniform distribution. Integrated with classical RK4.
    """
    if params.M != 1:
        raise StateSpaceTooLarge("the master-equation oracle supports M = 1 only")
    if params.N > 3:
        raise StateSpaceTooLarge(f"2^{params.N} states is beyond the oracle's limit of 8")
    if rate is None:
        rate = GlauberRate(params.beta, params.h)
    Q = generator_matrix(J, rate)
    n = Q.shape[0]
    p = np.full(n, 1.0 / n) if p0 is None else np.asarray(p0, dtype=np.float64).copy()
    if t <= 0:
        return p
    steps = int(np.ceil(t / dt - 1e-9))
    h = t / steps
    for _ in range(steps):
        k1 = p @ Q
        k2 = (p + 0.5 * h * k1) @ Q
        k3 = (p + 0.5 * h * k2) @ Q
        k4 = (p + h * k3) @ Q
        p = p + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
    return p


def generator_matrix(J: CouplingMatrix, rate: RateFunction) -> np.ndarray:
    """Jump-rate matrix ``Q[a, b]`` of the single-replica chain; rows sum to 0."""
    N = J.N
    configs = spin_configurations(N)
    index = {tuple(c): r for r, c in enumerate(configs.tolist())}
    Q = np.zeros((len(configs), len(configs)))
    for a, cfg in enumerate(configs):
        G = field(J, cfg[None, :])[0]
        c = rate.eval(cfg.astype(np.float64), G)
        for j in range(N):
            nxt = cfg.copy()
            nxt[j] = -nxt[j]
            Q[a, index[tuple(nxt.tolist())]] += c[j]
        Q[a, a] = -Q[a].sum()
    return Q


def state_index(sigma) -> int:
    """Position of a single-replica configuration in ``spin_configurations``."""
    bits = (np.asarray(sigma).ravel() > 0).astype(int)
    out = 0
    for b in bits:
        out = 2 * out + int(b)
    return out


def simulate_window(J: CouplingMatrix, rate: RateFunction, sigma, G, delta: float, gen: np.random.Generator,
                    backend: str | None = None):
    """Run one window of length ``delta`` from ``(sigma, G)``.

    Returns the end state and the proposal events used, as
    ``(sigma, G, flips, ks, us)``; ``ks``/``us`` let a caller replay the
    same proposals against other acceptance rules.
    """
    M, N = np.shape(sigma)
    state = SimState(0.0, np.array(sigma, dtype=np.int8, copy=True), np.array(G, dtype=np.float64, copy=True),
                     np.zeros((M, N), dtype=np.int64))
    total = M * N * float(rate.c1)
    stream = EventStream(gen, total, M * N, _batch_size(total * delta))
    parts = []
    t0 = 0.0
    while True:
        times, ks, us = stream.draw(t0)
        parts.append((times, ks, us))
        if times[-1] > delta:
            break
        t0 = float(times[-1])
    times, ks, us = (np.concatenate(a) for a in zip(*parts))
    buf = [times, ks, us, 0]
    run_until(state, J, rate, _OneBatch(), buf, delta, backend)
    n_used = buf[3]
    return state.sigma, state.G, state.flips, ks[:n_used], us[:n_used]


class _OneBatch:
    """Event source that refuses to draw: the caller supplies the batch."""

    def draw(self, t0):
        raise RuntimeError("window batch exhausted")
