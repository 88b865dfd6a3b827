"""Experiment drivers shared by the command line and the acceptance tests."""
from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from . import rng as _rng
from .couplings import field as compute_field, sample_couplings
from .flow import flow_particle
from .gaussian import (SingularCovarianceError, assemble_blocks, assemble_blocks_naive, conditional_covariance,
                       conditional_mean_direct, conditional_mean_reduced_all, step_matrices)
from .model import EmpiricalMeasure, GlauberRate, ModelParams, validate_params
from .moments import compute_moments, drift
from .simulation import init_spins_iid, simulate, simulate_window
from .transport import equalize, wasserstein_exact

log = logging.getLogger(__name__)


class ConfigError(ValueError):
    pass


MODES = ("simulate", "flow-particle", "flow-pde", "compare", "bifurcation", "gaussian-check")


@dataclass
class Numerics:
    dt: float = 0.01
    P: int = 0
    nx: int = 400
    x_min: float = -8.0
    x_max: float = 8.0
    pde_dt: float = 0.0
    snapshot_every: float = 0.1
    snapshot_times: list | None = None


@dataclass
class ExperimentConfig:
    model: ModelParams
    mode: str
    numerics: Numerics = field(default_factory=Numerics)
    seeds: list = field(default_factory=lambda: [0])
    output: str = "runs"
    N_values: list = field(default_factory=list)
    beta_grid: list = field(default_factory=list)
    init_components: list = field(default_factory=list)
    gaussian_instances: int = 100
    threads: int = 1

    def snapshot_times(self) -> list:
        T = self.model.T
        if self.numerics.snapshot_times is not None:
            ts = [float(t) for t in self.numerics.snapshot_times]
        else:
            step = self.numerics.snapshot_every
            n = int(round(T / step))
            if abs(n * step - T) > 1e-9:
                raise ConfigError("T must be a whole number of snapshot intervals")
            ts = [round(k * step, 12) for k in range(n + 1)]
        if any(t < 0 or t > T + 1e-12 for t in ts):
            raise ConfigError("snapshot times must lie in [0, T]")
        return ts

    def to_dict(self) -> dict:
        d = asdict(self)
        d["model"] = asdict(self.model)
        return d


def _get(d, key, typ, default):
    if key not in d:
        return default
    v = d[key]
    try:
        if typ is int and isinstance(v, float) and not v.is_integer():
            raise ValueError
        return typ(v)
    except (TypeError, ValueError):
        raise ConfigError(f"{key!r} must be {typ.__name__}, got {v!r}") from None


def config_from_dict(d: dict, mode: str | None = None) -> ExperimentConfig:
    """Build and validate a config from a parsed TOML document."""
    mode = mode or d.get("mode")
    if mode not in MODES:
        raise ConfigError(f"unknown mode {mode!r}; expected one of {', '.join(MODES)}")
    m = d.get("model", {})
    if mode != "bifurcation" and "N" not in m:
        raise ConfigError("[model] N is required")
    try:
        model = ModelParams(
            N=_get(m, "N", int, 1), M=_get(m, "M", int, 1), beta=_get(m, "beta", float, 0.5),
            h=_get(m, "h", float, 0.0), s=_get(m, "s", float, 1.0), c_floor=_get(m, "c_floor", float, 0.1),
            T=_get(m, "T", float, 1.0), seed=_get(m, "seed", int, 0),
        )
        validate_params(model)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    n = d.get("numerics", {})
    num = Numerics(
        dt=_get(n, "dt", float, 0.01), P=_get(n, "P", int, 0), nx=_get(n, "nx", int, 400),
        x_min=_get(n, "x_min", float, -8.0), x_max=_get(n, "x_max", float, 8.0),
        pde_dt=_get(n, "pde_dt", float, 0.0), snapshot_every=_get(n, "snapshot_every", float, 0.1),
        snapshot_times=n.get("snapshot_times"),
    )
    if num.dt <= 0 or num.snapshot_every <= 0:
        raise ConfigError("dt and snapshot_every must be positive")
    r = d.get("replicates", {})
    if "seeds" in r:
        seeds = [int(s) for s in r["seeds"]]
    else:
        seeds = list(range(model.seed, model.seed + _get(r, "count", int, 1)))
    if not seeds:
        raise ConfigError("no seeds given")
    cfg = ExperimentConfig(model=model, mode=mode, numerics=num, seeds=seeds,
                           output=str(d.get("output", {}).get("dir", "runs")))
    c = d.get("compare", {})
    cfg.N_values = [int(v) for v in c.get("N_values", [model.N])]
    b = d.get("bifurcation", {})
    if "beta_grid" in b:
        cfg.beta_grid = [float(v) for v in b["beta_grid"]]
    elif mode == "bifurcation":
        lo, hi, step = (_get(b, k, float, dflt) for k, dflt in (("beta_min", 0.5), ("beta_max", 2.0),
                                                                   ("beta_step", 0.01)))
        if step <= 0 or hi < lo:
            raise ConfigError("bifurcation grid needs beta_min <= beta_max and beta_step > 0")
        cfg.beta_grid = list(np.round(np.arange(lo, hi + 0.5 * step, step), 12))
    cfg.init_components = [tuple(float(v) for v in comp) for comp in d.get("init", {}).get("components", [])]
    for comp in cfg.init_components:
        if len(comp) != 4 or comp[0] not in (-1.0, 1.0) or comp[1] < 0 or comp[3] <= 0:
            raise ConfigError("init components are [sign, weight, mean, std] with std > 0")
    cfg.gaussian_instances = _get(d.get("gaussian_check", {}), "instances", int, 100)
    if mode == "flow-pde" and model.M != 1:
        raise ConfigError("flow-pde needs M = 1")
    cfg.snapshot_times()
    return cfg


def map_jobs(fn, items, threads: int = 1):
    """Apply ``fn`` to items, optionally on a thread pool; order preserved."""
    items = list(items)
    if threads <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=threads) as ex:
        return list(ex.map(fn, items))


# --------------------------------------------------------------------------
# comparison of the spin system with the flow


def particle_count(N: int, minimum: int = 100) -> int:
    """Smallest multiple of ``N`` that is at least ``minimum``."""
    return N * max(1, math.ceil(minimum / N))


@dataclass
class CompareResult:
    seed: int
    N: int
    times: list
    distances: list
    lambdas: list
    stopped_at: float | None
    error: str | None = None

    @property
    def sup_distance(self) -> float:
        return max(self.distances) if self.distances else float("nan")


def compare_seed(params: ModelParams, seed: int, snapshot_times, dt: float = 0.01, P: int = 0) -> CompareResult:
    """Simulate one disorder sample and run the flow from its initial measure."""
    p = params.with_(seed=seed)
    try:
        rate = GlauberRate(p.beta, p.h)
        J = sample_couplings(p.N, p.s, seed)
        sigma0 = init_spins_iid(p)
        traj = simulate(p, J, sigma0, snapshot_times, rate)
        mu0 = traj.snapshots[0]
        P = P or particle_count(p.N)
        flow = dict(flow_particle(mu0, rate, p.s, p.c_floor, P, dt, p.T, seed, snapshot_times))
        dists = []
        for t, mu in zip(traj.snapshot_times, traj.snapshots):
            a, b = equalize(flow[t], mu, seed)
            dists.append(wasserstein_exact(a, b))
        return CompareResult(seed, p.N, list(traj.snapshot_times), dists, list(traj.lambdas), traj.stopped_at)
    except Exception as exc:  # a failed seed is logged, the others continue
        log.error("seed %d (N=%d) failed: %s", seed, p.N, exc)
        return CompareResult(seed, p.N, [], [], [], None, error=f"{type(exc).__name__}: {exc}")


def run_compare(cfg: ExperimentConfig):
    """Per-seed tables and (median, IQR) of the sup distance for each N."""
    ts = cfg.snapshot_times()
    out = {}
    for N in cfg.N_values:
        p = cfg.model.with_(N=N)
        res = map_jobs(lambda s: compare_seed(p, s, ts, cfg.numerics.dt, cfg.numerics.P), cfg.seeds, cfg.threads)
        out[N] = res
    return out


def summarize_compare(results: dict):
    rows = []
    for N, res in results.items():
        sups = np.array([r.sup_distance for r in res if r.error is None])
        if sups.size == 0:
            rows.append((N, 0, float("nan"), float("nan"), float("nan"), 0))
            continue
        q25, med, q75 = np.percentile(sups, [25, 50, 75])
        rows.append((N, int(sups.size), float(med), float(q25), float(q75),
                     int(sum(r.stopped_at is not None for r in res))))
    return rows


# --------------------------------------------------------------------------
# conditional-Gaussian oracle suite


@dataclass
class GaussianInstance:
    N: int
    M: int
    s: float
    max_mean_diff: float
    min_eig_R: float
    min_eig_K_full: float
    norm_R: float
    norm_K_tilde: float
    naive_diff: float

    @property
    def ok(self) -> bool:
        return (self.max_mean_diff <= 1e-10 and self.min_eig_R >= -1e-10 and self.norm_R <= self.norm_K_tilde + 1e-10
                and self.naive_diff <= 1e-12)


def random_gaussian_instance(gen: np.random.Generator, N: int, M: int, s: float, c_floor: float = 0.1,
                             flip_prob: float | None = None):
    """Spins at two steps and fields from one coupling draw.

    ``sigma_b`` is redrawn until its overlap eigenvalue clears ``c_floor``.
    """
    for _ in range(1000):
        A = np.where(gen.random((M, N)) < 0.5, -1.0, 1.0)
        if np.linalg.eigvalsh(A @ A.T / N)[0] >= c_floor:
            break
    else:
        raise RuntimeError("could not draw a configuration above the overlap floor")
    q = gen.uniform(0.05, 0.5) if flip_prob is None else flip_prob
    B = np.where(gen.random((M, N)) < q, -A, A)
    J = sample_couplings(N, s, int(gen.integers(2**63)))
    G = compute_field(J, A)
    return A, B, G


def gaussian_check(n_instances: int = 100, seed: int = 0, s_values=(0.0, 0.5, 1.0), max_N: int = 12,
                   max_M: int = 3):
    g = _rng.stream(seed, "gauss", 0)
    out = []
    for k in range(n_instances):
        s = float(s_values[k % len(s_values)])
        M = int(g.integers(1, max_M + 1))
        N = int(g.integers(max(2, 2 * M), max_N + 1))
        A, B, G = random_gaussian_instance(g, N, M, s)
        bc = assemble_blocks(A, B, s)
        naive = assemble_blocks_naive(A, B, s)
        nd = max(np.abs(bc.K_full - naive.K_full).max(), np.abs(bc.K_grave - naive.K_grave).max(),
                 np.abs(bc.K_tilde - naive.K_tilde).max())
        direct = conditional_mean_direct(bc, G)
        reduced = conditional_mean_reduced_all(step_matrices(A, B, G), s, A, G)
        R = conditional_covariance(bc)
        out.append(GaussianInstance(
            N, M, s, float(np.abs(direct - reduced).max()), float(np.linalg.eigvalsh(R)[0]),
            float(np.linalg.eigvalsh(bc.K_full)[0]), float(np.linalg.norm(R, 2)),
            float(np.linalg.norm(bc.K_tilde, 2)), float(nd)))
    return out


# --------------------------------------------------------------------------
# one-step drift consistency


@dataclass
class DriftConsistency:
    deltas: list
    errors: list
    exponent: float
    noise: list


def drift_consistency(N: int = 2000, M: int = 2, beta: float = 0.7, h: float = 0.0, s: float = 1.0,
                      deltas=(0.04, 0.02, 0.01), replicates: int = 2000, seed: int = 0, burn_in: float = 0.5,
                      c_floor: float = 0.1) -> DriftConsistency:
    """Distance between the one-step conditional mean and ``delta`` times the drift.

    The conditional mean is linear in the flip indicators, so its
    expectation over the step is estimated with a control variate: the
    same proposals are replayed with rates frozen at the start state,
    whose parity law is exact (``(1 - exp(-2 c delta)) / 2``). Returns
    the site-averaged error per ``delta`` and the log-log slope.
    """
    p = ModelParams(N=N, M=M, beta=beta, h=h, s=s, c_floor=c_floor, T=max(burn_in, 1e-9), seed=seed)
    rate = GlauberRate(beta, h)
    J = sample_couplings(N, s, seed)
    sigma = init_spins_iid(p)
    if burn_in > 0:
        st = simulate(p, J, sigma, [burn_in], rate).final
        sigma, G = st.sigma.copy(), st.G.copy()
    else:
        G = compute_field(J, sigma)
    A = sigma.astype(np.float64)
    mu = EmpiricalMeasure.from_state(sigma, G)
    ms = compute_moments(mu, rate, c_floor)
    m_flow = drift(ms, s, A.T, G.T).T  # M x N
    c0 = rate.eval(A, G).ravel()  # frozen rates, index i * N + j
    K = (A @ A.T) / N
    H = np.linalg.inv(K)
    ups = (A @ G.T) / N

    def mean_from(fbar):
        # L_step and kappa_step from expected flip indicators (M x N)
        Dm = 2.0 * A * fbar
        L = (Dm @ A.T) / N
        kap = (Dm @ G.T) / N
        LH = L @ H
        return -LH @ G - s * (kap @ H @ A) + s * (LH @ ups @ H @ A)

    errors, noise = [], []
    for di, delta in enumerate(deltas):
        exact_frozen = 0.5 * (1.0 - np.exp(-2.0 * c0 * delta)).reshape(M, N)
        diffs = np.zeros((replicates, M, N))
        for r in range(replicates):
            gen = _rng.stream(seed, "probe", 10_000 * (di + 1) + r)
            sig1, _, _, ks, us = simulate_window(J, rate, sigma, G, delta, gen)
            fx = (sig1 != sigma).astype(np.float64)
            acc = us < c0[ks] / rate.c1
            fy = (np.bincount(ks[acc], minlength=M * N) % 2).reshape(M, N).astype(np.float64)
            diffs[r] = fx - fy
        fbar = exact_frozen + diffs.mean(axis=0)
        m_tilde = mean_from(fbar)
        errors.append(float(np.mean(np.linalg.norm(m_tilde - delta * m_flow, axis=0))))
        # spread of the estimate from replicate-to-replicate variability
        half = [mean_from(exact_frozen + diffs[k::2].mean(axis=0)) for k in (0, 1)]
        noise.append(float(np.mean(np.linalg.norm(half[0] - half[1], axis=0))) / 2.0)
    slope = float(np.polyfit(np.log(deltas), np.log(errors), 1)[0])
    return DriftConsistency(list(deltas), errors, slope, noise)


# --------------------------------------------------------------------------
# Poisson window bound


def window_flip_fractions(N: int = 1000, M: int = 2, beta: float = 0.7, h: float = 0.0, s: float = 1.0,
                          delta: float = 0.05, T: float = 5.0, seed: int = 0):
    """Fraction of spins with at least one flip in each window of length ``delta``."""
    n = int(round(T / delta))
    p = ModelParams(N=N, M=M, beta=beta, h=h, s=s, c_floor=1e-9, T=n * delta, seed=seed)
    J = sample_couplings(N, s, seed)
    traj = simulate(p, J, init_spins_iid(p), [k * delta for k in range(n + 1)], record_flips=True)
    counts = traj.flip_counts
    return np.array([np.mean((b - a) > 0) for a, b in zip(counts, counts[1:])])
