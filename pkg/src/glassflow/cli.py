"""Command-line entry point: ``glassflow <mode> --config run.toml``."""
from __future__ import annotations

import argparse
import logging
import math
import sys
import time
from pathlib import Path

from . import io
from .couplings import sample_couplings
from .experiments import (MODES, ConfigError, ExperimentConfig, config_from_dict, gaussian_check, map_jobs,
                          particle_count, run_compare, summarize_compare)
from .fixed_point import bifurcation_table, detect_onset
from .flow import (FlowStabilityError, MassDriftError, flow_particle, flow_pde_m1, gaussian_mixture_grid,
                   measure_to_grid, pde_stable_dt, sample_gaussian_mixture)
from .model import GlauberRate
from .simulation import ThinningBoundError, init_spins_iid, simulate

log = logging.getLogger("glassflow")

EXIT_OK, EXIT_CONFIG, EXIT_CHECK, EXIT_RUNTIME = 0, 2, 3, 4


class CheckFailed(RuntimeError):
    """A numerical self-check did not pass."""


def _initial_measure(cfg: ExperimentConfig, seed: int):
    """Initial empirical measure: the configured mixture if any, else a spin draw."""
    p = cfg.model.with_(seed=seed)
    if cfg.init_components:
        if p.M != 1:
            raise ConfigError("[init] components describe M = 1 measures")
        return sample_gaussian_mixture(cfg.init_components, p.N, seed)
    J = sample_couplings(p.N, p.s, seed)
    traj = simulate(p, J, init_spins_iid(p), [0.0])
    return traj.snapshots[0]


def run_simulate(cfg: ExperimentConfig, out: Path):
    ts = cfg.snapshot_times()

    def one(seed):
        p = cfg.model.with_(seed=seed)
        J = sample_couplings(p.N, p.s, seed)
        traj = simulate(p, J, init_spins_iid(p), ts)
        path = io.write_csv(out / f"simulate_seed{seed}.csv", io.snapshot_header(p.M),
                            io.snapshot_rows(zip(traj.snapshot_times, traj.snapshots)))
        return path, traj.stopped_at

    res = map_jobs(one, cfg.seeds, cfg.threads)
    return [r[0] for r in res], {"stopped_at": {str(s): r[1] for s, r in zip(cfg.seeds, res)}}


def run_flow_particle(cfg: ExperimentConfig, out: Path):
    ts = cfg.snapshot_times()
    rate = GlauberRate(cfg.model.beta, cfg.model.h)

    def one(seed):
        mu0 = _initial_measure(cfg, seed)
        P = cfg.numerics.P or particle_count(mu0.n)
        snaps = flow_particle(mu0, rate, cfg.model.s, cfg.model.c_floor, P, cfg.numerics.dt, cfg.model.T, seed, ts)
        return io.write_csv(out / f"flow_particle_seed{seed}.csv", io.snapshot_header(cfg.model.M),
                            io.snapshot_rows(snaps))

    return map_jobs(one, cfg.seeds, cfg.threads), {}


def _pde_step(cfg: ExperimentConfig, gd, rate) -> float:
    if cfg.numerics.pde_dt > 0:
        return cfg.numerics.pde_dt
    T = cfg.model.T
    n_int = max(1, int(round(T / cfg.numerics.snapshot_every)))
    per = math.ceil(T / (n_int * pde_stable_dt(gd, rate, cfg.model.s)))
    return T / (n_int * per)


def run_flow_pde(cfg: ExperimentConfig, out: Path):
    rate = GlauberRate(cfg.model.beta, cfg.model.h)
    num = cfg.numerics
    outputs, extra = [], {}
    for seed in cfg.seeds:
        if cfg.init_components:
            gd = gaussian_mixture_grid(cfg.init_components, num.nx, num.x_min, num.x_max)
        else:
            gd = measure_to_grid(_initial_measure(cfg, seed), num.nx, num.x_min, num.x_max)
        dt = _pde_step(cfg, gd, rate)
        stats = {}
        snaps = flow_pde_m1(gd, rate, cfg.model.s, dt, cfg.model.T, cfg.snapshot_times(), stats=stats)
        rows = ([t, x, a, b] for t, g in snaps for x, a, b in zip(g.centers, g.p_plus, g.p_minus))
        outputs.append(io.write_csv(out / f"flow_pde_seed{seed}.csv", ["time", "x", "p_plus", "p_minus"], rows))
        extra[str(seed)] = {"dt": dt, **stats}
        if cfg.init_components:
            break  # deterministic: one run covers every seed
    return outputs, {"pde": extra}


def run_compare_mode(cfg: ExperimentConfig, out: Path):
    results = run_compare(cfg)
    outputs = []
    for N, res in results.items():
        rows = []
        for r in res:
            for t, d, lam in zip(r.times, r.distances, r.lambdas):
                rows.append([r.seed, t, d, lam, r.stopped_at is not None and t >= r.stopped_at])
        outputs.append(io.write_csv(out / f"compare_N{N}.csv", io.COMPARE_COLUMNS, rows))
    summary = summarize_compare(results)
    outputs.append(io.write_csv(out / "compare_summary.csv", io.SUMMARY_COLUMNS, summary))
    failed = {str(N): {str(r.seed): r.error for r in res if r.error} for N, res in results.items()}
    return outputs, {"failed_seeds": {k: v for k, v in failed.items() if v}}


def run_bifurcation(cfg: ExperimentConfig, out: Path):
    rows = bifurcation_table(cfg.beta_grid, cfg.model.h)
    path = io.write_csv(out / "bifurcation.csv", io.BIFURCATION_COLUMNS, rows)
    onset = detect_onset(cfg.beta_grid, cfg.model.h) if cfg.model.h == 0 else None
    bad = [r for r in rows if not r[4] < 1e-12]
    if bad:
        raise CheckFailed(f"{len(bad)} roots with residual >= 1e-12")
    return [path], {"onset": onset}


def run_gaussian_check(cfg: ExperimentConfig, out: Path):
    res = gaussian_check(cfg.gaussian_instances, cfg.seeds[0])
    cols = ["N", "M", "s", "max_mean_diff", "min_eig_R", "min_eig_K_full", "norm_R", "norm_K_tilde", "naive_diff",
            "ok"]
    rows = [[r.N, r.M, r.s, r.max_mean_diff, r.min_eig_R, r.min_eig_K_full, r.norm_R, r.norm_K_tilde,
             r.naive_diff, r.ok] for r in res]
    path = io.write_csv(out / "gaussian_check.csv", cols, rows)
    n_bad = sum(not r.ok for r in res)
    if n_bad:
        raise CheckFailed(f"{n_bad} of {len(res)} conditional-Gaussian instances failed")
    return [path], {}


RUNNERS = {
    "simulate": run_simulate,
    "flow-particle": run_flow_particle,
    "flow-pde": run_flow_pde,
    "compare": run_compare_mode,
    "bifurcation": run_bifurcation,
    "gaussian-check": run_gaussian_check,
}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="glassflow", description="Replica spin-glass dynamics and its mean-field flow.")
    ap.add_argument("mode", choices=MODES)
    ap.add_argument("--config", required=True, help="TOML configuration file")
    ap.add_argument("--seed-offset", type=int, default=0, help="added to every seed")
    ap.add_argument("--out", default=None, help="output directory (overrides [output] dir)")
    ap.add_argument("--threads", type=int, default=1, help="seeds run in parallel on this many threads")
    ap.add_argument("-v", "--verbose", action="store_true")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        doc = io.load_toml(args.config)
        cfg = config_from_dict(doc, args.mode)
        if args.threads < 1:
            raise ConfigError("--threads must be at least 1")
    except (OSError, ConfigError, ValueError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    cfg.seeds = [s + args.seed_offset for s in cfg.seeds]
    cfg.threads = args.threads
    out = Path(args.out or cfg.output)
    out.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    status, extra, outputs = EXIT_OK, {}, []
    try:
        outputs, extra = RUNNERS[args.mode](cfg, out)
    except (CheckFailed, MassDriftError, FlowStabilityError, ThinningBoundError) as exc:
        print(f"numerical check failed: {exc}", file=sys.stderr)
        status, extra = EXIT_CHECK, {"error": f"{type(exc).__name__}: {exc}"}
    except Exception as exc:
        log.exception("run failed")
        print(f"runtime failure: {exc}", file=sys.stderr)
        status, extra = EXIT_RUNTIME, {"error": f"{type(exc).__name__}: {exc}"}
    extra["exit_code"] = status
    io.write_manifest(out / f"manifest_{args.mode}.json", cfg.to_dict(), cfg.seeds, time.perf_counter() - t0,
                      outputs, extra)
    return status


if __name__ == "__main__":
    sys.exit(main())
