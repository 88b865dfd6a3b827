import numpy as np
import pytest

from glassflow.couplings import sample_couplings
from glassflow.experiments import (ConfigError, compare_seed, config_from_dict, drift_consistency, gaussian_check,
                                   particle_count, summarize_compare, window_flip_fractions)
from glassflow.model import ModelParams
from glassflow.simulation import init_spins_iid, simulate

BASE = {"model": {"N": 50, "M": 2, "beta": 0.7, "T": 1.0}}


def test_config_defaults_and_snapshots():
    cfg = config_from_dict(dict(BASE, mode="simulate"))
    assert cfg.model.N == 50 and cfg.model.s == 1.0 and cfg.seeds == [0]
    ts = cfg.snapshot_times()
    assert ts[0] == 0.0 and ts[-1] == 1.0 and len(ts) == 11


@pytest.mark.parametrize("doc", [
    {"mode": "nope", **BASE},
    {"mode": "simulate", "model": {"M": 2}},
    {"mode": "simulate", "model": {"N": 10, "s": 2.0}},
    {"mode": "simulate", "model": {"N": "ten"}},
    {"mode": "simulate", "model": {"N": 10.5}},
    {"mode": "simulate", **BASE, "numerics": {"snapshot_times": [0.0, 2.0]}},
    {"mode": "simulate", **BASE, "numerics": {"snapshot_every": 0.3}},
    {"mode": "flow-pde", **BASE},
    {"mode": "simulate", **BASE, "init": {"components": [[2, 1.0, 0.0, 1.0]]}},
])
def test_config_errors(doc):
    with pytest.raises(ConfigError):
        config_from_dict(doc)


def test_bifurcation_grid_from_range():
    cfg = config_from_dict({"mode": "bifurcation", "bifurcation": {"beta_min": 0.9, "beta_max": 1.1,
                                                                    "beta_step": 0.1}})
    assert cfg.beta_grid == [0.9, 1.0, 1.1]


def test_particle_count():
    assert particle_count(50) == 100
    assert particle_count(100) == 100
    assert particle_count(400) == 400
    assert particle_count(30) == 120


def test_compare_starts_from_the_same_measure():
    p = ModelParams(N=60, M=2, beta=0.7)
    r = compare_seed(p, 0, [0.0, 0.5], P=60)
    assert r.error is None and r.distances[0] == 0.0
    r = compare_seed(p, 0, [0.0, 0.5])
    assert r.distances[0] == 0.0 and len(r.distances) == 2


def test_compare_failure_is_isolated():
    r = compare_seed(ModelParams(N=20, M=2), 0, [0.0, 0.5], dt=0.3)
    assert r.error is not None and r.distances == []
    rows = summarize_compare({20: [r]})
    assert rows[0][1] == 0


def test_stopping_rule_rarely_triggers_at_high_temperature():
    trig = 0
    for seed in range(100):
        p = ModelParams(N=100, M=2, beta=1.0, c_floor=0.1, seed=seed)
        tr = simulate(p, sample_couplings(p.N, 1.0, seed), init_spins_iid(p), [0.25, 0.5, 0.75, 1.0])
        trig += tr.stopped_at is not None
    assert trig == 0


def test_gaussian_suite_small():
    res = gaussian_check(12, seed=1)
    assert len(res) == 12 and all(r.ok for r in res)
    assert {r.s for r in res} == {0.0, 0.5, 1.0}


def test_drift_consistency_small():
    r = drift_consistency(N=400, M=2, replicates=200, burn_in=0.0)
    assert r.errors[0] > r.errors[-1]
    assert len(r.noise) == 3


def test_window_fractions_shape():
    f = window_flip_fractions(N=100, M=1, delta=0.1, T=1.0)
    assert f.shape == (10,) and np.all((0 <= f) & (f <= 1))
