"""CSV tables, run manifests and TOML configuration loading."""
from __future__ import annotations

import csv
import json
import os
import platform
import subprocess
import sys
from pathlib import Path

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

# snapshot table: one row per (time, spin), replicas spread over columns
SNAPSHOT_COLUMNS = ("time", "spin_index")
COMPARE_COLUMNS = ("seed", "time", "d_wasserstein", "lambda_min", "tau_triggered")
BIFURCATION_COLUMNS = ("beta", "h", "root_index", "q", "residual")
SUMMARY_COLUMNS = ("N", "n_seeds", "median_sup_dw", "q25_sup_dw", "q75_sup_dw", "n_tau_triggered")


def load_toml(path) -> dict:
    with open(path, "rb") as f:
        return tomllib.load(f)


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def write_csv(path, header, rows) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([_fmt(v) for v in r])
    return path


def read_csv(path):
    with open(path, newline="") as f:
        r = csv.reader(f)
        header = next(r)
        return header, [row for row in r]


def snapshot_header(M: int):
    return list(SNAPSHOT_COLUMNS) + [f"sigma_{i + 1}" for i in range(M)] + [f"field_{i + 1}" for i in range(M)]


def snapshot_rows(snapshots):
    """Rows for ``[(t, EmpiricalMeasure), ...]``."""
    for t, mu in snapshots:
        for j in range(mu.n):
            yield [t, j, *mu.sigma[j].tolist(), *mu.x[j].tolist()]


def git_revision(cwd=None) -> str:
    try:
        out = subprocess.run(["git", "rev-parse", "HEAD"], cwd=cwd or Path(__file__).parent,
                             capture_output=True, text=True, timeout=5)
        if out.returncode == 0:
            return out.stdout.strip()
    except (OSError, subprocess.SubprocessError):
        pass
    return "unknown"


def write_manifest(path, config: dict, seeds, wall_clock: float, outputs, extra: dict | None = None) -> Path:
    from . import __version__
    from .kernels import BACKEND

    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    doc = {
        "config": config,
        "git_revision": git_revision(),
        "seeds": [int(s) for s in seeds],
        "wall_clock_seconds": float(wall_clock),
        "outputs": [os.fspath(Path(o).name) for o in outputs],
        "package_version": __version__,
        "kernel_backend": BACKEND,
        "python": platform.python_version(),
        "numpy": np.__version__,
    }
    if extra:
        doc.update(extra)
    path.write_text(json.dumps(doc, indent=2, sort_keys=True, default=_json_default) + "\n")
    return path


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, Path):
        return os.fspath(o)
    raise TypeError(f"cannot serialize {type(o).__name__}")
