"""Model parameters, jump rates and the atom / empirical-measure data model."""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Iterable, Sequence

import numpy as np
from scipy.special import expit


class ParameterError(ValueError):
    """Raised when a parameter set violates the model invariants."""


class InvalidFieldError(ValueError):
    """Raised when a rate is requested at a non-finite field value."""


@dataclass(frozen=True)
class ModelParams:
    """Scalar parameters of the replica system.

    ``c_floor`` is the lower bound on the smallest eigenvalue of the
    replica overlap matrix; below it the run is stopped.
    """

    N: int
    M: int = 1
    beta: float = 0.5
    h: float = 0.0
    s: float = 1.0
    c_floor: float = 0.1
    T: float = 1.0
    seed: int = 0

    def with_(self, **kw) -> "ModelParams":
        return replace(self, **kw)


def validate_params(p: ModelParams) -> ModelParams:
    """Return ``p`` unchanged if every invariant holds, else raise.

    All violations are collected into a single message.
    """
    problems = []
    if not isinstance(p.N, (int, np.integer)) or p.N < 1:
        problems.append(f"N must be a positive integer, got {p.N!r}")
    if not isinstance(p.M, (int, np.integer)) or p.M < 1:
        problems.append(f"M must be a positive integer, got {p.M!r}")
    if not (np.isfinite(p.beta) and p.beta >= 0):
        problems.append(f"beta must be finite and >= 0, got {p.beta!r}")
    if not np.isfinite(p.h):
        problems.append(f"h must be finite, got {p.h!r}")
    if not (0.0 <= p.s <= 1.0):
        problems.append(f"symmetry s must lie in [0, 1], got {p.s!r}")
    if not (np.isfinite(p.c_floor) and p.c_floor > 0):
        problems.append(f"c_floor must be > 0, got {p.c_floor!r}")
    if not (np.isfinite(p.T) and p.T > 0):
        problems.append(f"T must be > 0, got {p.T!r}")
    if not isinstance(p.seed, (int, np.integer)) or not (0 <= p.seed < 2**64):
        problems.append(f"seed must be an unsigned 64-bit integer, got {p.seed!r}")
    if problems:
        raise ParameterError("; ".join(problems))
    return p


# --------------------------------------------------------------------------
# rates


def glauber_rate(sigma: int, g: float, beta: float, h: float = 0.0) -> float:
    """Glauber flip rate ``1 / (1 + exp(2 beta sigma (g + h)))``."""
    if sigma not in (-1, 1):
        raise ValueError(f"sigma must be +1 or -1, got {sigma!r}")
    if beta < 0:
        raise ValueError("beta must be nonnegative")
    if not math.isfinite(g):
        raise InvalidFieldError(f"field value must be finite, got {g!r}")
    a = 2.0 * beta * sigma * (g + h)
    # expit(-a) without overflow for large |a|
    if a >= 0:
        e = math.exp(-a)
        return e / (1.0 + e)
    return 1.0 / (1.0 + math.exp(a))


class RateFunction:
    """A bounded, Lipschitz jump rate ``c(sigma, g)``.

    Subclasses implement ``eval`` on numpy arrays. ``c1`` bounds the rate
    from above and ``cL`` is the Lipschitz constant of ``c`` in ``g``;
    ``cL_log`` is the Lipschitz constant of ``log c``.
    """

    c1: float = 1.0
    cL: float = 0.0
    cL_log: float = 0.0

    def eval(self, sigma, g):
        raise NotImplementedError

    def __call__(self, sigma, g):
        return self.eval(sigma, g)


@dataclass(frozen=True)
class GlauberRate(RateFunction):
    beta: float = 1.0
    h: float = 0.0

    def __post_init__(self):
        if self.beta < 0:
            raise ParameterError("beta must be nonnegative")

    @property
    def c1(self) -> float:
        return 1.0

    @property
    def cL(self) -> float:
        # sup of |d/dg expit(-2 beta sigma (g+h))| is 2 beta / 4
        return 0.5 * self.beta

    @property
    def cL_log(self) -> float:
        return 2.0 * self.beta

    def eval(self, sigma, g):
        g = np.asarray(g, dtype=np.float64)
        if not np.all(np.isfinite(g)):
            raise InvalidFieldError("field values must be finite")
        sigma = np.asarray(sigma, dtype=np.float64)
        return expit(-2.0 * self.beta * sigma * (g + self.h))


@dataclass(frozen=True)
class ConstantRate(RateFunction):
    """Rate that ignores the spin and the field; handy for analytic tests."""

    value: float = 0.5
    bound: float | None = None

    def __post_init__(self):
        if not self.value > 0:
            raise ParameterError("constant rate must be positive")

    @property
    def c1(self) -> float:
        return self.value if self.bound is None else self.bound

    @property
    def cL(self) -> float:
        return 0.0

    @property
    def cL_log(self) -> float:
        return 0.0

    def eval(self, sigma, g):
        g = np.asarray(g, dtype=np.float64)
        if not np.all(np.isfinite(g)):
            raise InvalidFieldError("field values must be finite")
        return np.full(np.broadcast(np.asarray(sigma), g).shape, self.value)


@dataclass
class RateReport:
    max_rate: float
    min_rate: float
    max_lipschitz: float
    max_log_lipschitz: float
    max_log_ratio: float
    c1: float
    cL: float
    cL_log: float
    violations: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations


def rate_assumption_check(rate: RateFunction, grid: Sequence[float], tol: float = 1e-12) -> RateReport:
    """Evaluate the rate on a grid and compare with its declared constants.

    Lipschitz quotients are taken over adjacent grid pairs. The log ratio
    is ``max |log c(a, g)| / |g|`` over the grid with ``g = 0`` removed.
    """
    g = np.sort(np.asarray(grid, dtype=np.float64))
    if g.size == 0:
        raise ValueError("grid must be nonempty")
    rates, lip, loglip, ratio = [], 0.0, 0.0, 0.0
    nz = g != 0
    for a in (-1, 1):
        c = rate.eval(np.full_like(g, a), g)
        rates.append(c)
        if g.size > 1:
            dg = np.diff(g)
            ok = dg > 0
            lip = max(lip, float(np.max(np.abs(np.diff(c))[ok] / dg[ok], initial=0.0)))
            loglip = max(loglip, float(np.max(np.abs(np.diff(np.log(c)))[ok] / dg[ok], initial=0.0)))
        if nz.any():
            ratio = max(ratio, float(np.max(np.abs(np.log(c[nz])) / np.abs(g[nz]))))
    allc = np.concatenate(rates)
    rep = RateReport(
        max_rate=float(allc.max()),
        min_rate=float(allc.min()),
        max_lipschitz=lip,
        max_log_lipschitz=loglip,
        max_log_ratio=ratio,
        c1=rate.c1,
        cL=rate.cL,
        cL_log=rate.cL_log,
    )
    if rep.max_rate > rate.c1 + tol:
        rep.violations.append(f"rate {rep.max_rate} exceeds c1 = {rate.c1}")
    if rep.min_rate <= 0:
        rep.violations.append("rate is not strictly positive")
    if lip > rate.cL + tol:
        rep.violations.append(f"Lipschitz quotient {lip} exceeds cL = {rate.cL}")
    if loglip > rate.cL_log + tol:
        rep.violations.append(f"log-Lipschitz quotient {loglip} exceeds {rate.cL_log}")
    return rep


# --------------------------------------------------------------------------
# atoms and measures


@dataclass(frozen=True)
class Atom:
    sigma: np.ndarray
    x: np.ndarray

    def __post_init__(self):
        s = np.asarray(self.sigma, dtype=np.int8).ravel()
        x = np.asarray(self.x, dtype=np.float64).ravel()
        if s.shape != x.shape:
            raise ValueError("sigma and x must have the same length")
        if not np.all(np.abs(s) == 1):
            raise ValueError("spins must be +1 or -1")
        if not np.all(np.isfinite(x)):
            raise ValueError("field values must be finite")
        object.__setattr__(self, "sigma", s)
        object.__setattr__(self, "x", x)

    @property
    def M(self) -> int:
        return self.sigma.size


class EmpiricalMeasure:
    """Uniform-weight empirical measure on {-1,+1}^M x R^M.

    Atoms are held as two ``(n, M)`` arrays: ``sigma`` (int8) and ``x``
    (float64). Row ``j`` is atom ``j``.
    """

    __slots__ = ("sigma", "x")

    def __init__(self, sigma, x, check: bool = True):
        sigma = np.ascontiguousarray(sigma, dtype=np.int8)
        x = np.ascontiguousarray(x, dtype=np.float64)
        if sigma.ndim == 1:
            sigma = sigma[:, None]
        if x.ndim == 1:
            x = x[:, None]
        if check:
            if sigma.shape != x.shape:
                raise ValueError(f"shape mismatch: sigma {sigma.shape}, x {x.shape}")
            if sigma.shape[0] == 0 or sigma.shape[1] == 0:
                raise ValueError("empirical measure needs at least one atom")
            if not np.all(np.abs(sigma) == 1):
                raise ValueError("spins must be +1 or -1")
            if not np.all(np.isfinite(x)):
                raise ValueError("field values must be finite")
        self.sigma = sigma
        self.x = x

    @classmethod
    def from_atoms(cls, atoms: Iterable[Atom]) -> "EmpiricalMeasure":
        atoms = list(atoms)
        if not atoms:
            raise ValueError("empirical measure needs at least one atom")
        if len({a.M for a in atoms}) != 1:
            raise ValueError("all atoms must share the same M")
        return cls(np.stack([a.sigma for a in atoms]), np.stack([a.x for a in atoms]))

    @classmethod
    def from_state(cls, sigma, G) -> "EmpiricalMeasure":
        """Build the measure from ``M x N`` spin and field arrays."""
        return cls(np.asarray(sigma).T, np.asarray(G).T)

    @property
    def n(self) -> int:
        return self.sigma.shape[0]

    @property
    def M(self) -> int:
        return self.sigma.shape[1]

    @property
    def atoms(self) -> list:
        return [Atom(self.sigma[j], self.x[j]) for j in range(self.n)]

    def __len__(self) -> int:
        return self.n

    def __repr__(self) -> str:
        return f"EmpiricalMeasure(n={self.n}, M={self.M})"

    def copy(self) -> "EmpiricalMeasure":
        return EmpiricalMeasure(self.sigma.copy(), self.x.copy(), check=False)

    def subset(self, idx) -> "EmpiricalMeasure":
        return EmpiricalMeasure(self.sigma[idx], self.x[idx], check=False)

    def tile(self, k: int) -> "EmpiricalMeasure":
        """Repeat every atom ``k`` times; the measure itself is unchanged."""
        return EmpiricalMeasure(np.repeat(self.sigma, k, axis=0), np.repeat(self.x, k, axis=0), check=False)

    def spin_float(self) -> np.ndarray:
        return self.sigma.astype(np.float64)
