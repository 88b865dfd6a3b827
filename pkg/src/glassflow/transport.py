"""Wasserstein distance between empirical measures on {-1,+1}^M x R^M.

Ground cost ``|x - x'| + |sigma - sigma'|`` (Euclidean norms). Equal-count
uniform measures reduce to an assignment problem. For ``M = 1`` and
arbitrary weights the cost is the path metric of a two-rail ladder graph
(move along a rail at cost ``|dx|``, switch rails at cost 2), so the
distance is a min-cost flow on that graph, solved here as a sparse LP.
"""
from __future__ import annotations

import heapq
from dataclasses import dataclass

import numpy as np
from scipy import sparse
from scipy.optimize import linear_sum_assignment, linprog
from scipy.spatial.distance import cdist

from . import rng as _rng
from .model import Atom, EmpiricalMeasure


class UnequalCountError(ValueError):
    pass


def ground_cost(a: Atom, b: Atom) -> float:
    if a.M != b.M:
        raise ValueError(f"atoms have different M: {a.M} vs {b.M}")
    ds = np.linalg.norm(a.sigma.astype(np.float64) - b.sigma.astype(np.float64))
    return float(np.linalg.norm(a.x - b.x) + ds)


def cost_matrix(mu: EmpiricalMeasure, nu: EmpiricalMeasure) -> np.ndarray:
    if mu.M != nu.M:
        raise ValueError(f"measures have different M: {mu.M} vs {nu.M}")
    return cdist(mu.x, nu.x) + cdist(mu.spin_float(), nu.spin_float())


def wasserstein_exact(mu: EmpiricalMeasure, nu: EmpiricalMeasure) -> float:
    """Exact distance for two uniform measures with the same atom count."""
    if mu.n != nu.n:
        raise UnequalCountError(f"atom counts differ ({mu.n} vs {nu.n}); resample or use equalize()")
    C = cost_matrix(mu, nu)
    r, c = linear_sum_assignment(C)
    return float(C[r, c].sum() / mu.n)


def equalize(mu: EmpiricalMeasure, nu: EmpiricalMeasure, seed: int = 0, index: int = 0):
    """Bring two measures to a common atom count without changing either law
    when one count divides the other (atoms are repeated); otherwise the
    larger measure is subsampled without replacement."""
    if mu.n == nu.n:
        return mu, nu
    small, large, swapped = (mu, nu, False) if mu.n < nu.n else (nu, mu, True)
    if large.n % small.n == 0:
        small = small.tile(large.n // small.n)
    else:
        g = _rng.stream(seed, "resample", index)
        large = large.subset(np.sort(g.choice(large.n, size=small.n, replace=False)))
    return (large, small) if swapped else (small, large)


def wasserstein(mu: EmpiricalMeasure, nu: EmpiricalMeasure, seed: int = 0) -> float:
    a, b = equalize(mu, nu, seed)
    return wasserstein_exact(a, b)


# --------------------------------------------------------------------------
# M = 1, weighted


def _ladder_supplies(xa, sa, wa, xb, sb, wb):
    xa, xb = np.ravel(xa).astype(np.float64), np.ravel(xb).astype(np.float64)
    sa, sb = np.ravel(sa), np.ravel(sb)
    wa = np.ravel(wa).astype(np.float64) / np.sum(wa)
    wb = np.ravel(wb).astype(np.float64) / np.sum(wb)
    pos, inv = np.unique(np.concatenate([xa, xb]), return_inverse=True)
    U = pos.size
    rail = np.concatenate([(sa < 0).astype(int), (sb < 0).astype(int)])
    supply = np.zeros(2 * U)
    np.add.at(supply, rail * U + inv, np.concatenate([wa, -wb]))
    return pos, supply[:U], supply[U:]


class _ConvexPL:
    """Convex piecewise-linear ``c + s0 x + sum_k w_k (x - a_k)_+``.

    Breakpoints live in a min-heap and a max-heap with lazy deletion so
    both ends can be trimmed in logarithmic time.
    """

    def __init__(self):
        self.c = 0.0
        self.s0 = 0.0
        self.wsum = 0.0
        self.w = {}
        self.pos = {}
        self.lo = []
        self.hi = []
        self._next = 0

    def add_break(self, a, w):
        k = self._next
        self._next += 1
        self.w[k] = w
        self.wsum += w
        self.pos[k] = a
        heapq.heappush(self.lo, (a, k))
        heapq.heappush(self.hi, (-a, k))

    def add_abs(self, a, g):
        # g |x - a| = -g x + g a + 2 g (x - a)_+
        if g <= 0:
            return
        self.c += g * a
        self.s0 -= g
        self.add_break(a, 2.0 * g)

    def _peek(self, heap, sign):
        while heap:
            a, k = heap[0]
            if k in self.w:
                return sign * a, k
            heapq.heappop(heap)
        return None

    def clamp(self, bound):
        """Infimal convolution with ``bound |x|``: slopes clipped to +-bound."""
        if self.s0 < -bound:
            # trim from the left, keeping the value where the slope crosses -bound
            acc_w, acc_wa = 0.0, 0.0
            while True:
                top = self._peek(self.lo, 1.0)
                if top is None:
                    raise RuntimeError("slope never reaches the clamp bound")
                a, k = top
                w = self.w[k]
                if self.s0 + w <= -bound:
                    self.s0 += w
                    self.wsum -= w
                    acc_w += w
                    acc_wa += w * a
                    del self.w[k]
                    heapq.heappop(self.lo)
                    continue
                fx = self.c + (self.s0 - acc_w) * a + (acc_w * a - acc_wa)
                new_w = self.s0 + w + bound
                self.wsum += new_w - w
                self.w[k] = new_w
                self.s0 = -bound
                self.c = fx + bound * a
                break
        s_inf = self.s0 + self.wsum
        while s_inf > bound:
            a, k = self._peek(self.hi, -1.0)
            w = self.w[k]
            if s_inf - w >= bound:
                s_inf -= w
                self.wsum -= w
                del self.w[k]
                heapq.heappop(self.hi)
            else:
                cut = s_inf - bound
                self.w[k] = w - cut
                self.wsum -= cut
                s_inf = bound

    def __call__(self, x):
        v = self.c + self.s0 * x
        for k, w in self.w.items():
            a = self.pos[k]
            if x > a:
                v += w * (x - a)
        return v


def _ladder_dp(pos, b0, b1) -> float:
    # R_p: cumulative rail-0 -> rail-1 transfer through position p.
    # cost = sum_p gap_p (|B0_p - R_p| + |B1_p + R_p|) + 2 sum_p |R_p - R_{p-1}|
    U = pos.size
    B0 = np.cumsum(b0)
    B1 = np.cumsum(b1)
    gaps = np.diff(pos)
    f = _ConvexPL()
    f.add_abs(0.0, 2.0)
    for p in range(U - 1):
        g = float(gaps[p])
        f.add_abs(float(B0[p]), g)
        f.add_abs(float(-B1[p]), g)
        f.clamp(2.0)
    return float(f(float(B0[-1])))


def wasserstein_m1(xa, sa, wa, xb, sb, wb) -> float:
    """Exact distance between weighted measures on {-1,+1} x R.

    Weights are normalized to unit mass on each side. Solved by a
    dynamic program over the cumulative rail-switching flow.
    """
    pos, b0, b1 = _ladder_supplies(xa, sa, wa, xb, sb, wb)
    return _ladder_dp(pos, b0, b1)


def wasserstein_m1_lp(xa, sa, wa, xb, sb, wb) -> float:
    """Same distance as ``wasserstein_m1`` from a sparse min-cost-flow LP."""
    pos, b0, b1 = _ladder_supplies(xa, sa, wa, xb, sb, wb)
    U = pos.size
    supply = np.concatenate([b0, b1])
    if U == 1:
        return float(2.0 * abs(supply[0]))
    gaps = np.diff(pos)
    n_seg = U - 1
    tails = np.concatenate([np.arange(n_seg), U + np.arange(n_seg), np.arange(U)])
    heads = np.concatenate([np.arange(1, U), U + np.arange(1, U), U + np.arange(U)])
    cost = np.concatenate([gaps, gaps, np.full(U, 2.0)])
    E = tails.size
    rows = np.concatenate([tails, heads, heads, tails])
    cols = np.concatenate([np.arange(E), np.arange(E), E + np.arange(E), E + np.arange(E)])
    vals = np.concatenate([np.ones(E), -np.ones(E), np.ones(E), -np.ones(E)])
    A = sparse.csr_matrix((vals, (rows, cols)), shape=(2 * U, 2 * E))
    res = linprog(np.concatenate([cost, cost]), A_eq=A[1:], b_eq=supply[1:], bounds=(0, None),
                  method="highs", options={"primal_feasibility_tolerance": 1e-10,
                                           "dual_feasibility_tolerance": 1e-10})
    if res.status != 0:
        raise RuntimeError(f"transport LP failed: {res.message}")
    return float(res.fun)


def wasserstein_m1_measures(mu: EmpiricalMeasure, nu: EmpiricalMeasure) -> float:
    if mu.M != 1 or nu.M != 1:
        raise ValueError("wasserstein_m1_measures needs M = 1")
    return wasserstein_m1(mu.x, mu.sigma, np.ones(mu.n), nu.x, nu.sigma, np.ones(nu.n))


# --------------------------------------------------------------------------
# Kantorovich dual estimate

_BUMP_SLOPE = 8.0 / (3.0 * np.sqrt(3.0))  # max |d/du (1-u^2)^2|


@dataclass(frozen=True)
class BankFunction:
    """Compactly supported 1-Lipschitz function of ``(sigma, x)``.

    ``kind`` is 'cone' (``max(0, r - |x - c|)``) or 'bump'
    (``(r / 1.5396) (1 - |x - c|^2 / r^2)_+^2``). With ``pattern`` set, the
    function is multiplied by the indicator ``sigma == pattern``; heights
    never exceed 2, the smallest nonzero spin distance, so the product
    stays 1-Lipschitz.
    """

    center: tuple
    radius: float
    kind: str = "cone"
    pattern: tuple | None = None

    def __call__(self, sigma, x) -> np.ndarray:
        return _eval_bank([self], np.asarray(sigma), np.asarray(x, dtype=np.float64))[0]


def _eval_bank(bank, sigma, x) -> np.ndarray:
    sigma = np.atleast_2d(sigma)
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    out = np.empty((len(bank), x.shape[0]))
    for k, f in enumerate(bank):
        d = np.linalg.norm(x - np.asarray(f.center, dtype=np.float64), axis=1)
        r = f.radius
        if f.kind == "cone":
            v = np.maximum(0.0, r - d)
        elif f.kind == "bump":
            u = np.minimum(d / r, 1.0)
            v = (r / _BUMP_SLOPE) * (1.0 - u * u) ** 2
        else:
            raise ValueError(f"unknown test function kind {f.kind!r}")
        if f.pattern is not None:
            v = v * np.all(sigma == np.asarray(f.pattern), axis=1)
        out[k] = v
    return out


def default_bank(mu: EmpiricalMeasure, nu: EmpiricalMeasure, radii=(0.5, 1.0, 2.0), n_random: int = 24,
                 seed: int = 0) -> list:
    """A data-adaptive bank: centers around both measures' means and spreads,
    along the mean-difference direction, and at random pooled atoms, plus
    wide spin-blind cones that behave linearly on the data."""
    M = mu.M
    X = np.vstack([mu.x, nu.x])
    m = X.mean(axis=0)
    sd = X.std(axis=0) + 1e-12
    centers = [m]
    for k in range(M):
        e = np.zeros(M)
        e[k] = 1.0
        for a in (-2.0, -1.0, 1.0, 2.0):
            centers.append(m + a * sd[k] * e)
    diff = mu.x.mean(axis=0) - nu.x.mean(axis=0)
    if np.linalg.norm(diff) > 0:
        u = diff / np.linalg.norm(diff)
        for a in (-1.5, -1.0, -0.5, 0.5, 1.0, 1.5):
            centers.append(m + a * u * np.linalg.norm(sd))
    g = _rng.stream(seed, "probe", 1)
    for j in g.choice(X.shape[0], size=min(n_random, X.shape[0]), replace=False):
        centers.append(X[j])
    patterns = [None] + sorted({tuple(int(v) for v in s) for s in np.vstack([mu.sigma, nu.sigma])})
    bank = []
    for c in centers:
        for r in radii:
            for kind in ("cone", "bump"):
                for p in patterns:
                    bank.append(BankFunction(tuple(float(v) for v in c), float(r), kind, p))
    # wide cones with no spin pattern act as linear ramps over the data;
    # their height is unrestricted because they do not depend on sigma
    R = 4.0 * float(np.abs(X - m).max()) + 1.0
    dirs = [np.eye(M)[k] for k in range(M)]
    if np.linalg.norm(diff) > 0:
        dirs.append(diff / np.linalg.norm(diff))
    for e in dirs:
        for a in (-1.0, 1.0):
            bank.append(BankFunction(tuple(float(v) for v in m + a * R * e), 2.0 * R, "cone", None))
    return bank


def kantorovich_estimate(mu: EmpiricalMeasure, nu: EmpiricalMeasure, test_bank=None) -> float:
    """``max_f |E_mu f - E_nu f|`` over the bank; a lower bound on d_W."""
    if test_bank is None:
        test_bank = default_bank(mu, nu)
    if not test_bank:
        return 0.0
    a = _eval_bank(test_bank, mu.sigma, mu.x).mean(axis=1)
    b = _eval_bank(test_bank, nu.sigma, nu.x).mean(axis=1)
    return float(np.max(np.abs(a - b)))
