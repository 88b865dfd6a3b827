"""Pure-Python thinning loops (reference implementation and fallback)."""
from __future__ import annotations

import math

import numpy as np


def _rate(s, g, beta, h):
    a = 2.0 * beta * s * (g + h)
    if a >= 0:
        e = math.exp(-a)
        return e / (1.0 + e)
    return 1.0 / (1.0 + math.exp(a))


def glauber_events(times, ks, us, start, t_stop, max_accept, sigma, G, JT, beta, h, c1, inv_sqrt_n, flips):
    """Same contract as the compiled ``glauber_events``."""
    n_ev = times.shape[0]
    N = sigma.shape[1]
    idx = int(start)
    acc = 0
    status = 1
    tl = times.tolist()
    kl = ks.tolist()
    ul = us.tolist()
    while idx < n_ev:
        if tl[idx] > t_stop:
            status = 0
            break
        if acc >= max_accept:
            status = 2
            break
        k = kl[idx]
        i = k // N
        j = k - i * N
        s = float(sigma[i, j])
        c = _rate(s, float(G[i, j]), beta, h)
        if c > c1:
            status = 3
            break
        if ul[idx] < c / c1:
            a = 2.0 * s * inv_sqrt_n
            G[i] -= a * JT[j]
            sigma[i, j] = -sigma[i, j]
            flips[i, j] += 1
            acc += 1
        idx += 1
    return idx, acc, status


def generic_events(times, ks, us, start, t_stop, max_accept, sigma, G, JT, rate, c1, inv_sqrt_n, flips):
    """Thinning loop for an arbitrary ``RateFunction`` (Python only)."""
    n_ev = times.shape[0]
    N = sigma.shape[1]
    idx = int(start)
    acc = 0
    status = 1
    s_arr = np.empty(1)
    g_arr = np.empty(1)
    while idx < n_ev:
        if times[idx] > t_stop:
            status = 0
            break
        if acc >= max_accept:
            status = 2
            break
        k = int(ks[idx])
        i = k // N
        j = k - i * N
        s = float(sigma[i, j])
        s_arr[0] = s
        g_arr[0] = G[i, j]
        c = float(rate.eval(s_arr, g_arr)[0])
        if c > c1:
            status = 3
            break
        if us[idx] < c / c1:
            a = 2.0 * s * inv_sqrt_n
            G[i] -= a * JT[j]
            sigma[i, j] = -sigma[i, j]
            flips[i, j] += 1
            acc += 1
        idx += 1
    return idx, acc, status
