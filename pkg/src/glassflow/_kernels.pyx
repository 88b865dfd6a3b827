# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled thinning loop for Glauber dynamics.

Mirrors ``_kernels_py.glauber_events`` operation for operation, so both
produce bit-identical trajectories from the same event arrays.
"""
from libc.math cimport exp

import numpy as np
cimport numpy as cnp

cnp.import_array()


cdef inline double _rate(double s, double g, double beta, double h) nogil:
    cdef double a = 2.0 * beta * s * (g + h)
    cdef double e
    if a >= 0:
        e = exp(-a)
        return e / (1.0 + e)
    return 1.0 / (1.0 + exp(a))


def glauber_events(const double[::1] times, const long long[::1] ks, const double[::1] us,
                   Py_ssize_t start, double t_stop, long long max_accept,
                   signed char[:, ::1] sigma, double[:, ::1] G, const double[:, ::1] JT,
                   double beta, double h, double c1, double inv_sqrt_n,
                   long long[:, ::1] flips):
    """Consume events from ``start`` until ``times[idx] > t_stop``.

    Returns ``(next_index, n_accepted, status)`` with status 0 when the
    stop time was reached, 1 when the batch ran out, 2 when
    ``max_accept`` flips were made and 3 on a thinning-bound violation.
    """
    cdef Py_ssize_t n_ev = times.shape[0]
    cdef Py_ssize_t N = sigma.shape[1]
    cdef Py_ssize_t idx = start
    cdef Py_ssize_t i, j, l
    cdef long long k, acc = 0
    cdef double c, a, s
    cdef int status = 1
    with nogil:
        while idx < n_ev:
            if times[idx] > t_stop:
                status = 0
                break
            if acc >= max_accept:
                status = 2
                break
            k = ks[idx]
            i = k // N
            j = k - i * N
            s = <double> sigma[i, j]
            c = _rate(s, G[i, j], beta, h)
            if c > c1:
                status = 3
                break
            if us[idx] < c / c1:
                a = 2.0 * s * inv_sqrt_n
                for l in range(N):
                    G[i, l] = G[i, l] - a * JT[j, l]
                sigma[i, j] = -sigma[i, j]
                flips[i, j] += 1
                acc += 1
            idx += 1
    return idx, acc, status
