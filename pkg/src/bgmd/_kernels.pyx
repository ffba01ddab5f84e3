# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled inner loops.  Semantics mirror ``bgmd._fallback`` exactly."""
import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt

cnp.import_array()

from bgmd._fallback import column_lower_median  # numpy's SIMD select


cdef double _distances(const double[:, ::1] pts, const double[::1] y, double[::1] out) noexcept nogil:
    cdef Py_ssize_t b = pts.shape[0], d = pts.shape[1], i, j, d4 = d - d % 4
    cdef double a0, a1, a2, a3, e0, e1, e2, e3, total = 0.0
    for i in range(b):
        # four independent partial sums, combined in a fixed order
        a0 = 0.0; a1 = 0.0; a2 = 0.0; a3 = 0.0
        for j in range(0, d4, 4):
            e0 = y[j] - pts[i, j]
            e1 = y[j + 1] - pts[i, j + 1]
            e2 = y[j + 2] - pts[i, j + 2]
            e3 = y[j + 3] - pts[i, j + 3]
            a0 += e0 * e0
            a1 += e1 * e1
            a2 += e2 * e2
            a3 += e3 * e3
        for j in range(d4, d):
            e0 = y[j] - pts[i, j]
            a0 += e0 * e0
        out[i] = sqrt((a0 + a1) + (a2 + a3))
        total += out[i]
    return total


def distances(points, y):
    cdef const double[:, ::1] pts = np.ascontiguousarray(points, dtype=np.float64)
    cdef const double[::1] yy = np.ascontiguousarray(y, dtype=np.float64)
    out = np.empty(pts.shape[0], dtype=np.float64)
    cdef double[::1] o = out
    with nogil:
        _distances(pts, yy, o)
    return out


def column_sq_norms(G):
    cdef const double[:, ::1] g = np.ascontiguousarray(G, dtype=np.float64)
    cdef Py_ssize_t b = g.shape[0], d = g.shape[1], i, j
    out = np.zeros(d, dtype=np.float64)
    cdef double[::1] s = out
    with nogil:
        for i in range(b):
            for j in range(d):
                s[j] += g[i, j] * g[i, j]
    return out


def augmented_column_stats(G, m, double gamma):
    """Squared norms and sums of the columns of ``gamma * G + m`` in one pass."""
    cdef const double[:, ::1] g = np.ascontiguousarray(G, dtype=np.float64)
    cdef const double[::1] mm = np.ascontiguousarray(m, dtype=np.float64)
    cdef Py_ssize_t b = g.shape[0], d = g.shape[1], i, j
    scores = np.zeros(d, dtype=np.float64)
    sums = np.zeros(d, dtype=np.float64)
    cdef double[::1] s = scores, c = sums
    cdef double p
    with nogil:
        for i in range(b):
            for j in range(d):
                p = gamma * g[i, j] + mm[j]
                s[j] += p * p
                c[j] += p
    return scores, sums


def weiszfeld_solve(points, y0, double nu, double rel_tol, Py_ssize_t max_iters, trace=None):
    """Smoothed Weiszfeld iterations from ``y0``.

    Returns ``(y, objective, iterations, converged)``.  An iterate is only
    accepted when it does not raise the true objective, so the accepted
    objective sequence is non-increasing.
    """
    cdef const double[:, ::1] pts = np.ascontiguousarray(points, dtype=np.float64)
    cdef Py_ssize_t b = pts.shape[0], d = pts.shape[1], i, j, it = 0
    y_arr = np.array(y0, dtype=np.float64, copy=True)
    cand_arr = np.empty(d, dtype=np.float64)
    dist_arr = np.empty(b, dtype=np.float64)
    cdist_arr = np.empty(b, dtype=np.float64)
    cdef double[::1] y = y_arr, cand = cand_arr, dist = dist_arr, cdist = cdist_arr
    cdef double obj, cobj, w, wsum, nu2 = nu * nu, r, step, eta
    cdef bint converged = False

    obj = _distances(pts, y, dist)
    if trace is not None:
        trace.append(obj)
    if obj == 0.0:
        return y_arr, obj, 0, True
    while it < max_iters:
        with nogil:
            for j in range(d):
                cand[j] = 0.0
            wsum = 0.0
            eta = 0.0
            for i in range(b):
                if dist[i] <= nu:
                    # the iterate sits on this input point
                    eta += 1.0
                    continue
                w = 1.0 / sqrt(dist[i] * dist[i] + nu2)
                wsum += w
                for j in range(d):
                    cand[j] += w * pts[i, j]
            if wsum == 0.0:
                converged = True
            else:
                for j in range(d):
                    cand[j] /= wsum
            if eta > 0.0 and not converged:
                r = 0.0
                for j in range(d):
                    step = cand[j] - y[j]
                    r += step * step
                r = wsum * sqrt(r)
                if r <= eta:
                    # subgradient condition holds at the anchor: optimal
                    converged = True
                else:
                    for j in range(d):
                        cand[j] = (1.0 - eta / r) * cand[j] + (eta / r) * y[j]
            if not converged:
                cobj = _distances(pts, cand, cdist)
        if converged:
            break
        it += 1
        if not cobj <= obj:
            converged = True
            break
        y_arr, cand_arr = cand_arr, y_arr
        dist_arr, cdist_arr = cdist_arr, dist_arr
        y, cand, dist, cdist = y_arr, cand_arr, dist_arr, cdist_arr
        if trace is not None:
            trace.append(cobj)
        if obj - cobj <= rel_tol * cobj:
            obj = cobj
            converged = True
            break
        obj = cobj
    return y_arr, obj, it, converged
