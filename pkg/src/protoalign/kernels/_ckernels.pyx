# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot kernels.  Same contracts as ``_pykernels``.

All reductions run in a fixed sequential order, so results are
bit-reproducible for a given build.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport exp, log, sqrt, INFINITY

cnp.import_array()


cdef void _unit_rows(const double[:, ::1] f, double[:, ::1] unit, double[::1] norms) noexcept nogil:
    cdef Py_ssize_t i, k
    cdef double s
    for i in range(f.shape[0]):
        s = 0.0
        for k in range(f.shape[1]):
            s += f[i, k] * f[i, k]
        s = sqrt(s)
        norms[i] = s
        for k in range(f.shape[1]):
            unit[i, k] = f[i, k] / s


cdef void _project_row(double[:, ::1] g, const double[:, ::1] unit,
                       const double[::1] norms, Py_ssize_t i) noexcept nogil:
    cdef Py_ssize_t k
    cdef double r = 0.0
    for k in range(g.shape[1]):
        r += g[i, k] * unit[i, k]
    for k in range(g.shape[1]):
        g[i, k] = (g[i, k] - unit[i, k] * r) / norms[i]


def pfa_terms(const double[:, ::1] feats, const double[:, ::1] protos,
              const double[::1] prior, double tau):
    cdef Py_ssize_t B = feats.shape[0], D = feats.shape[1], C = protos.shape[0]
    cdef Py_ssize_t i, c, k
    cdef double[:, ::1] unit = np.empty((B, D))
    cdef double[::1] norms = np.empty(B)
    cdef double[:, ::1] sim = np.empty((B, C))
    cdef double[:, ::1] pi = np.empty((B, C))
    cdef double[:, ::1] w = np.empty((B, C))
    cdef double[:, ::1] gs = np.empty((B, C))
    g_t2p_arr = np.zeros((B, D))
    g_p2t_arr = np.zeros((B, D))
    cdef double[:, ::1] g1 = g_t2p_arr
    cdef double[:, ::1] g2 = g_p2t_arr
    cdef double t2p = 0.0, p2t = 0.0, top, z, acc, rowc, colc

    with nogil:
        _unit_rows(feats, unit, norms)
        for i in range(B):
            for c in range(C):
                acc = 0.0
                for k in range(D):
                    acc += unit[i, k] * protos[c, k]
                sim[i, c] = acc

        # target -> prototype
        for i in range(B):
            top = -INFINITY
            for c in range(C):
                if prior[c] > 0 and sim[i, c] / tau > top:
                    top = sim[i, c] / tau
            z = 0.0
            for c in range(C):
                if prior[c] > 0:
                    pi[i, c] = prior[c] * exp(sim[i, c] / tau - top)
                else:
                    pi[i, c] = 0.0
                z += pi[i, c]
            rowc = 0.0
            for c in range(C):
                pi[i, c] = pi[i, c] / z
                rowc += pi[i, c] * (1.0 - sim[i, c])
            t2p += rowc
            for c in range(C):
                gs[i, c] = (pi[i, c] * ((1.0 - sim[i, c]) - rowc) / tau - pi[i, c]) / B
        t2p = t2p / B
        for i in range(B):
            for c in range(C):
                for k in range(D):
                    g1[i, k] += gs[i, c] * protos[c, k]
            _project_row(g1, unit, norms, i)

        # prototype -> target
        for c in range(C):
            top = -INFINITY
            for i in range(B):
                if sim[i, c] / tau > top:
                    top = sim[i, c] / tau
            z = 0.0
            for i in range(B):
                w[i, c] = exp(sim[i, c] / tau - top)
                z += w[i, c]
            colc = 0.0
            for i in range(B):
                w[i, c] = w[i, c] / z
                colc += w[i, c] * (1.0 - sim[i, c])
            p2t += prior[c] * colc
            for i in range(B):
                gs[i, c] = prior[c] * (w[i, c] * ((1.0 - sim[i, c]) - colc) / tau - w[i, c])
        for i in range(B):
            for c in range(C):
                for k in range(D):
                    g2[i, k] += gs[i, c] * protos[c, k]
            _project_row(g2, unit, norms, i)

    return t2p, p2t, g_t2p_arr, g_p2t_arr


def cl_terms(const double[:, ::1] queries, const double[:, ::1] positives,
             const double[:, ::1] neg_pool, const cnp.int64_t[:, ::1] neg_idx, double tau):
    cdef Py_ssize_t Q = queries.shape[0], D = queries.shape[1], N = neg_idx.shape[1]
    cdef Py_ssize_t q, j, k, r
    cdef double[:, ::1] unit = np.empty((Q, D))
    cdef double[::1] norms = np.empty(Q)
    cdef double[::1] logit = np.empty(N + 1)
    grad_arr = np.zeros((Q, D))
    cdef double[:, ::1] g = grad_arr
    cdef double total = 0.0, top, z, acc, wq, pos

    with nogil:
        _unit_rows(queries, unit, norms)
        for q in range(Q):
            acc = 0.0
            for k in range(D):
                acc += unit[q, k] * positives[q, k]
            logit[0] = acc / tau
            pos = logit[0]
            top = pos
            for j in range(N):
                r = neg_idx[q, j]
                acc = 0.0
                for k in range(D):
                    acc += unit[q, k] * neg_pool[r, k]
                logit[j + 1] = acc / tau
                if logit[j + 1] > top:
                    top = logit[j + 1]
            z = 0.0
            for j in range(N + 1):
                logit[j] = exp(logit[j] - top)
                z += logit[j]
            # loss term = logsumexp - positive logit
            total += top + log(z) - pos
            wq = logit[0] / z - 1.0
            for k in range(D):
                g[q, k] = wq * positives[q, k]
            for j in range(N):
                r = neg_idx[q, j]
                wq = logit[j + 1] / z
                for k in range(D):
                    g[q, k] += wq * neg_pool[r, k]
            for k in range(D):
                g[q, k] = g[q, k] / (tau * Q)
            _project_row(g, unit, norms, q)

    return total / Q, grad_arr


def nearest_distances(const double[:, ::1] src, const double[:, ::1] dst):
    cdef Py_ssize_t n = src.shape[0], m = dst.shape[0], dim = src.shape[1]
    cdef Py_ssize_t i, j, k
    cdef double best, acc, t
    out_arr = np.empty(n)
    cdef double[::1] out = out_arr
    with nogil:
        for i in range(n):
            best = INFINITY
            for j in range(m):
                acc = 0.0
                for k in range(dim):
                    t = src[i, k] - dst[j, k]
                    acc += t * t
                if acc < best:
                    best = acc
            out[i] = sqrt(best)
    return out_arr
