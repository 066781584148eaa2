# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled recurrent and edit-distance kernels.

Same contracts as :mod:`speechchain.kernels._py`; results agree with the
NumPy versions to rounding error, not bit-for-bit.
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport tanh

cnp.import_array()


cdef inline double _sig(double x) nogil:
    return 0.5 * (1.0 + tanh(0.5 * x))


cdef void _cell_fwd(const double[::1] z, const double[::1] c_prev, double[::1] h,
                    double[::1] c, double[::1] acts, Py_ssize_t H) nogil:
    cdef Py_ssize_t k
    cdef double i, f, g, o
    for k in range(H):
        i = _sig(z[k])
        f = _sig(z[H + k])
        g = tanh(z[2 * H + k])
        o = _sig(z[3 * H + k])
        acts[k] = i
        acts[H + k] = f
        acts[2 * H + k] = g
        acts[3 * H + k] = o
        c[k] = f * c_prev[k] + i * g
        h[k] = o * tanh(c[k])


cdef void _cell_bwd(const double[::1] dh, const double[::1] dc, const double[::1] c_prev,
                    const double[::1] c, const double[::1] acts, double[::1] dz,
                    double[::1] dc_prev, Py_ssize_t H) nogil:
    cdef Py_ssize_t k
    cdef double i, f, g, o, tc, dct
    for k in range(H):
        i = acts[k]
        f = acts[H + k]
        g = acts[2 * H + k]
        o = acts[3 * H + k]
        tc = tanh(c[k])
        dct = dc[k] + dh[k] * o * (1.0 - tc * tc)
        dz[k] = dct * g * i * (1.0 - i)
        dz[H + k] = dct * c_prev[k] * f * (1.0 - f)
        dz[2 * H + k] = dct * i * (1.0 - g * g)
        dz[3 * H + k] = dh[k] * tc * o * (1.0 - o)
        dc_prev[k] = dct * f


def lstm_cell_forward(z, c_prev):
    cdef double[:, ::1] zv = np.ascontiguousarray(z, dtype=np.float64)
    cdef double[:, ::1] cp = np.ascontiguousarray(c_prev, dtype=np.float64)
    cdef Py_ssize_t B = zv.shape[0], H = cp.shape[1], b
    h = np.empty((B, H))
    c = np.empty((B, H))
    acts = np.empty((B, 4 * H))
    cdef double[:, ::1] hv = h, cv = c, av = acts
    with nogil:
        for b in range(B):
            _cell_fwd(zv[b], cp[b], hv[b], cv[b], av[b], H)
    return h, c, acts


def lstm_cell_backward(dh, dc, c_prev, c, acts):
    cdef double[:, ::1] dhv = np.ascontiguousarray(dh, dtype=np.float64)
    cdef double[:, ::1] dcv = np.ascontiguousarray(dc, dtype=np.float64)
    cdef double[:, ::1] cpv = np.ascontiguousarray(c_prev, dtype=np.float64)
    cdef double[:, ::1] cv = np.ascontiguousarray(c, dtype=np.float64)
    cdef double[:, ::1] av = np.ascontiguousarray(acts, dtype=np.float64)
    cdef Py_ssize_t B = cv.shape[0], H = cv.shape[1], b
    dz = np.empty((B, 4 * H))
    dcp = np.empty((B, H))
    cdef double[:, ::1] dzv = dz, dcpv = dcp
    with nogil:
        for b in range(B):
            _cell_bwd(dhv[b], dcv[b], cpv[b], cv[b], av[b], dzv[b], dcpv[b], H)
    return dz, dcp


def lstm_seq_forward(pre, w_hh, bint reverse):
    cdef double[:, ::1] pv = np.ascontiguousarray(pre, dtype=np.float64)
    cdef double[:, ::1] w = np.ascontiguousarray(w_hh, dtype=np.float64)
    cdef Py_ssize_t T = pv.shape[0], G = pv.shape[1], H = G // 4
    cdef Py_ssize_t s, t, j, k
    hs = np.zeros((T, H))
    cs = np.zeros((T, H))
    acts = np.zeros((T, G))
    cdef double[:, ::1] hv = hs, cv = cs, av = acts
    cdef double[::1] z = np.empty(G)
    cdef double[::1] h0 = np.zeros(H), c0 = np.zeros(H)
    cdef double[::1] hp, cp
    cdef double hj
    with nogil:
        for s in range(T):
            t = T - 1 - s if reverse else s
            if s == 0:
                hp = h0
                cp = c0
            else:
                hp = hv[t + 1] if reverse else hv[t - 1]
                cp = cv[t + 1] if reverse else cv[t - 1]
            for k in range(G):
                z[k] = pv[t, k]
            for j in range(H):
                hj = hp[j]
                if hj != 0.0:
                    for k in range(G):
                        z[k] += hj * w[j, k]
            _cell_fwd(z, cp, hv[t], cv[t], av[t], H)
    return hs, cs, acts


def lstm_seq_backward(dhs, w_hh, hs, cs, acts, bint reverse):
    cdef double[:, ::1] dhv = np.ascontiguousarray(dhs, dtype=np.float64)
    cdef double[:, ::1] w = np.ascontiguousarray(w_hh, dtype=np.float64)
    cdef double[:, ::1] hv = np.ascontiguousarray(hs, dtype=np.float64)
    cdef double[:, ::1] cv = np.ascontiguousarray(cs, dtype=np.float64)
    cdef double[:, ::1] av = np.ascontiguousarray(acts, dtype=np.float64)
    cdef Py_ssize_t T = hv.shape[0], H = hv.shape[1], G = 4 * H
    cdef Py_ssize_t s, t, prev, j, k
    dpre = np.zeros((T, G))
    dw = np.zeros((H, G))
    cdef double[:, ::1] dpv = dpre, dwv = dw
    cdef double[::1] dh = np.empty(H), dh_next = np.zeros(H)
    cdef double[::1] dc_next = np.zeros(H), dc_prev = np.empty(H)
    cdef double[::1] zeros = np.zeros(H)
    cdef double[::1] hp, cp
    cdef double acc, hj
    with nogil:
        for s in range(T):
            t = s if reverse else T - 1 - s
            prev = t + 1 if reverse else t - 1
            if 0 <= prev < T:
                hp = hv[prev]
                cp = cv[prev]
            else:
                hp = zeros
                cp = zeros
            for j in range(H):
                dh[j] = dhv[t, j] + dh_next[j]
            _cell_bwd(dh, dc_next, cp, cv[t], av[t], dpv[t], dc_prev, H)
            for j in range(H):
                dc_next[j] = dc_prev[j]
            for j in range(H):
                hj = hp[j]
                acc = 0.0
                for k in range(G):
                    if hj != 0.0:
                        dwv[j, k] += hj * dpv[t, k]
                    acc += dpv[t, k] * w[j, k]
                dh_next[j] = acc
    return dpre, dw


cdef long _lev(const long* a, Py_ssize_t n, const long* b, Py_ssize_t m, long* prev, long* cur) nogil:
    cdef Py_ssize_t i, j
    cdef long best, cand
    cdef long* tmp
    for j in range(m + 1):
        prev[j] = j
    for i in range(1, n + 1):
        cur[0] = i
        for j in range(1, m + 1):
            best = prev[j] + 1
            cand = cur[j - 1] + 1
            if cand < best:
                best = cand
            cand = prev[j - 1] + (0 if a[i - 1] == b[j - 1] else 1)
            if cand < best:
                best = cand
            cur[j] = best
        tmp = prev
        prev = cur
        cur = tmp
    return prev[m]


def levenshtein(a, b):
    cdef long[::1] av = np.ascontiguousarray(a, dtype=np.int64).reshape(-1)
    cdef long[::1] bv = np.ascontiguousarray(b, dtype=np.int64).reshape(-1)
    cdef Py_ssize_t n = av.shape[0], m = bv.shape[0]
    cdef long[::1] buf = np.empty(2 * (m + 1), dtype=np.int64)
    cdef long dummy = 0
    cdef const long* ap = &av[0] if n else &dummy
    cdef const long* bp = &bv[0] if m else &dummy
    return int(_lev(ap, n, bp, m, &buf[0], &buf[m + 1]))


def levenshtein_table(a_flat, a_offsets, b_flat, b_offsets):
    """Distances for every (a, b) pair of two packed sequence sets.

    Sequence ``i`` of a set is ``flat[offsets[i]:offsets[i + 1]]``.
    """
    cdef long[::1] af = np.ascontiguousarray(a_flat, dtype=np.int64).reshape(-1)
    cdef long[::1] bf = np.ascontiguousarray(b_flat, dtype=np.int64).reshape(-1)
    cdef long[::1] ao = np.ascontiguousarray(a_offsets, dtype=np.int64)
    cdef long[::1] bo = np.ascontiguousarray(b_offsets, dtype=np.int64)
    cdef Py_ssize_t na = ao.shape[0] - 1, nb = bo.shape[0] - 1, i, j, m, longest = 0
    for j in range(nb):
        if bo[j + 1] - bo[j] > longest:
            longest = bo[j + 1] - bo[j]
    out = np.empty((na, nb), dtype=np.int64)
    cdef long[:, ::1] ov = out
    cdef long[::1] buf = np.empty(2 * (longest + 1), dtype=np.int64)
    cdef long dummy = 0
    cdef const long* ap
    cdef const long* bp
    with nogil:
        for i in range(na):
            ap = &af[ao[i]] if ao[i + 1] > ao[i] else &dummy
            for j in range(nb):
                m = bo[j + 1] - bo[j]
                bp = &bf[bo[j]] if m else &dummy
                ov[i, j] = _lev(ap, ao[i + 1] - ao[i], bp, m, &buf[0], &buf[m + 1])
    return out
