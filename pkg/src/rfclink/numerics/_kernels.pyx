# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled GRU recurrence and fused Adam update. Same contract as ``_kernels_py``.

Inner loops are written as contiguous ``y += s * x`` sweeps so the C
compiler can vectorise them without reassociating any sum.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt, sqrtf, tanh, tanhf

ctypedef fused real:
    float
    double


cdef inline real _tanh(real x) noexcept nogil:
    if real is float:
        return tanhf(x)
    return tanh(x)


cdef inline real _sqrt(real x) noexcept nogil:
    if real is float:
        return sqrtf(x)
    return sqrt(x)


cdef inline real _sig(real x) noexcept nogil:
    return 0.5 * (1.0 + _tanh(0.5 * x))


cdef inline void _axpy(real* y, const real* x, real s, Py_ssize_t n) noexcept nogil:
    cdef Py_ssize_t j
    for j in range(n):
        y[j] += s * x[j]


def gru_forward(real[:, ::1] a, real[:, ::1] u):
    cdef Py_ssize_t m = a.shape[0]
    cdef Py_ssize_t H = a.shape[1] // 3
    cdef Py_ssize_t H3 = 3 * H
    dtype = np.float32 if real is float else np.float64
    states_arr = np.zeros((m, H), dtype=dtype)
    gates_arr = np.zeros((m, 4, H), dtype=dtype)
    work_arr = np.zeros(4 * H, dtype=dtype)
    cdef real[:, ::1] states = states_arr
    cdef real[:, :, ::1] gates = gates_arr
    cdef real[::1] work = work_arr
    cdef real* pre = &work[0]       # z and r pre-activations, then candidate
    cdef real* h = &work[3 * H]
    cdef real* up = &u[0, 0]
    cdef real* g
    cdef Py_ssize_t t, i, j
    cdef real z
    if m == 0:
        return states_arr, gates_arr
    with nogil:
        for t in range(m):
            for j in range(H3):
                pre[j] = a[t, j]
            for i in range(H):
                _axpy(pre, up + i * H3, h[i], 2 * H)
            g = &gates[t, 0, 0]
            for i in range(H):
                g[i] = _sig(pre[i])
                g[H + i] = _sig(pre[H + i])
                g[3 * H + i] = g[H + i] * h[i]
            for i in range(H):
                _axpy(pre + 2 * H, up + i * H3 + 2 * H, g[3 * H + i], H)
            for j in range(H):
                g[2 * H + j] = _tanh(pre[2 * H + j])
                z = g[j]
                h[j] = (1.0 - z) * g[2 * H + j] + z * h[j]
                states[t, j] = h[j]
    return states_arr, gates_arr


def gru_backward(real[:, ::1] a, real[:, ::1] u, real[:, ::1] states,
                 real[:, :, ::1] gates, real[:, ::1] g):
    cdef Py_ssize_t m = a.shape[0]
    cdef Py_ssize_t H = a.shape[1] // 3
    dtype = np.float32 if real is float else np.float64
    da_arr = np.zeros((m, 3 * H), dtype=dtype)
    ut_arr = np.ascontiguousarray(np.asarray(u).T)
    work_arr = np.zeros(4 * H, dtype=dtype)
    cdef real[:, ::1] da = da_arr
    cdef real[:, ::1] ut = ut_arr
    cdef real[::1] work = work_arr
    cdef real* dh = &work[0]
    cdef real* hp = &work[H]
    cdef real* drh = &work[2 * H]
    cdef real* nxt = &work[3 * H]
    cdef real* utp = &ut[0, 0]
    cdef real* d
    cdef real* gt
    cdef Py_ssize_t t, i, j
    cdef real z, r, n
    if m == 0:
        return da_arr, np.zeros_like(np.asarray(u))
    with nogil:
        for t in range(m - 1, -1, -1):
            d = &da[t, 0]
            gt = &gates[t, 0, 0]
            for i in range(H):
                hp[i] = states[t - 1, i] if t > 0 else 0.0
                dh[i] = dh[i] + g[t, i]
            for j in range(H):
                z = gt[j]
                n = gt[2 * H + j]
                d[2 * H + j] = dh[j] * (1.0 - z) * (1.0 - n * n)
                d[j] = dh[j] * (hp[j] - n) * z * (1.0 - z)
            for i in range(H):
                drh[i] = 0.0
            for j in range(H):
                _axpy(drh, utp + (2 * H + j) * H, d[2 * H + j], H)
            for i in range(H):
                r = gt[H + i]
                d[H + i] = drh[i] * hp[i] * r * (1.0 - r)
            for i in range(H):
                nxt[i] = dh[i] * gt[i] + drh[i] * gt[H + i]
            for j in range(2 * H):
                _axpy(nxt, utp + j * H, d[j], H)
            for i in range(H):
                dh[i] = nxt[i]
    # weight gradient as two GEMMs once the per-step gate gradients are known
    prev = np.zeros((m, H), dtype=dtype)
    prev[1:] = np.asarray(states)[:-1]
    du_arr = np.empty((H, 3 * H), dtype=dtype)
    du_arr[:, :2 * H] = prev.T @ da_arr[:, :2 * H]
    du_arr[:, 2 * H:] = np.asarray(gates)[:, 3, :].T @ da_arr[:, 2 * H:]
    return da_arr, du_arr


def adam_update(real[::1] p, real[::1] g, real[::1] m, real[::1] v,
                double lr, double b1, double b2, double eps, double c1, double c2):
    """One Adam step on flat contiguous arrays, in place."""
    cdef Py_ssize_t n = p.shape[0], i
    cdef real rb1 = b1, rb2 = b2, ra = 1.0 - b1, rb = 1.0 - b2
    cdef real step = lr / c1, inv_c2 = 1.0 / c2, reps = eps
    cdef real gi
    with nogil:
        for i in range(n):
            gi = g[i]
            m[i] = rb1 * m[i] + ra * gi
            v[i] = rb2 * v[i] + rb * gi * gi
            p[i] -= step * m[i] / (_sqrt(v[i] * inv_c2) + reps)
