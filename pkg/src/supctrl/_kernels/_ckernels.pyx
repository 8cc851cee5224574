# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled sweep kernels; same signatures and conventions as ``_pykernels``."""

import numpy as np
cimport numpy as cnp
from libc.math cimport exp, log

cnp.import_array()

# exp(z) for z below this is dropped: at most 2000 such terms stay under 1e-23 of the sum
cdef double EXP_CUTOFF = -60.0
EXP_CUTOFF_PY = EXP_CUTOFF


def forward_affine_lie(const double[:, ::1] A, const double[:, ::1] B, const double[::1] c,
                       const double[:, ::1] G, const double[:, ::1] W, double[:, ::1] X, Py_ssize_t N, double dt, double k):
    cdef Py_ssize_t n_fwd = W.shape[0], n = X.shape[1]
    V_arr = np.empty((n_fwd, n))
    shift_arr = np.empty((n_fwd, n))
    S_arr = np.empty((n_fwd, n))
    cdef double[:, ::1] V = V_arr, shift = shift_arr, S = S_arr
    with nogil:
        _lie_sweep(A, B, c, G, W, X, V, shift, S, N, dt, k)
    return V_arr, shift_arr, S_arr


cdef void _lie_sweep(const double[:, ::1] A, const double[:, ::1] B, const double[::1] c,
                     const double[:, ::1] G, const double[:, ::1] W, double[:, ::1] X,
                     double[:, ::1] V, double[:, ::1] shift, double[:, ::1] S,
                     Py_ssize_t N, double dt, double k) noexcept nogil:
    cdef Py_ssize_t n_fwd = W.shape[0], n = X.shape[1], m = W.shape[1]
    cdef Py_ssize_t j, i, q, r
    cdef double mx, s, acc, z
    for j in range(n_fwd):
        for i in range(n):
            mx = X[j, i]
            for q in range(1, N):
                if X[j + q, i] > mx:
                    mx = X[j + q, i]
            s = 0.0
            for q in range(N):
                z = k * (X[j + q, i] - mx)
                if z > EXP_CUTOFF:
                    s += exp(z)
            shift[j, i] = mx
            S[j, i] = s
            V[j, i] = mx + log(dt * s) / k
        for i in range(n):
            acc = c[i]
            for r in range(n):
                acc += A[i, r] * X[N + j, r] + B[i, r] * V[j, r]
            for r in range(m):
                acc += G[i, r] * W[j, r]
            X[N + j + 1, i] = X[N + j, i] + dt * acc


def forward_affine_hard(const double[:, ::1] A, const double[:, ::1] B, const double[::1] c,
                        const double[:, ::1] G, const double[:, ::1] W, double[:, ::1] X, Py_ssize_t N, double dt):
    cdef Py_ssize_t n_fwd = W.shape[0], n = X.shape[1], m = W.shape[1]
    cdef Py_ssize_t j, i, f, r, cap = N + 1
    cdef double acc
    V_arr = np.empty((n_fwd, n))
    arg_arr = np.empty((n_fwd, n), dtype=np.int64)
    ring_arr = np.empty((n, cap), dtype=np.int64)
    head_arr = np.zeros(n, dtype=np.int64)
    size_arr = np.zeros(n, dtype=np.int64)
    cdef double[:, ::1] V = V_arr
    cdef long long[:, ::1] arg = arg_arr, ring = ring_arr
    cdef long long[::1] head = head_arr, size = size_arr
    with nogil:
        for i in range(n):
            for f in range(N - 1):
                _push(ring, head, size, X, i, f, cap)
        for j in range(n_fwd):
            f = j + N - 1
            for i in range(n):
                _push(ring, head, size, X, i, f, cap)
                while ring[i, head[i]] < j:
                    head[i] = (head[i] + 1) % cap
                    size[i] -= 1
                arg[j, i] = ring[i, head[i]]
                V[j, i] = X[ring[i, head[i]], i]
            for i in range(n):
                acc = c[i]
                for r in range(n):
                    acc += A[i, r] * X[N + j, r] + B[i, r] * V[j, r]
                for r in range(m):
                    acc += G[i, r] * W[j, r]
                X[N + j + 1, i] = X[N + j, i] + dt * acc
    return V_arr, arg_arr


cdef inline void _push(long long[:, ::1] ring, long long[::1] head, long long[::1] size,
                       double[:, ::1] X, Py_ssize_t i, Py_ssize_t f, Py_ssize_t cap) noexcept nogil:
    cdef Py_ssize_t tail
    while size[i] > 0:
        tail = (head[i] + size[i] - 1) % cap
        if X[ring[i, tail], i] <= X[f, i]:
            size[i] -= 1
        else:
            break
    ring[i, (head[i] + size[i]) % cap] = f
    size[i] += 1


def sliding_max(const double[::1] x, Py_ssize_t N, Py_ssize_t count):
    cdef Py_ssize_t j, f, head = 0, size = 0, cap = N + 1, tail
    vals_arr = np.empty(count)
    arg_arr = np.empty(count, dtype=np.int64)
    ring_arr = np.empty(cap, dtype=np.int64)
    cdef double[::1] vals = vals_arr
    cdef long long[::1] arg = arg_arr, ring = ring_arr
    for f in range(N - 1 + count):
        while size > 0:
            tail = (head + size - 1) % cap
            if x[ring[tail]] <= x[f]:
                size -= 1
            else:
                break
        ring[(head + size) % cap] = f
        size += 1
        j = f - N + 1
        if j >= 0:
            while ring[head] < j:
                head = (head + 1) % cap
                size -= 1
            arg[j] = ring[head]
            vals[j] = x[ring[head]]
    return vals_arr, arg_arr


def adjoint_sweep(const double[:, :, ::1] Fx, const double[:, :, ::1] Fy, const double[:, ::1] jx,
                  const double[::1] gx, const double[:, ::1] X, const double[:, ::1] shift,
                  const double[:, ::1] S,
                  Py_ssize_t N, double dt, double k):
    cdef Py_ssize_t n_fwd = jx.shape[0], n = jx.shape[1]
    cdef Py_ssize_t mm, i, r
    lam_arr = np.zeros((n_fwd + 1, n))
    acc_arr = np.zeros((n_fwd + 1, n))
    coef_arr = np.empty(n)
    cdef double[:, ::1] lam = lam_arr, acc = acc_arr
    cdef double[::1] coef = coef_arr
    cdef double s
    with nogil:
        for i in range(n):
            lam[n_fwd - 1, i] = -gx[i]
        _scatter(n_fwd - 1, lam, acc, coef, Fy, X, shift, S, N, dt, k)
        for mm in range(n_fwd - 1, 0, -1):
            for i in range(n):
                s = lam[mm, i] + acc[mm, i] - dt * jx[mm, i]
                for r in range(n):
                    s += dt * lam[mm, r] * Fx[mm, r, i]
                lam[mm - 1, i] = s
            _scatter(mm - 1, lam, acc, coef, Fy, X, shift, S, N, dt, k)
    return lam_arr, acc_arr


cdef void _scatter(Py_ssize_t j, double[:, ::1] lam, double[:, ::1] acc, double[::1] coef,
                   const double[:, :, ::1] Fy, const double[:, ::1] X, const double[:, ::1] shift,
                   const double[:, ::1] S, Py_ssize_t N, double dt, double k) noexcept nogil:
    cdef Py_ssize_t n = lam.shape[1], i, r, q, lo
    cdef double scale, z
    lo = 1 + N - j
    if lo < 0:
        lo = 0
    if lo >= N:
        return
    for i in range(n):
        coef[i] = 0.0
        for r in range(n):
            coef[i] += lam[j, r] * Fy[j, r, i]
        scale = dt * dt * coef[i] / (dt * S[j, i])
        if scale == 0.0:
            continue
        for q in range(lo, N):
            z = k * (X[j + q, i] - shift[j, i])
            if z > EXP_CUTOFF:
                acc[j + q - N, i] += scale * exp(z)
