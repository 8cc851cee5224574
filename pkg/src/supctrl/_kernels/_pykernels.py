"""Pure Python/numpy versions of the sweep kernels.

Array conventions shared with the compiled module:

* ``X`` is the full-grid state, shape ``(n_hist + n_fwd + 1, n)``, history preloaded.
* step ``j`` reads the window ``X[j:j+N]`` (times ``t_j - tau ... t_j - dt``)
  and writes ``X[N + j + 1]``.
* ``shift[j]`` is the window maximum, ``S[j]`` the shifted exponential sum, so
  the smoothed maximum is ``shift + log(dt*S)/k`` and the weight density of
  window sample ``q`` is ``exp(k*(X[j+q] - shift)) / (dt*S)``.
* ``adjoint_sweep`` returns ``(lam, acc)``; ``acc[m]`` is the delayed
  window term collected on forward node ``m``.
"""

from collections import deque

import numpy as np

# exp(z) for z below this is dropped: at most 2000 such terms stay under 1e-23 of the sum
EXP_CUTOFF = -60.0


def _exp_cut(z):
    return np.where(z > EXP_CUTOFF, np.exp(np.maximum(z, EXP_CUTOFF)), 0.0)


def forward_affine_lie(A, B, c, G, W, X, N, dt, k):
    n_fwd = W.shape[0]
    n = X.shape[1]
    V = np.empty((n_fwd, n))
    shift = np.empty((n_fwd, n))
    S = np.empty((n_fwd, n))
    for j in range(n_fwd):
        win = X[j:j + N]
        mx = win.max(axis=0)
        s = _exp_cut(k * (win - mx)).sum(axis=0)
        v = mx + np.log(dt * s) / k
        x = X[N + j]
        X[N + j + 1] = x + dt * (A @ x + B @ v + c + G @ W[j])
        V[j] = v
        shift[j] = mx
        S[j] = s
    return V, shift, S


def forward_affine_hard(A, B, c, G, W, X, N, dt):
    n_fwd = W.shape[0]
    n = X.shape[1]
    V = np.empty((n_fwd, n))
    arg = np.empty((n_fwd, n), dtype=np.int64)
    dqs = [deque() for _ in range(n)]
    for i in range(n):
        col = X[:, i]
        for f in range(N - 1):
            while dqs[i] and col[dqs[i][-1]] <= col[f]:
                dqs[i].pop()
            dqs[i].append(f)
    for j in range(n_fwd):
        f = j + N - 1
        for i in range(n):
            dq = dqs[i]
            col = X[:, i]
            while dq and col[dq[-1]] <= col[f]:
                dq.pop()
            dq.append(f)
            while dq[0] < j:
                dq.popleft()
            arg[j, i] = dq[0]
            V[j, i] = col[dq[0]]
        x = X[N + j]
        X[N + j + 1] = x + dt * (A @ x + B @ V[j] + c + G @ W[j])
    return V, arg


def sliding_max(x, N, count):
    """Maxima of ``x[j:j+N]`` for ``j < count``; ties resolve to the latest index."""
    vals = np.empty(count)
    arg = np.empty(count, dtype=np.int64)
    dq = deque()
    for f in range(N - 1):
        while dq and x[dq[-1]] <= x[f]:
            dq.pop()
        dq.append(f)
    for j in range(count):
        f = j + N - 1
        while dq and x[dq[-1]] <= x[f]:
            dq.pop()
        dq.append(f)
        while dq[0] < j:
            dq.popleft()
        arg[j] = dq[0]
        vals[j] = x[dq[0]]
    return vals, arg


def adjoint_sweep(Fx, Fy, jx, gx, X, shift, S, N, dt, k):
    n_fwd, n = jx.shape
    lam = np.zeros((n_fwd + 1, n))
    acc = np.zeros((n_fwd + 1, n))

    def scatter(j):
        coef = dt * dt * (lam[j] @ Fy[j])
        lo = max(0, 1 + N - j)  # skip window samples on fixed nodes (history and t = 0)
        if lo >= N:
            return
        w = _exp_cut(k * (X[j + lo:j + N] - shift[j])) / (dt * S[j])
        acc[j + lo - N:j] += coef * w

    lam[n_fwd - 1] = -gx
    scatter(n_fwd - 1)
    for m in range(n_fwd - 1, 0, -1):
        lam[m - 1] = lam[m] + dt * (lam[m] @ Fx[m]) + acc[m] - dt * jx[m]
        scatter(m - 1)
    return lam, acc
