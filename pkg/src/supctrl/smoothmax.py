"""LogSumExp and LogIntExp smoothing of the maximum.

Everything is evaluated in shifted form (subtract the maximum before
exponentiating), so sharpness parameters in the millions are safe.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "BadSharpness",
    "EmptyInput",
    "EmptyWindow",
    "SmoothMaxResult",
    "lse",
    "lie_window",
    "lie_vector_window",
    "lie_all_windows",
    "window_max_all",
]


class BadSharpness(ValueError):
    pass


class EmptyInput(ValueError):
    pass


class EmptyWindow(EmptyInput):
    pass


def _check_k(k: float) -> float:
    k = float(k)
    if not k > 0 or not np.isfinite(k):
        raise BadSharpness(f"sharpness must be positive and finite, got {k}")
    return k


@dataclass(frozen=True)
class SmoothMaxResult:
    """LogIntExp value of one window plus its derivative weights.

    ``weights`` is a density (units 1/time): ``dt * weights.sum() == 1``.
    """

    value: float
    weights: np.ndarray
    k: float


def lse(values, k: float) -> float:
    """``(1/k) log sum exp(k v_i)``, shifted by ``max v``."""
    k = _check_k(k)
    v = np.asarray(values, dtype=float).ravel()
    if v.size == 0:
        raise EmptyInput("lse of an empty vector")
    if not np.all(np.isfinite(v)):
        raise ValueError("lse needs finite input")
    mx = v.max()
    return float(mx + np.log(np.exp(k * (v - mx)).sum()) / k)


def lie_window(window, dt: float, k: float) -> SmoothMaxResult:
    """Rectangle-rule LogIntExp of a sampled window of length ``len(window)*dt``.

    >>> r = lie_window([0.0, 0.0], dt=0.5, k=3.0)
    >>> r.value, r.weights.tolist()
    (0.0, [1.0, 1.0])
    """
    k = _check_k(k)
    w = np.asarray(window, dtype=float).ravel()
    if w.size == 0:
        raise EmptyWindow("LogIntExp of an empty window")
    if not dt > 0:
        raise ValueError("dt must be positive")
    mx = w.max()
    e = np.exp(k * (w - mx))
    s = e.sum()
    return SmoothMaxResult(float(mx + np.log(dt * s) / k), e / (dt * s), k)


def lie_vector_window(window, dt: float, k: float) -> tuple[np.ndarray, np.ndarray]:
    """Componentwise :func:`lie_window` of an ``(N, n)`` window.

    Returns the values ``(n,)`` and weight densities ``(N, n)``.
    """
    k = _check_k(k)
    w = np.asarray(window, dtype=float)
    if w.ndim == 1:
        w = w[:, None]
    if w.shape[0] == 0:
        raise EmptyWindow("LogIntExp of an empty window")
    mx = w.max(axis=0)
    e = np.exp(k * (w - mx))
    s = e.sum(axis=0)
    return mx + np.log(dt * s) / k, e / (dt * s)


def _windows(x: np.ndarray, N: int, count: int) -> np.ndarray:
    # (count, N, n) read-only view; window j is x[j:j+N]
    view = np.lib.stride_tricks.sliding_window_view(x, N, axis=0)  # (len-N+1, n, N)
    return np.moveaxis(view[:count], -1, 1)


def lie_all_windows(x, N: int, count: int, dt: float, k: float) -> np.ndarray:
    """Smoothed maxima of ``x[j:j+N]`` for ``j < count``; ``x`` has shape ``(len, n)``.

    Vectorised over all windows at once (memory ``count*N*n``).
    """
    k = _check_k(k)
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    win = _windows(x, N, count)
    mx = win.max(axis=1)
    s = np.exp(k * (win - mx[:, None, :])).sum(axis=1)
    return mx + np.log(dt * s) / k


def window_max_all(x, N: int, count: int) -> tuple[np.ndarray, np.ndarray]:
    """Exact maxima (and latest argmax) of ``x[j:j+N]`` for ``j < count``, per component."""
    from ._kernels import sliding_max

    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    vals = np.empty((count, x.shape[1]))
    args = np.empty((count, x.shape[1]), dtype=np.int64)
    for i in range(x.shape[1]):
        vals[:, i], args[:, i] = sliding_max(np.ascontiguousarray(x[:, i]), N, count)
    return vals, args
