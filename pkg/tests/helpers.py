"""Small scalar problems built directly on the public ProblemDefinition interface."""

import numpy as np

from supctrl.dynamics import integrate_regularized
from supctrl.problems import AffineCoefficients, ProblemDefinition


def scalar_problem(a=0.0, b=0.0, g=1.0, c=0.0, alpha=1.0, beta=0.0, xd=None, lin=0.0,
                   tau=0.2, T=1.0, phi=0.0, lo=-5.0, hi=5.0, affine=True, name="test"):
    """``x' = a x + b v + c + g u`` with cost ``alpha/2 (x - xd)^2 + beta/2 u^2 + lin x``."""
    xd = xd or (lambda t: np.zeros_like(np.asarray(t, dtype=float)))
    phi_fn = phi if callable(phi) else (lambda t, p=float(phi): np.array([p]))

    def F0(x, v):
        return a * np.asarray(x) + b * np.asarray(v) + c

    def const(val):
        return lambda x, v, *_: np.full(np.shape(x)[:-1] + (1, 1), val)

    def j(t, x, u):
        return 0.5 * alpha * (x[..., 0] - xd(t)) ** 2 + 0.5 * beta * u[..., 0] ** 2 + lin * x[..., 0]

    def j_x(t, x, u):
        return alpha * (x - np.asarray(xd(t))[..., None]) + lin

    def j_u(t, x, u):
        return beta * np.asarray(u, dtype=float)

    zero = const(0.0)
    aff = None
    if affine:
        aff = AffineCoefficients(A=np.array([[a]]), B=np.array([[b]]), c=np.array([c]), G=np.array([[g]]))
    return ProblemDefinition(
        name=name, n=1, m=1, tau=tau, T=T, phi=phi_fn,
        F0=F0, F0_x=const(a), F0_y=const(b), F1=const(g), F1u_x=zero, F1u_y=zero,
        j=j, j_x=j_x, j_u=j_u, u_lo=[lo], u_hi=[hi], affine=aff,
    )


def gronwall_instance(rng, tau=0.3, T=2.0, dt=1e-3):
    """Random nonnegative node values obeying ``x <= k1 + k2 int_0^t (x + max x_s)``.

    Built by an Euler sweep whose slope is a random fraction in ``[-1, 1]`` of
    ``k2 (x + max x_s)``, clipped at zero; ``x = 0`` on the history.  Returns
    ``(t, x_fwd, window_max, k1, k2)`` with ``window_max[i]`` the max over ``[t_i - tau, t_i]``.
    """
    N, n = int(round(tau / dt)), int(round(T / dt))
    t = np.arange(n + 1) * dt
    k1, k2 = rng.uniform(0.01, 2.0), rng.uniform(0.0, 3.0)
    knots = np.linspace(0, T, 9)
    r = np.interp(t, knots, rng.uniform(-1.0, 1.0, knots.size))
    x = np.zeros(N + n + 1)
    x[N] = k1 * rng.uniform(0, 1)
    mxs = np.empty(n)
    for i in range(n):
        mxs[i] = x[i + 1:i + N + 1].max()
        x[N + i + 1] = max(0.0, x[N + i] + dt * r[i] * k2 * (x[N + i] + mxs[i]))
    return t, x[N:], mxs, k1, k2


def gronwall_holds(t, x, mxs, k1, k2, dt=1e-3):
    """Check the integral inequality at every node with the same quadrature."""
    rhs = k1 + k2 * dt * np.concatenate([[0.0], np.cumsum(x[:-1] + mxs)])
    return bool(np.all(x <= rhs + 1e-12))


def dense_gradient_oracle(p, u, k, grid):
    """``dJ/du`` as the transpose of the dense Jacobian of the scalar affine Euler map.

    Row ``N + j`` of ``S`` is ``dX_{N+j} / du``; the gradient is ``S^T (dt j_x)`` plus ``dt j_u``.
    """
    a, b, g = p.affine.A[0, 0], p.affine.B[0, 0], p.affine.G[0, 0]
    fwd = integrate_regularized(p, u, k, grid)
    X = fwd.state.values[:, 0]
    N, n, dt = grid.n_hist, grid.n_fwd, grid.dt
    S = np.zeros((N + n + 1, n + 1))  # dX / du, history rows stay zero
    for j in range(n):
        win = X[j:j + N]
        w = np.exp(k * (win - win.max()))
        w /= w.sum()
        dv = w @ S[j:j + N]
        e = np.zeros(n + 1)
        e[j] = 1.0
        S[N + j + 1] = S[N + j] + dt * (a * S[N + j] + b * dv + g * e)
    x = X[N:]
    jx = p.j_x(grid.t_fwd[:-1], x[:-1, None], u[:-1])[:, 0]
    ju = p.j_u(grid.t_fwd[:-1], x[:-1, None], u[:-1])[:, 0]
    grad = dt * jx @ S[N:N + n]
    grad[:n] += dt * ju
    return grad
