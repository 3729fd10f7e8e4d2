"""Compiled inner loops for the interval bound dynamics.

The right-hand sides are Lipschitz but kinked (min/max terms), so the
integrator is a fixed-step classical Runge-Kutta scheme; kinks are evaluated
one-sided, exactly as the direct min/max evaluation produces them.
"""

import numba
import numpy as np


@numba.njit(cache=True, inline="always")
def _fl(y, z):
    return max(0.0, y + z - 1.0)


@numba.njit(cache=True, inline="always")
def _fu(y, z):
    return min(y, z)


@numba.njit(cache=True)
def bounds_rhs(lo, up, alpha, xi, delta, eta, ptr, src, beta, gamma,
               refined, dlo, dup):
    """Time derivative of the lower/upper bound state.

    ``lo``/``up`` have shape (n, 4) with columns S, E, I, V.  ``ptr``/``src``
    describe in-edges per target node; ``beta``/``gamma`` are aligned with
    that layout.  ``refined`` switches on the complement-capped inflows.
    """
    n = lo.shape[0]
    for i in range(n):
        loS = lo[i, 0]
        loE = lo[i, 1]
        loI = lo[i, 2]
        loV = lo[i, 3]
        upS = up[i, 0]
        upE = up[i, 1]
        upI = up[i, 2]
        upV = up[i, 3]

        if refined:
            srcS = min(1.0 - upE, upS)
        else:
            srcS = upS

        a_upS = 0.0
        a_loS = 0.0
        a_upE = 0.0
        a_loE = 0.0
        for k in range(ptr[i], ptr[i + 1]):
            j = src[k]
            b = beta[k]
            g = gamma[k]
            a_upS += b * _fl(upS, lo[j, 1]) + g * _fl(upS, lo[j, 2])
            a_loS += b * _fu(loS, up[j, 1]) + g * _fu(loS, up[j, 2])
            a_upE += b * _fu(srcS, up[j, 1]) + g * _fu(srcS, up[j, 2])
            a_loE += b * _fl(loS, lo[j, 1]) + g * _fl(loS, lo[j, 2])

        if refined:
            dup[i, 0] = alpha[i] * min(1.0 - upS, upV) - xi[i] * upS - a_upS
            dup[i, 1] = a_upE - delta[i] * upE
            dup[i, 2] = delta[i] * min(1.0 - upI, upE) - eta[i] * upI
            dup[i, 3] = (eta[i] * min(1.0 - upV, upI)
                         + xi[i] * min(1.0 - upV, upS) - alpha[i] * upV)
        else:
            dup[i, 0] = alpha[i] * upV - xi[i] * upS - a_upS
            dup[i, 1] = a_upE - delta[i] * upE
            dup[i, 2] = delta[i] * upE - eta[i] * upI
            dup[i, 3] = eta[i] * upI + xi[i] * upS - alpha[i] * upV

        dlo[i, 0] = alpha[i] * loV - xi[i] * loS - a_loS
        dlo[i, 1] = a_loE - delta[i] * loE
        dlo[i, 2] = delta[i] * loE - eta[i] * loI
        dlo[i, 3] = eta[i] * loI + xi[i] * loS - alpha[i] * loV


@numba.njit(cache=True)
def rk4_bounds(lo, up, alpha, xi, delta, eta, ptr, src, beta, gamma,
               refined, n_steps, h, order_slack, record, out_lo, out_up):
    """Advance the bound state ``n_steps`` fixed steps of size ``h`` in place.

    Refined dynamics are clamped to [0, 1] after every step; a lower bound
    exceeding its upper bound by more than ``order_slack`` is an error.
    Returns the 1-based step index of the first violation, or 0 on success.
    When ``record`` is true the full trajectory is written to ``out_lo`` /
    ``out_up`` (shape (n_steps + 1, n, 4)); otherwise only the final state is
    written to index 0.
    """
    n = lo.shape[0]
    k1l = np.empty((n, 4))
    k1u = np.empty((n, 4))
    k2l = np.empty((n, 4))
    k2u = np.empty((n, 4))
    k3l = np.empty((n, 4))
    k3u = np.empty((n, 4))
    k4l = np.empty((n, 4))
    k4u = np.empty((n, 4))
    tl = np.empty((n, 4))
    tu = np.empty((n, 4))

    if record:
        out_lo[0] = lo
        out_up[0] = up

    for step in range(n_steps):
        bounds_rhs(lo, up, alpha, xi, delta, eta, ptr, src, beta, gamma,
                   refined, k1l, k1u)
        for i in range(n):
            for c in range(4):
                tl[i, c] = lo[i, c] + 0.5 * h * k1l[i, c]
                tu[i, c] = up[i, c] + 0.5 * h * k1u[i, c]
        bounds_rhs(tl, tu, alpha, xi, delta, eta, ptr, src, beta, gamma,
                   refined, k2l, k2u)
        for i in range(n):
            for c in range(4):
                tl[i, c] = lo[i, c] + 0.5 * h * k2l[i, c]
                tu[i, c] = up[i, c] + 0.5 * h * k2u[i, c]
        bounds_rhs(tl, tu, alpha, xi, delta, eta, ptr, src, beta, gamma,
                   refined, k3l, k3u)
        for i in range(n):
            for c in range(4):
                tl[i, c] = lo[i, c] + h * k3l[i, c]
                tu[i, c] = up[i, c] + h * k3u[i, c]
        bounds_rhs(tl, tu, alpha, xi, delta, eta, ptr, src, beta, gamma,
                   refined, k4l, k4u)
        for i in range(n):
            for c in range(4):
                lo[i, c] += (h / 6.0) * (k1l[i, c] + 2.0 * k2l[i, c]
                                         + 2.0 * k3l[i, c] + k4l[i, c])
                up[i, c] += (h / 6.0) * (k1u[i, c] + 2.0 * k2u[i, c]
                                         + 2.0 * k3u[i, c] + k4u[i, c])
        if refined:
            for i in range(n):
                for c in range(4):
                    if lo[i, c] < 0.0:
                        lo[i, c] = 0.0
                    if up[i, c] > 1.0:
                        up[i, c] = 1.0
        for i in range(n):
            for c in range(4):
                if lo[i, c] > up[i, c] + order_slack:
                    return step + 1
        if record:
            out_lo[step + 1] = lo
            out_up[step + 1] = up

    if not record:
        out_lo[0] = lo
        out_up[0] = up
    return 0


@numba.njit(cache=True)
def optimal_ei_upper(lo, up):
    """Tightest exposed+infected expectation bound from interval state."""
    total = 0.0
    for i in range(lo.shape[0]):
        total += min(up[i, 1] + up[i, 2], 1.0 - lo[i, 0] - lo[i, 3])
    return total
