"""Numba loops for the stochastic parts: Euler-Maruyama paths, the Feynman-Kac
exponential functional, and the marked annulus driving with its co-integrated track."""

import math

import numpy as np
from numba import njit

from . import _kern

# drift codes understood by marked_em
D_NONE = 0
D_K2 = 1
D_K3 = 2
D_GRID = 3


@njit(cache=True)
def tanh2(x):
    return math.tanh(0.5 * x)


@njit(cache=True)
def tanh_em(x0, kappa, tau, dt, normals):
    """Euler-Maruyama for dX = sqrt(kappa) dB + tau tanh_2(X) dt, one row per path.

    Returns (paths, max |drift| / |tau|)."""
    npath, n = normals.shape
    out = np.empty((npath, n + 1))
    sq = math.sqrt(kappa * dt)
    worst = 0.0
    for i in range(npath):
        x = x0
        out[i, 0] = x
        for k in range(n):
            d = tau * tanh2(x)
            if tau != 0.0:
                worst = max(worst, abs(d) / abs(tau))
            x = x + d * dt + sq * normals[i, k]
            out[i, k + 1] = x
    return out, worst


@njit(cache=True)
def _side_sum(u, q, g1, g2, g3):
    # sum_{k>=0} f(u q^k), f(u) = 2u/(1+u)^2: exact terms while u >= 1e-4, then the geometric
    # tail of 2u - 4u^2 + 6u^3 (the dropped part is below 8u^4/(1-q^4) < 1e-15)
    s = 0.0
    while u >= 1e-4:
        s += 2.0 * u / ((1.0 + u) * (1.0 + u))
        u *= q
    return s + u * (2.0 * g1 - u * (4.0 * g2 - 6.0 * u * g3))


@njit(cache=True)
def _iq_prime_from(ex, q, g1, g2, g3):
    # sum_{k>=1} f(e^x q^k) + f(e^-x q^k), q = e^{-2t}; f is symmetric under u -> 1/u
    return _side_sum(ex * q, q, g1, g2, g3) + _side_sum(q / ex, q, g1, g2, g3)


@njit(cache=True)
def _geo(q):
    return 1.0 / (1.0 - q), 1.0 / (1.0 - q * q), 1.0 / (1.0 - q * q * q)


@njit(cache=True)
def ha_iq_prime(t, x):
    """x-derivative of H^_{I,q}(t, x) for real x: sum over k != 0 of 1/2 sech^2((x - 2kt)/2)."""
    if x > 700.0 or x < -700.0:
        return math.nan
    q = math.exp(-2.0 * t)
    g1, g2, g3 = _geo(q)
    return _iq_prime_from(math.exp(x), q, g1, g2, g3)


@njit(cache=True)
def fk_exponents(starts, kappa, tau, t_hat, dts, normals):
    """Trapezoid value of int_0^T H^'_{I,q}(t_hat + s, X(s)) ds for every (path, start),
    and X(T).  All starts share the Brownian increments of a path (common random numbers)."""
    npath, n = normals.shape
    ns = starts.shape[0]
    out = np.empty((npath, ns))
    xend = np.empty((npath, ns))
    sq = np.empty(n)
    qs = np.empty(n + 1)
    gs = np.empty((n + 1, 3))
    t = t_hat
    qs[0] = math.exp(-2.0 * t)
    for k in range(n):
        sq[k] = math.sqrt(kappa * dts[k])
        t += dts[k]
        qs[k + 1] = math.exp(-2.0 * t)
    for k in range(n + 1):
        g1, g2, g3 = _geo(qs[k])
        gs[k, 0] = g1
        gs[k, 1] = g2
        gs[k, 2] = g3
    for i in range(npath):
        for j in range(ns):
            x = starts[j]
            ex = math.exp(x)
            f0 = _iq_prime_from(ex, qs[0], gs[0, 0], gs[0, 1], gs[0, 2])
            acc = 0.0
            for k in range(n):
                dt = dts[k]
                x = x + tau * ((ex - 1.0) / (ex + 1.0)) * dt + sq[k] * normals[i, k]
                ex = math.exp(x)
                f1 = _iq_prime_from(ex, qs[k + 1], gs[k + 1, 0], gs[k + 1, 1], gs[k + 1, 2])
                acc += 0.5 * (f0 + f1) * dt
                f0 = f1
            out[i, j] = acc
            xend[i, j] = x
    return out, xend


@njit(cache=True)
def sech_sum_drift(kappa, a, tau, x):
    """kappa d/dx log sum_k sech^a(v_k), v_k = (pi / 2 tau)(x - 2 k pi).

    Equal to the kappa=2 (a=2) and kappa=3 (a=1) closed-form crossing drifts through the
    modular identity, and free of the cancellation in tau H_I' + 1 at small tau."""
    x = (x + _kern.PI) % _kern.TWO_PI - _kern.PI
    c = _kern.PI / (2.0 * tau)
    v0 = c * x
    l0 = abs(v0) + math.log1p(math.exp(-2.0 * abs(v0)))
    num = math.tanh(v0)
    den = 1.0
    for sgn in (1.0, -1.0):
        k = 1
        while True:
            v = c * (x - sgn * 2.0 * k * _kern.PI)
            lv = abs(v) + math.log1p(math.exp(-2.0 * abs(v)))
            w = math.exp(a * (l0 - lv))
            num += w * math.tanh(v)
            den += w
            if w < 1e-18:
                break
            k += 1
    return -kappa * a * c * num / den


@njit(cache=True)
def drift_value(code, tau, x, tgrid, xgrid, table):
    if code == D_NONE:
        return 0.0
    if code == D_K2:
        if tau <= _kern.TWO_PI:
            return sech_sum_drift(2.0, 2.0, tau, x)
        h1 = _kern.kernel_fast(1, tau, complex(x, 0.0), 1).real
        h2 = _kern.kernel_fast(1, tau, complex(x, 0.0), 2).real
        return 2.0 * tau * h2 / (tau * h1 + 1.0)
    if code == D_K3:
        if tau <= _kern.TWO_PI:
            return sech_sum_drift(3.0, 1.0, tau, x)
        w = complex(x, tau)
        g0 = _kern.kernel_fast(0, 2.0 * tau, w, 0) - _kern.kernel_fast(1, 2.0 * tau, w, 0)
        g1 = _kern.kernel_fast(0, 2.0 * tau, w, 1) - _kern.kernel_fast(1, 2.0 * tau, w, 1)
        return (3.0 * g1 / g0).real
    return grid_drift(tau, x, tgrid, xgrid, table)


@njit(cache=True)
def _cubic_w(f):
    # 4-point Lagrange weights at nodes -1, 0, 1, 2 for 0 <= f <= 1
    return (-f * (f - 1.0) * (f - 2.0) / 6.0, (f + 1.0) * (f - 1.0) * (f - 2.0) / 2.0,
            -(f + 1.0) * f * (f - 2.0) / 2.0, (f + 1.0) * f * (f - 1.0) / 6.0)


@njit(cache=True)
def grid_drift(tau, x, tgrid, xgrid, table):
    """Cubic interpolation in (log tau, x mod 2 pi), periodic in x; tau is clamped to the
    grid.  Grids with fewer than 4 rows in t fall back to linear interpolation in t."""
    lt = math.log(tau)
    nt = tgrid.shape[0]
    if lt <= tgrid[0]:
        lt = tgrid[0]
    elif lt >= tgrid[nt - 1]:
        lt = tgrid[nt - 1]
    i = np.searchsorted(tgrid, lt) - 1
    if i < 0:
        i = 0
    if i > nt - 2:
        i = nt - 2
    ft = (lt - tgrid[i]) / (tgrid[i + 1] - tgrid[i])
    nx = xgrid.shape[0]
    dx = _kern.TWO_PI / nx
    y = (x - xgrid[0]) % _kern.TWO_PI
    j = int(y / dx)
    if j >= nx:
        j = nx - 1
    fx = (y - j * dx) / dx
    wx = _cubic_w(fx)
    if nt < 4:
        rows = (i, i + 1, i + 1, i + 1)
        wt = (1.0 - ft, ft, 0.0, 0.0)
    else:
        # keep the 4-point stencil inside the grid; the offset shifts the local coordinate
        i0 = min(max(i - 1, 0), nt - 4)
        w4 = _cubic_w(ft + (i - i0) - 1.0)
        rows = (i0, i0 + 1, i0 + 2, i0 + 3)
        wt = w4
    out = 0.0
    for r in range(4):
        acc = 0.0
        for k in range(4):
            acc += wx[k] * table[rows[r], (j - 1 + k) % nx]
        out += wt[r] * acc
    return out


@njit(cache=True)
def marked_em(kappa, p, dt, normals, x0, y0, code, tgrid, xgrid, table, blowup, rtol, atol,
              safety, eps_pole, hmin):
    """Driving xi with drift Lambda(p - t, xi - q) and the marked track q solving
    q' = H_I(p - t, q - xi), integrated step by step with xi linear on each step.

    Returns (xi, q, n_done, status); n_done < len(normals) means the run stopped early."""
    n = normals.shape[0]
    xi = np.empty(n + 1)
    q = np.empty(n + 1)
    xi[0] = x0
    q[0] = y0
    buf = np.empty(2)
    sq = math.sqrt(kappa * dt)
    for k in range(n):
        t = k * dt
        lam = drift_value(code, p - t, xi[k] - q[k], tgrid, xgrid, table)
        if not math.isfinite(lam) or abs(lam) > blowup:
            return xi[:k + 1], q[:k + 1], k, -1
        xi[k + 1] = xi[k] + lam * dt + sq * normals[k]
        buf[0] = xi[k]
        buf[1] = xi[k + 1]
        z, lg, st, tr = _kern.flow(_kern.K_INV_COV_ANNULUS, p, t, dt, buf, t, t + dt,
                                   complex(q[k], 0.0), 0j, False, rtol, atol, safety,
                                   eps_pole, hmin)
        if st != _kern.ST_OK:
            return xi[:k + 2], q[:k + 1], k, st
        q[k + 1] = z.real
    return xi, q, n, 0
