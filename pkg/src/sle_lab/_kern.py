"""Compiled scalar kernels: annulus series, theta products, Loewner right-hand sides
and the adaptive Runge-Kutta integrator.

Everything here is numba-jitted and works on plain scalars so that the hot loops of
the Loewner, stochastic and drift modules can call it without Python overhead.
"""

import cmath
import math

import numpy as np
from numba import njit

PI = math.pi
TWO_PI = 2.0 * math.pi
MAX_ORDER = 16


def _eulerian_table(n):
    a = np.zeros((n + 1, n + 1))
    a[0, 0] = 1.0
    for m in range(1, n + 1):
        for k in range(m):
            left = (k + 1) * a[m - 1, k]
            right = (m - k) * a[m - 1, k - 1] if k >= 1 else 0.0
            a[m, k] = left + right
    return a


def _binom_table(n):
    b = np.zeros((n + 1, n + 1))
    for m in range(n + 1):
        for k in range(m + 1):
            b[m, k] = math.comb(m, k)
    return b


EULER = _eulerian_table(MAX_ORDER + 2)
BINOM = _binom_table(MAX_ORDER + 2)
IPOW = np.array([1.0 + 0.0j, 1.0j, -1.0 + 0.0j, -1.0j])


# ---------------------------------------------------------------------------
# polylogarithms of negative integer order: Li_{-m}(v) = sum n^m v^n
# ---------------------------------------------------------------------------

@njit(cache=True)
def li_neg(m, v):
    if m == 0:
        return v / (1.0 - v)
    s = 0.0j
    pw = v
    for k in range(m):
        s += EULER[m, k] * pw
        pw *= v
    return s / (1.0 - v) ** (m + 1)


@njit(cache=True)
def li_neg_real(m, r):
    if m == 0:
        return r / (1.0 - r)
    s = 0.0
    pw = r
    for k in range(m):
        s += EULER[m, k] * pw
        pw *= r
    return s / (1.0 - r) ** (m + 1)


@njit(cache=True)
def ipow(j):
    return IPOW[j % 4]


@njit(cache=True)
def mipow(j):
    # (-i)^j
    return IPOW[(4 - j % 4) % 4]


# ---------------------------------------------------------------------------
# cot_2(z) = cot(z/2) and its derivatives
# ---------------------------------------------------------------------------

@njit(cache=True)
def _one_minus_eiw(w):
    # 1 - e^{iw} without cancellation near w = 0
    ey = math.exp(-w.imag)
    sh = math.sin(0.5 * w.real)
    return complex(-math.expm1(-w.imag) + 2.0 * ey * sh * sh, -ey * math.sin(w.real))


@njit(cache=True)
def _cot2_upper(w, j):
    e = cmath.exp(1j * w)
    om = _one_minus_eiw(w)
    if j == 0:
        return -1j * (2.0 - om) / om
    s = 0.0j
    pw = e
    for k in range(j):
        s += EULER[j, k] * pw
        pw *= e
    return -2j * ipow(j) * s / om ** (j + 1)


@njit(cache=True)
def cot2_deriv(w, j):
    if w.imag >= 0.0:
        return _cot2_upper(w, j)
    sign = 1.0 if (j % 2 == 1) else -1.0
    return sign * _cot2_upper(-w, j)


@njit(cache=True)
def tanh2_deriv(w, j):
    # tanh(w/2) = -i cot_2(pi - i w)
    return -1j * mipow(j) * cot2_deriv(PI - 1j * w, j)


@njit(cache=True)
def coth2_deriv(w, j):
    # coth(w/2) = i cot_2(i w)
    return 1j * ipow(j) * cot2_deriv(1j * w, j)


# ---------------------------------------------------------------------------
# H (par=0) and H_I (par=1) as Li-series, direct regime
# ---------------------------------------------------------------------------

@njit(cache=True)
def _series(par, t, w, j, d, abs_tol, max_terms):
    """Order-j z-derivative and order-d t-derivative of the kernel at a point w with
    |Im w| <= t/2.  Returns value, tail bound, converged flag."""
    m = j + d
    val = 0.0j
    if par == 0 and d == 0:
        val = cot2_deriv(w, j)
    ij = ipow(j)
    mij = mipow(j)
    imw = abs(w.imag)
    rho = math.exp(-2.0 * t)
    k = 1 if par == 0 else 0
    bound = math.inf
    for _ in range(max_terms):
        a = 2 * k + par
        v = cmath.exp(1j * w - a * t)
        vp = cmath.exp(-1j * w - a * t)
        fac = (-float(a)) ** d
        val += 2j * fac * (mij * li_neg(m, vp) - ij * li_neg(m, v))
        an = float(a + 2)
        r = math.exp(imw - an * t)
        if r < 1.0:
            ratio = rho * ((an + 2.0) / an) ** d
            if ratio < 1.0:
                bound = 4.0 * an ** d * li_neg_real(m, r) / (1.0 - ratio)
                if bound <= abs_tol:
                    return val, bound, True
        k += 1
    return val, bound, False


@njit(cache=True)
def _reduce_re(z):
    x = z.real - TWO_PI * math.floor(z.real / TWO_PI + 0.5)
    return complex(x, z.imag)


@njit(cache=True)
def kernel_direct(par, t, z, j, d, abs_tol, max_terms):
    z = _reduce_re(z)
    a = int(math.floor(z.imag / t + 0.5))
    w = complex(z.real, z.imag - a * t)
    par2 = (par + abs(a)) % 2
    if d == 0:
        val, b, ok = _series(par2, t, w, j, 0, abs_tol, max_terms)
        if j == 0:
            val -= 1j * a
        return val, b, ok
    total = 0.0j
    btot = 0.0
    ok_all = True
    for l in range(d + 1):
        c = BINOM[d, l] * (float(a) ** l) * mipow(l)
        if c == 0.0:
            continue
        v, b, ok = _series(par2, t, w, j + l, d - l, abs_tol, max_terms)
        total += c * v
        btot += abs(c) * b
        ok_all = ok_all and ok
    return total, btot, ok_all


@njit(cache=True)
def kernel_modular(par, t, z, j, abs_tol, max_terms):
    """Small-modulus evaluation through the modular swap t -> pi^2/t."""
    zr = _reduce_re(z)
    big = PI * PI / t
    zeta = -1j * PI * zr / t
    if par == 1:
        zeta += PI
    s = PI / t
    v, b, ok = kernel_direct(0, big, zeta, j, 0, abs_tol / (s ** (j + 1)), max_terms)
    val = -1j * s * (-1j * s) ** j * v
    bound = s ** (j + 1) * b
    if j == 0:
        val -= zr / t
    elif j == 1:
        val -= 1.0 / t
    return val, bound, ok


@njit(cache=True)
def _pde_dt1(d0, b0, mmax, sign):
    """sign * dt K^{(m)} = K^{(m+2)} + sum_i C(m,i) K^{(i+1)} K^{(m-i)}, m <= mmax."""
    d1 = np.zeros(mmax + 1, dtype=np.complex128)
    b1 = np.zeros(mmax + 1)
    for m in range(mmax + 1):
        s = d0[m + 2]
        e = b0[m + 2]
        for i in range(m + 1):
            c = BINOM[m, i]
            s += c * d0[i + 1] * d0[m - i]
            e += c * (abs(d0[i + 1]) * b0[m - i] + b0[i + 1] * abs(d0[m - i]) + b0[i + 1] * b0[m - i])
        d1[m] = sign * s
        b1[m] = e
    return d1, b1


@njit(cache=True)
def _pde_dt2(d0, b0, d1, b1, j, sign):
    s = d1[j + 2]
    e = b1[j + 2]
    for i in range(j + 1):
        c = BINOM[j, i]
        s += c * (d1[i + 1] * d0[j - i] + d0[i + 1] * d1[j - i])
        e += c * (abs(d1[i + 1]) * b0[j - i] + b1[i + 1] * abs(d0[j - i])
                  + abs(d0[i + 1]) * b1[j - i] + b0[i + 1] * abs(d1[j - i])
                  + 2.0 * b0[i + 1] * b1[j - i])
    return sign * s, e


@njit(cache=True)
def kernel(par, t, z, j, d, t_swap, abs_tol, max_terms):
    """H (par=0) or H_I (par=1): order-j z-derivative, order-d t-derivative (d <= 2)."""
    if t >= t_swap:
        return kernel_direct(par, t, z, j, d, abs_tol, max_terms)
    if d == 0:
        return kernel_modular(par, t, z, j, abs_tol, max_terms)
    top = j + 2 * d
    d0 = np.zeros(top + 1, dtype=np.complex128)
    b0 = np.zeros(top + 1)
    ok_all = True
    for m in range(top + 1):
        v, b, ok = kernel_modular(par, t, z, m, abs_tol, max_terms)
        d0[m] = v
        b0[m] = b
        ok_all = ok_all and ok
    d1, b1 = _pde_dt1(d0, b0, top - 2, 1.0)
    if d == 1:
        return d1[j], b1[j], ok_all
    v, e = _pde_dt2(d0, b0, d1, b1, j, 1.0)
    return v, e, ok_all


@njit(cache=True)
def kernel_fast(par, t, z, j):
    """Hot-loop evaluation: swap at t = pi, where both series converge equally fast."""
    v, b, ok = kernel(par, t, z, j, 0, PI, 1e-16, 60)
    return v


# ---------------------------------------------------------------------------
# rescaled kernels: which 0 = H^, 1 = H^_I, 2 = H^_{I,q}
# ---------------------------------------------------------------------------

@njit(cache=True)
def _rescaled_base(which, t, w, m, t_swap, abs_tol, max_terms):
    if which == 0:
        u = -1j * w
    else:
        u = PI - 1j * w
    v, b, ok = kernel(0, t, u, m, 0, t_swap, abs_tol, max_terms)
    val = -1j * mipow(m) * v
    if which == 2:
        val -= tanh2_deriv(w, m)
    return val, b, ok


@njit(cache=True)
def rescaled(which, t, w, j, d, t_swap, abs_tol, max_terms):
    if d == 0:
        return _rescaled_base(which, t, w, j, t_swap, abs_tol, max_terms)
    # t-derivatives come from -dt K = K'' + K' K; the tanh part of H^_{I,q} is t-free
    base = 0 if which == 0 else 1
    top = j + 2 * d
    d0 = np.zeros(top + 1, dtype=np.complex128)
    b0 = np.zeros(top + 1)
    ok_all = True
    for m in range(top + 1):
        v, b, ok = _rescaled_base(base, t, w, m, t_swap, abs_tol, max_terms)
        d0[m] = v
        b0[m] = b
        ok_all = ok_all and ok
    d1, b1 = _pde_dt1(d0, b0, top - 2, -1.0)
    if d == 1:
        return d1[j], b1[j], ok_all
    v, e = _pde_dt2(d0, b0, d1, b1, j, -1.0)
    return v, e, ok_all


# ---------------------------------------------------------------------------
# S kernel in disc coordinates
# ---------------------------------------------------------------------------

@njit(cache=True)
def s_kernel(tau, w, with_deriv):
    """S(tau, w) and dS/dw.  Direct geometric series for tau >= 1, otherwise through
    S(tau, w) = i H(tau, -i log w)."""
    if tau >= 1.0:
        val = (1.0 + w) / (1.0 - w)
        der = 2.0 / (1.0 - w) ** 2
        acc = 0.0j
        accd = 0.0j
        for k in range(1, 200):
            c = math.exp(-2.0 * k * tau)
            u = w * c
            up = c / w
            acc += li_neg(0, u) - li_neg(0, up)
            if with_deriv:
                accd += li_neg(1, u) + li_neg(1, up)
            if abs(up) < 1e-17 and abs(u) < 1e-17:
                break
            if c * max(abs(w), 1.0 / abs(w)) < 1e-18:
                break
        val += 2.0 * acc
        der += 2.0 * accd / w
        return val, der
    z = -1j * cmath.log(w)
    val = 1j * kernel_fast(0, tau, z, 0)
    der = 0.0j
    if with_deriv:
        der = kernel_fast(0, tau, z, 1) / w
    return val, der


# ---------------------------------------------------------------------------
# theta products
# ---------------------------------------------------------------------------

@njit(cache=True)
def theta(which, t, z, abs_tol, max_terms):
    """Theta (which=0) or Theta_I (which=1) by the product formula.

    Returns value, log-derivatives L1, L2, L3 (in z), Lt (in t), tail bound, ok.
    Theta(t,z) = 2 e^{-t/4} sin(z/2) prod (1-q^{2m})(1-q^{2m}e^{iz})(1-q^{2m}e^{-iz}),
    Theta_I(t,z) = prod (1-q^{2m})(1-q^{2m-1}e^{iz})(1-q^{2m-1}e^{-iz}), q = e^{-t}.
    """
    eiz = cmath.exp(1j * z)
    emiz = cmath.exp(-1j * z)
    imz = abs(z.imag)
    if which == 0:
        val = 2.0 * math.exp(-t / 4.0) * cmath.sin(z / 2.0)
        c = cot2_deriv(z, 0)
        l1 = 0.5 * c
        l2 = -0.25 * (1.0 + c * c)
        l3 = 0.25 * c * (1.0 + c * c)
        lt = -0.25 + 0.0j
    else:
        val = 1.0 + 0.0j
        l1 = 0.0j
        l2 = 0.0j
        l3 = 0.0j
        lt = 0.0j
    bound = math.inf
    ok = False
    for m in range(1, max_terms + 1):
        b_even = 2.0 * m
        b_z = 2.0 * m if which == 0 else 2.0 * m - 1.0
        e0 = math.exp(-b_even * t)
        cz = math.exp(-b_z * t)
        u = cz * eiz
        up = cz * emiz
        val *= (1.0 - e0) * (1.0 - u) * (1.0 - up)
        # d^j/dz^j log(1-u) = -i^j Li_{1-j}(u); for up the sign of i flips
        l1 += -1j * li_neg(0, u) + 1j * li_neg(0, up)
        l2 += li_neg(1, u) + li_neg(1, up)
        l3 += 1j * li_neg(2, u) - 1j * li_neg(2, up)
        lt += b_even * e0 / (1.0 - e0) + b_z * (li_neg(0, u) + li_neg(0, up))
        # tail from factor m+1 on
        b_next = b_z + 2.0
        r = math.exp(imz - b_next * t)
        rho = math.exp(-2.0 * t)
        if r < 0.5:
            geo = 1.0 / (1.0 - rho)
            tail = 3.0 * r / (1.0 - r) * geo
            tail_d = 2.0 * li_neg_real(2, r) * geo * (b_next + 2.0)
            bound = max(tail, tail_d)
            if bound <= abs_tol:
                ok = True
                break
    return val, l1, l2, l3, lt, bound, ok


# ---------------------------------------------------------------------------
# Loewner right-hand sides
# ---------------------------------------------------------------------------

K_RADIAL = 0
K_COV_RADIAL = 1
K_ANNULUS = 2
K_COV_ANNULUS = 3
K_INV_COV_ANNULUS = 4
K_WHOLE_INV = 5
K_COV_WHOLE_INV = 6
K_DISC = 7
K_COV_DISC = 8
K_INV_COV_DISC = 9
K_RESCALED = 10
K_STRIP = 11


@njit(cache=True)
def is_disc_coords(kind):
    return kind == K_RADIAL or kind == K_ANNULUS or kind == K_WHOLE_INV or kind == K_DISC


@njit(cache=True)
def remaining(kind, t, p):
    """Modulus argument of the kernel at time t."""
    if kind == K_ANNULUS or kind == K_COV_ANNULUS or kind == K_INV_COV_ANNULUS:
        return p - t
    if kind == K_DISC or kind == K_COV_DISC or kind == K_INV_COV_DISC:
        return -t
    if kind == K_RESCALED:
        return p + t
    return math.inf


@njit(cache=True)
def rhs(kind, t, g, xi, p, with_deriv):
    """Right-hand side F(t, g) of each Loewner equation and its g-derivative."""
    tau = remaining(kind, t, p)
    der = 0.0j
    if kind == K_RADIAL or kind == K_WHOLE_INV:
        e = cmath.exp(1j * xi)
        f = g * (e + g) / (e - g)
        if with_deriv:
            der = (e + g) / (e - g) + 2.0 * e * g / (e - g) ** 2
        return f, der
    if kind == K_COV_RADIAL or kind == K_COV_WHOLE_INV:
        c = cot2_deriv(g - xi, 0)
        if with_deriv:
            der = -0.5 * (1.0 + c * c)
        return c, der
    if kind == K_ANNULUS:
        rot = cmath.exp(-1j * xi)
        w = g * rot
        s, ds = s_kernel(tau, w, with_deriv)
        if with_deriv:
            der = s + w * ds
        return g * s, der
    if kind == K_DISC:
        rot = cmath.exp(-1j * xi)
        sc = math.exp(-tau)
        w = sc * g * rot
        s, ds = s_kernel(tau, w, with_deriv)
        if with_deriv:
            der = s - 1.0 + w * ds
        return g * (s - 1.0), der
    if kind == K_COV_ANNULUS or kind == K_INV_COV_DISC:
        f = kernel_fast(0, tau, g - xi, 0)
        if with_deriv:
            der = kernel_fast(0, tau, g - xi, 1)
        return f, der
    if kind == K_INV_COV_ANNULUS or kind == K_COV_DISC:
        f = kernel_fast(1, tau, g - xi, 0)
        if with_deriv:
            der = kernel_fast(1, tau, g - xi, 1)
        return f, der
    if kind == K_RESCALED:
        u = -1j * (g - xi)
        f = -1j * kernel_fast(0, tau, u, 0)
        if with_deriv:
            der = -kernel_fast(0, tau, u, 1)
        return f, der
    # strip
    c = coth2_deriv(g - xi, 0)
    if with_deriv:
        der = -0.5 * (c * c - 1.0)
    return c, der


@njit(cache=True)
def _lattice_dist(x, y, px, py, oy):
    """Distance from (x, y) to the lattice {m px + (k py + oy) i}."""
    xr = x - px * math.floor(x / px + 0.5)
    yy = y - oy
    yr = yy - py * math.floor(yy / py + 0.5)
    return math.hypot(xr, yr)


@njit(cache=True)
def pole_dist(kind, t, g, xi, p):
    """Distance from the state to the nearest singularity of the right-hand side."""
    tau = remaining(kind, t, p)
    if is_disc_coords(kind):
        e = cmath.exp(1j * xi)
        if kind == K_DISC:
            return abs(g - math.exp(-tau) * e)
        return abs(g - e)
    u = g - xi
    if kind == K_COV_RADIAL or kind == K_COV_WHOLE_INV:
        return math.hypot(u.real - TWO_PI * math.floor(u.real / TWO_PI + 0.5), u.imag)
    if kind == K_COV_ANNULUS or kind == K_INV_COV_DISC:
        return _lattice_dist(u.real, u.imag, TWO_PI, 2.0 * tau, 0.0)
    if kind == K_INV_COV_ANNULUS or kind == K_COV_DISC:
        return _lattice_dist(u.real, u.imag, TWO_PI, 2.0 * tau, tau)
    if kind == K_RESCALED:
        return _lattice_dist(u.imag, u.real, TWO_PI, 2.0 * tau, 0.0)
    return math.hypot(u.real, u.imag - TWO_PI * math.floor(u.imag / TWO_PI + 0.5))


# ---------------------------------------------------------------------------
# adaptive Dormand-Prince 5(4) over a piecewise-linear driving function
# ---------------------------------------------------------------------------

A21 = 1.0 / 5.0
A31, A32 = 3.0 / 40.0, 9.0 / 40.0
A41, A42, A43 = 44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0
A51, A52, A53, A54 = 19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0
A61, A62, A63, A64, A65 = (9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0,
                           -5103.0 / 18656.0)
B1, B3, B4, B5, B6 = 35.0 / 384.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0
E1, E3, E4, E5, E6, E7 = (71.0 / 57600.0, -71.0 / 16695.0, 71.0 / 1920.0, -17253.0 / 339200.0,
                          22.0 / 525.0, -1.0 / 40.0)
C2, C3, C4, C5 = 0.2, 0.3, 0.8, 8.0 / 9.0

ST_OK = 0
ST_SWALLOWED = 1
ST_UNDERFLOW = 2
ST_RANGE = 3
ST_NONFINITE = 4


@njit(cache=True)
def _finite(z):
    return math.isfinite(z.real) and math.isfinite(z.imag)


@njit(cache=True)
def _segment(kind, p, ta, tb, xa, slope, tk, z, lg, with_deriv, h, rtol, atol,
             safety, eps_pole, hmin):
    """Integrate on [ta, tb] (either direction) with xi(s) = xa + slope (s - tk)."""
    sgn = 1.0 if tb >= ta else -1.0
    t = ta
    span = abs(tb - ta)
    if span == 0.0:
        return z, lg, ST_OK, t, h
    while True:
        rest = sgn * (tb - t)
        if rest <= 1e-15 * max(1.0, abs(tb)):
            return z, lg, ST_OK, tb, h
        xi0 = xa + slope * (t - tk)
        dist = pole_dist(kind, t, z, xi0, p)
        if dist < eps_pole * (1.0 + abs(z)):
            return z, lg, ST_SWALLOWED, t, h
        k1, d1 = rhs(kind, t, z, xi0, p, with_deriv)
        if not _finite(k1):
            return z, lg, ST_NONFINITE, t, h
        hh = min(h, rest)
        speed = abs(k1)
        if speed > 0.0:
            hh = min(hh, safety * dist / speed)
        if hh < hmin:
            return z, lg, ST_UNDERFLOW, t, h
        s = sgn * hh
        z2 = z + s * A21 * k1
        k2, d2 = rhs(kind, t + C2 * s, z2, xa + slope * (t + C2 * s - tk), p, with_deriv)
        z3 = z + s * (A31 * k1 + A32 * k2)
        k3, d3 = rhs(kind, t + C3 * s, z3, xa + slope * (t + C3 * s - tk), p, with_deriv)
        z4 = z + s * (A41 * k1 + A42 * k2 + A43 * k3)
        k4, d4 = rhs(kind, t + C4 * s, z4, xa + slope * (t + C4 * s - tk), p, with_deriv)
        z5 = z + s * (A51 * k1 + A52 * k2 + A53 * k3 + A54 * k4)
        k5, d5 = rhs(kind, t + C5 * s, z5, xa + slope * (t + C5 * s - tk), p, with_deriv)
        z6 = z + s * (A61 * k1 + A62 * k2 + A63 * k3 + A64 * k4 + A65 * k5)
        k6, d6 = rhs(kind, t + s, z6, xa + slope * (t + s - tk), p, with_deriv)
        znew = z + s * (B1 * k1 + B3 * k3 + B4 * k4 + B5 * k5 + B6 * k6)
        k7, d7 = rhs(kind, t + s, znew, xa + slope * (t + s - tk), p, with_deriv)
        ez = s * (E1 * k1 + E3 * k3 + E4 * k4 + E5 * k5 + E6 * k6 + E7 * k7)
        err = abs(ez) / (atol + rtol * max(abs(z), abs(znew)))
        lnew = lg
        if with_deriv:
            lnew = lg + s * (B1 * d1 + B3 * d3 + B4 * d4 + B5 * d5 + B6 * d6)
            el = s * (E1 * d1 + E3 * d3 + E4 * d4 + E5 * d5 + E6 * d6 + E7 * d7)
            err = max(err, abs(el) / (atol + rtol * max(abs(lg), abs(lnew))))
        if not (math.isfinite(err) and _finite(znew)):
            h = hh * 0.1
            continue
        if err <= 1.0:
            t = t + s
            z = znew
            lg = lnew
            if err == 0.0:
                fac = 5.0
            else:
                fac = min(5.0, max(0.2, 0.9 * err ** -0.2))
            h = hh * fac
        else:
            h = hh * max(0.1, 0.9 * err ** -0.2)


@njit(cache=True)
def flow(kind, p, t0g, dtg, xi, ta, tb, z, lg, with_deriv, rtol, atol, safety, eps_pole,
         hmin):
    """Integrate a Loewner equation from ta to tb with piecewise-linear driving samples
    xi[k] at t0g + k dtg.  lg accumulates log g' when with_deriv.

    Returns (z, lg, status, t_reached)."""
    n = xi.shape[0]
    tmax = t0g + (n - 1) * dtg
    fuzz = 1e-9 * dtg
    if ta < t0g - fuzz or ta > tmax + fuzz or tb < t0g - fuzz or tb > tmax + fuzz:
        return z, lg, ST_RANGE, ta
    sgn = 1.0 if tb >= ta else -1.0
    t = ta
    h = dtg
    if n == 1:
        return z, lg, ST_OK, ta
    while sgn * (tb - t) > 1e-13 * max(1.0, abs(tb)):
        pos = (t - t0g) / dtg
        if sgn > 0:
            k = int(math.floor(pos + 1e-9))
        else:
            k = int(math.ceil(pos - 1e-9)) - 1
        if k < 0:
            k = 0
        if k > n - 2:
            k = n - 2
        tk = t0g + k * dtg
        if sgn > 0:
            tn = min(tk + dtg, tb)
        else:
            tn = max(tk, tb)
        slope = (xi[k + 1] - xi[k]) / dtg
        z, lg, st, treached, h = _segment(kind, p, t, tn, xi[k], slope, tk, z, lg, with_deriv,
                                          h, rtol, atol, safety, eps_pole, hmin)
        if st != ST_OK:
            return z, lg, st, treached
        t = tn
    return z, lg, ST_OK, t


@njit(cache=True)
def drive_at(t0g, dtg, xi, t):
    n = xi.shape[0]
    pos = (t - t0g) / dtg
    k = int(math.floor(pos))
    if k < 0:
        return xi[0]
    if k >= n - 1:
        return xi[n - 1]
    fr = pos - k
    return xi[k] + fr * (xi[k + 1] - xi[k])


@njit(cache=True)
def tip_start(kind, t, xi_t, p, eps):
    """Point offset eps into the domain from the driving singularity at time t."""
    tau = remaining(kind, t, p)
    if kind == K_RADIAL or kind == K_WHOLE_INV or kind == K_ANNULUS:
        return cmath.exp(1j * xi_t) * math.exp(-eps)
    if kind == K_DISC:
        return cmath.exp(1j * xi_t) * math.exp(-tau + eps)
    if kind == K_INV_COV_ANNULUS or kind == K_COV_DISC:
        return complex(xi_t, tau - eps)
    return complex(xi_t, eps)


@njit(cache=True)
def trace_points(kind, p, t0g, dtg, xi, times, eps_arr, t_end, rtol, atol, safety, eps_pole,
                 hmin):
    """Backward flow from the offset tip at each time down to t_end."""
    m = times.shape[0]
    out = np.empty(m, dtype=np.complex128)
    status = np.zeros(m, dtype=np.int64)
    for i in range(m):
        t = times[i]
        x = drive_at(t0g, dtg, xi, t)
        z0 = tip_start(kind, t, x, p, eps_arr[i])
        z, lg, st, tr = flow(kind, p, t0g, dtg, xi, t, t_end, z0, 0.0j, False, rtol, atol,
                             safety, eps_pole, hmin)
        out[i] = z
        status[i] = st
    return out, status
