"""Annulus kernels S, H, H_I, theta functions, rescaled kernels and the r_A, R_A
coefficients, each returned with a certified truncation bound.

Conventions (q = e^{-t}):

    H(t, z)   = PV sum_{n even} cot((z - i n t)/2)
    H_I(t, z) = PV sum_{n odd}  cot((z - i n t)/2)
    Theta(t, z)   = 2 q^{1/4} sin(z/2) prod_m (1 - q^{2m})(1 - q^{2m} e^{iz})(1 - q^{2m} e^{-iz})
    Theta_I(t, z) = prod_m (1 - q^{2m})(1 - q^{2m-1} e^{iz})(1 - q^{2m-1} e^{-iz})

With these, H = 2 Theta'/Theta, H_I = 2 Theta_I'/Theta_I, and both thetas solve
dt Theta = Theta''.  Theta is the classical theta_1(z/2 | q) and Theta_I is theta_4(z/2 | q).

The series are evaluated as sums of Li_{-m}(v) = sum n^m v^n over the rows of the pole
lattice after reducing Re z mod 2 pi and Im z mod t.  For t below ``T_MIN`` the modular
identity H(t, z) = -(i pi/t) H(pi^2/t, -i pi z/t) - z/t is used instead, and t-derivatives
then come from dt K = K'' + K' K.
"""

from dataclasses import dataclass
import math

import numpy as np
from scipy import integrate

from . import _kern
from .errors import NonConvergence, PoleProximity

T_MIN = 0.5
INF = math.inf


@dataclass(frozen=True)
class SeriesTruncation:
    abs_tol: float = 1e-14
    max_terms: int = 400

    def __post_init__(self):
        if not self.abs_tol > 0:
            raise ValueError("abs_tol must be positive")
        if self.max_terms < 1:
            raise ValueError("max_terms must be >= 1")


@dataclass(frozen=True)
class KernelValue:
    value: complex
    trunc_error_bound: float


DEFAULT_TRUNC = SeriesTruncation()


def _check_t(t):
    if not (t > 0):
        raise ValueError(f"modulus must be positive, got {t}")


def pole_eps(z):
    return 1e-6 * (1.0 + abs(z))


def pole_distance(t, z, odd_rows):
    """Distance from z to {2 m pi + k t i} with k even (odd_rows False) or odd."""
    z = complex(z)
    x = z.real - 2 * math.pi * math.floor(z.real / (2 * math.pi) + 0.5)
    if math.isinf(t):
        return math.hypot(x, z.imag) if not odd_rows else INF
    y = z.imag - (t if odd_rows else 0.0)
    y -= 2 * t * math.floor(y / (2 * t) + 0.5)
    return math.hypot(x, y)


def _guard(t, z, odd_rows):
    if pole_distance(t, z, odd_rows) < pole_eps(z):
        raise PoleProximity(f"z={z} is within the pole guard of the lattice at t={t}")


def _finish(res, what):
    val, bound, ok = res
    if not ok:
        raise NonConvergence(f"{what}: series did not reach abs_tol within max_terms")
    return KernelValue(complex(val), float(bound))


def _kernel(par, t, z, order, dt_order, trunc, t_min):
    _check_t(t)
    if order < 0 or dt_order not in (0, 1, 2):
        raise ValueError("order must be >= 0 and dt_order in {0, 1, 2}")
    if order + 2 * dt_order > _kern.MAX_ORDER - 2:
        raise ValueError("derivative order too high")
    trunc = trunc or DEFAULT_TRUNC
    z = complex(z)
    _guard(t, z, par == 1)
    if math.isinf(t):
        if par == 1 or dt_order > 0:
            return KernelValue(0j, 0.0)
        return KernelValue(complex(_kern.cot2_deriv(z, order)), 0.0)
    res = _kern.kernel(par, float(t), z, order, dt_order, float(t_min), trunc.abs_tol,
                       trunc.max_terms)
    return _finish(res, "H" if par == 0 else "H_I")


def eval_ha(t, z, order=0, dt_order=0, trunc=None, t_min=T_MIN):
    """H(t, z) or its derivatives; t may be ``math.inf`` (then cot(z/2))."""
    return _kernel(0, t, z, order, dt_order, trunc, t_min)


def eval_ha_I(t, z, order=0, dt_order=0, trunc=None, t_min=T_MIN):
    """H_I(t, z) or its derivatives; H_I(inf, .) = 0."""
    return _kernel(1, t, z, order, dt_order, trunc, t_min)


def eval_s(t, w):
    """S(t, w) = PV sum_{n even} (e^{nt} + w)/(e^{nt} - w); S(inf, w) = (1+w)/(1-w)."""
    w = complex(w)
    if math.isinf(t):
        return (1 + w) / (1 - w)
    _check_t(t)
    val, _ = _kern.s_kernel(float(t), w, False)
    return complex(val)


def eval_s_I(t, w):
    """S_I(t, w) = S(t, e^{-t} w) - 1."""
    if math.isinf(t):
        return 0j
    return eval_s(t, math.exp(-t) * complex(w)) - 1.0


_THETA_NAMES = {"Theta": 0, "Theta_I": 1}


def eval_theta(t, z, which="Theta_I", order=0, dt_order=0, trunc=None):
    """Theta or Theta_I by the product formula.

    Derivatives (order <= 3 in z, or one t-derivative) follow from term-wise
    differentiation of the logarithm of the product.
    """
    _check_t(t)
    if which not in _THETA_NAMES:
        raise ValueError(f"which must be one of {sorted(_THETA_NAMES)}")
    if dt_order not in (0, 1) or order not in (0, 1, 2, 3) or (dt_order and order):
        raise ValueError("supported: order 0..3 in z, or dt_order 1 with order 0")
    trunc = trunc or DEFAULT_TRUNC
    z = complex(z)
    if math.isinf(t):
        raise ValueError("theta functions need a finite modulus")
    val, l1, l2, l3, lt, bound, ok = _kern.theta(_THETA_NAMES[which], float(t), z,
                                                 trunc.abs_tol, trunc.max_terms)
    if not ok:
        raise NonConvergence("theta product did not reach abs_tol within max_terms")
    if dt_order == 1:
        factor = lt
    elif order == 0:
        factor = 1.0
    elif order == 1:
        factor = l1
    elif order == 2:
        factor = l2 + l1 * l1
    else:
        factor = l3 + 3 * l2 * l1 + l1 ** 3
    out = complex(val * factor)
    # relative tail error e^{b}-1 on the product, plus the tail of the log-derivatives
    err = abs(val) * ((math.expm1(bound)) * abs(factor) + bound * (1 + abs(factor)))
    return KernelValue(out, float(err))


def eval_rA(t):
    """r_A(t) = sum_{k>=1} sinh^{-2}(k t) - 1/6."""
    if math.isinf(t):
        return -1.0 / 6.0
    _check_t(t)
    s = 0.0
    for k in range(1, 100000):
        term = 1.0 / math.sinh(k * t) ** 2 if k * t < 700 else 0.0
        s += term
        # remaining terms are bounded by a geometric series of ratio e^{-2t}
        if term <= 1e-18 * (1 - math.exp(-2 * t)):
            return s - 1.0 / 6.0
    raise NonConvergence("r_A series did not converge")


def eval_RA(t):
    """R_A(t) = -int_t^inf (r_A(s) + 1/6) ds, by adaptive quadrature."""
    if math.isinf(t):
        return 0.0
    _check_t(t)
    f = lambda s: eval_rA(s) + 1.0 / 6.0  # noqa: E731
    # the integrand is below 4 e^{-2s}/(1-e^{-2s})^3, so the part beyond t + 40 is < 1e-30
    upper = t + 40.0
    val, err = integrate.quad(f, t, upper, epsabs=1e-14, epsrel=1e-13, limit=200)
    if err > 1e-10:
        raise NonConvergence("R_A quadrature did not converge")
    return -val


_RESCALED_NAMES = {"H": 0, "H_I": 1, "H_Iq": 2}


def rescaled_pole_distance(which, t, z):
    """Distance to the poles of H^ (at 2nt + 2m pi i) or H^_I (at (2n+1)t + (2m+1) pi i)."""
    z = complex(z)
    if which == "H":
        x, y = z.real, z.imag
    else:
        x, y = z.real - t, z.imag - math.pi
    x -= 2 * t * math.floor(x / (2 * t) + 0.5)
    y -= 2 * math.pi * math.floor(y / (2 * math.pi) + 0.5)
    d = math.hypot(x, y)
    if which == "H_Iq":
        # tanh(z/2) has poles at (2m+1) pi i
        yy = z.imag - math.pi
        yy -= 2 * math.pi * math.floor(yy / (2 * math.pi) + 0.5)
        d = min(d, math.hypot(z.real, yy))
    return d


def eval_ha_rescaled(t, z, which="H_I", order=0, dt_order=0, trunc=None, t_min=T_MIN):
    """Rescaled kernels H^(t,z) = PV sum_{n even} coth((z - nt)/2),
    H^_I(t,z) = PV sum_{n even} tanh((z - nt)/2) and H^_{I,q} = H^_I - tanh(z/2).

    t-derivatives use -dt K = K'' + K' K (the tanh part of H^_{I,q} does not depend on t).
    """
    _check_t(t)
    if which not in _RESCALED_NAMES:
        raise ValueError(f"which must be one of {sorted(_RESCALED_NAMES)}")
    if dt_order not in (0, 1, 2) or order < 0:
        raise ValueError("order must be >= 0 and dt_order in {0, 1, 2}")
    trunc = trunc or DEFAULT_TRUNC
    z = complex(z)
    if rescaled_pole_distance(which, t, z) < pole_eps(z):
        raise PoleProximity(f"z={z} is within the pole guard of the rescaled kernel")
    res = _kern.rescaled(_RESCALED_NAMES[which], float(t), z, order, dt_order, float(t_min),
                         trunc.abs_tol, trunc.max_terms)
    return _finish(res, "rescaled kernel")


# ---------------------------------------------------------------------------
# bounds used by the property checks
# ---------------------------------------------------------------------------

def estimation_bound(t, z, h):
    """Upper bound for |H_I^{(h)}(t, z)|: 5.5 e^{|Im z| - t} for h = 0 (needs
    t >= |Im z| + 2), 15 sqrt(h) e^{|Im z| - t} for h >= 1 (needs t >= |Im z| + h + 2)."""
    y = abs(complex(z).imag)
    if h == 0:
        if t < y + 2:
            raise ValueError("bound needs t >= |Im z| + 2")
        return 5.5 * math.exp(y - t)
    if t < y + h + 2:
        raise ValueError("bound needs t >= |Im z| + h + 2")
    return 15.0 * math.sqrt(h) * math.exp(y - t)


def tanh2_derivative_constant(n):
    """C_n = 2 sum_j |a_j| where tanh_2^{(n)} = cosh_2^{-2} sum_j a_j tanh_2^j (n >= 1)."""
    if n < 1:
        raise ValueError("n must be >= 1")
    # y = tanh(x/2) satisfies y' = (1 - y^2)/2; P_n(y) = d^n/dx^n tanh(x/2)
    poly = np.polynomial.Polynomial([0.0, 1.0])
    half = np.polynomial.Polynomial([0.5, 0.0, -0.5])
    for _ in range(n):
        poly = poly.deriv() * half
    q, r = divmod(poly, np.polynomial.Polynomial([1.0, 0.0, -1.0]))
    if np.max(np.abs(r.coef)) > 1e-12:
        raise RuntimeError("derivative polynomial not divisible by 1 - y^2")
    return 2.0 * float(np.sum(np.abs(q.coef)))


def ha_iq_bound(t, x, order=0, c=None):
    """Bounds on |H^_{I,q}^{(n)}(t, x)| for real x.

    Without ``c``: |x|/t + 3 + 2e^{-t}/(1-e^{-2t}) (order 0) and
    C_n (1/2 + 4e^{-t}/(1-e^{-2t})) (order n >= 1).
    With ``c`` (requires |x| <= c t): 2e^{(c-2)t}/(1-e^{-2t}) and C_n 4e^{(c-2)t}/(1-e^{-2t}).
    """
    g = 1.0 - math.exp(-2 * t)
    if c is None:
        if order == 0:
            return abs(x) / t + 3 + 2 * math.exp(-t) / g
        return tanh2_derivative_constant(order) * (0.5 + 4 * math.exp(-t) / g)
    if abs(x) > c * t:
        raise ValueError("bound needs |x| <= c t")
    if order == 0:
        return 2 * math.exp((c - 2) * t) / g
    return tanh2_derivative_constant(order) * 4 * math.exp((c - 2) * t) / g
