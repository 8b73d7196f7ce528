"""Crossing annulus drift functions.

Two sources:

* Monte Carlo: the Feynman-Kac factor Psi^_q is estimated along the diffusion
  dX = sqrt(kappa) dB + tau tanh_2(X) dt, assembled into Psi^_0 = Psi^_q Psi^_inf, pulled
  back to Psi_0(t, y) = e^{-y^2/(2 kappa t)} (pi/t)^{sigma+1/2} Psi^_0(pi^2/t, pi y/t) and
  periodized as Psi_<s>(t, x) = sum_m e^{2 pi m s/kappa} Psi_0(t, x - 2 m pi).  The drift is
  Lambda_<s> = kappa Psi_<s>'/Psi_<s> - H_I.
* Closed forms built on the annulus kernels, collected in ``CATALOG`` together with the
  PDE each one solves, so that ``pde_residual`` can check them.
"""

from dataclasses import dataclass, field, replace
import math
from typing import Callable

import numpy as np

from . import _mc, specfun
from .errors import BiasExceedsTolerance, PoleProximity
from .stochastic import RngSeed

H_X = 1e-3
PILOT_PATHS = 1000
# relative resolution of kernel values and reductions in double precision
ARITH_FLOOR = 1e-15
PILOT_STREAM_BIT = 1 << 63


# ---------------------------------------------------------------------------
# Feynman-Kac Monte Carlo
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class FkParams:
    kappa: float
    sigma: float
    s: float = 0.0
    n_paths: int = 10_000
    T_max: float | None = None
    dt: float = 1e-3
    m_trunc: int = 8
    target_stderr: float | None = None
    grade_every: float = 0.25
    dt_cap: float = 0.05
    chunk: int = 500

    def __post_init__(self):
        if not self.kappa > 0:
            raise ValueError("kappa must be positive")
        if not 0 <= self.sigma < 4 / self.kappa:
            raise ValueError("sigma must lie in [0, 4/kappa)")
        if self.n_paths < 2 or self.m_trunc < 1 or not self.dt > 0:
            raise ValueError("need n_paths >= 2, m_trunc >= 1, dt > 0")
        if self.T_max is not None and not self.T_max > 0:
            raise ValueError("T_max must be positive")

    @property
    def tau(self):
        k = self.kappa
        return k / 4 - math.sqrt(k * k / 16 + k * self.sigma)

    @classmethod
    def reversibility(cls, kappa, **kw):
        """sigma = 4/kappa - 1, the value under which the drift solves the crossing PDE."""
        return cls(kappa, 4 / kappa - 1, **kw)

    @classmethod
    def decomposition(cls, kappa, **kw):
        """sigma = 1/2 + 1/kappa, the value behind the endpoint decomposition."""
        return cls(kappa, 0.5 + 1 / kappa, **kw)


@dataclass(frozen=True)
class MCEstimate:
    mean: float
    stderr: float
    bias_bound: float
    n_paths: int
    T_max: float
    exit_prob_bound: float = 0.0


def fk_time_steps(dt, T_max, grade_every=0.25, dt_cap=0.05):
    """Step sizes on [0, T_max]: dt, doubled after every ``grade_every`` time units, capped."""
    steps = []
    s = 0.0
    h = dt
    level_end = grade_every
    while s < T_max - 1e-12:
        if s >= level_end - 1e-12:
            h = min(2 * h, dt_cap)
            level_end += grade_every
        step = min(h, T_max - s)
        steps.append(step)
        s += step
    return np.array(steps)


def tail_integral_bound(t0):
    """int_{t0}^inf 4 e^{-T}/(1 - e^{-2T}) dT = 4 artanh(e^{-t0}): the c = 1 cone bound on
    H^'_{I,q} integrated over the truncated tail."""
    return 4.0 * math.atanh(math.exp(-t0))


def tail_bias_bound(sigma, t_hat, T_max, psi=1.0):
    return psi * math.expm1(sigma * tail_integral_bound(t_hat + T_max))


def horizon_for(sigma, t_hat, eps):
    """Smallest T on a 0.25 grid with expm1(sigma * tail_integral_bound(t_hat + T)) <= eps,
    i.e. every Feynman-Kac factor is certified to within relative error eps."""
    if sigma == 0:
        return 0.25
    # sigma 4 artanh(e^{-T0}) ~ 4 sigma e^{-T0}; solve, then step up until it holds
    T = max(0.25, 0.25 * math.floor(4 * (math.log(4 * sigma / eps) - t_hat)))
    while math.expm1(sigma * tail_integral_bound(t_hat + T)) > eps:
        T += 0.25
    return T


def _pilot_seed(seed):
    return RngSeed(seed.seed, seed.stream_id ^ PILOT_STREAM_BIT)


def _fk_run(params, seed, t_hat, starts, T, n_paths, reduce):
    """Feed exp(sigma I) chunks of shape (chunk, len(starts)) to ``reduce``; returns the
    averaged exit-probability bound.  All starts of a path share its noise."""
    dts = fk_time_steps(params.dt, T, params.grade_every, params.dt_cap)
    starts = np.ascontiguousarray(starts, dtype=float)
    gen = seed.generator()
    c_end = t_hat + T
    exit_acc = 0.0
    for lo in range(0, n_paths, params.chunk):
        m = min(params.chunk, n_paths - lo)
        z = gen.standard_normal((m, dts.size))
        ex, xend = _mc.fk_exponents(starts, params.kappa, params.tau, t_hat, dts, z)
        reduce(lo, np.exp(params.sigma * ex))
        # restarted at T, the path leaves |X| <= u + (t_hat + T) with probability at most
        # 2 exp((2/kappa)(|X(T)| - t_hat - T))
        exit_acc += float(np.sum(np.minimum(1.0, 2 * np.exp((2 / params.kappa)
                                                             * (np.abs(xend) - c_end)))))
    return exit_acc / (n_paths * starts.size)


def _fk_samples(params, seed, t_hat, starts, T):
    out = np.empty((params.n_paths, len(starts)))

    def keep(lo, e):
        out[lo:lo + e.shape[0]] = e

    exit_p = _fk_run(params, seed, t_hat, starts, T, params.n_paths, keep)
    return out, exit_p


def _check_bias(bias, target, T):
    if bias > 0.1 * target:
        raise BiasExceedsTolerance(f"tail bias bound {bias:.3g} at T_max={T:.3g} exceeds "
                                   f"0.1 x target stderr {target:.3g}")


def _stderr(v):
    return float(v.std(ddof=1) / math.sqrt(v.size))


def psi_q_mc(params, seed, t, x):
    """Monte Carlo estimate of Psi^_q(t, x) = E exp(sigma int_0^T H^'_{I,q}(t+s, X_x(s)) ds).

    Without an explicit ``target_stderr`` the target is the stderr predicted by a pilot run
    on a separate stream."""
    if not t > 0:
        raise ValueError("t must be positive")
    t = float(t)
    if params.sigma == 0:
        return MCEstimate(1.0, 0.0, 0.0, params.n_paths, params.T_max or 0.0, 0.0)
    starts = np.array([float(x)])
    # the pilot (separate stream) gives the scale of the mean and the stderr to expect
    n_p = min(PILOT_PATHS, params.n_paths)
    pil, _ = _fk_samples(replace(params, n_paths=n_p), _pilot_seed(seed), t, starts,
                         horizon_for(params.sigma, t, 1e-4))
    scale = max(1.0, float(pil[:, 0].mean()))
    target = params.target_stderr
    if target is None:
        target = max(_stderr(pil[:, 0]) * math.sqrt(n_p / params.n_paths),
                     ARITH_FLOOR * scale)
    T = params.T_max if params.T_max is not None else horizon_for(params.sigma, t,
                                                                  0.05 * target / scale)
    e, exit_p = _fk_samples(params, seed, t, starts, T)
    v = e[:, 0]
    mean = float(v.mean())
    bias = tail_bias_bound(params.sigma, t, T, mean)
    _check_bias(bias, target, T)
    return MCEstimate(mean, _stderr(v), bias, params.n_paths, T, exit_p)


@dataclass(frozen=True)
class LambdaEstimate:
    t: float
    x: float
    value: float
    stderr: float
    psi: float
    psi_stderr: float
    m_range: tuple
    m_tail_bound: float
    bias_bound: float


def _log_cosh2(y):
    a = abs(0.5 * y)
    return a + math.log1p(math.exp(-2 * a)) - math.log(2.0)


def _period_terms(params, t, x):
    """(top, [(m, relative weight, d/dx log weight)]) over |m| <= m_trunc; the weight is the
    analytic part e^{2 pi m s/kappa} e^{-y^2/(2 kappa t)} (pi/t)^.. cosh_2^{2 tau/kappa}."""
    k, tau, s = params.kappa, params.tau, params.s
    rows = []
    for m in range(-params.m_trunc, params.m_trunc + 1):
        y = x - 2 * math.pi * m
        yh = math.pi * y / t
        lw = 2 * math.pi * m * s / k - y * y / (2 * k * t) + (2 * tau / k) * _log_cosh2(yh)
        dl = -y / (k * t) + (tau * math.pi / (k * t)) * math.tanh(0.5 * yh)
        rows.append((m, lw, dl))
    top = max(r[1] for r in rows)
    return top, [(m, math.exp(lw - top), dl) for m, lw, dl in rows if lw - top > -46.0]


def m_tail_bound(params, t, x):
    """Bound on the omitted |m| > m_trunc terms relative to the m = 0 Gaussian factor, from
    e^{-y^2/(2 kappa t) + 2 pi |y|/(kappa t)}."""
    k = params.kappa
    tot = 0.0
    for sgn in (1, -1):
        m = params.m_trunc + 1
        while True:
            y = x - 2 * math.pi * sgn * m
            term = math.exp(2 * math.pi * sgn * m * params.s / k - y * y / (2 * k * t)
                            + 2 * math.pi * abs(y) / (k * t) + x * x / (2 * k * t))
            tot += term
            if term < 1e-30 * max(tot, 1e-300) or m > params.m_trunc + 10_000:
                break
            m += 1
    return tot


def _prefactor_log(params, t):
    k, sig, tau = params.kappa, params.sigma, params.tau
    t_hat = math.pi ** 2 / t
    return (sig + 0.5) * math.log(math.pi / t) - tau * tau * t_hat / (2 * k)


class _Layout:
    """Start points of the diffusion for a set of x values: each kept period term m
    contributes y^ = pi (x - 2 m pi)/t and the stencil points y^ +- h^ (and y^ +- 2h^ for
    the fourth-order difference)."""

    def __init__(self, params, t, xs, terms, order=2):
        hh = math.pi * H_X / t
        offs = [0.0, hh, -hh] if order == 2 else [0.0, hh, -hh, 2 * hh, -2 * hh]
        self.order = order
        self.t = t
        self.xs = xs
        self.tops = []
        self.rows = []
        starts = []
        for x, (top, kept) in zip(xs, terms):
            rows = []
            for m, w, dl in kept:
                yh = math.pi * (x - 2 * math.pi * m) / t
                rows.append((m, w, dl, len(starts)))
                starts.extend(yh + o for o in offs)
            self.tops.append(top)
            self.rows.append(rows)
        self.starts = np.array(starts)

    def reduce_into(self, A, B, B2=None):
        """Reducer writing a = sum w E and b = sum w (dl E + dE/dx) per path and x; with
        ``B2`` (fourth-order layouts) also b from the second-order difference.  Differences
        divide by the realized (rounded) stencil spacing."""
        st = self.starts
        x_per_yh = self.t / math.pi

        def f(lo, E):
            n = E.shape[0]
            for i, rows in enumerate(self.rows):
                a = np.zeros(n)
                b = np.zeros(n)
                b2 = np.zeros(n)
                for m, w, dl, j in rows:
                    h1 = (st[j + 1] - st[j + 2]) * x_per_yh
                    d1 = (E[:, j + 1] - E[:, j + 2]) / h1
                    a += w * E[:, j]
                    if self.order == 2:
                        b += w * (dl * E[:, j] + d1)
                    else:
                        h2 = (st[j + 3] - st[j + 4]) * x_per_yh
                        d2 = (E[:, j + 3] - E[:, j + 4]) / h2
                        b += w * (dl * E[:, j] + (4 * d1 - d2) / 3)
                        b2 += w * (dl * E[:, j] + d1)
                A[lo:lo + n, i] = a
                B[lo:lo + n, i] = b
                if B2 is not None:
                    B2[lo:lo + n, i] = b2
        return f


def _lambda_core(params, seed, t, xs, node_mean=False):
    """Per-path (a, b) sums for every x with the period cut, stencil and horizon set from
    the target stderr (of each value, or of their mean with ``node_mean``).

    Returns (layout, A, B, T, eps) with Lambda(x_i) = kappa mean(B_i)/mean(A_i) - H_I."""
    t = float(t)
    t_hat = math.pi ** 2 / t
    xs = [float(x) for x in xs]
    terms = [_period_terms(params, t, x) for x in xs]
    if params.sigma == 0:
        lay = _Layout(params, t, xs, terms)
        A = np.zeros((2, len(xs)))
        B = np.zeros((2, len(xs)))
        lay.reduce_into(A, B)(0, np.ones((2, lay.starts.size)))
        return lay, A, B, 0.0, 0.0
    k = params.kappa
    # pilot on a separate stream: predicts the stderr at n_paths and the truncation error
    # of the second-order difference (gap to the fourth-order one)
    n_p = min(PILOT_PATHS, params.n_paths)
    lay = _Layout(params, t, xs, terms, order=4)
    A, B, B2 = (np.empty((n_p, len(xs))) for _ in range(3))
    _fk_run(params, _pilot_seed(seed), t_hat, lay.starts, horizon_for(params.sigma, t_hat,
            1e-4), n_p, lay.reduce_into(A, B, B2))
    abar = A.mean(axis=0)
    ratio = B.mean(axis=0) / abar
    gap = k * (B.mean(axis=0) - B2.mean(axis=0)) / abar
    infl = k * (B - ratio * A) / abar
    if node_mean:
        # the node average cancels most of the noise and of the difference error
        fd_gap = abs(float(gap.mean()))
        se_pilot = _stderr(infl.mean(axis=1))
    else:
        fd_gap = float(np.max(np.abs(gap)))
        se_pilot = min(_stderr(infl[:, i]) for i in range(len(xs)))
    target = params.target_stderr
    if target is None:
        lam_scale = max(1.0, float(np.max(np.abs(k * ratio))))
        target = max(se_pilot * math.sqrt(n_p / params.n_paths), ARITH_FLOOR * lam_scale)
    order = 2 if fd_gap <= 0.1 * target else 4
    # a dropped term of relative weight w moves kappa Psi'/Psi by at most about
    # kappa w (|dl_m| + |dl_0| + 2 pi/t); keep those above 1% of the target
    cut_terms = []
    for top, kept in terms:
        dmax = max(abs(r[2]) for r in kept) + 2 * math.pi / t
        cut = 0.01 * target / (2 * k * dmax)
        cut_terms.append((top, [r for r in kept if r[1] >= cut]))
    lay = _Layout(params, t, xs, cut_terms, order=order)
    # the tail factor is within [1, 1 + eps] and varies on the y^ scale, so its effect on
    # Lambda is about 2 kappa eps pi/t
    lam_per_eps = 2 * k * math.pi / t
    if params.T_max is None:
        T = horizon_for(params.sigma, t_hat, 0.1 * target / lam_per_eps)
    else:
        T = params.T_max
    eps = math.expm1(params.sigma * tail_integral_bound(t_hat + T))
    _check_bias(eps * lam_per_eps, target, T)
    A = np.empty((params.n_paths, len(xs)))
    B = np.empty((params.n_paths, len(xs)))
    lay.exit_p = _fk_run(params, seed, t_hat, lay.starts, T, params.n_paths,
                         lay.reduce_into(A, B))
    return lay, A, B, T, eps


def lambda_s_grid(params, seed, t, xs):
    """Lambda_<s>(t, x) for every x in ``xs`` from one set of shared paths."""
    if not t > 0:
        raise ValueError("t must be positive")
    t = float(t)
    xs = [float(x) for x in np.atleast_1d(xs)]
    lay, A, B, T, eps = _lambda_core(params, seed, t, xs)
    pre = _prefactor_log(params, t)
    k = params.kappa
    out = []
    for i, x in enumerate(xs):
        a, b = A[:, i], B[:, i]
        abar = float(a.mean())
        ratio = float(b.mean()) / abar
        lam = k * ratio - specfun.eval_ha_I(t, x).value.real
        if params.sigma == 0:
            se = psi_se = 0.0
        else:
            se = k * _stderr((b - ratio * a) / abar)
            psi_se = _stderr(a)
        scale = math.exp(lay.tops[i] + pre)
        ms = [r[0] for r in lay.rows[i]]
        out.append(LambdaEstimate(t, x, lam, se, abar * scale, psi_se * scale,
                                  (min(ms), max(ms)), m_tail_bound(params, t, x),
                                  eps * 2 * k * math.pi / t))
    return out


def lambda_s(params, seed, t, x):
    """(Lambda_<s>(t, x), stderr)."""
    est = lambda_s_grid(params, seed, t, [x])[0]
    return est.value, est.stderr


def average_shift(params, seed, t, n_nodes=64):
    """(1/2pi) int_0^{2pi} Lambda_<s>(t, y) dy by the trapezoid rule on shared paths, with a
    stderr from the per-path influence of the node average combined with ARITH_FLOOR x the
    largest |kappa Psi'/Psi|."""
    t = float(t)
    xs = 2 * math.pi * np.arange(n_nodes) / n_nodes
    lay, A, B, T, eps = _lambda_core(params, seed, t, xs, node_mean=True)
    k = params.kappa
    abar = A.mean(axis=0)
    ratio = B.mean(axis=0) / abar
    hi = np.array([specfun.eval_ha_I(t, x).value.real for x in xs])
    total = float(np.mean(k * ratio - hi))
    if params.sigma == 0:
        return total, 0.0
    infl = (k * (B - ratio * A) / abar).mean(axis=1)
    # the node noise cancels below double-precision resolution, so the arithmetic floor
    # joins the Monte Carlo stderr
    floor = ARITH_FLOOR * max(1.0, float(np.max(np.abs(k * ratio))))
    return total, math.hypot(_stderr(infl), floor)


def dual_symmetry(params, seed, t, xs):
    """z-scores of -Lambda_<s>(t, -x) - Lambda_<-s>(t, x) over ``xs``; the two constructions
    agree exactly in law because Psi_0 is even."""
    neg = lambda_s_grid(params, seed, t, [-x for x in xs])
    other = lambda_s_grid(replace(params, s=-params.s), seed.child(seed.stream_id + 1), t, xs)
    z = []
    for a, b in zip(neg, other):
        se = math.hypot(a.stderr, b.stderr)
        diff = -a.value - b.value
        z.append(diff / se if se > 0 else (0.0 if abs(diff) < 1e-12 else math.inf))
    return np.array(z)


def normalization_constant(params, seed, t_star=12.0, n_x=16):
    """C = lim Psi(t, x) Theta_I(t, x)^{-2/kappa}, estimated at t_star averaged over x."""
    xs = 2 * math.pi * np.arange(n_x) / n_x
    ests = lambda_s_grid(params, seed, t_star, xs)
    vals = [e.psi * specfun.eval_theta(t_star, e.x, "Theta_I").value.real ** (-2 / params.kappa)
            for e in ests]
    ses = [e.psi_stderr * specfun.eval_theta(t_star, e.x, "Theta_I").value.real
           ** (-2 / params.kappa) for e in ests]
    return float(np.mean(vals)), float(np.mean(ses))


# ---------------------------------------------------------------------------
# drift functions
# ---------------------------------------------------------------------------

class DriftFunction:
    """Lambda(t, x) -> (value, stderr).  ``numba_spec`` feeds the compiled SDE loop."""

    source = "abstract"

    def eval(self, t, x):
        raise NotImplementedError

    def __call__(self, t, x):
        return self.eval(t, x)[0]


class ClosedFormDrift(DriftFunction):
    """kappa = 2: 2 t H_I''/(t H_I' + 1);  kappa = 3: 3 Gamma_4'/Gamma_4."""

    _CODES = {"k2_crossing": (_mc.D_K2, 2.0), "k3_crossing": (_mc.D_K3, 3.0)}

    def __init__(self, catalog_id):
        if catalog_id not in self._CODES:
            raise ValueError(f"no closed-form crossing drift {catalog_id!r}")
        self.catalog_id = catalog_id
        self.code, self.kappa = self._CODES[catalog_id]
        self.source = f"ClosedForm({catalog_id})"

    def eval(self, t, x):
        return float(_mc.drift_value(self.code, float(t), float(x), _EMPTY1, _EMPTY1,
                                     _EMPTY2)), 0.0

    def numba_spec(self):
        return self.code, _EMPTY1, _EMPTY1, _EMPTY2


_EMPTY1 = np.zeros(2)
_EMPTY2 = np.zeros((2, 2))


def closed_form_drift(kappa):
    if kappa == 2:
        return ClosedFormDrift("k2_crossing")
    if kappa == 3:
        return ClosedFormDrift("k3_crossing")
    raise ValueError("closed-form crossing drifts exist for kappa in {2, 3}")


class GridDrift(DriftFunction):
    """Monte Carlo drift tabulated on (log t, x) and interpolated by cubics in both.

    t is log-spaced over [t_lo, t_hi] and x has ``n_x`` points per period; each row shares
    one set of paths."""

    def __init__(self, params, seed, t_lo, t_hi, n_t=12, n_x=128):
        self.params = params
        self.seed = seed
        ts = np.exp(np.linspace(math.log(t_lo), math.log(t_hi), n_t))
        xs = 2 * math.pi * np.arange(n_x) / n_x
        self.tgrid = np.log(ts)
        self.xgrid = xs
        self.table = np.empty((n_t, n_x))
        self.stderr = np.empty((n_t, n_x))
        for i, t in enumerate(ts):
            est = lambda_s_grid(params, seed.child(seed.stream_id + i), float(t), xs)
            self.table[i] = [e.value for e in est]
            self.stderr[i] = [e.stderr for e in est]
        self.source = "FkMonteCarlo"

    def eval(self, t, x):
        v = float(_mc.grid_drift(float(t), float(x), self.tgrid, self.xgrid, self.table))
        se = float(_mc.grid_drift(float(t), float(x), self.tgrid, self.xgrid, self.stderr))
        return v, se

    def numba_spec(self):
        return _mc.D_GRID, self.tgrid, self.xgrid, self.table

    def probe_errors(self, rng, n_probe=20):
        """(interpolated - direct) / combined stderr at random (t, x) probes."""
        lo, hi = math.exp(self.tgrid[0]), math.exp(self.tgrid[-1])
        ts = np.exp(rng.uniform(math.log(lo), math.log(hi), n_probe))
        xs = rng.uniform(0, 2 * math.pi, n_probe)
        z = []
        for k, (t, x) in enumerate(zip(ts, xs)):
            v, se = self.eval(t, x)
            d, dse = lambda_s(self.params, self.seed.child(10_000 + k), float(t), float(x))
            z.append((v - d) / math.hypot(se, dse))
        return np.array(z)


class FkDrift(DriftFunction):
    """Direct per-point Monte Carlo evaluation (slow; for spot checks)."""

    def __init__(self, params, seed):
        self.params = params
        self.seed = seed
        self.source = "FkMonteCarlo"

    def eval(self, t, x):
        return lambda_s(self.params, self.seed, t, x)


# ---------------------------------------------------------------------------
# closed-form catalog
# ---------------------------------------------------------------------------

def _K(par, a, b, c, d, t, z, nx, nt):
    """d^nx/dz^nx d^nt/dt^nt of K(a t, b z + i c t + d), K = H (par 0) or H_I (par 1)."""
    T = a * t
    w = b * z + 1j * c * t + d
    ev = specfun.eval_ha if par == 0 else specfun.eval_ha_I
    if nt == 0:
        return b ** nx * ev(T, w, order=nx).value
    if nt == 1:
        return b ** nx * (a * ev(T, w, order=nx, dt_order=1).value
                          + 1j * c * ev(T, w, order=nx + 1).value)
    raise ValueError("nt must be 0 or 1")


def _Th(which, a, d, t, z, nx, nt):
    """Theta-type (which) evaluated at (a t, z + d)."""
    if nt == 0:
        return specfun.eval_theta(a * t, z + d, which, order=nx).value
    if nx == 0:
        return a * specfun.eval_theta(a * t, z + d, which, dt_order=1).value
    # heat equation: d_t Theta^{(n)} = Theta^{(n+2)}
    return a * specfun.eval_theta(a * t, z + d, which, order=nx + 2).value


def _lin(*terms):
    """Linear combination sum coef * K-term; each term is (coef, par, a, b, c, d)."""
    def f(t, z, nx, nt):
        return sum(co * _K(par, a, b, c, d, t, z, nx, nt) for co, par, a, b, c, d in terms)
    return f


def _t_times(par):
    # t K(t, z) + z
    def f(t, z, nx, nt):
        if nt == 0:
            base = t * _K(par, 1, 1, 0, 0, t, z, nx, 0)
            return base + (z if nx == 0 else (1.0 if nx == 1 else 0.0))
        return _K(par, 1, 1, 0, 0, t, z, nx, 0) + t * _K(par, 1, 1, 0, 0, t, z, nx, 1)
    return f


def _k2_gamma(t, z, nx, nt):
    # t H_I'(t, z) + 1
    if nt == 0:
        return t * _K(1, 1, 1, 0, 0, t, z, nx + 1, 0) + (1.0 if nx == 0 else 0.0)
    return _K(1, 1, 1, 0, 0, t, z, nx + 1, 0) + t * _K(1, 1, 1, 0, 0, t, z, nx + 1, 1)


def _shift(f):
    # g(t, z) = f(t, z + i t)
    def g(t, z, nx, nt):
        if nt == 0:
            return f(t, z + 1j * t, nx, 0)
        return f(t, z + 1j * t, nx, 1) + 1j * f(t, z + 1j * t, nx + 1, 0)
    return g


def _gauss(c):
    def f(t, z, nx, nt):
        u = z - c
        g = math.exp(-u * u / (8 * t)) / math.sqrt(8 * math.pi * t) if isinstance(u, float) \
            else np.exp(-u * u / (8 * t)) / np.sqrt(8 * np.pi * t)
        if nt == 1:
            if nx == 0:
                return g * (u * u / (8 * t * t) - 1 / (2 * t))
            raise ValueError("mixed derivatives not needed")
        a = -u / (4 * t)
        if nx == 0:
            return g
        if nx == 1:
            return g * a
        if nx == 2:
            return g * (a * a - 1 / (4 * t))
        return g * (a ** 3 - 3 * a / (4 * t))
    return f


def _expo(c):
    def f(t, z, nx, nt):
        return c ** nx * (2 * c * c) ** nt * np.exp(2 * c * c * t + c * z)
    return f


def _sin2(c):
    def f(t, z, nx, nt):
        base = np.exp(-t / 2) * (-0.5) ** nt
        u = (z - c) / 2
        vals = [np.sin(u), 0.5 * np.cos(u), -0.25 * np.sin(u), -0.125 * np.cos(u)]
        return base * vals[nx]
    return f


def _theta_heat(which, c):
    def f(t, z, nx, nt):
        return _Th(which, 2, -c, t, z, nx, nt)
    return f


def _k4_gamma(t, z, nx, nt):
    # Theta_I(2t, x - pi) Theta_I(t, x)^{-1/2}; only value / first derivatives are needed
    a = [_Th("Theta_I", 2, -math.pi, t, z, k, 0) for k in range(3)]
    b = [_Th("Theta_I", 1, 0.0, t, z, k, 0) for k in range(3)]
    if nt == 1:
        if nx:
            raise ValueError("mixed derivatives not needed")
        at = _Th("Theta_I", 2, -math.pi, t, z, 0, 1)
        bt = _Th("Theta_I", 1, 0.0, t, z, 0, 1)
        return at * b[0] ** -0.5 - 0.5 * a[0] * b[0] ** -1.5 * bt
    # log-derivative algebra for u = b^{-1/2}
    u0 = b[0] ** -0.5
    u1 = -0.5 * b[0] ** -1.5 * b[1]
    u2 = 0.75 * b[0] ** -2.5 * b[1] ** 2 - 0.5 * b[0] ** -1.5 * b[2]
    u = [u0, u1, u2]
    if nx == 0:
        return a[0] * u0
    if nx == 1:
        return a[1] * u0 + a[0] * u1
    if nx == 2:
        return a[2] * u0 + 2 * a[1] * u1 + a[0] * u2
    raise ValueError("order not available")


def _lambda_from_gamma(kappa, gam):
    """Lambda = kappa Gamma'/Gamma with derivatives up to 2 in x and 1 in t."""
    def f(t, z, nx, nt):
        g = [gam(t, z, k, 0) for k in range(4)]
        r = [g[1] / g[0], g[2] / g[0], g[3] / g[0]]
        if nt == 1:
            if nx:
                raise ValueError("mixed derivatives not needed")
            gt = gam(t, z, 0, 1)
            g1t = gam(t, z, 1, 1)
            return kappa * (g1t / g[0] - g[1] * gt / g[0] ** 2)
        if nx == 0:
            return kappa * r[0]
        if nx == 1:
            return kappa * (r[1] - r[0] ** 2)
        if nx == 2:
            return kappa * (r[2] - 3 * r[0] * r[1] + 2 * r[0] ** 3)
        raise ValueError("order not available")
    return f


# kappa = 3 and kappa = 2 families: Gamma_1 = H(2t,z) - H_I(2t,z), etc.
_G1 = _lin((1, 0, 2, 1, 0, 0), (-1, 1, 2, 1, 0, 0))
_G2 = _lin((0.5, 0, 0.5, 0.5, 0, 0), (-0.5, 0, 0.5, 0.5, 0, math.pi))
_G3 = _lin((0.5, 0, 1, 0.5, 0, 0), (-0.5, 1, 1, 0.5, 0, 0),
           (-0.5, 0, 1, 0.5, 0, math.pi), (0.5, 1, 1, 0.5, 0, math.pi))
_G_0 = _lin((1, 0, 1, 1, 0, 0), (-2, 0, 1, 0.5, 0, 0))
# H - 2 H_I(t, z/2); the factor 2 matches the residues -6 / 2 and the period 4 i t
_G_I0 = _lin((1, 0, 1, 1, 0, 0), (-2, 1, 1, 0.5, 0, 0))


def _scaled(c, f):
    return lambda t, z, nx, nt: c * f(t, z, nx, nt)


@dataclass(frozen=True)
class CatalogEntry:
    id: str
    kappa: float
    pde: str
    fn: Callable = field(repr=False)
    description: str = ""
    sigma: float | None = None
    real_poles: bool = False   # poles at x in 2 pi Z on the real line
    period: float = 2 * math.pi


PDES = ("CrossingLambda", "ChordalLambda", "GammaCrossing", "GammaChordal", "GammaDecomp",
        "PsiHeat", "PsiStar", "XiCrossing", "XiChordal", "GammaWithC_Crossing",
        "GammaWithC_Chordal", "Heat")

_ENTRIES = [
    CatalogEntry("k2_gamma", 2, "GammaDecomp", _k2_gamma, "t H_I'(t,x) + 1"),
    CatalogEntry("k2_lambda", 2, "CrossingLambda", _lambda_from_gamma(2, _k2_gamma),
                 "2 Gamma'/Gamma with Gamma = t H_I' + 1"),
    CatalogEntry("k2_xi1", 2, "XiCrossing", _lin((1, 1, 1, 1, 0, 0)), "H_I"),
    CatalogEntry("k2_xi2", 2, "XiChordal", _lin((1, 0, 1, 1, 0, 0)), "H", real_poles=True),
    CatalogEntry("k2_xi3", 2, "XiCrossing", _t_times(1), "t H_I(t,x) + x"),
    CatalogEntry("k2_xi4", 2, "XiChordal", _t_times(0), "t H(t,x) + x", real_poles=True),
    CatalogEntry("k2_gamma1", 2, "XiChordal", _G1, "H(2t,z) - H_I(2t,z)", real_poles=True),
    CatalogEntry("k2_gamma2", 2, "XiChordal", _G2, "(H(t/2,z/2) - H(t/2,z/2+pi))/2",
                 real_poles=True, period=4 * math.pi),
    CatalogEntry("k2_gamma3", 2, "XiChordal", _G3, "alternating H, H_I combination at z/2",
                 real_poles=True, period=4 * math.pi),
    CatalogEntry("k4_gauss", 4, "PsiHeat", _gauss(0.7), "(8 pi t)^{-1/2} e^{-(x-c)^2/(8t)}"),
    CatalogEntry("k4_exp", 4, "PsiHeat", _expo(0.3), "e^{2c^2 t + c x}"),
    CatalogEntry("k4_sin", 4, "PsiHeat", _sin2(0.4), "e^{-t/2} sin_2(x - c)",
                 period=4 * math.pi),
    CatalogEntry("k4_theta", 4, "PsiHeat", _theta_heat("Theta", 0.5), "Theta(2t, x - c)",
                 period=4 * math.pi),
    CatalogEntry("k4_theta_I", 4, "PsiHeat", _theta_heat("Theta_I", 0.5), "Theta_I(2t, x - c)",
                 period=4 * math.pi),
    CatalogEntry("k4_gamma", 4, "GammaCrossing", _k4_gamma,
                 "Theta_I(2t, x - pi) Theta_I(t, x)^{-1/2}"),
    CatalogEntry("k3_gamma1", 3, "GammaWithC_Chordal", _G1, "H(2t,z) - H_I(2t,z)",
                 real_poles=True),
    CatalogEntry("k3_gamma2", 3, "GammaWithC_Chordal", _G2, "(H(t/2,z/2) - H(t/2,z/2+pi))/2",
                 real_poles=True, period=4 * math.pi),
    CatalogEntry("k3_gamma3", 3, "GammaWithC_Chordal", _G3,
                 "alternating H, H_I combination at z/2", real_poles=True, period=4 * math.pi),
    CatalogEntry("k3_gamma4", 3, "GammaWithC_Crossing", _shift(_G1), "Gamma_1(t, z + i t)"),
    CatalogEntry("k3_gamma5", 3, "GammaWithC_Crossing", _shift(_G2), "Gamma_2(t, z + i t)",
                 period=4 * math.pi),
    CatalogEntry("k3_gamma6", 3, "GammaWithC_Crossing", _shift(_G3), "Gamma_3(t, z + i t)",
                 period=4 * math.pi),
    CatalogEntry("k3_lambda", 3, "CrossingLambda", _lambda_from_gamma(3, _shift(_G1)),
                 "3 Gamma_4'/Gamma_4"),
    CatalogEntry("k0_G", 0, "ChordalLambda", _G_0, "H - 2 H(t, z/2)", real_poles=True,
                 period=4 * math.pi),
    CatalogEntry("k0_G_I", 0, "ChordalLambda", _G_I0, "H - 2 H_I(t, z/2)", real_poles=True,
                 period=4 * math.pi),
    CatalogEntry("k163_F", 16 / 3, "ChordalLambda", _scaled(-1 / 3, _G_0), "-G/3",
                 real_poles=True, period=4 * math.pi),
    CatalogEntry("k163_F_I", 16 / 3, "ChordalLambda", _scaled(-1 / 3, _G_I0), "-G_I/3",
                 real_poles=True, period=4 * math.pi),
]
CATALOG = {e.id: e for e in _ENTRIES}


def catalog_eval(entry, t, z, order=0, dt_order=0):
    """Value (or derivative) of a catalog entry; real inputs on a real-valued entry give a
    real result."""
    if isinstance(entry, str):
        entry = CATALOG[entry]
    z = complex(z) if isinstance(z, complex) else float(z)
    if entry.real_poles and isinstance(z, float):
        r = abs(z - 2 * math.pi * round(z / (2 * math.pi)))
        if r < specfun.pole_eps(z):
            raise PoleProximity(f"x={z} is a pole of {entry.id}")
    try:
        v = complex(entry.fn(float(t), z, order, dt_order))
    except PoleProximity:
        raise
    return v


def _derivs(entry, t, x):
    return {"v": catalog_eval(entry, t, x), "x": catalog_eval(entry, t, x, 1),
            "xx": catalog_eval(entry, t, x, 2), "t": catalog_eval(entry, t, x, 0, 1)}


def _fd_derivs(f, t, x, h_t=1e-4, h_x=1e-4):
    """Richardson-extrapolated central differences of a black-box f(t, x)."""
    def cd(g, h):
        return (g(h) - g(-h)) / (2 * h)

    def cd2(g, h):
        return (g(h) - 2 * g(0.0) + g(-h)) / (h * h)

    def rich(op, g, h):
        return (4 * op(g, h / 2) - op(g, h)) / 3

    gx = lambda u: complex(f(t, x + u))  # noqa: E731
    gt = lambda u: complex(f(t + u, x))  # noqa: E731
    return {"v": complex(f(t, x)), "x": rich(cd, gx, h_x), "xx": rich(cd2, gx, h_x),
            "t": rich(cd, gt, h_t)}


def _coeff_kernel(chordal, t, x):
    par = 0 if chordal else 1
    return [_K(par, 1, 1, 0, 0, t, x, k, 0) for k in range(3)]


def residual_at(pde, kappa, d, t, x, sigma=None):
    """Raw residual, or J with the free-C form (the caller divides by the value)."""
    chordal = pde in ("ChordalLambda", "GammaChordal", "XiChordal", "GammaWithC_Chordal")
    if pde in ("PsiHeat",):
        return d["t"] - 2 * d["xx"]
    if pde == "Heat":
        return d["t"] - d["xx"]
    K = _coeff_kernel(chordal, t, x)
    if pde in ("CrossingLambda", "ChordalLambda"):
        k2 = _K(0 if chordal else 1, 1, 1, 0, 0, t, x, 2, 0)
        L, L1, L2 = d["v"], d["x"], d["xx"]
        return d["t"] - (kappa / 2 * L2 + (3 - kappa / 2) * k2 + L * K[1] + K[0] * L1 + L * L1)
    if pde in ("GammaCrossing", "GammaChordal", "GammaWithC_Crossing", "GammaWithC_Chordal"):
        return d["t"] - (kappa / 2 * d["xx"] + K[0] * d["x"] + (3 / kappa - 0.5) * K[1] * d["v"])
    if pde == "GammaDecomp":
        return d["t"] - (kappa / 2 * d["xx"] + K[0] * d["x"] + K[1] * d["v"])
    if pde == "PsiStar":
        return d["t"] - (kappa / 2 * d["xx"] + sigma * K[1] * d["v"])
    if pde in ("XiCrossing", "XiChordal"):
        return d["t"] - (d["xx"] + d["x"] * K[0])
    raise ValueError(f"unknown pde {pde!r}")


FREE_C = ("GammaWithC_Crossing", "GammaWithC_Chordal", "XiCrossing", "XiChordal")


@dataclass
class ResidualReport:
    id: str
    pde: str
    max_residual: float
    n_points: int
    n_skipped: int
    constancy_form: bool


def default_grid(entry, t_values=(1.0, 1.5, 2.0, 2.5, 3.0), n_x=24, margin=0.1):
    """(t, x) points with x spread over one period of the entry, kept ``margin`` away from
    the real poles at 2 pi Z."""
    period = entry.period if isinstance(entry, CatalogEntry) else 2 * math.pi
    xs = np.linspace(0, period, n_x + 1)[:-1] + period / (2 * n_x) + 0.0137
    pts = []
    for t in t_values:
        for x in xs:
            pts.append((float(t), float(x)))
    return pts, margin


def pde_residual(entry_or_drift, pde_id=None, grid=None, fd_steps=None, kappa=None,
                 sigma=None, margin=0.1):
    """Maximum residual of a catalog entry (analytic derivatives) or of a black-box
    f(t, x) (Richardson differences) on a pole-avoiding grid.

    For PDEs with a free C(t) the report holds max_x |J/Gamma - mean_x J/Gamma| per t,
    maximised over t."""
    is_entry = isinstance(entry_or_drift, (CatalogEntry, str))
    entry = CATALOG[entry_or_drift] if isinstance(entry_or_drift, str) else entry_or_drift
    pde = pde_id or (entry.pde if is_entry else None)
    if pde is None:
        raise ValueError("pde_id is required for black-box functions")
    kap = kappa if kappa is not None else (entry.kappa if is_entry else None)
    if kap is None:
        raise ValueError("kappa is required for black-box functions")
    if grid is None:
        grid, margin = default_grid(entry if is_entry else None)
    rows = {}
    skipped = 0
    for t, x in grid:
        r = abs(x - 2 * math.pi * round(x / (2 * math.pi)))
        if r < margin and (not is_entry or entry.real_poles):
            skipped += 1
            continue
        try:
            if is_entry:
                d = _derivs(entry, t, x)
            else:
                hs = fd_steps or (1e-4, 1e-4)
                d = _fd_derivs(entry_or_drift, t, x, hs[0], hs[1])
            res = residual_at(pde, kap, d, t, x, sigma)
        except PoleProximity:
            skipped += 1
            continue
        rows.setdefault(t, []).append((res, d["v"]))
    worst = 0.0
    constancy = pde in FREE_C
    for t, vals in rows.items():
        if constancy:
            ratios = np.array([r / v for r, v in vals if abs(v) > 1e-8])
            worst = max(worst, float(np.max(np.abs(ratios - ratios.mean()))))
        else:
            worst = max(worst, max(abs(r) for r, _ in vals))
    name = entry.id if is_entry else getattr(entry_or_drift, "__name__", "function")
    return ResidualReport(name, pde, worst, sum(len(v) for v in rows.values()), skipped,
                          constancy)


def transform_consistency(t, x, kappa=2.0):
    """|kappa Psi'/Psi - H_I - kappa Gamma'/Gamma| for Psi = Gamma Theta_I^{2/kappa} and the
    kappa = 2 closed form Gamma = t H_I' + 1."""
    g0 = catalog_eval("k2_gamma", t, x).real
    g1 = catalog_eval("k2_gamma", t, x, 1).real
    th0 = specfun.eval_theta(t, x, "Theta_I").value.real
    th1 = specfun.eval_theta(t, x, "Theta_I", order=1).value.real
    psi = g0 * th0 ** (2 / kappa)
    dpsi = g1 * th0 ** (2 / kappa) + g0 * (2 / kappa) * th0 ** (2 / kappa - 1) * th1
    lhs = kappa * dpsi / psi - specfun.eval_ha_I(t, x).value.real
    return abs(lhs - kappa * g1 / g0)


def endpoint_density(p, x):
    """Gamma(p, x)/(2 pi) with Gamma = p H_I'(p, x) + 1 (kappa = 2)."""
    return (p * specfun.eval_ha_I(p, x, order=1).value.real + 1) / (2 * math.pi)
