"""Desk-scale experiments: reversibility, endpoint decomposition and martingale unity, plus the
two statistical tests they rely on.

Sample i of an experiment uses the random stream (family << 32) | i, so every sample can be
regenerated on its own and the order of evaluation never matters.
"""

from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
import math
import os

import numpy as np
from scipy import interpolate as sp_interpolate
from scipy import stats

from . import _kern, drift, sle, specfun
from .errors import EmptyInput, InsufficientSamples, SleLabError
from .loewner import LoewnerFlow, LoewnerVariant, SolverConfig, Variant
from .stochastic import RngSeed

MIN_USABLE = 100
OBSERVABLES = ("MidCircleArg", "EndpointArg", "WindingAtMid")

# stream families
F_FORWARD = 1
F_REVERSED = 2
F_CONTROL = 3
F_ENDPOINT = 4
F_MARTINGALE = 5
F_DRIFT = 6


# ---------------------------------------------------------------------------
# statistics
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TwoSampleReport:
    statistic: float
    p_value: float
    n1: int
    n2: int
    observable_name: str = ""


@dataclass(frozen=True)
class GofReport:
    statistic: float
    p_value: float
    dof: int
    counts: tuple
    expected: tuple


def ks_two_sample(a, b, observable_name=""):
    """Two-sample Kolmogorov-Smirnov test with the asymptotic p-value."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.size == 0 or b.size == 0:
        raise EmptyInput("both samples must be non-empty")
    r = stats.ks_2samp(a, b, method="asymp")
    return TwoSampleReport(float(r.statistic), float(min(1.0, max(0.0, r.pvalue))), a.size,
                           b.size, observable_name)


def chi2_gof(counts, expected):
    """Pearson chi-square of observed counts against expected counts (rescaled to the same
    total), dof = bins - 1."""
    c = np.asarray(counts, dtype=float)
    e = np.asarray(expected, dtype=float)
    if c.size == 0 or e.size == 0:
        raise EmptyInput("counts and expected must be non-empty")
    if c.shape != e.shape:
        raise ValueError("counts and expected must have the same length")
    e = e * (c.sum() / e.sum())
    stat = float(np.sum((c - e) ** 2 / e))
    dof = c.size - 1
    p = float(stats.chi2.sf(stat, dof)) if dof > 0 else 1.0
    return GofReport(stat, p, dof, tuple(int(x) for x in c), tuple(float(x) for x in e))


# ---------------------------------------------------------------------------
# configuration and plumbing
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ExperimentConfig:
    kappa: float = 2.0
    s: float = 0.0
    p: float = 1.0
    n_samples: int = 500
    seed: int = 0
    dt: float = 1e-3
    delta_stop: float | None = None
    observable: str = "MidCircleArg"
    n_trace: int = 128
    n_bins: int = 16
    n_nodes: int = 64
    t_eval: float | None = None
    control_kappa: float = 3.0
    workers: int | None = None

    def __post_init__(self):
        if not self.kappa > 0 or not self.p > 0 or not self.dt > 0:
            raise ValueError("kappa, p and dt must be positive")
        if self.n_samples < 0:
            raise ValueError("n_samples must be non-negative")
        if self.observable not in OBSERVABLES:
            raise ValueError(f"observable must be one of {OBSERVABLES}")
        if self.delta_stop is not None and not 0 < self.delta_stop < self.p:
            raise ValueError("delta_stop must lie in (0, p)")

    @property
    def stop(self):
        return self.delta_stop if self.delta_stop is not None else self.p / 100

    def to_dict(self):
        return asdict(self)


@dataclass
class ExperimentResult:
    kind: str
    config: ExperimentConfig
    report: object
    raw: dict
    extra: dict = field(default_factory=dict)

    @property
    def passed(self):
        return bool(self.extra.get("pass", False))


def _workers(cfg):
    if cfg.workers is not None:
        return max(1, int(cfg.workers))
    return max(1, int(os.environ.get("SLE_LAB_THREADS", "1")))


def _map(fn, args, workers):
    if workers <= 1:
        return [fn(a) for a in args]
    with ProcessPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(fn, args, chunksize=max(1, len(args) // (4 * workers))))


def _stream(cfg, family, i):
    return RngSeed(int(cfg.seed), (family << 32) | int(i))


# ---------------------------------------------------------------------------
# drift for the marked processes
# ---------------------------------------------------------------------------

def crossing_drift(kappa, s, p, delta_stop, seed=0, n_paths=2000):
    """Lambda_<s> for the reversibility experiment: closed forms for s = 0 and kappa in {2, 3},
    a Monte Carlo table on (log t, x) over [delta_stop, p] otherwise."""
    if s == 0 and kappa in (2.0, 3.0):
        return drift.closed_form_drift(kappa)
    params = drift.FkParams.reversibility(kappa, s=s, n_paths=n_paths)
    return drift.GridDrift(params, RngSeed(int(seed), F_DRIFT << 32), delta_stop, p)


# ---------------------------------------------------------------------------
# reversibility
# ---------------------------------------------------------------------------

def _wrap(a):
    return (a + math.pi) % (2 * math.pi) - math.pi


def _crossing(flow, times, cov, level, which, iters=12):
    """Covering trace point where Im crosses ``level`` for the first or last time, refined by
    bisection in t between the bracketing trace times."""
    im = cov.imag
    if which == "first":
        idx = np.nonzero(im >= level)[0]
        if idx.size == 0:
            return None
        i = int(idx[0])
        if i == 0:
            return complex(cov[0])
        lo, hi, zlo, zhi = times[i - 1], times[i], cov[i - 1], cov[i]
    else:
        idx = np.nonzero(im < level)[0]
        if idx.size == 0:
            return complex(cov[0])
        i = int(idx[-1])
        if i == im.size - 1:
            return None
        lo, hi, zlo, zhi = times[i], times[i + 1], cov[i], cov[i + 1]
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        zm = complex(flow.extract_trace([mid]).points[0])
        below = zm.imag < level
        # first crossing: keep the earliest bracket with lo below; last: keep the latest
        if below:
            lo, zlo = mid, zm
        else:
            hi, zhi = mid, zm
    f = (level - zlo.imag) / (zhi.imag - zlo.imag) if zhi.imag != zlo.imag else 0.5
    return zlo + f * (zhi - zlo)


def _mid_observable(task):
    cfg, lam, kappa, family, i, which = task
    spec = sle.SleSpec(sle.AnnulusMarked(cfg.p, lam), kappa, cfg.dt, _stream(cfg, family, i),
                       t_horizon=cfg.p - cfg.stop, n_trace=cfg.n_trace)
    try:
        smp = sle.sample(spec)
    except (SleLabError, ArithmeticError):
        return None
    if smp.aborted is not None or smp.covering is None:
        return None
    flow = LoewnerFlow(LoewnerVariant(Variant.CoveringAnnulus, cfg.p), smp.driving,
                       spec.solver_cfg)
    if cfg.observable == "EndpointArg":
        return _wrap(float(smp.covering[-1].real))
    try:
        z = _crossing(flow, smp.trace.times, smp.covering, cfg.p / 2, which)
    except (SleLabError, ArithmeticError):
        return None
    if z is None:
        return None
    if cfg.observable == "WindingAtMid":
        # I_p lifts to z -> conj(z) + ip, which keeps real parts, so the reversed curve's
        # winding from its own start is measured from the covering end point
        ref = 0.0 if which == "first" else float(smp.covering[-1].real)
        return float(z.real) - ref
    a = _wrap(float(z.real))
    # with s = 0 the law is symmetric under reflection in the chord, so only the unsigned
    # angle carries information; folding doubles the power against spread differences
    return abs(a) if cfg.s == 0 else a


def _observables(cfg, lam, kappa, family, which, n):
    tasks = [(cfg, lam, kappa, family, i, which) for i in range(n)]
    vals = _map(_mid_observable, tasks, _workers(cfg))
    return np.array([v for v in vals if v is not None])


def reversibility_experiment(cfg, control=True):
    """Forward traces of annulus SLE(kappa, Lambda_<s>) from 1 to e^{-p} against the same law in
    the reversed role.

    The inversion I_p(z) = e^{-p}/conj(z) swaps the circles, fixes the mid circle T_{p/2}
    pointwise and preserves arguments.  The reversal of a trace, mapped by I_p, runs from 1 to
    e^{-p}; its first mid-circle crossing is the last crossing of the original.  So the
    forward set records first crossings and the reversed-role set (independent streams)
    records last crossings; under reversibility the two laws agree.  Arguments are taken
    relative to the chord through 1 and e^{-p} and wrapped to (-pi, pi]; for s = 0 the
    unsigned angle is used.

    With ``control`` the forward observable is also compared with a forward kappa = 3 set
    (closed-form drift); that test must reject."""
    if not 0 < cfg.kappa <= 4:
        raise ValueError("reversibility needs kappa in (0, 4]")
    if cfg.n_samples == 0:
        raise InsufficientSamples("no samples requested")
    lam = crossing_drift(cfg.kappa, cfg.s, cfg.p, cfg.stop, cfg.seed)
    a = _observables(cfg, lam, cfg.kappa, F_FORWARD, "first", cfg.n_samples)
    b = _observables(cfg, lam, cfg.kappa, F_REVERSED, "last", cfg.n_samples)
    for arr in (a, b):
        if arr.size < MIN_USABLE:
            raise InsufficientSamples(f"only {arr.size} usable traces (need {MIN_USABLE})")
    rep = ks_two_sample(a, b, cfg.observable)
    raw = {"forward": a, "reversed": b}
    extra = {"pass": rep.p_value > 0.01}
    if control:
        lam_c = crossing_drift(cfg.control_kappa, 0.0, cfg.p, cfg.stop, cfg.seed)
        c = _observables(cfg, lam_c, cfg.control_kappa, F_CONTROL, "first", cfg.n_samples)
        if c.size < MIN_USABLE:
            raise InsufficientSamples(f"only {c.size} usable control traces")
        ctl = ks_two_sample(a, c, cfg.observable)
        raw["control"] = c
        extra["control"] = ctl
        extra["control_pass"] = ctl.p_value < 0.01
    return ExperimentResult("reversibility", cfg, rep, raw, extra)


# ---------------------------------------------------------------------------
# endpoint decomposition
# ---------------------------------------------------------------------------

class GammaFunction:
    """Endpoint density factor Gamma(t, x): t H_I'(t, x) + 1 for kappa = 2, otherwise
    Psi_<0> Theta_I^{-2/kappa} / C with sigma = 1/2 + 1/kappa from the Feynman-Kac estimate,
    tabulated in x per requested t and interpolated by a periodic cubic spline."""

    def __init__(self, kappa, seed=0, n_paths=4000, n_x=64):
        if not 0 < kappa < 6:
            raise ValueError("the decomposition needs kappa in (0, 6)")
        self.kappa = float(kappa)
        self.seed = int(seed)
        self.n_paths = n_paths
        self.n_x = n_x
        self._tables = {}
        self._c = None

    @property
    def closed_form(self):
        return self.kappa == 2.0

    def _params(self):
        return drift.FkParams.decomposition(self.kappa, n_paths=self.n_paths)

    def _spline(self, t):
        key = float(t)
        if key not in self._tables:
            if self._c is None:
                self._c, _ = drift.normalization_constant(
                    self._params(), RngSeed(self.seed, (F_DRIFT << 32) | 1))
            xs = 2 * math.pi * np.arange(self.n_x + 1) / self.n_x
            ests = drift.lambda_s_grid(self._params(), RngSeed(self.seed, (F_DRIFT << 32) | 2),
                                       key, xs[:-1])
            vals = [e.psi * specfun.eval_theta(key, e.x, "Theta_I").value.real
                    ** (-2 / self.kappa) / self._c for e in ests]
            vals.append(vals[0])
            self._tables[key] = sp_interpolate.CubicSpline(xs, vals, bc_type="periodic")
        return self._tables[key]

    def __call__(self, t, x):
        x = np.asarray(x, dtype=float)
        if self.closed_form:
            flat = np.atleast_1d(x)
            out = np.array([t * _kern.kernel_fast(1, float(t), complex(v, 0.0), 1).real + 1.0
                            for v in flat])
            return out.reshape(x.shape) if x.ndim else float(out[0])
        return self._spline(t)(np.mod(x, 2 * math.pi))

    def bin_masses(self, p, n_bins):
        """(1/2pi) int over each of n_bins equal arcs of [0, 2 pi)."""
        edges = 2 * math.pi * np.arange(n_bins + 1) / n_bins
        if self.closed_form:
            # antiderivative of p H_I' + 1 is p H_I + x
            hi = np.array([specfun.eval_ha_I(p, e).value.real for e in edges])
            return (np.diff(edges) + p * np.diff(hi)) / (2 * math.pi)
        sp = self._spline(p)
        return np.array([sp.integrate(a, b) for a, b in zip(edges[:-1], edges[1:])]) / (
            2 * math.pi)


def _endpoint_arg(task):
    cfg, i, stop = task
    spec = sle.SleSpec(sle.AnnulusPlain(cfg.p), cfg.kappa, cfg.dt,
                       _stream(cfg, F_ENDPOINT, i), t_horizon=cfg.p - stop, n_trace=1)
    try:
        smp = sle.sample(spec)
        ep = sle.endpoint(smp)
    except (SleLabError, ArithmeticError):
        return None
    return ep.arg % (2 * math.pi)


def endpoint_args(cfg, stop=None):
    stop = cfg.stop if stop is None else stop
    vals = _map(_endpoint_arg, [(cfg, i, stop) for i in range(cfg.n_samples)], _workers(cfg))
    return np.array([v for v in vals if v is not None])


def endpoint_decomposition_experiment(cfg, refine=True, gamma=None):
    """Plain annulus SLE_kappa endpoint arguments binned on [0, 2 pi) and tested against the
    bin masses of Gamma(p, x)/2 pi.  With ``refine`` the run is repeated with delta_stop halved
    on the same streams."""
    if not 0 < cfg.kappa < 6:
        raise ValueError("the decomposition needs kappa in (0, 6)")
    if cfg.n_samples == 0:
        raise InsufficientSamples("no samples requested")
    gamma = gamma or GammaFunction(cfg.kappa, cfg.seed)
    masses = gamma.bin_masses(cfg.p, cfg.n_bins)
    edges = 2 * math.pi * np.arange(cfg.n_bins + 1) / cfg.n_bins

    def run(stop):
        args = endpoint_args(cfg, stop)
        if args.size < MIN_USABLE:
            raise InsufficientSamples(f"only {args.size} usable traces (need {MIN_USABLE})")
        counts, _ = np.histogram(args, bins=edges)
        return args, chi2_gof(counts, masses * args.size)

    args, rep = run(cfg.stop)
    raw = {"endpoint_arg": args}
    extra = {"bin_masses": masses, "pass": rep.p_value > 0.01}
    if refine:
        args2, rep2 = run(cfg.stop / 2)
        raw["endpoint_arg_refined"] = args2
        extra["refined"] = rep2
        extra["pass"] = extra["pass"] and rep2.p_value > 0.01
    return ExperimentResult("endpoint", cfg, rep, raw, extra)


# ---------------------------------------------------------------------------
# martingale unity
# ---------------------------------------------------------------------------

def _martingale_sample(task):
    cfg, i, gamma_t, gamma_0 = task
    t = cfg.t_eval if cfg.t_eval is not None else cfg.p / 2
    n = int(round(t / cfg.dt))
    g = _stream(cfg, F_MARTINGALE, i).generator()
    xi = np.concatenate([[0.0], np.cumsum(g.standard_normal(n))
                         * math.sqrt(cfg.kappa * cfg.dt)])
    nodes = 2 * math.pi * np.arange(cfg.n_nodes) / cfg.n_nodes
    scfg = SolverConfig()
    qs = np.empty(cfg.n_nodes)
    ds = np.empty(cfg.n_nodes)
    for j, x in enumerate(nodes):
        # top-line points x + ip follow q' = H_I(p - t, q - xi); their derivative is real
        z, lg, st, tr = _kern.flow(_kern.K_INV_COV_ANNULUS, cfg.p, 0.0, cfg.dt, xi, 0.0, t,
                                   complex(x, 0.0), 0j, True, scfg.rel_tol, scfg.abs_tol,
                                   scfg.pole_safety_factor, scfg.eps_pole, scfg.min_step)
        if st != _kern.ST_OK:
            return None
        qs[j] = z.real
        ds[j] = math.exp(lg.real)
    m = gamma_t(qs - xi[-1]) * ds
    # single-node increment M_{0+ip}(t) - M_{0+ip}(0) for the local-martingale check
    return float(np.mean(m)), float(m[0] - gamma_0(np.array([0.0]))[0])


class _GammaAt:
    # picklable Gamma(tau, .) for worker processes
    def __init__(self, gamma, tau):
        self.tau = float(tau)
        self.closed = gamma.closed_form
        self.spline = None if self.closed else gamma._spline(self.tau)

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        if self.closed:
            return np.array([self.tau * _kern.kernel_fast(1, self.tau, complex(v, 0.0), 1).real
                             + 1.0 for v in x])
        return self.spline(np.mod(x, 2 * math.pi))


def martingale_unity_experiment(cfg, gamma=None):
    """(1/2pi) int M_{x+pi}(t) dx at t = t_eval (default p/2) for plain annulus SLE_kappa
    drivings, M = Gamma(p - t, Re g~(t, x + ip) - xi(t)) g~'(t, x + ip), averaged by the
    trapezoid rule over ``n_nodes`` nodes; the sample mean must be 1 within 3 stderr.  Also
    reports the mean of M(t) - M(0) at the node x = 0."""
    if not 0 < cfg.kappa < 6:
        raise ValueError("the martingale needs kappa in (0, 6)")
    if cfg.n_samples == 0:
        raise InsufficientSamples("no samples requested")
    t = cfg.t_eval if cfg.t_eval is not None else cfg.p / 2
    if not 0 < t < cfg.p:
        raise ValueError("t_eval must lie in (0, p)")
    gamma = gamma or GammaFunction(cfg.kappa, cfg.seed)
    g_t = _GammaAt(gamma, cfg.p - t)
    g_0 = _GammaAt(gamma, cfg.p)
    vals = _map(_martingale_sample, [(cfg, i, g_t, g_0) for i in range(cfg.n_samples)],
                _workers(cfg))
    vals = [v for v in vals if v is not None]
    if len(vals) < MIN_USABLE:
        raise InsufficientSamples(f"only {len(vals)} usable samples (need {MIN_USABLE})")
    avg = np.array([v[0] for v in vals])
    inc = np.array([v[1] for v in vals])
    mean = float(avg.mean())
    se = float(avg.std(ddof=1) / math.sqrt(avg.size))
    inc_mean = float(inc.mean())
    inc_se = float(inc.std(ddof=1) / math.sqrt(inc.size))
    nodes = 2 * math.pi * np.arange(cfg.n_nodes) / cfg.n_nodes
    at_zero = float(np.mean(g_0(nodes)))
    report = {"mean": mean, "stderr": se, "z": (mean - 1.0) / se if se > 0 else 0.0,
              "n": int(avg.size), "t": t, "average_at_t0": at_zero,
              "node_increment_mean": inc_mean, "node_increment_stderr": inc_se}
    extra = {"pass": abs(mean - 1.0) <= 3 * se and abs(at_zero - 1.0) < 1e-12,
             "node_pass": abs(inc_mean) <= 3 * inc_se}
    return ExperimentResult("martingale", cfg, report, {"average": avg, "node_increment": inc},
                            extra)
