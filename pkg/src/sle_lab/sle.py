"""Sampling of SLE driving functions and traces.

Kinds:

    AnnulusPlain(p)                annulus SLE_kappa in A_p = {e^{-p} < |z| < 1}, xi = x0 + sqrt(kappa) B
    AnnulusMarked(p, lam, x0, y0)  annulus SLE(kappa, lam) from e^{i x0} with marked point e^{-p + i y0}
    DiscMarked(lam, y0)            disc SLE(kappa, lam) from 0 with marked point e^{i y0}
    Radial(s)                      radial SLE(kappa, s) from 1 to 0, xi = sqrt(kappa) B + s t
    WholePlane(s)                  whole-plane SLE(kappa, s) from 0 to infinity

Annulus traces come from the covering annulus flow (strip 0 < Im z < p - t) and are mapped down
by e^{iz}; the covering points are kept as well since their real parts carry the winding.
"""

from dataclasses import dataclass, field
import enum
import math

import numpy as np

from . import _mc, loewner, stochastic
from .errors import NotConverged
from .loewner import DrivingPath, LoewnerFlow, LoewnerVariant, SolverConfig, Trace, Variant
from .stochastic import DRIFT_BLOWUP, RngSeed


@dataclass(frozen=True)
class AnnulusPlain:
    p: float
    x0: float = 0.0


@dataclass(frozen=True)
class AnnulusMarked:
    p: float
    lam: object
    x0: float = 0.0
    y0: float = 0.0


@dataclass(frozen=True)
class DiscMarked:
    lam: object
    y0: float = 0.0
    t_start: float = -8.0


@dataclass(frozen=True)
class Radial:
    s: float = 0.0


@dataclass(frozen=True)
class WholePlane:
    s: float = 0.0
    t_start: float = -8.0


_ANNULUS = (AnnulusPlain, AnnulusMarked)


@dataclass(frozen=True)
class SleSpec:
    """``t_horizon`` defaults to p - p/100 (annulus), -0.01 (disc) and 1 (radial and
    whole-plane).  ``n_trace`` trace points are extracted on an even time grid ending at
    the horizon; ``trace_times`` overrides the grid.  ``tip_offset_eps`` defaults to
    0.1 sqrt(dt)."""
    kind: object
    kappa: float
    dt: float
    seed: RngSeed
    t_horizon: float | None = None
    n_trace: int = 64
    trace_times: tuple | None = None
    tip_offset_eps: float | None = None
    solver_cfg: SolverConfig = field(default_factory=SolverConfig)

    def __post_init__(self):
        if not self.kappa > 0:
            raise ValueError("kappa must be positive")
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        k = self.kind
        if isinstance(k, _ANNULUS):
            if not k.p > 0:
                raise ValueError("modulus p must be positive")
            if not 0 < self.horizon < k.p:
                raise ValueError("annulus horizon must lie in (0, p)")
        elif isinstance(k, DiscMarked):
            if not k.t_start < self.horizon < 0:
                raise ValueError("disc horizon must lie in (t_start, 0)")
        elif isinstance(k, WholePlane):
            if not k.t_start < self.horizon:
                raise ValueError("whole-plane horizon must exceed t_start")
        elif isinstance(k, Radial):
            if not self.horizon > 0:
                raise ValueError("radial horizon must be positive")
        else:
            raise TypeError(f"unknown SLE kind {k!r}")
        if isinstance(k, (AnnulusMarked, DiscMarked)):
            _check_period(k.lam)

    @property
    def t_start(self):
        k = self.kind
        return k.t_start if isinstance(k, (DiscMarked, WholePlane)) else 0.0

    @property
    def horizon(self):
        if self.t_horizon is not None:
            return float(self.t_horizon)
        k = self.kind
        if isinstance(k, _ANNULUS):
            return k.p - k.p / 100
        if isinstance(k, DiscMarked):
            return -0.01
        return 1.0

    @property
    def n_steps(self):
        return max(1, int(round((self.horizon - self.t_start) / self.dt)))


def _check_period(lam):
    # only cheap drift objects are probed; Monte Carlo ones are periodic by construction
    if getattr(lam, "numba_spec", None) is None:
        return
    for t, x in ((0.3, 0.4), (1.0, 2.0), (2.5, -1.0)):
        a, b = lam(t, x), lam(t, x + 2 * math.pi)
        if abs(a - b) > 1e-8 * max(1.0, abs(a)):
            raise ValueError("drift function is not 2 pi periodic")


@dataclass
class SleSample:
    spec: SleSpec
    driving: DrivingPath
    marked_track: np.ndarray | None
    trace: Trace | None
    covering: np.ndarray | None = None
    aborted: dict | None = None


def _variant(spec):
    k = spec.kind
    if isinstance(k, _ANNULUS):
        return LoewnerVariant(Variant.CoveringAnnulus, k.p)
    if isinstance(k, DiscMarked):
        return LoewnerVariant(Variant.Disc)
    if isinstance(k, WholePlane):
        return LoewnerVariant(Variant.WholePlaneInverted)
    return LoewnerVariant(Variant.Radial)


def _drift_spec(lam):
    spec = stochastic.annulus_drift_code(lam)
    if spec is None:
        raise TypeError("marked kinds need a drift function with a compiled form "
                        "(ClosedFormDrift or GridDrift)")
    return spec


def _driving(spec):
    """(driving samples, marked track or None, number of completed steps, abort reason)."""
    k = spec.kind
    n = spec.n_steps
    gen = spec.seed.generator()
    cfg = spec.solver_cfg
    if isinstance(k, (AnnulusMarked, DiscMarked)):
        if isinstance(k, AnnulusMarked):
            p, x0 = float(k.p), float(k.x0)
        else:
            # disc time t <-> annulus time t - t_start with p = -t_start; xi(t_start) is the
            # uniform value of a pre-(T;kappa)-Brownian motion
            p, x0 = -float(k.t_start), float(gen.uniform(0.0, 2 * math.pi))
        z = gen.standard_normal(n)
        code, tg, xg, tab = _drift_spec(k.lam)
        xi, q, done, st = _mc.marked_em(float(spec.kappa), p, spec.dt, z, x0, float(k.y0),
                                        code, tg, xg, tab, DRIFT_BLOWUP, cfg.rel_tol,
                                        cfg.abs_tol, cfg.pole_safety_factor, cfg.eps_pole,
                                        cfg.min_step)
        reason = None
        if done < n:
            reason = "drift_blowup" if st == -1 else f"solver_status_{int(st)}"
            xi = xi[:done + 1]
        return xi, q[:done + 1], done, reason
    if isinstance(k, WholePlane):
        grid = stochastic.Grid(k.t_start, spec.dt, n)
        bm = stochastic.pre_t_kappa_bm(spec.seed, spec.kappa, grid).values
        return bm + k.s * grid.times, None, n, None
    x0 = k.x0 if isinstance(k, AnnulusPlain) else 0.0
    z = gen.standard_normal(n)
    xi = np.concatenate([[0.0], np.cumsum(z) * math.sqrt(spec.kappa * spec.dt)]) + x0
    if isinstance(k, Radial):
        xi = xi + k.s * spec.dt * np.arange(n + 1)
    return xi, None, n, None


def _trace_times(spec, t_last):
    if spec.trace_times is not None:
        ts = np.asarray(spec.trace_times, dtype=float)
        return ts[ts <= t_last + 1e-12]
    t0 = spec.t_start
    if t_last <= t0:
        return np.array([t0])
    return t0 + (t_last - t0) * np.arange(1, spec.n_trace + 1) / spec.n_trace


def sample(spec):
    """Driving function, marked track and trace for one seed.

    A drift blow-up stops the driving early; the trace then covers the completed part and the
    abort is recorded."""
    xi, q, done, reason = _driving(spec)
    drv = DrivingPath(spec.t_start, spec.dt, xi, spec.kappa)
    aborted = None
    if reason is not None:
        aborted = {"step": int(done), "t": float(spec.t_start + done * spec.dt),
                   "reason": reason}
    t_last = drv.t_end
    flow = LoewnerFlow(_variant(spec), drv, spec.solver_cfg)
    times = _trace_times(spec, t_last)
    trace = covering = None
    if times.size and t_last > spec.t_start:
        tr = flow.extract_trace(times, spec.tip_offset_eps)
        k = spec.kind
        if isinstance(k, _ANNULUS):
            covering = tr.points.copy()
            pts = np.exp(1j * tr.points)
        elif isinstance(k, WholePlane):
            # inverted whole-plane trace -> whole-plane trace by z -> 1/conj(z)
            pts = 1.0 / np.conj(tr.points)
        else:
            pts = tr.points
        trace = Trace(tr.times, pts, tr.tip_offset_eps)
    return SleSample(spec, drv, q, trace, covering, aborted)


class Target(enum.Enum):
    InnerCircle = "InnerCircle"
    MarkedPoint = "MarkedPoint"


@dataclass(frozen=True)
class Endpoint:
    point: complex
    arg: float
    distance: float
    target_distance: float


CONVERGENCE_FACTOR = 10.0


def endpoint(sample, target=Target.InnerCircle):
    """Terminal trace point of an annulus sample projected radially onto T_p.

    ``distance`` is the gap between the raw terminal point and T_p; ``target_distance`` is the
    distance of the projection to the target (0 for InnerCircle).  NotConverged when the gap
    exceeds CONVERGENCE_FACTOR x (p - t_stop)^{1/2}."""
    k = sample.spec.kind
    if not isinstance(k, _ANNULUS):
        raise TypeError("endpoint is defined for annulus samples")
    if sample.trace is None:
        raise NotConverged("sample has no trace")
    target = Target(target)
    w = complex(sample.trace.points[-1])
    r_in = math.exp(-k.p)
    gap = abs(abs(w) - r_in)
    delta = k.p - float(sample.trace.times[-1])
    if gap > CONVERGENCE_FACTOR * math.sqrt(delta):
        raise NotConverged(f"terminal point is {gap:.3g} from the inner circle "
                           f"(limit {CONVERGENCE_FACTOR * math.sqrt(delta):.3g})")
    arg = math.atan2(w.imag, w.real)
    proj = r_in * complex(math.cos(arg), math.sin(arg))
    if target is Target.MarkedPoint:
        if not isinstance(k, AnnulusMarked):
            raise ValueError("MarkedPoint needs an AnnulusMarked sample")
        b = r_in * complex(math.cos(k.y0), math.sin(k.y0))
        td = abs(proj - b)
    else:
        td = 0.0
    return Endpoint(proj, arg, gap, td)


def marked_track_check(sample, n_check=8, max_amplification=1e6):
    """Worst relative gap between the co-integrated marked track q(t) and g~_I(t, y0)
    recomputed in one pass of the inverted covering annulus flow.

    Near the end the drift holds xi close to q, where q - xi = 0 repels (H_I' ~ pi^2/2tau^2),
    so any local error is amplified by g~_I'(t, y0).  The gap is therefore divided by that
    amplification (and by max(1, |q|)); times where it exceeds ``max_amplification`` are
    skipped.  Returns (worst normalized gap, number of times compared)."""
    k = sample.spec.kind
    if not isinstance(k, AnnulusMarked):
        raise ValueError("marked_track_check needs an AnnulusMarked sample")
    drv = sample.driving
    flow = LoewnerFlow(LoewnerVariant(Variant.InvertedCoveringAnnulus, k.p), drv,
                       sample.spec.solver_cfg)
    n = drv.samples.size - 1
    idx = np.unique(np.linspace(1, n, n_check).astype(int))
    worst = 0.0
    used = 0
    for i in idx:
        g, d = flow.evolve(complex(k.y0), drv.t0 + i * drv.dt, with_derivative=True)
        amp = abs(d)
        if amp > max_amplification:
            continue
        q = sample.marked_track[i]
        worst = max(worst, abs(g.real - q) / (amp * max(1.0, abs(q))))
        used += 1
    return worst, used


def quadratic_variation(sample, t):
    """Realized sum of squared driving increments on [t_start, t_start + t]."""
    d = sample.driving
    n = int(round(t / d.dt))
    inc = np.diff(d.samples[:n + 1])
    if isinstance(sample.spec.kind, Radial):
        inc = inc - sample.spec.kind.s * d.dt
    return float(np.sum(inc * inc))


def min_self_distance(points):
    """Smallest distance between non-adjacent segments of a polyline."""
    z = np.asarray(points, dtype=complex)
    n = z.size - 1
    if n < 3:
        return math.inf
    a = z[:-1]
    b = z[1:]
    best = math.inf
    for i in range(n - 2):
        j = np.arange(i + 2, n)
        best = min(best, float(np.min(_seg_dist(a[i], b[i], a[j], b[j]))))
    return best


def _point_seg(p, a, b):
    d = b - a
    den = np.abs(d) ** 2
    s = np.where(den > 0, ((p - a) * np.conj(d)).real / np.where(den > 0, den, 1.0), 0.0)
    s = np.clip(s, 0.0, 1.0)
    return np.abs(p - (a + s * d))


def _seg_dist(a, b, c, d):
    # segments [a, b] (scalar) and [c, d] (arrays); 0 when they cross
    def cross(u, v):
        return (np.conj(u) * v).imag
    d1 = cross(b - a, c - a)
    d2 = cross(b - a, d - a)
    d3 = cross(d - c, a - c)
    d4 = cross(d - c, b - c)
    hit = (d1 * d2 < 0) & (d3 * d4 < 0)
    m = np.minimum(np.minimum(_point_seg(a, c, d), _point_seg(b, c, d)),
                   np.minimum(_point_seg(c, a, b), _point_seg(d, a, b)))
    return np.where(hit, 0.0, m)


def rotate_plain(spec, theta):
    """The same spec with the plain annulus driving shifted by theta."""
    from dataclasses import replace
    k = spec.kind
    if not isinstance(k, AnnulusPlain):
        raise ValueError("rotation is defined for AnnulusPlain")
    return replace(spec, kind=AnnulusPlain(k.p, k.x0 + theta))
