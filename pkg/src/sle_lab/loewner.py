"""Loewner equations of every flavour used here (radial, annulus, whole-plane, disc,
rescaled covering annulus, strip), solved by one adaptive Runge-Kutta integrator whose
right-hand side is picked from a table.

Right-hand-side table (g is the map value, xi the driving function, t the time):

    Radial                      dg/dt = g (e^{i xi} + g) / (e^{i xi} - g)
    CoveringRadial              dg/dt = cot_2(g - xi)
    Annulus (modulus p)         dg/dt = g S(p - t, g e^{-i xi})
    CoveringAnnulus             dg/dt = H(p - t, g - xi)
    InvertedCoveringAnnulus     dg/dt = H_I(p - t, g - xi)
    WholePlaneInverted          radial equation, g(t0, z) = e^{t0} z
    CoveringWholePlaneInverted  covering radial equation, g(t0, z) = z - i t0
    Disc                        dg/dt = g S_I(-t, g e^{-i xi}),   t < 0
    CoveringDisc                dg/dt = H_I(-t, g - xi),           t < 0
    InvertedCoveringDisc        dg/dt = H(-t, g - xi),  g(t0, z) = z - i t0
    RescaledCoveringAnnulus     dg/dt = H^(p^ + t, g - xi)
    Strip                       dg/dt = coth_2(g - xi)

The table itself lives in ``_kern.rhs``.
"""

from dataclasses import dataclass, field
import enum
import math

import numpy as np
from scipy import integrate as sp_integrate

from . import _kern
from .errors import BackwardBlowup, OutOfRange, StartTooLate, StepUnderflow


class Variant(enum.Enum):
    Radial = _kern.K_RADIAL
    CoveringRadial = _kern.K_COV_RADIAL
    Annulus = _kern.K_ANNULUS
    CoveringAnnulus = _kern.K_COV_ANNULUS
    InvertedCoveringAnnulus = _kern.K_INV_COV_ANNULUS
    WholePlaneInverted = _kern.K_WHOLE_INV
    CoveringWholePlaneInverted = _kern.K_COV_WHOLE_INV
    Disc = _kern.K_DISC
    CoveringDisc = _kern.K_COV_DISC
    InvertedCoveringDisc = _kern.K_INV_COV_DISC
    RescaledCoveringAnnulus = _kern.K_RESCALED
    Strip = _kern.K_STRIP


_NEEDS_P = {Variant.Annulus, Variant.CoveringAnnulus, Variant.InvertedCoveringAnnulus,
            Variant.RescaledCoveringAnnulus}
_DISC_COORDS = {Variant.Radial, Variant.Annulus, Variant.WholePlaneInverted, Variant.Disc}


@dataclass(frozen=True)
class LoewnerVariant:
    kind: Variant
    modulus_p: float | None = None

    def __post_init__(self):
        needs = self.kind in _NEEDS_P
        if needs and (self.modulus_p is None or not self.modulus_p > 0):
            raise ValueError(f"{self.kind.name} needs a positive modulus_p")
        if not needs and self.modulus_p is not None:
            raise ValueError(f"{self.kind.name} takes no modulus_p")

    @property
    def p(self):
        return 0.0 if self.modulus_p is None else float(self.modulus_p)


@dataclass(frozen=True)
class DrivingPath:
    t0: float
    dt: float
    samples: np.ndarray
    kappa: float = 0.0

    def __post_init__(self):
        s = np.ascontiguousarray(np.asarray(self.samples, dtype=float))
        if s.ndim != 1 or s.size == 0:
            raise ValueError("samples must be a non-empty 1-d sequence")
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        object.__setattr__(self, "samples", s)

    @classmethod
    def from_function(cls, f, t0, t1, dt, kappa=0.0):
        n = int(round((t1 - t0) / dt))
        ts = t0 + dt * np.arange(n + 1)
        return cls(float(t0), float(dt), np.array([f(t) for t in ts], dtype=float), kappa)

    @classmethod
    def constant(cls, value, t0, t1, dt):
        n = int(round((t1 - t0) / dt))
        return cls(float(t0), float(dt), np.full(n + 1, float(value)))

    @property
    def t_end(self):
        return self.t0 + (self.samples.size - 1) * self.dt

    @property
    def times(self):
        return self.t0 + self.dt * np.arange(self.samples.size)

    def at(self, t):
        return float(_kern.drive_at(self.t0, self.dt, self.samples, float(t)))

    def restart(self, t1):
        """Driving seen by the flow restarted at grid time t1, with the clock reset to 0."""
        k = int(round((t1 - self.t0) / self.dt))
        if abs(self.t0 + k * self.dt - t1) > 1e-9 * self.dt or not 0 <= k < self.samples.size:
            raise ValueError("restart time must lie on the driving grid")
        return DrivingPath(0.0, self.dt, self.samples[k:].copy(), self.kappa)

    def shifted(self, theta):
        return DrivingPath(self.t0, self.dt, self.samples + theta, self.kappa)


@dataclass(frozen=True)
class SolverConfig:
    rel_tol: float = 1e-11
    abs_tol: float = 1e-13
    max_step: float | None = None
    pole_safety_factor: float = 0.25
    eps_pole: float = 1e-6
    min_step: float = 1e-14


@dataclass(frozen=True)
class Swallowed:
    tau: float


@dataclass
class Trace:
    times: np.ndarray
    points: np.ndarray
    tip_offset_eps: np.ndarray

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.points = np.asarray(self.points, dtype=complex)
        self.tip_offset_eps = np.broadcast_to(np.asarray(self.tip_offset_eps, dtype=float),
                                              self.times.shape).copy()
        if self.times.shape != self.points.shape:
            raise ValueError("times and points must have equal length")

    def to_rows(self):
        return [(float(t), float(z.real), float(z.imag), float(e))
                for t, z, e in zip(self.times, self.points, self.tip_offset_eps)]


def _init_state(kind, z, t0):
    if kind is Variant.WholePlaneInverted:
        return z * math.exp(t0)
    if kind in (Variant.CoveringWholePlaneInverted, Variant.InvertedCoveringDisc):
        return z - 1j * t0
    return z


def _undo_init(kind, w, t0):
    if kind is Variant.WholePlaneInverted:
        return w * math.exp(-t0)
    if kind in (Variant.CoveringWholePlaneInverted, Variant.InvertedCoveringDisc):
        return w + 1j * t0
    return w


@dataclass
class LoewnerFlow:
    """A Loewner evolution g(t, .) for one variant and one driving function.

    The flow starts at ``driving.t0`` from the identity (or the asymptotic start map
    of the whole-plane and inverted disc variants)."""

    variant: LoewnerVariant
    driving: DrivingPath
    solver_cfg: SolverConfig = field(default_factory=SolverConfig)

    def _run(self, z0, ta, tb, with_deriv):
        cfg = self.solver_cfg
        d = self.driving
        z, lg, st, tr = _kern.flow(self.variant.kind.value, self.variant.p, d.t0, d.dt,
                                   d.samples, float(ta), float(tb), complex(z0), 0j, with_deriv,
                                   cfg.rel_tol, cfg.abs_tol, cfg.pole_safety_factor,
                                   cfg.eps_pole, cfg.min_step)
        return complex(z), complex(lg), int(st), float(tr)

    def _check_time(self, t):
        d = self.driving
        fuzz = 1e-9 * d.dt
        if t < d.t0 - fuzz or t > d.t_end + fuzz:
            raise OutOfRange(f"t={t} outside the driving range [{d.t0}, {d.t_end}]")
        if self.variant.kind in (Variant.Annulus, Variant.CoveringAnnulus,
                                 Variant.InvertedCoveringAnnulus) and t >= self.variant.p:
            raise OutOfRange("annulus flows need t < p")
        if self.variant.kind in (Variant.Disc, Variant.CoveringDisc,
                                 Variant.InvertedCoveringDisc) and t >= 0:
            raise OutOfRange("disc flows need t < 0")

    def evolve(self, z, t, with_derivative=False):
        """g(t, z), or (g(t, z), g'(t, z)) with the variational equation alongside.

        Returns ``Swallowed(tau)`` if z hits the driving singularity before t."""
        self._check_time(t)
        kind = self.variant.kind
        t0 = self.driving.t0
        z0 = _init_state(kind, complex(z), t0)
        g, lg, st, tr = self._run(z0, t0, t, with_derivative)
        if st == _kern.ST_SWALLOWED:
            return Swallowed(tr)
        if st == _kern.ST_UNDERFLOW:
            raise StepUnderflow(f"adaptive step underflow at t={tr}")
        if st == _kern.ST_NONFINITE:
            raise StepUnderflow(f"non-finite state at t={tr}")
        if st == _kern.ST_RANGE:
            raise OutOfRange(f"t={t} outside the driving range")
        if with_derivative:
            scale = math.exp(t0) if kind is Variant.WholePlaneInverted else 1.0
            return g, scale * complex(np.exp(lg))
        return g

    def default_tip_eps(self):
        return 0.1 * math.sqrt(self.driving.dt)

    def extract_trace(self, times, tip_offset_eps=None):
        return extract_trace(self, times, tip_offset_eps)


def evolve(flow, z, t, with_derivative=False):
    return flow.evolve(z, t, with_derivative)


def _tip_eps(flow, times, eps):
    kind = flow.variant.kind
    eps = np.full(len(times), eps, dtype=float)
    # the offset point must stay inside strips / annuli that thin out as t grows
    if kind in (Variant.Annulus, Variant.CoveringAnnulus, Variant.InvertedCoveringAnnulus):
        eps = np.minimum(eps, 0.25 * (flow.variant.p - times))
    elif kind in (Variant.Disc, Variant.CoveringDisc, Variant.InvertedCoveringDisc):
        eps = np.minimum(eps, 0.25 * (-times))
    return eps


def _in_domain(kind, p, z, tol):
    if kind in (Variant.Radial, Variant.WholePlaneInverted):
        return abs(z) <= 1 + tol
    if kind is Variant.Annulus:
        return math.exp(-p) - tol <= abs(z) <= 1 + tol
    if kind is Variant.CoveringRadial:
        return z.imag >= -tol
    if kind in (Variant.CoveringAnnulus, Variant.InvertedCoveringAnnulus):
        return -tol <= z.imag <= p + tol
    if kind in (Variant.RescaledCoveringAnnulus, Variant.Strip):
        return -tol <= z.imag <= math.pi + tol
    return math.isfinite(z.real) and math.isfinite(z.imag)


def extract_trace(flow, times, tip_offset_eps=None):
    """beta(t) for each t by backward flow from the point offset tip_offset_eps into the
    domain from the driving singularity at time t down to the start time."""
    times = np.asarray(times, dtype=float)
    for t in times:
        flow._check_time(t)
    eps0 = flow.default_tip_eps() if tip_offset_eps is None else float(tip_offset_eps)
    eps = _tip_eps(flow, times, eps0)
    if np.any(eps <= 0):
        raise ValueError("tip offset must be positive")
    cfg = flow.solver_cfg
    d = flow.driving
    kind = flow.variant.kind
    pts, status = _kern.trace_points(kind.value, flow.variant.p, d.t0, d.dt, d.samples, times,
                                     eps, d.t0, cfg.rel_tol, cfg.abs_tol,
                                     cfg.pole_safety_factor, cfg.eps_pole, cfg.min_step)
    out = np.empty_like(pts)
    for i, (w, st) in enumerate(zip(pts, status)):
        w = complex(w)
        if st != _kern.ST_OK or not _in_domain(kind, flow.variant.p, w, 1e-6):
            raise BackwardBlowup(f"backward flow from t={times[i]} left the domain "
                                 f"(status {int(st)}); tip offset {eps[i]:.3g} too large?")
        out[i] = _undo_init(kind, w, d.t0)
    return Trace(times, out, eps)


# ---------------------------------------------------------------------------
# flows started at a surrogate of -infinity
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class AsymptoticStart:
    value: complex
    init_error_bound: float


def evolve_whole_plane(driving, t_start, z, t, solver_cfg=None, coords="covering"):
    """Inverted covering whole-plane map g~(t, z) started at g~(t_start, z) = z - i t_start.

    The start error |g~(t_start, z) + i t_start - z| <= 4 e^{t_start - Im z} holds when
    t_start <= Im z - ln 8.  ``coords="disc"`` returns e^{i g~} instead."""
    z = complex(z)
    if t_start > z.imag - math.log(8.0):
        raise StartTooLate(f"t_start={t_start} > Im z - ln 8 = {z.imag - math.log(8.0)}")
    if t < t_start:
        raise ValueError("t must be >= t_start")
    drv = _window(driving, t_start)
    cfg = solver_cfg or SolverConfig()
    bound = 4.0 * math.exp(t_start - z.imag)
    if coords == "covering":
        flow = LoewnerFlow(LoewnerVariant(Variant.CoveringWholePlaneInverted), drv, cfg)
        val = flow.evolve(z, t)
    elif coords == "disc":
        flow = LoewnerFlow(LoewnerVariant(Variant.WholePlaneInverted), drv, cfg)
        val = flow.evolve(np.exp(1j * z), t)
    else:
        raise ValueError("coords must be 'covering' or 'disc'")
    return AsymptoticStart(val if isinstance(val, Swallowed) else complex(val), bound)


def evolve_disc(driving, t_start, z, t, solver_cfg=None, inverted=True, coords="covering"):
    """Disc Loewner maps for t_start <= t < 0.

    inverted=True: inverted covering disc map, start z - i t_start, error
    <= 10 e^{-Im z + t_start} when t_start <= Im z - ln 13.
    inverted=False: covering disc map g~_I, start z, error <= 10 e^{Im z + t_start} when
    t_start <= -Im z - ln 13.  With coords="disc" the disc map g_I is integrated from
    g_I(t_start, w) = w for w = e^{iz}."""
    z = complex(z)
    if not (t_start <= t < 0):
        raise ValueError("need t_start <= t < 0")
    if inverted:
        if t_start > z.imag - math.log(13.0):
            raise StartTooLate("t_start > Im z - ln 13")
        bound = 10.0 * math.exp(-z.imag + t_start)
        kind = Variant.InvertedCoveringDisc
    else:
        if t_start > -z.imag - math.log(13.0):
            raise StartTooLate("t_start > -Im z - ln 13")
        bound = 10.0 * math.exp(z.imag + t_start)
        kind = Variant.CoveringDisc
    drv = _window(driving, t_start)
    cfg = solver_cfg or SolverConfig()
    if coords == "disc":
        if inverted:
            raise ValueError("disc coordinates are provided for the non-inverted map")
        flow = LoewnerFlow(LoewnerVariant(Variant.Disc), drv, cfg)
        val = flow.evolve(np.exp(1j * z), t)
    else:
        flow = LoewnerFlow(LoewnerVariant(kind), drv, cfg)
        val = flow.evolve(z, t)
    return AsymptoticStart(val if isinstance(val, Swallowed) else complex(val), bound)


def _window(driving, t_start):
    """Driving restricted to [t_start, end]; t_start must be a grid time."""
    k = int(round((t_start - driving.t0) / driving.dt))
    if k < 0 or abs(driving.t0 + k * driving.dt - t_start) > 1e-9 * driving.dt:
        raise OutOfRange("t_start must be a driving grid time")
    return DrivingPath(driving.t0 + k * driving.dt, driving.dt, driving.samples[k:],
                       driving.kappa)


# ---------------------------------------------------------------------------
# rescaled covering annulus correspondence
# ---------------------------------------------------------------------------

def rescaled_time(p, t_hat):
    """Original time s matching rescaled time t_hat: s = p - pi^2 / (p_hat + t_hat)."""
    return p - math.pi ** 2 / (math.pi ** 2 / p + t_hat)


def rescaled_driving(p, driving, t_end, dt_hat, refine=8):
    """xi^(t) = ((p^+t)/pi) xi(s(t)) - (1/pi) int_0^t xi(s(u)) du on a uniform grid.

    Returns the rescaled driving and the integral term I(t) on the same grid."""
    p_hat = math.pi ** 2 / p
    t_hat_end = math.pi ** 2 / (p - t_end) - p_hat
    n = int(math.floor(t_hat_end / dt_hat + 1e-9))
    grid = dt_hat * np.arange(n + 1)
    fine = np.linspace(0.0, grid[-1], refine * n + 1)
    s_fine = p - math.pi ** 2 / (p_hat + fine)
    xi_fine = np.array([driving.at(s) for s in np.minimum(s_fine, driving.t_end)])
    integral_fine = sp_integrate.cumulative_simpson(xi_fine, x=fine, initial=0.0) / math.pi
    integral = integral_fine[::refine]
    s_grid = p - math.pi ** 2 / (p_hat + grid)
    xi_grid = xi_fine[::refine]
    xi_hat = (p_hat + grid) / math.pi * xi_grid - integral
    return DrivingPath(0.0, dt_hat, xi_hat, driving.kappa), integral, s_grid


def rescaled_correspondence_check(p, driving, t_end=None, dt_hat=None, n_trace=20,
                                  solver_cfg=None, z_grid=None):
    """Compare the rescaled covering annulus flow with the transformed covering flow.

    Reports the largest deviation of
        g^(t, z) = ((p^+t)/pi) g~(s(t), (p/pi) z) - I(t)
    over a (t, z) grid, and of beta^(t) = (pi/p) beta~(s(t)) over trace times."""
    cfg = solver_cfg or SolverConfig()
    if t_end is None:
        t_end = driving.t_end
    if not t_end < p:
        raise ValueError("driving horizon must be < p")
    dt_hat = dt_hat or driving.dt
    p_hat = math.pi ** 2 / p
    drv_hat, integral, s_grid = rescaled_driving(p, driving, t_end, dt_hat)
    flow = LoewnerFlow(LoewnerVariant(Variant.CoveringAnnulus, p), driving, cfg)
    flow_hat = LoewnerFlow(LoewnerVariant(Variant.RescaledCoveringAnnulus, p_hat), drv_hat, cfg)
    t_hat_end = drv_hat.t_end
    if z_grid is None:
        z_grid = [complex(x, y) for x in (-2.0, 0.7, 2.5) for y in (0.6, 1.6, 2.6)]
    t_checks = np.linspace(0.0, t_hat_end, 6)[1:]
    dev_map = 0.0
    skipped = 0
    for th in t_checks:
        k = int(round(th / dt_hat))
        th = k * dt_hat
        s = rescaled_time(p, th)
        for z in z_grid:
            lhs = flow_hat.evolve(z, th)
            rhs = flow.evolve(p / math.pi * z, min(s, driving.t_end))
            if isinstance(lhs, Swallowed) or isinstance(rhs, Swallowed):
                skipped += 1
                continue
            rhs = (p_hat + th) / math.pi * rhs - integral[k]
            dev_map = max(dev_map, abs(lhs - rhs))
    idx = np.unique(np.linspace(1, drv_hat.samples.size - 1, n_trace).round().astype(int))
    th_trace = idx * dt_hat
    s_trace = np.array([min(rescaled_time(p, th), driving.t_end) for th in th_trace])
    tr_hat = extract_trace(flow_hat, th_trace)
    tr = extract_trace(flow, s_trace)
    dev_trace = float(np.max(np.abs(tr_hat.points - math.pi / p * tr.points)))
    tip_eps = float(max(tr_hat.tip_offset_eps.max(), tr.tip_offset_eps.max()))
    return {
        "p": p,
        "p_hat": p_hat,
        "t_hat_end": t_hat_end,
        "max_map_deviation": dev_map,
        "max_trace_deviation": dev_trace,
        "tip_offset_eps": tip_eps,
        "swallowed_skipped": skipped,
        "n_trace": int(idx.size),
    }
