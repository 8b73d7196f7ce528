"""Brownian paths, two-sided pre-(T;kappa)-Brownian motion and Euler-Maruyama integration
of the driving and auxiliary SDEs.

Randomness comes from a counter-based Philox generator keyed by (seed, stream_id), so a
stream is reproducible bit-for-bit and independent streams can be drawn in any order.
"""

from dataclasses import dataclass
import csv
import math
from typing import Callable

import numpy as np

from . import _kern, _mc
from .errors import DriftBlowup

DRIFT_BLOWUP = 1e6


@dataclass(frozen=True)
class RngSeed:
    seed: int
    stream_id: int = 0

    def __post_init__(self):
        for v in (self.seed, self.stream_id):
            if not 0 <= int(v) < 2 ** 64:
                raise ValueError("seed and stream_id must be 64-bit unsigned integers")

    def generator(self):
        return np.random.Generator(np.random.Philox(key=[int(self.seed), int(self.stream_id)]))

    def child(self, stream_id):
        return RngSeed(self.seed, stream_id)


@dataclass(frozen=True)
class Grid:
    t0: float
    dt: float
    n_steps: int

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if self.n_steps < 0:
            raise ValueError("n_steps must be non-negative")

    @classmethod
    def span(cls, t0, t1, dt):
        return cls(float(t0), float(dt), int(round((t1 - t0) / dt)))

    @property
    def times(self):
        return self.t0 + self.dt * np.arange(self.n_steps + 1)

    @property
    def t_end(self):
        return self.t0 + self.n_steps * self.dt


# drift tags ---------------------------------------------------------------

@dataclass(frozen=True)
class NoDrift:
    pass


@dataclass(frozen=True)
class TanhTau:
    tau: float


@dataclass(frozen=True)
class Phi0:
    """Drift Phi^_0(t_offset + t, z) of the Girsanov-transformed diffusion; ``fn`` evaluates
    Phi^_0(t, z) = kappa Psi^_0'/Psi^_0."""
    sigma: float
    t_offset: float
    fn: Callable[[float, float], float]


@dataclass(frozen=True)
class AnnulusDrift:
    """Drift Lambda(p - t, xi - q) with the marked track q co-integrated.

    ``lam`` is a drift function object (see ``drift``) or a plain callable (tau, x) -> value."""
    lam: object
    p: float
    y0: float = 0.0


@dataclass(frozen=True)
class Custom:
    fn: Callable[[float, float], float]


@dataclass
class SdePath:
    grid: Grid
    values: np.ndarray
    kappa: float
    drift_tag: object = None
    aborted: dict | None = None

    def __post_init__(self):
        self.values = np.asarray(self.values)
        if self.values.shape[-1] != self.grid.n_steps + 1 and self.aborted is None:
            raise ValueError("values must have n_steps + 1 entries")

    def to_csv(self, path):
        if self.values.ndim != 1:
            raise ValueError("only single paths can be written as CSV")
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "value"])
            for t, v in zip(self.grid.times, self.values):
                w.writerow([f"{t:.17g}", f"{v:.17g}"])


def _normals(seed, n_paths, n):
    g = seed.generator()
    if n_paths is None:
        return g.standard_normal(n)
    return g.standard_normal((n_paths, n))


def brownian(seed, grid, n_paths=None):
    """Standard Brownian motion on the grid, B(t0) = 0.  With ``n_paths`` the values have
    shape (n_paths, n_steps + 1)."""
    z = _normals(seed, n_paths, grid.n_steps) * math.sqrt(grid.dt)
    shape = z.shape[:-1] + (1,)
    vals = np.concatenate([np.zeros(shape), np.cumsum(z, axis=-1)], axis=-1)
    return SdePath(grid, vals, 1.0, NoDrift())


def pre_t_kappa_bm(seed, kappa, grid, n_paths=None):
    """x + sqrt(kappa) B_sign(t)(|t|) with x uniform on [0, 2 pi) and two independent wings."""
    if not kappa > 0:
        raise ValueError("kappa must be positive")
    k0 = int(round(-grid.t0 / grid.dt))
    if not 0 <= k0 <= grid.n_steps or abs(grid.t0 + k0 * grid.dt) > 1e-9 * grid.dt:
        raise ValueError("grid must contain t = 0")
    g = seed.generator()
    shape = () if n_paths is None else (n_paths,)
    x = g.uniform(0.0, 2 * math.pi, size=shape)
    sq = math.sqrt(kappa * grid.dt)
    right = g.standard_normal(shape + (grid.n_steps - k0,)) * sq
    left = g.standard_normal(shape + (k0,)) * sq
    x = np.asarray(x)[..., None]
    right = x + np.cumsum(right, axis=-1)
    left = x + np.cumsum(left, axis=-1)[..., ::-1]
    vals = np.concatenate([left, x, right], axis=-1)
    return SdePath(grid, vals, kappa, NoDrift())


def _python_em(fn, kappa, x0, grid, z, tag):
    x = np.empty(grid.n_steps + 1)
    x[0] = x0
    sq = math.sqrt(kappa * grid.dt)
    for k in range(grid.n_steps):
        d = fn(grid.t0 + k * grid.dt, x[k])
        if not math.isfinite(d) or abs(d) > DRIFT_BLOWUP:
            raise DriftBlowup(f"drift {d} at t={grid.t0 + k * grid.dt}")
        x[k + 1] = x[k] + d * grid.dt + sq * z[k]
    return SdePath(grid, x, kappa, tag)


def annulus_drift_code(lam):
    """(code, tgrid, xgrid, table) for the numba loop, or None for plain callables."""
    spec = getattr(lam, "numba_spec", None)
    if spec is None:
        return None
    return spec()


def integrate_sde(seed, drift_tag, kappa, x0, grid, n_paths=None, solver_cfg=None):
    """Euler-Maruyama path of dX = sqrt(kappa) dB + drift dt.

    For ``AnnulusDrift`` returns the pair (xi path, q path); the run is cut at the step
    where the drift exceeds the blow-up threshold and the abort is recorded on both paths."""
    if kappa < 0:
        raise ValueError("kappa must be non-negative")
    if drift_tag is None:
        drift_tag = NoDrift()
    if isinstance(drift_tag, AnnulusDrift):
        if n_paths is not None:
            raise ValueError("AnnulusDrift integrates one path at a time")
        return _integrate_marked(seed, drift_tag, kappa, x0, grid, solver_cfg)
    z = _normals(seed, n_paths, grid.n_steps)
    if isinstance(drift_tag, (NoDrift, TanhTau)):
        tau = drift_tag.tau if isinstance(drift_tag, TanhTau) else 0.0
        zz = np.atleast_2d(z)
        vals, worst = _mc.tanh_em(float(x0), float(kappa), float(tau), grid.dt, zz)
        assert worst <= 1.0 + 1e-12, "tanh_2 drift exceeded |tau|"
        if n_paths is None:
            vals = vals[0]
        return SdePath(grid, vals, kappa, drift_tag)
    if n_paths is not None:
        raise ValueError("callable drifts integrate one path at a time")
    if isinstance(drift_tag, Phi0):
        fn = lambda t, x: drift_tag.fn(drift_tag.t_offset + t, x)
    elif isinstance(drift_tag, Custom):
        fn = drift_tag.fn
    else:
        raise TypeError(f"unknown drift tag {drift_tag!r}")
    return _python_em(fn, kappa, float(x0), grid, z, drift_tag)


def _integrate_marked(seed, tag, kappa, x0, grid, solver_cfg):
    from .loewner import SolverConfig
    cfg = solver_cfg or SolverConfig()
    p = float(tag.p)
    if grid.t0 != 0.0:
        raise ValueError("annulus driving starts at t = 0")
    if grid.t_end >= p:
        raise ValueError("annulus driving must stop before the modulus p")
    z = _normals(seed, None, grid.n_steps)
    spec = annulus_drift_code(tag.lam)
    if spec is not None:
        code, tg, xg, tab = spec
        xi, q, done, st = _mc.marked_em(float(kappa), p, grid.dt, z, float(x0), float(tag.y0),
                                        code, tg, xg, tab, DRIFT_BLOWUP, cfg.rel_tol,
                                        cfg.abs_tol, cfg.pole_safety_factor, cfg.eps_pole,
                                        cfg.min_step)
    else:
        xi, q, done, st = _python_marked(tag.lam, float(kappa), p, grid.dt, z, float(x0),
                                         float(tag.y0), cfg)
    aborted = None
    if done < grid.n_steps:
        reason = "drift_blowup" if st == -1 else f"solver_status_{int(st)}"
        aborted = {"step": int(done), "t": float(done * grid.dt), "reason": reason}
    return (SdePath(grid, xi, kappa, tag, aborted), SdePath(grid, q, kappa, tag, aborted))


def _python_marked(lam, kappa, p, dt, z, x0, y0, cfg):
    n = z.size
    xi = np.empty(n + 1)
    q = np.empty(n + 1)
    xi[0], q[0] = x0, y0
    sq = math.sqrt(kappa * dt)
    for k in range(n):
        t = k * dt
        d = lam(p - t, xi[k] - q[k])
        d = d[0] if isinstance(d, tuple) else d
        if not math.isfinite(d) or abs(d) > DRIFT_BLOWUP:
            return xi[:k + 1], q[:k + 1], k, -1
        xi[k + 1] = xi[k] + d * dt + sq * z[k]
        w, lg, st, tr = _kern.flow(_kern.K_INV_COV_ANNULUS, p, t, dt, xi[k:k + 2].copy(), t,
                                   t + dt, complex(q[k]), 0j, False, cfg.rel_tol, cfg.abs_tol,
                                   cfg.pole_safety_factor, cfg.eps_pole, cfg.min_step)
        if st != _kern.ST_OK:
            return xi[:k + 2], q[:k + 1], k, st
        q[k + 1] = w.real
    return xi, q, n, 0


def exit_fraction(paths, times, c, b):
    """Fraction of paths with |X(t)| > c t + b for some grid time t."""
    bound = c * np.asarray(times) + b
    return float(np.mean(np.any(np.abs(paths) > bound, axis=-1)))
