"""The twelve acceptance criteria at their stated sizes and tolerances.

Each test prints one PASS/FAIL line (repeated in the terminal summary).  Stochastic criteria
keep a handle on their raw outputs so that criterion 12 can regenerate a slice of every one
of them from the same seeds.
"""

import math
import time

import numpy as np
import pytest

from conftest import CRITERIA
from sle_lab import drift, experiments as ex, loewner as L, specfun as S
from sle_lab.stochastic import Grid, RngSeed, TanhTau, brownian, exit_fraction, integrate_sde

# 2 t H_I''/(t H_I' + 1) from mpmath jtheta derivatives (30 digits)
MP_K2_LAMBDA = {
    (0.8, 0.3): -4.1564136418415507691, (0.8, 0.8): -7.2032974310675016958,
    (0.8, 2.0): -7.8458801329094307861, (1.5, 0.3): -1.2742240305423685771,
    (1.5, 0.8): -2.8671852519756859344, (1.5, 2.0): -3.9930127270715351668,
    (3.0, 0.3): -0.31501512906798968769, (3.0, 0.8): -0.78958876054566450841,
    (3.0, 2.0): -1.2622885233413138629,
}

RUNS = {}


def record(n, name, ok, elapsed, limit, detail=""):
    within = limit is None or elapsed < limit
    status = "PASS" if ok and within else "FAIL"
    lim = "" if limit is None else f" (limit {limit:.0f} s)"
    line = f"criterion {n:2d} {status}  {name}: {detail}  [{elapsed:.1f} s{lim}]"
    CRITERIA[n] = line
    print(line)
    return ok and within


@pytest.fixture(scope="module", autouse=True)
def warmup():
    # compile or load every numba kernel before any timing starts
    S.eval_ha(1.0, 0.5)
    S.eval_ha_I(1.0, 0.5, order=2, dt_order=1)
    drift.psi_q_mc(drift.FkParams.reversibility(2.0, n_paths=50), RngSeed(0), 1.0, 0.3)
    drift.lambda_s(drift.FkParams.reversibility(2.0, n_paths=50), RngSeed(0), 1.0, 0.3)
    small = ex.ExperimentConfig(n_samples=1, dt=1e-2)
    ex._endpoint_arg((small, 0, small.stop))
    lam = ex.crossing_drift(2.0, 0.0, 1.0, 0.01)
    ex._mid_observable((small, lam, 2.0, ex.F_FORWARD, 0, "first"))


def test_c01_special_function_identities():
    t0 = time.time()
    worst_id = worst_pde = 0.0
    bounds_ok = True
    for t in (0.7, 1.0, 2.5, 4.0):
        for z in (0.4, 1.9 + 0.3j, 3.0 - 0.6j, 5.5 + 0.1j):
            for name, fn in (("Theta", S.eval_ha), ("Theta_I", S.eval_ha_I)):
                th = S.eval_theta(t, z, name).value
                d1 = S.eval_theta(t, z, name, order=1).value
                v = fn(t, z).value
                worst_id = max(worst_id, abs(v - 2 * d1 / th) / max(1, abs(v)))
    for t in np.linspace(1, 5, 9):
        for x in np.linspace(0.05, 2 * math.pi - 0.05, 13):
            for z in (complex(x, 0), complex(x, 0.3)):
                heat = (S.eval_theta(t, z, "Theta_I", dt_order=1).value
                        - S.eval_theta(t, z, "Theta_I", order=2).value)
                h, h1, h2, ht = (S.eval_ha_I(t, z, order=o, dt_order=d).value
                                 for o, d in ((0, 0), (1, 0), (2, 0), (0, 1)))
                g, g1, g2, gt = (S.eval_ha(t, z, order=o, dt_order=d).value
                                 for o, d in ((0, 0), (1, 0), (2, 0), (0, 1)))
                worst_pde = max(worst_pde, abs(heat), abs(ht - h2 - h1 * h), abs(gt - g2 - g1 * g))
    for y in (0.0, 0.5, 1.5):
        for h in (0, 1, 2, 3):
            for t in np.arange(y + h + 2, y + 20.5, 1.0):
                z = complex(0.9, y)
                bounds_ok &= abs(S.eval_ha_I(float(t), z, order=h).value) < \
                    S.estimation_bound(float(t), z, h)
    for t in np.linspace(0.5, 10, 8):
        for x in np.linspace(-3 * t, 3 * t, 9):
            for n in (0, 1, 2):
                v = abs(S.eval_ha_rescaled(float(t), float(x), "H_Iq", order=n).value)
                bounds_ok &= v <= S.ha_iq_bound(float(t), float(x), n) * (1 + 1e-12)
    ok = worst_id < 1e-9 and worst_pde < 1e-8 and bounds_ok
    assert record(1, "special-function identities", ok, time.time() - t0, 10,
                  f"identity {worst_id:.1e}, PDE {worst_pde:.1e}, bounds {bounds_ok}")


def test_c02_taylor_coefficient():
    t0 = time.time()
    eps = np.finfo(float).eps
    ok = True
    ratios = []
    for t in (1.0, 2.0, 5.0):
        ref = None
        for z in (1e-2, 1e-3, 1e-4):
            r = abs((S.eval_ha(t, z).value - 2 / z - S.eval_rA(t) * z) / z ** 3)
            ref = r if ref is None else ref
            ok &= r <= 2 * ref + 1 + 4 * eps / z ** 4
            ratios.append(r)
    ok &= abs(S.eval_rA(math.inf) + 1 / 6) < 1e-12
    assert record(2, "Taylor coefficient", ok, time.time() - t0, 1,
                  f"max |remainder/z^3| {max(ratios):.3g}")


def test_c03_loewner_invariants():
    t0 = time.time()
    g = Grid.span(0.0, 1.0, 1e-3)
    drivings = [L.DrivingPath.constant(0.0, 0.0, 1.0, 1e-3),
                L.DrivingPath.from_function(math.sin, 0.0, 1.0, 1e-3),
                L.DrivingPath(0.0, 1e-3, brownian(RngSeed(3), g).values * math.sqrt(2), 2.0)]
    cfg = L.SolverConfig()
    cap = circ = cover = semi = 0.0
    p = 2.0
    for drv in drivings:
        rad = L.LoewnerFlow(L.LoewnerVariant(L.Variant.Radial), drv)
        _, d = rad.evolve(0j, 0.8, with_derivative=True)
        cap = max(cap, abs(math.log(abs(d)) - 0.8))
        ann = L.LoewnerFlow(L.LoewnerVariant(L.Variant.Annulus, p), drv)
        for th in (0.0, 1.0, 2.0, math.pi, 4.5):
            w = ann.evolve(math.exp(-p) * complex(math.cos(th), math.sin(th)), 0.5)
            circ = max(circ, abs(-math.log(abs(w)) - (p - 0.5)))
        cov = L.LoewnerFlow(L.LoewnerVariant(L.Variant.CoveringAnnulus, p), drv)
        for z in (0.3 + 0.8j, -1.2 + 1.5j, 2.0 + 0.4j):
            cover = max(cover, abs(np.exp(1j * cov.evolve(z, 0.9)) - ann.evolve(np.exp(1j * z), 0.9)))
        for kind, pp in ((L.Variant.Radial, None), (L.Variant.Annulus, p)):
            z = 0.5 * np.exp(0.7j)
            full = L.LoewnerFlow(L.LoewnerVariant(kind, pp), drv).evolve(z, 0.9)
            mid = L.LoewnerFlow(L.LoewnerVariant(kind, pp), drv).evolve(z, 0.4)
            rest = L.DrivingPath(0.0, drv.dt, drv.samples[400:])
            second = L.LoewnerFlow(L.LoewnerVariant(kind, None if pp is None else pp - 0.4),
                                   rest).evolve(mid, 0.5)
            semi = max(semi, abs(full - second) / max(1.0, abs(full)))
    ok = cap < 1e-7 and circ < 1e-7 and cover < 1e-8 and semi < 5 * cfg.rel_tol
    assert record(3, "Loewner invariants", ok, time.time() - t0, 30,
                  f"capacity {cap:.1e}, T_p {circ:.1e}, covering {cover:.1e}, "
                  f"semigroup {semi:.1e}")


def test_c04_rescaled_correspondence():
    t0 = time.time()
    drv = L.DrivingPath.from_function(lambda t: 0.8 * math.sin(2 * t), 0.0, 1.5, 1e-3)
    r = L.rescaled_correspondence_check(2.0, drv)
    ok = r["max_map_deviation"] < 1e-5 and r["max_trace_deviation"] < 10 * r["tip_offset_eps"]
    assert record(4, "rescaled correspondence", ok, time.time() - t0, 60,
                  f"map {r['max_map_deviation']:.1e}, trace {r['max_trace_deviation']:.1e} "
                  f"vs 10 tip_eps {10 * r['tip_offset_eps']:.1e}")


def test_c05_feynman_kac():
    t0 = time.time()
    params = drift.FkParams.reversibility(2.0, n_paths=100_000)
    lower_ok = True
    for i, (t, x) in enumerate(((0.5, 0.0), (1.0, 2.0), (3.0, -1.0))):
        e = drift.psi_q_mc(params, RngSeed(21, i), t, x)
        lower_ok &= e.mean + 3 * e.stderr >= 1 - e.bias_bound
    RUNS[5] = (params, e)
    one = drift.psi_q_mc(drift.FkParams.reversibility(4.0, n_paths=100_000), RngSeed(22), 1.0, 0.3)
    exact_one = one.mean == 1.0 and one.stderr == 0.0
    lim = drift.psi_q_mc(params, RngSeed(23), 12.0, 1.0)
    lim_ok = abs(lim.mean - 1) < max(3 * lim.stderr, 1e-3)
    kappa, tau, c, b = 4.0, -1.0, 1.0, 5.0
    g = Grid.span(0.0, 20.0, 1e-2)
    paths = integrate_sde(RngSeed(24), TanhTau(tau), kappa, 0.0, g, n_paths=10_000).values
    frac = exit_fraction(paths, g.times, c, b)
    bound = 2 * math.exp(2 * c / kappa * (0 - b))
    tail_ok = frac <= bound + 3 * math.sqrt(bound * (1 - bound) / 10_000)
    ok = lower_ok and exact_one and lim_ok and tail_ok
    assert record(5, "Feynman-Kac", ok, time.time() - t0, 120,
                  f"lower bound {lower_ok}, sigma=0 exact {exact_one}, "
                  f"t=12 |psi-1| {abs(lim.mean - 1):.1e}, tail {frac:.4f} <= {bound:.4f}")


def test_c06_kappa2_cross_validation():
    t0 = time.time()
    params = drift.FkParams.reversibility(2.0, n_paths=100_000)
    zs = []
    est = {}
    for i, t in enumerate((0.8, 1.5, 3.0)):
        xs = [0.3, 0.8, 2.0]
        for x, e in zip(xs, drift.lambda_s_grid(params, RngSeed(31, i), t, xs)):
            zs.append((e.value - MP_K2_LAMBDA[(t, x)]) / e.stderr)
            est[(t, x)] = e.value
    RUNS[6] = (params, est)
    zmax = float(np.max(np.abs(zs)))
    assert record(6, "kappa=2 cross-validation", zmax < 3, time.time() - t0, 300,
                  f"max |z| {zmax:.2f} over 9 points")


def test_c07_average_shift():
    t0 = time.time()
    res = {}
    for s in (0.0, 1.0):
        params = drift.FkParams.reversibility(2.0, s=s, n_paths=1000)
        res[s] = drift.average_shift(params, RngSeed(41, int(s)), 1.5)
    RUNS[7] = res
    zs = {s: (v - s) / se if se > 0 else (0.0 if v == s else math.inf)
          for s, (v, se) in res.items()}
    ok = all(abs(z) < 3 for z in zs.values())
    assert record(7, "average shift", ok, time.time() - t0, 300,
                  ", ".join(f"s={s:g}: deviation {res[s][0] - s:.1e} (z {zs[s]:.2f})"
                            for s in res))


def test_c08_pde_catalog():
    t0 = time.time()
    ids = ["k0_G", "k0_G_I", "k163_F", "k163_F_I", "k4_gauss", "k4_exp", "k4_sin", "k4_theta",
           "k4_theta_I", "k2_xi3", "k2_gamma"] + [f"k3_gamma{i}" for i in range(1, 7)]
    worst = {eid: drift.pde_residual(eid).max_residual for eid in ids}
    bad = [k for k, v in worst.items() if not v < 1e-7]
    assert record(8, "PDE residual catalog", not bad, time.time() - t0, 60,
                  f"{len(ids)} solutions, max residual {max(worst.values()):.1e}"
                  + (f", failing {bad}" if bad else ""))


def test_c09_martingale_unity():
    t0 = time.time()
    cfg = ex.ExperimentConfig(kappa=2.0, p=1.0, n_samples=500, seed=9)
    res = ex.martingale_unity_experiment(cfg)
    RUNS[9] = res
    r = res.report
    assert record(9, "martingale unity", res.passed, time.time() - t0, 600,
                  f"m(p/2) {r['mean']:.4f} +- {r['stderr']:.4f} (z {r['z']:.2f}, n {r['n']}), "
                  f"t=0 average {r['average_at_t0']:.15f}")


def test_c10_endpoint_decomposition():
    t0 = time.time()
    cfg = ex.ExperimentConfig(kappa=2.0, p=1.0, n_samples=2000, seed=7)
    res = ex.endpoint_decomposition_experiment(cfg)
    RUNS[10] = res
    assert record(10, "endpoint decomposition", res.passed, time.time() - t0, 1800,
                  f"chi2 p {res.report.p_value:.3f} (n {sum(res.report.counts)}), "
                  f"refined p {res.extra['refined'].p_value:.3f}")


def test_c11_reversibility():
    t0 = time.time()
    cfg = ex.ExperimentConfig(kappa=2.0, s=0.0, p=1.0, n_samples=500, seed=11)
    res = ex.reversibility_experiment(cfg)
    RUNS[11] = res
    ok = res.passed and res.extra["control_pass"]
    assert record(11, "reversibility", ok, time.time() - t0, 1800,
                  f"KS p {res.report.p_value:.3f} (n {res.report.n1}/{res.report.n2}), "
                  f"control p {res.extra['control'].p_value:.1e}")


def test_c12_determinism():
    t0 = time.time()
    missing = [n for n in (5, 6, 7, 9, 10, 11) if n not in RUNS]
    if missing:
        pytest.skip(f"criteria {missing} did not run in this session")
    same = {}
    params, e = RUNS[5]
    same[5] = drift.psi_q_mc(params, RngSeed(21, 2), 3.0, -1.0) == e
    params, est = RUNS[6]
    again = drift.lambda_s_grid(params, RngSeed(31, 0), 0.8, [0.3, 0.8, 2.0])
    same[6] = [a.value for a in again] == [est[(0.8, x)] for x in (0.3, 0.8, 2.0)]
    v, se = drift.average_shift(drift.FkParams.reversibility(2.0, s=1.0, n_paths=1000),
                                RngSeed(41, 1), 1.5)
    same[7] = (v, se) == RUNS[7][1.0]
    # experiments draw sample i from its own stream, so a prefix reruns on its own
    res = RUNS[9]
    cfg = res.config
    gam = ex.GammaFunction(cfg.kappa, cfg.seed)
    g_t, g_0 = ex._GammaAt(gam, cfg.p / 2), ex._GammaAt(gam, cfg.p)
    k = 20
    redo = [ex._martingale_sample((cfg, i, g_t, g_0))[0] for i in range(k)]
    same[9] = res.report["n"] == cfg.n_samples and np.array_equal(redo, res.raw["average"][:k])
    res = RUNS[10]
    cfg = res.config
    redo = [ex._endpoint_arg((cfg, i, cfg.stop)) for i in range(50)]
    same[10] = (res.raw["endpoint_arg"].size == cfg.n_samples
                and np.array_equal(redo, res.raw["endpoint_arg"][:50]))
    res = RUNS[11]
    cfg = res.config
    lam = ex.crossing_drift(cfg.kappa, cfg.s, cfg.p, cfg.stop, cfg.seed)
    ok11 = True
    for fam, which, key in ((ex.F_FORWARD, "first", "forward"),
                            (ex.F_REVERSED, "last", "reversed")):
        redo = [ex._mid_observable((cfg, lam, cfg.kappa, fam, i, which)) for i in range(10)]
        ok11 &= res.raw[key].size == cfg.n_samples and np.array_equal(redo, res.raw[key][:10])
    same[11] = ok11
    ok = all(same.values())
    assert record(12, "determinism", ok, time.time() - t0, None,
                  ", ".join(f"c{n} {'identical' if v else 'DIFFERENT'}" for n, v in same.items()))
