import math

import numpy as np
import pytest

from sle_lab import drift, specfun
from sle_lab.errors import BiasExceedsTolerance, PoleProximity
from sle_lab.stochastic import RngSeed

# 2 t H_I''/(t H_I' + 1) from mpmath jtheta derivatives (30 digits)
MP_K2_LAMBDA = {
    (0.8, 0.3): -4.1564136418415507691, (0.8, 0.8): -7.2032974310675016958,
    (0.8, 2.0): -7.8458801329094307861, (1.5, 0.3): -1.2742240305423685771,
    (1.5, 0.8): -2.8671852519756859344, (1.5, 2.0): -3.9930127270715351668,
    (3.0, 0.3): -0.31501512906798968769, (3.0, 0.8): -0.78958876054566450841,
    (3.0, 2.0): -1.2622885233413138629,
}


def test_params():
    p = drift.FkParams.reversibility(2.0)
    assert p.sigma == 1.0
    assert p.tau == pytest.approx(0.5 - math.sqrt(0.25 + 2.0))
    assert drift.FkParams.decomposition(3.0).sigma == pytest.approx(0.5 + 1 / 3)
    assert drift.FkParams.reversibility(4.0).tau == 0.0
    with pytest.raises(ValueError):
        drift.FkParams(2.0, 2.0)


@pytest.mark.parametrize("key", list(MP_K2_LAMBDA))
def test_closed_form_k2(key):
    v, se = drift.closed_form_drift(2.0).eval(*key)
    assert se == 0.0
    assert abs(v - MP_K2_LAMBDA[key]) < 1e-10 * max(1, abs(v))


def test_closed_form_k3_matches_catalog():
    lam = drift.closed_form_drift(3.0)
    for t, x in ((0.5, 0.4), (2.0, 1.7), (8.0, 3.0)):
        ref = drift.catalog_eval("k3_lambda", t, x).real
        assert abs(lam(t, x) - ref) < 1e-9 * max(1, abs(ref))


def test_psi_q_sigma_zero_is_one():
    est = drift.psi_q_mc(drift.FkParams.reversibility(4.0, n_paths=100), RngSeed(1), 1.0, 0.3)
    assert est.mean == 1.0 and est.stderr == 0.0


def test_psi_q_lower_bound_and_limit():
    params = drift.FkParams.reversibility(2.0, n_paths=4000)
    for t, x in ((0.5, 0.0), (1.0, 2.0), (3.0, -1.0)):
        e = drift.psi_q_mc(params, RngSeed(2), t, x)
        assert e.mean + 3 * e.stderr >= 1 - e.bias_bound
    for x in (0.0, math.pi / 2, math.pi):
        e = drift.psi_q_mc(params, RngSeed(3), 12.0, x)
        assert abs(e.mean - 1) < max(3 * e.stderr, 1e-3)


def test_bias_guard():
    params = drift.FkParams.reversibility(2.0, n_paths=200, T_max=0.25, target_stderr=1e-9)
    with pytest.raises(BiasExceedsTolerance):
        drift.psi_q_mc(params, RngSeed(4), 0.5, 0.0)


def test_horizon_rule():
    T = drift.horizon_for(1.0, 0.5, 1e-6)
    assert drift.tail_bias_bound(1.0, 0.5, T) <= 1e-6
    assert drift.tail_bias_bound(1.0, 0.5, T - 0.25) > 1e-6
    assert drift.horizon_for(1.0, 0.5, 1e-9) > T


def test_lambda_k2_point():
    params = drift.FkParams.reversibility(2.0, n_paths=10_000)
    v, se = drift.lambda_s(params, RngSeed(5), 1.5, 0.8)
    assert abs(v - MP_K2_LAMBDA[(1.5, 0.8)]) < 3 * se


def test_lambda_period_and_dual():
    params = drift.FkParams.reversibility(2.0, n_paths=2000, s=0.7)
    ests = drift.lambda_s_grid(params, RngSeed(6), 1.2, [0.5, 0.5 + 2 * math.pi])
    assert abs(ests[0].value - ests[1].value) < 3 * math.hypot(ests[0].stderr, ests[1].stderr)
    z = drift.dual_symmetry(params, RngSeed(7), 1.2, [0.4, 1.5, 3.0])
    assert np.all(np.abs(z) < 4)


def test_period_tail_reported():
    params = drift.FkParams.reversibility(2.0)
    assert drift.m_tail_bound(params, 1.5, 0.8) < 1e-20
    e = drift.lambda_s_grid(drift.FkParams.reversibility(2.0, n_paths=500), RngSeed(8), 1.5,
                            [0.8])[0]
    assert e.m_tail_bound >= 0 and e.bias_bound >= 0


def test_catalog_examples():
    for x in np.linspace(0.1, 6.1, 13):
        assert abs(drift.catalog_eval("k2_gamma", 20.0, x).real - 1) < 1e-6
    z = 0.7 + 0.2j
    g = drift.catalog_eval("k0_G", 1.3, z)
    assert abs(drift.catalog_eval("k163_F", 1.3, z) + g / 3) < 1e-13
    h2 = specfun.eval_ha(1.3, z / 2).value
    assert abs(g - (specfun.eval_ha(1.3, z).value - 2 * h2)) < 1e-12
    assert abs(drift.catalog_eval("k4_sin", 0.9, 0.4)) < 1e-15
    with pytest.raises(PoleProximity):
        drift.catalog_eval("k0_G", 1.0, 0.0)


def test_catalog_contents():
    needed = {"k2_gamma", "k2_xi3", "k4_gauss", "k4_exp", "k4_sin", "k4_theta", "k4_theta_I",
              "k3_gamma1", "k3_gamma2", "k3_gamma3", "k3_gamma4", "k3_gamma5", "k3_gamma6",
              "k0_G", "k0_G_I", "k163_F", "k163_F_I"}
    assert needed <= set(drift.CATALOG)


@pytest.mark.parametrize("eid", ["k0_G", "k4_theta_I", "k3_gamma1", "k2_xi3"])
def test_pde_residual_examples(eid):
    assert drift.pde_residual(eid).max_residual < 1e-7


def test_black_box_residual():
    f = lambda t, x: drift.catalog_eval("k2_gamma", t, x).real
    r = drift.pde_residual(f, "GammaDecomp", kappa=2.0,
                           grid=[(1.5, 0.7), (2.0, 2.2), (2.5, 4.0)])
    assert r.max_residual < 1e-5


def test_gamma_positive_and_transforms():
    for t in (0.3, 1.0, 4.0):
        for x in np.linspace(0, 2 * math.pi, 17):
            assert drift.catalog_eval("k2_gamma", t, x).real > 0
            assert drift.transform_consistency(t, x) < 1e-9


def _closed_table(nt, nx):
    cf = drift.closed_form_drift(2.0)
    tg = np.linspace(0.0, math.log(2.0), nt)
    xg = 2 * math.pi * np.arange(nx) / nx
    return cf, tg, xg, np.array([[cf(math.exp(a), x) for x in xg] for a in tg])


def test_grid_interpolation_order():
    from sle_lab import _mc
    rng = np.random.default_rng(1)
    pts = [(math.exp(rng.uniform(0, math.log(2))), rng.uniform(0, 2 * math.pi))
           for _ in range(100)]
    errs = []
    for nt, nx in ((6, 32), (12, 64)):
        cf, tg, xg, tab = _closed_table(nt, nx)
        errs.append(max(abs(_mc.grid_drift(t, x, tg, xg, tab) - cf(t, x)) for t, x in pts))
    # cubic stencils: halving both spacings should gain close to 16x
    assert errs[1] < errs[0] / 8
    assert errs[1] < 5e-3


def test_grid_drift_table():
    params = drift.FkParams.reversibility(2.0, n_paths=300)
    gd = drift.GridDrift(params, RngSeed(9), 1.0, 2.0, n_t=2, n_x=8)
    code, tg, xg, tab = gd.numba_spec()
    assert tab.shape == (2, 8)
    cf = drift.closed_form_drift(2.0)
    for i, a in enumerate(tg):
        for j, x in enumerate(xg):
            assert abs(tab[i, j] - cf(math.exp(a), x)) <= 4 * gd.stderr[i, j] + 1e-12
    assert np.all(np.isfinite(gd.probe_errors(np.random.default_rng(0), n_probe=2)))
