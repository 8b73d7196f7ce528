import math

import numpy as np
import pytest

from sle_lab import specfun as S
from sle_lab.errors import PoleProximity

# independent values: mpmath jtheta quotients at 30 digits (Theta = theta_1(z/2|q),
# Theta_I = theta_4(z/2|q), q = e^{-t}), H = 2 Theta'/Theta
MP_H = {
    (2.0, 1 + 0.5j): 1.5054245418273146745 - 0.86693451624145132962j,
    (3.0, 0.1): 19.98432776453536569,
    (1.5, 0.8): 2.5258343694913023566,
    (0.3, 0.7): 8.1523762242104248605,
}
MP_H_I = {
    (2.0, 1 + 0.5j): 0.62445649380446797169 + 0.095919175136091443295j,
    (3.0, 0.1): 0.022056951095147869608,
    (1.5, 0.8): 0.90057251772802212786,
    (0.3, 0.7): 8.1249261217285820156,
}
MP_RA = {1.0: 0.64493396123208906526, 2.0: -0.089277049891704591464,
         5.0: -0.16648504221227591936}
MP_CAP_RA_2 = -0.037654449199965641513
MP_THETA_I_3_PI = 1.0995864251641936


@pytest.mark.parametrize("key", list(MP_H))
def test_kernels_match_theta_quotients(key):
    t, z = key
    assert abs(S.eval_ha(t, z).value - MP_H[key]) < 1e-10 * max(1, abs(MP_H[key]))
    assert abs(S.eval_ha_I(t, z).value - MP_H_I[key]) < 1e-10 * max(1, abs(MP_H_I[key]))


def test_infinite_modulus():
    assert abs(S.eval_ha(math.inf, math.pi / 2).value - 1.0) < 1e-15


def test_taylor_coefficient():
    eps = np.finfo(float).eps
    for t in (1.0, 2.0, 5.0):
        ref = None
        for z in (1e-2, 1e-3, 1e-4):
            r = (S.eval_ha(t, z).value - 2 / z - S.eval_rA(t) * z) / z ** 3
            ref = abs(r) if ref is None else ref
            # rounding of a value near 2/z contributes up to ~2 eps / z^4
            assert abs(r) <= 2 * ref + 1 + 4 * eps / z ** 4


def test_h_i_odd_and_periodic():
    a = S.eval_ha_I(5, 1.3).value
    b = S.eval_ha_I(5, -1.3).value
    assert abs(a + b) < 1e-12
    assert abs(S.eval_ha_I(3, 0.4 + 2 * math.pi).value - S.eval_ha_I(3, 0.4).value) < 1e-12


def test_translation_laws():
    t, z = 1.7, 0.6 + 0.3j
    assert abs(S.eval_ha(t, z + 2 * math.pi).value - S.eval_ha(t, z).value) < 1e-11
    assert abs(S.eval_ha_I(t, z + 2j * t).value - (S.eval_ha_I(t, z).value - 2j)) < 1e-11


def test_estimation_bound_grid():
    for y in (0.0, 0.5, 1.5):
        for h in (0, 1, 2, 3):
            for t in np.arange(y + h + 2, y + 20.5, 1.0):
                z = complex(0.9, y)
                v = abs(S.eval_ha_I(float(t), z, order=h).value)
                assert v < S.estimation_bound(float(t), z, h)


def test_estimation_bound_example():
    assert abs(S.eval_ha_I(4, 0.7 + 0.5j).value) < 5.5 * math.exp(0.5 - 4)


def test_pole_guard():
    with pytest.raises(PoleProximity):
        S.eval_ha(1.0, 0.0)
    with pytest.raises(PoleProximity):
        S.eval_ha_I(1.0, 1j)


def test_theta_product_and_limits():
    assert abs(S.eval_theta(3, math.pi, "Theta_I").value - MP_THETA_I_3_PI) < 1e-12
    direct = np.prod([(1 - math.exp(-6 * m)) * (1 + math.exp(-3 * (2 * m - 1))) ** 2
                      for m in range(1, 51)])
    assert abs(S.eval_theta(3, math.pi, "Theta_I").value - direct) < 1e-12
    assert abs(S.eval_theta(20, 0.3, "Theta_I").value - 1) < 1e-8
    assert abs(S.eval_theta(3, 0.8 + 0.2j, "Theta_I").value
               - S.eval_theta(3, -0.8 - 0.2j, "Theta_I").value) < 1e-12


def test_kernel_theta_identity_grid():
    for t in (0.7, 1.0, 2.5, 4.0):
        for z in (0.4, 1.9 + 0.3j, 3.0 - 0.6j, 5.5 + 0.1j):
            for name, fn in (("Theta", S.eval_ha), ("Theta_I", S.eval_ha_I)):
                th = S.eval_theta(t, z, name).value
                d1 = S.eval_theta(t, z, name, order=1).value
                v = fn(t, z).value
                assert abs(v - 2 * d1 / th) < 1e-9 * max(1, abs(v))


def test_heat_and_kernel_pde():
    for t in np.linspace(1, 5, 5):
        for x in np.linspace(0.05, 2 * math.pi - 0.05, 9):
            th_t = S.eval_theta(t, x, "Theta_I", dt_order=1).value
            th_xx = S.eval_theta(t, x, "Theta_I", order=2).value
            assert abs(th_t - th_xx) < 1e-8
            h = S.eval_ha_I(t, x).value
            h1 = S.eval_ha_I(t, x, order=1).value
            h2 = S.eval_ha_I(t, x, order=2).value
            ht = S.eval_ha_I(t, x, dt_order=1).value
            assert abs(ht - h2 - h1 * h) < 1e-8


def test_r_a_values():
    assert S.eval_rA(math.inf) == -1 / 6
    for t, v in MP_RA.items():
        assert abs(S.eval_rA(t) - v) < 1e-12
    assert S.eval_RA(math.inf) == 0.0
    assert abs(S.eval_RA(2.0) - MP_CAP_RA_2) < 1e-10
    h = 1e-4
    d = (S.eval_RA(2 + h) - S.eval_RA(2 - h)) / (2 * h)
    assert abs(d - (S.eval_rA(2.0) + 1 / 6)) < 1e-6


def test_rescaled_kernels():
    assert abs(S.eval_ha_rescaled(2, 0.0, "H_I").value) < 1e-14
    jump = S.eval_ha_rescaled(2, 0.4 + 12, "H_I").value - S.eval_ha_rescaled(2, 0.4, "H_I").value
    assert abs(jump - 6) < 1e-12
    assert abs(S.eval_ha_rescaled(6, 3.0, "H_Iq").value) <= 2 * math.exp(-6) / (1 - math.exp(-12))


def test_rescaled_modular_consistency():
    for t in (0.8, 2.0, 4.0):
        for z in (0.3, 1.1 + 0.4j):
            lhs = S.eval_ha_rescaled(t, z, "H_I").value
            rhs = math.pi / t * S.eval_ha_I(math.pi ** 2 / t, math.pi * z / t).value + z / t
            assert abs(lhs - rhs) < 1e-10


def test_rescaled_q_bounds_grid():
    for t in np.linspace(0.5, 10, 8):
        for x in np.linspace(-3 * t, 3 * t, 9):
            for n in (0, 1, 2):
                v = abs(S.eval_ha_rescaled(float(t), float(x), "H_Iq", order=n).value)
                assert v <= S.ha_iq_bound(float(t), float(x), n) * (1 + 1e-12)
                c = max(abs(x) / t, 1e-9) * (1 + 1e-12)
                assert v <= S.ha_iq_bound(float(t), float(x), n, c=c) * (1 + 1e-9) + 1e-15
