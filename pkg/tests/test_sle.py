import math

import numpy as np
import pytest

from sle_lab import drift, sle
from sle_lab.errors import NotConverged
from sle_lab.loewner import Trace
from sle_lab.stochastic import RngSeed

LAM2 = drift.closed_form_drift(2.0)


def plain(seed, p=1.0, dt=1e-3, **kw):
    return sle.SleSpec(sle.AnnulusPlain(p), 2.0, dt, RngSeed(seed), **kw)


def test_spec_validation():
    with pytest.raises(ValueError):
        plain(0, t_horizon=1.5)
    with pytest.raises(ValueError):
        sle.SleSpec(sle.Radial(), -1.0, 1e-3, RngSeed(0))
    assert plain(0).horizon == pytest.approx(0.99)


def test_quadratic_variation_rate():
    n, t = 1000, 0.5
    qv = np.array([sle.quadratic_variation(sle.sample(plain(i, trace_times=())), t)
                   for i in range(n)])
    se = qv.std(ddof=1) / math.sqrt(n)
    assert abs(qv.mean() - 2.0 * t) < 3 * se


def test_marked_start_point():
    spec = sle.SleSpec(sle.AnnulusMarked(1.0, LAM2, x0=0.4), 2.0, 1e-3, RngSeed(1),
                       trace_times=(0.0, 0.1))
    s = sle.sample(spec)
    assert s.aborted is None
    assert abs(s.trace.points[0] - np.exp(0.4j)) <= 1.01 * s.trace.tip_offset_eps[0]


def test_whole_plane_start_near_origin():
    t0 = -8.0
    spec = sle.SleSpec(sle.WholePlane(0.0, t0), 2.0, 1e-3, RngSeed(2),
                       trace_times=(t0, t0 + 1.0, 0.0))
    s = sle.sample(spec)
    assert abs(s.trace.points[0]) < 4 * math.exp(t0) * (1 + 1e-6)
    assert abs(s.trace.points[1]) < 4 * math.exp(t0 + 1.0) * (1 + 1e-6)


def test_rotation_equivariance():
    spec = plain(3, n_trace=8)
    a = sle.sample(spec).trace.points
    b = sle.sample(sle.rotate_plain(spec, 0.9)).trace.points
    assert np.max(np.abs(b - np.exp(0.9j) * a)) < 1e-8


def test_endpoint_not_converged_constructed():
    s = sle.sample(plain(5, n_trace=1))
    e = sle.endpoint(s)
    assert abs(abs(e.point) - math.exp(-1.0)) < 1e-12 and e.target_distance == 0
    # a terminal point at radius 0.9 with 1e-4 of modulus left is far outside 10 sqrt(1e-4)
    far = Trace(np.array([1.0 - 1e-4]), np.array([0.9 + 0j]), s.trace.tip_offset_eps)
    with pytest.raises(NotConverged):
        sle.endpoint(sle.SleSample(s.spec, s.driving, None, far))


def test_endpoint_refinement_toward_marked_point():
    n = 500
    med = []
    for delta in (0.04, 0.02):
        d = []
        for i in range(n):
            spec = sle.SleSpec(sle.AnnulusMarked(1.0, LAM2), 2.0, 1e-3, RngSeed(6, i),
                               t_horizon=1.0 - delta, n_trace=1)
            e = sle.endpoint(sle.sample(spec), sle.Target.MarkedPoint)
            d.append(abs(math.remainder(e.arg, 2 * math.pi)))
        med.append(np.median(d))
    assert med[1] < med[0]


def test_plain_endpoints_spread():
    args = [sle.endpoint(sle.sample(plain(i, n_trace=1))).arg for i in range(500)]
    counts, _ = np.histogram(np.mod(args, 2 * math.pi), bins=16, range=(0, 2 * math.pi))
    assert counts.max() / 500 < 0.5


def test_simpleness_proxy():
    ok = 0
    for i in range(200):
        s = sle.sample(plain(100 + i, t_horizon=0.5, n_trace=40, tip_offset_eps=1e-4))
        ok += sle.min_self_distance(s.trace.points) > 1e-4
    assert ok >= 0.95 * 200


def test_marked_track_consistency():
    spec = sle.SleSpec(sle.AnnulusMarked(1.0, LAM2, x0=1.0), 2.0, 1e-3, RngSeed(7),
                       trace_times=())
    s = sle.sample(spec)
    worst, used = sle.marked_track_check(s)
    assert used >= 4
    assert worst < 5 * spec.solver_cfg.rel_tol


def test_radial_and_disc_samples():
    s = sle.sample(sle.SleSpec(sle.Radial(0.5), 2.0, 1e-3, RngSeed(8), n_trace=4))
    assert np.all(np.abs(s.trace.points) <= 1 + 1e-9)
    d = sle.sample(sle.SleSpec(sle.DiscMarked(LAM2), 2.0, 1e-2, RngSeed(9), n_trace=4))
    assert d.marked_track is not None
    assert np.all(np.abs(d.trace.points) <= 1 + 1e-9)
