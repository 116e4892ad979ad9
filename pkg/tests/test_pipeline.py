import math

import numpy as np
import pytest

from pegcontact.control import AdmittanceParams
from pegcontact.errors import ApproachFailedError
from pegcontact.geometry import insertion_depth, label_offset, sample_contact_offset
from pegcontact.pipeline import (AssemblySetup, Episode, TrajectoryParams, run_alignment_insertion,
                                 run_approach, run_assembly_episode, run_estimation_sweep,
                                 sweep_angles, tilt_reference, tilt_reference_rates)
from pegcontact.sim import SimParams

TP = TrajectoryParams()
SP = SimParams()
CP = AdmittanceParams()


def _episode(geom, offset, tp=TP):
    return Episode.start(geom, SP, CP, offset, tp.approach_height)


def _opposite(geom, label):
    d = geom.class_direction(label)
    return min(range(1, geom.num_classes), key=lambda k: geom.class_direction(k) @ d)


def test_tilt_reference_examples():
    a = math.radians(15)
    assert tilt_reference(a, 0.0) == pytest.approx((0.0, a))
    assert tilt_reference(a, math.pi / 2) == pytest.approx((a, 0.0))
    th = sweep_angles(2000)
    r, p = tilt_reference(a, th)
    assert np.allclose(r**2 + p**2, a * a, rtol=1e-15, atol=0)
    assert th[0] == 0 and th[-1] < 2 * math.pi
    assert np.allclose(np.diff(th), 2 * math.pi / 2000)


def test_tilt_rates_match_differences():
    a, w, h = 0.2, 3.0, 1e-6
    th = np.linspace(0, 6, 13)
    (dr, dp), (ddr, ddp) = tilt_reference_rates(a, th, w)
    rp, pp = tilt_reference(a, th + w * h)
    rm, pm = tilt_reference(a, th - w * h)
    assert np.allclose(dr, (rp - rm) / (2 * h), atol=1e-7)
    assert np.allclose(dp, (pp - pm) / (2 * h), atol=1e-7)
    r0, p0 = tilt_reference(a, th)
    assert np.allclose(ddr, (rp - 2 * r0 + rm) / h**2, atol=1e-3)
    assert np.allclose(ddp, (pp - 2 * p0 + pm) / h**2, atol=1e-3)


def test_trajectory_validation():
    with pytest.raises(ValueError):
        TrajectoryParams(N=50)
    with pytest.raises(ValueError):
        TrajectoryParams(alpha=1.0)
    with pytest.raises(ValueError):
        TrajectoryParams(max_attempts=0)


def test_approach_zero_offset(square):
    st = run_approach(_episode(square, (0.0, 0.0, 0.0)), TP)
    assert max(abs(st.pose[3]), abs(st.pose[4])) < math.radians(0.5)


def test_approach_flat_surface_force_balance(square):
    st = run_approach(_episode(square, (square.hole_side, 0.0, 0.0)), TP)
    fz = st.last_contact_wrench.as_array()[2]
    # the filter regulates the contact load to the force setpoint
    assert abs(fz - CP.f_down) < 0.1 * CP.f_down
    assert max(abs(st.pose[3]), abs(st.pose[4])) < math.radians(0.5)


def test_approach_timeout(square):
    tp = TrajectoryParams(approach_height=1.0, approach_timeout=0.5)
    with pytest.raises(ApproachFailedError):
        run_approach(_episode(square, (0.0, 0.0, 0.0), tp), tp)


@pytest.mark.parametrize("geom_name", ["square", "pentagon"])
@pytest.mark.parametrize("offset", [(0.012, -0.007, 0.02), (-0.018, 0.004, -0.03)])
def test_sweep_trace_and_tracking(request, geom_name, offset):
    geom = request.getfixturevalue(geom_name)
    ep = _episode(geom, offset)
    run_approach(ep, TP)
    tr = run_estimation_sweep(ep, TP)
    assert tr.shape == (TP.N, 12) and np.all(np.isfinite(tr))
    r, p = tilt_reference(TP.alpha, sweep_angles(TP.N))
    rms = math.sqrt(np.mean((tr[:, 3] - r) ** 2 + (tr[:, 4] - p) ** 2))
    assert rms < 0.2 * TP.alpha
    assert ep.sim.max_penetration < 0.05 * geom.hole_side
    # ends flat again
    assert max(abs(ep.sim.state.pose[3]), abs(ep.sim.state.pose[4])) < math.radians(1.0)


def test_sweep_determinism(square):
    def once():
        ep = _episode(square, (0.009, 0.013, -0.01))
        run_approach(ep, TP)
        return run_estimation_sweep(ep, TP)
    assert np.array_equal(once(), once())


def test_centered_label_inserts(square):
    ep = _episode(square, (0.0, 0.0, 0.0))
    run_approach(ep, TP)
    ok, depth = run_alignment_insertion(ep, 0, TP)
    assert ok and depth >= 0.8 * square.hole_depth


def test_correct_label_inserts(square):
    ep = _episode(square, (0.015, 0.0, 0.0))
    run_approach(ep, TP)
    label = label_offset(square, 0.015, 0.0)
    ok, depth = run_alignment_insertion(ep, label, TP)
    assert ok and depth >= 0.8 * square.hole_depth


def test_wrong_label_fails(square):
    ep = _episode(square, (0.015, 0.0, 0.0))
    run_approach(ep, TP)
    wrong = _opposite(square, label_offset(square, 0.015, 0.0))
    ok, depth = run_alignment_insertion(ep, wrong, TP)
    assert not ok and depth < 0.8 * square.hole_depth


def _check_result(res, geom, tp=TP):
    assert res.success == (res.final_insertion_depth >= tp.success_fraction * geom.hole_depth)
    assert 1 <= res.attempts <= tp.max_attempts
    assert len(res.attempt_offsets) == res.attempts == len(res.predicted_labels)
    for a, b in zip(res.attempt_offsets, res.attempt_offsets[1:]):
        assert abs(a[0] - b[0]) <= tp.restart_delta and abs(a[1] - b[1]) <= tp.restart_delta
        assert a[2] == b[2]


def test_first_try_success(square):
    setup = AssemblySetup(square)
    label = label_offset(square, 0.015, 0.0)
    res = run_assembly_episode(setup, np.random.default_rng(0), lambda tr, k: label,
                               (0.015, 0.0, 0.0))
    assert res.success and res.attempts == 1
    _check_result(res, square)


def test_fault_injection_second_attempt(square):
    setup = AssemblySetup(square)
    right = label_offset(square, 0.015, 0.0)
    wrong = _opposite(square, right)
    res = run_assembly_episode(setup, np.random.default_rng(1),
                               lambda tr, k: wrong if k == 1 else right, (0.015, 0.0, 0.0))
    assert res.success and res.attempts == 2
    assert res.predicted_labels == [wrong, right]
    _check_result(res, square)


def test_always_wrong_exhausts_attempts(square):
    setup = AssemblySetup(square)
    wrong = _opposite(square, label_offset(square, 0.015, 0.0))
    res = run_assembly_episode(setup, np.random.default_rng(2), lambda tr, k: wrong,
                               (0.015, 0.0, 0.0))
    assert not res.success and res.attempts == TP.max_attempts == 3
    _check_result(res, square)
    rec = res.as_record()
    assert rec["attempts"] == 3 and rec["success"] is False


def test_success_iff_depth_random(square):
    setup = AssemblySetup(square)
    rng = np.random.default_rng(9)
    for _ in range(3):
        res = run_assembly_episode(setup, rng, lambda tr, k: int(rng.integers(0, 9)))
        _check_result(res, square)
        assert insertion_depth(square, np.r_[0, 0, 0.03, 0, 0, 0]) == 0


def test_always_wrong_campaign_fails(square):
    setup = AssemblySetup(square)
    rng = np.random.default_rng(21)
    wins = 0
    for _ in range(4):
        off = sample_contact_offset(rng)
        while np.hypot(off[0], off[1]) < 0.008:
            off = sample_contact_offset(rng)
        wrong = _opposite(square, label_offset(square, off[0], off[1]))
        wins += run_assembly_episode(setup, rng, lambda tr, k: wrong, off).success
    assert wins == 0
