import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from pegcontact.control import (AdmittanceParams, AdmittanceState, admittance_update,
                                check_stability, pd_wrench, perturb_params)
from pegcontact.oracles import admittance_step_error, second_order_step


def test_equilibrium_is_exact():
    p = AdmittanceParams(f_down=0.0)
    x0 = np.array([0.01, -0.02, 0.03, 0.1, -0.05, 0.2])
    s = AdmittanceState.reset(x0)
    for _ in range(500):
        s = admittance_update(p, s, np.zeros(6), 1e-3)
    assert np.array_equal(s.x_d, x0)
    assert np.array_equal(s.xd_dot, np.zeros(6))


def test_force_setpoint_equilibrium():
    # F_ext,z == f_down balances the filter exactly
    p = AdmittanceParams()
    s = AdmittanceState.reset(np.zeros(6))
    for _ in range(100):
        s = admittance_update(p, s, [0, 0, p.f_down, 0, 0, 0], 1e-3)
    assert np.array_equal(s.x_d, np.zeros(6))


def test_steady_state_offset():
    M = (1.0,) * 3 + (0.01,) * 3
    K = (100.0,) * 3 + (20.0,) * 3
    D = tuple(2 * math.sqrt(m * k) for m, k in zip(M, K))
    p = AdmittanceParams(M_d=M, D_d=D, K_d=K, f_down=0.0)
    s = AdmittanceState.reset(np.zeros(6))
    for _ in range(5000):
        s = admittance_update(p, s, [0, 0, 10.0, 0, 0, 0], 1e-3)
    assert s.x_d[2] == pytest.approx(0.1, rel=0.01)


@pytest.mark.parametrize("zeta", [1.0, 0.7, 0.3, 2.5])
def test_step_response_closed_form(zeta):
    M = (1.0, 2.0, 0.5, 0.01, 0.02, 0.01)
    K = (500.0, 300.0, 800.0, 20.0, 10.0, 30.0)
    D = tuple(2 * zeta * math.sqrt(m * k) for m, k in zip(M, K))
    p = AdmittanceParams(M_d=M, D_d=D, K_d=K, f_down=3.0)
    err = admittance_step_error(p, [4.0, -2.0, 9.0, 0.05, -0.02, 0.1])
    assert err.max() < 1e-6


def test_closed_form_oracle_sanity():
    # the oracle itself: ODE residual by finite differences, and initial conditions
    for m, d, k in ((1.0, 2 * math.sqrt(500), 500.0), (1.0, 10.0, 500.0), (1.0, 100.0, 500.0)):
        t = np.linspace(0.0, 1.0, 20001)
        e = second_order_step(m, d, k, 7.0, t)
        h = t[1] - t[0]
        ed = np.gradient(e, h)
        edd = np.gradient(ed, h)
        res = m * edd + d * ed + k * e - 7.0
        assert np.abs(res[5:-5]).max() < 1e-2 * 7.0
        assert e[0] == pytest.approx(0.0, abs=1e-15)


@given(st.floats(-5, 5).filter(lambda a: abs(a) > 1e-3))
def test_linearity(a):
    p = AdmittanceParams(f_down=0.0)
    F = np.array([1.0, -2.0, 0.5, 0.02, 0.01, -0.03])
    s1 = AdmittanceState.reset(np.zeros(6))
    s2 = AdmittanceState.reset(np.zeros(6))
    for _ in range(50):
        s1 = admittance_update(p, s1, F, 1e-3)
        s2 = admittance_update(p, s2, a * F, 1e-3)
    assert np.allclose(s2.x_d, a * s1.x_d, rtol=1e-9, atol=1e-15)


def test_pd_examples():
    p = AdmittanceParams(k_p=(1000.0,) * 3 + (200.0,) * 3, k_d=(50.0,) * 3 + (6.0,) * 3)
    mg = 0.5 * 9.81
    w = pd_wrench(p, np.zeros(6), np.zeros(6), np.zeros(6), weight=mg)
    assert np.allclose(w.as_array(), [0, 0, mg, 0, 0, 0])
    w = pd_wrench(p, [0, 0, 0.01, 0, 0, 0], np.zeros(6), np.zeros(6), weight=mg)
    assert w.force[2] == pytest.approx(10.0 + mg)
    w = pd_wrench(p, np.zeros(6), np.zeros(6), [0, 0, 0.1, 0, 0, 0], weight=mg)
    assert w.force[2] == pytest.approx(-5.0 + mg)


def test_perturbation():
    base = AdmittanceParams()
    assert perturb_params(base, np.random.default_rng(0), 0.0) == base
    q = perturb_params(base, np.random.default_rng(4), 0.05)
    for name in ("M_d", "D_d", "K_d", "k_p", "k_d"):
        ratio = np.array(getattr(q, name)) / np.array(getattr(base, name))
        assert np.all(np.abs(ratio - 1) <= 0.05)
    assert perturb_params(base, np.random.default_rng(4), 0.05) == q
    with pytest.raises(ValueError):
        perturb_params(base, np.random.default_rng(0), 1.0)


def test_stability_check():
    check_stability(AdmittanceParams())
    assert AdmittanceParams().damping_ratios().min() >= 0.7
    with pytest.raises(ValueError):
        check_stability(AdmittanceParams(D_d=(1.0,) * 6))


def test_params_validation():
    with pytest.raises(ValueError):
        AdmittanceParams(K_d=(0.0,) * 6)
    with pytest.raises(ValueError):
        AdmittanceParams(f_down=-1.0)
