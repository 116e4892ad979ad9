"""Admittance controller: an outer mass-spring-damper filter on the external
wrench produces the reference pose x_d, an inner PD loop tracks it.

The filter state is kept as the deviation e = x_d - x_0 from the desired
trajectory, which obeys

    M_d e'' + D_d e' + K_d e = F_ext   (per axis)

and is advanced with the exact zero-order-hold discretization, so a step
response reproduces the continuous solution to rounding error. The constant
downward force is realized as a z-force setpoint: the filter is driven by
F_ext,z - f_down, so it settles where the contact pushes back with f_down.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from functools import lru_cache

import numpy as np
import scipy.linalg
from numba import njit

from .sim import Wrench, generalized_to_torque

Vec6 = tuple[float, float, float, float, float, float]


def _critical(m: Vec6, k: Vec6) -> Vec6:
    return tuple(2.0 * math.sqrt(a * b) for a, b in zip(m, k))


_M = (1.0, 1.0, 1.0, 0.01, 0.01, 0.01)
_K = (500.0, 500.0, 500.0, 20.0, 20.0, 20.0)


@dataclass(frozen=True)
class AdmittanceParams:
    M_d: Vec6 = _M
    D_d: Vec6 = _critical(_M, _K)
    K_d: Vec6 = _K
    k_p: Vec6 = (4e3, 4e3, 4e3, 200.0, 200.0, 200.0)
    k_d: Vec6 = (120.0, 120.0, 120.0, 6.0, 6.0, 6.0)
    f_down: float = 5.0

    def __post_init__(self):
        for name in ("M_d", "D_d", "K_d", "k_p", "k_d"):
            v = tuple(float(x) for x in getattr(self, name))
            if len(v) != 6 or not all(math.isfinite(x) and x > 0 for x in v):
                raise ValueError(f"{name} must hold six positive entries, got {v}")
            object.__setattr__(self, name, v)
        if not (self.f_down >= 0):
            raise ValueError("f_down must be non-negative")

    def damping_ratios(self) -> np.ndarray:
        return np.array(self.D_d) / (2.0 * np.sqrt(np.array(self.M_d) * np.array(self.K_d)))


def check_stability(params: AdmittanceParams, min_ratio: float = 0.7):
    ratios = params.damping_ratios()
    if ratios.min() < min_ratio:
        raise ValueError(f"admittance damping ratio {ratios.min():.3f} below {min_ratio}")


@lru_cache(maxsize=64)
def zoh_matrices(params: AdmittanceParams, dt: float) -> tuple[np.ndarray, np.ndarray]:
    """Per-axis discrete transition (6, 2, 2) and input (6, 2) matrices."""
    phi = np.empty((6, 2, 2))
    gam = np.empty((6, 2))
    for i in range(6):
        m, d, k = params.M_d[i], params.D_d[i], params.K_d[i]
        aug = np.array([[0.0, 1.0, 0.0], [-k / m, -d / m, 1.0 / m], [0.0, 0.0, 0.0]])
        ex = scipy.linalg.expm(aug * dt)
        phi[i] = ex[:2, :2]
        gam[i] = ex[:2, 2]
    phi.setflags(write=False)
    gam.setflags(write=False)
    return phi, gam


@njit(cache=True)
def admittance_kernel(e, ed, fgen, f_down, phi, gam):
    """Advance the deviation state (e, e') in place under generalized force fgen."""
    for i in range(6):
        f = fgen[i] - f_down if i == 2 else fgen[i]
        a = phi[i, 0, 0] * e[i] + phi[i, 0, 1] * ed[i] + gam[i, 0] * f
        b = phi[i, 1, 0] * e[i] + phi[i, 1, 1] * ed[i] + gam[i, 1] * f
        e[i] = a
        ed[i] = b


@njit(cache=True)
def _wrap(a):
    a = (a + math.pi) % (2.0 * math.pi) - math.pi
    if a == -math.pi:
        a = math.pi
    return a


@njit(cache=True)
def pd_kernel(x_d, x, xdot, kp, kd, weight, out):
    """Per-axis PD law; rotational outputs are mapped to a world torque."""
    for i in range(3):
        out[i] = kp[i] * (x_d[i] - x[i]) - kd[i] * xdot[i]
    out[2] += weight
    q = np.empty(3)
    for i in range(3):
        q[i] = kp[3 + i] * _wrap(x_d[3 + i] - x[3 + i]) - kd[3 + i] * xdot[3 + i]
    tau = generalized_to_torque(x[3:6], q)
    out[3], out[4], out[5] = tau[0], tau[1], tau[2]


@dataclass(frozen=True)
class AdmittanceState:
    x_d: np.ndarray
    xd_dot: np.ndarray
    x_0: np.ndarray
    x0_dot: np.ndarray = field(default_factory=lambda: np.zeros(6))
    x0_ddot: np.ndarray = field(default_factory=lambda: np.zeros(6))

    @classmethod
    def reset(cls, x_0, x0_dot=None, x0_ddot=None) -> "AdmittanceState":
        x_0 = np.array(x_0, dtype=float)
        x0_dot = np.zeros(6) if x0_dot is None else np.array(x0_dot, dtype=float)
        x0_ddot = np.zeros(6) if x0_ddot is None else np.array(x0_ddot, dtype=float)
        return cls(x_0.copy(), x0_dot.copy(), x_0, x0_dot, x0_ddot)

    def deviation(self) -> tuple[np.ndarray, np.ndarray]:
        e = self.x_d - self.x_0
        e[3:] = _wrap_angles(e[3:])
        return e, self.xd_dot - self.x0_dot


def advance_reference(astate: AdmittanceState, x_0, x0_dot=None, x0_ddot=None) -> AdmittanceState:
    """Move to the next trajectory sample, carrying the filter deviation along."""
    e, ed = astate.deviation()
    x_0 = np.array(x_0, dtype=float)
    x0_dot = np.zeros(6) if x0_dot is None else np.array(x0_dot, dtype=float)
    x0_ddot = np.zeros(6) if x0_ddot is None else np.array(x0_ddot, dtype=float)
    return AdmittanceState(_compose(x_0, e), x0_dot + ed, x_0, x0_dot, x0_ddot)


def _wrap_angles(a):
    # only touch out-of-range entries so in-range values stay bit-exact
    out = np.array(a, dtype=float)
    bad = (out > np.pi) | (out <= -np.pi)
    out[bad] = (out[bad] + np.pi) % (2 * np.pi) - np.pi
    out[out == -np.pi] = np.pi
    return out


def _compose(x_0, e):
    x = x_0 + e
    x[3:] = _wrap_angles(x[3:])
    return x


def admittance_update(params: AdmittanceParams, astate: AdmittanceState, F_ext, dt: float
                      ) -> AdmittanceState:
    """One filter step with the trajectory sample held fixed.

    ``F_ext`` is the external wrench per controlled axis (a :class:`Wrench` or
    6-vector); rotational components act on the roll/pitch/yaw axes.
    """
    f = F_ext.as_array() if isinstance(F_ext, Wrench) else np.asarray(F_ext, dtype=float)
    phi, gam = zoh_matrices(params, float(dt))
    e, ed = astate.deviation()
    admittance_kernel(e, ed, f, params.f_down, phi, gam)
    return replace(astate, x_d=_compose(astate.x_0, e), xd_dot=astate.x0_dot + ed)


def pd_wrench(params: AdmittanceParams, x_d, x, xdot, weight: float = 0.0) -> Wrench:
    """F = k_p (x_d - x) - k_d xdot per axis, plus ``weight`` on z (gravity compensation).

    ``xdot`` holds linear velocity and Euler-angle rates. Rotational outputs
    are generalized forces on the Euler axes, returned as the equivalent world
    torque at the current attitude (identical at zero tilt).
    """
    out = np.empty(6)
    pd_kernel(np.asarray(x_d, float), np.asarray(x, float), np.asarray(xdot, float),
              np.array(params.k_p), np.array(params.k_d), float(weight), out)
    return Wrench.from_array(out)


def perturb_params(params: AdmittanceParams, rng: np.random.Generator, fraction: float
                   ) -> AdmittanceParams:
    """Scale every diagonal gain by an independent factor in [1 - fraction, 1 + fraction]."""
    if not 0 <= fraction < 1:
        raise ValueError("fraction must lie in [0, 1)")
    out = {}
    for name in ("M_d", "D_d", "K_d", "k_p", "k_d"):
        factors = rng.uniform(1.0 - fraction, 1.0 + fraction, size=6)
        out[name] = tuple(float(v) for v in np.array(getattr(params, name)) * factors)
    return replace(params, **out)
