"""Closed-loop execution: admittance filter + PD + peg dynamics per control step.

:func:`drive` runs a whole reference segment inside one compiled loop. It is
built from the same compiled pieces as the public :func:`~pegcontact.sim.step`,
:func:`~pegcontact.control.admittance_update` and
:func:`~pegcontact.control.pd_wrench`, and :func:`drive_reference` replays the
identical sequence through those public functions (used to cross-check).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numba import njit

from .control import (AdmittanceParams, AdmittanceState, admittance_kernel, admittance_update,
                      advance_reference, pd_kernel, pd_wrench, zoh_matrices)
from .geometry import PegHoleGeometry
from .sim import (STATUS_OK, ContactBuffers, SimParams, SimState, Wrench, euler_rates,
                  integrate_kernel, measure, raise_for_status, step, torque_to_generalized)

STOP_NONE = 0
STOP_FORCE_ABOVE = 1     # contact Fz >= p0
STOP_FORCE_SETTLED = 2   # |Fz - p0| < p1 for p2 consecutive steps
STOP_TIP_BELOW = 3       # lowest bottom point z < p0
STOP_INSERTED = 4        # bottom face over the opening (tolerance p1) and depth >= p0


@njit(cache=True)
def _tip_z(pose, bottom, n_vertices):
    c1, s1 = math.cos(pose[3]), math.sin(pose[3])
    c2, s2 = math.cos(pose[4]), math.sin(pose[4])
    # third row of Rz Ry Rx
    r20, r21, r22 = -s2, c2 * s1, c2 * c1
    low = np.inf
    for i in range(n_vertices):
        z = pose[2] + r20 * bottom[i, 0] + r21 * bottom[i, 1] + r22 * bottom[i, 2]
        if z < low:
            low = z
    return low


@njit(cache=True)
def _inserted_depth(pose, bottom, n_vertices, hole_n, hole_b, tol):
    c1, s1 = math.cos(pose[3]), math.sin(pose[3])
    c2, s2 = math.cos(pose[4]), math.sin(pose[4])
    c3, s3 = math.cos(pose[5]), math.sin(pose[5])
    low = np.inf
    for i in range(n_vertices):
        sx, sy, sz = bottom[i, 0], bottom[i, 1], bottom[i, 2]
        wx = pose[0] + c3 * c2 * sx + (c3 * s2 * s1 - s3 * c1) * sy + (c3 * s2 * c1 + s3 * s1) * sz
        wy = pose[1] + s3 * c2 * sx + (s3 * s2 * s1 + c3 * c1) * sy + (s3 * s2 * c1 - c3 * s1) * sz
        wz = pose[2] - s2 * sx + c2 * s1 * sy + c2 * c1 * sz
        for j in range(hole_n.shape[0]):
            if hole_n[j, 0] * wx + hole_n[j, 1] * wy - hole_b[j] > tol:
                return 0.0
        if wz < low:
            low = wz
    return max(0.0, -low)


@njit(cache=True)
def rollout_kernel(pose, vel, cw, e, ed, x0, kp, kd, weight, f_down, phi, gam, sp, nsub,
                   bottom, peg_n, peg_b, half_len, rim, rim_nrm, hole_n, hole_b, depth,
                   pos, nrm, pen, fid, fn, ft, n_vertices, stop_mode, stop_p, record, diag):
    """Run up to len(x0) control steps; returns (steps executed, status, stopped flag).

    ``diag`` receives (max penetration, max friction-cone excess) over the run.
    """
    fgen = np.empty(6)
    x_d = np.empty(6)
    xdot = np.empty(6)
    applied = np.empty(6)
    settled = 0
    for i in range(x0.shape[0]):
        fgen[0], fgen[1], fgen[2] = cw[0], cw[1], cw[2]
        q = torque_to_generalized(pose[3:6], cw[3:6])
        fgen[3], fgen[4], fgen[5] = q[0], q[1], q[2]
        admittance_kernel(e, ed, fgen, f_down, phi, gam)
        for j in range(6):
            x_d[j] = x0[i, j] + e[j]
        for j in range(3, 6):
            a = (x_d[j] + math.pi) % (2.0 * math.pi) - math.pi
            x_d[j] = math.pi if a == -math.pi else a
        rates = euler_rates(pose[3:6], vel[3:6])
        xdot[0], xdot[1], xdot[2] = vel[0], vel[1], vel[2]
        xdot[3], xdot[4], xdot[5] = rates[0], rates[1], rates[2]
        pd_kernel(x_d, pose, xdot, kp, kd, weight, applied)
        status, mp, ex = integrate_kernel(pose, vel, applied, sp, nsub, bottom, peg_n, peg_b,
                                          half_len, rim, rim_nrm, hole_n, hole_b, depth, pos, nrm, pen,
                                          fid, fn, ft, cw)
        if mp > diag[0]:
            diag[0] = mp
        if ex > diag[1]:
            diag[1] = ex
        for j in range(6):
            record[i, j] = pose[j]
            record[i, 6 + j] = cw[j]
        if status != STATUS_OK:
            return i + 1, status, False
        if stop_mode == STOP_FORCE_ABOVE:
            if cw[2] >= stop_p[0]:
                return i + 1, status, True
        elif stop_mode == STOP_FORCE_SETTLED:
            if abs(cw[2] - stop_p[0]) < stop_p[1]:
                settled += 1
                if settled >= stop_p[2]:
                    return i + 1, status, True
            else:
                settled = 0
        elif stop_mode == STOP_TIP_BELOW:
            if _tip_z(pose, bottom, n_vertices) < stop_p[0]:
                return i + 1, status, True
        elif stop_mode == STOP_INSERTED:
            if _inserted_depth(pose, bottom, n_vertices, hole_n, hole_b, stop_p[1]) >= stop_p[0]:
                return i + 1, status, True
    return x0.shape[0], STATUS_OK, False


class Simulator:
    """One peg/hole world: geometry, physical parameters and the evolving state."""

    def __init__(self, geom: PegHoleGeometry, params: SimParams, state: SimState):
        self.geom = geom
        self.params = params
        self.state = state
        self.buffers = ContactBuffers(geom)
        self.max_penetration = 0.0
        self.cone_excess = -np.inf
        self.steps = 0

    @property
    def weight(self) -> float:
        return self.params.mass * self.params.gravity

    def step(self, applied: Wrench) -> SimState:
        self.state = step(self.geom, self.params, self.state, applied, self.buffers)
        self.steps += 1
        return self.state


class AdmittanceController:
    """Filter deviation state plus gains; x_d = x_0 + deviation."""

    def __init__(self, params: AdmittanceParams, dt: float, x_0):
        self.params = params
        self.dt = dt
        self.phi, self.gam = zoh_matrices(params, float(dt))
        self.kp = np.array(params.k_p)
        self.kd = np.array(params.k_d)
        self.e = np.zeros(6)
        self.ed = np.zeros(6)
        self.x_0 = np.array(x_0, dtype=float)

    def reset(self, x_0):
        self.e[:] = 0.0
        self.ed[:] = 0.0
        self.x_0 = np.array(x_0, dtype=float)

    @property
    def x_d(self) -> np.ndarray:
        x = self.x_0 + self.e
        x[3:] = (x[3:] + np.pi) % (2 * np.pi) - np.pi
        return x

    def as_state(self) -> AdmittanceState:
        return AdmittanceState(self.x_d, self.ed.copy(), self.x_0.copy())


@dataclass
class DriveResult:
    steps: int
    trace: np.ndarray  # (steps, 12) measurements after each step
    stopped: bool


def drive(sim: Simulator, ctrl: AdmittanceController, x0: np.ndarray, stop_mode: int = STOP_NONE,
          stop_params=(0.0, 0.0, 0.0)) -> DriveResult:
    """Track the reference rows of ``x0`` (K, 6) until done or the stop condition fires."""
    x0 = np.ascontiguousarray(x0, dtype=float)
    if x0.ndim != 2 or x0.shape[1] != 6:
        raise ValueError("reference must be (K, 6)")
    g = sim.geom
    pose = np.array(sim.state.pose, dtype=float)
    vel = np.array(sim.state.velocity, dtype=float)
    cw = sim.state.last_contact_wrench.as_array()
    record = np.empty((len(x0), 12))
    diag = np.array([0.0, -np.inf])
    n, status, stopped = rollout_kernel(
        pose, vel, cw, ctrl.e, ctrl.ed, x0, ctrl.kp, ctrl.kd, sim.weight, ctrl.params.f_down,
        ctrl.phi, ctrl.gam, sim.params.kernel_vector(), sim.params.substeps, *g.kernel_args(),
        *sim.buffers.args(), g.n_sides, stop_mode, np.asarray(stop_params, dtype=float),
        record, diag)
    sim.max_penetration = max(sim.max_penetration, diag[0])
    sim.cone_excess = max(sim.cone_excess, diag[1])
    sim.steps += n
    sim.state = SimState(pose, vel, Wrench.from_array(cw), sim.state.time + n * sim.params.dt,
                         diag[0], diag[1])
    if n:
        ctrl.x_0 = x0[n - 1].copy()
    raise_for_status(status, sim.steps)
    return DriveResult(n, record[:n], bool(stopped))


def drive_reference(sim: Simulator, astate: AdmittanceState, params: AdmittanceParams,
                    x0: np.ndarray) -> tuple[np.ndarray, AdmittanceState]:
    """Same loop as :func:`drive` (no stop condition), through the public step functions."""
    rows = []
    dt = sim.params.dt
    for ref in np.asarray(x0, dtype=float):
        st = sim.state
        w = st.last_contact_wrench
        fgen = np.concatenate([w.force, torque_to_generalized(st.pose[3:6], w.torque)])
        astate = advance_reference(astate, ref)
        astate = admittance_update(params, astate, fgen, dt)
        xdot = np.concatenate([st.velocity[:3], euler_rates(st.pose[3:6], st.velocity[3:6])])
        applied = pd_wrench(params, astate.x_d, st.pose, xdot, weight=sim.weight)
        sim.step(applied)
        rows.append(measure(sim.state))
    return np.array(rows), astate
