"""Rigid peg dynamics with penalty contact and regularized Coulomb friction.

The peg is a single rigid body driven by a commanded wrench (the PD output of
the controller), gravity and contact forces. Each call to :func:`step`
advances one control period ``dt`` using ``substeps`` semi-implicit Euler
substeps with the commanded wrench held constant; contact forces are
re-evaluated every substep.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from numba import njit

from .errors import SimulationDivergedError
from .geometry import PegHoleGeometry, Pose6, contacts_kernel, rotation

PITCH_LIMIT = math.radians(45.0)

STATUS_OK = 0
STATUS_NONFINITE = 1
STATUS_PITCH = 2


@dataclass(frozen=True)
class SimParams:
    dt: float = 1e-3
    mass: float = 0.5
    # Effective rotational inertia of the peg plus wrist flange. A bare 49 mm
    # peg (~2.5e-4 kg m^2) makes the rotational PD damping unstable at dt = 1e-3.
    inertia: tuple[float, float, float] = (0.01, 0.01, 0.01)
    k_n: float = 5e4
    c_n: float = 50.0
    mu: float = 0.3
    v_slip: float = 1e-3
    gravity: float = 9.81
    substeps: int = 10

    def __post_init__(self):
        object.__setattr__(self, "inertia", tuple(float(v) for v in self.inertia))
        if not (self.dt > 0 and self.mass > 0 and self.k_n > 0 and self.v_slip > 0):
            raise ValueError("dt, mass, k_n and v_slip must be positive")
        if self.mu < 0 or self.c_n < 0:
            raise ValueError("mu and c_n must be non-negative")
        if len(self.inertia) != 3 or min(self.inertia) <= 0:
            raise ValueError("inertia must be three positive values")
        if self.substeps < 1:
            raise ValueError("substeps must be >= 1")

    def kernel_vector(self) -> np.ndarray:
        return np.array([self.mass, *self.inertia, self.k_n, self.c_n, self.mu,
                         self.v_slip, self.gravity, self.dt])


@dataclass(frozen=True)
class Wrench:
    force: np.ndarray = field(default_factory=lambda: np.zeros(3))
    torque: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def as_array(self) -> np.ndarray:
        return np.concatenate([self.force, self.torque])

    @classmethod
    def from_array(cls, a) -> "Wrench":
        a = np.asarray(a, dtype=float)
        return cls(a[:3].copy(), a[3:6].copy())

    def __neg__(self) -> "Wrench":
        return Wrench(-self.force, -self.torque)


@dataclass(frozen=True)
class SimState:
    pose: np.ndarray
    velocity: np.ndarray  # linear [m/s] then angular [rad/s], world frame
    last_contact_wrench: Wrench = field(default_factory=Wrench)
    time: float = 0.0
    # diagnostics of the last step
    max_penetration: float = 0.0
    cone_excess: float = -np.inf

    @classmethod
    def at_rest(cls, pose: Pose6 | np.ndarray) -> "SimState":
        p = pose.as_array() if isinstance(pose, Pose6) else np.asarray(pose, dtype=float).copy()
        return cls(p, np.zeros(6))


@njit(cache=True)
def euler_rates(angles, omega):
    """Euler-angle rates from world angular velocity (inverse kinematic map)."""
    cp = math.cos(angles[1])
    sp = math.sin(angles[1])
    cy, sy = math.cos(angles[2]), math.sin(angles[2])
    out = np.empty(3)
    out[0] = (cy * omega[0] + sy * omega[1]) / cp
    out[1] = -sy * omega[0] + cy * omega[1]
    out[2] = omega[2] + sp * out[0]
    return out


@njit(cache=True)
def generalized_to_torque(angles, q):
    """World torque whose power on the Euler rates equals q (tau = E^-T q)."""
    cp = math.cos(angles[1])
    sp = math.sin(angles[1])
    cy, sy = math.cos(angles[2]), math.sin(angles[2])
    out = np.empty(3)
    out[0] = cy / cp * q[0] - sy * q[1] + sp * cy / cp * q[2]
    out[1] = sy / cp * q[0] + cy * q[1] + sp * sy / cp * q[2]
    out[2] = q[2]
    return out


@njit(cache=True)
def torque_to_generalized(angles, tau):
    """Generalized Euler-axis forces of a world torque (q = E^T tau)."""
    cp = math.cos(angles[1])
    sp = math.sin(angles[1])
    cy, sy = math.cos(angles[2]), math.sin(angles[2])
    out = np.empty(3)
    out[0] = cy * cp * tau[0] + sy * cp * tau[1] - sp * tau[2]
    out[1] = -sy * tau[0] + cy * tau[1]
    out[2] = tau[2]
    return out


@njit(cache=True)
def contact_forces_kernel(pose, vel, pos, nrm, pen, count, k_n, c_n, mu, v_slip, out_fn, out_ft):
    """Per-contact normal and tangential forces on the peg."""
    for i in range(count):
        rx, ry, rz = pos[i, 0] - pose[0], pos[i, 1] - pose[1], pos[i, 2] - pose[2]
        # velocity of the peg material point at the contact
        vx = vel[0] + vel[4] * rz - vel[5] * ry
        vy = vel[1] + vel[5] * rx - vel[3] * rz
        vz = vel[2] + vel[3] * ry - vel[4] * rx
        nx, ny, nz = nrm[i, 0], nrm[i, 1], nrm[i, 2]
        vn = vx * nx + vy * ny + vz * nz  # > 0 when separating
        fn = k_n * pen[i] - c_n * vn
        if fn < 0.0:
            fn = 0.0
        out_fn[i, 0], out_fn[i, 1], out_fn[i, 2] = fn * nx, fn * ny, fn * nz
        tx, ty, tz = vx - vn * nx, vy - vn * ny, vz - vn * nz
        vt = math.sqrt(tx * tx + ty * ty + tz * tz)
        if vt > 0.0 and fn > 0.0:
            s = -mu * fn * math.tanh(vt / v_slip) / vt
            out_ft[i, 0], out_ft[i, 1], out_ft[i, 2] = s * tx, s * ty, s * tz
        else:
            out_ft[i, 0], out_ft[i, 1], out_ft[i, 2] = 0.0, 0.0, 0.0


@njit(cache=True)
def contact_wrench_kernel(pose, vel, bottom, peg_n, peg_b, half_len, rim, rim_nrm, hole_n, hole_b, depth,
                          k_n, c_n, mu, v_slip, pos, nrm, pen, fid, fn, ft, out):
    """Total contact wrench about the COM; returns (max penetration, max cone excess)."""
    count = contacts_kernel(pose, bottom, peg_n, peg_b, half_len, rim, rim_nrm, hole_n, hole_b, depth,
                            pos, nrm, pen, fid)
    contact_forces_kernel(pose, vel, pos, nrm, pen, count, k_n, c_n, mu, v_slip, fn, ft)
    for j in range(6):
        out[j] = 0.0
    max_pen = 0.0
    excess = -np.inf
    for i in range(count):
        fx = fn[i, 0] + ft[i, 0]
        fy = fn[i, 1] + ft[i, 1]
        fz = fn[i, 2] + ft[i, 2]
        rx, ry, rz = pos[i, 0] - pose[0], pos[i, 1] - pose[1], pos[i, 2] - pose[2]
        out[0] += fx
        out[1] += fy
        out[2] += fz
        out[3] += ry * fz - rz * fy
        out[4] += rz * fx - rx * fz
        out[5] += rx * fy - ry * fx
        if pen[i] > max_pen:
            max_pen = pen[i]
        nfn = math.sqrt(fn[i, 0] ** 2 + fn[i, 1] ** 2 + fn[i, 2] ** 2)
        nft = math.sqrt(ft[i, 0] ** 2 + ft[i, 1] ** 2 + ft[i, 2] ** 2)
        e = nft - mu * nfn
        if e > excess:
            excess = e
    return max_pen, excess


@njit(cache=True)
def integrate_kernel(pose, vel, applied, sp, nsub, bottom, peg_n, peg_b, half_len, rim, rim_nrm, hole_n,
                     hole_b, depth, pos, nrm, pen, fid, fn, ft, wrench_out):
    """Advance (pose, vel) in place by one control period.

    ``wrench_out`` receives the substep-averaged contact wrench, i.e. the
    constant wrench with the same impulse over the period.
    Returns (status, max penetration, max friction-cone excess).
    """
    mass, i1, i2, i3 = sp[0], sp[1], sp[2], sp[3]
    k_n, c_n, mu, v_slip, g, dt = sp[4], sp[5], sp[6], sp[7], sp[8], sp[9]
    h = dt / nsub
    cw = np.empty(6)
    acc = np.zeros(6)
    max_pen = 0.0
    excess = -np.inf
    status = STATUS_OK
    for _ in range(nsub):
        mp, ex = contact_wrench_kernel(pose, vel, bottom, peg_n, peg_b, half_len, rim, rim_nrm, hole_n,
                                       hole_b, depth, k_n, c_n, mu, v_slip, pos, nrm, pen, fid,
                                       fn, ft, cw)
        if mp > max_pen:
            max_pen = mp
        if ex > excess:
            excess = ex
        for j in range(6):
            acc[j] += cw[j]
        R = rotation(pose[3], pose[4], pose[5])
        vel[0] += h * (applied[0] + cw[0]) / mass
        vel[1] += h * (applied[1] + cw[1]) / mass
        vel[2] += h * ((applied[2] + cw[2]) / mass - g)
        # angular: I_w = R diag(I) R^T, gyroscopic term w x (I_w w)
        w0, w1, w2 = vel[3], vel[4], vel[5]
        b0 = R[0, 0] * w0 + R[1, 0] * w1 + R[2, 0] * w2
        b1 = R[0, 1] * w0 + R[1, 1] * w1 + R[2, 1] * w2
        b2 = R[0, 2] * w0 + R[1, 2] * w1 + R[2, 2] * w2
        l0 = R[0, 0] * i1 * b0 + R[0, 1] * i2 * b1 + R[0, 2] * i3 * b2
        l1 = R[1, 0] * i1 * b0 + R[1, 1] * i2 * b1 + R[1, 2] * i3 * b2
        l2 = R[2, 0] * i1 * b0 + R[2, 1] * i2 * b1 + R[2, 2] * i3 * b2
        t0 = applied[3] + cw[3] - (w1 * l2 - w2 * l1)
        t1 = applied[4] + cw[4] - (w2 * l0 - w0 * l2)
        t2 = applied[5] + cw[5] - (w0 * l1 - w1 * l0)
        b0 = (R[0, 0] * t0 + R[1, 0] * t1 + R[2, 0] * t2) / i1
        b1 = (R[0, 1] * t0 + R[1, 1] * t1 + R[2, 1] * t2) / i2
        b2 = (R[0, 2] * t0 + R[1, 2] * t1 + R[2, 2] * t2) / i3
        vel[3] += h * (R[0, 0] * b0 + R[0, 1] * b1 + R[0, 2] * b2)
        vel[4] += h * (R[1, 0] * b0 + R[1, 1] * b1 + R[1, 2] * b2)
        vel[5] += h * (R[2, 0] * b0 + R[2, 1] * b1 + R[2, 2] * b2)
        pose[0] += h * vel[0]
        pose[1] += h * vel[1]
        pose[2] += h * vel[2]
        # Euler-angle rates from the updated angular velocity
        cp, spi = math.cos(pose[4]), math.sin(pose[4])
        cy, sy = math.cos(pose[5]), math.sin(pose[5])
        r0 = (cy * vel[3] + sy * vel[4]) / cp
        r1 = -sy * vel[3] + cy * vel[4]
        r2 = vel[5] + spi * r0
        pose[3] = _wrap_pi(pose[3] + h * r0)
        pose[4] = _wrap_pi(pose[4] + h * r1)
        pose[5] = _wrap_pi(pose[5] + h * r2)
        for j in range(6):
            if not (math.isfinite(pose[j]) and math.isfinite(vel[j])):
                status = STATUS_NONFINITE
        if status == STATUS_OK and abs(pose[4]) >= PITCH_LIMIT:
            status = STATUS_PITCH
        if status != STATUS_OK:
            break
    for k in range(6):
        wrench_out[k] = acc[k] / nsub
    return status, max_pen, excess


@njit(cache=True)
def _wrap_pi(a):
    if a > math.pi:
        return a - 2.0 * math.pi
    if a <= -math.pi:
        return a + 2.0 * math.pi
    return a


class ContactBuffers:
    """Scratch arrays sized for one geometry's maximum contact count."""

    def __init__(self, geom: PegHoleGeometry):
        m = geom.max_contacts
        self.pos = np.empty((m, 3))
        self.nrm = np.empty((m, 3))
        self.pen = np.empty(m)
        self.fid = np.empty(m, dtype=np.int64)
        self.fn = np.empty((m, 3))
        self.ft = np.empty((m, 3))

    def args(self) -> tuple:
        return self.pos, self.nrm, self.pen, self.fid, self.fn, self.ft


def contact_wrench(geom: PegHoleGeometry, params: SimParams, state: SimState) -> Wrench:
    """Penalty contact wrench on the peg about its center of mass, world frame."""
    buf = ContactBuffers(geom)
    out = np.empty(6)
    contact_wrench_kernel(np.asarray(state.pose, float), np.asarray(state.velocity, float),
                          *geom.kernel_args(), params.k_n, params.c_n, params.mu, params.v_slip,
                          *buf.args(), out)
    return Wrench.from_array(out)


def contact_forces(geom: PegHoleGeometry, params: SimParams, state: SimState):
    """Per-contact (normal force, tangential force) arrays, each (n, 3)."""
    buf = ContactBuffers(geom)
    pose = np.asarray(state.pose, float)
    n = contacts_kernel(pose, *geom.kernel_args(), buf.pos, buf.nrm, buf.pen, buf.fid)
    contact_forces_kernel(pose, np.asarray(state.velocity, float), buf.pos, buf.nrm, buf.pen, n,
                          params.k_n, params.c_n, params.mu, params.v_slip, buf.fn, buf.ft)
    return buf.fn[:n].copy(), buf.ft[:n].copy()


def raise_for_status(status: int, step: int | None = None):
    if status == STATUS_NONFINITE:
        raise SimulationDivergedError("non-finite peg state", step)
    if status == STATUS_PITCH:
        raise SimulationDivergedError("pitch reached the 45 degree guard", step)


def step(geom: PegHoleGeometry, params: SimParams, state: SimState, applied: Wrench,
         buffers: ContactBuffers | None = None) -> SimState:
    """One control period of semi-implicit Euler integration."""
    buf = buffers or ContactBuffers(geom)
    pose = np.array(state.pose, dtype=float)
    vel = np.array(state.velocity, dtype=float)
    cw = np.empty(6)
    status, max_pen, excess = integrate_kernel(
        pose, vel, applied.as_array(), params.kernel_vector(), params.substeps,
        *geom.kernel_args(), *buf.args(), cw)
    raise_for_status(status, round(state.time / params.dt) + 1)
    return replace(state, pose=pose, velocity=vel, last_contact_wrench=Wrench.from_array(cw),
                   time=state.time + params.dt, max_penetration=max_pen, cone_excess=excess)


def measure(state: SimState) -> np.ndarray:
    """12-channel sensor reading: pose, then contact force and torque at the COM.

    The wrench channels report the contact wrench acting on the peg, so a
    surface pushing the peg up reads Fz > 0.
    """
    return np.concatenate([state.pose, state.last_contact_wrench.as_array()])
