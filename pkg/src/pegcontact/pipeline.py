"""Staged assembly: approach, tilt-then-rotate sweep, alignment and insertion, recovery."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.spatial.transform import Rotation

from .control import AdmittanceParams
from .errors import ApproachFailedError, SimulationDivergedError
from .geometry import PegHoleGeometry, insertion_depth, label_offset, rotation, tip_height
from .loop import (STOP_FORCE_ABOVE, STOP_FORCE_SETTLED, STOP_INSERTED, STOP_NONE,
                   AdmittanceController, Simulator, drive)
from .sim import SimParams, SimState


@dataclass(frozen=True)
class TrajectoryParams:
    alpha: float = math.radians(15.0)
    N: int = 2000
    yaw_osc_amp: float = math.radians(3.0)
    yaw_osc_freq: float = 2.0
    align_speed: float = 0.01
    max_attempts: int = 3
    z_drop: float = 0.002
    success_fraction: float = 0.8
    # sweep pivot height above the bottom face, as a multiple of hole_side
    sweep_pivot: float = 1.5
    # phase plumbing
    tilt_steps: int = 300
    approach_height: float = 0.002
    approach_speed: float = 0.05
    approach_timeout: float = 3.0
    settle_steps: int = 200
    settle_band: float = 0.1
    max_exit_tilt: float = math.radians(0.5)
    align_tilt: float = math.radians(10.0)
    align_bias: float = 0.5
    align_lag: float = 0.02
    align_travel: float = 0.035
    align_chunk: int = 50
    align_push: float = 0.001
    insert_speed: float = 0.02
    insert_timeout: float = 4.0
    restart_delta: float = 0.005
    # lift-and-resettle between the sweep and alignment
    reset_lift: float = 0.02
    reset_tol: float = 1e-4
    reset_timeout: float = 1.0

    def __post_init__(self):
        if not 0 < self.alpha < math.pi / 4:
            raise ValueError("alpha must lie in (0, pi/4)")
        if self.N < 100:
            raise ValueError("N must be at least 100")
        if self.max_attempts < 1:
            raise ValueError("max_attempts must be at least 1")
        if not 0 < self.success_fraction <= 1:
            raise ValueError("success_fraction must lie in (0, 1]")
        for name in ("sweep_pivot", "yaw_osc_amp", "yaw_osc_freq", "z_drop", "align_tilt", "align_bias", "align_push",
                     "restart_delta"):
            if not getattr(self, name) >= 0:
                raise ValueError(f"{name} must be non-negative")
        for name in ("align_speed", "approach_speed", "approach_timeout", "insert_speed",
                     "insert_timeout", "align_lag", "align_travel", "reset_lift", "reset_tol",
                     "reset_timeout"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.tilt_steps < 1 or self.settle_steps < 1 or self.align_chunk < 1:
            raise ValueError("step counts must be positive")


def tilt_reference(alpha: float, theta):
    """(roll, pitch) = (alpha sin theta, alpha cos theta)."""
    return alpha * np.sin(theta), alpha * np.cos(theta)


def tilt_reference_rates(alpha: float, theta, theta_dot: float):
    """First and second time derivatives of :func:`tilt_reference` at constant theta_dot."""
    s, c = np.sin(theta), np.cos(theta)
    first = (alpha * c * theta_dot, -alpha * s * theta_dot)
    second = (-alpha * s * theta_dot**2, -alpha * c * theta_dot**2)
    return first, second


def sweep_angles(N: int) -> np.ndarray:
    return 2.0 * np.pi * np.arange(N) / N


@dataclass
class Episode:
    """Simulator plus controller for one peg/hole trial."""
    sim: Simulator
    ctrl: AdmittanceController

    @classmethod
    def start(cls, geom: PegHoleGeometry, sim_params: SimParams, ctrl_params: AdmittanceParams,
              offset, height: float) -> "Episode":
        dx, dy, dyaw = offset
        pose = np.array([dx, dy, geom.peg_length / 2 + height, 0.0, 0.0, dyaw])
        sim = Simulator(geom, sim_params, SimState.at_rest(pose))
        return cls(sim, AdmittanceController(ctrl_params, sim_params.dt, pose))

    @property
    def geom(self) -> PegHoleGeometry:
        return self.sim.geom

    @property
    def dt(self) -> float:
        return self.sim.params.dt


def _pivot_pose(pivot, roll, pitch, yaw, lever):
    """COM reference for the given attitude with the axis point ``pivot`` held fixed.

    ``lever`` is the signed distance from the pivot to the COM along the peg axis.
    """
    R = rotation(roll, pitch, yaw)
    return np.concatenate([pivot + R[:, 2] * lever, [roll, pitch, yaw]])


def _cosine_ramp(k: int) -> np.ndarray:
    return 0.5 - 0.5 * np.cos(np.pi * np.arange(1, k + 1) / k)


def run_approach(ep: Episode, tp: TrajectoryParams) -> SimState:
    """Descend onto the surface and hold until the contact force settles at f_down."""
    sim, ctrl = ep.sim, ep.ctrl
    f_down = ctrl.params.f_down
    start = ctrl.x_0.copy()
    steps = max(1, int(round(tp.approach_timeout / ep.dt)))
    ref = np.tile(start, (steps, 1))
    ref[:, 2] -= tp.approach_speed * ep.dt * np.arange(1, steps + 1)
    r = drive(sim, ctrl, ref, STOP_FORCE_ABOVE, (0.2 * f_down, 0.0, 0.0))
    if not r.stopped:
        raise ApproachFailedError(f"no contact within {tp.approach_timeout:g} s")
    # hold with x_0 just below the contact height; the filter's force setpoint does the rest
    hold = ctrl.x_0.copy()
    hold[2] = sim.state.pose[2] - f_down / ctrl.params.k_p[2]
    left = steps - r.steps
    if left <= 0:
        raise ApproachFailedError("approach timed out before settling")
    r = drive(sim, ctrl, np.tile(hold, (left, 1)), STOP_FORCE_SETTLED,
              (f_down, tp.settle_band * f_down, tp.settle_steps))
    if not r.stopped:
        raise ApproachFailedError(f"contact force did not settle within {tp.approach_timeout:g} s")
    tilt = max(abs(sim.state.pose[3]), abs(sim.state.pose[4]))
    if tilt >= tp.max_exit_tilt:
        raise ApproachFailedError(f"residual tilt {math.degrees(tilt):.2f} deg after approach")
    return sim.state


def _tilt_path(pivot, frm, to, yaw, lever, k):
    s = _cosine_ramp(k)[:, None]
    rp = (1 - s) * np.asarray(frm) + s * np.asarray(to)
    return np.array([_pivot_pose(pivot, a, b, yaw, lever) for a, b in rp])


def sweep_references(ep: Episode, tp: TrajectoryParams):
    """(tilt-in, rotation, tilt-out) reference arrays for the estimation sweep.

    The peg rotates about a point on its axis ``sweep_pivot * hole_side``
    above the bottom face, so the bottom face also traces a small circle.
    """
    half = ep.geom.peg_length / 2
    height = tp.sweep_pivot * ep.geom.hole_side
    lever = half - height
    x0 = ep.ctrl.x_0
    pivot = x0[:3] + np.array([0.0, 0.0, height - half])
    yaw = x0[5]
    first = tilt_reference(tp.alpha, 0.0)
    roll, pitch = tilt_reference(tp.alpha, sweep_angles(tp.N))
    return (_tilt_path(pivot, (0.0, 0.0), first, yaw, lever, tp.tilt_steps),
            np.array([_pivot_pose(pivot, a, b, yaw, lever) for a, b in zip(roll, pitch)]),
            _tilt_path(pivot, first, (0.0, 0.0), yaw, lever, tp.tilt_steps))


def run_estimation_sweep(ep: Episode, tp: TrajectoryParams) -> np.ndarray:
    """Tilt by alpha, rotate the tilt direction through a full turn, return flat.

    Returns the N x 12 trace (pose, contact wrench) of the rotation phase.
    """
    tilt_in, sweep, tilt_out = sweep_references(ep, tp)
    drive(ep.sim, ep.ctrl, tilt_in)
    trace = drive(ep.sim, ep.ctrl, sweep).trace
    drive(ep.sim, ep.ctrl, tilt_out)
    return trace


def reset_after_sweep(ep: Episode, tp: TrajectoryParams) -> SimState:
    """Lift clear of the surface, let the filter relax onto x_0, then approach again.

    The sweep can drag the peg along the rim. Alignment has to start from the
    pose the pattern was recorded at, so the peg is lifted until its x, y is
    back within ``reset_tol`` of the reference and the approach is repeated.
    """
    sim, ctrl = ep.sim, ep.ctrl
    up = ctrl.x_0.copy()
    up[3:5] = 0.0
    up[2] = ep.geom.peg_length / 2 + tp.reset_lift
    s = _cosine_ramp(tp.tilt_steps)[:, None]
    drive(sim, ctrl, (1 - s) * ctrl.x_0 + s * up)
    chunk = tp.settle_steps
    for _ in range(max(1, int(math.ceil(tp.reset_timeout / (ep.dt * chunk))))):
        drive(sim, ctrl, np.tile(up, (chunk, 1)))
        if np.abs(sim.state.pose[:2] - up[:2]).max() < tp.reset_tol:
            break
    else:
        raise ApproachFailedError("peg did not come free after the sweep")
    return run_approach(ep, tp)


def center_of_pressure(wrench) -> np.ndarray:
    """Horizontal point where a purely vertical contact force would produce the torque."""
    w = np.asarray(wrench, dtype=float)
    if w[2] <= 0:
        return np.zeros(2)
    return np.array([-w[4] / w[2], w[3] / w[2]])


def alignment_plan(geom: PegHoleGeometry, label: int, cop, bias: float):
    """Slide direction and the hole vertex the peg corner is steered into.

    The slide follows the negated class direction, bent by ``bias`` toward the
    hole vertex nearest that direction. When two vertices are equally near,
    the one on the side away from the center of pressure (measured relative to
    the peg axis) is taken: the supported side is where the peg overhangs.
    Returns (unit slide direction, unit vertex direction).
    """
    m = -geom.class_direction(label)
    vdir = geom.hole_vertices / np.linalg.norm(geom.hole_vertices, axis=1)[:, None]
    score = vdir @ m
    best = np.flatnonzero(score > score.max() - 1e-9)
    if len(best) > 1:
        best = best[np.argsort(vdir[best] @ np.asarray(cop, dtype=float), kind="stable")]
    v = vdir[best[0]]
    w = v - (v @ m) * m
    norm = np.linalg.norm(w)
    w = w / norm if norm > 1e-9 else np.zeros(2)
    u = m + bias * w
    return u / np.linalg.norm(u), v


def _lowering_attitude(direction, angle: float, yaw: float) -> np.ndarray:
    """(roll, pitch, yaw) after tilting the peg so its side toward ``direction`` goes down."""
    axis = np.array([-direction[1], direction[0], 0.0])
    rot = Rotation.from_rotvec(axis * angle) * Rotation.from_euler("z", yaw)
    return rot.as_euler("xyz")


def _yaw_wave(tp: TrajectoryParams, dt: float, k) -> np.ndarray:
    return tp.yaw_osc_amp * np.sin(2.0 * np.pi * tp.yaw_osc_freq * dt * np.asarray(k))


def run_alignment_insertion(ep: Episode, label: int, tp: TrajectoryParams, cop=None
                            ) -> tuple[bool, float]:
    """Steer the peg into the hole along the error direction of ``label``, then insert.

    Directional labels: lower the peg corner toward the target hole vertex,
    slide along the alignment direction until the cavity walls stop the peg
    (or the peg drops in), then straighten. Every label ends with the
    insertion phase: descend while oscillating in yaw.
    Returns (success, final insertion depth).
    """
    sim, ctrl, geom, dt = ep.sim, ep.ctrl, ep.geom, ep.dt
    half = geom.peg_length / 2
    yaw0 = ctrl.x_0[5]
    if cop is None:
        cop = center_of_pressure(sim.state.last_contact_wrench.as_array())
    cop = np.asarray(cop, dtype=float)
    osc_start = 0
    if label != 0:
        u, v = alignment_plan(geom, label, cop, tp.align_bias)
        x0 = ctrl.x_0.copy()
        pivot = x0[:3] - np.array([0.0, 0.0, half])
        ramp = np.array([_pivot_pose(pivot, *_lowering_attitude(v, tp.align_tilt * a, yaw0), half)
                         for a in _cosine_ramp(tp.tilt_steps)])
        drive(sim, ctrl, ramp)
        base = ctrl.x_0.copy()
        limit = int(math.ceil(tp.align_travel / (tp.align_speed * dt)))
        done = 0
        while done < limit:
            k = np.arange(done + 1, min(done + tp.align_chunk, limit) + 1)
            ref = np.tile(base, (len(k), 1))
            ref[:, :2] += np.outer(tp.align_speed * dt * k, u)
            drive(sim, ctrl, ref)
            done = int(k[-1])
            lag = float(u @ (ctrl.x_0[:2] - sim.state.pose[:2]))
            face_center = sim.state.pose[:3] - rotation(*sim.state.pose[3:])[:, 2] * half
            if lag > tp.align_lag or face_center[2] < -tp.z_drop:
                break
        # straighten (insertion starts here, with the yaw oscillation)
        cur = ctrl.x_0.copy()
        target_xy = sim.state.pose[:2] + tp.align_push * u
        k = np.arange(1, tp.tilt_steps + 1)
        s = _cosine_ramp(tp.tilt_steps)[:, None]
        ref = np.tile(cur, (tp.tilt_steps, 1))
        ref[:, :2] = (1 - s) * cur[:2] + s * target_xy
        ref[:, 3:5] = (1 - s) * cur[3:5]
        ref[:, 5] = yaw0 + _yaw_wave(tp, dt, k)
        drive(sim, ctrl, ref)
        osc_start = tp.tilt_steps
    x0 = ctrl.x_0.copy()
    x0[3:5] = 0.0
    n = max(1, int(round(tp.insert_timeout / dt)))
    k = np.arange(1, n + 1)
    target = tp.success_fraction * geom.hole_depth
    floor = half - target - 0.005
    ref = np.tile(x0, (n, 1))
    ref[:, 2] = np.maximum(x0[2] - tp.insert_speed * dt * k, floor)
    ref[:, 5] = yaw0 + _yaw_wave(tp, dt, k + osc_start)
    drive(sim, ctrl, ref, STOP_INSERTED, (target, geom.clearance, 0.0))
    depth = insertion_depth(geom, sim.state.pose)
    return depth >= target, depth


@dataclass
class EpisodeResult:
    true_offset: tuple[float, float, float]
    true_label: int
    predicted_label: int
    attempts: int
    success: bool
    final_insertion_depth: float
    trace_path: str | None = None
    attempt_offsets: list = field(default_factory=list)
    predicted_labels: list = field(default_factory=list)
    errors: list = field(default_factory=list)

    def as_record(self) -> dict:
        return {
            "true_offset": [float(v) for v in self.true_offset],
            "true_label": int(self.true_label),
            "predicted_label": int(self.predicted_label),
            "attempts": int(self.attempts),
            "success": bool(self.success),
            "final_insertion_depth": float(self.final_insertion_depth),
            "trace_path": self.trace_path,
            "attempt_offsets": [[float(v) for v in o] for o in self.attempt_offsets],
            "predicted_labels": [int(v) for v in self.predicted_labels],
            "errors": list(self.errors),
        }


NO_LABEL = -1
Predictor = Callable[[np.ndarray, int], int]  # (trace, attempt index) -> label


@dataclass(frozen=True)
class AssemblySetup:
    geom: PegHoleGeometry
    sim_params: SimParams = SimParams()
    ctrl_params: AdmittanceParams = AdmittanceParams()
    traj: TrajectoryParams = TrajectoryParams()


def run_assembly_episode(setup: AssemblySetup, rng: np.random.Generator, predict: Predictor,
                         offset=None) -> EpisodeResult:
    """Full trial with failure recovery.

    ``offset`` defaults to a fresh sample from ``rng``. Each retry restarts from
    the previous start pose shifted by a uniform amount in
    [-restart_delta, restart_delta] along x and y.
    """
    from .geometry import sample_contact_offset

    geom, tp = setup.geom, setup.traj
    if offset is None:
        offset = sample_contact_offset(rng)
    offset = tuple(float(v) for v in offset)
    result = EpisodeResult(offset, label_offset(geom, offset[0], offset[1]), NO_LABEL, 0, False,
                           0.0)
    start = offset
    for attempt in range(1, tp.max_attempts + 1):
        if attempt > 1:
            d = rng.uniform(-tp.restart_delta, tp.restart_delta, size=2)
            start = (start[0] + float(d[0]), start[1] + float(d[1]), start[2])
        result.attempts = attempt
        result.attempt_offsets.append(start)
        ep = Episode.start(geom, setup.sim_params, setup.ctrl_params, start, tp.approach_height)
        label = NO_LABEL
        try:
            try:
                run_approach(ep, tp)
            except ApproachFailedError:
                # a peg that fits straight away drops in while approaching
                depth = insertion_depth(geom, ep.sim.state.pose)
                if depth <= 0:
                    raise
                ok, depth = run_alignment_insertion(ep, 0, tp)
            else:
                trace = run_estimation_sweep(ep, tp)
                label = int(predict(trace, attempt))
                reset_after_sweep(ep, tp)
                cop = center_of_pressure(ep.sim.state.last_contact_wrench.as_array())
                ok, depth = run_alignment_insertion(ep, label, tp, cop)
        except (ApproachFailedError, SimulationDivergedError) as exc:
            result.errors.append(f"attempt {attempt}: {exc}")
            ok, depth = False, insertion_depth(geom, ep.sim.state.pose)
        result.predicted_labels.append(label)
        result.predicted_label = label
        result.final_insertion_depth = depth
        if ok:
            result.success = True
            break
    return result
