"""Independent reference computations used by ``pegcontact check`` and the test suite.

Each oracle recomputes a quantity from first principles (closed-form ODE
solutions, finite differences, per-pixel integer geometry) rather than
calling the code path it checks.
"""

from __future__ import annotations

import math

import numpy as np

from .control import AdmittanceParams, AdmittanceState, admittance_update


# --- admittance step response --------------------------------------------------

def second_order_step(m: float, d: float, k: float, force: float, t) -> np.ndarray:
    """Solution of m e'' + d e' + k e = force from rest at e = 0."""
    t = np.asarray(t, dtype=float)
    ess = force / k
    w = math.sqrt(k / m)
    z = d / (2.0 * math.sqrt(m * k))
    if abs(z - 1.0) < 1e-12:
        return ess * (1.0 - (1.0 + w * t) * np.exp(-w * t))
    if z < 1.0:
        wd = w * math.sqrt(1.0 - z * z)
        return ess * (1.0 - np.exp(-z * w * t) * (np.cos(wd * t) + z * w / wd * np.sin(wd * t)))
    s = math.sqrt(z * z - 1.0)
    r1, r2 = -w * (z - s), -w * (z + s)
    return ess * (1.0 + (r2 * np.exp(r1 * t) - r1 * np.exp(r2 * t)) / (r1 - r2))


def admittance_step_error(params: AdmittanceParams, wrench, dt: float = 1e-3,
                          duration: float = 2.0) -> np.ndarray:
    """Per-axis max |simulated - exact| / max |exact| for a constant external wrench."""
    wrench = np.asarray(wrench, dtype=float)
    n = int(round(duration / dt))
    st = AdmittanceState.reset(np.zeros(6))
    traj = np.empty((n, 6))
    for i in range(n):
        st = admittance_update(params, st, wrench, dt)
        traj[i] = st.x_d
    t = dt * np.arange(1, n + 1)
    err = np.empty(6)
    for a in range(6):
        f = wrench[a] - (params.f_down if a == 2 else 0.0)
        exact = second_order_step(params.M_d[a], params.D_d[a], params.K_d[a], f, t)
        err[a] = np.abs(traj[:, a] - exact).max() / np.abs(exact).max()
    return err


# --- finite-difference gradient ---------------------------------------------------

def _activation_pattern(model, x):
    from .classifier import _forward

    _, (_, a1, _, _, arg1, a2, _, arg2, _) = _forward(model, x)
    return a1 > 0, arg1, a2 > 0, arg2


def _same_pattern(a, b) -> bool:
    return all(np.array_equal(u, v) for u, v in zip(a, b))


def gradient_check(model, x, y, rng: np.random.Generator, per_tensor: int = 9,
                   h: float = 1e-4, skipped: dict | None = None) -> dict[str, float]:
    """Worst relative error between analytic and central-difference gradients per tensor.

    Relative error of one entry is |a - f| / max(|a| + |f|, 1e-12). A central
    difference across a ReLU or max-pool switch does not estimate the
    derivative, so coordinates whose +-h perturbation changes the activation
    pattern are redrawn; ``skipped`` receives how many were redrawn per tensor.
    """
    from .classifier import PARAM_ORDER, loss_and_grads

    _, grads = loss_and_grads(model, x, y)
    base = _activation_pattern(model, x)
    worst = {}
    for name in PARAM_ORDER:
        p = model.params[name]
        flat = p.reshape(-1)
        order = rng.permutation(flat.size)
        rel, used, skip = 0.0, 0, 0
        for i in order:
            if used == per_tensor:
                break
            old = flat[i]
            flat[i] = old + h
            lp, _ = loss_and_grads(model, x, y)
            smooth = _same_pattern(base, _activation_pattern(model, x))
            flat[i] = old - h
            lm, _ = loss_and_grads(model, x, y)
            smooth &= _same_pattern(base, _activation_pattern(model, x))
            flat[i] = old
            if not smooth:
                skip += 1
                continue
            used += 1
            fd = (lp - lm) / (2.0 * h)
            a = grads[name].reshape(-1)[i]
            rel = max(rel, abs(a - fd) / max(abs(a) + abs(fd), 1e-12))
        worst[name] = rel
        if skipped is not None:
            skipped[name] = skip
    return worst


# --- rasterization -----------------------------------------------------------------

def polar_points_reference(seq, size: int, r_min: float = 0.1) -> list[tuple[int, int]]:
    n = len(seq)
    pts = []
    for i, v in enumerate(seq):
        th = 2.0 * math.pi * i / n
        r = (r_min + float(v) * (1.0 - r_min)) * 0.45 * size
        c = min(max(math.floor(size / 2 + r * math.cos(th)), 0), size - 1)
        rr = min(max(math.floor(size / 2 - r * math.sin(th)), 0), size - 1)
        pts.append((rr, c))
    return pts


def segment_mask(r0: int, c0: int, r1: int, c1: int, size: int) -> np.ndarray:
    """Every pixel whose minor-axis distance to the exact segment lies in (-1/2, 1/2].

    The test is evaluated for every pixel of the image in integer arithmetic,
    along the segment's major axis (ties on the minor axis round upward in the
    direction of travel).
    """
    rows, cols = np.mgrid[0:size, 0:size]
    dr, dc = r1 - r0, c1 - c0
    if abs(dc) >= abs(dr):
        major, minor, dmaj, dmin, m0, n0 = cols, rows, dc, dr, c0, r0
    else:
        major, minor, dmaj, dmin, m0, n0 = rows, cols, dr, dc, r0, c0
    n = abs(dmaj)
    if n == 0:
        return (rows == r0) & (cols == c0)
    t = (major - m0) * (1 if dmaj > 0 else -1)
    inside = (t >= 0) & (t <= n)
    if dmin == 0:
        return inside & (minor == n0)
    d = (minor - n0) * (1 if dmin > 0 else -1)
    # 2n*d - 2t|dmin| in (-n, n]
    q = 2 * n * d - 2 * t * abs(dmin)
    return inside & (q > -n) & (q <= n)


def rasterize_reference(seq, size: int) -> np.ndarray:
    pts = polar_points_reference(seq, size)
    img = np.zeros((size, size), dtype=np.uint8)
    for k in range(len(pts)):
        (r0, c0), (r1, c1) = pts[k], pts[(k + 1) % len(pts)]
        img[segment_mask(r0, c0, r1, c1, size)] = 1
    return img


# --- friction cone -----------------------------------------------------------------

def friction_cone_margin(geom=None, offset=(0.012, -0.007, 0.02)) -> dict:
    """Worst ||f_t|| - mu ||f_n|| over a full approach and sweep episode.

    ``kernel`` is the maximum the integrator tracks over every contact and
    substep. ``per_step`` steps the same sweep one control period at a time
    and measures each contact force returned by the public force routine.
    """
    from .loop import drive
    from .pipeline import Episode, TrajectoryParams, run_approach, sweep_references
    from .geometry import make_geometry
    from .sim import SimParams, contact_forces

    geom = make_geometry("square", 0.05, 0.001, 0.04, 0.06) if geom is None else geom
    sp = SimParams()
    tp = TrajectoryParams()
    ep = Episode.start(geom, sp, AdmittanceParams(), offset, tp.approach_height)
    run_approach(ep, tp)
    worst = -np.inf
    contacts = 0
    for ref in np.concatenate(sweep_references(ep, tp)):
        drive(ep.sim, ep.ctrl, ref[None, :])
        fn, ft = contact_forces(geom, sp, ep.sim.state)
        if len(fn):
            excess = np.linalg.norm(ft, axis=1) - sp.mu * np.linalg.norm(fn, axis=1)
            worst = max(worst, float(excess.max()))
            contacts += len(fn)
    return {"kernel": ep.sim.cone_excess, "per_step": worst, "contacts": contacts}


def run_all(seed: int = 0) -> list[tuple[str, bool, str]]:
    """Quick oracle suite for the ``check`` command."""
    from .classifier import Model
    from .pattern import rasterize_polar

    out = []
    p = AdmittanceParams()
    err = admittance_step_error(p, [10.0, -10.0, 10.0, 0.1, -0.1, 0.1])
    out.append(("admittance step response", bool(err.max() < 1e-6), f"max rel err {err.max():.2e}"))

    rng = np.random.default_rng(seed)
    m = Model.init(9, seed)
    for k in m.params:
        m.params[k] += rng.normal(0.0, 0.05, m.params[k].shape)
    x = rng.random((2, 3, 20, 20))
    y = rng.integers(0, 9, 2)
    g = gradient_check(m, x, y, rng)
    worst = max(g.values())
    out.append(("finite-difference gradients", bool(worst < 1e-5), f"worst rel err {worst:.2e}"))

    bad = 0
    for n in (4, 50, 2000):
        seq = rng.random(n)
        bad += int(not np.array_equal(rasterize_polar(seq, 200), rasterize_reference(seq, 200)))
    out.append(("polar rasterization", bad == 0, f"{bad} mismatching images of 3"))

    cone = friction_cone_margin()
    ok = cone["kernel"] <= 1e-12 and cone["per_step"] <= 1e-12
    out.append(("friction cone", bool(ok),
                f"kernel {cone['kernel']:.2e}, per step {cone['per_step']:.2e}, "
                f"{cone['contacts']} contacts"))
    return out
