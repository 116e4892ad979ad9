"""Peg and hole geometry, contact queries and offset labelling.

World frame: z up, hole top surface at z = 0, hole axis through the origin.
The hole block is the half-space z <= 0 minus a prismatic cavity of depth
``hole_depth``. The peg is a prism whose pose is given at its center of mass;
its bottom face sits at local z = -peg_length / 2.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from .errors import InvalidGeometryError

SHAPES = {"square": 4, "pentagon": 5}
EDGE_SAMPLES = 8
RIM_SAMPLES = 24
CENTER_THRESHOLD = 0.002
FACING_COS = 0.5  # cos 60 deg


@njit(cache=True)
def rotation(roll, pitch, yaw):
    """Rotation matrix for extrinsic X-Y-Z angles, R = Rz(yaw) Ry(pitch) Rx(roll)."""
    cr, sr = math.cos(roll), math.sin(roll)
    cp, sp = math.cos(pitch), math.sin(pitch)
    cy, sy = math.cos(yaw), math.sin(yaw)
    R = np.empty((3, 3))
    R[0, 0] = cy * cp
    R[0, 1] = cy * sp * sr - sy * cr
    R[0, 2] = cy * sp * cr + sy * sr
    R[1, 0] = sy * cp
    R[1, 1] = sy * sp * sr + cy * cr
    R[1, 2] = sy * sp * cr - cy * sr
    R[2, 0] = -sp
    R[2, 1] = cp * sr
    R[2, 2] = cp * cr
    return R


def wrap_angle(a):
    """Wrap angles into (-pi, pi]."""
    a = np.asarray(a, dtype=float)
    w = np.mod(a + np.pi, 2.0 * np.pi) - np.pi
    return np.where(w == -np.pi, np.pi, w)


@dataclass(frozen=True)
class Pose6:
    x: float = 0.0
    y: float = 0.0
    z: float = 0.0
    roll: float = 0.0
    pitch: float = 0.0
    yaw: float = 0.0

    def __post_init__(self):
        for name in ("roll", "pitch", "yaw"):
            object.__setattr__(self, name, float(wrap_angle(getattr(self, name))))

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z, self.roll, self.pitch, self.yaw])

    @classmethod
    def from_array(cls, a) -> "Pose6":
        return cls(*(float(v) for v in a))

    def rotation(self) -> np.ndarray:
        return rotation(self.roll, self.pitch, self.yaw)


@dataclass(frozen=True)
class ContactPoint:
    position: np.ndarray
    normal: np.ndarray
    penetration: float
    feature_id: int
    kind: str  # "bottom" (peg bottom-face sample) or "rim" (hole rim sample)


def regular_polygon(n_sides: int, side: float) -> np.ndarray:
    """Vertices (counterclockwise) of a regular polygon with its first edge parallel to x."""
    circumradius = side / (2.0 * math.sin(math.pi / n_sides))
    k = np.arange(n_sides)
    ang = -math.pi / 2 + math.pi / n_sides + 2.0 * math.pi * k / n_sides
    return circumradius * np.stack([np.cos(ang), np.sin(ang)], axis=1)


def edge_normals(n_sides: int) -> np.ndarray:
    ang = -math.pi / 2 + 2.0 * math.pi * np.arange(n_sides) / n_sides
    return np.stack([np.cos(ang), np.sin(ang)], axis=1)


def boundary_samples(vertices: np.ndarray, per_edge: int) -> np.ndarray:
    """Polygon vertices followed by ``per_edge`` evenly spaced interior points per edge."""
    pts = [vertices]
    t = np.arange(1, per_edge + 1) / (per_edge + 1)
    for i in range(len(vertices)):
        a, b = vertices[i], vertices[(i + 1) % len(vertices)]
        pts.append(a + t[:, None] * (b - a))
    return np.concatenate(pts, axis=0)


def rim_edge_normals(normals: np.ndarray, per_edge: int) -> np.ndarray:
    """Outward normals (R, 2, 2) of the edges each :func:`boundary_samples` point lies on.

    A vertex lies on two edges; an edge sample repeats its single normal.
    Edge i runs from vertex i to vertex i + 1 and has normal i + 1.
    """
    n = len(normals)
    k = np.arange(n)
    vert = np.stack([normals[k], normals[(k + 1) % n]], axis=1)
    edge = np.repeat(normals[(k + 1) % n], per_edge, axis=0)
    return np.concatenate([vert, np.stack([edge, edge], axis=1)], axis=0)


@dataclass(frozen=True)
class PegHoleGeometry:
    shape: str
    hole_side: float
    clearance: float
    hole_depth: float
    peg_length: float
    edge_samples: int = EDGE_SAMPLES
    rim_samples: int = RIM_SAMPLES
    # derived arrays, filled in __post_init__
    hole_vertices: np.ndarray = field(init=False, repr=False, compare=False)
    peg_vertices: np.ndarray = field(init=False, repr=False, compare=False)
    normals: np.ndarray = field(init=False, repr=False, compare=False)
    hole_apothem: float = field(init=False, repr=False, compare=False)
    peg_apothem: float = field(init=False, repr=False, compare=False)
    bottom_local: np.ndarray = field(init=False, repr=False, compare=False)
    rim_points: np.ndarray = field(init=False, repr=False, compare=False)
    rim_normals: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.shape not in SHAPES:
            raise InvalidGeometryError(f"unknown shape {self.shape!r}")
        dims = (self.hole_side, self.clearance, self.hole_depth, self.peg_length)
        if not all(math.isfinite(v) and v > 0 for v in dims):
            raise InvalidGeometryError(f"all dimensions must be positive, got {dims}")
        if self.clearance >= self.hole_side:
            raise InvalidGeometryError("clearance must be smaller than hole_side")
        if self.peg_length < self.hole_depth:
            raise InvalidGeometryError("peg_length must be at least hole_depth")
        if self.edge_samples < 0 or self.rim_samples < 0:
            raise InvalidGeometryError("sample counts must be non-negative")
        n = SHAPES[self.shape]
        hole = regular_polygon(n, self.hole_side)
        peg = regular_polygon(n, self.peg_side)
        tan = math.tan(math.pi / n)
        s = object.__setattr__
        s(self, "hole_vertices", hole)
        s(self, "peg_vertices", peg)
        s(self, "normals", edge_normals(n))
        s(self, "hole_apothem", self.hole_side / (2.0 * tan))
        s(self, "peg_apothem", self.peg_side / (2.0 * tan))
        bottom = boundary_samples(peg, self.edge_samples)
        s(self, "bottom_local", np.column_stack([bottom, np.full(len(bottom), -self.peg_length / 2)]))
        rim = boundary_samples(hole, self.rim_samples)
        s(self, "rim_points", np.column_stack([rim, np.zeros(len(rim))]))
        s(self, "rim_normals", rim_edge_normals(self.normals, self.rim_samples))
        for a in (hole, peg, self.normals, self.bottom_local, self.rim_points, self.rim_normals):
            a.setflags(write=False)

    @property
    def n_sides(self) -> int:
        return SHAPES[self.shape]

    @property
    def peg_side(self) -> float:
        return self.hole_side - self.clearance

    @property
    def num_classes(self) -> int:
        return 2 * self.n_sides + 1

    @property
    def hole_offsets(self) -> np.ndarray:
        return np.full(self.n_sides, self.hole_apothem)

    @property
    def peg_offsets(self) -> np.ndarray:
        return np.full(self.n_sides, self.peg_apothem)

    def kernel_args(self) -> tuple:
        """Arrays consumed by the compiled contact kernel, in kernel argument order."""
        return (
            self.bottom_local,
            self.normals,
            self.peg_offsets,
            self.peg_length / 2.0,
            self.rim_points,
            self.rim_normals,
            self.normals,
            self.hole_offsets,
            self.hole_depth,
        )

    @property
    def max_contacts(self) -> int:
        return len(self.bottom_local) + len(self.rim_points)

    def sector_centers(self) -> np.ndarray:
        """Directions (rad, in [0, 2pi)) of edge normals and vertices, ascending from +x."""
        n = self.n_sides
        normals = -math.pi / 2 + 2.0 * math.pi * np.arange(n) / n
        vertices = normals + math.pi / n
        ang = np.mod(np.concatenate([normals, vertices]), 2.0 * math.pi)
        # snap values a rounding error below 2pi back to 0
        ang[np.isclose(ang, 2.0 * math.pi, atol=1e-12)] = 0.0
        return np.sort(ang)

    def class_direction(self, label: int) -> np.ndarray:
        """Unit xy vector of a directional class center; zero vector for class 0."""
        if label == 0:
            return np.zeros(2)
        c = self.sector_centers()[label - 1]
        return np.array([math.cos(c), math.sin(c)])


def make_geometry(shape: str, hole_side: float, clearance: float, hole_depth: float,
                  peg_length: float) -> PegHoleGeometry:
    return PegHoleGeometry(shape, float(hole_side), float(clearance), float(hole_depth),
                           float(peg_length))


@njit(cache=True)
def contacts_kernel(pose, bottom, peg_n, peg_b, half_len, rim, rim_nrm, hole_n, hole_b, depth,
                    out_pos, out_nrm, out_pen, out_fid):
    """Fill the output buffers with penetrating contacts; returns the contact count.

    Peg bottom-face samples are tested against the hole solid (top surface,
    cavity walls, cavity floor). Hole rim samples are tested against the peg
    prism (bottom face and side faces). Normals point from hole material into
    the peg, i.e. along the direction the peg is pushed.
    """
    R = rotation(pose[3], pose[4], pose[5])
    px, py, pz = pose[0], pose[1], pose[2]
    count = 0
    nb = bottom.shape[0]
    ne = hole_n.shape[0]
    for i in range(nb):
        sx, sy, sz = bottom[i, 0], bottom[i, 1], bottom[i, 2]
        wx = px + R[0, 0] * sx + R[0, 1] * sy + R[0, 2] * sz
        wy = py + R[1, 0] * sx + R[1, 1] * sy + R[1, 2] * sz
        wz = pz + R[2, 0] * sx + R[2, 1] * sy + R[2, 2] * sz
        if wz >= 0.0:
            continue
        dmax = -np.inf
        jmax = 0
        for j in range(ne):
            d = hole_n[j, 0] * wx + hole_n[j, 1] * wy - hole_b[j]
            if d > dmax:
                dmax = d
                jmax = j
        nx, ny, nz = 0.0, 0.0, 1.0
        if dmax > 0.0:
            pen = -wz
            if dmax < pen:
                pen = dmax
                nx, ny, nz = -hole_n[jmax, 0], -hole_n[jmax, 1], 0.0
        elif wz < -depth:
            pen = -depth - wz
        else:
            continue
        if pen > 0.0:
            out_pos[count, 0], out_pos[count, 1], out_pos[count, 2] = wx, wy, wz
            out_nrm[count, 0], out_nrm[count, 1], out_nrm[count, 2] = nx, ny, nz
            out_pen[count] = pen
            out_fid[count] = i
            count += 1
    npn = peg_n.shape[0]
    for k in range(rim.shape[0]):
        dx, dy, dz = rim[k, 0] - px, rim[k, 1] - py, rim[k, 2] - pz
        qx = R[0, 0] * dx + R[1, 0] * dy + R[2, 0] * dz
        qy = R[0, 1] * dx + R[1, 1] * dy + R[2, 1] * dz
        qz = R[0, 2] * dx + R[1, 2] * dy + R[2, 2] * dz
        if qz > half_len:
            continue
        pen = qz + half_len
        if pen <= 0.0:
            continue
        inside = True
        side = np.inf
        jside = -1
        for j in range(npn):
            e = peg_n[j, 0] * qx + peg_n[j, 1] * qy - peg_b[j]
            if e >= 0.0:
                inside = False
                break
            # a rim edge can only press on a side face that faces the block material
            # behind it; faces sweeping along the edge are left to the bottom face
            mx, my = peg_n[j, 0], peg_n[j, 1]
            hx = R[0, 0] * mx + R[0, 1] * my
            hy = R[1, 0] * mx + R[1, 1] * my
            hn = math.sqrt(hx * hx + hy * hy)
            fa = hx * rim_nrm[k, 0, 0] + hy * rim_nrm[k, 0, 1]
            fb = hx * rim_nrm[k, 1, 0] + hy * rim_nrm[k, 1, 1]
            if max(fa, fb) >= FACING_COS * hn and -e < side:
                side = -e
                jside = j
        if not inside:
            continue
        if pen <= side:
            nx, ny, nz = R[0, 2], R[1, 2], R[2, 2]
        else:
            pen = side
            mx, my = peg_n[jside, 0], peg_n[jside, 1]
            nx = -(R[0, 0] * mx + R[0, 1] * my)
            ny = -(R[1, 0] * mx + R[1, 1] * my)
            nz = -(R[2, 0] * mx + R[2, 1] * my)
        out_pos[count, 0], out_pos[count, 1], out_pos[count, 2] = rim[k, 0], rim[k, 1], rim[k, 2]
        out_nrm[count, 0], out_nrm[count, 1], out_nrm[count, 2] = nx, ny, nz
        out_pen[count] = pen
        out_fid[count] = nb + k
        count += 1
    return count


def contact_points(geom: PegHoleGeometry, pose: Pose6 | np.ndarray) -> list[ContactPoint]:
    p = pose.as_array() if isinstance(pose, Pose6) else np.asarray(pose, dtype=float)
    m = geom.max_contacts
    pos, nrm = np.empty((m, 3)), np.empty((m, 3))
    pen, fid = np.empty(m), np.empty(m, dtype=np.int64)
    n = contacts_kernel(p, *geom.kernel_args(), pos, nrm, pen, fid)
    nb = len(geom.bottom_local)
    return [
        ContactPoint(pos[i].copy(), nrm[i].copy(), float(pen[i]), int(fid[i]),
                     "bottom" if fid[i] < nb else "rim")
        for i in range(n)
    ]


def bottom_vertices_world(geom: PegHoleGeometry, pose: Pose6 | np.ndarray) -> np.ndarray:
    p = pose.as_array() if isinstance(pose, Pose6) else np.asarray(pose, dtype=float)
    R = rotation(p[3], p[4], p[5])
    local = np.column_stack([geom.peg_vertices, np.full(geom.n_sides, -geom.peg_length / 2)])
    return p[:3] + local @ R.T


def insertion_depth(geom: PegHoleGeometry, pose: Pose6 | np.ndarray,
                    tolerance: float | None = None) -> float:
    """Depth of the lowest bottom-face point below the surface, if the face is over the cavity.

    The bottom face counts as over the cavity when all its vertices project into
    the opening grown by ``tolerance`` (default: the clearance), which absorbs
    penalty penetration into the walls.
    """
    tol = geom.clearance if tolerance is None else tolerance
    v = bottom_vertices_world(geom, pose)
    signed = v[:, :2] @ geom.normals.T - geom.hole_apothem
    if signed.max() > tol:
        return 0.0
    return max(0.0, -float(v[:, 2].min()))


def tip_height(geom: PegHoleGeometry, pose) -> float:
    """World z of the lowest bottom-face point."""
    return float(bottom_vertices_world(geom, pose)[:, 2].min())


@dataclass(frozen=True)
class OffsetRanges:
    """Uncertainty box for the initial peg offset relative to the hole."""
    dx: tuple[float, float] = (-0.020, 0.020)
    dy: tuple[float, float] = (-0.020, 0.020)
    dyaw: tuple[float, float] = (-math.radians(3.0), math.radians(3.0))


def sample_contact_offset(rng: np.random.Generator, ranges: OffsetRanges = OffsetRanges()):
    return (
        float(rng.uniform(*ranges.dx)),
        float(rng.uniform(*ranges.dy)),
        float(rng.uniform(*ranges.dyaw)),
    )


def label_offset(geom: PegHoleGeometry, dx: float, dy: float,
                 t_center: float = CENTER_THRESHOLD) -> int:
    """Error-direction class of a lateral offset.

    Class 0 when the offset lies inside the polygon-shaped center region (for a
    square this is max(|dx|, |dy|) < t_center). Otherwise 1 + index of the
    nearest sector center, counted counterclockwise from +x.
    """
    if float(np.max(geom.normals @ np.array([dx, dy]))) < t_center:
        return 0
    ang = math.atan2(dy, dx) % (2.0 * math.pi)
    centers = geom.sector_centers()
    dist = np.abs((ang - centers + math.pi) % (2.0 * math.pi) - math.pi)
    return int(np.argmin(dist)) + 1
