"""Polar contact patterns: trace channels drawn as closed curves around the image center.

Pixel convention: row 0 is the top row, column 0 the left column. Sample i of
an N-sample channel sits at angle 2 pi i / N, measured counterclockwise from
the +x (rightward) direction. A continuous point (X, Y) falls in pixel
(floor(Y), floor(X)).
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .errors import InvalidWindowError, ShapeError

IMAGE_SIZE = 200
R_MIN = 0.1
RADIUS_FRACTION = 0.45
WINDOW = 20
SELECTED_CHANNELS = (2, 9, 10)  # z, torque about x, torque about y
BLOCK = 10


def normalize_channel(seq) -> np.ndarray:
    """Min-max scale to [0, 1]; a constant sequence maps to 0.5 everywhere."""
    v = np.asarray(seq, dtype=float)
    lo, hi = v.min(), v.max()
    if hi == lo:
        return np.full(v.shape, 0.5)
    return np.clip((v - lo) / (hi - lo), 0.0, 1.0)


def moving_average(seq, n: int) -> np.ndarray:
    """Centered moving average; windows are clipped at the sequence ends."""
    v = np.asarray(seq, dtype=float)
    N = len(v)
    if not 1 <= n <= N:
        raise InvalidWindowError(f"window {n} outside [1, {N}]")
    if n == 1:
        return v.copy()
    idx = np.arange(N)
    lo = np.maximum(idx - (n - 1) // 2, 0)
    hi = np.minimum(idx + n // 2, N - 1)
    csum = np.concatenate([[0.0], np.cumsum(v)])
    return (csum[hi + 1] - csum[lo]) / (hi - lo + 1)


def polar_pixels(seq, size: int = IMAGE_SIZE, r_min: float = R_MIN) -> np.ndarray:
    """Integer (row, col) of every sample's polar point, shape (N, 2)."""
    v = np.asarray(seq, dtype=float)
    theta = 2.0 * np.pi * np.arange(len(v)) / len(v)
    r = (r_min + v * (1.0 - r_min)) * RADIUS_FRACTION * size
    col = np.floor(size / 2 + r * np.cos(theta)).astype(np.int64)
    row = np.floor(size / 2 - r * np.sin(theta)).astype(np.int64)
    return np.stack([np.clip(row, 0, size - 1), np.clip(col, 0, size - 1)], axis=1)


def line_pixels(r0: int, c0: int, r1: int, c1: int) -> tuple[np.ndarray, np.ndarray]:
    """Pixels of the integer line from (r0, c0) to (r1, c1), endpoints included.

    One pixel per step along the major axis; the minor offset is the exact
    rational position rounded half up, so the result depends only on the
    endpoints and their order.
    """
    dr, dc = r1 - r0, c1 - c0
    if abs(dc) >= abs(dr):
        n = abs(dc)
        if n == 0:
            return np.array([r0]), np.array([c0])
        t = np.arange(n + 1)
        cols = c0 + np.sign(dc) * t
        rows = r0 + np.sign(dr) * ((2 * t * abs(dr) + n) // (2 * n))
    else:
        n = abs(dr)
        t = np.arange(n + 1)
        rows = r0 + np.sign(dr) * t
        cols = c0 + np.sign(dc) * ((2 * t * abs(dc) + n) // (2 * n))
    return rows, cols


def rasterize_polar(seq, size: int = IMAGE_SIZE, r_min: float = R_MIN) -> np.ndarray:
    """Binary size x size image of the closed polar curve through all samples."""
    pts = polar_pixels(seq, size, r_min)
    img = np.zeros((size, size), dtype=np.uint8)
    nxt = np.roll(pts, -1, axis=0)
    for (r0, c0), (r1, c1) in zip(pts.tolist(), nxt.tolist()):
        rows, cols = line_pixels(r0, c0, r1, c1)
        img[rows, cols] = 1
    return img


def make_pattern(trace, window: int = WINDOW, size: int = IMAGE_SIZE) -> np.ndarray:
    """12 x size x size binary pattern, one channel per trace column."""
    a = np.asarray(trace, dtype=float)
    if a.ndim != 2 or a.shape[1] != 12:
        raise ShapeError(f"trace must be N x 12, got {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError("trace contains non-finite values")
    return np.stack([
        rasterize_polar(moving_average(normalize_channel(col), window), size) for col in a.T
    ])


def select_and_downsample(pattern, channels=SELECTED_CHANNELS, block: int = BLOCK) -> np.ndarray:
    """Pick classifier channels and average non-overlapping block x block tiles."""
    p = np.asarray(pattern)
    sel = p[list(channels)].astype(float)
    c, h, w = sel.shape
    if h % block or w % block:
        raise ShapeError(f"image {h}x{w} not divisible into {block}-pixel blocks")
    return sel.reshape(c, h // block, block, w // block, block).mean(axis=(2, 4))


def pattern_input(trace, window: int = WINDOW, channels=SELECTED_CHANNELS) -> np.ndarray:
    """Trace straight to the 3 x 20 x 20 classifier input (only the needed channels are drawn)."""
    a = np.asarray(trace, dtype=float)
    if a.ndim != 2 or a.shape[1] != 12:
        raise ShapeError(f"trace must be N x 12, got {a.shape}")
    imgs = np.stack([
        rasterize_polar(moving_average(normalize_channel(a[:, j]), window)) for j in channels
    ])
    return select_and_downsample(imgs, channels=range(len(channels)))


def write_pgm(path, image) -> None:
    """Binary image as a P5 PGM with maxval 255 (set pixels white)."""
    img = np.asarray(image)
    h, w = img.shape
    data = np.where(img > 0, 255, 0).astype(np.uint8)
    with open(path, "wb") as f:
        f.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        f.write(data.tobytes())


def read_pgm(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    parts = raw.split(maxsplit=4)
    if parts[0] != b"P5":
        raise ValueError("not a binary PGM file")
    w, h, maxval = int(parts[1]), int(parts[2]), int(parts[3])
    if maxval != 255:
        raise ValueError("only maxval 255 is supported")
    return np.frombuffer(parts[4][: w * h], dtype=np.uint8).reshape(h, w)


def write_pattern_pgms(pattern, out_dir, stem: str = "channel") -> list[Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    for k, img in enumerate(np.asarray(pattern)):
        p = out / f"{stem}_{k:02d}.pgm"
        write_pgm(p, img)
        paths.append(p)
    return paths


def write_input_csv(path, x) -> None:
    """3 x 400 CSV, one row per channel in row-major pixel order."""
    np.savetxt(path, np.asarray(x).reshape(len(x), -1), delimiter=",", fmt="%.6f")
