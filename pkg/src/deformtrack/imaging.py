"""Depth/mask frames to point clouds, distance images and vertex projections.

Pixel convention: ``u`` is the column, ``v`` the row; images are indexed
``img[v, u]``.  Depth is in meters and 0 or NaN means "no return".
"""
from __future__ import annotations

from pathlib import Path
from typing import NamedTuple

import numpy as np
from numba import njit

from .types import CameraIntrinsics, CorrespondenceSet, FrameObservation, load_json


class PixelProjection(NamedTuple):
    u: float
    v: float
    z: float
    in_bounds: bool


class PixelSample(NamedTuple):
    depth: float
    dist: float
    depth_valid: bool


def valid_depth(depth: np.ndarray) -> np.ndarray:
    return np.isfinite(depth) & (depth > 0)


def pixel_round(x):
    # round half up; np.round would round 8.5 to 8
    return np.floor(np.asarray(x, float) + 0.5).astype(np.int64)


def backproject_pixels(us, vs, zs, intr: CameraIntrinsics) -> np.ndarray:
    us, vs, zs = (np.asarray(a, float) for a in (us, vs, zs))
    x = (us - intr.cx) * zs / intr.fx
    y = (vs - intr.cy) * zs / intr.fy
    return np.stack([x, y, zs], axis=-1)


def depth_mask_to_cloud(depth, mask, intrinsics: CameraIntrinsics, target_n: int,
                        seed: int = 0, voxel_size: float = 0.004) -> np.ndarray:
    """Back-project masked valid pixels and downsample to ``min(target_n, available)``.

    Downsampling keeps one random representative pixel per voxel (the leaf
    grows from ``voxel_size`` until about ``target_n`` voxels are occupied)
    and then selects uniformly at random; when the representatives are fewer
    than ``target_n`` the remainder is drawn from the other pixels.
    The returned points keep row-major pixel order.
    """
    depth = np.asarray(depth, float)
    mask = np.asarray(mask, bool)
    expected = (intrinsics.height, intrinsics.width)
    if depth.shape != expected or mask.shape != expected:
        raise ValueError(f"depth/mask shape must be {expected}, got {depth.shape}/{mask.shape}")
    sel = mask & valid_depth(depth)
    vs, us = np.nonzero(sel)
    if len(us) == 0:
        return np.zeros((0, 3))
    pts = backproject_pixels(us, vs, depth[vs, us], intrinsics)
    n = len(pts)
    if n <= target_n:
        return pts

    rng = np.random.default_rng(seed)
    order = rng.permutation(n)
    reps = order
    if voxel_size > 0:
        # grow the leaf until the occupied voxels roughly match the target so the
        # final random pick removes few points and density stays uniform
        leaf = voxel_size
        rel = pts[order] - pts.min(axis=0)
        extent = float(np.max(rel)) if len(rel) else 0.0
        while True:
            keys = np.floor(rel / leaf).astype(np.int64)
            _, first = np.unique(keys, axis=0, return_index=True)
            if len(first) < target_n:
                break
            reps = order[np.sort(first)]
            if len(first) <= 1.2 * target_n or leaf > extent:
                break
            leaf *= 1.1
    if len(reps) >= target_n:
        keep = rng.choice(reps, size=target_n, replace=False)
    else:
        rest = np.setdiff1d(np.arange(n), reps)
        keep = np.concatenate([reps, rng.choice(rest, size=target_n - len(reps), replace=False)])
    return pts[np.sort(keep)]


@njit(cache=True)
def _lower_envelope_1d(f, out, v, z):
    """Squared-distance transform of a sampled function (Felzenszwalb & Huttenlocher)."""
    n = f.shape[0]
    k = 0
    v[0] = 0
    z[0] = -np.inf
    z[1] = np.inf
    for q in range(1, n):
        s = ((f[q] + q * q) - (f[v[k]] + v[k] * v[k])) / (2.0 * q - 2.0 * v[k])
        while s <= z[k]:
            k -= 1
            s = ((f[q] + q * q) - (f[v[k]] + v[k] * v[k])) / (2.0 * q - 2.0 * v[k])
        k += 1
        v[k] = q
        z[k] = s
        z[k + 1] = np.inf
    k = 0
    for q in range(n):
        while z[k + 1] < q:
            k += 1
        d = q - v[k]
        out[q] = d * d + f[v[k]]


@njit(cache=True)
def _edt_squared(mask, big):
    H, W = mask.shape
    g = np.empty((H, W))
    for r in range(H):
        for c in range(W):
            g[r, c] = 0.0 if mask[r, c] else big
    n = max(H, W)
    buf = np.empty(n)
    out = np.empty(n)
    v = np.empty(n, np.int64)
    z = np.empty(n + 1)
    for c in range(W):
        for r in range(H):
            buf[r] = g[r, c]
        _lower_envelope_1d(buf[:H], out[:H], v, z)
        for r in range(H):
            g[r, c] = out[r]
    for r in range(H):
        for c in range(W):
            buf[c] = g[r, c]
        _lower_envelope_1d(buf[:W], out[:W], v, z)
        for c in range(W):
            g[r, c] = out[c]
    return g


def distance_transform(mask) -> np.ndarray:
    """Exact Euclidean distance (pixels) from every pixel to the nearest mask pixel.

    Zero on the mask.  An empty mask yields the sentinel ``W + H`` everywhere.
    """
    mask = np.ascontiguousarray(np.asarray(mask, bool))
    H, W = mask.shape
    if not mask.any():
        return np.full((H, W), float(W + H))
    # any finite value larger than the squared image diagonal works as "no site"
    big = float((H + W) ** 2 + 1)
    return np.sqrt(_edt_squared(mask, big))


def project_vertex(vertex, intr: CameraIntrinsics) -> PixelProjection:
    x, y, z = (float(c) for c in vertex)
    if not z > 0:
        return PixelProjection(float("nan"), float("nan"), z, False)
    u = intr.fx * x / z + intr.cx
    v = intr.fy * y / z + intr.cy
    ui, vi = pixel_round(u), pixel_round(v)
    ok = bool(0 <= ui < intr.width and 0 <= vi < intr.height)
    return PixelProjection(u, v, z, ok)


def project_points(Y, intr: CameraIntrinsics):
    """Vectorised projection: returns (u, v, z, in_bounds) arrays."""
    Y = np.asarray(Y, float)
    z = Y[:, 2]
    front = z > 0
    zs = np.where(front, z, 1.0)
    u = intr.fx * Y[:, 0] / zs + intr.cx
    v = intr.fy * Y[:, 1] / zs + intr.cy
    ui, vi = pixel_round(u), pixel_round(v)
    ok = front & (ui >= 0) & (ui < intr.width) & (vi >= 0) & (vi < intr.height)
    return u, v, z, ok


def sample_depth_and_distance(proj: PixelProjection, depth, distance_image):
    """Nearest-pixel lookup; ``None`` when the projection is off-image."""
    if not proj.in_bounds:
        return None
    ui, vi = int(pixel_round(proj.u)), int(pixel_round(proj.v))
    d = float(depth[vi, ui])
    ok = bool(np.isfinite(d) and d > 0)
    return PixelSample(d if ok else float("nan"), float(distance_image[vi, ui]), ok)


def sample_vertices(Y, frame: FrameObservation):
    """Per-vertex (z, observed depth, distance, usable) for the visibility terms.

    ``usable`` is False for vertices off-image or over an invalid depth pixel.
    """
    u, v, z, ok = project_points(Y, frame.intrinsics)
    ui = np.clip(pixel_round(np.where(ok, u, 0)), 0, frame.intrinsics.width - 1)
    vi = np.clip(pixel_round(np.where(ok, v, 0)), 0, frame.intrinsics.height - 1)
    d_obs = frame.depth[vi, ui]
    dist = frame.distance_image[vi, ui]
    usable = ok & valid_depth(d_obs)
    return z, np.where(usable, d_obs, 0.0), np.where(usable, dist, 0.0), usable


def make_frame(depth, mask, intrinsics: CameraIntrinsics, target_n: int = 300,
               seed: int = 0, voxel_size: float = 0.004) -> FrameObservation:
    depth = np.asarray(depth, float)
    mask = np.asarray(mask, bool)
    cloud = depth_mask_to_cloud(depth, mask, intrinsics, target_n, seed, voxel_size)
    return FrameObservation(depth, mask, intrinsics, cloud, distance_transform(mask))


# -- frame directory I/O ---------------------------------------------------

def write_depth(path, depth) -> None:
    np.asarray(depth, "<f4").tofile(path)


def read_depth(path, intr: CameraIntrinsics) -> np.ndarray:
    d = np.fromfile(path, dtype="<f4")
    if d.size != intr.width * intr.height:
        raise ValueError(f"{path}: expected {intr.width * intr.height} floats, got {d.size}")
    return d.reshape(intr.height, intr.width).astype(np.float64)


def write_mask(path, mask) -> None:
    m = np.asarray(mask, bool)
    h, w = m.shape
    with open(path, "wb") as f:
        f.write(f"P5\n{w} {h}\n255\n".encode())
        f.write((m.astype(np.uint8) * 255).tobytes())


def read_mask(path) -> np.ndarray:
    data = Path(path).read_bytes()
    tokens, pos = [], 0
    while len(tokens) < 4:
        while data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            pos = data.index(b"\n", pos) + 1
            continue
        start = pos
        while not data[pos:pos + 1].isspace():
            pos += 1
        tokens.append(data[start:pos])
    if tokens[0] != b"P5":
        raise ValueError(f"{path}: not a binary PGM")
    w, h, maxval = int(tokens[1]), int(tokens[2]), int(tokens[3])
    if maxval > 255:
        raise ValueError(f"{path}: 16-bit PGM not supported")
    pixels = np.frombuffer(data, np.uint8, count=w * h, offset=pos + 1)
    return pixels.reshape(h, w) > 0


def frame_paths(dataset, index: int) -> dict:
    base = Path(dataset)
    return {"depth": base / f"frame_{index:05d}.depth.bin",
            "mask": base / f"frame_{index:05d}.mask.pgm",
            "corr": base / f"frame_{index:05d}.corr.json"}


def count_frames(dataset) -> int:
    return len(list(Path(dataset).glob("frame_*.depth.bin")))


def load_raw_frame(dataset, index: int, intr: CameraIntrinsics):
    """(depth, mask, correspondences) for one frame of a dataset directory."""
    p = frame_paths(dataset, index)
    if not p["depth"].exists() or not p["mask"].exists():
        raise FileNotFoundError(f"frame {index} missing in {dataset}")
    depth = read_depth(p["depth"], intr)
    mask = read_mask(p["mask"])
    corr = CorrespondenceSet.from_dict(load_json(p["corr"])) if p["corr"].exists() else CorrespondenceSet()
    return depth, mask, corr
