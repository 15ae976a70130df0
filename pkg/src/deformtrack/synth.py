"""Synthetic ground-truthed depth+mask sequences for rope and cloth.

World frame: z up, table top at ``table_height``.  The camera follows the
OpenCV convention (x right, y down, z forward) and every emitted quantity
(model, ground truth, depth) lives in the camera frame.
"""
from __future__ import annotations

import csv
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from numba import njit

from .imaging import valid_depth, write_depth, write_mask
from .types import (CameraIntrinsics, CorrespondenceSet, TrackedModel, grid_model, line_model,
                    save_json)


@dataclass
class RopeSpec:
    n_vertices: int = 50
    length: float = 1.0
    radius: float = 0.004
    origin: tuple = (-0.5, 0.0)
    heading_deg: float = 0.0


@dataclass
class ClothSpec:
    rows: int = 10
    cols: int = 10
    cell: float = 0.03
    origin: tuple = (-0.15, -0.15)
    thickness: float = 0.002


@dataclass
class DragPath:
    """Keyframed offsets ``[frame, dx, dy, dz]`` of one vertex from its rest position."""

    vertex: int
    keys: list


@dataclass
class BendPath:
    """Kinematic rope bend: keyframed total turning angle ``[frame, degrees]``
    spread evenly over the arc ``center +- span/2`` (fractions of the length).
    The tangent at ``center`` keeps its heading, the rope midpoint stays in
    place and arc length is preserved."""

    keys: list
    center: float = 0.5
    span: float = 0.2


@dataclass
class OccluderSpec:
    """Axis-aligned box with keyframed centre ``[frame, x, y, z]``, present for frames [start, end]."""

    size: tuple = (0.12, 0.12, 0.04)
    keys: list = field(default_factory=list)
    frames: tuple = (30, 60)


@dataclass
class CameraSpec:
    eye: tuple = (0.0, -0.75, 0.85)
    target: tuple = (0.0, 0.05, 0.0)
    up: tuple = (0.0, 0.0, 1.0)
    fx: float = 600.0
    fy: float = 600.0
    cx: float = 479.5
    cy: float = 269.5
    width: int = 960
    height: int = 540

    @property
    def intrinsics(self) -> CameraIntrinsics:
        return CameraIntrinsics(self.fx, self.fy, self.cx, self.cy, self.width, self.height)

    def rotation(self) -> np.ndarray:
        """Rows are the camera axes expressed in world coordinates."""
        eye, target, up = (np.asarray(a, float) for a in (self.eye, self.target, self.up))
        zc = target - eye
        zc /= np.linalg.norm(zc)
        xc = np.cross(zc, up)
        xc /= np.linalg.norm(xc)
        yc = np.cross(zc, xc)
        return np.stack([xc, yc, zc])

    def to_camera(self, P) -> np.ndarray:
        return (np.asarray(P, float) - np.asarray(self.eye, float)) @ self.rotation().T


@dataclass
class SceneScript:
    kind: str = "rope"
    rope: RopeSpec = field(default_factory=RopeSpec)
    cloth: ClothSpec = field(default_factory=ClothSpec)
    drags: list = field(default_factory=list)
    bends: list = field(default_factory=list)
    occluders: list = field(default_factory=list)
    pins: list = field(default_factory=list)
    noise_sigma: float = 0.002
    n_frames: int = 90
    camera: CameraSpec = field(default_factory=CameraSpec)
    seed: int = 0
    table_height: float = 0.0
    table_half_size: float = 1.5
    substeps: int = 10
    sweeps: int = 10
    fps: float = 30.0
    gravity: float = 2.0
    contact_damping: float = 0.9

    def validate(self) -> list[str]:
        problems = []
        if self.kind not in ("rope", "cloth"):
            problems.append(f"unknown object kind {self.kind!r}")
        if self.n_frames < 1:
            problems.append("n_frames must be >= 1")
        if self.noise_sigma < 0:
            problems.append("noise_sigma must be >= 0")
        problems += self.camera.intrinsics.validate()
        M = self.rope.n_vertices if self.kind == "rope" else self.cloth.rows * self.cloth.cols
        for d in self.drags:
            if not 0 <= d.vertex < M:
                problems.append(f"drag vertex {d.vertex} out of range")
        if self.bends and (self.kind != "rope" or self.drags):
            problems.append("bends need a rope scene without drags")
        for b in self.bends:
            if not (0 <= b.center <= 1 and 0 < b.span <= 1):
                problems.append("bend center must be in [0, 1] and span in (0, 1]")
        for p in self.pins:
            if not 0 <= p < M:
                problems.append(f"pin vertex {p} out of range")
        return problems

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "SceneScript":
        d = dict(d)
        d["rope"] = RopeSpec(**{k: tuple(v) if isinstance(v, list) else v
                                for k, v in d.get("rope", {}).items()})
        d["cloth"] = ClothSpec(**{k: tuple(v) if isinstance(v, list) else v
                                  for k, v in d.get("cloth", {}).items()})
        d["camera"] = CameraSpec(**{k: tuple(v) if isinstance(v, list) else v
                                    for k, v in d.get("camera", {}).items()})
        d["drags"] = [DragPath(**x) for x in d.get("drags", [])]
        d["bends"] = [BendPath(**x) for x in d.get("bends", [])]
        d["occluders"] = [OccluderSpec(size=tuple(x["size"]), keys=x["keys"],
                                       frames=tuple(x["frames"])) for x in d.get("occluders", [])]
        return cls(**d)


# -- motion ------------------------------------------------------------------

def interpolate_keys(keys, t: float) -> np.ndarray:
    """Piecewise smoothstep interpolation of ``[frame, *values]`` keyframes."""
    keys = np.asarray(keys, float)
    if len(keys) == 0:
        return np.zeros(3)
    if t <= keys[0, 0]:
        return keys[0, 1:].copy()
    if t >= keys[-1, 0]:
        return keys[-1, 1:].copy()
    i = np.searchsorted(keys[:, 0], t, side="right") - 1
    t0, t1 = keys[i, 0], keys[i + 1, 0]
    s = (t - t0) / (t1 - t0)
    s = s * s * (3 - 2 * s)
    return (1 - s) * keys[i, 1:] + s * keys[i + 1, 1:]


def rest_state(script: SceneScript) -> tuple[np.ndarray, np.ndarray]:
    """World-frame rest vertices and template edges."""
    if script.kind == "rope":
        r = script.rope
        h = np.deg2rad(r.heading_deg)
        m = line_model(r.length, r.n_vertices,
                       (r.origin[0], r.origin[1], script.table_height + r.radius),
                       (np.cos(h), np.sin(h), 0.0))
    else:
        c = script.cloth
        m = grid_model(c.rows, c.cols, c.cell,
                       (c.origin[0], c.origin[1], script.table_height + c.thickness))
    return np.array(m.vertices0), np.array(m.edges)


def _edge_order(edges, M, sources):
    """Edges sorted by BFS depth from the driven vertices so corrections run outward."""
    depth = np.full(M, np.inf)
    frontier = list(sources) or [0]
    for v in frontier:
        depth[v] = 0
    adj = [[] for _ in range(M)]
    for i, j in edges.tolist():
        adj[i].append(j)
        adj[j].append(i)
    while frontier:
        nxt = []
        for a in frontier:
            for b in adj[a]:
                if depth[b] == np.inf:
                    depth[b] = depth[a] + 1
                    nxt.append(b)
        frontier = nxt
    key = np.minimum(depth[edges[:, 0]], depth[edges[:, 1]])
    return np.argsort(key, kind="stable"), depth


@njit(cache=True)
def _project_lengths(X, edges, rest, inv_mass, order, lead, sweeps, floor):
    for _ in range(sweeps):
        for e in order:
            i, j = edges[e, 0], edges[e, 1]
            wsum = inv_mass[i] + inv_mass[j]
            if wsum == 0.0:
                continue
            dx = X[i, 0] - X[j, 0]
            dy = X[i, 1] - X[j, 1]
            dz = X[i, 2] - X[j, 2]
            length = np.sqrt(dx * dx + dy * dy + dz * dz)
            if length == 0.0:
                continue
            c = (length - rest[e]) / (wsum * length)
            X[i, 0] -= inv_mass[i] * c * dx
            X[i, 1] -= inv_mass[i] * c * dy
            X[i, 2] -= inv_mass[i] * c * dz
            X[j, 0] += inv_mass[j] * c * dx
            X[j, 1] += inv_mass[j] * c * dy
            X[j, 2] += inv_mass[j] * c * dz
        for m in range(X.shape[0]):
            if inv_mass[m] > 0 and X[m, 2] < floor:
                X[m, 2] = floor
    # follow-the-leader pass: an over-stretched edge is fixed by moving only its
    # vertex further from the drivers (edges arrive in BFS order)
    for e in order:
        i, j = edges[e, 0], edges[e, 1]
        if inv_mass[j] == 0.0 and inv_mass[i] == 0.0:
            continue
        a, b = (i, j) if lead[i] <= lead[j] else (j, i)
        if inv_mass[b] == 0.0:
            continue
        d0 = X[b, 0] - X[a, 0]
        d1 = X[b, 1] - X[a, 1]
        d2 = X[b, 2] - X[a, 2]
        length = np.sqrt(d0 * d0 + d1 * d1 + d2 * d2)
        if length > rest[e]:
            s = rest[e] / length
            X[b, 0] = X[a, 0] + s * d0
            X[b, 1] = X[a, 1] + s * d1
            X[b, 2] = max(X[a, 2] + s * d2, floor)


def _sim_edges(script, edges, X0):
    if script.kind == "cloth":
        c = script.cloth
        idx = np.arange(c.rows * c.cols).reshape(c.rows, c.cols)
        shear = np.concatenate([
            np.stack([idx[:-1, :-1].ravel(), idx[1:, 1:].ravel()], axis=1),
            np.stack([idx[:-1, 1:].ravel(), idx[1:, :-1].ravel()], axis=1)])
        edges = np.concatenate([edges, shear])
    return edges, np.linalg.norm(X0[edges[:, 0]] - X0[edges[:, 1]], axis=1)


def bent_rope(script: SceneScript, t: float) -> np.ndarray:
    """World-frame vertices of a kinematically bent rope at (fractional) frame ``t``."""
    r = script.rope
    fine = np.linspace(0.0, 1.0, 20001)
    phi = np.zeros_like(fine)
    for b in script.bends:
        total = np.deg2rad(interpolate_keys(np.asarray(b.keys, float)[:, :2], t)[0])
        lo = b.center - b.span / 2
        phi += total * (np.clip((fine - lo) / b.span, 0.0, 1.0) - 0.5)
    phi += np.deg2rad(r.heading_deg)
    step = np.diff(fine)[:, None] * r.length
    tang = np.stack([np.cos(phi), np.sin(phi)], axis=1)
    xy = np.concatenate([[[0.0, 0.0]], np.cumsum(0.5 * (tang[1:] + tang[:-1]) * step, axis=0)])
    X0, _ = rest_state(script)
    s_vert = np.linspace(0.0, 1.0, r.n_vertices)
    pts = np.stack([np.interp(s_vert, fine, xy[:, 0]), np.interp(s_vert, fine, xy[:, 1])], axis=1)
    mid = np.stack([np.interp(0.5, fine, xy[:, 0]), np.interp(0.5, fine, xy[:, 1])])
    out = np.empty_like(X0)
    out[:, :2] = pts - mid + X0.mean(axis=0)[:2]
    out[:, 2] = X0[:, 2]
    return out


def simulate_sequence(script: SceneScript) -> np.ndarray:
    """Position-based dynamics; returns world-frame vertices for every frame (T x M x 3)."""
    if script.bends:
        return np.stack([bent_rope(script, t) for t in range(script.n_frames)])
    X0, edges = rest_state(script)
    edges, rest = _sim_edges(script, edges, X0)
    M = len(X0)
    order, lead = _edge_order(edges, M, [d.vertex for d in script.drags])
    floor = script.table_height + (script.rope.radius if script.kind == "rope"
                                   else script.cloth.thickness)
    inv_mass = np.ones(M)
    for d in script.drags:
        inv_mass[d.vertex] = 0.0
    dt = 1.0 / (script.fps * script.substeps)
    g = np.array([0.0, 0.0, -script.gravity])

    X = X0.copy()
    V = np.zeros_like(X)
    out = np.empty((script.n_frames, M, 3))
    out[0] = X
    for t in range(1, script.n_frames):
        for s in range(1, script.substeps + 1):
            tt = t - 1 + s / script.substeps
            Xp = X + dt * V + dt * dt * g * inv_mass[:, None]
            for d in script.drags:
                Xp[d.vertex] = X0[d.vertex] + interpolate_keys(d.keys, tt)
            _project_lengths(Xp, edges, rest, inv_mass, order, lead, script.sweeps, floor)
            V = (Xp - X) / dt
            contact = Xp[:, 2] <= floor + 1e-6
            # table friction: vertices on the table lose most of their velocity
            V[contact] *= 1.0 - script.contact_damping
            X = Xp
        out[t] = X
    return out


_SIM_CACHE: dict = {}


def simulate_object(script: SceneScript, t: int) -> np.ndarray:
    """Ground-truth vertices at frame ``t`` in the camera frame."""
    if not 0 <= t < script.n_frames:
        raise ValueError(f"frame {t} outside [0, {script.n_frames})")
    key = repr(script.to_dict())
    if key not in _SIM_CACHE:
        _SIM_CACHE.clear()
        _SIM_CACHE[key] = script.camera.to_camera(simulate_sequence(script))
    return _SIM_CACHE[key][t].copy()


# -- rendering -----------------------------------------------------------------

def _pixel_rays(intr: CameraIntrinsics, u0=0, u1=None, v0=0, v1=None):
    u1 = intr.width if u1 is None else u1
    v1 = intr.height if v1 is None else v1
    vv, uu = np.mgrid[v0:v1, u0:u1]
    dx = (uu - intr.cx) / intr.fx
    dy = (vv - intr.cy) / intr.fy
    return dx, dy


def _bbox(points_cam, pad, intr):
    """Pixel bounding box of a set of camera-frame points padded by a metric radius."""
    P = np.asarray(points_cam, float)
    if np.any(P[:, 2] <= pad):
        return 0, intr.width, 0, intr.height
    zmin = P[:, 2].min() - pad
    u = intr.fx * P[:, 0] / P[:, 2] + intr.cx
    v = intr.fy * P[:, 1] / P[:, 2] + intr.cy
    pu = intr.fx * pad / zmin + 2
    pv = intr.fy * pad / zmin + 2
    u0 = int(max(np.floor(u.min() - pu), 0))
    u1 = int(min(np.ceil(u.max() + pu) + 1, intr.width))
    v0 = int(max(np.floor(v.min() - pv), 0))
    v1 = int(min(np.ceil(v.max() + pv) + 1, intr.height))
    return u0, u1, v0, v1


def _ray_sphere(dx, dy, c, r):
    # ray p = t * (dx, dy, 1); returns the near root t (= z depth) or inf
    a = dx * dx + dy * dy + 1.0
    b = dx * c[0] + dy * c[1] + c[2]
    cc = c @ c - r * r
    h = b * b - a * cc
    t = (b - np.sqrt(np.maximum(h, 0.0))) / a
    return np.where((h >= 0) & (t > 0), t, np.inf)


def _ray_cylinder(dx, dy, pa, pb, r):
    ba = pb - pa
    baba = ba @ ba
    rd_ba = dx * ba[0] + dy * ba[1] + ba[2]
    oa = -pa
    oa_ba = oa @ ba
    rdrd = dx * dx + dy * dy + 1.0
    rd_oa = dx * oa[0] + dy * oa[1] + oa[2]
    a = baba * rdrd - rd_ba * rd_ba
    b = baba * rd_oa - oa_ba * rd_ba
    c = baba * (oa @ oa) - oa_ba * oa_ba - r * r * baba
    h = b * b - a * c
    with np.errstate(divide="ignore", invalid="ignore"):
        t = (-b - np.sqrt(np.maximum(h, 0.0))) / a
    y = oa_ba + t * rd_ba
    hit = (h >= 0) & (a > 0) & (t > 0) & (y > 0) & (y < baba)
    return np.where(hit, t, np.inf)


def _render_capsules(depth, owner, P, radius, intr, oid):
    for m in range(len(P)):
        u0, u1, v0, v1 = _bbox(P[m:m + 1], radius, intr)
        if u0 >= u1 or v0 >= v1:
            continue
        dx, dy = _pixel_rays(intr, u0, u1, v0, v1)
        t = _ray_sphere(dx, dy, P[m], radius)
        if m + 1 < len(P):
            u0b, u1b, v0b, v1b = _bbox(P[m:m + 2], radius, intr)
            dxb, dyb = _pixel_rays(intr, u0b, u1b, v0b, v1b)
            tc = _ray_cylinder(dxb, dyb, P[m], P[m + 1], radius)
            sub = depth[v0b:v1b, u0b:u1b]
            closer = tc < sub
            sub[closer] = tc[closer]
            owner[v0b:v1b, u0b:u1b][closer] = oid
        sub = depth[v0:v1, u0:u1]
        closer = t < sub
        sub[closer] = t[closer]
        owner[v0:v1, u0:u1][closer] = oid


def _render_triangles(depth, owner, P, tris, intr, oid):
    for tri in tris:
        A, B, C = P[tri[0]], P[tri[1]], P[tri[2]]
        u0, u1, v0, v1 = _bbox(np.stack([A, B, C]), 0.0, intr)
        if u0 >= u1 or v0 >= v1:
            continue
        dx, dy = _pixel_rays(intr, u0, u1, v0, v1)
        d = np.stack([dx, dy, np.ones_like(dx)], axis=-1)
        e1, e2 = B - A, C - A
        pvec = np.cross(d, e2)
        det = pvec @ e1
        with np.errstate(divide="ignore", invalid="ignore"):
            inv = 1.0 / det
            tvec = -A
            uu = (pvec @ tvec) * inv
            q = np.cross(tvec, e1)
            vv = (d @ q) * inv
            t = (e2 @ q) * inv
        hit = (np.abs(det) > 1e-15) & (uu >= 0) & (vv >= 0) & (uu + vv <= 1) & (t > 0)
        t = np.where(hit, t, np.inf)
        sub = depth[v0:v1, u0:u1]
        closer = t < sub
        sub[closer] = t[closer]
        owner[v0:v1, u0:u1][closer] = oid


def _render_box(depth, owner, lo, hi, cam: CameraSpec, intr, oid):
    R = cam.rotation()
    eye = np.asarray(cam.eye, float)
    corners = np.array([[x, y, z] for x in (lo[0], hi[0]) for y in (lo[1], hi[1])
                        for z in (lo[2], hi[2])])
    u0, u1, v0, v1 = _bbox(cam.to_camera(corners), 0.0, intr)
    if u0 >= u1 or v0 >= v1:
        return
    dx, dy = _pixel_rays(intr, u0, u1, v0, v1)
    dirs = np.stack([dx, dy, np.ones_like(dx)], axis=-1) @ R  # world-frame directions
    with np.errstate(divide="ignore", invalid="ignore"):
        t1 = (lo - eye) / dirs
        t2 = (hi - eye) / dirs
    tmin = np.nanmax(np.minimum(t1, t2), axis=-1)
    tmax = np.nanmin(np.maximum(t1, t2), axis=-1)
    hit = (tmax >= tmin) & (tmax > 0)
    t = np.where(hit, np.where(tmin > 0, tmin, tmax), np.inf)
    sub = depth[v0:v1, u0:u1]
    closer = t < sub
    sub[closer] = t[closer]
    owner[v0:v1, u0:u1][closer] = oid


def _render_table(depth, owner, script: SceneScript, intr):
    cam = script.camera
    R = cam.rotation()
    eye = np.asarray(cam.eye, float)
    dx, dy = _pixel_rays(intr)
    dirs = np.stack([dx, dy, np.ones_like(dx)], axis=-1) @ R
    with np.errstate(divide="ignore", invalid="ignore"):
        t = (script.table_height - eye[2]) / dirs[..., 2]
    p = eye + t[..., None] * dirs
    s = script.table_half_size
    hit = (t > 0) & (np.abs(p[..., 0]) <= s) & (np.abs(p[..., 1]) <= s)
    t = np.where(hit, t, np.inf)
    closer = t < depth
    depth[closer] = t[closer]
    owner[closer] = 2


def occluder_boxes(script: SceneScript, t: int):
    boxes = []
    for occ in script.occluders:
        if occ.frames[0] <= t <= occ.frames[1]:
            c = interpolate_keys(occ.keys, t)
            half = np.asarray(occ.size, float) / 2
            boxes.append((c - half, c + half))
    return boxes


def cloth_triangles(rows: int, cols: int) -> np.ndarray:
    idx = np.arange(rows * cols).reshape(rows, cols)
    a, b = idx[:-1, :-1].ravel(), idx[:-1, 1:].ravel()
    c, d = idx[1:, :-1].ravel(), idx[1:, 1:].ravel()
    return np.concatenate([np.stack([a, b, d], 1), np.stack([a, d, c], 1)])


def render_frame(gt_vertices, script: SceneScript, t: int, include_object: bool = True,
                 include_table: bool = True):
    """Z-buffer depth (0 = no return) and object mask for camera-frame vertices."""
    intr = script.camera.intrinsics
    depth = np.full((intr.height, intr.width), np.inf)
    owner = np.zeros((intr.height, intr.width), np.int8)  # 1 object, 2 table, 3 occluder
    if include_table:
        _render_table(depth, owner, script, intr)
    for lo, hi in occluder_boxes(script, t):
        _render_box(depth, owner, lo, hi, script.camera, intr, 3)
    if include_object and gt_vertices is not None and len(gt_vertices):
        P = np.asarray(gt_vertices, float)
        if script.kind == "rope":
            _render_capsules(depth, owner, P, script.rope.radius, intr, 1)
        else:
            _render_triangles(depth, owner, P, cloth_triangles(script.cloth.rows, script.cloth.cols),
                              intr, 1)
    mask = owner == 1
    depth[~np.isfinite(depth)] = 0.0
    return depth, mask


def empty_scene_render(script: SceneScript):
    """Depth/mask with nothing in view (no object, table or occluder)."""
    intr = script.camera.intrinsics
    return np.zeros((intr.height, intr.width)), np.zeros((intr.height, intr.width), bool)


def add_depth_noise(depth, sigma: float, seed: int) -> np.ndarray:
    """I.i.d. Gaussian noise on valid pixels; invalid pixels are left untouched."""
    if sigma < 0:
        raise ValueError("sigma must be >= 0")
    depth = np.array(depth, float)
    if sigma == 0:
        return depth
    ok = valid_depth(depth)
    rng = np.random.default_rng(seed)
    depth[ok] += rng.normal(0.0, sigma, size=int(ok.sum()))
    return depth


def mean_vertex_error(Y, Y_gt) -> float:
    Y, Y_gt = np.asarray(Y, float), np.asarray(Y_gt, float)
    if Y.shape != Y_gt.shape:
        raise ValueError(f"shape mismatch {Y.shape} vs {Y_gt.shape}")
    return float(np.mean(np.linalg.norm(Y - Y_gt, axis=1)))


# -- datasets ------------------------------------------------------------------

def frame_seed(seed: int, t: int) -> int:
    return int(np.random.SeedSequence([seed, t]).generate_state(1)[0])


def model_for(script: SceneScript) -> TrackedModel:
    _, edges = rest_state(script)
    return TrackedModel(simulate_object(script, 0), edges)


def write_csv_rows(path, rows) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        for r in np.asarray(rows, float):
            w.writerow([f"{x:.9g}" for x in r])


def read_csv_rows(path) -> np.ndarray:
    with open(path, newline="") as f:
        return np.array([[float(x) for x in row] for row in csv.reader(f) if row], float)


class SceneRenderer:
    """Renders a script frame by frame; clean renders are cached so that several
    noise seeds over one scene only pay for rasterisation once."""

    def __init__(self, script: SceneScript):
        self.script = script
        self._clean = {}

    def gt(self, t: int) -> np.ndarray:
        return simulate_object(self.script, t)

    def clean(self, t: int):
        if t not in self._clean:
            self._clean[t] = render_frame(self.gt(t), self.script, t)
        return self._clean[t]

    def frame(self, t: int, seed: int | None = None):
        seed = self.script.seed if seed is None else seed
        depth, mask = self.clean(t)
        return add_depth_noise(depth, self.script.noise_sigma, frame_seed(seed, t)), mask

    def correspondences(self, t: int) -> CorrespondenceSet:
        if not self.script.pins:
            return CorrespondenceSet()
        gt = self.gt(t)
        pins = np.asarray(self.script.pins, np.int64)
        return CorrespondenceSet(gt[pins], np.stack([pins, np.arange(len(pins))], axis=1))


def write_dataset(script: SceneScript, out_dir) -> Path:
    """Write frames, ground truth, model.json, camera.json and scene.json."""
    problems = script.validate()
    if problems:
        raise ValueError("; ".join(problems))
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rend = SceneRenderer(script)
    save_json(script.to_dict(), out / "scene.json")
    save_json(script.camera.intrinsics.to_dict(), out / "camera.json")
    save_json(model_for(script).to_dict(), out / "model.json")
    for t in range(script.n_frames):
        depth, mask = rend.frame(t)
        write_depth(out / f"frame_{t:05d}.depth.bin", depth)
        write_mask(out / f"frame_{t:05d}.mask.pgm", mask)
        write_csv_rows(out / f"gt_{t:05d}.csv", rend.gt(t))
        corr = rend.correspondences(t)
        if len(corr):
            save_json(corr.to_dict(), out / f"frame_{t:05d}.corr.json")
    return out


# -- scene presets ---------------------------------------------------------------

def preset(name: str, **overrides) -> SceneScript:
    """Named acceptance scenes; keyword overrides replace top-level script fields."""
    drag_end = DragPath(49, [[0, 0, 0, 0], [5, 0, 0, 0], [85, 0.0, 0.25, 0.0]])
    if name == "static":
        s = SceneScript()
    elif name == "slow_drag":
        s = SceneScript(drags=[DragPath(49, [[0, 0, 0, 0], [10, 0, 0, 0], [85, 0.0, 0.15, 0.0]])])
    elif name == "rope_occlusion":
        # a floating box sweeps along the rope while one end is dragged sideways
        s = SceneScript(drags=[drag_end],
                        occluders=[OccluderSpec(size=(0.15, 0.15, 0.05),
                                                keys=[[30, -0.2, -0.12, 0.15],
                                                      [60, 0.2, -0.08, 0.15]],
                                                frames=(30, 60))])
    elif name == "full_occlusion":
        # the rope starts folded into a serpentine, is straightened in view, then
        # folds back while a large board hides it completely
        hidden = (47, 69)
        s = SceneScript(bends=[BendPath([[0, a], [5, a], [35, 0], [46, 0], [66, a]], c, 0.1)
                               for a, c in ((180, 0.25), (-180, 0.5), (180, 0.75))],
                        occluders=[OccluderSpec(size=(0.9, 0.9, 0.02), keys=[[0, 0.0, -0.45, 0.4]],
                                                frames=hidden)])
    elif name == "fold":
        # both ends gripped; one end is lifted and laid back over the other half
        s = SceneScript(drags=[DragPath(0, [[0, 0, 0, 0]]),
                               DragPath(49, [[0, 0, 0, 0], [10, 0, 0, 0], [40, -0.45, 0.04, 0.12],
                                             [70, -0.8, 0.03, 0.02]])],
                        pins=[0, 49])
    elif name == "cloth":
        s = SceneScript(kind="cloth", drags=[DragPath(99, [[0, 0, 0, 0], [10, 0, 0, 0],
                                                            [80, 0.05, 0.1, 0.05]])])
    else:
        raise ValueError(f"unknown preset {name!r}")
    for k, v in overrides.items():
        setattr(s, k, v)
    return s


PRESETS = ("static", "slow_drag", "rope_occlusion", "full_occlusion", "fold", "cloth")
