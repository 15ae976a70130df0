"""Shared records, tracking parameters and validation.

Every record is a frozen dataclass holding read-only numpy arrays, so
instances can be shared freely between threads or processes.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np


class TrackingError(RuntimeError):
    """Base class for failures of a single tracking step."""


class TotalOcclusionError(TrackingError):
    """No observed point is explained by the model (N_p == 0)."""


class SingularSystemError(TrackingError):
    """The M-step linear system could not be solved."""


class InfeasibleError(TrackingError):
    """Pinned correspondences alone violate the stretch limits."""


class NoConvergenceError(TrackingError):
    """The constrained projection hit its iteration cap."""


def _frozen(a, dtype=float, shape=None):
    arr = np.array(a, dtype=dtype, copy=True)
    if shape is not None and arr.size == 0:
        arr = arr.reshape(shape)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class TrackedModel:
    vertices0: np.ndarray
    edges: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "vertices0", _frozen(self.vertices0, float, (0, 3)))
        object.__setattr__(self, "edges", _frozen(self.edges, np.int64, (0, 2)))

    @property
    def n_vertices(self) -> int:
        return len(self.vertices0)

    @property
    def rest_lengths(self) -> np.ndarray:
        e = self.edges
        return np.linalg.norm(self.vertices0[e[:, 0]] - self.vertices0[e[:, 1]], axis=1)

    def to_dict(self) -> dict:
        return {"vertices": self.vertices0.tolist(), "edges": self.edges.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "TrackedModel":
        return cls(np.asarray(d["vertices"], float), np.asarray(d["edges"], np.int64))


def validate_model(model: TrackedModel) -> list[str]:
    """Return the list of violated model invariants; empty means valid."""
    problems = []
    Y, E = model.vertices0, model.edges
    if Y.ndim != 2 or Y.shape[1] != 3:
        problems.append("vertices must be M x 3")
        return problems
    M = len(Y)
    if M < 2:
        problems.append("fewer than 2 vertices")
    if not np.all(np.isfinite(Y)):
        problems.append("non-finite vertex")
    if E.ndim != 2 or E.shape[1] != 2 or len(E) < 1:
        problems.append("edges must be K x 2 with K >= 1")
        return problems
    if np.any(E < 0) or np.any(E >= M):
        problems.append("edge index out of range")
        return problems
    if np.any(E[:, 0] == E[:, 1]):
        problems.append("self-edge")
    keys = {tuple(sorted(e)) for e in E.tolist()}
    if len(keys) != len(E):
        problems.append("duplicate edge")
    # union-find connectivity
    parent = list(range(M))

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    for i, j in E.tolist():
        parent[find(i)] = find(j)
    if len({find(i) for i in range(M)}) > 1:
        problems.append("disconnected")
    return problems


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def validate(self) -> list[str]:
        problems = []
        if not (self.fx > 0 and self.fy > 0):
            problems.append("focal lengths must be positive")
        if not (0 <= self.cx < self.width):
            problems.append("cx outside image")
        if not (0 <= self.cy < self.height):
            problems.append("cy outside image")
        return problems

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "CameraIntrinsics":
        return cls(float(d["fx"]), float(d["fy"]), float(d["cx"]), float(d["cy"]),
                   int(d["width"]), int(d["height"]))

    def scaled(self, factor: float) -> "CameraIntrinsics":
        return CameraIntrinsics(self.fx * factor, self.fy * factor, self.cx * factor,
                                self.cy * factor, int(round(self.width * factor)),
                                int(round(self.height * factor)))


@dataclass(frozen=True)
class FrameObservation:
    depth: np.ndarray
    mask: np.ndarray
    intrinsics: CameraIntrinsics
    cloud: np.ndarray
    distance_image: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "depth", _frozen(self.depth, np.float64))
        object.__setattr__(self, "mask", _frozen(self.mask, bool))
        object.__setattr__(self, "cloud", _frozen(self.cloud, float, (0, 3)))
        object.__setattr__(self, "distance_image", _frozen(self.distance_image, np.float64))

    def to_dict(self) -> dict:
        return {"depth": self.depth.tolist(), "mask": self.mask.astype(int).tolist(),
                "intrinsics": self.intrinsics.to_dict(), "cloud": self.cloud.tolist(),
                "distance_image": self.distance_image.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "FrameObservation":
        return cls(np.asarray(d["depth"], float), np.asarray(d["mask"], bool),
                   CameraIntrinsics.from_dict(d["intrinsics"]),
                   np.asarray(d["cloud"], float).reshape(-1, 3),
                   np.asarray(d["distance_image"], float))


@dataclass(frozen=True)
class TrackingState:
    vertices: np.ndarray
    sigma2: float = 0.0
    posteriors: np.ndarray = field(default_factory=lambda: np.zeros((0, 0)))
    frame_index: int = -1

    def __post_init__(self):
        object.__setattr__(self, "vertices", _frozen(self.vertices, float, (0, 3)))
        object.__setattr__(self, "posteriors", _frozen(self.posteriors, float))
        object.__setattr__(self, "sigma2", float(self.sigma2))
        object.__setattr__(self, "frame_index", int(self.frame_index))

    def to_dict(self) -> dict:
        return {"vertices": self.vertices.tolist(), "sigma2": self.sigma2,
                "posteriors": self.posteriors.tolist(), "frame_index": self.frame_index}

    @classmethod
    def from_dict(cls, d: dict) -> "TrackingState":
        P = np.asarray(d["posteriors"], float)
        if P.ndim == 1:
            P = P.reshape(0, 0) if P.size == 0 else P[None]
        return cls(np.asarray(d["vertices"], float).reshape(-1, 3), d["sigma2"], P,
                   d["frame_index"])


@dataclass(frozen=True)
class CorrespondenceSet:
    """Known vertex positions, e.g. gripper points: vertex pairs[i,0] sits at points[pairs[i,1]]."""

    points: np.ndarray = field(default_factory=lambda: np.zeros((0, 3)))
    pairs: np.ndarray = field(default_factory=lambda: np.zeros((0, 2), np.int64))

    def __post_init__(self):
        object.__setattr__(self, "points", _frozen(self.points, float, (0, 3)))
        object.__setattr__(self, "pairs", _frozen(self.pairs, np.int64, (0, 2)))

    def __len__(self):
        return len(self.pairs)

    def validate(self, n_vertices: int) -> list[str]:
        problems = []
        if len(self.pairs) == 0:
            return problems
        m, k = self.pairs[:, 0], self.pairs[:, 1]
        if np.any(m < 0) or np.any(m >= n_vertices):
            problems.append("vertex index out of range")
        if np.any(k < 0) or np.any(k >= len(self.points)):
            problems.append("point index out of range")
        if len(np.unique(m)) != len(m):
            problems.append("vertex pinned more than once")
        return problems

    def targets(self) -> tuple[np.ndarray, np.ndarray]:
        """(vertex indices, their pinned positions)."""
        return self.pairs[:, 0], self.points[self.pairs[:, 1]]

    def to_dict(self) -> dict:
        return {"points": self.points.tolist(), "pairs": self.pairs.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "CorrespondenceSet":
        return cls(np.asarray(d.get("points", []), float).reshape(-1, 3),
                   np.asarray(d.get("pairs", []), np.int64).reshape(-1, 2))


@dataclass(frozen=True)
class Parameters:
    lambda_stretch: float = 3.0
    beta: float = 1.0
    gamma: float = 1.0
    alpha: float = 0.5
    omega: float = 0.1
    tau: float = 0.7
    k_vis: float = 10.0
    k_free: float = 100.0
    epsilon: float = 1e-4
    lle_neighbors: int = 8
    knn_retries: int = 12
    cloud_points: int = 300
    max_em_iters: int = 100
    sigma2_change_tol: float = 1e-8
    voxel_size: float = 0.004
    projection_iters: int = 200
    seed: int = 0

    def validate(self) -> list[str]:
        problems = []
        if not self.lambda_stretch >= 1:
            problems.append("lambda_stretch must be >= 1")
        if not 0 <= self.omega <= 1:
            problems.append("omega must lie in [0, 1]")
        if not 0 <= self.tau <= 1:
            problems.append("tau must lie in [0, 1]")
        for name in ("beta", "gamma", "alpha", "k_vis", "k_free", "epsilon"):
            if not getattr(self, name) > 0:
                problems.append(f"{name} must be positive")
        for name in ("lle_neighbors", "knn_retries", "cloud_points", "max_em_iters"):
            if getattr(self, name) < 1:
                problems.append(f"{name} must be >= 1")
        return problems

    def replace(self, **changes) -> "Parameters":
        d = asdict(self)
        d.update(changes)
        return Parameters(**d)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "Parameters":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown parameter(s): {sorted(unknown)}")
        return cls(**d)


def load_json(path) -> dict:
    with open(path) as f:
        return json.load(f)


def save_json(obj: dict, path) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def line_model(length: float = 1.0, n_vertices: int = 50, origin=(0.0, 0.0, 0.0),
               direction=(1.0, 0.0, 0.0)) -> TrackedModel:
    """Straight rope template with consecutive-vertex edges."""
    d = np.asarray(direction, float)
    d = d / np.linalg.norm(d)
    s = np.linspace(0.0, length, n_vertices)
    verts = np.asarray(origin, float) + s[:, None] * d
    edges = np.stack([np.arange(n_vertices - 1), np.arange(1, n_vertices)], axis=1)
    return TrackedModel(verts, edges)


def grid_model(rows: int, cols: int, cell: float, origin=(0.0, 0.0, 0.0)) -> TrackedModel:
    """Cloth template: rows x cols lattice in the xy-plane with 4-neighbour edges."""
    ii, jj = np.meshgrid(np.arange(rows), np.arange(cols), indexing="ij")
    verts = np.stack([jj.ravel() * cell, ii.ravel() * cell, np.zeros(rows * cols)], axis=1)
    verts = verts + np.asarray(origin, float)
    idx = np.arange(rows * cols).reshape(rows, cols)
    horiz = np.stack([idx[:, :-1].ravel(), idx[:, 1:].ravel()], axis=1)
    vert = np.stack([idx[:-1, :].ravel(), idx[1:, :].ravel()], axis=1)
    return TrackedModel(verts, np.concatenate([horiz, vert]))
