"""Failure detection from free space and kNN retry from a descriptor library."""
from __future__ import annotations

import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.spatial import cKDTree

from .cpd import EmWorkspace
from .imaging import sample_vertices
from .track import TrackOptions, new_stats, track
from .types import (CorrespondenceSet, FrameObservation, Parameters, TotalOcclusionError,
                    TrackedModel, TrackingError, TrackingState)

DESCRIPTOR_BINS = 45
NORMAL_NEIGHBORS = 10
LIBRARY_VERSION = 1


def free_space_terms(Y, frame: FrameObservation, k_free: float) -> np.ndarray:
    """Per-vertex free-space violation in [0, 1]; 0 for off-image/invalid-depth vertices."""
    z, d_obs, dist, usable = sample_vertices(Y, frame)
    gap = np.maximum(d_obs - z, 0.0)
    return np.where(usable, -np.expm1(-k_free * dist * gap), 0.0)


def free_space_energy(Y, frame: FrameObservation, k_free: float) -> float:
    """Mean over vertices of 1 - exp(-k_free * dist * gap in front of the surface)."""
    return float(np.mean(free_space_terms(Y, frame, k_free)))


@dataclass(frozen=True)
class ShapeDescriptor:
    histogram: np.ndarray


def estimate_normals(cloud, viewpoint, k: int = NORMAL_NEIGHBORS) -> np.ndarray:
    cloud = np.asarray(cloud, float)
    _, idx = cKDTree(cloud).query(cloud, k=k + 1)
    nb = cloud[idx]
    nb = nb - nb.mean(axis=1, keepdims=True)
    cov = np.einsum("nki,nkj->nij", nb, nb)
    _, vecs = np.linalg.eigh(cov)
    normals = vecs[:, :, 0]
    flip = np.sum(normals * (np.asarray(viewpoint, float) - cloud), axis=1) < 0
    normals[flip] *= -1
    return normals


def shape_descriptor(cloud, viewpoint=(0.0, 0.0, 0.0), bins: int = DESCRIPTOR_BINS) -> ShapeDescriptor:
    """Viewpoint-angle histogram: normal vs. view ray, normal vs. centroid ray, centroid distance."""
    cloud = np.asarray(cloud, float)
    if len(cloud) < NORMAL_NEIGHBORS + 1:
        return ShapeDescriptor(np.zeros(3 * bins))
    vp = np.asarray(viewpoint, float)
    normals = estimate_normals(cloud, vp)
    rays = vp - cloud
    rays /= np.maximum(np.linalg.norm(rays, axis=1, keepdims=True), 1e-300)
    centroid = cloud.mean(axis=0)
    c_ray = vp - centroid
    c_ray /= max(np.linalg.norm(c_ray), 1e-300)
    radial = np.linalg.norm(cloud - centroid, axis=1)
    radial = radial / radial.max() if radial.max() > 0 else radial

    h1, _ = np.histogram(np.clip(np.sum(normals * rays, axis=1), 0, 1), bins=bins, range=(0, 1))
    h2, _ = np.histogram(np.clip(normals @ c_ray, -1, 1), bins=bins, range=(-1, 1))
    h3, _ = np.histogram(radial, bins=bins, range=(0, 1))
    hist = np.concatenate([h1, h2, h3]).astype(float)
    return ShapeDescriptor(hist / hist.sum())


@dataclass
class LibraryEntry:
    frame_index: int
    descriptor: np.ndarray
    state: np.ndarray


@dataclass
class DescriptorLibrary:
    """Descriptors of well-tracked frames with the states they were tracked to."""

    entries: list = field(default_factory=list)

    def __len__(self):
        return len(self.entries)

    def add(self, frame_index: int, descriptor, state) -> "DescriptorLibrary":
        if self.entries and frame_index <= self.entries[-1].frame_index:
            raise ValueError(f"frame index {frame_index} not after {self.entries[-1].frame_index}")
        hist = descriptor.histogram if isinstance(descriptor, ShapeDescriptor) else descriptor
        self.entries.append(LibraryEntry(int(frame_index), np.array(hist, float),
                                         np.array(state, float)))
        return self

    def descriptors(self) -> np.ndarray:
        if not self.entries:
            return np.zeros((0, 0))
        return np.stack([e.descriptor for e in self.entries])

    def query_knn(self, descriptor, k: int):
        """Up to k entries by ascending L2 distance; ties go to the earlier frame."""
        if not self.entries:
            return []
        hist = descriptor.histogram if isinstance(descriptor, ShapeDescriptor) else descriptor
        d = np.linalg.norm(self.descriptors() - np.asarray(hist, float), axis=1)
        frames = np.array([e.frame_index for e in self.entries])
        order = np.lexsort((frames, d))[:k]
        return [(self.entries[i].frame_index, self.entries[i].state, float(d[i])) for i in order]

    def renumbered_before(self, first_index: int) -> "DescriptorLibrary":
        """Copy whose entries keep their order but end at ``first_index - 1``."""
        n = len(self.entries)
        return DescriptorLibrary([LibraryEntry(first_index - n + i, e.descriptor, e.state)
                                  for i, e in enumerate(self.entries)])

    def compact(self, target_size: int, seed: int = 0, iters: int = 50) -> "DescriptorLibrary":
        """k-means over descriptors, keeping the entry nearest each centroid."""
        if target_size < 1:
            raise ValueError("target_size must be >= 1")
        if target_size >= len(self.entries):
            return DescriptorLibrary(list(self.entries))
        F = self.descriptors()
        centers = _kmeans(F, target_size, seed, iters)
        keep = set()
        for c in centers:
            d = np.linalg.norm(F - c, axis=1)
            # argmin returns the first (earliest) entry on ties
            keep.add(int(np.argmin(d)))
        return DescriptorLibrary([self.entries[i] for i in sorted(keep)])

    def save(self, path) -> None:
        doc = {"version": LIBRARY_VERSION,
               "entries": [{"frame_index": e.frame_index, "histogram": e.descriptor.tolist(),
                            "state": e.state.tolist()} for e in self.entries]}
        Path(path).write_text(json.dumps(doc))

    @classmethod
    def load(cls, path) -> "DescriptorLibrary":
        doc = json.loads(Path(path).read_text())
        if doc.get("version") != LIBRARY_VERSION:
            raise ValueError(f"unsupported library version {doc.get('version')}")
        lib = cls()
        for e in doc["entries"]:
            lib.add(e["frame_index"], np.asarray(e["histogram"]), np.asarray(e["state"]))
        return lib


def _kmeans(F, k, seed, iters):
    rng = np.random.default_rng(seed)
    # k-means++ seeding
    centers = [F[rng.integers(len(F))]]
    for _ in range(1, k):
        d2 = np.min(np.sum((F[:, None] - np.array(centers)[None]) ** 2, axis=-1), axis=1)
        if d2.sum() == 0:
            centers.append(F[rng.integers(len(F))])
        else:
            centers.append(F[rng.choice(len(F), p=d2 / d2.sum())])
    C = np.array(centers)
    for _ in range(iters):
        labels = np.argmin(np.sum((F[:, None] - C[None]) ** 2, axis=-1), axis=1)
        newC = np.array([F[labels == j].mean(axis=0) if np.any(labels == j) else C[j]
                         for j in range(k)])
        if np.allclose(newC, C):
            break
        C = newC
    return C


def library_add(lib: DescriptorLibrary, frame_index, descriptor, state) -> DescriptorLibrary:
    return lib.add(frame_index, descriptor, state)


def library_query_knn(lib: DescriptorLibrary, descriptor, k: int):
    return lib.query_knn(descriptor, k)


def library_compact(lib: DescriptorLibrary, target_size: int, seed: int = 0) -> DescriptorLibrary:
    return lib.compact(target_size, seed)


def track_frame(frame: FrameObservation, prev_state: TrackingState, ws: EmWorkspace,
                lib: DescriptorLibrary, params: Parameters, model: TrackedModel,
                corr: CorrespondenceSet | None = None, options: TrackOptions = TrackOptions(),
                frame_index: int | None = None, stats=None):
    """Track one frame with failure detection; returns (state, recovery_used).

    ``stats`` (a defaultdict(float)) accumulates timings and call counters.
    """
    stats = new_stats() if stats is None else stats
    t = prev_state.frame_index + 1 if frame_index is None else frame_index
    if len(frame.cloud) == 0:
        stats["empty_frames"] += 1
        return TrackingState(prev_state.vertices, prev_state.sigma2,
                             np.zeros((0, 0)), t), False

    try:
        state = track(frame, prev_state.vertices, ws, params, model, corr, options, stats, t)
    except TotalOcclusionError:
        # nothing in the cloud is explained by the model: keep the previous state
        stats["no_evidence_frames"] += 1
        state = TrackingState(prev_state.vertices, prev_state.sigma2, np.zeros((0, 0)), t)
    t0 = time.perf_counter()
    J = free_space_energy(state.vertices, frame, params.k_free)
    stats["j_free"] = J
    if not options.use_recovery:
        stats["recovery_time"] += time.perf_counter() - t0
        return state, False
    desc = shape_descriptor(frame.cloud)
    if J < params.tau:
        lib.add(t, desc, state.vertices)
        stats["library_adds"] += 1
        stats["recovery_time"] += time.perf_counter() - t0
        return state, False

    stats["recovery_calls"] += 1
    best, best_J = state, J
    # retry timings belong to the recovery stage, not to EM/projection
    retry_stats = new_stats()
    for _, stored, _ in lib.query_knn(desc, params.knn_retries):
        try:
            cand = track(frame, stored, ws, params, model, corr, options, retry_stats, t)
        except TrackingError:
            continue
        cj = free_space_energy(cand.vertices, frame, params.k_free)
        if cj < best_J:
            best, best_J = cand, cj
    stats["retry_tracks"] += retry_stats["em_calls"]
    if best is not state:
        stats["recovery_replacements"] += 1
    stats["j_free"] = best_J
    stats["recovery_time"] += time.perf_counter() - t0
    return best, True
