"""Sequence-level tracking loop with per-stage timing and call counters."""
from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .imaging import make_frame
from .recovery import DescriptorLibrary, free_space_energy, track_frame
from .track import TrackOptions, initial_state, make_workspace, new_stats
from .types import CorrespondenceSet, Parameters, TrackedModel, TrackingState


@dataclass
class FrameResult:
    index: int
    vertices: np.ndarray
    j_free: float
    recovery_used: bool
    n_points: int
    times: dict


@dataclass
class SequenceTracker:
    """Runs the full per-frame pipeline over a sequence of (depth, mask, corr) inputs.

    A non-empty starting library (e.g. built offline) is renumbered so that its
    entries precede frame 0 of this sequence.
    """

    model: TrackedModel
    params: Parameters = field(default_factory=Parameters)
    options: TrackOptions = field(default_factory=TrackOptions)
    library: DescriptorLibrary = field(default_factory=DescriptorLibrary)
    initial_vertices: np.ndarray | None = None

    def __post_init__(self):
        if len(self.library):
            self.library = self.library.renumbered_before(0)
        self.ws = make_workspace(self.model, self.params, self.options)
        self.state = initial_state(self.model)
        if self.initial_vertices is not None:
            self.state = TrackingState(self.initial_vertices, 0.0, np.zeros((0, 0)), -1)
        self.counters = new_stats()
        self.results: list[FrameResult] = []

    def step(self, depth, mask, intrinsics, corr: CorrespondenceSet | None = None,
             index: int | None = None) -> FrameResult:
        index = self.state.frame_index + 1 if index is None else index
        stats = new_stats()
        t0 = time.perf_counter()
        frame = make_frame(depth, mask, intrinsics, self.params.cloud_points,
                           seed=_frame_seed(self.params.seed, index),
                           voxel_size=self.params.voxel_size)
        stats["preprocess_time"] = time.perf_counter() - t0
        self.state, used = track_frame(frame, self.state, self.ws, self.library, self.params,
                                       self.model, corr, self.options, index, stats)
        if "j_free" not in stats:
            stats["j_free"] = free_space_energy(self.state.vertices, frame, self.params.k_free)
        stats["total_time"] = time.perf_counter() - t0
        for k, v in stats.items():
            if k != "j_free":
                self.counters[k] += v
        res = FrameResult(index, np.array(self.state.vertices), float(stats["j_free"]), used,
                          len(frame.cloud), dict(stats))
        self.results.append(res)
        return res


def _frame_seed(seed: int, index: int) -> int:
    return int(np.random.SeedSequence([seed, index, 7]).generate_state(1)[0])


def track_scene(renderer, model: TrackedModel, params: Parameters = Parameters(),
                options: TrackOptions = TrackOptions(), noise_seed: int | None = None,
                library: DescriptorLibrary | None = None, initial_vertices=None,
                use_pins: bool = True):
    """Track an in-memory synthetic scene; returns the SequenceTracker with results."""
    tracker = SequenceTracker(model, params, options, library or DescriptorLibrary(),
                              initial_vertices)
    intr = renderer.script.camera.intrinsics
    for t in range(renderer.script.n_frames):
        depth, mask = renderer.frame(t, noise_seed)
        corr = renderer.correspondences(t) if use_pins else None
        tracker.step(depth, mask, intr, corr, t)
    return tracker
