"""One tracking step: regularised EM followed by the stretch projection."""
from __future__ import annotations

import time
from collections import defaultdict
from dataclasses import dataclass

import numpy as np

from .cpd import EmWorkspace, cpd_em
from .projection import ProjectionProblem, project
from .types import CorrespondenceSet, FrameObservation, Parameters, TrackedModel, TrackingState


@dataclass(frozen=True)
class TrackOptions:
    """Ablation switches; everything on is the full method."""

    use_vis_prior: bool = True
    use_lle: bool = True
    use_constraint: bool = True
    use_recovery: bool = True


def new_stats():
    return defaultdict(float)


def track(frame: FrameObservation, Y_prev, ws: EmWorkspace, params: Parameters,
          model: TrackedModel, corr: CorrespondenceSet | None = None,
          options: TrackOptions = TrackOptions(), stats=None,
          frame_index: int = -1) -> TrackingState:
    stats = new_stats() if stats is None else stats
    t0 = time.perf_counter()
    em = cpd_em(frame, Y_prev, ws, params, use_vis_prior=options.use_vis_prior)
    t1 = time.perf_counter()
    stats["em_time"] += t1 - t0
    stats["em_calls"] += 1
    stats["em_iterations"] += em.iterations
    stats["vis_prior_calls"] += int(options.use_vis_prior)
    stats["lle_calls"] += int(options.use_lle)
    Y = em.vertices
    if options.use_constraint:
        problem = ProjectionProblem(Y, model.edges, model.rest_lengths,
                                    params.lambda_stretch, corr or CorrespondenceSet())
        Y = project(problem, max_iters=params.projection_iters)
        stats["projection_calls"] += 1
    stats["projection_time"] += time.perf_counter() - t1
    return TrackingState(Y, em.sigma2, em.posteriors, frame_index)


def make_workspace(model: TrackedModel, params: Parameters, options: TrackOptions) -> EmWorkspace:
    if options.use_lle:
        return EmWorkspace.from_template(model.vertices0, params.lle_neighbors)
    return EmWorkspace.without_lle(model.n_vertices)


def initial_state(model: TrackedModel) -> TrackingState:
    return TrackingState(np.array(model.vertices0), 0.0, np.zeros((0, 0)), -1)
