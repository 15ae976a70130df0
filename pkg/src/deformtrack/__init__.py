"""Occlusion-robust tracking of deformable objects from depth + mask sequences."""
from .types import (CameraIntrinsics, CorrespondenceSet, FrameObservation, Parameters,
                    TrackedModel, TrackingState, validate_model)

__all__ = ["CameraIntrinsics", "CorrespondenceSet", "FrameObservation", "Parameters",
           "TrackedModel", "TrackingState", "validate_model"]
