"""Start tracking from a wrong initial shape, with and without an offline library."""
import numpy as np

from deformtrack.imaging import make_frame
from deformtrack.recovery import DescriptorLibrary, shape_descriptor
from deformtrack.runner import SequenceTracker
from deformtrack.synth import (CameraSpec, SceneRenderer, mean_vertex_error, model_for, preset,
                               rest_state)

HALF = CameraSpec(fx=300.0, fy=300.0, cx=239.5, cy=134.5, width=480, height=270)


def main():
    script = preset("full_occlusion", camera=HALF)
    rend = SceneRenderer(script)
    intr = HALF.intrinsics
    lib = DescriptorLibrary()
    for t in range(4, 46, 3):
        depth, mask = rend.frame(t)
        lib.add(t, shape_descriptor(make_frame(depth, mask, intr, 300, seed=t).cloud), rend.gt(t))
    # straight rope rotated a quarter turn about its centre
    X0 = rest_state(script)[0]
    R = np.array([[0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 1.0]])
    wrong = script.camera.to_camera((X0 - X0.mean(axis=0)) @ R.T + X0.mean(axis=0))
    for name, start in (("offline library", lib), ("empty library", DescriptorLibrary())):
        tracker = SequenceTracker(model_for(script), library=start, initial_vertices=wrong)
        errs = []
        for t in range(10):
            depth, mask = rend.frame(t)
            res = tracker.step(depth, mask, intr, None, t)
            errs.append(mean_vertex_error(res.vertices, rend.gt(t)))
        print(f"{name}: error over first 10 frames (mm) "
              + " ".join(f"{1e3 * e:.0f}" for e in errs))


if __name__ == "__main__":
    main()
