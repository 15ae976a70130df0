"""Full-occlusion scene tracked with and without the recovery stage."""
from deformtrack.runner import track_scene
from deformtrack.synth import CameraSpec, SceneRenderer, mean_vertex_error, model_for, preset
from deformtrack.track import TrackOptions

HALF = CameraSpec(fx=300.0, fy=300.0, cx=239.5, cy=134.5, width=480, height=270)


def main():
    script = preset("full_occlusion", camera=HALF)
    rend = SceneRenderer(script)
    model = model_for(script)
    runs = {name: track_scene(rend, model, options=opts, noise_seed=0).results
            for name, opts in (("recovery", TrackOptions()),
                               ("no recovery", TrackOptions(use_recovery=False)))}
    print("frame  J(no rec)  err(no rec) mm  err(rec) mm  recovered")
    for a, b in zip(runs["no recovery"], runs["recovery"]):
        gt = rend.gt(a.index)
        print(f"{a.index:5d}  {a.j_free:9.3f}  {1e3 * mean_vertex_error(a.vertices, gt):14.1f}"
              f"  {1e3 * mean_vertex_error(b.vertices, gt):11.1f}  {'yes' if b.recovery_used else ''}")


if __name__ == "__main__":
    main()
