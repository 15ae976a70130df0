import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from deformtrack.imaging import (PixelProjection, depth_mask_to_cloud, distance_transform,
                                 load_raw_frame, make_frame, project_points, project_vertex,
                                 read_depth, read_mask, sample_depth_and_distance,
                                 write_depth, write_mask)
from deformtrack.types import CameraIntrinsics

from oracles import brute_force_edt

INTR = CameraIntrinsics(500.0, 500.0, 320.0, 240.0, 640, 480)
SMALL = CameraIntrinsics(40.0, 40.0, 16.0, 12.0, 32, 24)


def test_empty_mask_gives_empty_cloud():
    depth = np.ones((24, 32))
    assert depth_mask_to_cloud(depth, np.zeros((24, 32), bool), SMALL, 300).shape == (0, 3)


def test_principal_point_pixel():
    depth = np.zeros((24, 32))
    mask = np.zeros((24, 32), bool)
    depth[12, 16] = 1.0
    mask[12, 16] = True
    assert np.array_equal(depth_mask_to_cloud(depth, mask, SMALL, 300), [[0.0, 0.0, 1.0]])


def test_block_back_projection_matches_pinhole():
    depth = np.full((24, 32), 0.8)
    mask = np.zeros((24, 32), bool)
    mask[5:15, 10:20] = True
    cloud = depth_mask_to_cloud(depth, mask, SMALL, 300)
    assert cloud.shape == (100, 3)
    expected = [((u - 16.0) * 0.8 / 40.0, (v - 12.0) * 0.8 / 40.0, 0.8)
                for v in range(5, 15) for u in range(10, 20)]
    assert np.allclose(cloud, expected, atol=1e-15)


def test_invalid_depth_pixels_skipped():
    depth = np.full((24, 32), 1.0)
    depth[0, 0] = 0.0
    depth[0, 1] = np.nan
    mask = np.zeros((24, 32), bool)
    mask[0, :3] = True
    cloud = depth_mask_to_cloud(depth, mask, SMALL, 300)
    assert len(cloud) == 1


def test_shape_mismatch_rejected():
    with pytest.raises(ValueError):
        depth_mask_to_cloud(np.ones((10, 10)), np.ones((10, 10), bool), SMALL, 300)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10 ** 6), st.integers(1, 400))
def test_downsampling_exact_count_and_subset(seed, target):
    rng = np.random.default_rng(seed)
    depth = rng.uniform(0.5, 1.5, size=(24, 32))
    mask = rng.uniform(size=(24, 32)) < 0.6
    full = depth_mask_to_cloud(depth, mask, SMALL, 10 ** 6)
    cloud = depth_mask_to_cloud(depth, mask, SMALL, target, seed=seed, voxel_size=0.01)
    assert len(cloud) == min(target, int(mask.sum()))
    rows = {tuple(p) for p in full}
    assert all(tuple(p) in rows for p in cloud)
    again = depth_mask_to_cloud(depth, mask, SMALL, target, seed=seed, voxel_size=0.01)
    assert np.array_equal(cloud, again)


def test_edt_all_ones_is_zero():
    assert np.all(distance_transform(np.ones((7, 9), bool)) == 0)


def test_edt_three_four_five():
    mask = np.zeros((20, 20), bool)
    mask[5, 5] = True
    # (u, v) = (8, 9) is row 9, column 8
    assert distance_transform(mask)[9, 8] == 5.0


def test_edt_empty_mask_sentinel():
    assert np.all(distance_transform(np.zeros((6, 10), bool)) == 16.0)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10 ** 6), st.floats(0.005, 0.3))
def test_edt_matches_brute_force(seed, density):
    mask = np.random.default_rng(seed).uniform(size=(32, 32)) < density
    assert np.array_equal(distance_transform(mask), brute_force_edt(mask))


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10 ** 6), st.integers(3, 40), st.integers(3, 40))
def test_edt_is_one_lipschitz(seed, h, w):
    rng = np.random.default_rng(seed)
    mask = rng.uniform(size=(h, w)) < 0.05
    mask[rng.integers(h), rng.integers(w)] = True
    d = distance_transform(mask)
    assert np.all(np.abs(np.diff(d, axis=0)) <= 1 + 1e-12)
    assert np.all(np.abs(np.diff(d, axis=1)) <= 1 + 1e-12)
    assert np.array_equal(d == 0, mask)


def test_project_optical_axis():
    p = project_vertex([0, 0, 1], INTR)
    assert (p.u, p.v, p.z, p.in_bounds) == (320.0, 240.0, 1.0, True)


def test_project_behind_camera():
    assert not project_vertex([0, 0, -1], INTR).in_bounds


def test_project_hand_value():
    p = project_vertex([0.1, 0.2, 2.0], INTR)
    assert (p.u, p.v, p.z) == pytest.approx((345.0, 290.0, 2.0), abs=1e-12)


def test_in_bounds_uses_rounded_pixel():
    # u = 639.4 rounds to 639 (inside); 639.6 rounds to 640 (outside)
    assert project_vertex([(639.4 - 320) / 500, 0, 1], INTR).in_bounds
    assert not project_vertex([(639.6 - 320) / 500, 0, 1], INTR).in_bounds


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10 ** 6))
def test_backprojection_round_trip(seed):
    rng = np.random.default_rng(seed)
    depth = rng.uniform(0.2, 3.0, size=(24, 32))
    mask = rng.uniform(size=(24, 32)) < 0.5
    cloud = depth_mask_to_cloud(depth, mask, SMALL, 10 ** 6)
    vs, us = np.nonzero(mask)
    u, v, z, ok = project_points(cloud, SMALL)
    assert ok.all()
    assert np.allclose(u, us, atol=1e-9) and np.allclose(v, vs, atol=1e-9)
    assert np.allclose(z, depth[vs, us], atol=1e-9)


def test_sample_off_image():
    assert sample_depth_and_distance(PixelProjection(np.nan, np.nan, -1.0, False),
                                     np.ones((4, 4)), np.zeros((4, 4))) is None


def test_sample_on_mask_and_rounding():
    mask = np.zeros((20, 20), bool)
    mask[10, 8] = True
    depth = np.zeros((20, 20))
    depth[10, 8] = 0.7
    s = sample_depth_and_distance(PixelProjection(8.4, 9.6, 1.0, True), depth,
                                  distance_transform(mask))
    assert s.dist == 0.0 and s.depth == 0.7 and s.depth_valid


def test_sample_invalid_depth_keeps_distance():
    mask = np.zeros((5, 5), bool)
    mask[0, 0] = True
    s = sample_depth_and_distance(PixelProjection(3.0, 4.0, 1.0, True), np.zeros((5, 5)),
                                  distance_transform(mask))
    assert not s.depth_valid and s.dist == 5.0


def test_frame_invariants():
    rng = np.random.default_rng(3)
    depth = rng.uniform(0.5, 1.0, (24, 32))
    mask = rng.uniform(size=(24, 32)) < 0.3
    f = make_frame(depth, mask, SMALL, 50)
    assert np.array_equal(f.distance_image == 0, mask)
    assert len(f.cloud) == 50


def test_frame_files_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    depth = rng.uniform(0.5, 1.0, (24, 32)).astype(np.float32).astype(float)
    mask = rng.uniform(size=(24, 32)) < 0.3
    write_depth(tmp_path / "frame_00000.depth.bin", depth)
    write_mask(tmp_path / "frame_00000.mask.pgm", mask)
    assert np.array_equal(read_depth(tmp_path / "frame_00000.depth.bin", SMALL), depth)
    assert np.array_equal(read_mask(tmp_path / "frame_00000.mask.pgm"), mask)
    d, m, corr = load_raw_frame(tmp_path, 0, SMALL)
    assert len(corr) == 0 and np.array_equal(m, mask)
    with pytest.raises(FileNotFoundError):
        load_raw_frame(tmp_path, 1, SMALL)
