import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from deformtrack.cpd import (EmWorkspace, VisibilityPrior, cloud_variance, cpd_em, e_step,
                             em_objective, gaussian_kernel, lle_weights, m_step_solve_w,
                             normalize_log_weights, update_sigma2, visibility_log_weights,
                             visibility_prior)
from deformtrack.imaging import distance_transform
from deformtrack.types import (CameraIntrinsics, FrameObservation, Parameters,
                               SingularSystemError, TotalOcclusionError, line_model)

from oracles import direct_sigma2, minimize_q

INTR = CameraIntrinsics(100.0, 100.0, 10.0, 10.0, 21, 21)
seeds = st.integers(0, 2 ** 32 - 1)


def frame_with(depth, mask, cloud=np.zeros((0, 3)), intr=INTR):
    return FrameObservation(depth, mask, intr, cloud, distance_transform(mask))


def blank_frame(cloud, intr=INTR):
    # no valid depth anywhere: every vertex gets the neutral visibility weight
    shape = (intr.height, intr.width)
    return FrameObservation(np.zeros(shape), np.zeros(shape, bool), intr, cloud, np.zeros(shape))


def random_instance(seed, M=3, N=4):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(N, 3))
    Y = rng.normal(size=(M, 3))
    P = rng.uniform(size=(M, N))
    P = P / (P.sum(axis=0) * rng.uniform(1.0, 1.5, size=N))
    L = rng.normal(size=(M, M))
    np.fill_diagonal(L, 0)
    L = L / L.sum(axis=1, keepdims=True)
    IL = np.eye(M) - L
    ws = EmWorkspace(L=L, H=IL.T @ IL, G=gaussian_kernel(Y, 1.0))
    sigma2 = rng.uniform(0.2, 2.0)
    return X, Y, P, ws, sigma2


# -- visibility prior -----------------------------------------------------------

def test_vertex_on_mask_pixel_keeps_unit_weight():
    depth = np.full((21, 21), 0.5)
    mask = np.zeros((21, 21), bool)
    mask[10, 10] = True
    Y = np.array([[0.0, 0.0, 2.0], [0.0, 0.0, 0.1]])
    logw = visibility_log_weights(Y, frame_with(depth, mask), 10.0)
    assert logw[0] == 0.0 and logw[1] == 0.0


def test_unoccluded_vertices_share_weight():
    depth = np.full((21, 21), 1.0)
    mask = np.ones((21, 21), bool)
    Y = np.random.default_rng(0).uniform(-0.05, 0.05, (7, 3)) + [0, 0, 0.9]
    w = visibility_prior(Y, frame_with(depth, mask), 10.0).weights
    assert np.allclose(w, 1 / 7, atol=1e-15)


def test_hidden_vertex_weight_hand_value():
    # mask pixel at (u, v) = (13, 14); the vertex projects to (10, 10): 5 px away
    depth = np.full((21, 21), 1.0)
    mask = np.zeros((21, 21), bool)
    mask[14, 13] = True
    Y = np.array([[0.0, 0.0, 1.1]])
    logw = visibility_log_weights(Y, frame_with(depth, mask), 10.0)
    assert np.exp(logw[0]) == pytest.approx(6.738e-3, rel=1e-3)
    assert np.exp(logw[0]) == pytest.approx(np.exp(-5.0), rel=1e-12)


def test_off_image_and_invalid_depth_are_neutral():
    depth = np.full((21, 21), 0.5)
    depth[10, 10] = 0.0
    mask = np.zeros((21, 21), bool)
    mask[0, 0] = True
    Y = np.array([[0.0, 0.0, 2.0], [5.0, 0.0, 1.0], [0.0, 0.0, -1.0]])
    assert np.all(visibility_log_weights(Y, frame_with(depth, mask), 10.0) == 0.0)


@settings(max_examples=50, deadline=None)
@given(seeds)
def test_prior_normalised_and_positive(seed):
    rng = np.random.default_rng(seed)
    depth = rng.uniform(0.2, 2.0, (21, 21))
    mask = rng.uniform(size=(21, 21)) < 0.1
    Y = rng.uniform([-0.2, -0.2, 0.1], [0.2, 0.2, 3.0], (12, 3))
    w = visibility_prior(Y, frame_with(depth, mask), rng.uniform(0.1, 1000)).weights
    assert abs(w.sum() - 1) <= 1e-12 and np.all(w > 0) and np.all(w <= 1)


# -- kernel and LLE ----------------------------------------------------------------

def test_kernel_hand_values():
    G = gaussian_kernel([[0, 0, 0], [0.3, 0.4, 0]], 0.5)
    assert np.all(np.diag(G) == 1)
    assert G[0, 1] == pytest.approx(0.60653, abs=1e-5)


@settings(max_examples=50, deadline=None)
@given(seeds, st.floats(0.05, 5))
def test_kernel_symmetric_and_bounded(seed, beta):
    Y = np.random.default_rng(seed).normal(size=(9, 3))
    G = gaussian_kernel(Y, beta)
    assert np.array_equal(G, G.T) and np.all(np.diag(G) == 1)
    assert np.all(G >= 0) and np.all(G <= 1)


def test_lle_interior_midpoint():
    L = lle_weights(line_model(1.0, 5).vertices0, 2)
    assert L[2, 1] == pytest.approx(0.5) and L[2, 3] == pytest.approx(0.5)


def test_lle_endpoint_extrapolation():
    L = lle_weights(line_model(1.0, 5).vertices0, 2)
    assert L[0, 1] == pytest.approx(2.0, abs=1e-6) and L[0, 2] == pytest.approx(-1.0, abs=1e-6)


def test_lle_reconstructs_straight_rope():
    Y0 = line_model(1.0, 50).vertices0
    L = lle_weights(Y0, 8)
    assert np.max(np.linalg.norm(Y0 - L @ Y0, axis=1)) < 1e-9


def test_lle_needs_enough_neighbours():
    with pytest.raises(ValueError):
        lle_weights(line_model(1.0, 4).vertices0, 4)
    with pytest.raises(ValueError):
        lle_weights([[0, 0, 0], [0, 0, 0], [1, 0, 0]], 2)


@settings(max_examples=30, deadline=None)
@given(seeds, st.integers(2, 8))
def test_workspace_invariants(seed, k):
    Y0 = np.random.default_rng(seed).normal(size=(12, 3))
    ws = EmWorkspace.from_template(Y0, k)
    assert np.allclose(ws.L.sum(axis=1), 1)
    assert np.all(np.count_nonzero(ws.L, axis=1) <= k)
    assert np.all(np.diag(ws.L) == 0)
    assert np.allclose(ws.H, ws.H.T)
    assert np.linalg.eigvalsh(ws.H).min() > -1e-9


# -- E-step ------------------------------------------------------------------------

def test_single_component_takes_everything():
    X = np.random.default_rng(1).normal(size=(6, 3))
    P = e_step(X, [[0, 0, 0]], 0.5, 0.0, VisibilityPrior.uniform(1))
    assert np.allclose(P, 1.0)


def test_pure_outlier_model():
    X = np.random.default_rng(1).normal(size=(6, 3))
    assert np.all(e_step(X, X[:3], 0.5, 1.0, VisibilityPrior.uniform(3)) == 0)


def test_symmetric_centroids_hand_value():
    X = np.array([[0.0, 0.0, 0.0]])
    Y = np.array([[-1.0, 0, 0], [1.0, 0, 0]])
    s2, w = 0.5, 0.1
    P = e_step(X, Y, s2, w, VisibilityPrior.uniform(2))
    num = 0.5 * np.exp(-1 / (2 * s2))
    den = 2 * num + (2 * np.pi * s2) ** 1.5 * w / ((1 - w) * 1)
    assert P[0, 0] == pytest.approx(P[1, 0], abs=1e-15)
    assert P[0, 0] < 0.5
    assert P[0, 0] == pytest.approx(num / den, rel=1e-12)


@settings(max_examples=60, deadline=None)
@given(seeds, st.floats(1e-4, 4), st.floats(0, 1, exclude_max=True))
def test_column_mass_at_most_one(seed, sigma2, omega):
    rng = np.random.default_rng(seed)
    X, Y = rng.normal(size=(15, 3)), rng.normal(size=(8, 3))
    prior = normalize_log_weights(rng.uniform(-50, 0, 8))
    P = e_step(X, Y, sigma2, omega, prior)
    assert np.all(P >= 0) and np.all(P <= 1)
    assert np.all(P.sum(axis=0) <= 1 + 1e-12)


@settings(max_examples=60, deadline=None)
@given(seeds, st.floats(0.1, 4), st.floats(0, 0.99))
def test_uniform_prior_is_classic_posterior(seed, sigma2, omega):
    rng = np.random.default_rng(seed)
    M, N = 7, 11
    X, Y = rng.normal(size=(N, 3)), rng.normal(size=(M, 3))
    P = e_step(X, Y, sigma2, omega, VisibilityPrior.uniform(M))
    K = np.exp(-np.sum((Y[:, None] - X[None]) ** 2, axis=-1) / (2 * sigma2))
    c = (2 * np.pi * sigma2) ** 1.5 * omega / (1 - omega) * M / N
    classic = K / (K.sum(axis=0) + c)
    assert np.allclose(P, classic, rtol=1e-10, atol=1e-14)
    if omega == 0:
        assert np.allclose(P.sum(axis=0), 1)


@settings(max_examples=40, deadline=None)
@given(seeds, st.floats(-200, 200))
def test_constant_shift_of_visibility_weights_leaves_posterior(seed, shift):
    rng = np.random.default_rng(seed)
    X, Y = rng.normal(size=(10, 3)), rng.normal(size=(6, 3))
    logw = rng.uniform(-20, 0, 6)
    P1 = e_step(X, Y, 0.7, 0.1, normalize_log_weights(logw))
    P2 = e_step(X, Y, 0.7, 0.1, normalize_log_weights(logw + shift))
    assert np.allclose(P1, P2, rtol=1e-12, atol=1e-300)


# -- M-step and variance --------------------------------------------------------------

def test_straight_rope_perfect_fit_gives_zero_w():
    Y = np.array(line_model(1.0, 20).vertices0)
    ws = EmWorkspace.from_template(Y, 8)
    ws.G = gaussian_kernel(Y, 1.0)
    W = m_step_solve_w(np.eye(20), Y, Y, ws, 1e-3, 0.5, 1.0)
    # the kernel matrix is nearly singular at this scale, so rounding noise is amplified
    assert np.max(np.abs(W)) < 1e-8
    assert np.max(np.abs(ws.G @ W)) < 1e-12


@settings(max_examples=40, deadline=None)
@given(seeds)
def test_w_solves_linear_system(seed):
    X, Y, P, ws, s2 = random_instance(seed, 6, 9)
    a, g = 0.5, 1.0
    W = m_step_solve_w(P, X, Y, ws, s2, a, g)
    p1 = P.sum(axis=1)
    A = p1[:, None] * ws.G + s2 * a * np.eye(6) + s2 * g * ws.H @ ws.G
    B = P @ X - p1[:, None] * Y - s2 * g * ws.H @ Y
    assert np.linalg.norm(A @ W - B) <= 1e-8 * np.linalg.norm(B)


@settings(max_examples=8, deadline=None)
@given(seeds)
def test_w_matches_numerical_minimiser(seed):
    X, Y, P, ws, s2 = random_instance(seed)
    W = m_step_solve_w(P, X, Y, ws, s2, 0.5, 1.0)
    W_ref = minimize_q(P, X, Y, ws.G, ws.H, s2, 0.5, 1.0)
    assert np.max(np.abs(W - W_ref)) < 1e-5


def test_w_frozen_instance():
    # frozen from the numerical minimiser and the direct double sum (instance seed 7)
    X, Y, P, ws, s2 = random_instance(7)
    W = m_step_solve_w(P, X, Y, ws, s2, 0.5, 1.0)
    expected = [[0.366478032, -0.045249984, -0.883516111],
                [-1.302557655, 1.686418649, 0.699290183],
                [1.495944507, 1.491072904, 1.368408213]]
    assert np.allclose(W, expected, atol=1e-8)
    W_any = np.random.default_rng(7).normal(size=(3, 3))
    assert update_sigma2(P, X, Y, ws.G, W_any) == pytest.approx(2.1882906936850794, abs=1e-12)


@settings(max_examples=40, deadline=None)
@given(seeds, st.floats(0.01, 0.5))
def test_w_solve_never_increases_objective(seed, step):
    X, Y, P, ws, s2 = random_instance(seed, 5, 8)
    W = m_step_solve_w(P, X, Y, ws, s2, 0.5, 1.0)
    W_other = W + step * np.random.default_rng(seed + 1).normal(size=W.shape)
    f = em_objective(W, P, X, Y, ws.G, ws.H, s2, 0.5, 1.0)
    assert f <= em_objective(np.zeros_like(W), P, X, Y, ws.G, ws.H, s2, 0.5, 1.0) + 1e-9
    assert f <= em_objective(W_other, P, X, Y, ws.G, ws.H, s2, 0.5, 1.0) + 1e-9


def test_singular_system_reported():
    Y = np.zeros((2, 3))
    ws = EmWorkspace(L=np.zeros((2, 2)), H=np.zeros((2, 2)), G=np.ones((2, 2)))
    with pytest.raises(SingularSystemError):
        m_step_solve_w(np.zeros((2, 1)), np.zeros((1, 3)), Y, ws, 0.0, 0.5, 1.0)


def test_sigma2_floor_on_perfect_fit():
    Y = np.random.default_rng(0).normal(size=(4, 3))
    s2 = update_sigma2(np.eye(4), Y, Y, gaussian_kernel(Y, 1.0), np.zeros((4, 3)))
    assert s2 == 1e-10


@settings(max_examples=50, deadline=None)
@given(seeds)
def test_sigma2_trace_form_matches_double_sum(seed):
    X, Y, P, ws, _ = random_instance(seed)
    W = np.random.default_rng(seed).normal(size=(3, 3))
    assert update_sigma2(P, X, Y, ws.G, W) == pytest.approx(direct_sigma2(P, X, Y, ws.G, W),
                                                            abs=1e-9)


@settings(max_examples=40, deadline=None)
@given(seeds, st.floats(0.1, 10))
def test_sigma2_scales_quadratically(seed, s):
    X, Y, P, ws, _ = random_instance(seed)
    W = np.random.default_rng(seed).normal(size=(3, 3))
    base = update_sigma2(P, X, Y, ws.G, W)
    assert update_sigma2(P, s * X, s * Y, ws.G, s * W) == pytest.approx(s * s * base, rel=1e-9)


def test_zero_matched_mass_is_total_occlusion():
    with pytest.raises(TotalOcclusionError):
        update_sigma2(np.zeros((3, 4)), np.zeros((4, 3)), np.zeros((3, 3)), np.eye(3),
                      np.zeros((3, 3)))


def test_cloud_variance_is_pooled():
    X = np.array([[1.0, 0, 0], [-1.0, 0, 0]])
    assert cloud_variance(X) == pytest.approx(1 / 3)


# -- full EM loop ------------------------------------------------------------------------

COARSE = line_model(2.0, 10, origin=(-1.0, 0.0, 1.0))


def coarse_workspace():
    return EmWorkspace.from_template(COARSE.vertices0, 8)


def test_em_fixed_point_on_coarse_rope():
    Y = np.array(COARSE.vertices0)
    res = cpd_em(blank_frame(Y), Y, coarse_workspace(), Parameters())
    assert np.max(np.abs(res.vertices - Y)) < 1e-6


def test_em_recovers_small_translation():
    Y = np.array(COARSE.vertices0)
    T = Y + [0.01, 0.0, 0.0]
    res = cpd_em(blank_frame(T), Y, coarse_workspace(), Parameters())
    assert np.sqrt(np.mean(np.sum((res.vertices - T) ** 2, axis=1))) < 0.002


def test_em_carries_occluded_vertices():
    Y = np.array(COARSE.vertices0)
    s = np.linspace(-1.0, 1.0, 300)
    keep = (s < -0.3) | (s > 0.3)
    X = np.stack([s, np.full_like(s, 0.01), np.ones_like(s)], axis=1)[keep]
    res = cpd_em(blank_frame(X), Y, coarse_workspace(), Parameters())
    err = np.linalg.norm(res.vertices - (Y + [0, 0.01, 0]), axis=1)
    hidden = np.abs(Y[:, 0]) <= 0.3
    assert err[hidden].mean() <= 3 * err[~hidden].mean()


def test_em_empty_cloud_is_total_occlusion():
    with pytest.raises(TotalOcclusionError):
        cpd_em(blank_frame(np.zeros((0, 3))), COARSE.vertices0, coarse_workspace(), Parameters())


def test_em_respects_iteration_cap():
    Y = np.array(COARSE.vertices0)
    rng = np.random.default_rng(0)
    X = Y + rng.normal(scale=0.05, size=Y.shape)
    res = cpd_em(blank_frame(X), Y, coarse_workspace(), Parameters(max_em_iters=2))
    assert res.iterations == 2


@settings(max_examples=20, deadline=None)
@given(seeds)
def test_em_state_invariants(seed):
    rng = np.random.default_rng(seed)
    Y = np.array(COARSE.vertices0)
    X = Y[rng.integers(0, 10, 40)] + rng.normal(scale=0.02, size=(40, 3))
    res = cpd_em(blank_frame(X), Y, coarse_workspace(), Parameters())
    assert res.sigma2 > 0
    assert np.all(res.posteriors >= 0) and np.all(res.posteriors <= 1)
    assert np.all(res.posteriors.sum(axis=0) <= 1 + 1e-12)
