"""Regularised GMM registration: visibility prior, E-step, W-solve, sigma^2 update.

The vertex set ``Y`` (M x 3) is the mixture of centroids, the cloud ``X``
(N x 3) the observations.  Motion between frames is ``Y_prev + G @ W`` with
``G`` the Gaussian kernel on ``Y_prev``; W is regularised by motion
coherence (alpha) and by a locally-linear reconstruction of the template
(gamma).
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.linalg import LinAlgWarning, lu_factor, lu_solve
from scipy.spatial import cKDTree
from scipy.special import logsumexp

from .imaging import sample_vertices
from .types import FrameObservation, Parameters, SingularSystemError, TotalOcclusionError

D = 3
# effective matched-point mass below which a frame carries no usable evidence
MIN_MATCHED_MASS = 1e-12


@dataclass(frozen=True)
class VisibilityPrior:
    weights: np.ndarray

    @classmethod
    def uniform(cls, M: int) -> "VisibilityPrior":
        return cls(np.full(M, 1.0 / M))


@dataclass
class EmWorkspace:
    """Per-model matrices: LLE weights L and H = (I-L)^T (I-L) are fixed for the run,
    G and W are refreshed per frame."""

    L: np.ndarray
    H: np.ndarray
    G: np.ndarray | None = None
    W: np.ndarray | None = None

    @classmethod
    def from_template(cls, Y0, k: int) -> "EmWorkspace":
        L = lle_weights(Y0, k)
        IL = np.eye(len(L)) - L
        return cls(L=L, H=IL.T @ IL)

    @classmethod
    def without_lle(cls, M: int) -> "EmWorkspace":
        return cls(L=np.zeros((M, M)), H=np.zeros((M, M)))


def visibility_log_weights(Y_prev, frame: FrameObservation, k_vis: float) -> np.ndarray:
    z, d_obs, dist, usable = sample_vertices(Y_prev, frame)
    behind = np.maximum(z - d_obs, 0.0)
    return np.where(usable, -k_vis * dist * behind, 0.0)


def normalize_log_weights(logw) -> VisibilityPrior:
    logw = np.asarray(logw, float)
    w = np.exp(logw - logsumexp(logw))
    # keep every component alive so normalisation never divides by zero downstream
    w = np.maximum(w, 1e-300)
    return VisibilityPrior(w / w.sum())


def visibility_prior(Y_prev, frame: FrameObservation, k_vis: float) -> VisibilityPrior:
    """Membership prior down-weighting vertices hidden behind observed surfaces.

    Off-image vertices and vertices over invalid depth keep unnormalised weight 1.
    """
    return normalize_log_weights(visibility_log_weights(Y_prev, frame, k_vis))


def gaussian_kernel(Y, beta: float) -> np.ndarray:
    Y = np.asarray(Y, float)
    sq = np.sum((Y[:, None, :] - Y[None, :, :]) ** 2, axis=-1)
    return np.exp(-sq / (2.0 * beta * beta))


def lle_weights(Y0, k: int) -> np.ndarray:
    """Sum-to-one affine reconstruction weights of each vertex from its k nearest neighbours."""
    Y0 = np.asarray(Y0, float)
    M = len(Y0)
    if k >= M:
        raise ValueError(f"lle_neighbors={k} needs at least {k + 1} vertices, got {M}")
    dist, idx = cKDTree(Y0).query(Y0, k=k + 1)
    L = np.zeros((M, M))
    for m in range(M):
        nbrs = [i for i in idx[m] if i != m][:k]
        if len(nbrs) < k or np.any(np.linalg.norm(Y0[nbrs] - Y0[m], axis=1) == 0):
            raise ValueError(f"vertex {m} has fewer than {k} distinct neighbours")
        Z = Y0[nbrs] - Y0[m]
        C = Z @ Z.T
        C = C + np.eye(k) * 1e-9 * np.trace(C)
        w = np.linalg.solve(C, np.ones(k))
        L[m, nbrs] = w / w.sum()
    return L


def e_step(X, Y, sigma2: float, omega: float, prior: VisibilityPrior) -> np.ndarray:
    """Posterior P[m, n] that point n was generated by centroid m."""
    X = np.asarray(X, float)
    Y = np.asarray(Y, float)
    M, N = len(Y), len(X)
    if omega >= 1.0:
        return np.zeros((M, N))
    sq = np.sum((Y[:, None, :] - X[None, :, :]) ** 2, axis=-1)
    log_num = np.log(prior.weights)[:, None] - sq / (2.0 * sigma2)
    if omega > 0:
        log_c = 1.5 * np.log(2 * np.pi * sigma2) + np.log(omega) - np.log((1 - omega) * N)
        log_den = np.logaddexp(logsumexp(log_num, axis=0), log_c)
    else:
        log_den = logsumexp(log_num, axis=0)
    return np.exp(log_num - log_den[None, :])


def em_objective(W, P, X, Y_prev, G, H, sigma2, alpha, gamma) -> float:
    """M-step cost in W at fixed P and sigma^2 (terms independent of W dropped)."""
    Ynew = Y_prev + G @ W
    sq = np.sum((Ynew[:, None, :] - X[None, :, :]) ** 2, axis=-1)
    fit = np.sum(P * sq) / (2.0 * sigma2)
    cpd = 0.5 * alpha * np.trace(W.T @ G @ W)
    lle = 0.5 * gamma * np.trace(Ynew.T @ H @ Ynew)
    return float(fit + cpd + lle)


def m_step_solve_w(P, X, Y_prev, ws: EmWorkspace, sigma2: float, alpha: float,
                   gamma: float) -> np.ndarray:
    """Solve (d(P1) G + s2 a I + s2 g H G) W = P X - (d(P1) + s2 g H) Y_prev."""
    G, H = ws.G, ws.H
    M = len(Y_prev)
    p1 = P.sum(axis=1)
    A = p1[:, None] * G + sigma2 * alpha * np.eye(M) + sigma2 * gamma * (H @ G)
    B = P @ X - p1[:, None] * Y_prev - sigma2 * gamma * (H @ Y_prev)
    if not np.all(np.isfinite(A)):
        raise SingularSystemError("non-finite M-step system")
    try:
        # an exactly singular pivot is reported below as SingularSystemError
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", LinAlgWarning)
            lu = lu_factor(A, check_finite=False)
    except (ValueError, np.linalg.LinAlgError) as exc:
        raise SingularSystemError(str(exc)) from exc
    if np.any(np.diag(lu[0]) == 0):
        raise SingularSystemError("singular M-step system")
    return lu_solve(lu, B, check_finite=False)


def update_sigma2(P, X, Y_prev, G, W) -> float:
    """Closed-form variance update, clamped below at 1e-10."""
    Np = P.sum()
    if not Np > MIN_MATCHED_MASS:
        raise TotalOcclusionError("no cloud point is explained by the model")
    pt1 = P.sum(axis=0)
    p1 = P.sum(axis=1)
    GW = G @ W
    PX = P @ X
    val = (np.sum(pt1 * np.sum(X * X, axis=1))
           - 2 * np.sum(Y_prev * PX)
           - 2 * np.sum(GW * PX)
           + np.sum(p1 * np.sum(Y_prev * Y_prev, axis=1))
           + 2 * np.sum(GW * (p1[:, None] * Y_prev))
           + np.sum(p1 * np.sum(GW * GW, axis=1)))
    return max(val / (Np * D), 1e-10)


def cloud_variance(X) -> float:
    X = np.asarray(X, float)
    return float(np.mean((X - X.mean(axis=0)) ** 2))


@dataclass
class EmResult:
    vertices: np.ndarray
    sigma2: float
    posteriors: np.ndarray
    iterations: int


def cpd_em(frame: FrameObservation, Y_prev, ws: EmWorkspace, params: Parameters,
           prior: VisibilityPrior | None = None, use_vis_prior: bool = True) -> EmResult:
    """EM registration of ``Y_prev`` to the frame's cloud.

    Stops when sigma^2 <= epsilon, when sigma^2 changes by less than
    ``params.sigma2_change_tol``, or after ``params.max_em_iters`` iterations.
    """
    X = frame.cloud
    if len(X) == 0:
        raise TotalOcclusionError("empty cloud")
    Y_prev = np.asarray(Y_prev, float)
    M = len(Y_prev)
    if prior is None:
        prior = (visibility_prior(Y_prev, frame, params.k_vis) if use_vis_prior
                 else VisibilityPrior.uniform(M))
    ws.G = gaussian_kernel(Y_prev, params.beta)
    W = np.zeros((M, D))
    ws.W = W
    sigma2 = cloud_variance(X)
    P = np.zeros((M, len(X)))
    it = 0
    while sigma2 > params.epsilon and it < params.max_em_iters:
        Y = Y_prev + ws.G @ W
        P = e_step(X, Y, sigma2, params.omega, prior)
        W = m_step_solve_w(P, X, Y_prev, ws, sigma2, params.alpha, params.gamma)
        new_sigma2 = update_sigma2(P, X, Y_prev, ws.G, W)
        it += 1
        converged = abs(new_sigma2 - sigma2) < params.sigma2_change_tol
        sigma2 = new_sigma2
        if converged:
            break
    ws.W = W
    return EmResult(Y_prev + ws.G @ W, sigma2, P, it)
