"""Nearest stretch-limited state with pinned correspondences.

Solves

    min_Y  sum_m ||Y_m - T_m||^2
    s.t.   ||Y_i - Y_j|| <= lambda * rest_ij   for every edge (i, j)
           Y_m = Z_k                            for every pin (m, k)

Each edge constraint bounds the norm of a linear map of Y, so the feasible
set is convex and the minimiser is unique.  Pins are eliminated by
substitution.  A scaled-form ADMM on the split ``d_e = Y_i - Y_j`` (closed
form quadratic step + projection onto balls) locates the solution and its
active set, then a Newton solve on the KKT system of the active edges
polishes it to machine precision.
"""
from __future__ import annotations

import heapq
from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_factor, cho_solve
from scipy.optimize import nnls

from .types import CorrespondenceSet, InfeasibleError, NoConvergenceError


@dataclass(frozen=True)
class ProjectionProblem:
    target: np.ndarray
    edges: np.ndarray
    rest_lengths: np.ndarray
    lambda_stretch: float = 3.0
    pinned: CorrespondenceSet = CorrespondenceSet()

    @property
    def limits(self) -> np.ndarray:
        return self.lambda_stretch * np.asarray(self.rest_lengths, float)

    def pin_targets(self):
        idx, pos = self.pinned.targets()
        return np.asarray(idx, np.int64), np.asarray(pos, float)


@dataclass
class FeasibilityReport:
    ratios: np.ndarray
    pin_residuals: np.ndarray
    ok: bool


def feasibility_report(Y, problem: ProjectionProblem, tol: float = 1e-6,
                       pin_tol: float = 1e-9) -> FeasibilityReport:
    Y = np.asarray(Y, float)
    E = np.asarray(problem.edges)
    lengths = np.linalg.norm(Y[E[:, 0]] - Y[E[:, 1]], axis=1)
    limits = problem.limits
    idx, pos = problem.pin_targets()
    pin_res = np.linalg.norm(Y[idx] - pos, axis=1) if len(idx) else np.zeros(0)
    ok = bool(np.all(lengths <= limits + tol) and np.all(pin_res <= pin_tol))
    return FeasibilityReport(lengths / limits, pin_res, ok)


def _shortest_paths_from(src, M, adj):
    dist = np.full(M, np.inf)
    dist[src] = 0.0
    heap = [(0.0, src)]
    while heap:
        d, a = heapq.heappop(heap)
        if d > dist[a]:
            continue
        for b, w in adj[a]:
            nd = d + w
            if nd < dist[b]:
                dist[b] = nd
                heapq.heappush(heap, (nd, b))
    return dist


def check_pins_feasible(problem: ProjectionProblem, tol: float = 1e-9) -> None:
    """Raise InfeasibleError if two pins are further apart than the chain allows."""
    idx, pos = problem.pin_targets()
    problems = problem.pinned.validate(len(problem.target))
    if problems:
        raise InfeasibleError("; ".join(problems))
    if len(idx) < 2:
        return
    M = len(problem.target)
    adj = [[] for _ in range(M)]
    for (i, j), lim in zip(np.asarray(problem.edges).tolist(), problem.limits):
        adj[i].append((j, lim))
        adj[j].append((i, lim))
    for a in range(len(idx)):
        reach = _shortest_paths_from(int(idx[a]), M, adj)
        for b in range(a + 1, len(idx)):
            gap = np.linalg.norm(pos[a] - pos[b])
            if gap > reach[idx[b]] + tol:
                raise InfeasibleError(
                    f"pins on vertices {idx[a]} and {idx[b]} are {gap:.6g} m apart, "
                    f"limit {reach[idx[b]]:.6g} m")


def _incidence(edges, M):
    K = len(edges)
    A = np.zeros((K, M))
    A[np.arange(K), edges[:, 0]] = 1.0
    A[np.arange(K), edges[:, 1]] = -1.0
    return A


def _ball_project(v, r):
    n = np.linalg.norm(v, axis=1)
    scale = np.where(n > r, r / np.maximum(n, 1e-300), 1.0)
    return v * scale[:, None]


def project(problem: ProjectionProblem, tol: float = 1e-6, max_iters: int = 200) -> np.ndarray:
    T = np.asarray(problem.target, float)
    E = np.asarray(problem.edges, np.int64)
    M = len(T)
    lim = problem.limits
    check_pins_feasible(problem)
    pin_idx, pin_pos = problem.pin_targets()

    Y = T.copy()
    Y[pin_idx] = pin_pos
    lengths = np.linalg.norm(Y[E[:, 0]] - Y[E[:, 1]], axis=1)
    if np.all(lengths <= lim):
        return Y

    free = np.setdiff1d(np.arange(M), pin_idx)
    if len(free) == 0:
        return Y
    A = _incidence(E, M)
    AF, AP = A[:, free], A[:, pin_idx]
    offset = AP @ pin_pos if len(pin_idx) else np.zeros((len(E), 3))
    TF = T[free]

    YF, u = _admm(TF, AF, offset, lim, max_iters)
    Y[free] = YF
    rho_u = np.linalg.norm(u, axis=1)
    try:
        YF = _polish(TF, YF, AF, offset, lim, rho_u, tol)
        Y[free] = YF
    except NoConvergenceError:
        # fall back to the ADMM iterate when it is already within tolerance
        pass
    lengths = np.linalg.norm(Y[E[:, 0]] - Y[E[:, 1]], axis=1)
    if np.any(lengths > lim + tol):
        raise NoConvergenceError(
            f"stretch projection did not converge (max excess {np.max(lengths - lim):.3g} m)")
    return Y


def _admm(TF, AF, offset, lim, max_iters, rho=1.0):
    n = AF.shape[1]
    AtA = AF.T @ AF
    fac = cho_factor(np.eye(n) + rho * AtA)
    YF = TF.copy()
    d = _ball_project(AF @ YF + offset, lim)
    u = np.zeros_like(d)
    for it in range(max_iters):
        YF = cho_solve(fac, TF + rho * AF.T @ (d - u - offset))
        AY = AF @ YF + offset
        d_old = d
        d = _ball_project(AY + u, lim)
        u = u + AY - d
        r_pri = np.linalg.norm(AY - d)
        r_dual = rho * np.linalg.norm(AF.T @ (d - d_old))
        if r_pri < 1e-10 and r_dual < 1e-10:
            break
        # residual balancing; u is rescaled with rho
        if it % 10 == 9:
            if r_pri > 10 * r_dual:
                new_rho = rho * 2
            elif r_dual > 10 * r_pri:
                new_rho = rho / 2
            else:
                new_rho = rho
            if new_rho != rho:
                u *= rho / new_rho
                rho = new_rho
                fac = cho_factor(np.eye(n) + rho * AtA)
    # multipliers of the squared-length constraints: mu_e = rho ||u_e|| / lim_e
    return YF, rho * u / lim[:, None]


def _newton_active(TF, YF, AF, offset, lim, active, mu, iters=30):
    """Newton on grad = 0, c_active = 0 for c_e = (||(A Y)_e||^2 - lim_e^2) / 2."""
    n = AF.shape[1]
    Aa = AF[active]
    off = offset[active]
    la = lim[active]
    mu = mu.copy()
    for _ in range(iters):
        De = Aa @ YF + off
        grad = (YF - TF) + Aa.T @ (mu[:, None] * De)
        cons = 0.5 * (np.sum(De * De, axis=1) - la * la)
        if np.max(np.abs(grad)) < 1e-13 and np.max(np.abs(cons)) < 1e-14:
            break
        k = len(la)
        # unknowns ordered as (YF flattened row-major, mu)
        Hs = np.eye(n) + Aa.T @ (mu[:, None] * Aa)
        Hfull = np.kron(Hs, np.eye(3))
        J = np.zeros((k, 3 * n))
        for c in range(3):
            J[:, c::3] = Aa * De[:, c:c + 1]
        K = np.block([[Hfull, J.T], [J, np.zeros((k, k))]])
        rhs = -np.concatenate([grad.ravel(), cons])
        try:
            step = np.linalg.solve(K, rhs)
        except np.linalg.LinAlgError:
            step = np.linalg.lstsq(K, rhs, rcond=None)[0]
        YF = YF + step[:3 * n].reshape(n, 3)
        mu = mu + step[3 * n:]
    De = Aa @ YF + off
    grad = (YF - TF) + Aa.T @ (mu[:, None] * De)
    cons = 0.5 * (np.sum(De * De, axis=1) - la * la)
    converged = np.max(np.abs(grad), initial=0) < 1e-9 and np.max(np.abs(cons), initial=0) < 1e-12
    return YF, mu, converged


def _polish(TF, YF, AF, offset, lim, mu_admm, tol):
    lengths = np.linalg.norm(AF @ YF + offset, axis=1)
    active = (lengths >= lim * (1 - 1e-6)) | (mu_admm > 1e-12)
    mu_all = mu_admm.copy()
    for _ in range(4 * len(lim) + 5):
        if not active.any():
            Ynew = TF.copy()
        else:
            Ynew, mu, ok = _newton_active(TF, YF, AF, offset, lim, active,
                                          np.maximum(mu_all[active], 0.0))
            if not ok:
                raise NoConvergenceError("Newton polish failed")
            mu_all = np.zeros(len(lim))
            mu_all[active] = mu
            if np.any(mu < -1e-12):
                drop = np.flatnonzero(active)[np.argmin(mu)]
                active[drop] = False
                continue
        lengths = np.linalg.norm(AF @ Ynew + offset, axis=1)
        viol = (lengths > lim + 1e-12) & ~active
        if viol.any():
            active[np.argmax(np.where(viol, lengths - lim, -np.inf))] = True
            continue
        return Ynew
    raise NoConvergenceError("active-set polish did not settle")


def kkt_residual(Y, problem: ProjectionProblem, active_tol: float = 1e-7) -> float:
    """Stationarity residual: distance of -grad f from the cone of active constraint gradients.

    Only free (unpinned) coordinates enter; the pins are equalities that absorb any
    gradient on their own coordinates.
    """
    Y = np.asarray(Y, float)
    T = np.asarray(problem.target, float)
    E = np.asarray(problem.edges, np.int64)
    M = len(Y)
    pin_idx, _ = problem.pin_targets()
    free = np.setdiff1d(np.arange(M), pin_idx)
    g = (Y - T)[free].ravel()
    lengths = np.linalg.norm(Y[E[:, 0]] - Y[E[:, 1]], axis=1)
    active = np.flatnonzero(lengths >= problem.limits - active_tol)
    if len(active) == 0:
        return float(np.linalg.norm(g))
    pos = {v: k for k, v in enumerate(free.tolist())}
    J = np.zeros((len(active), 3 * len(free)))
    for r, e in enumerate(active):
        i, j = E[e]
        diff = Y[i] - Y[j]
        if i in pos:
            J[r, 3 * pos[i]:3 * pos[i] + 3] += diff
        if j in pos:
            J[r, 3 * pos[j]:3 * pos[j] + 3] -= diff
    _, res = nnls(J.T, -g)
    return float(res)
