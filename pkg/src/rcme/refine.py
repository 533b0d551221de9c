"""Two-view maximum-likelihood refinement and the inlier-survival failure metric."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import CameraMotion, Intrinsics, NoiseModel, as_array, rot_to_quat, skew
from .fmatrix import triangulate_dlt
from .stats import chi2_inv_cdf


class PointAtInfinity(ValueError):
    pass


def _Kmat(K):
    return K.K if isinstance(K, Intrinsics) else np.asarray(K, dtype=float)


def _normalized(X, K):
    Ki = np.linalg.inv(_Kmat(K))
    y1 = np.c_[X[:, :2], np.ones(len(X))] @ Ki.T
    y2 = np.c_[X[:, 2:], np.ones(len(X))] @ Ki.T
    return y1[:, :2] / y1[:, 2:], y2[:, :2] / y2[:, 2:]


def triangulate_points(X, R, t, K, rel_tol=1e-12):
    """DLT triangulation of (n, 4) pixel pairs under K[I|0] and K[R|t].

    Returns (points, ok) where ok flags points with a finite, unique
    position; a pair on the baseline leaves the depth undetermined and is
    reported like a point at infinity. The solve runs in normalized camera
    coordinates.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y1, y2 = _normalized(X, K)
    P1 = np.c_[np.eye(3), np.zeros(3)]
    P2 = np.c_[R, t]
    Xh, sv = triangulate_dlt(P1, P2, y1, y2, return_sv=True)
    w = Xh[:, 3]
    ok = (np.abs(w) > rel_tol * np.linalg.norm(Xh, axis=1)) & (sv[:, 2] > rel_tol * sv[:, 0])
    P = Xh[:, :3] / np.where(ok, w, 1.0)[:, None]
    P[~ok] = np.nan
    return P, ok


def triangulate(X, motion, K):
    """3D point (first-camera frame) of one correspondence."""
    X = as_array([X]) if not isinstance(X, np.ndarray) else np.asarray(X, float).reshape(1, 4)
    P, ok = triangulate_points(X, motion.R, motion.t, K)
    if not ok[0]:
        raise PointAtInfinity("correspondence triangulates to a point at infinity")
    return P[0]


def _project(Kmat, Y):
    u = Y @ Kmat.T
    return u[:, :2] / u[:, 2:]


def reprojection_errors(X, P, R, t, K):
    """Squared reprojection errors in view 1 and view 2, shape (n, 2)."""
    Kmat = _Kmat(K)
    e1 = np.sum((_project(Kmat, P) - X[:, :2])**2, axis=1)
    e2 = np.sum((_project(Kmat, P @ R.T + t) - X[:, 2:])**2, axis=1)
    return np.c_[e1, e2]


@dataclass(frozen=True)
class LMConfig:
    max_iters: int = 100
    rel_tol: float = 1e-8
    abs_tol: float = 1e-18
    lam_init: float = 1e-3
    lam_max: float = 1e16


@dataclass(eq=False)
class MLEResult:
    motion: CameraMotion
    points3d: np.ndarray
    used: np.ndarray
    costs: list = field(default_factory=list)
    iterations: int = 0


@dataclass(eq=False)
class RefinedSolution:
    motion: CameraMotion
    points3d: np.ndarray
    n_before: int
    n_after: int
    failed: bool


def _tangent_basis(t):
    # two unit vectors orthogonal to t
    _, _, Vt = np.linalg.svd(t.reshape(1, 3))
    return Vt[1:].T


def _rodrigues(w):
    th = np.linalg.norm(w)
    W = skew(w)
    if th < 1e-12:
        return np.eye(3) + W
    return np.eye(3) + np.sin(th) / th * W + (1 - np.cos(th)) / th**2 * W @ W


def _proj_jac(Kmat, Y):
    # d pi(K Y) / dY, shape (n, 2, 3)
    u = Y @ Kmat.T
    inv = 1.0 / u[:, 2]
    D = np.zeros((len(Y), 2, 3))
    D[:, 0, 0] = inv
    D[:, 1, 1] = inv
    D[:, 0, 2] = -u[:, 0] * inv**2
    D[:, 1, 2] = -u[:, 1] * inv**2
    return D @ Kmat


def _residuals(X, P, R, t, Kmat):
    r1 = _project(Kmat, P) - X[:, :2]
    r2 = _project(Kmat, P @ R.T + t) - X[:, 2:]
    return np.c_[r1, r2].ravel()


def _jacobian_blocks(P, R, t, Kmat, B):
    """Per-point Jacobian blocks: motion (n, 4, 5) and own 3D point (n, 4, 3)."""
    n = len(P)
    D1 = _proj_jac(Kmat, P)
    D2 = _proj_jac(Kmat, P @ R.T + t)
    # rotation update R <- exp([w]x) R, translation t <- normalize(t + B b)
    Jc = np.zeros((n, 4, 5))
    Jc[:, 2:, :3] = -D2 @ skew(P @ R.T)
    Jc[:, 2:, 3:] = D2 @ B
    Jp = np.concatenate([D1, D2 @ R], axis=1)
    return Jc, Jp


def _jacobian(P, R, t, Kmat, B):
    # dense (4n, 5 + 3n) assembly of the blocks, parameters ordered (w, b, P)
    Jc, Jp = _jacobian_blocks(P, R, t, Kmat, B)
    n = len(P)
    J = np.zeros((4 * n, 5 + 3 * n))
    J[:, :5] = Jc.reshape(4 * n, 5)
    for i in range(n):
        J[4 * i:4 * i + 4, 5 + 3 * i:8 + 3 * i] = Jp[i]
    return J


def _damped_step(Jc, Jp, r, lam):
    """Solve (H + lam diag(H)) dx = -J^T r by eliminating the points (Schur complement).

    Same step as the dense system; linear in the number of points.
    """
    r = r.reshape(-1, 4)
    Hcc = np.einsum("nij,nik->jk", Jc, Jc)
    Hcp = np.einsum("nij,nik->njk", Jc, Jp)
    Hpp = np.einsum("nij,nik->njk", Jp, Jp)
    gc = np.einsum("nij,ni->j", Jc, r)
    gp = np.einsum("nij,ni->nj", Jp, r)
    idx = np.arange(3)
    Hpp[:, idx, idx] += lam * np.maximum(Hpp[:, idx, idx], 1e-12)
    Hcc[np.arange(5), np.arange(5)] += lam * np.maximum(np.diag(Hcc), 1e-12)
    Wi = np.linalg.solve(Hpp, np.concatenate([np.swapaxes(Hcp, 1, 2), gp[..., None]], axis=2))
    S = Hcc - np.einsum("njk,nkl->jl", Hcp, Wi[..., :5])
    rhs = gc - np.einsum("njk,nk->j", Hcp, Wi[..., 5])
    dc = -np.linalg.solve(S, rhs)
    dp = -(Wi[..., 5] + Wi[..., :5] @ dc)
    return np.concatenate([dc, dp.ravel()])


def mle_refine(motion, X, K, lm=None):
    """Levenberg-Marquardt over rotation, translation direction and structure.

    `X` holds the inlier correspondences. Points that triangulate to
    infinity under the starting motion are left out of the optimization.
    Returns the best iterate seen, so the cost never increases.
    """
    lm = lm or LMConfig()
    X = as_array(X)
    Kmat = _Kmat(K)
    R, t = motion.R, motion.t
    P, ok = triangulate_points(X, R, t, K)
    Xu, P = X[ok], P[ok]
    if len(Xu) < 8:
        raise ValueError("need at least 8 finite inliers to refine")
    r = _residuals(Xu, P, R, t, Kmat)
    cost = float(r @ r)
    costs = [cost]
    lam = lm.lam_init
    it = 0
    while it < lm.max_iters and cost > lm.abs_tol:
        it += 1
        B = _tangent_basis(t)
        Jc, Jp = _jacobian_blocks(P, R, t, Kmat, B)
        improved = False
        while lam <= lm.lam_max:
            try:
                dx = _damped_step(Jc, Jp, r, lam)
            except np.linalg.LinAlgError:
                lam *= 10
                continue
            Rn = _rodrigues(dx[:3]) @ R
            tn = t + B @ dx[3:5]
            tn = tn / np.linalg.norm(tn)
            Pn = P + dx[5:].reshape(-1, 3)
            rn = _residuals(Xu, Pn, Rn, tn, Kmat)
            cn = float(rn @ rn)
            if np.isfinite(cn) and cn < cost:
                improved = True
                break
            lam *= 10
        if not improved:
            break
        rel = (cost - cn) / cost
        R, t, P, r, cost = Rn, tn, Pn, rn, cn
        costs.append(cost)
        lam = max(lam / 10, 1e-12)
        if rel < lm.rel_tol:
            break
    out = CameraMotion(rot_to_quat(R), t)
    return MLEResult(out, P, np.flatnonzero(ok), costs, it)


def huber(e2, tau2):
    """Huber function of a squared error: e2 inside the threshold, linear growth outside."""
    e2 = np.asarray(e2, dtype=float)
    tau = np.sqrt(tau2)
    return np.where(e2 <= tau2, e2, 2.0 * tau * np.sqrt(e2) - tau2)


def consistency_threshold(noise, alpha=0.05):
    sigma = noise.sigma if isinstance(noise, NoiseModel) else float(noise)
    return sigma**2 * chi2_inv_cdf(2, 1 - alpha)


def consistent_count(motion, X, K, tau2):
    """Points whose larger per-view squared reprojection error passes the Huber test."""
    P, ok = triangulate_points(X, motion.R, motion.t, K)
    if not np.any(ok):
        return 0
    e2 = reprojection_errors(X[ok], P[ok], motion.R, motion.t, K).max(axis=1)
    return int(np.sum(huber(e2, tau2) < tau2))


def failure_metric(pre_motion, post_motion, X, K, noise, alpha=0.05, kappa=0.5):
    """(n_I, n*_I, failed) for the fixed inlier set `X` under both motions.

    An empty starting set (n_I = 0) counts as failed.
    """
    X = as_array(X)
    tau2 = consistency_threshold(noise, alpha)
    n_pre = consistent_count(pre_motion, X, K, tau2)
    n_post = consistent_count(post_motion, X, K, tau2)
    if n_pre == 0:
        return 0, n_post, True
    return n_pre, n_post, bool(n_post / n_pre <= kappa)


def refine_and_assess(motion, X, K, noise, alpha=0.05, kappa=0.5, lm=None):
    """MLE refinement of `motion` on inliers `X` followed by the failure metric."""
    X = as_array(X)
    res = mle_refine(motion, X, K, lm)
    n_pre, n_post, failed = failure_metric(motion, res.motion, X, K, noise, alpha, kappa)
    return RefinedSolution(res.motion, res.points3d, n_pre, n_post, failed)
