"""Fundamental-matrix instantiation, motion recovery and first-order uncertainty.

Parameter conventions: f is F stacked row-major (index 3*a + b for F[a, b]);
p = (q, t) with q = (w, x, y, z). A correspondence is X = (x, y, x', y').
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import (CameraMotion, Intrinsics, NoiseModel, SampsonResidual,
                   as_array, canonical_quat, quat_to_rot, quat_to_rot_grad,
                   rot_to_quat, skew)


class DegenerateSample(ValueError):
    """Minimal sample does not determine a unique fundamental matrix."""


class CheiralityTie(ValueError):
    """No decomposition candidate wins the cheirality vote outright."""


class IllConditioned(ValueError):
    """A covariance propagation step met a singular system."""


class EpipoleDegenerate(ValueError):
    """Sampson correction undefined: the point sits at both epipoles."""


_W = np.array([[0.0, -1.0, 0.0],
               [1.0, 0.0, 0.0],
               [0.0, 0.0, 1.0]])

_SKEW_BASIS = np.stack([skew(e) for e in np.eye(3)])


def _K(K):
    return K.K if isinstance(K, Intrinsics) else np.asarray(K, dtype=float)


def _Kinv(K):
    return K.K_inv if isinstance(K, Intrinsics) else np.linalg.inv(np.asarray(K, dtype=float))


@dataclass(frozen=True)
class NormalizationTransform:
    T1: np.ndarray
    T2: np.ndarray


def similarity_normalizer(pts):
    """Similarity moving the centroid to the origin with RMS distance sqrt(2)."""
    pts = np.asarray(pts, dtype=float)
    c = pts.mean(axis=0)
    rms = np.sqrt(np.mean(np.sum((pts - c)**2, axis=1)))
    if rms <= 0:
        raise DegenerateSample("all points coincide")
    s = np.sqrt(2.0) / rms
    return np.array([[s, 0.0, -s*c[0]],
                     [0.0, s, -s*c[1]],
                     [0.0, 0.0, 1.0]])


def normalization(samples):
    X = as_array(samples)
    return NormalizationTransform(similarity_normalizer(X[:, :2]),
                                  similarity_normalizer(X[:, 2:]))


def design_matrix(X):
    """Rows kron(x', x) so that row @ f = x'^T F x."""
    xh, xph = _homog(X)
    return (xph[:, :, None] * xh[:, None, :]).reshape(X.shape[0], 9)


def estimate_f_8point(samples, degeneracy_ratio=1e-9):
    """Normalized 8-point estimate of F as a unit 9-vector (rank 2 enforced).

    With more than eight points the smallest right singular vector gives the
    algebraic least-squares solution.
    """
    X = as_array(samples)
    if X.shape[0] < 8:
        raise ValueError("need at least 8 correspondences")
    T = normalization(X)
    Xn = np.hstack([_apply(T.T1, X[:, :2]), _apply(T.T2, X[:, 2:])])
    A = design_matrix(Xn)
    _, s, Vt = np.linalg.svd(A)
    # an 8x9 system has a one-dimensional null space unless degenerate
    if s[7] < degeneracy_ratio * s[0]:
        raise DegenerateSample("design matrix has a multi-dimensional null space")
    F = Vt[-1].reshape(3, 3)
    U, d, Vt2 = np.linalg.svd(F)
    F = U @ np.diag([d[0], d[1], 0.0]) @ Vt2
    F = T.T2.T @ F @ T.T1
    f = F.ravel()
    return f / np.linalg.norm(f)


def _apply(T, pts):
    return pts @ T[:2, :2].T + T[:2, 2]


# ---------------------------------------------------------------- Sampson --

def _homog(X):
    xh = np.ones((X.shape[0], 3))
    xph = np.ones((X.shape[0], 3))
    xh[:, :2] = X[:, :2]
    xph[:, :2] = X[:, 2:]
    return xh, xph


def sampson_terms(F, X):
    """Algebraic error eps, its gradient g = d eps / dX, and |g|^2."""
    xh, xph = _homog(X)
    eps = np.einsum("ni,ij,nj->n", xph, F, xh)
    g = np.hstack([(xph @ F)[:, :2], (xh @ F.T)[:, :2]])
    return eps, g, np.einsum("ni,ni->n", g, g)


def sampson_delta(F, X):
    """Sampson correction vectors delta = g eps / |g|^2, shape (n, 4)."""
    eps, g, gg = sampson_terms(F, np.atleast_2d(X))
    return g * (eps / gg)[:, None]


def _eps_hessian(F):
    # d g / d X, constant in X
    H = np.zeros((4, 4))
    H[:2, 2:] = F[:2, :2].T
    H[2:, :2] = F[:2, :2]
    return H


def sampson_jac_X(F, X):
    """d delta / d X, shape (n, 4, 4)."""
    X = np.atleast_2d(X)
    eps, g, gg = sampson_terms(F, X)
    H = _eps_hessian(F)
    gH = g @ H
    outer = g[:, :, None] * g[:, None, :]
    second = (H[None] / gg[:, None, None]
              - 2.0 * g[:, :, None] * gH[:, None, :] / gg[:, None, None]**2)
    return outer / gg[:, None, None] + eps[:, None, None] * second


def _dg_dF(X):
    n = X.shape[0]
    xh, xph = _homog(X)
    dg = np.zeros((n, 4, 3, 3))
    for i in range(2):
        dg[:, i, :, i] = xph          # g_i = sum_a F[a, i] x'_a
        dg[:, 2 + i, i, :] = xh       # g_{2+i} = sum_b F[i, b] x_b
    return dg.reshape(n, 4, 9)


def sampson_jac_F(F, X):
    """d delta / d f for f = vec(F) (row-major), shape (n, 4, 9)."""
    X = np.atleast_2d(X)
    eps, g, gg = sampson_terms(F, X)
    deps = design_matrix(X)
    dg = _dg_dF(X)
    gdg = np.einsum("ni,nij->nj", g, dg)
    first = g[:, :, None] * deps[:, None, :] / gg[:, None, None]
    second = (dg / gg[:, None, None]
              - 2.0 * g[:, :, None] * gdg[:, None, :] / gg[:, None, None]**2)
    return first + eps[:, None, None] * second


def omega_jacobian(samples, f):
    """Jacobian of the corrected-measurement map f -> stack(X_k - delta_k(f)), (4m, 9)."""
    X = as_array(samples)
    return -sampson_jac_F(np.asarray(f).reshape(3, 3), X).reshape(-1, 9)


def householder_complement(f):
    """Nine-by-eight orthonormal basis of the complement of f.

    First eight columns of the Householder reflection that maps e_9 onto f
    (up to sign).
    """
    f = np.asarray(f, dtype=float) / np.linalg.norm(f)
    e = np.zeros(9)
    e[-1] = 1.0
    sign = 1.0 if f[-1] >= 0 else -1.0
    v = f + sign * e
    H = np.eye(9) - 2.0 * np.outer(v, v) / (v @ v)
    return H[:, :8]


def cov_f_overdetermined(samples, f, noise, rank_tol=1e-13):
    """First-order covariance of the unit 9-vector f from its 8-point sample.

    Evaluates A (A^T J^T Sigma_X^-1 J A)^-1 A^T through an SVD of J A, which
    squares the condition number only at the end.
    """
    X = as_array(samples)
    f = np.asarray(f, dtype=float)
    sigma = noise.sigma if isinstance(noise, NoiseModel) else float(noise)
    A = householder_complement(f)
    JA = omega_jacobian(X, f) @ A / sigma
    _, s, Vt = np.linalg.svd(JA, full_matrices=False)
    if s[-1] <= rank_tol * s[0]:
        raise IllConditioned("sample geometry leaves f unconstrained")
    B = A @ (Vt.T / s)
    return B @ B.T


# ---------------------------------------------------------------- motion --

def fundamental_from_motion(q, t, K):
    """Unnormalized F = K^-T [t]x R(q) K^-1."""
    Ki = _Kinv(K)
    return Ki.T @ skew(t) @ quat_to_rot(q) @ Ki


def fundamental_jac_p(q, t, K):
    """d vec(F(p)) / d p, shape (9, 7)."""
    Ki = _Kinv(K)
    R = quat_to_rot(q)
    dR = quat_to_rot_grad(q)
    dE = np.concatenate([skew(t) @ dR, _SKEW_BASIS @ R])
    return (Ki.T @ dE @ Ki).reshape(7, 9).T


def theta_jacobians(f, q, t, K):
    """(d Theta / d f, d Theta / d p), each with Theta flattened row-major."""
    Km = _K(K)
    Dm = np.kron(Km.T, Km.T)
    m = Dm @ np.asarray(f, dtype=float)
    R = quat_to_rot(q)
    dR = quat_to_rot_grad(q)
    tx = skew(t)
    G = (tx @ R).ravel()
    dG = np.concatenate([tx @ dR, _SKEW_BASIS @ R]).reshape(7, 9).T
    mm = m @ m
    s = (m @ G) / mm
    ds_df = (G @ Dm - 2.0 * s * (m @ Dm)) / mm
    dth_df = s * Dm + np.outer(m, ds_df)
    ds_dp = (m @ dG) / mm
    dth_dp = np.outer(m, ds_dp) - dG
    return dth_df, dth_dp


def _complement(v):
    # last k-1 columns of the Householder reflection sending e_1 to +-v
    v = v / np.linalg.norm(v)
    w = v.copy()
    w[0] += 1.0 if v[0] >= 0 else -1.0
    H = np.eye(len(v)) - 2.0 * np.outer(w, w) / (w @ w)
    return H[:, 1:]


def gauge_tangent(q, t):
    """Seven-by-five basis of the gauge tangent: q on S^3, t on S^2."""
    T = np.zeros((7, 5))
    T[:4, :3] = _complement(np.asarray(q, dtype=float))
    T[4:, 3:] = _complement(np.asarray(t, dtype=float))
    return T


def motion_jacobian(f, q, t, K, rank_tol=1e-10):
    """J_p = -(d Theta / d p)^+ (d Theta / d f) restricted to the gauge tangent."""
    dth_df, dth_dp = theta_jacobians(f, q, t, K)
    T = gauge_tangent(q, t)
    D = dth_dp @ T
    U, s, Vt = np.linalg.svd(D, full_matrices=False)
    if s[-1] <= rank_tol * s[0]:
        raise IllConditioned("d Theta / d p loses rank beyond the gauge directions")
    # D has full column rank here, so its pseudo-inverse is V S^-1 U^T
    return -T @ ((Vt.T / s) @ U.T) @ dth_df


def cov_p(f, cov_f, q, t, K):
    Jp = motion_jacobian(f, q, t, K)
    C = Jp @ np.asarray(cov_f) @ Jp.T
    return 0.5 * (C + C.T)


@dataclass(frozen=True)
class DecompositionCandidates:
    rotations: tuple
    translations: tuple
    votes: tuple
    selected: int


def triangulate_dlt(P1, P2, y1, y2, return_sv=False):
    """Homogeneous DLT triangulation of n point pairs, shape (n, 4).

    With return_sv the singular values of each 4x4 system come back too.
    """
    y1 = np.atleast_2d(y1)
    y2 = np.atleast_2d(y2)
    A = np.stack([y1[:, [0]] * P1[2] - P1[0],
                  y1[:, [1]] * P1[2] - P1[1],
                  y2[:, [0]] * P2[2] - P2[0],
                  y2[:, [1]] * P2[2] - P2[1]], axis=1)
    # row scaling does not change the solution but helps conditioning
    A = A / np.linalg.norm(A, axis=2, keepdims=True)
    _, sv, Vt = np.linalg.svd(A)
    return (Vt[:, -1, :], sv) if return_sv else Vt[:, -1, :]


def cheirality_votes(R, t, y1, y2):
    """Count of normalized pairs triangulating in front of both cameras."""
    P1 = np.c_[np.eye(3), np.zeros(3)]
    P2 = np.c_[R, t]
    Xh = triangulate_dlt(P1, P2, y1, y2)
    w = Xh[:, 3]
    ok = np.abs(w) > 1e-12 * np.linalg.norm(Xh, axis=1)
    Xe = Xh[:, :3] / np.where(ok, w, 1.0)[:, None]
    z1 = Xe[:, 2]
    z2 = Xe @ R[2] + t[2]
    return int(np.sum(ok & (z1 > 0) & (z2 > 0)))


def _all_votes(cands, y1, y2):
    # cheirality votes of every candidate from one batched triangulation
    P1 = np.c_[np.eye(3), np.zeros(3)]
    m = len(y1)
    P2 = np.repeat(np.stack([np.hstack([R, t[:, None]]) for R, t in cands]), m, axis=0)
    Y1 = np.tile(y1, (len(cands), 1))
    Y2 = np.tile(y2, (len(cands), 1))
    A = np.stack([Y1[:, [0]] * P1[2] - P1[0],
                  Y1[:, [1]] * P1[2] - P1[1],
                  Y2[:, [0]] * P2[:, 2] - P2[:, 0],
                  Y2[:, [1]] * P2[:, 2] - P2[:, 1]], axis=1)
    A = A / np.linalg.norm(A, axis=2, keepdims=True)
    Xh = np.linalg.svd(A)[2][:, -1, :]
    w = Xh[:, 3]
    ok = np.abs(w) > 1e-12 * np.linalg.norm(Xh, axis=1)
    Xe = Xh[:, :3] / np.where(ok, w, 1.0)[:, None]
    z2 = np.einsum("ni,ni->n", Xe, P2[:, 2, :3]) + P2[:, 2, 3]
    front = (ok & (Xe[:, 2] > 0) & (z2 > 0)).reshape(len(cands), m)
    return [int(v) for v in front.sum(axis=1)]


def essential_candidates(E):
    U, _, Vt = np.linalg.svd(E)
    if np.linalg.det(U) < 0:
        U[:, 2] *= -1
    if np.linalg.det(Vt) < 0:
        Vt[2] *= -1
    R1 = U @ _W @ Vt
    R2 = U @ _W.T @ Vt
    u3 = U[:, 2]
    return [(R1, u3), (R1, -u3), (R2, u3), (R2, -u3)]


def project_essential(E):
    """Closest essential matrix: singular values set to (s, s, 0), s their mean."""
    U, d, Vt = np.linalg.svd(E)
    s = 0.5 * (d[0] + d[1])
    return U @ np.diag([s, s, 0.0]) @ Vt


def decompose_to_motion(f, K, samples):
    """Recover (q, t) from F by essential decomposition and a cheirality vote."""
    Km = _K(K)
    F = np.asarray(f, dtype=float).reshape(3, 3)
    E = project_essential(Km.T @ F @ Km)
    X = as_array(samples)
    Ki = _Kinv(K)
    xh, xph = _homog(X)
    y1 = (xh @ Ki.T)
    y2 = (xph @ Ki.T)
    y1 = y1[:, :2] / y1[:, 2:]
    y2 = y2[:, :2] / y2[:, 2:]
    cands = essential_candidates(E)
    votes = _all_votes(cands, y1, y2)
    best = int(np.argmax(votes))
    if votes[best] == 0 or sum(v == votes[best] for v in votes) > 1:
        raise CheiralityTie(f"cheirality votes {votes}")
    R, t = cands[best]
    info = DecompositionCandidates(tuple(c[0] for c in cands),
                                   tuple(c[1] for c in cands),
                                   tuple(votes), best)
    return rot_to_quat(R), t / np.linalg.norm(t), info


# ----------------------------------------------------- Sampson covariance --

def sampson_jac_p(q, t, K, X):
    """d delta / d p, shape (n, 4, 7)."""
    F = fundamental_from_motion(q, t, K)
    return sampson_jac_F(F, np.atleast_2d(X)) @ fundamental_jac_p(q, t, K)


def sampson_residuals(X, q, t, cov_p_mat, K, noise, statistic="projected",
                      min_gg=1e-15):
    """Batched Sampson residuals for motion (q, t) with covariance cov_p.

    Returns (delta, cov_delta, mahal, valid). Invalid rows are points at both
    epipoles; their mahal is +inf.

    delta is parallel to the epipolar gradient g by construction, so the
    default statistic is the Mahalanobis distance along that direction,
    (u . delta)^2 / (u^T cov_delta u) with u = g / |g|. statistic="full"
    gives delta^T cov_delta^-1 delta, which also conditions on the three
    components of delta orthogonal to g (identically zero) and is kept only
    for comparison.
    """
    X = as_array(X)
    sigma = noise.sigma if isinstance(noise, NoiseModel) else float(noise)
    F = fundamental_from_motion(q, t, K)
    # delta is invariant to the scale of F
    F = F / np.linalg.norm(F)
    eps, g, gg = sampson_terms(F, X)
    valid = gg >= min_gg
    safe_gg = np.where(valid, gg, 1.0)
    delta = g * (eps / safe_gg)[:, None]
    cov = covariance_delta(F, X, q, t, K, cov_p_mat, sigma)
    if statistic == "projected":
        u = g / np.sqrt(safe_gg)[:, None]
        var_u = np.einsum("ni,nij,nj->n", u, cov, u)
        mahal = eps**2 / safe_gg / var_u
    elif statistic == "full":
        mahal = _full_mahalanobis(delta, cov)
    else:
        raise ValueError(f"unknown statistic {statistic!r}")
    mahal = np.where(valid, mahal, np.inf)
    return delta, cov, mahal, valid


def covariance_delta(F, X, q, t, K, cov_p_mat, sigma):
    """J_X Sigma_X J_X^T + J_p Sigma_p J_p^T with exact Jacobians at X."""
    Jx = sampson_jac_X(F, X)
    cov = sigma**2 * Jx @ np.swapaxes(Jx, 1, 2)
    cov_p_mat = np.asarray(cov_p_mat, dtype=float)
    if np.any(cov_p_mat):
        Jp = sampson_jac_p(q, t, K, X)
        cov = cov + Jp @ cov_p_mat @ np.swapaxes(Jp, 1, 2)
    return 0.5 * (cov + np.swapaxes(cov, 1, 2))


def _full_mahalanobis(delta, cov):
    # eigen-solve so numerically singular rows give a finite (huge) value
    lam, V = np.linalg.eigh(cov)
    lam = np.maximum(lam, np.finfo(float).tiny)
    proj = np.einsum("nij,ni->nj", V, delta)
    return np.sum(proj**2 / lam, axis=1)


def sampson_residual(X, q, t, cov_p_mat, K, noise, statistic="projected"):
    """Single-correspondence Sampson residual with its covariance."""
    Xv = X.X if hasattr(X, "X") else np.asarray(X, dtype=float)
    delta, cov, mahal, valid = sampson_residuals(Xv[None], q, t, cov_p_mat, K, noise,
                                                 statistic=statistic)
    if not valid[0]:
        raise EpipoleDegenerate("point lies at both epipoles")
    return SampsonResidual(delta[0], cov[0], float(mahal[0]), float(np.linalg.cond(cov[0])))
