"""Vectorized evaluation of many minimal-sample hypotheses at once.

Each routine mirrors a single-hypothesis function in `fmatrix` with a
leading batch axis. Failures are reported per row through status codes
instead of exceptions, so one bad sample does not stop its batch.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import fmatrix as fm
from .core import quat_to_rot, quat_to_rot_grad, rot_to_quat, skew
from .stats import gaussian_diff_entropies

OK, DEGENERATE, CHEIRALITY_TIE, ILL_CONDITIONED = 0, 1, 2, 3
STATUS_NAMES = ("ok", "degenerate", "cheirality_tie", "ill_conditioned")

# rows of (hypothesis x point) handled per scoring chunk; bounds peak memory
SCORE_CHUNK = 32768


def _T(A):
    return np.swapaxes(A, -1, -2)


def _homog(X):
    shape = X.shape[:-1] + (3,)
    xh = np.ones(shape)
    xph = np.ones(shape)
    xh[..., :2] = X[..., :2]
    xph[..., :2] = X[..., 2:]
    return xh, xph


def _normalizers(P):
    # similarity normalizers of point stacks (B, m, 2) and a non-coincidence flag
    c = P.mean(axis=1)
    rms = np.sqrt(np.mean(np.sum((P - c[:, None]) ** 2, axis=2), axis=1))
    ok = rms > 0
    s = np.sqrt(2.0) / np.where(ok, rms, 1.0)
    T = np.zeros((len(P), 3, 3))
    T[:, 0, 0] = s
    T[:, 1, 1] = s
    T[:, 0, 2] = -s * c[:, 0]
    T[:, 1, 2] = -s * c[:, 1]
    T[:, 2, 2] = 1.0
    return T, ok


def _apply(T, P):
    return P @ _T(T[:, :2, :2]) + T[:, None, :2, 2]


def eight_point(S, degeneracy_ratio=1e-9):
    """Normalized 8-point estimates for sample stacks (B, m, 4).

    Returns (f, ok): unit 9-vectors (B, 9) and a flag that is False where the
    design matrix has a multi-dimensional null space.
    """
    S = np.asarray(S, dtype=float)
    T1, ok1 = _normalizers(S[..., :2])
    T2, ok2 = _normalizers(S[..., 2:])
    Sn = np.concatenate([_apply(T1, S[..., :2]), _apply(T2, S[..., 2:])], axis=2)
    xh, xph = _homog(Sn)
    A = (xph[..., :, None] * xh[..., None, :]).reshape(len(S), -1, 9)
    _, s, Vt = np.linalg.svd(A)
    ok = ok1 & ok2 & (s[:, 7] >= degeneracy_ratio * s[:, 0])
    U, d, V2 = np.linalg.svd(Vt[:, -1].reshape(-1, 3, 3))
    d[:, 2] = 0.0
    F = _T(T2) @ ((U * d[:, None, :]) @ V2) @ T1
    f = F.reshape(-1, 9)
    return f / np.linalg.norm(f, axis=1, keepdims=True), ok


def decompose(f, K, S):
    """Essential decomposition and cheirality vote for each row.

    Returns (q, t, ok); ok is False where no candidate wins outright.
    """
    Km, Ki = fm._K(K), fm._Kinv(K)
    B = len(f)
    U, d, Vt = np.linalg.svd(Km.T @ f.reshape(-1, 3, 3) @ Km)
    sm = 0.5 * (d[:, 0] + d[:, 1])
    E = (U * np.stack([sm, sm, np.zeros(B)], 1)[:, None, :]) @ Vt
    U, _, Vt = np.linalg.svd(E)
    U[np.linalg.det(U) < 0, :, 2] *= -1
    Vt[np.linalg.det(Vt) < 0, 2, :] *= -1
    R1 = U @ fm._W @ Vt
    R2 = U @ fm._W.T @ Vt
    u3 = U[:, :, 2]
    Rc = np.stack([R1, R1, R2, R2], 1)
    tc = np.stack([u3, -u3, u3, -u3], 1)

    xh, xph = _homog(S)
    y1 = xh @ Ki.T
    y2 = xph @ Ki.T
    y1 = (y1[..., :2] / y1[..., 2:])[:, None]
    y2 = (y2[..., :2] / y2[..., 2:])[:, None]
    P1 = np.hstack([np.eye(3), np.zeros((3, 1))])
    P2 = np.concatenate([Rc, tc[..., None]], -1)[:, :, None]      # (B, 4, 1, 3, 4)
    rows = [y1[..., 0:1] * P1[2] - P1[0],
            y1[..., 1:2] * P1[2] - P1[1],
            y2[..., 0:1] * P2[..., 2, :] - P2[..., 0, :],
            y2[..., 1:2] * P2[..., 2, :] - P2[..., 1, :]]
    A = np.stack(np.broadcast_arrays(*rows), axis=-2)             # (B, 4, m, 4, 4)
    A = A / np.linalg.norm(A, axis=-1, keepdims=True)
    Xh = np.linalg.svd(A)[2][..., -1, :]
    w = Xh[..., 3]
    finite = np.abs(w) > 1e-12 * np.linalg.norm(Xh, axis=-1)
    Xe = Xh[..., :3] / np.where(finite, w, 1.0)[..., None]
    z2 = np.einsum("bcmi,bci->bcm", Xe, Rc[:, :, 2]) + tc[:, :, None, 2]
    votes = np.sum(finite & (Xe[..., 2] > 0) & (z2 > 0), axis=-1)
    best = np.argmax(votes, axis=1)
    rows_ = np.arange(B)
    top = votes[rows_, best]
    ok = (top > 0) & (np.sum(votes == top[:, None], axis=1) == 1)
    t = tc[rows_, best]
    q = np.array([rot_to_quat(R) for R in Rc[rows_, best]]).reshape(B, 4)
    return q, t / np.linalg.norm(t, axis=1, keepdims=True), ok


def _terms(F, X):
    xh, xph = _homog(X)
    xF = xph @ F
    Fx = xh @ _T(F)
    eps = np.sum(Fx * xph, axis=-1)
    g = np.concatenate([xF[..., :2], Fx[..., :2]], axis=-1)
    return xh, xph, eps, g, np.sum(g * g, axis=-1)


def _sampson_jac_F(F, X):
    # d delta / d f for F (B, 3, 3) and points (B, n, 4) or shared (n, 4)
    xh, xph, eps, g, gg = _terms(F, X)
    lead = xh.shape[:-1]
    deps = (xph[..., :, None] * xh[..., None, :]).reshape(lead + (9,))
    dg = np.zeros(lead + (4, 3, 3))
    for i in range(2):
        dg[..., i, :, i] = xph
        dg[..., 2 + i, i, :] = xh
    dg = dg.reshape(lead + (4, 9))
    gdg = np.einsum("...i,...ij->...j", g, dg)
    ig = (1.0 / gg)[..., None, None]
    first = g[..., :, None] * deps[..., None, :] * ig
    second = dg * ig - 2.0 * g[..., :, None] * gdg[..., None, :] * ig**2
    return first + eps[..., None, None] * second


def _sampson_jac_p(Fu, X, fjp):
    # d delta / d p for shared points (n, 4), built from dF/dp (B, 9, 7) without
    # forming d delta / d f
    B = len(Fu)
    xh, xph, eps, g, gg = _terms(Fu, X)
    D = fjp.reshape(B, 3, 3, 7)
    Dx = np.matmul(xh, D.transpose(0, 2, 1, 3).reshape(B, 3, 21)).reshape(B, -1, 3, 7)
    xD = np.matmul(xph, D[:, :, :2].reshape(B, 3, 14)).reshape(B, -1, 2, 7)
    deps = np.einsum("na,bnak->bnk", xph, Dx)
    dg = np.concatenate([xD, Dx[..., :2, :]], axis=-2)
    ig = 1.0 / gg
    gdg = np.einsum("bni,bnik->bnk", g, dg)
    v = (deps - (2.0 * eps * ig)[..., None] * gdg) * ig[..., None]
    return dg * (eps * ig)[..., None, None] + g[..., :, None] * v[..., None, :]


def _householder(f):
    f = f / np.linalg.norm(f, axis=1, keepdims=True)
    v = f.copy()
    v[:, -1] += np.where(f[:, -1] >= 0, 1.0, -1.0)
    H = np.eye(9) - 2.0 * v[:, :, None] * v[:, None, :] / np.sum(v * v, 1)[:, None, None]
    return H[:, :, :8]


def cov_f(S, f, sigma, rank_tol=1e-13):
    """First-order covariances (B, 9, 9) of f from its samples, and a rank flag."""
    A = _householder(f)
    J = -_sampson_jac_F(f.reshape(-1, 3, 3), S).reshape(len(S), -1, 9)
    _, s, Vt = np.linalg.svd(J @ A / sigma, full_matrices=False)
    ok = s[:, -1] > rank_tol * s[:, 0]
    Bm = A @ (_T(Vt) / np.where(s > 0, s, 1.0)[:, None, :])
    return Bm @ _T(Bm), ok


def _complement(v):
    v = v / np.linalg.norm(v, axis=1, keepdims=True)
    w = v.copy()
    w[:, 0] += np.where(v[:, 0] >= 0, 1.0, -1.0)
    k = v.shape[1]
    H = np.eye(k) - 2.0 * w[:, :, None] * w[:, None, :] / np.sum(w * w, 1)[:, None, None]
    return H[:, :, 1:]


def gauge_tangent(q, t):
    T = np.zeros((len(q), 7, 5))
    T[:, :4, :3] = _complement(q)
    T[:, 4:, 3:] = _complement(t)
    return T


def _dE_dp(q, t):
    # d([t]x R(q)) / dp as (B, 7, 3, 3)
    R = quat_to_rot(q)
    return np.concatenate([skew(t)[:, None] @ quat_to_rot_grad(q),
                           fm._SKEW_BASIS @ R[:, None]], axis=1)


def fundamental_jac_p(q, t, K):
    Ki = fm._Kinv(K)
    return _T((Ki.T @ _dE_dp(q, t) @ Ki).reshape(-1, 7, 9))


def cov_p(f, cf, q, t, K, rank_tol=1e-10):
    """Motion covariances (B, 7, 7) propagated from cov_f, and a rank flag."""
    Km = fm._K(K)
    Dm = np.kron(Km.T, Km.T)
    m = f @ Dm.T
    G = (skew(t) @ quat_to_rot(q)).reshape(-1, 9)
    dG = _T(_dE_dp(q, t).reshape(-1, 7, 9))
    mm = np.sum(m * m, axis=1)
    s = np.sum(m * G, axis=1) / mm
    ds_df = (G @ Dm - 2.0 * s[:, None] * (m @ Dm)) / mm[:, None]
    dth_df = s[:, None, None] * Dm + m[:, :, None] * ds_df[:, None, :]
    ds_dp = np.einsum("bi,bij->bj", m, dG) / mm[:, None]
    dth_dp = m[:, :, None] * ds_dp[:, None, :] - dG
    T = gauge_tangent(q, t)
    U, sv, Vt = np.linalg.svd(dth_dp @ T, full_matrices=False)
    ok = sv[:, -1] > rank_tol * sv[:, 0]
    Jp = -T @ ((_T(Vt) / np.where(sv > 0, sv, 1.0)[:, None, :]) @ _T(U)) @ dth_df
    C = Jp @ cf @ _T(Jp)
    return 0.5 * (C + _T(C)), ok


def score(X, q, t, cp, K, sigma, min_gg=1e-15):
    """Sampson residual covariances and projected statistics of X under each motion.

    Returns (cov (B, n, 4, 4), mahal (B, n), valid (B, n)); see
    `fmatrix.sampson_residuals` for the statistic.
    """
    Ki = fm._Kinv(K)
    Fu = Ki.T @ skew(t) @ quat_to_rot(q) @ Ki
    F = Fu / np.linalg.norm(Fu, axis=(1, 2), keepdims=True)
    _, _, eps, g, gg = _terms(F, X)
    valid = gg >= min_gg
    ig = 1.0 / np.where(valid, gg, 1.0)
    H = np.zeros((len(F), 4, 4))
    H[:, :2, 2:] = _T(F[:, :2, :2])
    H[:, 2:, :2] = F[:, :2, :2]
    gH = g @ H
    a = (eps * ig)[..., None, None]
    Jx = a * H[:, None] + g[..., :, None] * ((g - 2.0 * eps[..., None] * ig[..., None] * gH)
                                              * ig[..., None])[..., None, :]
    cov = sigma**2 * Jx @ _T(Jx)
    if np.any(cp):
        Jp = _sampson_jac_p(Fu, X, fundamental_jac_p(q, t, K))
        cov = cov + Jp @ cp[:, None] @ _T(Jp)
    cov = 0.5 * (cov + _T(cov))
    u = g * np.sqrt(ig)[..., None]
    var_u = np.einsum("...i,...ij,...j->...", u, cov, u)
    with np.errstate(divide="ignore", invalid="ignore"):
        mahal = np.where(valid, eps**2 * ig / var_u, np.inf)
    return cov, mahal, valid


@dataclass(eq=False)
class Hypotheses:
    """Per-row outcome of `evaluate` for B minimal samples."""
    status: np.ndarray
    q: np.ndarray
    t: np.ndarray
    cov_p: np.ndarray
    consistence: np.ndarray
    inliers: list
    scores: list


def instantiate(X, idx, K, sigma):
    """8-point, decomposition and covariance propagation for samples X[idx]."""
    S = X[idx]
    B = len(idx)
    status = np.full(B, OK)
    q = np.zeros((B, 4))
    t = np.zeros((B, 3))
    cp = np.zeros((B, 7, 7))
    f, ok = eight_point(S)
    status[~ok] = DEGENERATE
    live = np.flatnonzero(ok)
    if live.size:
        ql, tl, ok = decompose(f[live], K, S[live])
        status[live[~ok]] = CHEIRALITY_TIE
        live, ql, tl = live[ok], ql[ok], tl[ok]
    if live.size:
        cf, ok = cov_f(S[live], f[live], sigma)
        status[live[~ok]] = ILL_CONDITIONED
        live, ql, tl, cf = live[ok], ql[ok], tl[ok], cf[ok]
    if live.size:
        cpl, ok = cov_p(f[live], cf, ql, tl, K)
        status[live[~ok]] = ILL_CONDITIONED
        live = live[ok]
        q[live], t[live], cp[live] = ql[ok], tl[ok], cpl[ok]
    return status, q, t, cp


def evaluate(X, idx, K, sigma, thresh):
    """Instantiate and score the hypotheses of the sample rows idx (B, m).

    For every instantiated row: the consistence flag of its own sample, the
    inliers of X under the chi-square threshold, and their entropy scores.
    """
    X = np.asarray(X, dtype=float)
    idx = np.asarray(idx)
    status, q, t, cp = instantiate(X, idx, K, sigma)
    B, n = len(idx), len(X)
    consistence = np.zeros(B, bool)
    inliers = [None] * B
    scores = [None] * B
    live = np.flatnonzero(status == OK)
    step = max(1, SCORE_CHUNK // max(n, 1))
    for lo in range(0, live.size, step):
        rows = live[lo:lo + step]
        cov, mahal, valid = score(X, q[rows], t[rows], cp[rows], K, sigma)
        passed = valid & (mahal <= thresh)
        h = gaussian_diff_entropies(cov[passed]) if passed.any() else np.zeros(0)
        counts = passed.sum(axis=1)
        splits = np.split(h, np.cumsum(counts)[:-1])
        for k, b in enumerate(rows):
            consistence[b] = bool(passed[k, idx[b]].all())
            inliers[b] = np.flatnonzero(passed[k])
            scores[b] = splits[k]
    return Hypotheses(status, q, t, cp, consistence, inliers, scores)


def inlier_counts(X, f, thresh_sq):
    """Sampson-distance inlier counts (B,) and masks (B, n) of X under each unit f."""
    n = len(X)
    step = max(1, SCORE_CHUNK // max(n, 1))
    masks = np.zeros((len(f), n), bool)
    for lo in range(0, len(f), step):
        F = f[lo:lo + step].reshape(-1, 3, 3)
        _, _, eps, _, gg = _terms(F, X)
        with np.errstate(divide="ignore", invalid="ignore"):
            d = np.where(gg > 0, eps**2 / gg, np.inf)
        masks[lo:lo + step] = d <= thresh_sq
    return masks.sum(axis=1), masks
