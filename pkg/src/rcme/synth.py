"""Synthetic two-view scenes with ground truth."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import CameraMotion, Intrinsics, axis_angle_to_quat
from .stats import chi2_inv_cdf

DEFAULT_K = Intrinsics(500.0, 500.0, 320.0, 240.0)


def default_motion():
    q = axis_angle_to_quat([0.1, 1.0, 0.05], np.deg2rad(6.0))
    t = np.array([0.9, 0.1, 0.4])
    return CameraMotion(q, t / np.linalg.norm(t))


@dataclass(frozen=True)
class SceneConfig:
    n_points: int = 200
    outlier_ratio: float = 0.0
    sigma: float = 0.5
    motion_truth: CameraMotion = field(default_factory=default_motion)
    K: Intrinsics = DEFAULT_K
    depth_range: tuple = (4.0, 20.0)
    distribution: str = "uniform"
    n_clusters: int = 3
    cluster_sigma_px: float = 60.0
    image_size: tuple = (640, 480)
    rng_seed: int = 0

    def __post_init__(self):
        if self.n_points < 1:
            raise ValueError("n_points must be positive")
        if not (0.0 <= self.outlier_ratio <= 1.0):
            raise ValueError("outlier_ratio must lie in [0, 1]")
        if self.sigma < 0:
            raise ValueError("sigma must be non-negative")
        near, far = self.depth_range
        if not (0 < near < far):
            raise ValueError("depth_range must satisfy 0 < near < far")
        if self.distribution not in ("uniform", "clustered"):
            raise ValueError(f"unknown distribution {self.distribution!r}")

    @property
    def n_outliers(self):
        return int(round(self.outlier_ratio * self.n_points))


@dataclass(frozen=True, eq=False)
class Scene:
    X: np.ndarray
    inlier: np.ndarray
    motion: CameraMotion
    K: Intrinsics
    sigma: float
    points3d: np.ndarray = None


def outlier_margin(sigma, alpha=0.05):
    """Minimum Sampson distance (pixels) of a generated outlier."""
    return 5.0 * sigma * np.sqrt(chi2_inv_cdf(3, 1 - alpha))


class _Sampler:
    def __init__(self, cfg, rng):
        self.cfg = cfg
        self.rng = rng
        w, h = cfg.image_size
        if cfg.distribution == "clustered":
            pad = min(w, h) * 0.15
            self.centers = np.c_[rng.uniform(pad, w - pad, cfg.n_clusters),
                                 rng.uniform(pad, h - pad, cfg.n_clusters)]

    def image_points(self, k):
        cfg, rng = self.cfg, self.rng
        w, h = cfg.image_size
        if cfg.distribution == "uniform":
            return np.c_[rng.uniform(0, w, k), rng.uniform(0, h, k)]
        idx = rng.integers(0, cfg.n_clusters, k)
        pts = self.centers[idx] + rng.normal(0.0, cfg.cluster_sigma_px, (k, 2))
        return pts


def _inside(pts, size):
    w, h = size
    return (pts[:, 0] >= 0) & (pts[:, 0] < w) & (pts[:, 1] >= 0) & (pts[:, 1] < h)


def _project(K, P):
    p = P @ K.T
    return p[:, :2] / p[:, 2:]


def _true_points(cfg, sampler, rng, k, K, R, t, max_rounds=1000):
    if k == 0:
        return np.zeros((0, 4)), np.zeros((0, 3))
    Ki = np.linalg.inv(K)
    out_x, out_P = [], []
    need = k
    for _ in range(max_rounds):
        if need <= 0:
            break
        m = max(2 * need, 16)
        x = sampler.image_points(m)
        x = x[_inside(x, cfg.image_size)]
        depth = rng.uniform(*cfg.depth_range, x.shape[0])
        P = (np.c_[x, np.ones(len(x))] @ Ki.T) * depth[:, None]
        P2 = P @ R.T + t
        ok = P2[:, 2] > 0
        xp = np.full((len(x), 2), -1.0)
        xp[ok] = _project(K, P2[ok])
        ok &= _inside(xp, cfg.image_size)
        out_x.append(np.c_[x[ok], xp[ok]])
        out_P.append(P[ok])
        need -= int(ok.sum())
    else:
        raise ValueError("camera frusta do not overlap for this configuration")
    if need > 0:
        raise ValueError("camera frusta do not overlap for this configuration")
    return np.concatenate(out_x)[:k], np.concatenate(out_P)[:k]


def generate(cfg):
    """Sample a scene; returns a Scene with (n, 4) correspondences and labels."""
    rng = np.random.default_rng(cfg.rng_seed)
    sampler = _Sampler(cfg, rng)
    K = cfg.K.K
    R, t = cfg.motion_truth.R, cfg.motion_truth.t
    n_out = cfg.n_outliers
    n_in = cfg.n_points - n_out

    Xin, Pin = _true_points(cfg, sampler, rng, n_in, K, R, t)
    if cfg.sigma > 0:
        Xin = Xin + rng.normal(0.0, cfg.sigma, Xin.shape)

    Xout = _outliers(cfg, sampler, rng, n_out)
    X = np.concatenate([Xin, Xout]) if n_out else Xin
    inlier = np.r_[np.ones(n_in, bool), np.zeros(n_out, bool)]
    P = np.concatenate([Pin, np.full((n_out, 3), np.nan)]) if n_out else Pin
    perm = rng.permutation(cfg.n_points)
    return Scene(X[perm], inlier[perm], cfg.motion_truth, cfg.K, cfg.sigma, P[perm])


def _outliers(cfg, sampler, rng, k, max_rounds=10000):
    if k == 0:
        return np.zeros((0, 4))
    F = cfg.motion_truth.fundamental(cfg.K)
    margin = outlier_margin(cfg.sigma)
    w, h = cfg.image_size
    out = []
    need = k
    for _ in range(max_rounds):
        if need <= 0:
            break
        m = max(2 * need, 16)
        x = sampler.image_points(m)
        x = x[_inside(x, cfg.image_size)]
        xp = np.c_[rng.uniform(0, w, len(x)), rng.uniform(0, h, len(x))]
        X = np.c_[x, xp]
        xh = np.c_[x, np.ones(len(x))]
        xph = np.c_[xp, np.ones(len(x))]
        eps = np.einsum("ni,ij,nj->n", xph, F, xh)
        g = np.c_[(xph @ F)[:, :2], (xh @ F.T)[:, :2]]
        dist = np.abs(eps) / np.linalg.norm(g, axis=1)
        keep = dist > margin
        out.append(X[keep])
        need -= int(keep.sum())
    return np.concatenate(out)[:k]


def random_motion(rng, max_angle_deg=15.0):
    axis = rng.normal(size=3)
    q = axis_angle_to_quat(axis, np.deg2rad(rng.uniform(1.0, max_angle_deg)))
    t = rng.normal(size=3)
    t[2] = abs(t[2]) * 0.5
    return CameraMotion(q, t / np.linalg.norm(t))


def planar_scene(n, motion=None, K=DEFAULT_K, sigma=0.0, seed=0):
    """Points on the plane Z = 8 in front of camera 1 (homography-degenerate)."""
    rng = np.random.default_rng(seed)
    motion = motion or default_motion()
    Km = K.K
    P = np.c_[rng.uniform(-3, 3, n), rng.uniform(-2, 2, n), np.full(n, 8.0)]
    x = _project(Km, P)
    xp = _project(Km, P @ motion.R.T + motion.t)
    X = np.c_[x, xp]
    if sigma > 0:
        X = X + rng.normal(0, sigma, X.shape)
    return X
