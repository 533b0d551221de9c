"""Domain types and rotation helpers shared across the estimator."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


def skew(v):
    """Cross-product matrix [v]x; leading dimensions broadcast."""
    v = np.asarray(v, dtype=float)
    x, y, z = v[..., 0], v[..., 1], v[..., 2]
    o = np.zeros_like(x)
    return np.stack([np.stack([o, -z, y], -1),
                     np.stack([z, o, -x], -1),
                     np.stack([-y, x, o], -1)], -2)


def _quat_quadratic(q):
    w, x, y, z = q[..., 0], q[..., 1], q[..., 2], q[..., 3]
    return np.stack([
        np.stack([w*w + x*x - y*y - z*z, 2*(x*y - w*z), 2*(x*z + w*y)], -1),
        np.stack([2*(x*y + w*z), w*w - x*x + y*y - z*z, 2*(y*z - w*x)], -1),
        np.stack([2*(x*z - w*y), 2*(y*z + w*x), w*w - x*x - y*y + z*z], -1),
    ], -2)


def _mat(rows):
    return np.stack([np.stack(r, -1) for r in rows], -2)


def _quat_quadratic_grad(q):
    # d(quadratic form)/dq_k, shape (..., 4, 3, 3)
    w, x, y, z = q[..., 0], q[..., 1], q[..., 2], q[..., 3]
    dw = _mat([[w, -z, y], [z, w, -x], [-y, x, w]])
    dx = _mat([[x, y, z], [y, -x, -w], [z, w, -x]])
    dy = _mat([[-y, x, w], [x, y, z], [-w, z, -y]])
    dz = _mat([[-z, -w, x], [w, -z, y], [x, y, z]])
    return 2.0 * np.stack([dw, dx, dy, dz], -3)


def quat_to_rot(q):
    """Rotation matrix of quaternion q = (w, x, y, z); leading dimensions broadcast.

    Homogeneous of degree zero in q, so the radial direction of q is a
    null direction of every derivative taken through this map.
    """
    q = np.asarray(q, dtype=float)
    n2 = np.sum(q * q, axis=-1)[..., None, None]
    return _quat_quadratic(q) / n2


def quat_to_rot_grad(q):
    """dR/dq_k stacked as (..., 4, 3, 3)."""
    q = np.asarray(q, dtype=float)
    n2 = np.sum(q * q, axis=-1)[..., None, None, None]
    Q = _quat_quadratic(q)[..., None, :, :]
    dQ = _quat_quadratic_grad(q)
    return dQ / n2 - 2.0 * q[..., :, None, None] * Q / n2**2


def rot_to_quat(R):
    """Unit quaternion of a rotation matrix, scalar part non-negative."""
    R = np.asarray(R, dtype=float)
    tr = np.trace(R)
    if tr > 0:
        s = 2.0 * np.sqrt(tr + 1.0)
        q = np.array([0.25*s, (R[2, 1] - R[1, 2])/s,
                      (R[0, 2] - R[2, 0])/s, (R[1, 0] - R[0, 1])/s])
    elif R[0, 0] > R[1, 1] and R[0, 0] > R[2, 2]:
        s = 2.0 * np.sqrt(1.0 + R[0, 0] - R[1, 1] - R[2, 2])
        q = np.array([(R[2, 1] - R[1, 2])/s, 0.25*s,
                      (R[0, 1] + R[1, 0])/s, (R[0, 2] + R[2, 0])/s])
    elif R[1, 1] > R[2, 2]:
        s = 2.0 * np.sqrt(1.0 + R[1, 1] - R[0, 0] - R[2, 2])
        q = np.array([(R[0, 2] - R[2, 0])/s, (R[0, 1] + R[1, 0])/s,
                      0.25*s, (R[1, 2] + R[2, 1])/s])
    else:
        s = 2.0 * np.sqrt(1.0 + R[2, 2] - R[0, 0] - R[1, 1])
        q = np.array([(R[1, 0] - R[0, 1])/s, (R[0, 2] + R[2, 0])/s,
                      (R[1, 2] + R[2, 1])/s, 0.25*s])
    return canonical_quat(q)


def canonical_quat(q):
    q = np.asarray(q, dtype=float)
    q = q / np.linalg.norm(q)
    return -q if q[0] < 0 else q


def axis_angle_to_quat(axis, angle):
    axis = np.asarray(axis, dtype=float)
    axis = axis / np.linalg.norm(axis)
    return canonical_quat(np.r_[np.cos(angle / 2), np.sin(angle / 2) * axis])


def rotation_angle(R1, R2):
    """Geodesic angle in radians between two rotations."""
    c = (np.trace(R1.T @ R2) - 1.0) / 2.0
    return float(np.arccos(np.clip(c, -1.0, 1.0)))


def direction_angle(t1, t2):
    """Angle in radians between two translation directions."""
    c = t1 @ t2 / (np.linalg.norm(t1) * np.linalg.norm(t2))
    return float(np.arccos(np.clip(c, -1.0, 1.0)))


def _check_cov(cov, name, dim):
    cov = np.asarray(cov, dtype=float)
    if cov.shape != (dim, dim):
        raise ValueError(f"{name} must be {dim}x{dim}, got {cov.shape}")
    if not np.allclose(cov, cov.T, rtol=1e-8, atol=1e-300):
        raise ValueError(f"{name} is not symmetric")
    lam = np.linalg.eigvalsh(cov)
    if lam.size and lam[0] < -1e-10 * max(lam[-1], 0.0) - 1e-300:
        raise ValueError(f"{name} is not positive semi-definite (min eig {lam[0]:.3e})")
    return cov


@dataclass(frozen=True)
class Intrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    skew: float = 0.0

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError("focal lengths must be positive")

    @property
    def K(self):
        return np.array([[self.fx, self.skew, self.cx],
                         [0.0, self.fy, self.cy],
                         [0.0, 0.0, 1.0]])

    @property
    def K_inv(self):
        fx, fy, cx, cy, sk = self.fx, self.fy, self.cx, self.cy, self.skew
        return np.array([[1.0 / fx, -sk / (fx * fy), (sk * cy - cx * fy) / (fx * fy)],
                         [0.0, 1.0 / fy, -cy / fy],
                         [0.0, 0.0, 1.0]])

    @classmethod
    def identity(cls):
        return cls(1.0, 1.0, 0.0, 0.0)


@dataclass(frozen=True)
class Correspondence:
    """One point pair: x in view 1, xp in view 2, pixel coordinates."""

    x: tuple
    xp: tuple

    def __post_init__(self):
        x = tuple(float(v) for v in self.x)
        xp = tuple(float(v) for v in self.xp)
        if len(x) != 2 or len(xp) != 2:
            raise ValueError("points must be 2-vectors")
        if not all(np.isfinite(x + xp)):
            raise ValueError("coordinates must be finite")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "xp", xp)

    @property
    def X(self):
        return np.array(self.x + self.xp)

    @property
    def x_h(self):
        return np.array(self.x + (1.0,))

    @property
    def xp_h(self):
        return np.array(self.xp + (1.0,))

    @classmethod
    def from_vector(cls, X):
        return cls((X[0], X[1]), (X[2], X[3]))


def as_array(correspondences):
    """Stack correspondences into an (n, 4) array; arrays pass through."""
    if isinstance(correspondences, np.ndarray):
        arr = np.asarray(correspondences, dtype=float)
    else:
        arr = np.array([c.X for c in correspondences], dtype=float).reshape(-1, 4)
    if arr.ndim != 2 or arr.shape[1] != 4:
        raise ValueError(f"expected (n, 4) correspondences, got {arr.shape}")
    return arr


@dataclass(frozen=True)
class NoiseModel:
    sigma: float = 0.5

    def __post_init__(self):
        if not self.sigma > 0:
            raise ValueError("sigma must be positive")

    @property
    def cov_X(self):
        return self.sigma**2 * np.eye(4)


@dataclass(frozen=True, eq=False)
class FundamentalModel:
    f: np.ndarray
    cov_f: np.ndarray = field(default_factory=lambda: np.zeros((9, 9)))

    def __post_init__(self):
        f = np.asarray(self.f, dtype=float).reshape(9)
        if abs(np.linalg.norm(f) - 1.0) > 1e-9:
            raise ValueError("f must have unit norm")
        s = np.linalg.svd(f.reshape(3, 3), compute_uv=False)
        if s[2] > 1e-12 * s[0]:
            raise ValueError("F must have rank 2")
        object.__setattr__(self, "f", f)
        object.__setattr__(self, "cov_f", _check_cov(self.cov_f, "cov_f", 9))

    @property
    def F(self):
        return self.f.reshape(3, 3)


@dataclass(frozen=True, eq=False)
class CameraMotion:
    """Relative motion: X2 = R(q) X1 + t, with |t| = 1."""

    q: np.ndarray
    t: np.ndarray
    cov_p: np.ndarray = field(default_factory=lambda: np.zeros((7, 7)))

    def __post_init__(self):
        q = np.asarray(self.q, dtype=float).reshape(4)
        t = np.asarray(self.t, dtype=float).reshape(3)
        if abs(np.linalg.norm(q) - 1.0) > 1e-9:
            raise ValueError("q must be a unit quaternion")
        if q[0] < 0:
            raise ValueError("q must have non-negative scalar part")
        if abs(np.linalg.norm(t) - 1.0) > 1e-9:
            raise ValueError("t must have unit norm")
        object.__setattr__(self, "q", q)
        object.__setattr__(self, "t", t)
        object.__setattr__(self, "cov_p", _check_cov(self.cov_p, "cov_p", 7))

    @classmethod
    def _unchecked(cls, q, t, cov_p):
        # internal fast path for values that are valid by construction
        m = object.__new__(cls)
        object.__setattr__(m, "q", q)
        object.__setattr__(m, "t", t)
        object.__setattr__(m, "cov_p", cov_p)
        return m

    @classmethod
    def from_rt(cls, R, t, cov_p=None):
        t = np.asarray(t, dtype=float)
        return cls(rot_to_quat(R), t / np.linalg.norm(t),
                   np.zeros((7, 7)) if cov_p is None else cov_p)

    @property
    def R(self):
        return quat_to_rot(self.q)

    @property
    def p(self):
        return np.r_[self.q, self.t]

    def essential(self):
        return skew(self.t) @ self.R

    def fundamental(self, K):
        """Unit-norm F = K^-T [t]x R K^-1."""
        Ki = K.K_inv if isinstance(K, Intrinsics) else np.linalg.inv(K)
        F = Ki.T @ self.essential() @ Ki
        return F / np.linalg.norm(F)

    def with_cov(self, cov_p):
        return CameraMotion(self.q, self.t, cov_p)


@dataclass(frozen=True, eq=False)
class SampsonResidual:
    delta: np.ndarray
    cov_delta: np.ndarray
    mahal: float
    cond: float = float("nan")


def theta_residual(f, q, t, K):
    """Residual s K^T F K - [t]x R(q) with the scale s fit in closed form."""
    Kmat = K.K if isinstance(K, Intrinsics) else np.asarray(K, dtype=float)
    M = Kmat.T @ np.asarray(f, dtype=float).reshape(3, 3) @ Kmat
    G = skew(np.asarray(t, dtype=float)) @ quat_to_rot(q)
    s = np.sum(M * G) / np.sum(M * M)
    return s * M - G
