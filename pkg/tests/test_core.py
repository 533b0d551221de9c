import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rcme import core, synth
from rcme.core import (CameraMotion, Correspondence, FundamentalModel, Intrinsics,
                       NoiseModel, quat_to_rot, rot_to_quat, theta_residual)

quats = st.lists(st.floats(-1, 1), min_size=4, max_size=4).filter(
    lambda v: np.linalg.norm(v) > 1e-3)


def test_intrinsics():
    K = Intrinsics(500, 510, 320, 240, 1.5)
    assert np.allclose(K.K, [[500, 1.5, 320], [0, 510, 240], [0, 0, 1]])
    assert np.allclose(K.K @ K.K_inv, np.eye(3))
    with pytest.raises(ValueError):
        Intrinsics(0, 500, 0, 0)
    with pytest.raises(ValueError):
        Intrinsics(500, -1, 0, 0)


def test_correspondence():
    c = Correspondence((1, 2), (3, 4))
    assert np.array_equal(c.X, [1, 2, 3, 4])
    assert np.array_equal(c.x_h, [1, 2, 1])
    assert np.array_equal(c.xp_h, [3, 4, 1])
    assert Correspondence.from_vector(c.X) == c
    with pytest.raises(ValueError):
        Correspondence((np.nan, 0), (0, 0))
    with pytest.raises(ValueError):
        Correspondence((0, 0, 0), (0, 0))


def test_as_array():
    cs = [Correspondence((1, 2), (3, 4)), Correspondence((5, 6), (7, 8))]
    assert core.as_array(cs).shape == (2, 4)
    with pytest.raises(ValueError):
        core.as_array(np.zeros((3, 3)))


def test_noise_model():
    assert np.array_equal(NoiseModel(0.5).cov_X, 0.25 * np.eye(4))
    with pytest.raises(ValueError):
        NoiseModel(0.0)


@settings(max_examples=100, deadline=None)
@given(quats)
def test_quaternion_roundtrip(v):
    q = core.canonical_quat(v)
    R = quat_to_rot(q)
    assert np.allclose(R @ R.T, np.eye(3), atol=1e-12)
    assert np.linalg.det(R) == pytest.approx(1.0, abs=1e-12)
    q2 = rot_to_quat(R)
    assert q2[0] >= 0
    # q and -q are the same rotation; the gauge picks one
    assert np.allclose(q2, q, atol=1e-9) or (abs(q[0]) < 1e-9 and np.allclose(q2, -q, atol=1e-9))


def test_quat_to_rot_is_scale_invariant():
    q = core.axis_angle_to_quat([1, 2, 3], 0.7)
    assert np.allclose(quat_to_rot(3.0 * q), quat_to_rot(q))


def test_quat_to_rot_grad_matches_fd():
    q = np.array([0.9, 0.1, -0.3, 0.2])
    G = core.quat_to_rot_grad(q)
    h = 1e-6
    for k in range(4):
        e = np.eye(4)[k] * h
        fd = (quat_to_rot(q + e) - quat_to_rot(q - e)) / (2 * h)
        assert np.allclose(G[k], fd, atol=1e-8)


def test_fundamental_model_invariants():
    m = synth.default_motion()
    F = m.fundamental(synth.DEFAULT_K)
    FundamentalModel(F.ravel())
    with pytest.raises(ValueError):
        FundamentalModel(2 * F.ravel())
    with pytest.raises(ValueError):
        FundamentalModel((np.eye(3) / np.sqrt(3)).ravel())
    with pytest.raises(ValueError):
        FundamentalModel(F.ravel(), -np.eye(9))
    bad = np.zeros((9, 9))
    bad[0, 1] = 1.0
    with pytest.raises(ValueError):
        FundamentalModel(F.ravel(), bad)


def test_camera_motion_gauges():
    q = core.axis_angle_to_quat([0, 1, 0], 0.2)
    CameraMotion(q, [1, 0, 0])
    with pytest.raises(ValueError):
        CameraMotion(-q, [1, 0, 0])
    with pytest.raises(ValueError):
        CameraMotion(2 * q, [1, 0, 0])
    with pytest.raises(ValueError):
        CameraMotion(q, [2, 0, 0])
    m = CameraMotion.from_rt(quat_to_rot(q), [0, 0, 5])
    assert np.allclose(m.t, [0, 0, 1])
    assert m.p.shape == (7,)


def test_theta_zero_for_consistent_pair_identity_K():
    m = synth.default_motion()
    E = m.essential()
    f = (E / np.linalg.norm(E)).ravel()
    assert np.abs(theta_residual(f, m.q, m.t, Intrinsics.identity())).max() < 1e-12


def test_theta_zero_with_pixel_intrinsics():
    m = synth.default_motion()
    K = synth.DEFAULT_K
    f = m.fundamental(K).ravel()
    assert np.abs(theta_residual(f, m.q, m.t, K)).max() < 1e-10
    # the fitted scale absorbs any positive rescaling of f
    assert np.abs(theta_residual(7.3 * f, m.q, m.t, K)).max() < 1e-10


def test_theta_detects_rotation_perturbation():
    m = synth.default_motion()
    f = (m.essential() / np.linalg.norm(m.essential())).ravel()
    dq = core.axis_angle_to_quat([0, 0, 1], 1e-3)
    R = quat_to_rot(dq) @ m.R
    res = theta_residual(f, rot_to_quat(R), m.t, Intrinsics.identity())
    assert np.linalg.norm(res) > 1e-5
