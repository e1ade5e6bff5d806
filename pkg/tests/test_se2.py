"""Pose algebra tests against a homogeneous-matrix oracle."""

import math
import random

import numpy as np
import pytest

from graspassist.se2 import (
    Pose2,
    angle_diff,
    compose_many,
    inverse_many,
    wrap_angle,
    wrap_angles,
)


def _homogeneous(pose: Pose2) -> np.ndarray:
    c, s = math.cos(pose.theta), math.sin(pose.theta)
    return np.array([[c, -s, pose.x], [s, c, pose.y], [0.0, 0.0, 1.0]])


def _pose_close(a: Pose2, b: Pose2, tol=1e-9) -> bool:
    return (
        abs(a.x - b.x) <= tol
        and abs(a.y - b.y) <= tol
        and abs(angle_diff(a.theta, b.theta)) <= tol
    )


def _random_pose(rng: random.Random) -> Pose2:
    return Pose2(rng.uniform(-200, 200), rng.uniform(-200, 200), rng.uniform(-10, 10))


def test_wrap_angle_examples():
    assert wrap_angle(3 * math.pi) == pytest.approx(-math.pi)
    assert wrap_angle(-math.pi - 1e-9) == pytest.approx(math.pi - 1e-9, abs=1e-15)
    assert wrap_angle(0.0) == 0.0
    # interval is half-open: -pi stays, +pi maps down
    assert wrap_angle(-math.pi) == -math.pi
    assert wrap_angle(math.pi) == -math.pi


def test_wrap_angle_matches_mod_oracle():
    rng = random.Random(7)
    for _ in range(1000):
        t = rng.uniform(-50, 50)
        w = wrap_angle(t)
        assert -math.pi <= w < math.pi
        # same residue class mod 2*pi
        assert math.isclose(math.fmod(w - t, 2 * math.pi), 0.0, abs_tol=1e-9) or \
            math.isclose(abs(math.fmod(w - t, 2 * math.pi)), 2 * math.pi, rel_tol=1e-9)


def test_wrap_angle_idempotent():
    rng = random.Random(3)
    for _ in range(200):
        w = wrap_angle(rng.uniform(-50, 50))
        assert wrap_angle(w) == w


def test_wrap_angle_rejects_non_finite():
    for bad in (math.inf, -math.inf, math.nan):
        with pytest.raises(ValueError):
            wrap_angle(bad)


def test_compose_example():
    a = Pose2(1, 0, math.pi / 2)
    b = Pose2(1, 0, 0)
    c = a.compose(b)
    assert _pose_close(c, Pose2(1, 1, math.pi / 2))


def test_inverse_example():
    a = Pose2(1, 0, math.pi / 2)
    inv = a.inverse()
    # value from the matrix-inverse oracle; also forced by inv(a) ∘ a = identity
    m = np.linalg.inv(_homogeneous(a))
    assert _pose_close(inv, Pose2(m[0, 2], m[1, 2], math.atan2(m[1, 0], m[0, 0])))
    assert _pose_close(inv, Pose2(0, 1, -math.pi / 2))
    assert _pose_close(inv.compose(a), Pose2.identity(), 1e-12)
    assert _pose_close(a.inverse().inverse(), a, 1e-12)


def test_compose_matches_matrix_oracle():
    rng = random.Random(11)
    for _ in range(300):
        a, b = _random_pose(rng), _random_pose(rng)
        got = a.compose(b)
        m = _homogeneous(a) @ _homogeneous(b)
        assert got.x == pytest.approx(m[0, 2], abs=1e-9)
        assert got.y == pytest.approx(m[1, 2], abs=1e-9)
        assert abs(angle_diff(got.theta, math.atan2(m[1, 0], m[0, 0]))) < 1e-9


def test_inverse_matches_matrix_oracle():
    rng = random.Random(13)
    for _ in range(300):
        a = _random_pose(rng)
        got = a.inverse()
        m = np.linalg.inv(_homogeneous(a))
        assert got.x == pytest.approx(m[0, 2], abs=1e-9)
        assert got.y == pytest.approx(m[1, 2], abs=1e-9)
        assert abs(angle_diff(got.theta, math.atan2(m[1, 0], m[0, 0]))) < 1e-9


def test_group_laws_hold_on_random_poses():
    rng = random.Random(17)
    ident = Pose2.identity()
    for _ in range(1000):
        a, b, c = _random_pose(rng), _random_pose(rng), _random_pose(rng)
        assert _pose_close(a.compose(b).compose(c), a.compose(b.compose(c)), 1e-9)
        assert _pose_close(a.compose(ident), a, 1e-9)
        assert _pose_close(ident.compose(a), a, 1e-9)
        assert _pose_close(a.compose(a.inverse()), ident, 1e-9)
        assert _pose_close(a.inverse().compose(a), ident, 1e-9)


def test_theta_always_stored_wrapped():
    rng = random.Random(19)
    for _ in range(200):
        p = Pose2(0, 0, rng.uniform(-40, 40))
        assert -math.pi <= p.theta < math.pi


def test_transform_point_matches_compose():
    a = Pose2(3, -2, 0.7)
    pt = a.transform_point([5, 1])
    via = a.compose(Pose2(5, 1, 0))
    assert pt[0] == pytest.approx(via.x)
    assert pt[1] == pytest.approx(via.y)


def test_batched_ops_match_scalar():
    rng = random.Random(23)
    poses_a = [_random_pose(rng) for _ in range(50)]
    poses_b = [_random_pose(rng) for _ in range(50)]
    arr_a = np.array([p.as_vector() for p in poses_a])
    arr_b = np.array([p.as_vector() for p in poses_b])
    comp = compose_many(arr_a, arr_b)
    inv = inverse_many(arr_a)
    for i, (a, b) in enumerate(zip(poses_a, poses_b)):
        assert _pose_close(Pose2.from_vector(comp[i]), a.compose(b), 1e-9)
        assert _pose_close(Pose2.from_vector(inv[i]), a.inverse(), 1e-9)
    assert np.all(wrap_angles(comp[:, 2]) == comp[:, 2])
