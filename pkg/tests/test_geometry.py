import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from worldmark.geometry import (
    CameraIntrinsics,
    Pose,
    Rotation,
    Trajectory,
    TrajectoryFormatError,
    TrajectoryValidationError,
    align_to_first,
    compose,
    dumps_trajectory,
    geodesic_deg,
    geodesic_deg_trace,
    load_trajectory,
    loads_trajectory,
    relative,
    resample_nearest,
    save_trajectory,
)

import oracles

unit = st.floats(-1.0, 1.0, allow_nan=False)
quats = st.tuples(unit, unit, unit, unit).filter(lambda q: sum(c * c for c in q) > 1e-3)
coords = st.floats(-50.0, 50.0, allow_nan=False)
vec3 = st.tuples(coords, coords, coords)


def rot(q):
    return Rotation(*q)


def random_trajectory(rng, n=20, fps=10.0):
    poses = []
    for k in range(n):
        r = Rotation.from_rotvec(rng.normal(0, 1.0, 3))
        poses.append(Pose(r, tuple(rng.normal(0, 5.0, 3)), k / fps))
    return Trajectory(tuple(poses), fps)


def test_identity_compose():
    p = compose(Pose.identity(), Pose.identity())
    assert np.allclose(p.matrix(), np.eye(4))


def test_yaw_then_forward_lands_on_plus_x():
    yaw = Pose(Rotation.yaw_right(90.0), (0.0, 0.0, 0.0))
    fwd = Pose(Rotation.identity(), (0.0, 0.0, 1.0))
    p = compose(yaw, fwd)
    assert np.allclose(p.t, [1.0, 0.0, 0.0], atol=1e-12)
    # optical axis now points along +x
    assert np.allclose(p.rotation.apply([0, 0, 1]), [1.0, 0.0, 0.0], atol=1e-12)


def test_yaw_left_turns_towards_minus_x():
    assert np.allclose(Rotation.yaw_left(90.0).apply([0, 0, 1]), [-1.0, 0.0, 0.0], atol=1e-12)


@given(quats, vec3)
def test_compose_with_inverse_is_identity(q, t):
    a = Pose(rot(q), t)
    assert np.allclose(compose(a, a.inverse()).matrix(), np.eye(4), atol=1e-9)


@given(quats)
def test_quaternion_canonical_and_unit(q):
    r = rot(q)
    assert r.w >= 0
    assert abs(np.linalg.norm(r.as_wxyz()) - 1.0) < 1e-12
    assert np.allclose(r.matrix(), oracles.quat_to_matrix(*q), atol=1e-12)


@given(quats, quats)
def test_rotation_product_matches_matrix_product(a, b):
    ra, rb = rot(a), rot(b)
    assert np.allclose((ra * rb).matrix(), ra.matrix() @ rb.matrix(), atol=1e-12)


@pytest.mark.parametrize("a, b, expected", [
    (Rotation.identity(), Rotation.identity(), 0.0),
    (Rotation.identity(), Rotation.yaw_right(90.0), 90.0),
    (Rotation.yaw_right(10.0), Rotation.yaw_right(-10.0), 20.0),
])
def test_geodesic_examples(a, b, expected):
    assert abs(geodesic_deg(a, b) - expected) < 1e-6


def test_geodesic_exact_at_identity():
    assert geodesic_deg(Rotation.identity(), Rotation.identity()) == 0.0


@given(quats, quats)
def test_geodesic_matches_trace_oracle(a, b):
    ra, rb = rot(a), rot(b)
    got = geodesic_deg(ra, rb)
    ref = oracles.geodesic_trace_deg(ra.matrix().tolist(), rb.matrix().tolist())
    # the arccos form loses precision near 0 and 180 degrees
    assert abs(got - ref) < 1e-4
    assert 0.0 <= got <= 180.0
    assert abs(got - geodesic_deg(rb, ra)) < 1e-9


def test_align_identity_start_unchanged():
    rng = np.random.default_rng(1)
    traj = align_to_first(random_trajectory(rng))
    again = align_to_first(traj)
    assert np.allclose(again.positions, traj.positions, atol=1e-12)


def test_align_removes_constant_offset():
    base = Trajectory(tuple(Pose(Rotation.identity(), (0.0, 0.0, float(k)), k * 0.1) for k in range(5)), 10.0)
    g = Pose(Rotation.yaw_right(30.0), (3.0, -1.0, 2.0))
    moved = base.transformed(g)
    aligned = align_to_first(moved)
    assert np.allclose(aligned.positions, base.positions, atol=1e-12)
    assert np.allclose(aligned[0].matrix(), np.eye(4), atol=1e-12)


def test_alignment_preserves_relative_poses_property():
    rng = np.random.default_rng(7)
    for _ in range(100):
        traj = random_trajectory(rng, n=6)
        aligned = align_to_first(traj)
        i, j = rng.choice(6, 2, replace=False)
        before = relative(traj[i], traj[j]).matrix()
        after = relative(aligned[i], aligned[j]).matrix()
        assert np.allclose(before, after, atol=1e-9)


def test_timestamps_must_increase():
    p0 = Pose.identity(0.0)
    with pytest.raises(TrajectoryValidationError):
        Trajectory((p0, p0), 10.0)


def test_single_line_file():
    traj = loads_trajectory("0.0 0 0 0 0 0 0 1\n", frame_rate=10.0)
    assert len(traj) == 1
    assert traj[0].timestamp == 0.0
    assert np.allclose(traj[0].matrix(), np.eye(4))


def test_seven_fields_names_line_one():
    with pytest.raises(TrajectoryFormatError, match="line 1"):
        loads_trajectory("0.0 0 0 0 0 0 1\n", frame_rate=10.0)


def test_comments_and_frame_rate_inference():
    text = "# ts tx ty tz qx qy qz qw\n0 0 0 0 0 0 0 1\n0.25 0 0 1 0 0 0 1\n0.5 0 0 2 0 0 0 1\n"
    traj = loads_trajectory(text)
    assert traj.frame_rate == pytest.approx(4.0)
    assert np.allclose(traj.positions[:, 2], [0, 1, 2])


def test_file_round_trip_1000_poses(tmp_path):
    rng = np.random.default_rng(3)
    traj = random_trajectory(rng, n=1000, fps=30.0)
    path = tmp_path / "t.traj"
    save_trajectory(traj, path)
    back = load_trajectory(path, 30.0)
    assert np.allclose(back.positions, traj.positions, atol=1e-9)
    for a, b in zip(traj.rotations, back.rotations):
        assert np.allclose(a.as_wxyz(), b.as_wxyz(), atol=1e-9)
    assert dumps_trajectory(back) == path.read_text()


def test_resample_nearest_picks_closest_timestamp():
    est = Trajectory(tuple(Pose(Rotation.identity(), (float(k), 0.0, 0.0), k * 0.5) for k in range(5)), 2.0)
    out = resample_nearest(est, [0.0, 0.6, 1.9])
    assert list(out.positions[:, 0]) == [0.0, 1.0, 4.0]
    assert list(out.timestamps) == [0.0, 0.6, 1.9]


def test_intrinsics_project_and_validation():
    k = CameraIntrinsics(100.0, 100.0, 64.0, 64.0, 128, 128)
    assert np.allclose(k.project(np.array([[0.0, 0.0, 2.0], [1.0, -1.0, 2.0]])), [[64, 64], [114, 14]])
    with pytest.raises(ValueError):
        CameraIntrinsics(0.0, 100.0, 64.0, 64.0, 128, 128)
    assert CameraIntrinsics.from_dict(k.to_dict()) == k


def test_trace_variant_matches_on_moderate_angles():
    for deg in (5.0, 45.0, 120.0):
        r = Rotation.from_axis_angle([1.0, 2.0, 3.0], deg)
        assert abs(geodesic_deg_trace(Rotation.identity(), r) - deg) < 1e-6
        assert abs(r.angle_deg() - deg) < 1e-9
