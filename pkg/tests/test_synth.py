import json
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from worldmark.actions import parse_sequence, standard_library
from worldmark.geometry import Rotation, geodesic_deg
from worldmark.metrics import translation_error
from worldmark.synth import (
    CalibrationProfile,
    UnknownModelError,
    frame_bounds,
    known_profiles,
    load_calibration,
    parse_calibration,
    profile_for,
    register_profiles,
    reset_profiles,
    step_kinds,
    synthesize,
)

LIB = standard_library()


def cal(speed=1.0, yaw=9.0, fps=16.0):
    return CalibrationProfile("t", speed, yaw, fps)


def test_straight_line_closed_form():
    traj = synthesize(parse_sequence("W:20"), cal(fps=10.0))
    assert len(traj) == 201
    assert np.allclose(traj[-1].t, [0.0, 0.0, 20.0], atol=1e-9)
    assert all(geodesic_deg(r, Rotation.identity()) == 0.0 for r in traj.rotations)
    assert np.allclose(traj.timestamps, np.arange(201) / 10.0)


def test_pure_yaw_integrates_linearly():
    traj = synthesize(parse_sequence("L:20"), cal(yaw=4.5))
    assert abs(geodesic_deg(traj[-1].rotation, Rotation.yaw_left(90.0))) < 1e-9
    assert np.all(traj.positions == 0.0)


def test_turn_then_walk_two_phase():
    traj = synthesize(parse_sequence("L:10,W:10", custom=True), cal(yaw=9.0))
    assert abs(geodesic_deg(traj[-1].rotation, Rotation.yaw_left(90.0))) < 1e-3
    assert np.allclose(traj[-1].t, [-10.0, 0.0, 0.0], atol=1e-3)
    assert abs(np.linalg.norm(traj[-1].t) - 10.0) < 1e-3


@pytest.mark.parametrize("model", sorted(known_profiles()))
def test_length_invariant_all_library(model):
    c = profile_for(model)
    for seq in LIB:
        assert len(synthesize(seq, c)) == round(seq.duration * c.frame_rate) + 1


def test_panorama_closes_at_360():
    seq = LIB[13]
    c = cal(yaw=6.0, fps=16.0)
    final = synthesize(seq, c)[-1].rotation
    assert geodesic_deg(final, Rotation.identity()) < c.yaw_rate / c.frame_rate


@given(st.integers(1, 60), st.sampled_from([10.0, 16.0, 24.0, 25.0, 30.0]), st.floats(0.1, 5.0))
def test_reversibility(t, fps, speed):
    traj = synthesize(parse_sequence(f"W:{t},S:{t}", custom=True), cal(speed=speed, fps=fps))
    assert np.linalg.norm(traj[-1].t) <= speed / fps + 1e-9


@given(st.lists(st.integers(1, 400).map(lambda n: n / 8), min_size=1, max_size=5),
       st.sampled_from([10.0, 16.0, 20.0, 24.0, 25.0]))
def test_frame_bounds_contiguous(durs, fps):
    bounds = frame_bounds(durs, fps)
    assert bounds[0][0] == 0
    assert all(a[1] == b[0] for a, b in zip(bounds, bounds[1:]))
    assert bounds[-1][1] == math.floor(sum(durs) * fps + 0.5)


def test_step_kinds_length():
    assert len(step_kinds(LIB[12], 25.0)) == 1500


def test_self_error_zero_and_scaled_copy():
    for seq in LIB:
        gt = synthesize(seq, profile_for("mock"))
        assert translation_error(gt, gt) == 0.0
        assert translation_error(gt, gt.scaled(2.0)) < 1e-9


def test_profile_lookup():
    assert profile_for("mock") == CalibrationProfile("mock", 1.0, 9.0, 16.0)
    with pytest.raises(UnknownModelError, match="mock"):
        profile_for("foo")


@pytest.mark.parametrize("bad", [dict(linear_speed=0.0), dict(yaw_rate=-1.0), dict(frame_rate=float("nan"))])
def test_profile_invariants(bad):
    kw = dict(model_id="x", linear_speed=1.0, yaw_rate=9.0, frame_rate=16.0) | bad
    with pytest.raises(ValueError):
        CalibrationProfile(**kw)


def test_calibration_file(tmp_path):
    path = tmp_path / "cal.json"
    path.write_text(json.dumps({"mock": [2.0, 6.0, 10.0], "foo": {"linear_speed": 0.5, "yaw_rate": 3.0,
                                                                   "frame_rate": 30.0}}))
    profiles = load_calibration(path)
    assert profiles["mock"].linear_speed == 2.0
    assert profiles["foo"].frame_rate == 30.0
    try:
        register_profiles(profiles)
        assert profile_for("foo").yaw_rate == 3.0
    finally:
        reset_profiles()
    with pytest.raises(UnknownModelError):
        profile_for("foo")
    with pytest.raises(ValueError):
        parse_calibration({"bad": [1.0, 2.0]})
