"""Ground-truth camera trajectories from action sequences.

Motion is piecewise constant: each frame step is either a translation at
``linear_speed`` along the current heading's local axis or a yaw at
``yaw_rate``. Segment boundaries are snapped to frames by rounding the
cumulative segment end times, so every consumer (synthesis, adapters, mock
interpreters) derives the same step schedule.
"""
from __future__ import annotations

import json
import math
import os
from dataclasses import asdict, dataclass
from typing import Iterable, Sequence

import numpy as np

from .actions import ActionSequence, Kind
from .geometry import Pose, Rotation, Trajectory


@dataclass(frozen=True)
class CalibrationProfile:
    model_id: str
    linear_speed: float  # m/s
    yaw_rate: float  # deg/s
    frame_rate: float  # Hz

    def __post_init__(self):
        for name in ("linear_speed", "yaw_rate", "frame_rate"):
            v = float(getattr(self, name))
            if not math.isfinite(v) or v <= 0:
                raise ValueError(f"{name} must be positive and finite, got {getattr(self, name)!r}")
            object.__setattr__(self, name, v)

    @property
    def step_length(self) -> float:
        """Metres moved per translating frame."""
        return self.linear_speed / self.frame_rate

    @property
    def step_yaw(self) -> float:
        """Degrees turned per rotating frame."""
        return self.yaw_rate / self.frame_rate

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> CalibrationProfile:
        return cls(d["model_id"], d["linear_speed"], d["yaw_rate"], d["frame_rate"])


# Placeholder defaults: 1 m/s and 9 deg/s everywhere, frame rates per model.
# Re-measure against real checkpoints before trusting absolute numbers.
DEFAULT_PROFILES: dict[str, CalibrationProfile] = {
    p.model_id: p
    for p in (
        CalibrationProfile("mock", 1.0, 9.0, 16.0),
        CalibrationProfile("yume", 1.0, 9.0, 16.0),
        CalibrationProfile("hy-world", 1.0, 9.0, 24.0),
        CalibrationProfile("hy-gamecraft", 1.0, 9.0, 25.0),
        CalibrationProfile("genie3", 1.0, 9.0, 24.0),
        CalibrationProfile("matrix-game", 1.0, 9.0, 16.0),
        CalibrationProfile("open-oasis", 1.0, 9.0, 20.0),
    )
}

_registry: dict[str, CalibrationProfile] = dict(DEFAULT_PROFILES)


class UnknownModelError(KeyError):
    def __str__(self) -> str:
        return str(self.args[0]) if self.args else "unknown model"


def profile_for(model_id: str, registry: dict[str, CalibrationProfile] | None = None) -> CalibrationProfile:
    reg = _registry if registry is None else registry
    try:
        return reg[model_id]
    except KeyError:
        known = ", ".join(sorted(reg))
        raise UnknownModelError(f"no calibration profile for {model_id!r}; known: {known}") from None


def known_profiles() -> dict[str, CalibrationProfile]:
    return dict(_registry)


def load_calibration(path: str | os.PathLike) -> dict[str, CalibrationProfile]:
    """Read ``{model_id: {linear_speed, yaw_rate, frame_rate}}`` from JSON."""
    with open(path, encoding="utf-8") as f:
        data = json.load(f)
    return parse_calibration(data)


def parse_calibration(data: dict) -> dict[str, CalibrationProfile]:
    out = {}
    for model_id, v in data.items():
        if isinstance(v, (list, tuple)):
            speed, yaw, fps = v
        else:
            speed, yaw, fps = v["linear_speed"], v["yaw_rate"], v["frame_rate"]
        out[model_id] = CalibrationProfile(model_id, speed, yaw, fps)
    return out


def register_profiles(profiles: dict[str, CalibrationProfile]) -> None:
    """Add or override profiles in the process-wide registry."""
    _registry.update(profiles)


def reset_profiles() -> None:
    _registry.clear()
    _registry.update(DEFAULT_PROFILES)


def frame_bounds(durations: Sequence[float], frame_rate: float) -> list[tuple[int, int]]:
    """Half-open step ranges ``[start, end)`` for consecutive segments."""
    bounds = []
    t = 0.0
    start = 0
    for d in durations:
        t += d
        end = int(math.floor(t * frame_rate + 0.5))
        bounds.append((start, end))
        start = end
    return bounds


def step_kinds(seq: ActionSequence, frame_rate: float) -> list[Kind]:
    """Primitive driving each frame step; ``len == round(duration * fps)``."""
    kinds: list[Kind] = []
    for seg, (start, end) in zip(seq.segments, frame_bounds([s.duration for s in seq.segments], frame_rate)):
        kinds.extend([seg.kind] * (end - start))
    return kinds


_LOCAL_DIRECTION = {
    Kind.FORWARD: np.array([0.0, 0.0, 1.0]),
    Kind.BACKWARD: np.array([0.0, 0.0, -1.0]),
    Kind.RIGHT: np.array([1.0, 0.0, 0.0]),
    Kind.LEFT: np.array([-1.0, 0.0, 0.0]),
}


def integrate_steps(kinds: Iterable[Kind], calib: CalibrationProfile) -> Trajectory:
    """Explicit Euler integration of a step schedule from the identity pose."""
    dt = 1.0 / calib.frame_rate
    yaw_l = Rotation.yaw_left(calib.yaw_rate * dt)
    yaw_r = Rotation.yaw_right(calib.yaw_rate * dt)
    step = calib.linear_speed * dt
    rot = Rotation.identity()
    pos = np.zeros(3)
    poses = [Pose(rot, (0.0, 0.0, 0.0), 0.0)]
    for k, kind in enumerate(kinds, start=1):
        if kind is Kind.YAW_LEFT:
            rot = rot * yaw_l
        elif kind is Kind.YAW_RIGHT:
            rot = rot * yaw_r
        else:
            pos = pos + step * rot.apply(_LOCAL_DIRECTION[kind])
        poses.append(Pose(rot, tuple(pos), k * dt))
    return Trajectory(tuple(poses), calib.frame_rate)


def synthesize(seq: ActionSequence, calib: CalibrationProfile) -> Trajectory:
    """Ground-truth trajectory with ``round(duration * fps) + 1`` poses."""
    return integrate_steps(step_kinds(seq, calib.frame_rate), calib)
