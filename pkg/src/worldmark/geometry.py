"""SE(3) camera poses, trajectories and the trajectory text format.

Conventions used throughout the package:

* Camera frame is right-handed with +x right, +y down, +z forward.
* A :class:`Pose` maps camera coordinates to world coordinates, so its
  translation is the camera center in the world.
* Yaw-left is a rotation by +theta about -y; yaw-right is +theta about +y.
* Quaternions are stored (w, x, y, z) with w >= 0. The trajectory text
  format writes them in (qx, qy, qz, qw) order.
* Public angles are degrees, internal math is radians.
"""
from __future__ import annotations

import math
import os
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np


class TrajectoryFormatError(ValueError):
    """A trajectory file line could not be parsed."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class TrajectoryValidationError(ValueError):
    """Trajectory contents violate an invariant (ordering, length, rate)."""


def _canonical(w: float, x: float, y: float, z: float) -> tuple[float, float, float, float]:
    n = math.sqrt(w * w + x * x + y * y + z * z)
    if not math.isfinite(n) or n == 0.0:
        raise ValueError("quaternion must be finite and non-zero")
    if abs(n - 1.0) > 1e-15:
        w, x, y, z = w / n, x / n, y / n, z / n
    if w < 0.0:
        w, x, y, z = -w, -x, -y, -z
    return (w + 0.0, x + 0.0, y + 0.0, z + 0.0)


@dataclass(frozen=True)
class Rotation:
    """Unit quaternion (w, x, y, z), canonicalized to w >= 0."""

    w: float = 1.0
    x: float = 0.0
    y: float = 0.0
    z: float = 0.0

    def __post_init__(self):
        w, x, y, z = _canonical(float(self.w), float(self.x), float(self.y), float(self.z))
        object.__setattr__(self, "w", w)
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "z", z)

    @classmethod
    def identity(cls) -> Rotation:
        return cls(1.0, 0.0, 0.0, 0.0)

    @classmethod
    def from_axis_angle(cls, axis: Sequence[float], degrees: float) -> Rotation:
        a = np.asarray(axis, dtype=float)
        a = a / np.linalg.norm(a)
        half = math.radians(degrees) / 2.0
        s = math.sin(half)
        return cls(math.cos(half), a[0] * s, a[1] * s, a[2] * s)

    @classmethod
    def from_rotvec(cls, rotvec: Sequence[float]) -> Rotation:
        v = np.asarray(rotvec, dtype=float)
        angle = float(np.linalg.norm(v))
        if angle < 1e-300:
            return cls.identity()
        return cls.from_axis_angle(v / angle, math.degrees(angle))

    @classmethod
    def yaw_right(cls, degrees: float) -> Rotation:
        return cls.from_axis_angle((0.0, 1.0, 0.0), degrees)

    @classmethod
    def yaw_left(cls, degrees: float) -> Rotation:
        return cls.from_axis_angle((0.0, -1.0, 0.0), degrees)

    @classmethod
    def from_matrix(cls, m: np.ndarray) -> Rotation:
        m = np.asarray(m, dtype=float)
        tr = m[0, 0] + m[1, 1] + m[2, 2]
        if tr > 0:
            s = math.sqrt(tr + 1.0) * 2
            return cls(0.25 * s, (m[2, 1] - m[1, 2]) / s, (m[0, 2] - m[2, 0]) / s, (m[1, 0] - m[0, 1]) / s)
        if m[0, 0] > m[1, 1] and m[0, 0] > m[2, 2]:
            s = math.sqrt(1.0 + m[0, 0] - m[1, 1] - m[2, 2]) * 2
            return cls((m[2, 1] - m[1, 2]) / s, 0.25 * s, (m[0, 1] + m[1, 0]) / s, (m[0, 2] + m[2, 0]) / s)
        if m[1, 1] > m[2, 2]:
            s = math.sqrt(1.0 + m[1, 1] - m[0, 0] - m[2, 2]) * 2
            return cls((m[0, 2] - m[2, 0]) / s, (m[0, 1] + m[1, 0]) / s, 0.25 * s, (m[1, 2] + m[2, 1]) / s)
        s = math.sqrt(1.0 + m[2, 2] - m[0, 0] - m[1, 1]) * 2
        return cls((m[1, 0] - m[0, 1]) / s, (m[0, 2] + m[2, 0]) / s, (m[1, 2] + m[2, 1]) / s, 0.25 * s)

    def as_wxyz(self) -> np.ndarray:
        return np.array([self.w, self.x, self.y, self.z])

    def matrix(self) -> np.ndarray:
        w, x, y, z = self.w, self.x, self.y, self.z
        return np.array([
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ])

    def __mul__(self, other: Rotation) -> Rotation:
        w1, x1, y1, z1 = self.w, self.x, self.y, self.z
        w2, x2, y2, z2 = other.w, other.x, other.y, other.z
        return Rotation(
            w1 * w2 - x1 * x2 - y1 * y2 - z1 * z2,
            w1 * x2 + x1 * w2 + y1 * z2 - z1 * y2,
            w1 * y2 - x1 * z2 + y1 * w2 + z1 * x2,
            w1 * z2 + x1 * y2 - y1 * x2 + z1 * w2,
        )

    def inverse(self) -> Rotation:
        return Rotation(self.w, -self.x, -self.y, -self.z)

    def apply(self, v: Sequence[float]) -> np.ndarray:
        return self.matrix() @ np.asarray(v, dtype=float)

    def angle_deg(self) -> float:
        """Rotation angle in [0, 180]."""
        vec = math.sqrt(self.x * self.x + self.y * self.y + self.z * self.z)
        return math.degrees(2.0 * math.atan2(vec, abs(self.w)))


def geodesic_deg(a: Rotation, b: Rotation) -> float:
    """Angular distance on SO(3) in degrees.

    Equal to ``arccos((tr(Ra Rb^T) - 1) / 2)`` but evaluated through the
    relative quaternion with ``atan2``, which stays exact at 0 degrees where
    the trace form loses about half the significant digits.
    """
    # relative rotation a * b^-1, only its magnitude matters
    w = a.w * b.w + a.x * b.x + a.y * b.y + a.z * b.z
    x = -a.w * b.x + a.x * b.w - a.y * b.z + a.z * b.y
    y = -a.w * b.y + a.x * b.z + a.y * b.w - a.z * b.x
    z = -a.w * b.z - a.x * b.y + a.y * b.x + a.z * b.w
    angle = math.degrees(2.0 * math.atan2(math.sqrt(x * x + y * y + z * z), abs(w)))
    return min(max(angle, 0.0), 180.0)


def geodesic_deg_trace(a: Rotation, b: Rotation) -> float:
    """Trace form of :func:`geodesic_deg`, kept as a reference evaluation."""
    c = (np.trace(a.matrix() @ b.matrix().T) - 1.0) / 2.0
    return math.degrees(math.acos(min(1.0, max(-1.0, c))))


@dataclass(frozen=True)
class Pose:
    rotation: Rotation = field(default_factory=Rotation.identity)
    translation: tuple[float, float, float] = (0.0, 0.0, 0.0)
    timestamp: float = 0.0

    def __post_init__(self):
        t = tuple(float(v) + 0.0 for v in self.translation)
        if len(t) != 3 or not all(math.isfinite(v) for v in t):
            raise ValueError(f"translation must be 3 finite values, got {self.translation!r}")
        object.__setattr__(self, "translation", t)
        ts = float(self.timestamp)
        if not math.isfinite(ts) or ts < 0:
            raise ValueError(f"timestamp must be finite and >= 0, got {self.timestamp!r}")
        object.__setattr__(self, "timestamp", ts)

    @classmethod
    def identity(cls, timestamp: float = 0.0) -> Pose:
        return cls(Rotation.identity(), (0.0, 0.0, 0.0), timestamp)

    @property
    def t(self) -> np.ndarray:
        return np.array(self.translation)

    def matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.rotation.matrix()
        m[:3, 3] = self.translation
        return m

    def inverse(self) -> Pose:
        r_inv = self.rotation.inverse()
        return Pose(r_inv, tuple(-r_inv.apply(self.translation)), self.timestamp)

    def with_timestamp(self, timestamp: float) -> Pose:
        return Pose(self.rotation, self.translation, timestamp)


def compose(a: Pose, b: Pose) -> Pose:
    """``a ∘ b``: rotation Ra·Rb, translation Ra·tb + ta, timestamp of ``b``."""
    t = a.rotation.apply(b.translation) + np.asarray(a.translation)
    return Pose(a.rotation * b.rotation, tuple(t), b.timestamp)


def relative(a: Pose, b: Pose) -> Pose:
    """Pose of ``b`` expressed in the frame of ``a``."""
    return compose(a.inverse(), b)


@dataclass(frozen=True)
class Trajectory:
    poses: tuple[Pose, ...]
    frame_rate: float

    def __post_init__(self):
        poses = tuple(self.poses)
        object.__setattr__(self, "poses", poses)
        fr = float(self.frame_rate)
        if not math.isfinite(fr) or fr <= 0:
            raise TrajectoryValidationError(f"frame_rate must be > 0, got {self.frame_rate!r}")
        object.__setattr__(self, "frame_rate", fr)
        for i in range(1, len(poses)):
            if not poses[i].timestamp > poses[i - 1].timestamp:
                raise TrajectoryValidationError(
                    f"timestamps must be strictly increasing (pose {i}: "
                    f"{poses[i].timestamp!r} after {poses[i - 1].timestamp!r})")

    def __len__(self) -> int:
        return len(self.poses)

    def __getitem__(self, i):
        return self.poses[i]

    def __iter__(self):
        return iter(self.poses)

    @property
    def positions(self) -> np.ndarray:
        return np.array([p.translation for p in self.poses], dtype=float).reshape(-1, 3)

    @property
    def timestamps(self) -> np.ndarray:
        return np.array([p.timestamp for p in self.poses], dtype=float)

    @property
    def rotations(self) -> list[Rotation]:
        return [p.rotation for p in self.poses]

    def scaled(self, factor: float) -> Trajectory:
        """Same rotations, translations multiplied by ``factor``."""
        return Trajectory(
            tuple(Pose(p.rotation, tuple(factor * np.asarray(p.translation)), p.timestamp) for p in self.poses),
            self.frame_rate)

    def transformed(self, g: Pose) -> Trajectory:
        """Left-multiply every pose by ``g`` (change of world frame)."""
        return Trajectory(tuple(compose(g, p) for p in self.poses), self.frame_rate)

    def subsample(self, stride: int) -> Trajectory:
        return Trajectory(self.poses[::stride], self.frame_rate / stride)


def align_to_first(traj: Trajectory) -> Trajectory:
    """Express every pose relative to the first, which becomes the identity."""
    if len(traj) < 1:
        raise TrajectoryValidationError("cannot align an empty trajectory")
    return traj.transformed(traj.poses[0].inverse())


def resample_nearest(est: Trajectory, timestamps: Iterable[float]) -> Trajectory:
    """Pick, for each requested timestamp, the estimated pose closest in time.

    Timestamps of the returned poses are the requested ones.
    """
    ts = np.asarray(list(timestamps), dtype=float)
    src = est.timestamps
    idx = np.searchsorted(src, ts)
    idx = np.clip(idx, 1, len(src) - 1) if len(src) > 1 else np.zeros_like(idx)
    if len(src) > 1:
        left = src[idx - 1]
        right = src[idx]
        idx = np.where(np.abs(ts - left) <= np.abs(right - ts), idx - 1, idx)
    return Trajectory(tuple(est.poses[i].with_timestamp(t) for i, t in zip(idx, ts)), est.frame_rate)


# -- trajectory text format ---------------------------------------------------

def format_pose_line(p: Pose) -> str:
    r = p.rotation
    vals = (p.timestamp, *p.translation, r.x, r.y, r.z, r.w)
    return " ".join(repr(float(v)) for v in vals)


def dumps_trajectory(traj: Trajectory) -> str:
    return "".join(format_pose_line(p) + "\n" for p in traj.poses)


def loads_trajectory(text: str, frame_rate: float | None = None) -> Trajectory:
    """Parse ``timestamp tx ty tz qx qy qz qw`` lines.

    ``frame_rate`` defaults to the inverse of the median timestamp spacing
    (1 Hz for single-pose files).
    """
    poses = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        fields = line.split()
        if len(fields) != 8:
            raise TrajectoryFormatError(f"expected 8 fields, got {len(fields)}", lineno)
        try:
            ts, tx, ty, tz, qx, qy, qz, qw = (float(f) for f in fields)
        except ValueError as exc:
            raise TrajectoryFormatError(f"non-numeric field ({exc})", lineno) from None
        try:
            poses.append(Pose(Rotation(qw, qx, qy, qz), (tx, ty, tz), ts))
        except ValueError as exc:
            raise TrajectoryFormatError(str(exc), lineno) from None
    if frame_rate is None:
        if len(poses) >= 2:
            dts = np.diff([p.timestamp for p in poses])
            med = float(np.median(dts))
            frame_rate = 1.0 / med if med > 0 else 1.0
        else:
            frame_rate = 1.0
    return Trajectory(tuple(poses), frame_rate)


def save_trajectory(traj: Trajectory, path: str | os.PathLike) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write(dumps_trajectory(traj))


def load_trajectory(path: str | os.PathLike, frame_rate: float | None = None) -> Trajectory:
    with open(path, encoding="utf-8") as f:
        return loads_trajectory(f.read(), frame_rate)


# -- camera model --------------------------------------------------------------

@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError("focal lengths must be positive")
        if not (0 < self.cx < self.width and 0 < self.cy < self.height):
            raise ValueError("principal point must lie inside the image")

    def K(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])

    def project(self, points: np.ndarray) -> np.ndarray:
        """Pinhole projection of camera-frame points (..., 3) to pixels (..., 2)."""
        p = np.asarray(points, dtype=float)
        u = self.fx * p[..., 0] / p[..., 2] + self.cx
        v = self.fy * p[..., 1] / p[..., 2] + self.cy
        return np.stack([u, v], axis=-1)

    def to_dict(self) -> dict:
        return {"fx": self.fx, "fy": self.fy, "cx": self.cx, "cy": self.cy,
                "width": self.width, "height": self.height}

    @classmethod
    def from_dict(cls, d: dict) -> CameraIntrinsics:
        return cls(float(d["fx"]), float(d["fy"]), float(d["cx"]), float(d["cy"]),
                   int(d["width"]), int(d["height"]))
