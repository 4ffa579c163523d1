"""Per-model action-mapping adapters.

Each adapter turns a canonical :class:`ActionSequence` into one native
control payload. Wording, button names, call names and the 25-slot vector
layout below are this package's documented constants; deployments driving
real checkpoints are expected to override them.
"""
from __future__ import annotations

import json
import math
import os
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, ClassVar, Union

import numpy as np

from .actions import ActionParseError, ActionPrimitive, ActionSequence, Kind, format_seconds, infer_tier
from .geometry import CameraIntrinsics, Pose, Trajectory, dumps_trajectory, loads_trajectory
from .synth import CalibrationProfile, frame_bounds, profile_for, step_kinds, synthesize


class AdapterError(ValueError):
    pass


# -- JSON helpers ---------------------------------------------------------------

def _is_flat_number_list(v) -> bool:
    return isinstance(v, list) and all(isinstance(x, (int, float)) and not isinstance(x, bool) for x in v)


def dump_json(obj, indent: int = 0) -> str:
    """Stable pretty JSON; flat numeric lists stay on one line."""
    pad = "  " * indent
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f'{pad}  {json.dumps(k)}: {dump_json(v, indent + 1)}' for k, v in sorted(obj.items())]
        return "{\n" + ",\n".join(items) + f"\n{pad}}}"
    if isinstance(obj, list):
        if not obj:
            return "[]"
        if _is_flat_number_list(obj):
            return json.dumps(obj)
        items = [f"{pad}  {dump_json(v, indent + 1)}" for v in obj]
        return "[\n" + ",\n".join(items) + f"\n{pad}]"
    return json.dumps(obj)


# -- payload types --------------------------------------------------------------

@dataclass(frozen=True)
class CaptionPrompt:
    format: ClassVar[str] = "caption"
    text: str

    def to_dict(self) -> dict:
        return {"format": self.format, "text": self.text}

    @classmethod
    def from_dict(cls, d: dict) -> CaptionPrompt:
        return cls(d["text"])


@dataclass(frozen=True)
class PoseStream:
    format: ClassVar[str] = "pose_stream"
    trajectory: Trajectory
    stride: int = 1

    def __len__(self) -> int:
        return len(self.trajectory)


@dataclass(frozen=True)
class PluckerStream:
    """Per-frame poses plus intrinsics; ray maps are expanded on demand."""

    format: ClassVar[str] = "plucker"
    trajectory: Trajectory
    intrinsics: CameraIntrinsics
    pixel_offset: float = 0.5

    def __len__(self) -> int:
        return len(self.trajectory)

    def expand(self, frame: int) -> np.ndarray:
        """H×W×6 ray map (direction, moment) for one frame."""
        k = self.intrinsics
        u, v = np.meshgrid(np.arange(k.width) + self.pixel_offset,
                           np.arange(k.height) + self.pixel_offset)
        return plucker_rays(self.trajectory[frame], k, u, v)

    def expand_all(self) -> np.ndarray:
        return np.stack([self.expand(i) for i in range(len(self))])

    def to_dict(self) -> dict:
        return {
            "format": self.format,
            "intrinsics": self.intrinsics.to_dict(),
            "pixel_offset": self.pixel_offset,
            "frame_rate": self.trajectory.frame_rate,
            "poses": [_pose_row(p) for p in self.trajectory],
        }

    @classmethod
    def from_dict(cls, d: dict) -> PluckerStream:
        return cls(_traj_from_rows(d["poses"], d["frame_rate"]),
                   CameraIntrinsics.from_dict(d["intrinsics"]), d.get("pixel_offset", 0.5))


@dataclass(frozen=True)
class GamepadEvent:
    time: float
    button: str
    action: str  # "press" | "release"

    def to_dict(self) -> dict:
        return {"time": self.time, "button": self.button, "action": self.action}


@dataclass(frozen=True)
class GamepadScript:
    format: ClassVar[str] = "gamepad"
    events: tuple[GamepadEvent, ...]

    @property
    def duration(self) -> float:
        return max(e.time for e in self.events) if self.events else 0.0

    def to_dict(self) -> dict:
        return {"format": self.format, "events": [e.to_dict() for e in self.events]}

    @classmethod
    def from_dict(cls, d: dict) -> GamepadScript:
        return cls(tuple(GamepadEvent(float(e["time"]), e["button"], e["action"]) for e in d["events"]))


@dataclass(frozen=True)
class ActionCall:
    name: str
    start_frame: int
    end_frame: int
    args: dict = field(default_factory=dict, compare=True, hash=False)

    def to_dict(self) -> dict:
        return {"name": self.name, "args": dict(self.args),
                "start_frame": self.start_frame, "end_frame": self.end_frame}


@dataclass(frozen=True)
class ActionCallScript:
    format: ClassVar[str] = "action_calls"
    calls: tuple[ActionCall, ...]
    frame_rate: float

    def to_dict(self) -> dict:
        return {"format": self.format, "frame_rate": self.frame_rate,
                "calls": [c.to_dict() for c in self.calls]}

    @classmethod
    def from_dict(cls, d: dict) -> ActionCallScript:
        calls = tuple(ActionCall(c["name"], int(c["start_frame"]), int(c["end_frame"]), dict(c.get("args", {})))
                      for c in d["calls"])
        return cls(calls, float(d["frame_rate"]))


@dataclass(frozen=True, eq=False)
class ActionVectorStream:
    format: ClassVar[str] = "action_vectors"
    vectors: np.ndarray
    frame_rate: float

    def __post_init__(self):
        v = np.asarray(self.vectors, dtype=float)
        if v.ndim != 2 or v.shape[1] != ACTION_VECTOR_DIM:
            raise AdapterError(f"action vectors must be (n, {ACTION_VECTOR_DIM}), got {v.shape}")
        object.__setattr__(self, "vectors", v)

    def __eq__(self, other) -> bool:
        return (isinstance(other, ActionVectorStream) and self.frame_rate == other.frame_rate
                and np.array_equal(self.vectors, other.vectors))

    def __len__(self) -> int:
        return len(self.vectors)

    def to_dict(self) -> dict:
        return {"format": self.format, "frame_rate": self.frame_rate, "keys": list(ACTION_VECTOR_KEYS),
                "vectors": [[float(x) for x in row] for row in self.vectors]}

    @classmethod
    def from_dict(cls, d: dict) -> ActionVectorStream:
        return cls(np.array(d["vectors"], dtype=float).reshape(-1, ACTION_VECTOR_DIM), float(d["frame_rate"]))


NativeActionPayload = Union[CaptionPrompt, PoseStream, PluckerStream, GamepadScript,
                            ActionCallScript, ActionVectorStream]


def _pose_row(p: Pose) -> list[float]:
    r = p.rotation
    return [p.timestamp, *p.translation, r.x, r.y, r.z, r.w]


def _traj_from_rows(rows, frame_rate) -> Trajectory:
    text = "".join(" ".join(repr(float(v)) for v in row) + "\n" for row in rows)
    return loads_trajectory(text, frame_rate)


# -- caption (text keywords) ----------------------------------------------------

CAPTION_PHRASES = {
    Kind.FORWARD: "move forward",
    Kind.BACKWARD: "move backward",
    Kind.LEFT: "move to the left",
    Kind.RIGHT: "move to the right",
    Kind.YAW_LEFT: "turn the camera to the left",
    Kind.YAW_RIGHT: "turn the camera to the right",
}
_PHRASE_TO_KIND = {v: k for k, v in CAPTION_PHRASES.items()}


def to_caption(seq: ActionSequence) -> CaptionPrompt:
    if not seq.segments:
        raise AdapterError("empty sequence")
    sentences = []
    for i, seg in enumerate(seq.segments):
        secs = format_seconds(seg.duration)
        unit = "second" if seg.duration == 1 else "seconds"
        phrase = CAPTION_PHRASES[seg.kind]
        body = f"{phrase} for {secs} {unit}."
        sentences.append(body[0].upper() + body[1:] if i == 0 else f"Then {body}")
    return CaptionPrompt(" ".join(sentences))


_CAPTION_RE = re.compile(r"(?:^|\s)(?:Then )?([A-Za-z][a-z ]+?) for (\S+) seconds?\.")


def parse_caption(text: str, id="caption", custom: bool = True) -> ActionSequence:
    """Recover the action sequence from a :func:`to_caption` text."""
    segments = []
    consumed = 0
    for m in _CAPTION_RE.finditer(text):
        if text[consumed:m.start()].strip():
            raise ActionParseError(f"unrecognised caption text: {text[consumed:m.start()]!r}")
        phrase = m.group(1).lower()
        if phrase not in _PHRASE_TO_KIND:
            raise ActionParseError(f"unknown caption phrase {m.group(1)!r}")
        segments.append(ActionPrimitive(_PHRASE_TO_KIND[phrase], float(m.group(2))))
        consumed = m.end()
    if text[consumed:].strip() or not segments:
        raise ActionParseError(f"unrecognised caption text: {text!r}")
    tier = infer_tier(segments)
    if tier is None and not custom:
        raise ActionParseError("caption does not describe a tiered sequence")
    return ActionSequence(id, tuple(segments), tier)


# -- pose streams -----------------------------------------------------------------

def to_pose_stream(seq: ActionSequence, calib: CalibrationProfile, stride: int = 1) -> PoseStream:
    """Ground-truth poses, optionally keeping every ``stride``-th frame."""
    traj = synthesize(seq, calib)
    if stride < 1:
        raise AdapterError("stride must be >= 1")
    if stride >= len(traj):
        raise AdapterError(f"stride {stride} must be smaller than the trajectory length {len(traj)}")
    if stride > 1:
        traj = traj.subsample(stride)
    return PoseStream(traj, stride)


def plucker_rays(pose: Pose, intrinsics: CameraIntrinsics, u, v) -> np.ndarray:
    """Plücker rays ``(d, o × d)`` through pixel coordinates ``(u, v)``.

    ``u`` and ``v`` may be scalars or equally shaped arrays; the result has
    their shape plus a trailing axis of 6.
    """
    k = intrinsics
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    cam = np.stack([(u - k.cx) / k.fx, (v - k.cy) / k.fy, np.ones_like(u)], axis=-1)
    d = cam @ pose.rotation.matrix().T
    d = d / np.linalg.norm(d, axis=-1, keepdims=True)
    o = np.broadcast_to(np.asarray(pose.translation), d.shape)
    m = np.cross(o, d)
    return np.concatenate([d, m], axis=-1)


DEFAULT_PLUCKER_INTRINSICS = CameraIntrinsics(fx=320.0, fy=320.0, cx=320.0, cy=180.0, width=640, height=360)


def to_plucker(stream: PoseStream, intrinsics: CameraIntrinsics = DEFAULT_PLUCKER_INTRINSICS) -> PluckerStream:
    vals = (intrinsics.fx, intrinsics.fy, intrinsics.cx, intrinsics.cy)
    if not all(math.isfinite(x) for x in vals) or intrinsics.width <= 0 or intrinsics.height <= 0:
        raise AdapterError("degenerate intrinsics")
    return PluckerStream(stream.trajectory, intrinsics)


# -- gamepad ------------------------------------------------------------------------

GAMEPAD_BUTTONS = {
    Kind.FORWARD: "LS_UP",
    Kind.BACKWARD: "LS_DOWN",
    Kind.LEFT: "LS_LEFT",
    Kind.RIGHT: "LS_RIGHT",
    Kind.YAW_LEFT: "RS_LEFT",
    Kind.YAW_RIGHT: "RS_RIGHT",
}
_BUTTON_TO_KIND = {v: k for k, v in GAMEPAD_BUTTONS.items()}


def to_gamepad(seq: ActionSequence, calib: CalibrationProfile | None = None) -> GamepadScript:
    """One press/release pair per segment, times in seconds."""
    events = []
    t = 0.0
    for seg in seq.segments:
        start = t
        t += seg.duration
        button = GAMEPAD_BUTTONS[seg.kind]
        events.append(GamepadEvent(start, button, "press"))
        events.append(GamepadEvent(t, button, "release"))
    # at equal times a release precedes the next press
    events.sort(key=lambda e: (e.time, 0 if e.action == "release" else 1, e.button))
    return GamepadScript(tuple(events))


# -- action API calls -----------------------------------------------------------------

ACTION_CALL_NAMES = {
    Kind.FORWARD: "move_forward",
    Kind.BACKWARD: "move_back",
    Kind.LEFT: "move_left",
    Kind.RIGHT: "move_right",
    Kind.YAW_LEFT: "rotate_left",
    Kind.YAW_RIGHT: "rotate_right",
}
_CALL_TO_KIND = {v: k for k, v in ACTION_CALL_NAMES.items()}


def to_action_calls(seq: ActionSequence, calib: CalibrationProfile) -> ActionCallScript:
    calls = []
    bounds = frame_bounds([s.duration for s in seq.segments], calib.frame_rate)
    for seg, (start, end) in zip(seq.segments, bounds):
        args = {"yaw_rate": calib.yaw_rate} if seg.kind.is_rotation else {"speed": calib.linear_speed}
        calls.append(ActionCall(ACTION_CALL_NAMES[seg.kind], start, end, args))
    return ActionCallScript(tuple(calls), calib.frame_rate)


# -- 25-dim action vectors ------------------------------------------------------------

ACTION_VECTOR_KEYS = (
    "inventory", "esc",
    "hotbar.1", "hotbar.2", "hotbar.3", "hotbar.4", "hotbar.5", "hotbar.6", "hotbar.7", "hotbar.8", "hotbar.9",
    "forward", "back", "left", "right",
    "camera_yaw_left", "camera_yaw_right",
    "jump", "sneak", "sprint", "swap_hands", "attack", "use", "pick_item", "drop",
)
ACTION_VECTOR_DIM = len(ACTION_VECTOR_KEYS)
ACTION_VECTOR_INDEX = {
    Kind.FORWARD: ACTION_VECTOR_KEYS.index("forward"),
    Kind.BACKWARD: ACTION_VECTOR_KEYS.index("back"),
    Kind.LEFT: ACTION_VECTOR_KEYS.index("left"),
    Kind.RIGHT: ACTION_VECTOR_KEYS.index("right"),
    Kind.YAW_LEFT: ACTION_VECTOR_KEYS.index("camera_yaw_left"),
    Kind.YAW_RIGHT: ACTION_VECTOR_KEYS.index("camera_yaw_right"),
}
_INDEX_TO_KIND = {v: k for k, v in ACTION_VECTOR_INDEX.items()}


def to_action_vectors(seq: ActionSequence, calib: CalibrationProfile) -> ActionVectorStream:
    """One one-hot row per frame step (``round(duration * fps)`` rows)."""
    kinds = step_kinds(seq, calib.frame_rate)
    vectors = np.zeros((len(kinds), ACTION_VECTOR_DIM))
    for row, kind in enumerate(kinds):
        vectors[row, ACTION_VECTOR_INDEX[kind]] = 1.0
    return ActionVectorStream(vectors, calib.frame_rate)


# -- registry -------------------------------------------------------------------------

@dataclass(frozen=True)
class Adapter:
    model_id: str
    format: str
    build: Callable[[ActionSequence, CalibrationProfile], NativeActionPayload]
    third_person: bool = False


class AdapterRegistry:
    def __init__(self, adapters=()):
        self._adapters: dict[str, Adapter] = {}
        for a in adapters:
            self.register(a)

    def register(self, adapter: Adapter) -> None:
        if adapter.model_id in self._adapters:
            raise ValueError(f"adapter for {adapter.model_id!r} already registered")
        self._adapters[adapter.model_id] = adapter

    def __getitem__(self, model_id: str) -> Adapter:
        try:
            return self._adapters[model_id]
        except KeyError:
            known = ", ".join(sorted(self._adapters))
            raise KeyError(f"unknown model {model_id!r}; registered: {known}") from None

    def __contains__(self, model_id: str) -> bool:
        return model_id in self._adapters

    def __iter__(self):
        return iter(sorted(self._adapters))

    def ids(self) -> list[str]:
        return sorted(self._adapters)


def default_registry() -> AdapterRegistry:
    return AdapterRegistry([
        Adapter("yume", CaptionPrompt.format, lambda s, c: to_caption(s)),
        Adapter("hy-world", PoseStream.format, lambda s, c: to_pose_stream(s, c), third_person=True),
        Adapter("hy-gamecraft", PluckerStream.format, lambda s, c: to_plucker(to_pose_stream(s, c))),
        Adapter("genie3", GamepadScript.format, to_gamepad, third_person=True),
        Adapter("matrix-game", ActionCallScript.format, to_action_calls, third_person=True),
        Adapter("open-oasis", ActionVectorStream.format, to_action_vectors),
        Adapter("mock", ActionCallScript.format, to_action_calls, third_person=True),
    ])


DEFAULT_REGISTRY = default_registry()


def map_action(model_id: str, seq: ActionSequence, calib: CalibrationProfile | None = None,
               registry: AdapterRegistry | None = None) -> NativeActionPayload:
    """Dispatch ``seq`` to the adapter registered for ``model_id``."""
    reg = DEFAULT_REGISTRY if registry is None else registry
    adapter = reg[model_id]
    if calib is None:
        calib = profile_for(model_id)
    return adapter.build(seq, calib)


# -- serialization ----------------------------------------------------------------------

_JSON_TYPES = {cls.format: cls for cls in (CaptionPrompt, PluckerStream, GamepadScript,
                                           ActionCallScript, ActionVectorStream)}


def payload_filename(model_id: str, payload: NativeActionPayload) -> str:
    ext = "traj" if isinstance(payload, PoseStream) else "json"
    return f"action.{model_id}.{ext}"


def dumps_payload(payload: NativeActionPayload) -> str:
    if isinstance(payload, PoseStream):
        return dumps_trajectory(payload.trajectory)
    return dump_json(payload.to_dict()) + "\n"


def loads_payload(text: str, kind: str = "json", frame_rate: float | None = None) -> NativeActionPayload:
    if kind == "traj":
        return PoseStream(loads_trajectory(text, frame_rate))
    d = json.loads(text)
    try:
        cls = _JSON_TYPES[d["format"]]
    except KeyError:
        raise AdapterError(f"unknown payload format {d.get('format')!r}") from None
    return cls.from_dict(d)


def write_payload(payload: NativeActionPayload, case_dir: str | os.PathLike, model_id: str) -> Path:
    path = Path(case_dir) / payload_filename(model_id, payload)
    path.write_text(dumps_payload(payload), encoding="utf-8", newline="\n")
    return path


def read_payload(path: str | os.PathLike, frame_rate: float | None = None) -> NativeActionPayload:
    path = Path(path)
    kind = "traj" if path.suffix == ".traj" else "json"
    return loads_payload(path.read_text(encoding="utf-8"), kind, frame_rate)


def find_payload(case_dir: str | os.PathLike, model_id: str) -> Path:
    for ext in ("json", "traj"):
        p = Path(case_dir) / f"action.{model_id}.{ext}"
        if p.exists():
            return p
    raise FileNotFoundError(f"no action payload for {model_id!r} in {case_dir}")
