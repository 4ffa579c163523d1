"""Canonical action vocabulary, the action DSL and the standard sequence library.

Six primitives (W/S/A/D translation, L/R yaw) each carry a duration in
seconds. Sequences are written as ``"W:20,R:20"``.
"""
from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass
from enum import Enum
from typing import Iterable, Sequence


class ActionParseError(ValueError):
    """Malformed DSL text, unknown primitive or tier violation."""


class Kind(str, Enum):
    FORWARD = "W"
    BACKWARD = "S"
    LEFT = "A"
    RIGHT = "D"
    YAW_LEFT = "L"
    YAW_RIGHT = "R"

    @property
    def is_rotation(self) -> bool:
        return self in (Kind.YAW_LEFT, Kind.YAW_RIGHT)

    @property
    def axis(self) -> str:
        """Movement axis: forward, backward, lateral or yaw."""
        return _AXIS[self]


_AXIS = {
    Kind.FORWARD: "forward",
    Kind.BACKWARD: "backward",
    Kind.LEFT: "lateral",
    Kind.RIGHT: "lateral",
    Kind.YAW_LEFT: "yaw",
    Kind.YAW_RIGHT: "yaw",
}


class Tier(str, Enum):
    EASY = "Easy"
    MEDIUM = "Medium"
    HARD = "Hard"


# segments and total seconds per tier
TIER_RULES = {
    Tier.EASY: (1, 20.0),
    Tier.MEDIUM: (2, 40.0),
    Tier.HARD: (3, 60.0),
}


def format_seconds(value: float) -> str:
    """Shortest text that parses back to ``value`` (``20`` rather than ``20.0``)."""
    if float(value).is_integer():
        return str(int(value))
    return repr(float(value))


@dataclass(frozen=True)
class ActionPrimitive:
    kind: Kind
    duration: float

    def __post_init__(self):
        object.__setattr__(self, "kind", Kind(self.kind))
        d = float(self.duration)
        if not math.isfinite(d) or d <= 0:
            raise ActionParseError(f"duration must be positive and finite, got {self.duration!r}")
        object.__setattr__(self, "duration", d)

    def __str__(self) -> str:
        return f"{self.kind.value}:{format_seconds(self.duration)}"


def infer_tier(segments: Sequence[ActionPrimitive]) -> Tier | None:
    total = sum(s.duration for s in segments)
    for tier, (count, seconds) in TIER_RULES.items():
        if len(segments) == count and math.isclose(total, seconds, abs_tol=1e-9):
            return tier
    return None


@dataclass(frozen=True)
class ActionSequence:
    """Ordered primitives. ``tier`` is None only for relaxed custom sequences."""

    id: int | str
    segments: tuple[ActionPrimitive, ...]
    tier: Tier | None = None

    def __post_init__(self):
        segs = tuple(self.segments)
        object.__setattr__(self, "segments", segs)
        if not segs:
            raise ActionParseError("empty sequence")
        inferred = infer_tier(segs)
        if self.tier is None:
            object.__setattr__(self, "tier", inferred)
        else:
            tier = Tier(self.tier)
            if inferred is not tier:
                count, seconds = TIER_RULES[tier]
                raise ActionParseError(
                    f"tier {tier.value} needs {count} segment(s) totalling {seconds:g} s, "
                    f"got {len(segs)} totalling {self.duration:g} s")
            object.__setattr__(self, "tier", tier)

    @property
    def duration(self) -> float:
        return sum(s.duration for s in self.segments)

    @property
    def kinds(self) -> tuple[Kind, ...]:
        return tuple(s.kind for s in self.segments)

    @property
    def has_rotation(self) -> bool:
        return any(k.is_rotation for k in self.kinds)

    @property
    def rotation_only(self) -> bool:
        return all(k.is_rotation for k in self.kinds)

    def serialize(self) -> str:
        return ",".join(str(s) for s in self.segments)

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "tier": self.tier.value if self.tier else None,
            "segments": [{"kind": s.kind.value, "duration": s.duration} for s in self.segments],
            "dsl": self.serialize(),
        }


_SEGMENT_RE = re.compile(r"^\s*([A-Za-z]+)\s*:\s*([^,\s]+)\s*$")


def parse_sequence(text: str, id: int | str = "custom", custom: bool = False) -> ActionSequence:
    """Parse ``kind:seconds[,kind:seconds...]``.

    Sequences must satisfy a tier rule (1×20 s, 2×40 s, 3×60 s) unless
    ``custom`` is set.
    """
    if not text or not text.strip():
        raise ActionParseError("empty sequence")
    segments = []
    for pos, chunk in enumerate(text.split(","), start=1):
        m = _SEGMENT_RE.match(chunk)
        if not m:
            raise ActionParseError(f"segment {pos}: expected 'kind:seconds', got {chunk!r}")
        letter, secs = m.groups()
        try:
            kind = Kind(letter.upper())
        except ValueError:
            raise ActionParseError(
                f"segment {pos}: unknown action kind {letter!r} (expected one of W,S,A,D,L,R)") from None
        try:
            duration = float(secs)
        except ValueError:
            raise ActionParseError(f"segment {pos}: bad duration {secs!r}") from None
        if not math.isfinite(duration) or duration <= 0:
            raise ActionParseError(f"segment {pos}: duration must be positive, got {secs}")
        segments.append(ActionPrimitive(kind, duration))
    tier = infer_tier(segments)
    if tier is None and not custom:
        total = sum(s.duration for s in segments)
        raise ActionParseError(
            f"tier mismatch: {len(segments)} segment(s) totalling {total:g} s "
            "(Easy=1×20 s, Medium=2×40 s, Hard=3×60 s)")
    return ActionSequence(id, tuple(segments), tier)


# ids 1-4 are single translations, 5 a single rotation, 9-10 combine
# translation and rotation, 11 and 14 are cyclic; 6-8, 12, 13 and 15 fill
# out the tiers.
STANDARD_SEQUENCES: dict[int, str] = {
    1: "W:20",
    2: "S:20",
    3: "A:20",
    4: "D:20",
    5: "L:20",
    6: "W:20,L:20",
    7: "W:20,D:20",
    8: "A:20,W:20",
    9: "W:20,R:20",
    10: "R:20,W:20",
    11: "L:20,R:20,L:20",
    12: "W:20,L:20,W:20",
    13: "L:20,L:20,L:20",
    14: "A:20,D:20,A:20",
    15: "W:20,S:20,W:20",
}


@dataclass(frozen=True)
class ActionLibrary:
    sequences: tuple[ActionSequence, ...]

    def __post_init__(self):
        object.__setattr__(self, "sequences", tuple(self.sequences))
        ids = [s.id for s in self.sequences]
        if len(set(ids)) != len(ids):
            raise ValueError("duplicate sequence ids in library")

    def __getitem__(self, seq_id) -> ActionSequence:
        for s in self.sequences:
            if s.id == seq_id:
                return s
        raise KeyError(seq_id)

    def __contains__(self, seq_id) -> bool:
        return any(s.id == seq_id for s in self.sequences)

    def __iter__(self):
        return iter(self.sequences)

    def __len__(self) -> int:
        return len(self.sequences)

    @property
    def ids(self) -> list:
        return [s.id for s in self.sequences]

    def subset(self, ids: Iterable) -> ActionLibrary:
        wanted = set(ids)
        return ActionLibrary(tuple(s for s in self.sequences if s.id in wanted))

    def to_json(self) -> str:
        return json.dumps([s.to_dict() for s in self.sequences], indent=2) + "\n"

    @classmethod
    def from_json(cls, text: str) -> ActionLibrary:
        out = []
        for entry in json.loads(text):
            seq = parse_sequence(entry["dsl"], id=entry["id"], custom=entry.get("tier") is None)
            out.append(seq)
        return cls(tuple(out))


def standard_library() -> ActionLibrary:
    return ActionLibrary(tuple(parse_sequence(text, id=i) for i, text in STANDARD_SEQUENCES.items()))


@dataclass(frozen=True)
class SceneConstraintReport:
    """Which translation axes a scene makes implausible."""

    forward_blocked: bool = False
    backward_blocked: bool = False
    lateral_blocked: bool = False
    rationale: str = ""

    def blocked_axes(self) -> set[str]:
        axes = set()
        if self.forward_blocked:
            axes.add("forward")
        if self.backward_blocked:
            axes.add("backward")
        if self.lateral_blocked:
            axes.add("lateral")
        return axes

    def to_dict(self) -> dict:
        return {"forward_blocked": self.forward_blocked, "backward_blocked": self.backward_blocked,
                "lateral_blocked": self.lateral_blocked, "rationale": self.rationale}


def _rotation_fraction(seq: ActionSequence) -> float:
    return sum(s.duration for s in seq.segments if s.kind.is_rotation) / seq.duration


def rotation_first_order(library: ActionLibrary) -> list:
    """Library ids ordered by share of rotation, ties kept in library order."""
    order = sorted(enumerate(library), key=lambda item: (-_rotation_fraction(item[1]), item[0]))
    return [s.id for _, s in order]


def filter_actions(report: SceneConstraintReport, library: ActionLibrary) -> list:
    """Ids of the sequences whose movement axes are all unobstructed.

    Never returns an empty list: when nothing survives, the sequence with the
    largest share of rotation is kept.
    """
    if len(library) == 0:
        raise ValueError("empty action library")
    blocked = report.blocked_axes()
    kept = [s.id for s in library if not any(k.axis in blocked for k in s.kinds)]
    if not kept:
        kept = [rotation_first_order(library)[0]]
    return kept
