"""Control-alignment, reprojection, visual-quality and rank-correlation metrics."""
from __future__ import annotations

import hashlib
import json
import math
import os
import socket
import subprocess
import threading
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Protocol, Sequence

import numpy as np

from .geometry import CameraIntrinsics, Trajectory, align_to_first, geodesic_deg

# Column order of the leaderboard tables.
METRIC_NAMES = (
    "aesthetic", "imaging", "translation_error", "rotation_error",
    "reprojection_error", "state", "content", "style",
)
LOWER_IS_BETTER = {"translation_error", "rotation_error", "reprojection_error"}
METRIC_LABELS = {
    "aesthetic": "Aesthetic↑",
    "imaging": "Imaging↑",
    "translation_error": "TransErr↓",
    "rotation_error": "RotErr↓",
    "reprojection_error": "ReprojErr↓",
    "state": "State↑",
    "content": "Content↑",
    "style": "Style↑",
}

DEGENERATE_SCALE_EPS = 1e-12


class MetricError(ValueError):
    pass


# -- control alignment ------------------------------------------------------------

def _check_pair(gt: Trajectory, est: Trajectory) -> None:
    if len(gt) != len(est):
        raise MetricError(f"trajectory length mismatch: {len(gt)} vs {len(est)}")
    if len(gt) < 2:
        raise MetricError("trajectories need at least 2 poses")


@dataclass(frozen=True)
class ScaleFit:
    scale: float
    degenerate: bool


def ls_scale(gt: Trajectory, est: Trajectory) -> ScaleFit:
    """Global least-squares scale mapping estimated positions onto ground truth."""
    _check_pair(gt, est)
    t_gt = gt.positions
    t = est.positions
    denom = float(np.sum(t * t))
    if denom < DEGENERATE_SCALE_EPS:
        return ScaleFit(0.0, True)
    return ScaleFit(float(np.sum(t * t_gt)) / denom, False)


def translation_error(gt: Trajectory, est: Trajectory, align: bool = False) -> float:
    """Mean per-frame ``||t_gt - s t||`` with one global scale ``s``.

    Inputs are expected first-frame aligned; pass ``align=True`` to do it
    here. A static estimate gets ``s = 0``, i.e. the mean ground-truth
    distance from the origin.
    """
    if align:
        gt, est = align_to_first(gt), align_to_first(est)
    fit = ls_scale(gt, est)
    diff = gt.positions - fit.scale * est.positions
    return float(np.mean(np.linalg.norm(diff, axis=1)))


def rotation_error(gt: Trajectory, est: Trajectory, align: bool = False) -> float:
    """Mean per-frame geodesic angle between rotations, degrees."""
    if align:
        gt, est = align_to_first(gt), align_to_first(est)
    _check_pair(gt, est)
    return float(np.mean([geodesic_deg(a.rotation, b.rotation) for a, b in zip(gt, est)]))


# -- reprojection -------------------------------------------------------------------

@dataclass(frozen=True)
class ReprojectionObservation:
    i: int
    j: int
    pixel: tuple[float, float]
    point: tuple[float, float, float]  # in frame j's camera coordinates

    def to_dict(self) -> dict:
        return {"i": self.i, "j": self.j, "px": self.pixel[0], "py": self.pixel[1],
                "X": self.point[0], "Y": self.point[1], "Z": self.point[2]}

    @classmethod
    def from_dict(cls, d: dict) -> ReprojectionObservation:
        return cls(int(d["i"]), int(d["j"]), (float(d["px"]), float(d["py"])),
                   (float(d["X"]), float(d["Y"]), float(d["Z"])))


def reprojection_error(observations: Sequence[ReprojectionObservation], intrinsics: CameraIntrinsics,
                       check_bounds: bool = True) -> float:
    """Mean pixel distance between observed pixels and projected points."""
    if len(observations) == 0:
        raise MetricError("empty observation set")
    obs_px = np.array([o.pixel for o in observations], dtype=float)
    pts = np.array([o.point for o in observations], dtype=float)
    if np.any(pts[:, 2] <= 0):
        bad = int(np.argmax(pts[:, 2] <= 0))
        raise MetricError(f"observation {bad} has a point behind the camera (Z={pts[bad, 2]})")
    if check_bounds:
        out = ((obs_px[:, 0] < 0) | (obs_px[:, 0] > intrinsics.width)
               | (obs_px[:, 1] < 0) | (obs_px[:, 1] > intrinsics.height))
        if np.any(out):
            raise MetricError(f"observation {int(np.argmax(out))} lies outside the image")
    proj = intrinsics.project(pts)
    return float(np.mean(np.linalg.norm(obs_px - proj, axis=1)))


def load_observations(path: str | os.PathLike) -> list[ReprojectionObservation]:
    out = []
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                out.append(ReprojectionObservation.from_dict(json.loads(line)))
            except (KeyError, ValueError, TypeError) as exc:
                raise MetricError(f"{path}:{lineno}: bad observation ({exc})") from None
    return out


def save_observations(observations: Iterable[ReprojectionObservation], path: str | os.PathLike) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for o in observations:
            f.write(json.dumps(o.to_dict(), sort_keys=True) + "\n")


# -- rank correlation -----------------------------------------------------------------

def spearman_rho(a: Sequence[float], b: Sequence[float]) -> float:
    """Spearman coefficient: Pearson correlation of average ranks."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape or a.ndim != 1:
        raise MetricError("rankings must be 1-D and of equal length")
    if len(a) < 2:
        raise MetricError("need at least 2 items to correlate")
    from scipy.stats import rankdata

    ra = rankdata(a, method="average")
    rb = rankdata(b, method="average")
    ra = ra - ra.mean()
    rb = rb - rb.mean()
    denom = math.sqrt(float(np.dot(ra, ra)) * float(np.dot(rb, rb)))
    if denom == 0:
        raise MetricError("correlation undefined for a constant ranking")
    return max(-1.0, min(1.0, float(np.dot(ra, rb)) / denom))


# -- visual quality via external scorers ----------------------------------------------

class ScorerError(RuntimeError):
    """External scorer failed, timed out or answered with the wrong shape."""


class Scorer(Protocol):
    scorer_id: str
    scale: str  # "unit" (0-1), "laion" (0-10) or "percent" (0-100)

    def score(self, frames: Sequence[Path]) -> list[float]: ...


SCALE_FACTORS = {"unit": 100.0, "laion": 10.0, "percent": 1.0}
DEFAULT_SCALES = {"aesthetic": "laion", "imaging": "percent"}


class _Capped:
    """Shared cap on concurrent requests to one scorer."""

    def __init__(self, max_concurrent: int):
        self._sem = threading.BoundedSemaphore(max(1, max_concurrent))

    def __enter__(self):
        self._sem.acquire()

    def __exit__(self, *exc):
        self._sem.release()


@dataclass
class ConstantScorer:
    """Mock scorer returning one value per frame."""

    scorer_id: str
    value: float = 0.5
    scale: str = "unit"
    calls: int = 0

    def score(self, frames):
        self.calls += 1
        return [self.value] * len(frames)


@dataclass
class HashScorer:
    """Deterministic mock: each frame's score is derived from its bytes."""

    scorer_id: str
    low: float = 0.4
    high: float = 0.8
    scale: str = "unit"

    def score(self, frames):
        out = []
        for f in frames:
            h = hashlib.sha256(self.scorer_id.encode() + b"\0" + Path(f).read_bytes()).digest()
            frac = int.from_bytes(h[:4], "big") / 2**32
            out.append(self.low + (self.high - self.low) * frac)
        return out


@dataclass
class SubprocessScorer:
    """Run ``command``; JSON list of frame paths on stdin, JSON list of scores on stdout."""

    scorer_id: str
    command: Sequence[str]
    scale: str = "percent"
    timeout: float = 600.0
    max_concurrent: int = 1
    _cap: _Capped = field(init=False, repr=False)

    def __post_init__(self):
        self._cap = _Capped(self.max_concurrent)

    def score(self, frames):
        request = json.dumps([str(f) for f in frames])
        with self._cap:
            try:
                proc = subprocess.run(list(self.command), input=request, capture_output=True,
                                      text=True, timeout=self.timeout)
            except (OSError, subprocess.TimeoutExpired) as exc:
                raise ScorerError(f"{self.scorer_id}: {exc}") from None
        if proc.returncode != 0:
            raise ScorerError(f"{self.scorer_id}: exit {proc.returncode}: {proc.stderr.strip()[-500:]}")
        return _parse_scores(proc.stdout, len(frames), self.scorer_id)


@dataclass
class SocketScorer:
    """Newline-delimited JSON over TCP: one request line, one response line."""

    scorer_id: str
    host: str
    port: int
    scale: str = "percent"
    timeout: float = 600.0
    max_concurrent: int = 4
    _cap: _Capped = field(init=False, repr=False)

    def __post_init__(self):
        self._cap = _Capped(self.max_concurrent)

    def score(self, frames):
        request = (json.dumps([str(f) for f in frames]) + "\n").encode()
        with self._cap:
            try:
                with socket.create_connection((self.host, self.port), timeout=self.timeout) as sock:
                    sock.sendall(request)
                    chunks = []
                    while True:
                        chunk = sock.recv(65536)
                        if not chunk:
                            break
                        chunks.append(chunk)
                        if chunk.endswith(b"\n"):
                            break
            except OSError as exc:
                raise ScorerError(f"{self.scorer_id}: {exc}") from None
        return _parse_scores(b"".join(chunks).decode(), len(frames), self.scorer_id)


def _parse_scores(text: str, expected: int, scorer_id: str) -> list[float]:
    try:
        scores = json.loads(text)
    except ValueError:
        raise ScorerError(f"{scorer_id}: response is not JSON") from None
    if not isinstance(scores, list) or len(scores) != expected:
        raise ScorerError(f"{scorer_id}: expected {expected} scores, got {scores!r:.200}")
    try:
        scores = [float(s) for s in scores]
    except (TypeError, ValueError):
        raise ScorerError(f"{scorer_id}: non-numeric score") from None
    if not all(math.isfinite(s) for s in scores):
        raise ScorerError(f"{scorer_id}: non-finite score")
    return scores


FRAME_SUFFIXES = (".png", ".jpg", ".jpeg", ".bmp", ".webp")


def list_frames(frames_dir: str | os.PathLike) -> list[Path]:
    d = Path(frames_dir)
    if not d.is_dir():
        return []
    return sorted((p for p in d.iterdir() if p.suffix.lower() in FRAME_SUFFIXES), key=lambda p: p.name)


def score_visual(frames_dir: str | os.PathLike, scorer: Scorer, every: int = 8) -> float:
    """Mean score of every ``every``-th frame, rescaled to 0-100."""
    frames = list_frames(frames_dir)
    if not frames:
        raise MetricError(f"no frames in {frames_dir}")
    sampled = frames[::every]
    scores = scorer.score(sampled)
    if len(scores) != len(sampled):
        raise ScorerError(f"{scorer.scorer_id}: {len(scores)} scores for {len(sampled)} frames")
    value = float(np.mean(scores)) * SCALE_FACTORS[scorer.scale]
    if not math.isfinite(value):
        raise ScorerError(f"{scorer.scorer_id}: non-finite mean")
    return value


# -- reports and aggregation -------------------------------------------------------------

@dataclass
class MetricReport:
    """Eight metric values for one case; ``None`` marks an incomplete metric."""

    case_id: str
    aesthetic: float | None = None
    imaging: float | None = None
    translation_error: float | None = None
    rotation_error: float | None = None
    reprojection_error: float | None = None
    state: float | None = None
    content: float | None = None
    style: float | None = None
    incomplete: dict = field(default_factory=dict)  # metric -> reason

    def __post_init__(self):
        for name in METRIC_NAMES:
            v = getattr(self, name)
            if v is None:
                continue
            if not math.isfinite(v):
                raise MetricError(f"{self.case_id}: {name} is not finite")
            if name in LOWER_IS_BETTER and v < 0:
                raise MetricError(f"{self.case_id}: {name} must be >= 0")
            if name not in LOWER_IS_BETTER and not 0 <= v <= 100:
                raise MetricError(f"{self.case_id}: {name} must lie in [0, 100]")

    @property
    def complete(self) -> bool:
        return all(getattr(self, n) is not None for n in METRIC_NAMES)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> MetricReport:
        return cls(**{k: d.get(k) for k in ("case_id", *METRIC_NAMES)}, incomplete=dict(d.get("incomplete", {})))


@dataclass
class LeaderboardRow:
    model_id: str
    split: str
    means: dict  # metric -> mean or None
    counts: dict  # metric -> number of cases contributing
    incomplete: dict  # metric -> number of cases missing that metric
    cases: int = 0


def aggregate(reports: Sequence[MetricReport], split: str, model_id: str = "") -> LeaderboardRow:
    """Per-metric means over the cases that produced the metric; nothing is imputed."""
    if not any(any(getattr(r, n) is not None for n in METRIC_NAMES) for r in reports):
        raise MetricError(f"no complete reports for split {split!r}")
    means, counts, missing = {}, {}, {}
    for name in METRIC_NAMES:
        vals = [getattr(r, name) for r in reports if getattr(r, name) is not None]
        counts[name] = len(vals)
        missing[name] = len(reports) - len(vals)
        means[name] = float(np.mean(vals)) if vals else None
    return LeaderboardRow(model_id, split, means, counts, missing, len(reports))
