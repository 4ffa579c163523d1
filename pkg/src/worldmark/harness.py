"""Model-runner contract and the built-in mock world model.

A runner is any command that accepts one argument, a case directory holding
``manifest.json``, ``reference.<ext>`` and ``action.<model_id>.*``, and
writes ``frames/%06d.png`` (or ``video.mp4``), optionally ``estimated.traj``
and ``reproj.jsonl``. Exit code 0 means success.
"""
from __future__ import annotations

import json
import math
import os
import shutil
import subprocess
import sys
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .actions import Kind
from .adapters import (
    ACTION_VECTOR_INDEX,
    ActionCallScript,
    ActionVectorStream,
    AdapterError,
    CaptionPrompt,
    GamepadScript,
    PluckerStream,
    PoseStream,
    find_payload,
    parse_caption,
    read_payload,
    _BUTTON_TO_KIND,
    _CALL_TO_KIND,
    _INDEX_TO_KIND,
)
from .geometry import (
    CameraIntrinsics,
    Pose,
    Rotation,
    Trajectory,
    compose,
    relative,
    save_trajectory,
)
from .synth import CalibrationProfile, integrate_steps, step_kinds

DEFAULT_TIMEOUT = 30 * 60.0
MOCK_INTRINSICS = CameraIntrinsics(fx=100.0, fy=100.0, cx=64.0, cy=64.0, width=128, height=128)

OUTPUT_NAMES = ("frames", "video.mp4", "estimated.traj", "reproj.jsonl")


class ContractViolation(RuntimeError):
    """Runner exited cleanly but did not produce the required outputs."""


class UninterpretablePayload(ValueError):
    pass


@dataclass(frozen=True)
class EvaluationCase:
    case_id: str
    image: str
    viewpoint: str  # first | third
    style: str  # real | stylized
    scene: str  # nature | city | indoor
    sequence_id: int | str
    sequence: str  # action DSL
    tier: str | None
    model_id: str

    @property
    def split(self) -> str:
        view = "First-Person" if self.viewpoint == "first" else "Third-Person"
        style = "Real" if self.style == "real" else "Stylized"
        return f"{view} {style}"

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> EvaluationCase:
        return cls(**{k: d[k] for k in cls.__dataclass_fields__})


@dataclass
class GenerationResult:
    case_id: str
    status: str  # completed | incomplete
    frames_dir: str | None = None
    video_file: str | None = None
    estimated_trajectory: str | None = None
    reprojection_file: str | None = None
    wall_seconds: float = 0.0
    exit_code: int | None = None
    reason: str = ""
    diagnostics: str = ""
    frame_count: int = 0

    @property
    def completed(self) -> bool:
        return self.status == "completed"

    def to_dict(self) -> dict:
        return asdict(self)


# -- payload interpreters --------------------------------------------------------------

def _steps_from_ranges(ranges: Sequence[tuple[Kind, int, int]]) -> list[Kind]:
    steps: list[Kind] = []
    for kind, start, end in sorted(ranges, key=lambda r: r[1]):
        if start != len(steps):
            raise UninterpretablePayload(f"non-contiguous step ranges at frame {start}")
        steps.extend([kind] * (end - start))
    return steps


def interpret_steps(payload, calib: CalibrationProfile) -> list[Kind]:
    """Frame-step schedule encoded by a script-like payload."""
    if isinstance(payload, CaptionPrompt):
        return step_kinds(parse_caption(payload.text), calib.frame_rate)
    if isinstance(payload, ActionCallScript):
        try:
            return _steps_from_ranges([(_CALL_TO_KIND[c.name], c.start_frame, c.end_frame) for c in payload.calls])
        except KeyError as exc:
            raise UninterpretablePayload(f"unknown action call {exc}") from None
    if isinstance(payload, GamepadScript):
        open_at: dict[str, float] = {}
        ranges = []
        for e in payload.events:
            if e.button not in _BUTTON_TO_KIND:
                raise UninterpretablePayload(f"unknown button {e.button!r}")
            if e.action == "press":
                open_at[e.button] = e.time
            elif e.action == "release":
                start = open_at.pop(e.button)
                # event times are cumulative segment ends, snapped like frame_bounds
                ranges.append((_BUTTON_TO_KIND[e.button],
                               int(math.floor(start * calib.frame_rate + 0.5)),
                               int(math.floor(e.time * calib.frame_rate + 0.5))))
        return _steps_from_ranges(ranges)
    if isinstance(payload, ActionVectorStream):
        steps = []
        for row in payload.vectors:
            active = np.flatnonzero(row)
            if len(active) != 1 or int(active[0]) not in _INDEX_TO_KIND:
                raise UninterpretablePayload("action vector without exactly one movement component")
            steps.append(_INDEX_TO_KIND[int(active[0])])
        return steps
    raise UninterpretablePayload(f"no step interpreter for {type(payload).__name__}")


def interpret_trajectory(payload, calib: CalibrationProfile) -> Trajectory:
    """Camera path a compliant model would follow for ``payload``."""
    if isinstance(payload, (PoseStream, PluckerStream)):
        return payload.trajectory
    return integrate_steps(interpret_steps(payload, calib), calib)


def _signed_yaw_left_deg(r: Rotation) -> float:
    # rotation about -y by +theta has quaternion y component -sin(theta/2)
    return -math.degrees(2.0 * math.atan2(r.y, r.w))


def _swap_pose_stream(traj: Trajectory, calib: CalibrationProfile) -> Trajectory:
    """Replace each interval's yaw by sideways travel of the same duration."""
    cur = traj[0]
    poses = [cur]
    for a, b in zip(traj.poses, traj.poses[1:]):
        rel = relative(a, b)
        yaw = _signed_yaw_left_deg(rel.rotation)
        side = -math.copysign(abs(yaw) / calib.yaw_rate * calib.linear_speed, yaw) if yaw else 0.0
        step = Pose(Rotation.identity(), (rel.translation[0] + side, rel.translation[1], rel.translation[2]))
        cur = compose(cur, step).with_timestamp(b.timestamp)
        poses.append(cur)
    return Trajectory(tuple(poses), traj.frame_rate)


@dataclass(frozen=True)
class MockModelConfig:
    mode: str = "faithful"  # faithful | noisy | swap_rotation_for_strafe | static
    sigma_t: float = 0.0  # metres
    sigma_r: float = 0.0  # degrees
    pixel_noise: float = 0.0  # pixels, reprojection observations
    seed: int = 0

    MODES = ("faithful", "noisy", "swap_rotation_for_strafe", "static")

    def __post_init__(self):
        if self.mode not in self.MODES:
            raise ValueError(f"unknown mock mode {self.mode!r}")
        if self.sigma_t < 0 or self.sigma_r < 0 or self.pixel_noise < 0:
            raise ValueError("noise levels must be >= 0")

    @classmethod
    def noisy(cls, sigma_t: float, sigma_r: float, seed: int = 0, pixel_noise: float = 0.5) -> MockModelConfig:
        return cls("noisy", sigma_t, sigma_r, pixel_noise, seed)

    def to_dict(self) -> dict:
        return {"mode": self.mode, "sigma_t": self.sigma_t, "sigma_r": self.sigma_r,
                "pixel_noise": self.pixel_noise, "seed": self.seed}

    @classmethod
    def from_dict(cls, d: dict) -> MockModelConfig:
        return cls(d.get("mode", "faithful"), float(d.get("sigma_t", 0.0)), float(d.get("sigma_r", 0.0)),
                   float(d.get("pixel_noise", 0.0)), int(d.get("seed", 0)))


def mock_trajectory(config: MockModelConfig, payload, calib: CalibrationProfile) -> Trajectory:
    """Trajectory the mock model 'generates' for a payload under ``config``."""
    if config.mode == "swap_rotation_for_strafe":
        if isinstance(payload, (PoseStream, PluckerStream)):
            return _swap_pose_stream(payload.trajectory, calib)
        swap = {Kind.YAW_LEFT: Kind.LEFT, Kind.YAW_RIGHT: Kind.RIGHT}
        return integrate_steps([swap.get(k, k) for k in interpret_steps(payload, calib)], calib)
    base = interpret_trajectory(payload, calib)
    if config.mode == "faithful":
        return base
    if config.mode == "static":
        return Trajectory(tuple(Pose.identity(p.timestamp) for p in base), base.frame_rate)
    # noisy: independent perturbation per frame; the first frame is the reference image
    rng = np.random.default_rng(config.seed)
    poses = [base[0]]
    for p in base.poses[1:]:
        dt = rng.normal(0.0, config.sigma_t, 3)
        dr = Rotation.from_rotvec(np.radians(rng.normal(0.0, config.sigma_r, 3)))
        poses.append(Pose(p.rotation * dr, tuple(np.asarray(p.translation) + dt), p.timestamp))
    return Trajectory(tuple(poses), base.frame_rate)


# -- mock rendering ---------------------------------------------------------------------

def _world_points() -> np.ndarray:
    xs, zs = np.meshgrid(np.arange(-30.0, 31.0, 2.0), np.arange(-30.0, 61.0, 2.0))
    ground = np.stack([xs.ravel(), np.full(xs.size, 1.5), zs.ravel()], axis=1)
    ys, zz = np.meshgrid(np.arange(-3.0, 1.6, 1.0), np.arange(-30.0, 61.0, 3.0))
    walls = [np.stack([np.full(ys.size, x), ys.ravel(), zz.ravel()], axis=1) for x in (-12.0, 12.0)]
    return np.concatenate([ground, *walls])


WORLD_POINTS = _world_points()


def _camera_points(pose: Pose, world: np.ndarray) -> np.ndarray:
    r = pose.rotation.matrix()
    return (world - np.asarray(pose.translation)) @ r  # R^T (X - t), row-wise


def _visible(cam: np.ndarray, k: CameraIntrinsics) -> tuple[np.ndarray, np.ndarray]:
    front = cam[:, 2] > 0.2
    px = np.full((len(cam), 2), -1.0)
    px[front] = k.project(cam[front])
    inside = front & (px[:, 0] >= 0) & (px[:, 0] < k.width) & (px[:, 1] >= 0) & (px[:, 1] < k.height)
    return px, inside


def reference_background(path: str | os.PathLike, k: CameraIntrinsics = MOCK_INTRINSICS) -> np.ndarray:
    """Reference image as a dim grayscale backdrop so every case renders distinct frames."""
    from PIL import Image

    with Image.open(path) as im:
        gray = np.asarray(im.convert("L").resize((k.width, k.height), Image.BILINEAR), dtype=float)
    # coarse grey levels keep PNG encoding cheap
    return (16 + (gray * 0.4 // 8) * 8).astype(np.uint8)


def _draw(img: np.ndarray, uv: np.ndarray, index: int) -> np.ndarray:
    img[uv[:, 1], uv[:, 0]] = 230
    for bit in range(20):
        if (index >> bit) & 1:
            img[0:3, bit * 6:bit * 6 + 5] = 255
    return img


def _blank(k: CameraIntrinsics, background: np.ndarray | None) -> np.ndarray:
    if background is None:
        return np.full((k.height, k.width), 32, dtype=np.uint8)
    return background.copy()


def render_frame(pose: Pose, index: int, k: CameraIntrinsics = MOCK_INTRINSICS,
                 background: np.ndarray | None = None) -> np.ndarray:
    """Grayscale frame: projected landmark dots plus the frame index as a 20-bit strip."""
    px, inside = _visible(_camera_points(pose, WORLD_POINTS), k)
    return _draw(_blank(k, background), px[inside].astype(int), index)


def _reprojection_rows(traj: Trajectory, k: CameraIntrinsics, rng, pixel_noise: float,
                       gap: int = 8, per_pair: int = 24) -> list[dict]:
    rows = []
    for i in range(0, len(traj) - gap, gap):
        j = i + gap
        cam_i = _camera_points(traj[i], WORLD_POINTS)
        cam_j = _camera_points(traj[j], WORLD_POINTS)
        _, vis_i = _visible(cam_i, k)
        px_j, vis_j = _visible(cam_j, k)
        idx = np.flatnonzero(vis_i & vis_j)[:per_pair]
        for n in idx:
            obs = px_j[n] + (rng.normal(0.0, pixel_noise, 2) if pixel_noise > 0 else 0.0)
            obs = np.clip(obs, 0.0, [k.width, k.height])
            rows.append({"i": i, "j": j, "px": float(obs[0]), "py": float(obs[1]),
                         "X": float(cam_j[n, 0]), "Y": float(cam_j[n, 1]), "Z": float(cam_j[n, 2])})
    return rows


def mock_generate(config: MockModelConfig, payload, calib: CalibrationProfile, out_dir: str | os.PathLike,
                  intrinsics: CameraIntrinsics = MOCK_INTRINSICS, case_id: str = "",
                  reference: str | os.PathLike | None = None) -> GenerationResult:
    """Write frames, ``estimated.traj`` and ``reproj.jsonl`` for a payload."""
    from PIL import Image

    start = time.perf_counter()
    out = Path(out_dir)
    traj = mock_trajectory(config, payload, calib)
    frames = out / "frames"
    frames.mkdir(parents=True, exist_ok=True)
    background = reference_background(reference, intrinsics) if reference else None
    # identity grey palette: decodes to the same luminance, and Pillow skips row filtering for
    # palette images, which more than halves encode time
    palette = np.repeat(np.arange(256, dtype=np.uint8), 3).tobytes()
    for idx, pose in enumerate(traj):
        img = Image.fromarray(render_frame(pose, idx, intrinsics, background)).convert("P")
        img.putpalette(palette)
        img.save(frames / f"{idx:06d}.png", compress_level=1)
    save_trajectory(traj, out / "estimated.traj")
    rng = np.random.default_rng(config.seed + 1)
    rows = _reprojection_rows(traj, intrinsics, rng, config.pixel_noise)
    with open(out / "reproj.jsonl", "w", encoding="utf-8", newline="\n") as f:
        for row in rows:
            f.write(json.dumps(row, sort_keys=True) + "\n")
    return GenerationResult(
        case_id, "completed", frames_dir=str(frames), estimated_trajectory=str(out / "estimated.traj"),
        reprojection_file=str(out / "reproj.jsonl"), wall_seconds=time.perf_counter() - start,
        exit_code=0, frame_count=len(traj))


def mock_runner_main(argv: Sequence[str] | None = None) -> int:
    """Child-process entry point of the mock model: ``python -m worldmark.mock_model CASE_DIR``."""
    argv = list(sys.argv[1:] if argv is None else argv)
    if len(argv) != 1:
        print("usage: python -m worldmark.mock_model CASE_DIR", file=sys.stderr)
        return 2
    case_dir = Path(argv[0])
    manifest = json.loads((case_dir / "manifest.json").read_text(encoding="utf-8"))
    calib = CalibrationProfile.from_dict(manifest["calibration"])
    config = MockModelConfig.from_dict(manifest.get("mock", {}))
    payload_path = case_dir / manifest["payload"] if "payload" in manifest else find_payload(
        case_dir, manifest["case"]["model_id"])
    intr = CameraIntrinsics.from_dict(manifest["intrinsics"]) if "intrinsics" in manifest else MOCK_INTRINSICS
    try:
        payload = read_payload(payload_path, calib.frame_rate)
        reference = case_dir / manifest["reference"] if "reference" in manifest else None
        result = mock_generate(config, payload, calib, case_dir, intr, manifest.get("case", {}).get("case_id", ""),
                               reference)
    except (UninterpretablePayload, AdapterError) as exc:
        print(f"mock model: {exc}", file=sys.stderr)
        return 3
    print(f"mock model: {result.frame_count} frames, mode={config.mode}")
    return 0


# -- running a case ------------------------------------------------------------------------

def clear_outputs(case_dir: str | os.PathLike) -> None:
    d = Path(case_dir)
    for name in OUTPUT_NAMES:
        p = d / name
        if p.is_dir():
            shutil.rmtree(p)
        elif p.exists():
            p.unlink()


def collect_outputs(case_dir: str | os.PathLike, case_id: str = "") -> GenerationResult:
    """Check the output side of the directory contract."""
    from .metrics import list_frames

    d = Path(case_dir)
    frames = list_frames(d / "frames")
    video = d / "video.mp4"
    if len(frames) < 2 and not video.exists():
        raise ContractViolation(f"{case_id or d}: runner produced {len(frames)} frame(s) and no video.mp4")
    est = d / "estimated.traj"
    reproj = d / "reproj.jsonl"
    return GenerationResult(
        case_id, "completed",
        frames_dir=str(d / "frames") if frames else None,
        video_file=str(video) if video.exists() else None,
        estimated_trajectory=str(est) if est.exists() else None,
        reprojection_file=str(reproj) if reproj.exists() else None,
        frame_count=len(frames))


def _tail(path: Path, limit: int = 2000) -> str:
    try:
        return path.read_text(encoding="utf-8", errors="replace")[-limit:]
    except FileNotFoundError:
        return ""


def run_case(runner: Sequence[str], case_dir: str | os.PathLike, timeout: float = DEFAULT_TIMEOUT,
             case_id: str = "") -> GenerationResult:
    """Invoke ``runner + [case_dir]`` and collect its outputs.

    Timeouts and non-zero exits come back as incomplete results; a clean exit
    without frames raises :class:`ContractViolation`.
    """
    d = Path(case_dir)
    clear_outputs(d)
    log_path = d / "runner.log"
    start = time.perf_counter()
    with open(log_path, "w", encoding="utf-8") as log:
        try:
            proc = subprocess.run([*runner, str(d)], stdout=log, stderr=subprocess.STDOUT,
                                  timeout=timeout, cwd=d)
        except subprocess.TimeoutExpired:
            return GenerationResult(case_id, "incomplete", wall_seconds=time.perf_counter() - start,
                                    reason=f"timeout after {timeout:g} s", diagnostics=_tail(log_path))
        except OSError as exc:
            return GenerationResult(case_id, "incomplete", wall_seconds=time.perf_counter() - start,
                                    reason=f"could not start runner: {exc}")
    elapsed = time.perf_counter() - start
    if proc.returncode != 0:
        return GenerationResult(case_id, "incomplete", wall_seconds=elapsed, exit_code=proc.returncode,
                                reason=f"runner exited with code {proc.returncode}",
                                diagnostics=_tail(log_path))
    result = collect_outputs(d, case_id)
    result.wall_seconds = elapsed
    result.exit_code = 0
    return result


MOCK_RUNNER = (sys.executable, "-m", "worldmark.mock_model")
