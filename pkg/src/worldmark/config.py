"""Run configuration: calibration overrides, runners, scorers and judge settings.

Loaded from JSON or TOML. Every key is optional; defaults reproduce a
fully mocked, offline run.
"""
from __future__ import annotations

import copy
import json
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path

from .geometry import CameraIntrinsics
from .harness import DEFAULT_TIMEOUT, MOCK_INTRINSICS, MOCK_RUNNER, MockModelConfig
from .judge import (
    DEFAULT_RETRIES,
    DEFAULT_SAMPLES,
    FixedClient,
    HttpClient,
    RuleSceneClient,
    ScriptedClient,
)
from .metrics import DEFAULT_SCALES, ConstantScorer, HashScorer, SocketScorer, SubprocessScorer
from .synth import CalibrationProfile, parse_calibration, profile_for

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib


DEFAULTS: dict = {
    "calibration": {},
    "runners": {},
    "timeout": DEFAULT_TIMEOUT,
    "mock": {"mode": "faithful"},
    "intrinsics": {},
    "visual_every": 8,
    "scorers": {
        "aesthetic": {"type": "hash"},
        "imaging": {"type": "hash"},
    },
    "judge": {"client": "fixed", "samples": DEFAULT_SAMPLES, "retries": DEFAULT_RETRIES, "backoff": 0.5},
    "scene_judge": {"client": "rule"},
}


def _merge(base: dict, override: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in override.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


@dataclass
class Config:
    data: dict = field(default_factory=lambda: copy.deepcopy(DEFAULTS))
    base_dir: Path = field(default_factory=Path.cwd)

    @classmethod
    def load(cls, path: str | os.PathLike | None) -> Config:
        if path is None:
            return cls()
        path = Path(path)
        raw = path.read_bytes()
        data = tomllib.loads(raw.decode()) if path.suffix == ".toml" else json.loads(raw)
        return cls(_merge(DEFAULTS, data), path.parent.resolve())

    @classmethod
    def from_dict(cls, data: dict, base_dir: str | os.PathLike | None = None) -> Config:
        return cls(_merge(DEFAULTS, data), Path(base_dir) if base_dir else Path.cwd())

    def snapshot(self) -> dict:
        return copy.deepcopy(self.data)

    def _path(self, p: str) -> Path:
        q = Path(p)
        return q if q.is_absolute() else self.base_dir / q

    # -- pieces --------------------------------------------------------------------

    def calibration(self, model_id: str) -> CalibrationProfile:
        overrides = parse_calibration(self.data.get("calibration", {}))
        return overrides[model_id] if model_id in overrides else profile_for(model_id)

    def runner(self, model_id: str) -> list[str]:
        runners = self.data.get("runners", {})
        if model_id in runners:
            cmd = runners[model_id]
            return cmd.split() if isinstance(cmd, str) else list(cmd)
        if model_id == "mock":
            return list(MOCK_RUNNER)
        raise KeyError(f"no runner configured for model {model_id!r}")

    def mock_config(self) -> MockModelConfig:
        return MockModelConfig.from_dict(self.data.get("mock", {}))

    def intrinsics(self, model_id: str) -> CameraIntrinsics:
        entry = self.data.get("intrinsics", {}).get(model_id)
        return CameraIntrinsics.from_dict(entry) if entry else MOCK_INTRINSICS

    def scorer(self, scorer_id: str):
        spec = dict(self.data["scorers"].get(scorer_id, {"type": "hash"}))
        kind = spec.pop("type", "hash")
        if kind == "constant":
            return ConstantScorer(scorer_id, spec.get("value", 0.5), spec.get("scale", "unit"))
        if kind == "hash":
            return HashScorer(scorer_id, spec.get("low", 0.4), spec.get("high", 0.8))
        scale = spec.get("scale", DEFAULT_SCALES[scorer_id])
        if kind == "subprocess":
            cmd = spec["command"]
            return SubprocessScorer(scorer_id, cmd.split() if isinstance(cmd, str) else cmd, scale,
                                    spec.get("timeout", 600.0), spec.get("max_concurrent", 1))
        if kind == "socket":
            return SocketScorer(scorer_id, spec["host"], int(spec["port"]), scale,
                                spec.get("timeout", 600.0), spec.get("max_concurrent", 4))
        raise ValueError(f"unknown scorer type {kind!r}")

    def _client(self, spec: dict):
        kind = spec.get("client", "fixed")
        if kind == "fixed":
            return FixedClient(spec.get("response", {"score": 50, "rationale": "fixed mock"}))
        if kind == "scripted":
            return ScriptedClient.from_file(self._path(spec["table"]))
        if kind == "rule":
            return RuleSceneClient()
        if kind == "http":
            return HttpClient.from_env(spec.get("model", "vlm"), spec.get("endpoint"),
                                       timeout=spec.get("timeout", 120.0))
        raise ValueError(f"unknown judge client {kind!r}")

    def judge_client(self):
        return self._client(self.data["judge"])

    def scene_client(self):
        return self._client(self.data["scene_judge"])

    @property
    def judge_samples(self) -> int:
        return int(self.data["judge"].get("samples", DEFAULT_SAMPLES))

    @property
    def judge_retries(self) -> int:
        return int(self.data["judge"].get("retries", DEFAULT_RETRIES))

    @property
    def judge_backoff(self) -> float:
        return float(self.data["judge"].get("backoff", 0.5))

    @property
    def visual_every(self) -> int:
        return int(self.data.get("visual_every", 8))

    @property
    def timeout(self) -> float:
        return float(self.data.get("timeout", DEFAULT_TIMEOUT))
