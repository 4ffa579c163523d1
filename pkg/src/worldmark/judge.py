"""VLM-as-judge: frame sampling, prompts, strict response parsing, caching and clients.

A client is anything with a ``complete(request, images) -> str`` method and
a ``model_name`` attribute; ``remote`` clients count as network calls.
"""
from __future__ import annotations

import base64
import hashlib
import json
import logging
import math
import os
import tempfile
import threading
import time
import urllib.error
import urllib.request
from dataclasses import dataclass, field
from pathlib import Path
from typing import Protocol, Sequence

from .actions import SceneConstraintReport
from .metrics import list_frames

log = logging.getLogger(__name__)

CONSISTENCY_KINDS = ("state", "content", "style")
KINDS = CONSISTENCY_KINDS + ("scene_analysis",)
DEFAULT_SAMPLES = 16
DEFAULT_RETRIES = 3

ENV_KEY = "WORLDMARK_VLM_KEY"
ENV_ENDPOINT = "WORLDMARK_VLM_ENDPOINT"


class JudgeError(RuntimeError):
    reason = "judge"


class JudgeTransportError(JudgeError):
    reason = "transport"


class JudgeSchemaError(JudgeError):
    reason = "schema"


# -- frame sampling ---------------------------------------------------------------

def sample_indices(total: int, n: int) -> list[int]:
    """``round(k (N-1) / (n-1))`` for k = 0..n-1, halves rounded up."""
    if n < 2:
        raise ValueError("need at least 2 samples")
    if total < n:
        raise ValueError(f"only {total} frames available, {n} requested")
    return [int(math.floor(k * (total - 1) / (n - 1) + 0.5)) for k in range(n)]


def sample_frames(video_dir: str | os.PathLike, n: int = DEFAULT_SAMPLES) -> list[Path]:
    frames = list_frames(video_dir)
    return [frames[i] for i in sample_indices(len(frames), n)]


# -- prompts ------------------------------------------------------------------------

_SCALE_TEXT = (
    "Score on a 0-100 scale where 100 means no detectable problem across the whole clip, "
    "50 means clearly noticeable but intermittent problems, and 0 means the problem "
    "dominates every frame."
)

_JSON_SCORE = (
    'Respond with a single JSON object and nothing else, exactly of the form '
    '{"score": <number between 0 and 100>, "rationale": "<one or two sentences>"}.'
)

_JSON_SCENE = (
    'Respond with a single JSON object and nothing else, exactly of the form '
    '{"forward_blocked": <true|false>, "backward_blocked": <true|false>, '
    '"lateral_blocked": <true|false>, "rationale": "<one or two sentences>"}.'
)

CRITERIA = {
    "state": (
        "State consistency. Track primary subjects and detect abrupt mutations or jerky movements. "
        "Check whether each object's shape, texture and motion stay continuous from frame to frame."
    ),
    "content": (
        "Content consistency. Compare scene elements across consecutive keyframes and judge the "
        "frequency and severity of spatiotemporal hallucinations, such as objects that suddenly "
        "appear, vanish or pop into view."
    ),
    "style": (
        "Style consistency. Compare the aesthetic tone, lighting, and color palette across the "
        "timeline and look for color shifts, unnatural distortions or drift of the overall "
        "artistic or photorealistic style."
    ),
}

# phrase each prompt must carry verbatim, keyed by kind
CRITERION_PHRASES = {
    "state": "track primary subjects and detect abrupt mutations",
    "content": "frequency and severity of spatiotemporal hallucinations",
    "style": "aesthetic tone, lighting, and color palette",
    "scene_analysis": "physical constraints",
}

_SCENE_TEXT = (
    "You are shown the first frame a camera will start from. Identify physical constraints "
    "that make camera motion implausible: walls or obstacles directly ahead (forward), behind "
    "(backward), or to the sides (lateral, e.g. an enclosed corridor where sideways translation "
    "would pass through walls). Yaw rotation in place is always allowed."
)


def build_prompt(kind: str, context: dict | None = None) -> str:
    if kind not in KINDS:
        raise ValueError(f"unknown judge kind {kind!r}")
    context = context or {}
    lines = []
    if kind == "scene_analysis":
        lines.append(_SCENE_TEXT)
    else:
        n = context.get("num_frames")
        intro = "You are given uniformly sampled frames of one generated video, in temporal order"
        lines.append(f"{intro} ({n} frames)." if n else f"{intro}.")
        lines.append(CRITERIA[kind])
        lines.append(_SCALE_TEXT)
    extra = {k: v for k, v in sorted(context.items()) if k != "num_frames"}
    if extra:
        lines.append("Context: " + "; ".join(f"{k}={v}" for k, v in extra.items()) + ".")
    lines.append(_JSON_SCENE if kind == "scene_analysis" else _JSON_SCORE)
    return "\n\n".join(lines) + "\n"


# -- requests and responses -----------------------------------------------------------

@dataclass(frozen=True)
class JudgeRequest:
    kind: str
    frames: tuple[Path, ...]
    prompt: str
    schema_id: str = ""
    case_id: str = ""
    context: dict = field(default_factory=dict, compare=False, hash=False)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown judge kind {self.kind!r}")
        if not self.prompt:
            raise ValueError("prompt must not be empty")
        if self.kind in CONSISTENCY_KINDS and len(self.frames) < 2:
            raise ValueError("consistency judgements need at least 2 frames")
        object.__setattr__(self, "frames", tuple(Path(f) for f in self.frames))
        if not self.schema_id:
            object.__setattr__(self, "schema_id", "scene.v1" if self.kind == "scene_analysis" else "score.v1")


@dataclass(frozen=True)
class JudgeResponse:
    score: float | None
    rationale: str
    scene: SceneConstraintReport | None = None

    def to_dict(self) -> dict:
        if self.scene is not None:
            return self.scene.to_dict()
        return {"score": self.score, "rationale": self.rationale}


def parse_response(kind: str, text: str) -> JudgeResponse:
    """Strict JSON validation; anything off-schema raises :class:`JudgeSchemaError`."""
    try:
        obj = json.loads(text)
    except (TypeError, ValueError):
        raise JudgeSchemaError(f"response is not JSON: {str(text)[:200]!r}") from None
    if not isinstance(obj, dict):
        raise JudgeSchemaError("response must be a JSON object")
    rationale = obj.get("rationale", "")
    if not isinstance(rationale, str):
        raise JudgeSchemaError("rationale must be a string")
    if kind == "scene_analysis":
        flags = {}
        for key in ("forward_blocked", "backward_blocked", "lateral_blocked"):
            if not isinstance(obj.get(key), bool):
                raise JudgeSchemaError(f"missing or non-boolean {key!r}")
            flags[key] = obj[key]
        return JudgeResponse(None, rationale, SceneConstraintReport(**flags, rationale=rationale))
    score = obj.get("score")
    if isinstance(score, bool) or not isinstance(score, (int, float)):
        raise JudgeSchemaError("missing or non-numeric 'score'")
    score = float(score)
    if not math.isfinite(score) or not 0 <= score <= 100:
        raise JudgeSchemaError(f"score {score} outside [0, 100]")
    return JudgeResponse(score, rationale)


# -- clients ---------------------------------------------------------------------------

class JudgeClient(Protocol):
    model_name: str
    remote: bool

    def complete(self, request: JudgeRequest, images: Sequence[bytes]) -> str: ...


@dataclass
class FixedClient:
    """Mock returning the same response text to every request."""

    response: str | dict
    model_name: str = "mock-fixed"
    remote: bool = False
    calls: int = 0

    def complete(self, request, images):
        self.calls += 1
        return self.response if isinstance(self.response, str) else json.dumps(self.response)


@dataclass
class ScriptedClient:
    """Mock answering from a table ``{case_id: {kind: response}}``.

    ``"*"`` entries act as fallbacks at either level.
    """

    table: dict
    model_name: str = "mock-scripted"
    remote: bool = False
    calls: int = 0

    @classmethod
    def from_file(cls, path: str | os.PathLike, **kw) -> ScriptedClient:
        with open(path, encoding="utf-8") as f:
            return cls(json.load(f), **kw)

    def complete(self, request, images):
        self.calls += 1
        entry = self.table.get(request.case_id, self.table.get("*"))
        if entry is None:
            raise JudgeTransportError(f"no scripted response for case {request.case_id!r}")
        if isinstance(entry, dict) and ("score" in entry or "lateral_blocked" in entry):
            resp = entry
        elif isinstance(entry, dict):
            resp = entry.get(request.kind, entry.get("*"))
            if resp is None:
                raise JudgeTransportError(f"no scripted {request.kind} response for {request.case_id!r}")
        else:
            resp = entry
        return resp if isinstance(resp, str) else json.dumps(resp)


@dataclass
class RuleSceneClient:
    """Mock scene analyst: indoor scenes block lateral motion, others block nothing."""

    model_name: str = "mock-rule"
    remote: bool = False
    calls: int = 0

    def complete(self, request, images):
        self.calls += 1
        if request.kind != "scene_analysis":
            raise JudgeTransportError("rule client only answers scene analysis")
        indoor = request.context.get("scene") == "indoor"
        return json.dumps({
            "forward_blocked": False,
            "backward_blocked": False,
            "lateral_blocked": indoor,
            "rationale": "enclosed indoor space" if indoor else "open scene",
        })


@dataclass
class HttpClient:
    """Generic chat-with-images endpoint.

    Request body: ``{"model", "prompt", "images": [base64 PNG/JPEG], "response_format": "json"}``.
    Response body: ``{"text": "<model output>"}``.
    """

    endpoint: str
    model_name: str
    api_key: str | None = None
    timeout: float = 120.0
    remote: bool = True

    @classmethod
    def from_env(cls, model_name: str, endpoint: str | None = None, **kw) -> HttpClient:
        endpoint = endpoint or os.environ.get(ENV_ENDPOINT)
        if not endpoint:
            raise JudgeError(f"no VLM endpoint configured (set {ENV_ENDPOINT})")
        return cls(endpoint, model_name, os.environ.get(ENV_KEY), **kw)

    def complete(self, request, images):
        body = json.dumps({
            "model": self.model_name,
            "prompt": request.prompt,
            "images": [base64.b64encode(b).decode("ascii") for b in images],
            "response_format": "json",
        }).encode()
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        req = urllib.request.Request(self.endpoint, data=body, headers=headers, method="POST")
        try:
            with urllib.request.urlopen(req, timeout=self.timeout) as resp:
                payload = json.loads(resp.read().decode())
        except (urllib.error.URLError, OSError, ValueError) as exc:
            raise JudgeTransportError(str(exc)) from None
        if not isinstance(payload, dict) or not isinstance(payload.get("text"), str):
            raise JudgeTransportError("endpoint reply lacks a 'text' field")
        return payload["text"]


# -- cache -------------------------------------------------------------------------------

class JudgeCache:
    """Responses on disk at ``<root>/<key[:2]>/<key>.json``; writes are atomic renames."""

    def __init__(self, root: str | os.PathLike):
        self.root = Path(root)

    def _path(self, key: str) -> Path:
        return self.root / key[:2] / f"{key}.json"

    def get(self, key: str) -> str | None:
        try:
            return json.loads(self._path(key).read_text(encoding="utf-8"))["response"]
        except (FileNotFoundError, ValueError, KeyError):
            return None

    def put(self, key: str, response: str) -> None:
        path = self._path(key)
        path.parent.mkdir(parents=True, exist_ok=True)
        fd, tmp = tempfile.mkstemp(dir=path.parent, suffix=".tmp")
        with os.fdopen(fd, "w", encoding="utf-8") as f:
            json.dump({"key": key, "response": response}, f, sort_keys=True)
        os.replace(tmp, path)


def cache_key(request: JudgeRequest, images: Sequence[bytes], model_name: str) -> str:
    h = hashlib.sha256()
    header = {"model": model_name, "kind": request.kind, "schema": request.schema_id, "prompt": request.prompt}
    h.update(json.dumps(header, sort_keys=True).encode())
    for img in images:
        h.update(hashlib.sha256(img).digest())
    return h.hexdigest()


@dataclass
class JudgeStats:
    requests: int = 0
    cache_hits: int = 0
    client_calls: int = 0
    network_calls: int = 0
    retries: int = 0
    failures: int = 0

    def to_dict(self) -> dict:
        return dict(self.__dict__)


class Judge:
    """Runs requests through a client with retries, backoff and an optional disk cache."""

    def __init__(self, client: JudgeClient, cache: JudgeCache | str | os.PathLike | None = None,
                 retries: int = DEFAULT_RETRIES, backoff: float = 0.5, sleep=time.sleep):
        self.client = client
        self.cache = JudgeCache(cache) if isinstance(cache, (str, os.PathLike)) else cache
        self.retries = retries
        self.backoff = backoff
        self.stats = JudgeStats()
        self._sleep = sleep
        self._lock = threading.Lock()

    def _count(self, **kw) -> None:
        with self._lock:
            for k, v in kw.items():
                setattr(self.stats, k, getattr(self.stats, k) + v)

    def __call__(self, request: JudgeRequest) -> JudgeResponse:
        images = [Path(f).read_bytes() for f in request.frames]
        model = getattr(self.client, "model_name", "unknown")
        key = cache_key(request, images, model)
        self._count(requests=1)
        if self.cache is not None:
            cached = self.cache.get(key)
            if cached is not None:
                try:
                    resp = parse_response(request.kind, cached)
                except JudgeSchemaError:
                    pass
                else:
                    self._count(cache_hits=1)
                    return resp
        last: JudgeError | None = None
        for attempt in range(self.retries + 1):
            if attempt:
                self._count(retries=1)
                self._sleep(self.backoff * 2 ** (attempt - 1))
            self._count(client_calls=1, network_calls=1 if getattr(self.client, "remote", False) else 0)
            try:
                text = self.client.complete(request, images)
                resp = parse_response(request.kind, text)
            except JudgeError as exc:
                log.debug("judge attempt %d for %s/%s failed: %s", attempt + 1, request.case_id, request.kind, exc)
                last = exc
                continue
            if self.cache is not None:
                self.cache.put(key, text)
            return resp
        self._count(failures=1)
        assert last is not None
        raise type(last)(f"{request.kind} judgement failed after {self.retries + 1} attempts: {last}")


def judge(request: JudgeRequest, client: JudgeClient, cache=None, retries: int = DEFAULT_RETRIES,
          backoff: float = 0.5) -> JudgeResponse:
    return Judge(client, cache, retries, backoff)(request)


def consistency_request(kind: str, video_dir: str | os.PathLike, n: int = DEFAULT_SAMPLES,
                        case_id: str = "", context: dict | None = None) -> JudgeRequest:
    frames = sample_frames(video_dir, n)
    ctx = {"num_frames": len(frames), **(context or {})}
    return JudgeRequest(kind, tuple(frames), build_prompt(kind, ctx), case_id=case_id, context=ctx)


def analyze_scene(image_ref: str | os.PathLike, client: JudgeClient | Judge, context: dict | None = None,
                  case_id: str = "") -> SceneConstraintReport:
    """Ask the judge which translation axes the starting image rules out."""
    ctx = dict(context or {})
    request = JudgeRequest("scene_analysis", (Path(image_ref),), build_prompt("scene_analysis", ctx),
                           case_id=case_id, context=ctx)
    runner = client if isinstance(client, Judge) else Judge(client)
    resp = runner(request)
    assert resp.scene is not None
    return resp.scene
