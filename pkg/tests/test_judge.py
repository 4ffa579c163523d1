import json
import threading
from http.server import BaseHTTPRequestHandler, HTTPServer

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from PIL import Image

from worldmark.actions import SceneConstraintReport, filter_actions, standard_library
from worldmark.judge import (
    CONSISTENCY_KINDS,
    CRITERION_PHRASES,
    ENV_ENDPOINT,
    ENV_KEY,
    FixedClient,
    HttpClient,
    Judge,
    JudgeError,
    JudgeRequest,
    JudgeSchemaError,
    JudgeTransportError,
    RuleSceneClient,
    ScriptedClient,
    analyze_scene,
    build_prompt,
    consistency_request,
    parse_response,
    sample_indices,
)


def make_frames(path, n=20):
    path.mkdir(parents=True, exist_ok=True)
    for i in range(n):
        Image.fromarray(np.full((8, 8), i * 10, dtype=np.uint8)).save(path / f"{i:05d}.png")
    return path


def make_image(path):
    Image.fromarray(np.zeros((8, 8), dtype=np.uint8)).save(path)
    return path


def test_sample_indices_uniform():
    assert sample_indices(100, 5) == [0, 25, 50, 74, 99]


def test_sample_indices_all_frames_when_equal():
    assert sample_indices(7, 7) == list(range(7))


def test_sample_indices_too_few_frames():
    with pytest.raises(ValueError, match="only 3 frames"):
        sample_indices(3, 5)


@given(st.integers(2, 2000), st.integers(2, 64))
def test_sample_indices_properties(total, n):
    if total < n:
        return
    idx = sample_indices(total, n)
    assert len(idx) == n and idx[0] == 0 and idx[-1] == total - 1
    assert all(a < b for a, b in zip(idx, idx[1:]))


@pytest.mark.parametrize("kind", list(CRITERION_PHRASES))
def test_prompt_carries_criterion(kind):
    text = build_prompt(kind, {"num_frames": 16, "model": "mock"})
    assert CRITERION_PHRASES[kind] in text.lower()
    assert "model=mock" in text
    assert '"rationale"' in text


def test_prompt_empty_context_is_valid():
    for kind in CRITERION_PHRASES:
        text = build_prompt(kind, {})
        assert text.strip() and "Context:" not in text


def test_prompt_unknown_kind():
    with pytest.raises(ValueError):
        build_prompt("vibes")


def test_request_needs_two_frames(tmp_path):
    with pytest.raises(ValueError):
        JudgeRequest("state", (tmp_path / "a.png",), "p")


@pytest.mark.parametrize("text", [
    "not json", "[1, 2]", '{"rationale": "x"}', '{"score": "80"}', '{"score": true}',
    '{"score": 101}', '{"score": -1}', '{"score": NaN}', '{"score": 50, "rationale": 3}',
])
def test_parse_rejects(text):
    with pytest.raises(JudgeSchemaError):
        parse_response("state", text)


def test_parse_scene_requires_booleans():
    with pytest.raises(JudgeSchemaError, match="lateral_blocked"):
        parse_response("scene_analysis", '{"forward_blocked": false, "backward_blocked": false}')
    resp = parse_response("scene_analysis", json.dumps(
        {"forward_blocked": True, "backward_blocked": False, "lateral_blocked": False, "rationale": "wall"}))
    assert resp.scene == SceneConstraintReport(True, False, False, "wall")


def test_fixed_client_score(tmp_path):
    req = consistency_request("state", make_frames(tmp_path / "f"), n=5, case_id="c")
    resp = Judge(FixedClient({"score": 80, "rationale": "steady"}))(req)
    assert resp.score == 80.0 and resp.rationale == "steady"
    assert len(req.frames) == 5


def test_missing_score_uses_retry_then_fails(tmp_path):
    req = consistency_request("content", make_frames(tmp_path / "f"), n=4)
    client = FixedClient({"rationale": "forgot"})
    sleeps = []
    j = Judge(client, retries=2, backoff=0.5, sleep=sleeps.append)
    with pytest.raises(JudgeSchemaError, match="score"):
        j(req)
    assert client.calls == 3
    assert sleeps == [0.5, 1.0]
    assert j.stats.retries == 2 and j.stats.failures == 1


def test_retry_recovers_after_bad_response(tmp_path):
    class Flaky:
        model_name, remote, calls = "flaky", False, 0

        def complete(self, request, images):
            self.calls += 1
            return "garbage" if self.calls == 1 else '{"score": 70}'

    j = Judge(Flaky(), backoff=0.0)
    assert j(consistency_request("style", make_frames(tmp_path / "f"), n=3)).score == 70.0
    assert j.stats.retries == 1 and j.stats.failures == 0


def test_cache_hit_makes_no_calls(tmp_path):
    req = consistency_request("state", make_frames(tmp_path / "f"), n=4)

    client = FixedClient({"score": 90}, remote=True)
    first = Judge(client, cache=tmp_path / "cache")
    assert first(req).score == 90.0
    assert first.stats.network_calls == 1
    second = Judge(client, cache=tmp_path / "cache")
    assert second(req).score == 90.0
    assert second.stats.network_calls == 0 and second.stats.cache_hits == 1
    assert client.calls == 1


def test_cache_key_depends_on_frame_bytes(tmp_path):
    a = make_frames(tmp_path / "a", 4)
    b = make_frames(tmp_path / "b", 4)
    Image.fromarray(np.full((8, 8), 255, dtype=np.uint8)).save(b / "00002.png")
    client = FixedClient({"score": 10})
    j = Judge(client, cache=tmp_path / "cache")
    j(consistency_request("state", a, n=4))
    j(consistency_request("state", b, n=4))
    assert client.calls == 2


def test_scripted_client_lookup(tmp_path):
    frames = make_frames(tmp_path / "f", 4)
    client = ScriptedClient({"c1": {"state": {"score": 61}, "*": {"score": 62}}, "*": {"score": 63}})
    j = Judge(client)
    assert j(consistency_request("state", frames, 4, case_id="c1")).score == 61
    assert j(consistency_request("style", frames, 4, case_id="c1")).score == 62
    assert j(consistency_request("state", frames, 4, case_id="c2")).score == 63
    with pytest.raises(JudgeTransportError):
        Judge(ScriptedClient({}), retries=0)(consistency_request("state", frames, 4, case_id="x"))


def test_rule_scene_client_indoor_blocks_lateral(tmp_path):
    img = make_image(tmp_path / "room.png")
    report = analyze_scene(img, RuleSceneClient(), {"scene": "indoor"})
    assert report.lateral_blocked and not report.forward_blocked
    kept = filter_actions(report, standard_library())
    assert kept == [1, 2, 5, 6, 9, 10, 11, 12, 13, 15]
    outdoor = analyze_scene(img, RuleSceneClient(), {"scene": "outdoor"})
    assert filter_actions(outdoor, standard_library()) == list(range(1, 16))


def test_malformed_response_raises_judge_error(tmp_path):
    req = consistency_request("style", make_frames(tmp_path / "f"), n=3)
    with pytest.raises(JudgeError):
        Judge(FixedClient("{score: 80}"), retries=1, backoff=0.0)(req)


class _Handler(BaseHTTPRequestHandler):
    seen: list = []

    def do_POST(self):
        body = json.loads(self.rfile.read(int(self.headers["Content-Length"])))
        self.seen.append((self.headers.get("Authorization"), body))
        out = json.dumps({"text": json.dumps({"score": 77, "rationale": "ok"})}).encode()
        self.send_response(200)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(out)))
        self.end_headers()
        self.wfile.write(out)

    def log_message(self, *args):
        pass


def test_http_client_reads_credentials_from_env(tmp_path, monkeypatch):
    server = HTTPServer(("127.0.0.1", 0), _Handler)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    try:
        monkeypatch.setenv(ENV_ENDPOINT, f"http://127.0.0.1:{server.server_port}/judge")
        monkeypatch.setenv(ENV_KEY, "sekrit")
        client = HttpClient.from_env("some-vlm")
        j = Judge(client)
        resp = j(consistency_request("state", make_frames(tmp_path / "f"), n=3))
    finally:
        server.shutdown()
    assert resp.score == 77.0
    auth, body = _Handler.seen[-1]
    assert auth == "Bearer sekrit"
    assert body["model"] == "some-vlm" and len(body["images"]) == 3
    assert j.stats.network_calls == 1


def test_http_client_without_endpoint(monkeypatch):
    monkeypatch.delenv(ENV_ENDPOINT, raising=False)
    with pytest.raises(JudgeError, match=ENV_ENDPOINT):
        HttpClient.from_env("x")


def test_http_transport_error_is_retried(tmp_path):
    client = HttpClient("http://127.0.0.1:9/none", "x", timeout=0.5)
    j = Judge(client, retries=1, backoff=0.0)
    with pytest.raises(JudgeTransportError):
        j(consistency_request("state", make_frames(tmp_path / "f"), n=3))
    assert j.stats.client_calls == 2


def test_consistency_kinds():
    assert CONSISTENCY_KINDS == ("state", "content", "style")
