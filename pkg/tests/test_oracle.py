from __future__ import annotations

import hashlib
import json
import threading
from http.server import BaseHTTPRequestHandler, HTTPServer

import pytest
from hypothesis import given
from hypothesis import strategies as st

from semplace.oracle import (
    MockOracle,
    OracleError,
    RecordedOracle,
    RemoteOracle,
    mock_oracle_eval,
    oracle_from_spec,
    prompt_hash,
)


def reference_hash(seed: int, prompt: str) -> float:
    d = hashlib.blake2b(f"{seed}\x00{prompt}".encode(), digest_size=8).digest()
    return int.from_bytes(d, "big") / 2.0**64


@given(st.integers(0, 2**31), st.text(max_size=40))
def test_deterministic(seed, prompt):
    assert mock_oracle_eval(prompt, seed, 0.3) == mock_oracle_eval(prompt, seed, 0.3)
    assert prompt_hash(seed, prompt) == reference_hash(seed, prompt)
    assert 0.0 <= prompt_hash(seed, prompt) < 1.0


def test_acceptance_rate_on_ten_thousand_prompts():
    prompts = [f"review #{i} is positive?" for i in range(10_000)]
    accepted = sum(mock_oracle_eval(p, 42, 0.2) for p in prompts)
    assert abs(accepted / 10_000 - 0.2) <= 0.02


def test_seeds_decorrelate():
    p = 0.5
    prompts = [f"p{i}" for i in range(10_000)]
    agree = sum(mock_oracle_eval(x, 1, p) == mock_oracle_eval(x, 2, p) for x in prompts) / len(prompts)
    expected = p * p + (1 - p) * (1 - p)
    assert abs(agree - expected) < 0.03


def test_extreme_targets():
    assert not any(mock_oracle_eval(f"x{i}", 0, 0.0) for i in range(500))
    assert all(mock_oracle_eval(f"x{i}", 0, 1.0) for i in range(500))


def test_typed_outputs():
    vals = {mock_oracle_eval(f"x{i}", 0, 0.2, "integer") for i in range(500)}
    assert vals == {1, 2, 3, 4, 5}
    assert mock_oracle_eval("x", 0, 0.2, "text").startswith("label-")


def test_mock_oracle_text_and_per_template_rate():
    o = MockOracle(seed=3, selectivity=0.0, selectivities={"T {a.b}": 1.0})
    assert o("anything", "boolean", "other") == "NO"
    assert o("anything", "boolean", "T {a.b}") == "YES"
    with pytest.raises(ValueError):
        MockOracle(selectivity=1.5)


def test_recorded_oracle(tmp_path):
    path = tmp_path / "answers.json"
    path.write_text(json.dumps({"q": "YES"}))
    o = oracle_from_spec(f"recorded:path={path}")
    assert o("q", "boolean") == "YES"
    with pytest.raises(OracleError):
        RecordedOracle({})("q", "boolean")


def test_oracle_spec_parsing():
    o = oracle_from_spec("mock:seed=9,sel=0.4,latency_ms=0")
    assert isinstance(o, MockOracle) and o.seed == 9 and o.selectivity == 0.4
    for bad in ("mock:bogus=1", "mock:seed", "telepathy", "recorded:"):
        with pytest.raises(ValueError):
            oracle_from_spec(bad)


class _Flaky(BaseHTTPRequestHandler):
    failures = 0
    seen = []

    def do_POST(self):
        body = json.loads(self.rfile.read(int(self.headers["Content-Length"])))
        type(self).seen.append(body)
        if type(self).failures > 0:
            type(self).failures -= 1
            self.send_response(503)
            self.end_headers()
            return
        payload = json.dumps({"choices": [{"message": {"content": "YES"}}]}).encode()
        self.send_response(200)
        self.send_header("Content-Type", "application/json")
        self.end_headers()
        self.wfile.write(payload)

    def log_message(self, *args):
        pass


@pytest.fixture
def flaky_server():
    server = HTTPServer(("127.0.0.1", 0), _Flaky)
    t = threading.Thread(target=server.serve_forever, daemon=True)
    t.start()
    yield server
    server.shutdown()


def test_remote_oracle_retries_then_succeeds(flaky_server):
    _Flaky.failures, _Flaky.seen = 2, []
    url = f"http://127.0.0.1:{flaky_server.server_port}/v1"
    o = RemoteOracle(endpoint=url, retries=3, backoff=0.0, timeout=5)
    assert o("Is it good?", "boolean") == "YES"
    assert len(_Flaky.seen) == 3
    assert _Flaky.seen[-1]["messages"][-1]["content"] == "Is it good?"


def test_remote_oracle_gives_up(flaky_server):
    _Flaky.failures, _Flaky.seen = 5, []
    url = f"http://127.0.0.1:{flaky_server.server_port}/v1"
    with pytest.raises(OracleError):
        RemoteOracle(endpoint=url, retries=3, backoff=0.0, timeout=5)("q", "boolean")
    assert len(_Flaky.seen) == 3


def test_remote_oracle_needs_endpoint(monkeypatch):
    monkeypatch.delenv("SEMPLACE_LLM_ENDPOINT", raising=False)
    with pytest.raises(OracleError):
        RemoteOracle()
