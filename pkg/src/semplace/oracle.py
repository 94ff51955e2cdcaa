"""Semantic oracles: the stand-ins for an LLM answering rendered prompts.

All oracles expose ``__call__(prompt, output_type, template) -> str`` and return
raw text; the executor parses it into the typed result.
"""

from __future__ import annotations

import hashlib
import json
import os
import time
import urllib.error
import urllib.request
from dataclasses import dataclass, field
from pathlib import Path
from typing import Protocol


class OracleError(RuntimeError):
    """The oracle could not answer (after retries, for remote oracles)."""


class SemanticOracle(Protocol):
    def __call__(self, prompt: str, output_type: str, template: str) -> str: ...


def prompt_hash(seed: int, prompt: str) -> float:
    """Stable hash of ``(seed, prompt)`` mapped to [0, 1)."""
    digest = hashlib.blake2b(f"{seed}\x00{prompt}".encode(), digest_size=8).digest()
    return int.from_bytes(digest, "big") / 2.0**64


def mock_oracle_eval(prompt: str, seed: int, target_selectivity: float, output_type: str = "boolean",
                     int_range: tuple[int, int] = (1, 5)) -> bool | int | str:
    """Deterministic typed answer for ``prompt``; booleans accept with the target rate."""
    u = prompt_hash(seed, prompt)
    if output_type == "boolean":
        return u < target_selectivity
    if output_type == "integer":
        lo, hi = int_range
        return lo + min(int(u * (hi - lo + 1)), hi - lo)
    return f"label-{int(u * 2**32):08x}"


@dataclass
class MockOracle:
    """Seeded-hash oracle. ``selectivities`` maps a template to its own rate."""

    seed: int = 0
    selectivity: float = 0.2
    selectivities: dict[str, float] = field(default_factory=dict)
    latency: float = 0.0  # seconds slept per call
    int_range: tuple[int, int] = (1, 5)

    def __post_init__(self):
        for s in [self.selectivity, *self.selectivities.values()]:
            if not 0.0 <= s <= 1.0:
                raise ValueError(f"selectivity {s} outside [0, 1]")

    def target(self, template: str) -> float:
        return self.selectivities.get(template, self.selectivity)

    def __call__(self, prompt: str, output_type: str, template: str = "") -> str:
        if self.latency > 0:
            time.sleep(self.latency)
        value = mock_oracle_eval(prompt, self.seed, self.target(template), output_type, self.int_range)
        if output_type == "boolean":
            return "YES" if value else "NO"
        return str(value)


@dataclass
class RecordedOracle:
    """Replays answers from a prompt -> text mapping (or a JSON file of one)."""

    answers: dict[str, str]

    @classmethod
    def from_file(cls, path: str | os.PathLike) -> RecordedOracle:
        return cls(json.loads(Path(path).read_text(encoding="utf-8")))

    def __call__(self, prompt: str, output_type: str, template: str = "") -> str:
        try:
            return self.answers[prompt]
        except KeyError:
            raise OracleError(f"no recorded answer for prompt {prompt[:60]!r}") from None


_INSTRUCTIONS = {
    "boolean": "Answer strictly YES or NO.",
    "integer": "Answer with a single integer and nothing else.",
    "text": "Answer concisely.",
}


@dataclass
class RemoteOracle:
    """Chat-completions-shaped JSON over HTTP.

    Endpoint, model and key default to ``SEMPLACE_LLM_ENDPOINT``,
    ``SEMPLACE_LLM_MODEL`` and ``SEMPLACE_LLM_API_KEY``.
    """

    endpoint: str | None = None
    model: str | None = None
    api_key: str | None = None
    timeout: float = 30.0
    retries: int = 3
    backoff: float = 0.5

    def __post_init__(self):
        self.endpoint = self.endpoint or os.environ.get("SEMPLACE_LLM_ENDPOINT")
        self.model = self.model or os.environ.get("SEMPLACE_LLM_MODEL", "gpt-4o-mini")
        self.api_key = self.api_key or os.environ.get("SEMPLACE_LLM_API_KEY")
        if not self.endpoint:
            raise OracleError("remote oracle needs an endpoint (set SEMPLACE_LLM_ENDPOINT)")

    def __call__(self, prompt: str, output_type: str, template: str = "") -> str:
        body = json.dumps({
            "model": self.model,
            "temperature": 0,
            "messages": [
                {"role": "system", "content": _INSTRUCTIONS.get(output_type, _INSTRUCTIONS["text"])},
                {"role": "user", "content": prompt},
            ],
        }).encode()
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        last: Exception | None = None
        for attempt in range(self.retries):
            try:
                req = urllib.request.Request(self.endpoint, data=body, headers=headers, method="POST")
                with urllib.request.urlopen(req, timeout=self.timeout) as resp:
                    payload = json.loads(resp.read().decode())
                return payload["choices"][0]["message"]["content"]
            except (urllib.error.URLError, TimeoutError, KeyError, IndexError, ValueError) as e:
                last = e
                if attempt + 1 < self.retries:
                    time.sleep(self.backoff * 2**attempt)
        raise OracleError(f"remote oracle failed after {self.retries} attempts: {last}")


def oracle_from_spec(spec: str) -> SemanticOracle:
    """Build an oracle from ``mode[:key=value,...]``.

    ``mock:seed=42,sel=0.2,latency_ms=10``, ``recorded:path=answers.json``,
    ``remote:model=...,endpoint=...``.
    """
    mode, _, rest = spec.partition(":")
    opts: dict[str, str] = {}
    for part in filter(None, rest.split(",")):
        key, eq, value = part.partition("=")
        if not eq:
            raise ValueError(f"bad oracle option {part!r}")
        opts[key.strip()] = value.strip()
    if mode == "mock":
        known = {"seed", "sel", "latency_ms"}
        if set(opts) - known:
            raise ValueError(f"unknown mock oracle options {sorted(set(opts) - known)}")
        return MockOracle(
            seed=int(opts.get("seed", 0)),
            selectivity=float(opts.get("sel", 0.2)),
            latency=float(opts.get("latency_ms", 0)) / 1000.0,
        )
    if mode == "recorded":
        if "path" not in opts:
            raise ValueError("recorded oracle needs path=")
        return RecordedOracle.from_file(opts["path"])
    if mode == "remote":
        return RemoteOracle(endpoint=opts.get("endpoint"), model=opts.get("model"),
                            timeout=float(opts.get("timeout", 30)))
    raise ValueError(f"unknown oracle mode {mode!r}")
