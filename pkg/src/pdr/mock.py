"""Deterministic scripted backend for offline runs and tests."""

from __future__ import annotations

import json
import random
import threading
from collections import defaultdict
from pathlib import Path
from typing import Any, Callable, Mapping, Union

from .errors import BackendUnavailable
from .llm import ChatRequest, ChatResponse

Handler = Callable[[ChatRequest, int, random.Random], str]
ScriptEntry = Union[str, BaseException, list, Handler]


class MockBackend:
    """Answers requests from a script keyed by stage tag.

    Each tag maps to a fixed string, a list of replies (indexed by the call's
    position within its ``(tag, scope)`` pair, the last reply repeating), or a
    callable ``(request, index, rng) -> str``. Exception instances inside a
    list are raised instead of answered. ``rng`` is seeded from
    ``(seed, tag, scope, index)`` so replies never depend on thread timing.
    """

    backend_id = "mock"

    def __init__(self, script: Mapping[str, ScriptEntry], seed: int = 0):
        self.script = dict(script)
        self.seed = seed
        self._lock = threading.Lock()
        self._counters: dict[tuple[str, str], int] = defaultdict(int)
        self.history: list[tuple[ChatRequest, int]] = []

    def send(self, request: ChatRequest) -> ChatResponse:
        with self._lock:
            key = (request.tag, request.scope)
            index = self._counters[key]
            self._counters[key] += 1
            self.history.append((request, index))
        if request.tag not in self.script:
            raise BackendUnavailable(f"mock script has no entry for tag {request.tag!r}")
        entry = self.script[request.tag]
        if isinstance(entry, list):
            if not entry:
                raise BackendUnavailable(f"mock script for {request.tag!r} is empty")
            entry = entry[min(index, len(entry) - 1)]
        if isinstance(entry, BaseException):
            raise entry
        if callable(entry):
            rng = random.Random(f"{self.seed}:{request.tag}:{request.scope}:{index}")
            text = entry(request, index, rng)
        else:
            text = entry
        return ChatResponse(text, self.backend_id, 0)

    def requests(self, tag: str | None = None) -> list[ChatRequest]:
        with self._lock:
            return [r for r, _ in self.history if tag is None or r.tag == tag]


def load_script(path: str | Path) -> dict[str, Any]:
    """Read a JSON script file: ``{tag: reply | [reply, ...]}``.

    Replies that are JSON objects are serialized back to text so scripts can
    be written without escaping.
    """
    raw = json.loads(Path(path).read_text(encoding="utf-8"))
    if not isinstance(raw, dict):
        raise ValueError("mock script must be a JSON object keyed by tag")

    def as_text(v: Any) -> str:
        return v if isinstance(v, str) else json.dumps(v)

    return {tag: [as_text(v) for v in val] if isinstance(val, list) else as_text(val) for tag, val in raw.items()}
