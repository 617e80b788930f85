"""Chat-completion gateway: retries, call accounting and JSON output parsing."""

from __future__ import annotations

import json
import logging
import os
import re
import threading
import time
from collections import defaultdict
from dataclasses import dataclass, replace
from typing import Any, Callable, Protocol

import httpx

from .errors import BackendUnavailable, MalformedOutput, MissingKey, RateLimited, Timeout

log = logging.getLogger(__name__)

TAGS = ("profile", "decompose", "filter", "decide", "evolve", "generate", "judge")

MAX_RETRIES = 3
BACKOFF_BASE_S = 0.25

REPAIR_INSTRUCTION = (
    "Your previous reply could not be used: {problem}\n"
    "Reply again with ONLY one JSON object containing the keys {keys}. No prose, no code fences."
)


@dataclass(frozen=True)
class ChatRequest:
    system_prompt: str
    user_prompt: str
    tag: str
    temperature: float = 0.0
    max_output_chars: int = 8000
    # Groups calls that belong together (one sub-query, one sample); the mock
    # backend counts call indices per (tag, scope).
    scope: str = ""

    def __post_init__(self) -> None:
        if not self.system_prompt or not self.user_prompt:
            raise ValueError("prompts must be non-empty")
        if self.tag not in TAGS:
            raise ValueError(f"unknown tag {self.tag!r}")
        if not 0.0 <= self.temperature <= 2.0:
            raise ValueError("temperature must be in [0, 2]")
        if self.max_output_chars <= 0:
            raise ValueError("max_output_chars must be positive")


@dataclass(frozen=True)
class ChatResponse:
    text: str
    backend_id: str
    latency_ms: int = 0
    truncated: bool = False


class Backend(Protocol):
    backend_id: str

    def send(self, request: ChatRequest) -> ChatResponse: ...


class TransientError(Exception):
    """Raised by backends for failures worth retrying (5xx, connection reset)."""


class CallLedger:
    """Thread-safe per-tag counters. Counts only ever increase."""

    FIELDS = ("calls", "retries", "failures", "repairs")

    def __init__(self, parent: "CallLedger | None" = None):
        self._lock = threading.Lock()
        self._counts: dict[str, dict[str, int]] = {f: defaultdict(int) for f in self.FIELDS}
        self._parent = parent

    def record(self, field: str, tag: str, n: int = 1) -> None:
        with self._lock:
            self._counts[field][tag] += n
        if self._parent is not None:
            self._parent.record(field, tag, n)

    def count(self, field: str = "calls", tag: str | None = None) -> int:
        with self._lock:
            bucket = self._counts[field]
            return sum(bucket.values()) if tag is None else bucket.get(tag, 0)

    def snapshot(self) -> dict[str, dict[str, int]]:
        with self._lock:
            return {f: dict(sorted((k, v) for k, v in self._counts[f].items() if v)) for f in self.FIELDS}

    def child(self) -> "CallLedger":
        """A ledger whose records also roll up into this one."""
        return CallLedger(parent=self)


class HttpBackend:
    """OpenAI-style ``/chat/completions`` endpoint."""

    def __init__(
        self,
        url: str,
        model: str,
        api_key: str | None = None,
        timeout_s: float = 120.0,
        client: httpx.Client | None = None,
    ):
        self.url = url
        self.model = model
        self.backend_id = f"http:{model}"
        headers = {"Content-Type": "application/json"}
        if api_key:
            headers["Authorization"] = f"Bearer {api_key}"
        self._client = client or httpx.Client(timeout=timeout_s)
        self._headers = headers

    @classmethod
    def from_env(cls, url: str, model: str, api_key_env: str | None, **kw: Any) -> "HttpBackend":
        key = os.environ.get(api_key_env) if api_key_env else None
        return cls(url, model, key, **kw)

    def payload(self, request: ChatRequest) -> dict[str, Any]:
        return {
            "model": self.model,
            "messages": [
                {"role": "system", "content": request.system_prompt},
                {"role": "user", "content": request.user_prompt},
            ],
            "temperature": request.temperature,
            # rough chars-per-token ratio for English text
            "max_tokens": max(1, request.max_output_chars // 4),
        }

    def send(self, request: ChatRequest) -> ChatResponse:
        t0 = time.monotonic()
        try:
            resp = self._client.post(self.url, json=self.payload(request), headers=self._headers)
        except httpx.TimeoutException as exc:
            raise Timeout(str(exc)) from exc
        except httpx.TransportError as exc:
            raise TransientError(str(exc)) from exc
        if resp.status_code == 429:
            raise RateLimited(f"HTTP 429 from {self.url}")
        if resp.status_code >= 500:
            raise TransientError(f"HTTP {resp.status_code} from {self.url}")
        if resp.status_code >= 400:
            raise BackendUnavailable(f"HTTP {resp.status_code} from {self.url}: {resp.text[:200]}")
        try:
            choice = resp.json()["choices"][0]
            text = choice["message"]["content"] or ""
        except (ValueError, KeyError, IndexError, TypeError) as exc:
            raise BackendUnavailable(f"unexpected response body from {self.url}") from exc
        latency = int((time.monotonic() - t0) * 1000)
        return ChatResponse(text, self.backend_id, latency, choice.get("finish_reason") == "length")


class Gateway:
    """Sends requests through a backend with bounded retries and accounting.

    Transient failures, timeouts and rate limits are retried ``max_retries``
    times with exponential backoff; the final failure surfaces as
    :class:`BackendUnavailable`, :class:`Timeout` or :class:`RateLimited`.
    """

    def __init__(
        self,
        backend: Backend,
        ledger: CallLedger | None = None,
        max_retries: int = MAX_RETRIES,
        backoff_base_s: float = BACKOFF_BASE_S,
        sleep: Callable[[float], None] = time.sleep,
    ):
        self.backend = backend
        self.ledger = ledger if ledger is not None else CallLedger()
        self.max_retries = max_retries
        self.backoff_base_s = backoff_base_s
        self._sleep = sleep

    def with_ledger(self, ledger: CallLedger) -> "Gateway":
        return Gateway(self.backend, ledger, self.max_retries, self.backoff_base_s, self._sleep)

    def complete(self, request: ChatRequest) -> ChatResponse:
        self.ledger.record("calls", request.tag)
        attempt = 0
        while True:
            try:
                return self.backend.send(request)
            except (TransientError, Timeout, RateLimited) as exc:
                if attempt >= self.max_retries:
                    self.ledger.record("failures", request.tag)
                    if isinstance(exc, (Timeout, RateLimited)):
                        raise
                    raise BackendUnavailable(f"{request.tag}: {exc} (after {attempt} retries)") from exc
                delay = self.backoff_base_s * (2**attempt)
                log.info("retrying %s call in %.2fs: %s", request.tag, delay, exc)
                self.ledger.record("retries", request.tag)
                self._sleep(delay)
                attempt += 1
            except BackendUnavailable:
                self.ledger.record("failures", request.tag)
                raise

    def complete_structured(
        self,
        request: ChatRequest,
        expected_keys: list[tuple[str, str]],
        check: Callable[[dict[str, Any]], None] | None = None,
    ) -> dict[str, Any]:
        """Complete ``request`` and return its first JSON object, validated.

        ``expected_keys`` pairs key names with kinds from :data:`KINDS`; a kind
        ending in ``?`` also accepts null. ``check`` may raise
        :class:`MalformedOutput` for semantic problems. Any failure triggers a
        single repair prompt; a second failure is raised.
        """
        if not expected_keys:
            raise ValueError("expected_keys must be non-empty")
        text = self.complete(request).text
        try:
            return _validated(text, expected_keys, check)
        except MalformedOutput as exc:
            problem = str(exc)
        self.ledger.record("repairs", request.tag)
        keys = ", ".join(name for name, _ in expected_keys)
        repair = replace(
            request,
            user_prompt=request.user_prompt
            + "\n\n---\nPrevious reply:\n"
            + text[:2000]
            + "\n---\n"
            + REPAIR_INSTRUCTION.format(problem=problem, keys=keys),
        )
        return _validated(self.complete(repair).text, expected_keys, check)


KINDS: dict[str, Callable[[Any], bool]] = {
    "bool": lambda v: isinstance(v, bool),
    "str": lambda v: isinstance(v, str),
    "int": lambda v: isinstance(v, int) and not isinstance(v, bool),
    "number": lambda v: isinstance(v, (int, float)) and not isinstance(v, bool),
    "list": lambda v: isinstance(v, list),
    "object": lambda v: isinstance(v, dict),
}

_FENCE = re.compile(r"```(?:json|JSON)?\s*\n?(.*?)```", re.DOTALL)


def extract_json_object(text: str) -> dict[str, Any] | None:
    """First JSON object in ``text``: fenced blocks first, then bare braces."""
    decoder = json.JSONDecoder()
    for block in _FENCE.findall(text):
        block = block.strip()
        if block.startswith("{"):
            try:
                obj, _ = decoder.raw_decode(block)
            except json.JSONDecodeError:
                continue
            if isinstance(obj, dict):
                return obj
    pos = text.find("{")
    while pos != -1:
        try:
            obj, _ = decoder.raw_decode(text, pos)
        except json.JSONDecodeError:
            pass
        else:
            if isinstance(obj, dict):
                return obj
        pos = text.find("{", pos + 1)
    return None


def _validated(
    text: str,
    expected_keys: list[tuple[str, str]],
    check: Callable[[dict[str, Any]], None] | None,
) -> dict[str, Any]:
    obj = extract_json_object(text)
    if obj is None:
        raise MalformedOutput("no JSON object found", raw=text)
    for name, kind in expected_keys:
        optional = kind.endswith("?")
        base = kind.rstrip("?")
        if name not in obj:
            if optional:
                obj[name] = None
                continue
            raise MissingKey(f"missing key {name!r}", raw=text)
        value = obj[name]
        if value is None and optional:
            continue
        if not KINDS[base](value):
            raise MalformedOutput(f"key {name!r} must be {base}", raw=text)
    if check is not None:
        check(obj)
    return obj
