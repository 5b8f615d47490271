"""Text-generation backends.

Two implementations share one ``generate(request)`` surface:

* :class:`ScriptedBackend` replays fixed responses keyed by a conversation
  fingerprint; it never touches the network and is what tests run against.
* :class:`ChatCompletionsBackend` posts to an OpenAI-style
  ``/v1/chat/completions`` endpoint.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import random
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Iterable, Protocol

import httpx

from .errors import BackendError, NoScriptMatch, ProtocolError, RateLimited, Timeout

logger = logging.getLogger(__name__)

API_KEY_ENV = "ORCHESTRA_API_KEY"
BASE_URL_ENV = "ORCHESTRA_BASE_URL"
MAX_STOP_BYTES = 64
ROLES = ("system", "user", "assistant")


@dataclass(frozen=True)
class GenerationRequest:
    messages: tuple[dict[str, str], ...]
    temperature: float = 0.0
    seed: int | None = None
    stop_sequences: tuple[str, ...] = ()
    max_tokens: int = 1024

    def __post_init__(self) -> None:
        if not self.messages:
            raise ValueError("a generation request needs at least one message")
        for msg in self.messages:
            if msg.get("role") not in ROLES or not isinstance(msg.get("content"), str):
                raise ValueError(f"malformed message {msg!r}")
        for stop in self.stop_sequences:
            if len(stop.encode("utf-8")) > MAX_STOP_BYTES:
                raise ValueError(f"stop sequence longer than {MAX_STOP_BYTES} bytes: {stop!r}")
        if self.max_tokens <= 0:
            raise ValueError("max_tokens must be positive")


@dataclass(frozen=True)
class GenerationResult:
    text: str
    stop_reason: str  # "stop_sequence" | "length" | "end"
    matched_stop: str | None = None
    usage: dict[str, int] = field(default_factory=dict)


class Backend(Protocol):
    def generate(self, request: GenerationRequest) -> GenerationResult: ...


def apply_stop(text: str, stops: Iterable[str]) -> GenerationResult:
    """Cut ``text`` before the earliest stop sequence, if any occurs."""
    best: tuple[int, str] | None = None
    for stop in stops:
        if not stop:
            continue
        pos = text.find(stop)
        if pos >= 0 and (best is None or pos < best[0]):
            best = (pos, stop)
    if best is None:
        return GenerationResult(text=text, stop_reason="end")
    return GenerationResult(text=text[: best[0]], stop_reason="stop_sequence", matched_stop=best[1])


# --- scripted ------------------------------------------------------------------


def fingerprint(last_content: str, step: int) -> str:
    """Key for a scripted turn: the last non-system message and the turn count."""
    blob = json.dumps([last_content, step], ensure_ascii=False)
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:32]


def request_fingerprint(request: GenerationRequest) -> str:
    convo = [m for m in request.messages if m["role"] != "system"]
    last = convo[-1]["content"] if convo else ""
    step = sum(1 for m in request.messages if m["role"] == "assistant")
    return fingerprint(last, step)


@dataclass(frozen=True)
class ScriptEntry:
    match: str
    response: str
    # Entries with a seed only answer requests carrying that seed, letting one
    # script drive distinct trajectories of the same question.
    seed: int | None = None

    @classmethod
    def turn(cls, last: str, step: int, response: str, seed: int | None = None) -> "ScriptEntry":
        return cls(match=fingerprint(last, step), response=response, seed=seed)

    def to_json(self) -> str:
        data: dict[str, Any] = {"match": self.match, "response": self.response}
        if self.seed is not None:
            data["seed"] = self.seed
        return json.dumps(data, ensure_ascii=False)


class ScriptedBackend:
    """Deterministic stand-in for a language model."""

    def __init__(self, entries: Iterable[ScriptEntry] = ()):
        self._table: dict[tuple[str, int | None], str] = {}
        self.calls: list[GenerationRequest] = []
        self._lock = threading.Lock()
        for entry in entries:
            self.add(entry)

    def add(self, entry: ScriptEntry) -> None:
        key = (entry.match, entry.seed)
        if key in self._table:
            raise ValueError(f"duplicate script fingerprint {entry.match} (seed {entry.seed})")
        self._table[key] = entry.response

    def __len__(self) -> int:
        return len(self._table)

    @classmethod
    def from_file(cls, path: str | Path) -> "ScriptedBackend":
        entries = []
        with open(path, encoding="utf-8") as fh:
            for lineno, raw in enumerate(fh, start=1):
                if not raw.strip():
                    continue
                try:
                    data = json.loads(raw)
                    if "match" in data:
                        match = data["match"]
                    else:
                        match = fingerprint(data["last"], int(data["step"]))
                    entries.append(ScriptEntry(match=match, response=data["response"], seed=data.get("seed")))
                except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                    raise ValueError(f"{path}:{lineno}: bad script entry: {exc}") from exc
        return cls(entries)

    def generate(self, request: GenerationRequest) -> GenerationResult:
        with self._lock:
            self.calls.append(request)
        fp = request_fingerprint(request)
        response = self._table.get((fp, request.seed))
        if response is None:
            response = self._table.get((fp, None))
        if response is None:
            raise NoScriptMatch(f"no scripted response for fingerprint {fp} (seed {request.seed})")
        return apply_stop(response, request.stop_sequences)

    def available(self) -> bool:
        return True


# --- HTTP ----------------------------------------------------------------------


class ChatCompletionsBackend:
    """Client for an OpenAI-compatible chat-completions endpoint."""

    # Providers commonly cap the stop list at four entries.
    max_stop_sequences = 4

    def __init__(
        self,
        model: str,
        base_url: str | None = None,
        api_key: str | None = None,
        timeout_s: float = 120.0,
        client: httpx.Client | None = None,
        send_seed: bool = True,
    ):
        self.model = model
        self.base_url = (base_url or os.environ.get(BASE_URL_ENV) or "http://localhost:8000").rstrip("/")
        self.api_key = api_key if api_key is not None else os.environ.get(API_KEY_ENV)
        self.timeout_s = timeout_s
        self.send_seed = send_seed
        self._client = client or httpx.Client(timeout=timeout_s)

    @property
    def url(self) -> str:
        return f"{self.base_url}/v1/chat/completions"

    def _headers(self) -> dict[str, str]:
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        return headers

    def payload(self, request: GenerationRequest) -> dict[str, Any]:
        body: dict[str, Any] = {
            "model": self.model,
            "messages": [dict(m) for m in request.messages],
            "temperature": request.temperature,
            "max_tokens": request.max_tokens,
        }
        if request.stop_sequences:
            body["stop"] = list(request.stop_sequences)
        if self.send_seed and request.seed is not None:
            body["seed"] = request.seed
        return body

    def generate(self, request: GenerationRequest) -> GenerationResult:
        try:
            resp = self._client.post(self.url, json=self.payload(request), headers=self._headers())
        except httpx.TimeoutException as exc:
            raise Timeout(f"request to {self.url} timed out") from exc
        except httpx.HTTPError as exc:
            raise ProtocolError(f"transport error talking to {self.url}: {exc}") from exc

        if resp.status_code == 429:
            raise RateLimited(f"rate limited by {self.url}", retry_after=_retry_after(resp))
        if resp.status_code in (408, 504):
            raise Timeout(f"upstream timeout ({resp.status_code})")
        if resp.status_code >= 400:
            raise ProtocolError(f"HTTP {resp.status_code}: {resp.text[:500]}")
        try:
            data = resp.json()
            choice = data["choices"][0]
            text = choice["message"]["content"] or ""
        except (ValueError, KeyError, IndexError, TypeError) as exc:
            raise ProtocolError(f"malformed completion response: {exc}") from exc
        finish = choice.get("finish_reason")
        usage = {k: v for k, v in (data.get("usage") or {}).items() if isinstance(v, int)}

        # Providers strip the matched stop sequence but do not say which one
        # matched; re-scan so callers still see stop-sequence semantics.
        cut = apply_stop(text, request.stop_sequences)
        if cut.stop_reason == "stop_sequence":
            return GenerationResult(cut.text, "stop_sequence", cut.matched_stop, usage)
        if finish == "length":
            return GenerationResult(text, "length", None, usage)
        if finish == "stop" and request.stop_sequences:
            return GenerationResult(text, "stop_sequence", None, usage)
        return GenerationResult(text, "end", None, usage)

    def available(self) -> bool:
        try:
            resp = self._client.get(f"{self.base_url}/v1/models", headers=self._headers(), timeout=5.0)
        except httpx.HTTPError:
            return False
        return resp.status_code < 500


def _retry_after(resp: httpx.Response) -> float | None:
    value = resp.headers.get("retry-after")
    if value is None:
        return None
    try:
        return max(0.0, float(value))
    except ValueError:
        return None


# --- retry -----------------------------------------------------------------------


@dataclass(frozen=True)
class RetryPolicy:
    max_attempts: int = 3
    base_delay: float = 1.0
    multiplier: float = 2.0
    max_delay: float = 60.0
    jitter: float = 0.0

    def delay(self, attempt: int) -> float:
        """Backoff before retry number ``attempt`` (1-based)."""
        d = min(self.max_delay, self.base_delay * self.multiplier ** (attempt - 1))
        if self.jitter:
            d += random.uniform(0, self.jitter)
        return d


def with_retry(
    backend: Backend,
    request: GenerationRequest,
    policy: RetryPolicy = RetryPolicy(),
    sleep: Callable[[float], None] = time.sleep,
) -> GenerationResult:
    """Call ``backend.generate``, retrying Timeout and RateLimited with backoff."""
    attempt = 0
    while True:
        attempt += 1
        try:
            return backend.generate(request)
        except BackendError as exc:
            if not exc.retryable or attempt >= policy.max_attempts:
                raise
            delay = policy.delay(attempt)
            if isinstance(exc, RateLimited) and exc.retry_after is not None:
                delay = max(delay, exc.retry_after)
            logger.warning("generation attempt %d failed (%s); retrying in %.2fs", attempt, exc, delay)
            sleep(delay)


class RetryingBackend:
    """Wraps a backend so every generate call goes through :func:`with_retry`."""

    def __init__(self, inner: Backend, policy: RetryPolicy = RetryPolicy(), sleep: Callable[[float], None] = time.sleep):
        self.inner = inner
        self.policy = policy
        self._sleep = sleep

    @property
    def max_stop_sequences(self) -> int | None:
        return getattr(self.inner, "max_stop_sequences", None)

    def generate(self, request: GenerationRequest) -> GenerationResult:
        return with_retry(self.inner, request, self.policy, self._sleep)

    def available(self) -> bool:
        probe = getattr(self.inner, "available", None)
        return probe() if probe else True
