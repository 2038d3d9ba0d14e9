"""Chat-completion backends: live OpenAI-compatible HTTP, scripted mock, and
record/replay over an append-only JSON-lines store.

Every backend exposes ``model`` and ``complete(request) -> ChatExchange``.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
import os
import re
import threading
import time
from collections.abc import Callable, Iterable, Sequence
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Literal, Protocol

import httpx

log = logging.getLogger(__name__)

Role = Literal["system", "user", "assistant"]
ROLES = ("system", "user", "assistant")

DETECTOR_TEMPERATURE = 0.7
FINAL_TEMPERATURE = 0.0
DEFAULT_CONCURRENCY = 4


class GatewayError(RuntimeError):
    pass


class BackendUnavailable(GatewayError):
    """Live call failed after all retry attempts."""


class ReplayMiss(GatewayError):
    def __init__(self, digest: str):
        super().__init__(f"replay store has no response for request digest {digest}")
        self.digest = digest


class ScriptExhausted(GatewayError):
    pass


class NetworkForbidden(GatewayError):
    """Raised by the offline guard backend used in replay-strict mode."""


@dataclass(frozen=True)
class Message:
    role: Role
    content: str

    def __post_init__(self) -> None:
        if self.role not in ROLES:
            raise ValueError(f"role must be one of {ROLES}, got {self.role!r}")


@dataclass(frozen=True)
class ChatRequest:
    model: str
    messages: tuple[Message, ...]
    temperature: float = FINAL_TEMPERATURE
    max_output_tokens: int = 1024
    sample_tag: str = ""

    def __post_init__(self) -> None:
        msgs = tuple(m if isinstance(m, Message) else Message(*m) for m in self.messages)
        object.__setattr__(self, "messages", msgs)
        if not msgs:
            raise ValueError("a chat request needs at least one message")
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")
        if self.max_output_tokens <= 0:
            raise ValueError("max_output_tokens must be positive")

    @classmethod
    def user(cls, model: str, prompt: str, **kw: Any) -> ChatRequest:
        return cls(model, (Message("user", prompt),), **kw)

    def to_json(self) -> dict[str, Any]:
        return {
            "model": self.model,
            "messages": [{"role": m.role, "content": m.content} for m in self.messages],
            "temperature": self.temperature,
            "max_output_tokens": self.max_output_tokens,
            "sample_tag": self.sample_tag,
        }

    @classmethod
    def from_json(cls, obj: dict[str, Any]) -> ChatRequest:
        return cls(
            obj["model"],
            tuple(Message(m["role"], m["content"]) for m in obj["messages"]),
            obj["temperature"],
            obj["max_output_tokens"],
            obj.get("sample_tag", ""),
        )


@dataclass(frozen=True)
class Usage:
    prompt_tokens: int = 0
    completion_tokens: int = 0

    def __post_init__(self) -> None:
        if self.prompt_tokens < 0 or self.completion_tokens < 0:
            raise ValueError("token counts must be >= 0")

    @property
    def total(self) -> int:
        return self.prompt_tokens + self.completion_tokens

    def __add__(self, other: Usage) -> Usage:
        return Usage(self.prompt_tokens + other.prompt_tokens, self.completion_tokens + other.completion_tokens)


def sum_usage(items: Iterable[Usage]) -> Usage:
    total = Usage()
    for u in items:
        total = total + u
    return total


@dataclass(frozen=True)
class ChatExchange:
    request: ChatRequest
    response_text: str
    usage: Usage
    origin: Literal["live", "replay", "mock"]


class Backend(Protocol):
    model: str

    def complete(self, request: ChatRequest) -> ChatExchange: ...


def complete(backend: Backend, request: ChatRequest) -> ChatExchange:
    return backend.complete(request)


# -- token accounting and digests -------------------------------------------------

_TOKEN_RE = re.compile(r"\w+|[^\w\s]+")


def count_tokens(text: str) -> int:
    """Approximate token count: word runs plus punctuation marks, times 4/3."""
    n = len(_TOKEN_RE.findall(text))
    # integer ceil keeps the result exact for large n
    return -(-4 * n // 3)


def prompt_tokens(request: ChatRequest) -> int:
    return sum(count_tokens(m.content) for m in request.messages)


def request_digest(request: ChatRequest) -> str:
    payload = {
        "model": request.model,
        "messages": [[m.role, m.content] for m in request.messages],
        "temperature": float(request.temperature),
        "sample_tag": request.sample_tag,
    }
    blob = json.dumps(payload, sort_keys=True, ensure_ascii=False, separators=(",", ":"))
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


# -- mock ---------------------------------------------------------------------------

Responder = Callable[[ChatRequest], "str | BaseException"]


class MockBackend:
    """Scripted backend.

    ``script`` is either a sequence consumed in call order (entries may be
    exceptions, which are raised) or a callable mapping a request to a reply.
    Usage is estimated with :func:`count_tokens`.
    """

    def __init__(self, script: Sequence[str | BaseException] | Responder, model: str = "mock"):
        self.model = model
        self._lock = threading.Lock()
        self._script = script if callable(script) else list(script)
        self._pos = 0
        self.calls: list[ChatRequest] = []

    @property
    def scripted(self) -> bool:
        return not callable(self._script)

    def complete(self, request: ChatRequest) -> ChatExchange:
        with self._lock:
            self.calls.append(request)
            if callable(self._script):
                reply = self._script(request)
            else:
                if self._pos >= len(self._script):
                    raise ScriptExhausted(f"mock script exhausted after {len(self._script)} responses")
                reply = self._script[self._pos]
                self._pos += 1
        if isinstance(reply, BaseException):
            raise reply
        return ChatExchange(request, reply, Usage(prompt_tokens(request), count_tokens(reply)), "mock")


class OfflineBackend:
    """Refuses every call; stands in for the network in replay-strict runs."""

    def __init__(self, model: str = "offline"):
        self.model = model

    def complete(self, request: ChatRequest) -> ChatExchange:
        raise NetworkForbidden(f"network call attempted in offline mode (digest {request_digest(request)})")


# -- live HTTP ------------------------------------------------------------------------


class OpenAIBackend:
    """Chat-completions client for hosted APIs and local inference servers."""

    RETRY_STATUS = {408, 409, 429, 500, 502, 503, 504}

    def __init__(
        self,
        base_url: str,
        model: str,
        api_key: str | None = None,
        api_key_env: str | None = "OPENAI_API_KEY",
        max_attempts: int = 3,
        backoff: float = 1.0,
        max_backoff: float = 20.0,
        timeout: float = 120.0,
        max_concurrency: int = DEFAULT_CONCURRENCY,
        transport: httpx.BaseTransport | None = None,
    ):
        if api_key is None and api_key_env:
            api_key = os.environ.get(api_key_env)
        headers = {"Authorization": f"Bearer {api_key}"} if api_key else {}
        self.model = model
        self.max_attempts = max_attempts
        self.backoff = backoff
        self.max_backoff = max_backoff
        self._slots = threading.BoundedSemaphore(max_concurrency)
        self._client = httpx.Client(base_url=base_url.rstrip("/"), headers=headers, timeout=timeout, transport=transport)

    def _payload(self, request: ChatRequest) -> dict[str, Any]:
        return {
            "model": request.model,
            "messages": [{"role": m.role, "content": m.content} for m in request.messages],
            "temperature": request.temperature,
            "max_tokens": request.max_output_tokens,
        }

    def complete(self, request: ChatRequest) -> ChatExchange:
        last: Exception | None = None
        for attempt in range(1, self.max_attempts + 1):
            try:
                with self._slots:
                    resp = self._client.post("/chat/completions", json=self._payload(request))
                if resp.status_code in self.RETRY_STATUS:
                    raise httpx.HTTPStatusError(f"status {resp.status_code}", request=resp.request, response=resp)
                resp.raise_for_status()
                body = resp.json()
                text = body["choices"][0]["message"]["content"] or ""
                usage_obj = body.get("usage") or {}
                usage = Usage(
                    int(usage_obj.get("prompt_tokens", prompt_tokens(request))),
                    int(usage_obj.get("completion_tokens", count_tokens(text))),
                )
                return ChatExchange(request, text, usage, "live")
            except httpx.HTTPStatusError as exc:
                if exc.response.status_code not in self.RETRY_STATUS:
                    raise BackendUnavailable(f"request rejected: {exc.response.status_code} {exc.response.text[:200]}") from exc
                last = exc
            except (httpx.TransportError, ValueError, KeyError) as exc:
                last = exc
            if attempt < self.max_attempts:
                delay = min(self.backoff * 2 ** (attempt - 1), self.max_backoff)
                log.warning("chat call failed (%s), retry %d/%d in %.1fs", last, attempt, self.max_attempts - 1, delay)
                time.sleep(delay)
        raise BackendUnavailable(f"chat call failed after {self.max_attempts} attempts: {last}") from last

    def close(self) -> None:
        self._client.close()


# -- record / replay --------------------------------------------------------------------


@dataclass
class ReplayStore:
    """Append-only JSON-lines store of (digest, request, response, usage)."""

    path: Path
    _entries: dict[str, dict[str, Any]] = field(default_factory=dict, init=False, repr=False)
    _lock: threading.Lock = field(default_factory=threading.Lock, init=False, repr=False)

    def __post_init__(self) -> None:
        self.path = Path(self.path)
        if self.path.exists():
            with open(self.path, encoding="utf-8") as fh:
                for line in fh:
                    if line.strip():
                        entry = json.loads(line)
                        self._entries.setdefault(entry["digest"], entry)

    def __len__(self) -> int:
        return len(self._entries)

    def __contains__(self, digest: str) -> bool:
        return digest in self._entries

    def get(self, digest: str) -> dict[str, Any] | None:
        return self._entries.get(digest)

    def put(self, exchange: ChatExchange) -> None:
        digest = request_digest(exchange.request)
        entry = {
            "digest": digest,
            "request": exchange.request.to_json(),
            "response": exchange.response_text,
            "usage": {"prompt_tokens": exchange.usage.prompt_tokens, "completion_tokens": exchange.usage.completion_tokens},
        }
        with self._lock:
            if digest in self._entries:
                return
            self._entries[digest] = entry
            self.path.parent.mkdir(parents=True, exist_ok=True)
            with open(self.path, "a", encoding="utf-8") as fh:
                fh.write(json.dumps(entry, ensure_ascii=False) + "\n")


class ReplayBackend:
    """Serve responses from a :class:`ReplayStore`.

    Strict mode raises :class:`ReplayMiss` on any unknown request. Otherwise a
    miss is forwarded to ``inner`` and recorded.
    """

    def __init__(self, store: ReplayStore, inner: Backend | None = None, strict: bool = True, model: str | None = None):
        if not strict and inner is None:
            raise ValueError("non-strict replay needs an inner backend to record from")
        self.store = store
        self.inner = inner
        self.strict = strict
        self.model = model or (inner.model if inner is not None else "replay")

    def complete(self, request: ChatRequest) -> ChatExchange:
        digest = request_digest(request)
        entry = self.store.get(digest)
        if entry is not None:
            u = entry["usage"]
            return ChatExchange(request, entry["response"], Usage(u["prompt_tokens"], u["completion_tokens"]), "replay")
        if self.strict:
            raise ReplayMiss(digest)
        assert self.inner is not None
        exchange = self.inner.complete(request)
        self.store.put(exchange)
        return exchange
