"""Model backends: an OpenAI-compatible HTTP client and a scripted replayer.

Every exploration, expansion, and judging call goes through the same
:class:`ModelRequest`/:class:`ModelResponse` pair, tagged with the pipeline
stage that issued it. Usage accounting is a first-class concern: each backend
owns a :class:`UsageLedger` and per-tag counts must add up exactly, because
the token-cost claims of an exploration run are verified from these numbers.

The scripted backend replays a recorded session and is deliberately strict:
events are consumed in order and each event's matcher must accept the prompt
it is answering, so a drifting prompt or a skipped call fails loudly instead
of silently desynchronizing the test.
"""

from __future__ import annotations

import json
import logging
import os
import threading
import time
from dataclasses import dataclass, field
from enum import Enum

import requests

from .protocol import PromptText

logger = logging.getLogger(__name__)

__all__ = [
    "RequestTag",
    "ModelRequest",
    "ModelResponse",
    "TagUsage",
    "UsageSnapshot",
    "UsageLedger",
    "BackendError",
    "TransportError",
    "HttpStatusError",
    "ScriptMismatchError",
    "ScriptUnderrunError",
    "ScriptEvent",
    "ScriptedBackend",
    "HttpBackendConfig",
    "HttpBackend",
    "load_script",
    "load_script_file",
    "count_text_tokens",
    "default_temperature",
    "DEFAULT_MAX_OUTPUT_TOKENS",
]


class RequestTag(str, Enum):
    DECOMPOSE = "decompose"
    READ = "read"
    CRITIQUE = "critique"
    EXPAND = "expand"
    JUDGE = "judge"
    # evidence re-selection gets its own tag so read-call accounting stays
    # exact when refinement is enabled
    REFINE = "refine"


DEFAULT_MAX_OUTPUT_TOKENS = 512

# expansion is the only sampled stage; everything else decodes greedily
_SAMPLED_TAGS = {RequestTag.EXPAND: 1.0}


def default_temperature(tag: RequestTag) -> float:
    return _SAMPLED_TAGS.get(tag, 0.0)


@dataclass(frozen=True)
class ModelRequest:
    prompt: PromptText
    tag: RequestTag
    max_output_tokens: int = DEFAULT_MAX_OUTPUT_TOKENS
    temperature: float | None = None  # None means the tag's default
    stop_sequences: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        if self.max_output_tokens < 1:
            raise ValueError("max_output_tokens must be at least 1")
        if self.temperature is not None and self.temperature < 0:
            raise ValueError("temperature must be non-negative")

    @property
    def effective_temperature(self) -> float:
        if self.temperature is None:
            return default_temperature(self.tag)
        return self.temperature


@dataclass(frozen=True)
class ModelResponse:
    text: str
    input_tokens: int
    output_tokens: int
    latency_ms: float


def count_text_tokens(text: str) -> int:
    """Whitespace token count: the documented accounting rule for scripted runs."""
    return len(text.split())


# ---------------------------------------------------------------------------
# usage accounting
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TagUsage:
    calls: int = 0
    input_tokens: int = 0
    output_tokens: int = 0


@dataclass(frozen=True)
class UsageSnapshot:
    """Immutable per-tag usage totals taken from a ledger."""

    per_tag: dict[str, TagUsage] = field(default_factory=dict)

    @property
    def total_calls(self) -> int:
        return sum(u.calls for u in self.per_tag.values())

    @property
    def total_input_tokens(self) -> int:
        return sum(u.input_tokens for u in self.per_tag.values())

    @property
    def total_output_tokens(self) -> int:
        return sum(u.output_tokens for u in self.per_tag.values())

    def tag(self, tag: RequestTag | str) -> TagUsage:
        key = tag.value if isinstance(tag, RequestTag) else tag
        return self.per_tag.get(key, TagUsage())

    def to_dict(self) -> dict:
        return {
            key: {
                "calls": usage.calls,
                "input_tokens": usage.input_tokens,
                "output_tokens": usage.output_tokens,
            }
            for key, usage in sorted(self.per_tag.items())
        }

    @classmethod
    def from_dict(cls, data: dict) -> "UsageSnapshot":
        return cls(
            per_tag={
                key: TagUsage(
                    calls=entry["calls"],
                    input_tokens=entry["input_tokens"],
                    output_tokens=entry["output_tokens"],
                )
                for key, entry in data.items()
            }
        )


class UsageLedger:
    """Thread-safe per-tag call and token accounting.

    Updates are serialized so concurrent exploration workers cannot lose
    counts; totals always equal the sum of the recorded responses.
    """

    def __init__(self) -> None:
        self._lock = threading.Lock()
        self._per_tag: dict[str, TagUsage] = {}

    def record(self, tag: RequestTag | str, response: ModelResponse) -> None:
        key = tag.value if isinstance(tag, RequestTag) else str(tag)
        with self._lock:
            current = self._per_tag.get(key, TagUsage())
            self._per_tag[key] = TagUsage(
                calls=current.calls + 1,
                input_tokens=current.input_tokens + response.input_tokens,
                output_tokens=current.output_tokens + response.output_tokens,
            )

    def snapshot(self) -> UsageSnapshot:
        with self._lock:
            return UsageSnapshot(per_tag=dict(self._per_tag))


# ---------------------------------------------------------------------------
# errors
# ---------------------------------------------------------------------------

class BackendError(Exception):
    """Base class for everything a backend can raise."""


class TransportError(BackendError):
    """The request never produced an HTTP response, after all retries."""

    def __init__(self, message: str, attempts: int):
        super().__init__(f"{message} (after {attempts} attempts)")
        self.attempts = attempts


class HttpStatusError(BackendError):
    """The server answered with a non-2xx status. Not retried."""

    def __init__(self, status: int, body_excerpt: str):
        super().__init__(f"backend returned HTTP {status}: {body_excerpt}")
        self.status = status
        self.body_excerpt = body_excerpt


class ScriptMismatchError(BackendError):
    """The next scripted event does not accept the current prompt."""


class ScriptUnderrunError(BackendError):
    """The script ran out of events."""


# ---------------------------------------------------------------------------
# scripted backend
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ScriptEvent:
    response: str
    match: str = "*"  # substring the prompt must contain; "*" accepts anything

    def accepts(self, prompt_text: str) -> bool:
        return self.match == "*" or self.match in prompt_text


class ScriptedBackend:
    """Replays an ordered list of (matcher, response) events.

    Every :meth:`complete` call consumes exactly the next event. All requests
    are appended to :attr:`requests` as ``(tag, prompt_text)`` pairs so tests
    can inspect what the engine actually sent.
    """

    def __init__(self, events: list[ScriptEvent]):
        self._events = list(events)
        self._cursor = 0
        self._lock = threading.Lock()
        self._ledger = UsageLedger()
        self.requests: list[tuple[RequestTag, str]] = []

    def __len__(self) -> int:
        return len(self._events)

    @property
    def consumed(self) -> int:
        return self._cursor

    def complete(self, request: ModelRequest) -> ModelResponse:
        prompt_text = request.prompt.text()
        with self._lock:
            self.requests.append((request.tag, prompt_text))
            if self._cursor >= len(self._events):
                raise ScriptUnderrunError(
                    f"script exhausted after {len(self._events)} events "
                    f"(next request tag: {request.tag.value})"
                )
            event = self._events[self._cursor]
            if not event.accepts(prompt_text):
                raise ScriptMismatchError(
                    f"event {self._cursor} expected a prompt containing "
                    f"{event.match!r}, got a {request.tag.value} request that lacks it"
                )
            self._cursor += 1
        response = ModelResponse(
            text=event.response,
            input_tokens=count_text_tokens(prompt_text),
            output_tokens=count_text_tokens(event.response),
            latency_ms=0.0,
        )
        self._ledger.record(request.tag, response)
        return response

    def usage_report(self) -> UsageSnapshot:
        return self._ledger.snapshot()


def load_script(events) -> ScriptedBackend:
    """Build a scripted backend from (matcher, response) pairs."""
    return ScriptedBackend([ScriptEvent(match=match, response=response) for match, response in events])


def load_script_file(path) -> ScriptedBackend:
    """Load a script from a JSONL file of {"match": ..., "response": ...} rows.

    ``match`` is optional and defaults to the wildcard.
    """
    events = []
    with open(path, encoding="utf-8") as handle:
        for lineno, line in enumerate(handle, start=1):
            if not line.strip():
                continue
            try:
                row = json.loads(line)
                event = ScriptEvent(response=row["response"], match=row.get("match", "*"))
            except (json.JSONDecodeError, KeyError, TypeError) as exc:
                raise ValueError(f"{path}: line {lineno}: bad script event: {exc}") from exc
            events.append(event)
    return ScriptedBackend(events)


# ---------------------------------------------------------------------------
# HTTP backend
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class HttpBackendConfig:
    endpoint: str  # base URL of an OpenAI-compatible server, e.g. "http://host:8000/v1"
    model: str
    api_key_env: str = "OPENAI_API_KEY"
    timeout_s: float = 120.0
    max_attempts: int = 3
    backoff_s: float = 0.5


class HttpBackend:
    """Chat-completions client for any OpenAI-compatible server.

    Transport failures (connection refused, timeouts) are retried up to
    ``max_attempts`` times with exponential backoff. A served error status is
    not retried: it is a real answer and the caller should see it.
    """

    def __init__(self, config: HttpBackendConfig, session: requests.Session | None = None):
        self._config = config
        self._session = session or requests.Session()
        self._ledger = UsageLedger()

    def complete(self, request: ModelRequest) -> ModelResponse:
        config = self._config
        url = config.endpoint.rstrip("/") + "/chat/completions"
        payload = {
            "model": config.model,
            "messages": [
                {"role": role, "content": text} for role, text in request.prompt.messages
            ],
            "temperature": request.effective_temperature,
            "max_tokens": request.max_output_tokens,
        }
        if request.stop_sequences:
            payload["stop"] = list(request.stop_sequences)
        headers = {"Content-Type": "application/json"}
        api_key = os.environ.get(config.api_key_env, "")
        if api_key:
            headers["Authorization"] = f"Bearer {api_key}"

        started = time.monotonic()
        response = None
        for attempt in range(1, config.max_attempts + 1):
            try:
                response = self._session.post(
                    url, json=payload, headers=headers, timeout=config.timeout_s
                )
                break
            except requests.RequestException as exc:
                if attempt == config.max_attempts:
                    raise TransportError(str(exc), attempts=attempt) from exc
                delay = config.backoff_s * (2 ** (attempt - 1))
                logger.warning(
                    "transport error on attempt %d/%d, retrying in %.1fs: %s",
                    attempt, config.max_attempts, delay, exc,
                )
                time.sleep(delay)
        assert response is not None
        latency_ms = (time.monotonic() - started) * 1000.0

        if not response.ok:
            raise HttpStatusError(response.status_code, response.text[:500])
        try:
            body = response.json()
            text = body["choices"][0]["message"]["content"]
        except (ValueError, KeyError, IndexError, TypeError) as exc:
            raise BackendError(f"unparseable completion body: {response.text[:500]}") from exc

        usage = body.get("usage") or {}
        prompt_text = request.prompt.text()
        model_response = ModelResponse(
            text=text,
            input_tokens=int(usage.get("prompt_tokens", count_text_tokens(prompt_text))),
            output_tokens=int(usage.get("completion_tokens", count_text_tokens(text))),
            latency_ms=latency_ms,
        )
        self._ledger.record(request.tag, model_response)
        return model_response

    def usage_report(self) -> UsageSnapshot:
        return self._ledger.snapshot()
