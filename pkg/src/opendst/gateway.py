"""Backend-agnostic LLM access: request specs, retries, response repair and
request accounting.

Every pipeline stage talks to a model through ``complete`` /
``complete_structured`` so that request counts, failures and prompt sizes
are tracked in one place and any backend (HTTP or in-process mock) can be
swapped in.
"""

from __future__ import annotations

import json
import logging
import os
import re
import threading
import time
from dataclasses import dataclass, field, replace
from typing import Callable, Mapping, Protocol, Sequence

import requests as _requests

log = logging.getLogger(__name__)


class GatewayError(Exception):
    pass


class TransportError(GatewayError):
    """Network-level failure; safe to retry."""


class RateLimited(GatewayError):
    def __init__(self, message: str = "rate limited", retry_after: float | None = None):
        super().__init__(message)
        self.retry_after = retry_after


class BackendRefusal(GatewayError):
    """The backend answered but declined to complete. Never retried."""


class UnparseableResponse(GatewayError):
    """Response could not be coerced to the expected shape, even after one
    repair-and-reprompt cycle."""

    def __init__(self, message: str, raw: str = ""):
        super().__init__(message)
        self.raw = raw


class _Absent:
    """Marker distinguishing "key missing from response" from any real value."""

    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self) -> str:
        return "ABSENT"

    def __bool__(self) -> bool:
        return False


ABSENT = _Absent()


@dataclass(frozen=True, slots=True)
class SamplingParams:
    temperature: float = 0.3
    top_p: float = 0.9
    max_tokens: int = 1024

    def __post_init__(self) -> None:
        if not 0.0 <= self.temperature <= 2.0:
            raise ValueError(f"temperature out of range: {self.temperature}")
        if not 0.0 < self.top_p <= 1.0:
            raise ValueError(f"top_p out of range: {self.top_p}")
        if self.max_tokens < 1:
            raise ValueError(f"max_tokens out of range: {self.max_tokens}")


# Per-model sampling settings, tuned separately for domain classification
# and state tracking. Models without an entry use the module default.
_DC = "domain-classification"
_DST = "dst"
SAMPLING_DEFAULTS: Mapping[tuple[str, str], tuple[float, float]] = {
    ("gpt-4-turbo", _DC): (0.3, 0.9),
    ("gemini-1.0", _DC): (0.8, 1.0),
    ("llama-3", _DC): (0.25, 0.9),
    ("qwen-1.5", _DC): (0.25, 1.0),
    ("mixtral-v0.1", _DC): (0.25, 0.9),
    ("gpt-4-turbo", _DST): (0.5, 0.9),
    ("gemini-1.0", _DST): (0.9, 1.0),
    ("llama-3", _DST): (0.7, 0.9),
    ("mixtral-v0.1", _DST): (0.25, 1.0),
    ("qwen-1.5", _DST): (0.25, 1.0),
}
_FALLBACK_SAMPLING = (0.3, 0.9)


def default_sampling(model_key: str, stage: str, max_tokens: int = 1024) -> SamplingParams:
    """Stage is the ledger stage name; everything past domain classification
    counts as tracking."""
    group = _DC if stage == _DC else _DST
    temperature, top_p = SAMPLING_DEFAULTS.get((model_key, group), _FALLBACK_SAMPLING)
    return SamplingParams(temperature=temperature, top_p=top_p, max_tokens=max_tokens)


@dataclass(frozen=True, slots=True)
class FreeText:
    pass


@dataclass(frozen=True, slots=True)
class JsonObject:
    """Expect a JSON object; ``keys`` are filled with ABSENT when missing,
    unexpected keys are preserved."""

    keys: tuple[str, ...]

    def __post_init__(self) -> None:
        if not self.keys:
            raise ValueError("JsonObject requires at least one expected key")


@dataclass(frozen=True, slots=True)
class JsonArray:
    """Expect a JSON object carrying ``key``; its value is returned as-is."""

    key: str


ResponseShape = FreeText | JsonObject | JsonArray


@dataclass(frozen=True, slots=True)
class PromptSpec:
    text: str
    params: SamplingParams = SamplingParams()
    shape: ResponseShape = FreeText()
    stage: str = "unstaged"

    def __post_init__(self) -> None:
        if not self.text:
            raise ValueError("empty prompt")


class Backend(Protocol):
    name: str

    def send(self, text: str, params: SamplingParams) -> str: ...


@dataclass
class _LedgerRow:
    requests: int = 0
    prompt_chars: int = 0
    failures: int = 0


class RequestLedger:
    """Monotone per-(stage, backend) request accounting. Thread-safe."""

    def __init__(self) -> None:
        self._rows: dict[tuple[str, str], _LedgerRow] = {}
        self._lock = threading.Lock()

    def record_request(self, stage: str, backend: str, prompt_chars: int) -> None:
        with self._lock:
            row = self._rows.setdefault((stage, backend), _LedgerRow())
            row.requests += 1
            row.prompt_chars += prompt_chars

    def record_failure(self, stage: str, backend: str) -> None:
        with self._lock:
            row = self._rows.setdefault((stage, backend), _LedgerRow())
            row.failures += 1

    def _sum(self, attr: str, stage: str | None, backend: str | None) -> int:
        with self._lock:
            return sum(
                getattr(row, attr)
                for (s, b), row in self._rows.items()
                if (stage is None or s == stage) and (backend is None or b == backend)
            )

    def requests(self, stage: str | None = None, backend: str | None = None) -> int:
        return self._sum("requests", stage, backend)

    def prompt_chars(self, stage: str | None = None, backend: str | None = None) -> int:
        return self._sum("prompt_chars", stage, backend)

    def failures(self, stage: str | None = None, backend: str | None = None) -> int:
        return self._sum("failures", stage, backend)

    def snapshot(self) -> list[dict]:
        with self._lock:
            return [
                {
                    "stage": s,
                    "backend": b,
                    "requests": row.requests,
                    "prompt_chars": row.prompt_chars,
                    "failures": row.failures,
                }
                for (s, b), row in sorted(self._rows.items())
            ]

    def merge(self, other: "RequestLedger") -> None:
        for row in other.snapshot():
            key = (row["stage"], row["backend"])
            with self._lock:
                mine = self._rows.setdefault(key, _LedgerRow())
                mine.requests += row["requests"]
                mine.prompt_chars += row["prompt_chars"]
                mine.failures += row["failures"]

    def restore(self, rows: Sequence[Mapping]) -> None:
        """Re-apply previously snapshotted rows (checkpoint resume)."""
        for row in rows:
            key = (row["stage"], row["backend"])
            with self._lock:
                mine = self._rows.setdefault(key, _LedgerRow())
                mine.requests += int(row["requests"])
                mine.prompt_chars += int(row["prompt_chars"])
                mine.failures += int(row["failures"])


_FENCE_RE = re.compile(r"```[a-zA-Z0-9_-]*\s*(.*?)```", re.DOTALL)


def _balanced_spans(text: str) -> list[str]:
    """Every top-level brace/bracket-balanced substring, longest first.
    Quote-aware so braces inside JSON strings don't break the scan."""
    spans: list[str] = []
    opens = {"{": "}", "[": "]"}
    i, n = 0, len(text)
    while i < n:
        ch = text[i]
        if ch not in opens:
            i += 1
            continue
        stack = [opens[ch]]
        j = i + 1
        in_string = False
        escaped = False
        while j < n and stack:
            c = text[j]
            if in_string:
                if escaped:
                    escaped = False
                elif c == "\\":
                    escaped = True
                elif c == '"':
                    in_string = False
            elif c == '"':
                in_string = True
            elif c in opens:
                stack.append(opens[c])
            elif c in ("}", "]"):
                if c != stack[-1]:
                    break
                stack.pop()
            j += 1
        if not stack:
            spans.append(text[i:j])
            i = j
        else:
            i += 1
    spans.sort(key=len, reverse=True)
    return spans


def repair_json(raw: str):
    """Parse possibly-messy model output as JSON.

    Tries the text as-is, then the contents of any code fence, then the
    longest balanced brace/bracket substring. Well-formed input always
    parses to the same value as ``json.loads``. Raises ValueError when
    nothing parses.
    """
    candidates = [raw.strip()]
    candidates.extend(m.strip() for m in _FENCE_RE.findall(raw))
    for candidate in list(candidates):
        candidates.extend(_balanced_spans(candidate))
    for candidate in candidates:
        if not candidate:
            continue
        try:
            return json.loads(candidate)
        except (json.JSONDecodeError, ValueError):
            continue
    raise ValueError("no parseable JSON found")


def extract_shape(payload, shape: ResponseShape):
    """Coerce a parsed payload to the expected shape; ValueError on mismatch."""
    if isinstance(shape, FreeText):
        return payload
    if isinstance(shape, JsonObject):
        if isinstance(payload, list) and len(payload) == 1 and isinstance(payload[0], dict):
            payload = payload[0]
        if not isinstance(payload, dict):
            raise ValueError(f"expected JSON object, got {type(payload).__name__}")
        out = dict(payload)
        for key in shape.keys:
            if key not in out:
                out[key] = ABSENT
        return out
    if isinstance(shape, JsonArray):
        if isinstance(payload, list):
            return payload
        if isinstance(payload, dict):
            if shape.key in payload:
                return payload[shape.key]
            # tolerate case drift on the single expected key
            for k, v in payload.items():
                if isinstance(k, str) and k.lower() == shape.key.lower():
                    return v
            raise ValueError(f"response object lacks key {shape.key!r}")
        raise ValueError(f"expected JSON object or array, got {type(payload).__name__}")
    raise TypeError(f"unknown shape {shape!r}")


@dataclass(frozen=True)
class RetryPolicy:
    max_attempts: int = 3
    base_delay: float = 0.5
    sleep: Callable[[float], None] = field(default=time.sleep, repr=False)

    def delay(self, attempt: int, retry_after: float | None) -> float:
        if retry_after is not None:
            return retry_after
        return self.base_delay * (2**attempt)


DEFAULT_RETRY = RetryPolicy()

AuditSink = Callable[[dict], None]


def complete(
    spec: PromptSpec,
    backend: Backend,
    ledger: RequestLedger | None = None,
    retry: RetryPolicy | None = None,
    audit: AuditSink | None = None,
) -> str:
    """One logical completion. Transport failures and rate limits retry with
    backoff up to the policy's attempt cap; refusals do not. Every physical
    attempt is recorded in the ledger.
    """
    retry = retry or DEFAULT_RETRY
    last: Exception | None = None
    for attempt in range(retry.max_attempts):
        if ledger is not None:
            ledger.record_request(spec.stage, backend.name, len(spec.text))
        try:
            response = backend.send(spec.text, spec.params)
        except (TransportError, RateLimited) as exc:
            last = exc
            if ledger is not None:
                ledger.record_failure(spec.stage, backend.name)
            if audit is not None:
                audit({"stage": spec.stage, "backend": backend.name, "prompt": spec.text, "error": str(exc)})
            if attempt + 1 < retry.max_attempts:
                retry.sleep(retry.delay(attempt, getattr(exc, "retry_after", None)))
            continue
        except BackendRefusal:
            if ledger is not None:
                ledger.record_failure(spec.stage, backend.name)
            raise
        if audit is not None:
            audit({"stage": spec.stage, "backend": backend.name, "prompt": spec.text, "response": response})
        return response
    assert last is not None
    raise last


_FORMAT_REMINDER = (
    "\n\nYour previous reply could not be parsed. "
    "Reply again with valid JSON only, in exactly the requested format, and no other text."
)


def complete_structured(
    spec: PromptSpec,
    backend: Backend,
    ledger: RequestLedger | None = None,
    retry: RetryPolicy | None = None,
    audit: AuditSink | None = None,
):
    """Completion plus shape coercion, with exactly one repair-and-reprompt
    cycle before giving up with UnparseableResponse."""
    if isinstance(spec.shape, FreeText):
        raise ValueError("complete_structured requires a JSON shape")
    raw = complete(spec, backend, ledger, retry, audit)
    try:
        return extract_shape(repair_json(raw), spec.shape)
    except ValueError:
        if ledger is not None:
            ledger.record_failure(spec.stage, backend.name)
    reminder = replace(spec, text=spec.text + _FORMAT_REMINDER)
    raw2 = complete(reminder, backend, ledger, retry, audit)
    try:
        return extract_shape(repair_json(raw2), spec.shape)
    except ValueError as exc:
        if ledger is not None:
            ledger.record_failure(spec.stage, backend.name)
        raise UnparseableResponse(f"unparseable after reprompt: {exc}", raw=raw2) from exc


MockRule = tuple[str | Callable[[str], bool], str | Callable[[str], str]]


class MockBackend:
    """Scripted in-process backend for offline runs and tests.

    Rules are checked in order; a rule's predicate is a substring or a
    callable on the prompt, its response a string or a callable of the
    prompt. Falls back to ``default`` when nothing matches (raises
    BackendRefusal if default is None).
    """

    def __init__(self, rules: Sequence[MockRule] = (), default: str | None = "{}", name: str = "mock"):
        self.rules = list(rules)
        self.default = default
        self.name = name
        self.calls: list[str] = []
        self._lock = threading.Lock()

    def send(self, text: str, params: SamplingParams) -> str:
        with self._lock:
            self.calls.append(text)
        for predicate, response in self.rules:
            hit = predicate(text) if callable(predicate) else predicate in text
            if hit:
                return response(text) if callable(response) else response
        if self.default is None:
            raise BackendRefusal(f"no mock rule matched prompt: {text[:80]!r}")
        return self.default


def register_mock(script: Mapping[str, str] | Sequence[MockRule], default: str | None = "{}", name: str = "mock") -> MockBackend:
    """Build a MockBackend from a substring->response mapping (insertion
    order is match order) or an explicit rule sequence."""
    rules: Sequence[MockRule]
    if isinstance(script, Mapping):
        rules = list(script.items())
    else:
        rules = list(script)
    return MockBackend(rules=rules, default=default, name=name)


class OpenAIChatBackend:
    """Minimal chat-completions client for any OpenAI-compatible endpoint.

    Credentials come from the environment (``api_key_env``), never from
    config values, so keys stay out of files and reports.
    """

    def __init__(
        self,
        model: str,
        endpoint: str = "https://api.openai.com/v1",
        api_key_env: str = "OPENDST_API_KEY",
        timeout: float = 60.0,
        rpm: float | None = None,
        name: str | None = None,
    ):
        self.model = model
        self.endpoint = endpoint.rstrip("/")
        self.api_key_env = api_key_env
        self.timeout = timeout
        self.min_interval = 60.0 / rpm if rpm else 0.0
        self.name = name or model
        self._lock = threading.Lock()
        self._last_sent = 0.0

    def _throttle(self) -> None:
        if not self.min_interval:
            return
        with self._lock:
            wait = self._last_sent + self.min_interval - time.monotonic()
            if wait > 0:
                time.sleep(wait)
            self._last_sent = time.monotonic()

    def send(self, text: str, params: SamplingParams) -> str:
        api_key = os.environ.get(self.api_key_env)
        if not api_key:
            raise BackendRefusal(f"environment variable {self.api_key_env} is not set")
        self._throttle()
        body = {
            "model": self.model,
            "messages": [{"role": "user", "content": text}],
            "temperature": params.temperature,
            "top_p": params.top_p,
            "max_tokens": params.max_tokens,
        }
        try:
            resp = _requests.post(
                f"{self.endpoint}/chat/completions",
                json=body,
                headers={"Authorization": f"Bearer {api_key}"},
                timeout=self.timeout,
            )
        except _requests.RequestException as exc:
            raise TransportError(str(exc)) from exc
        if resp.status_code == 429:
            retry_after = None
            header = resp.headers.get("Retry-After")
            if header is not None:
                try:
                    retry_after = float(header)
                except ValueError:
                    retry_after = None
            raise RateLimited(retry_after=retry_after)
        if resp.status_code >= 500:
            raise TransportError(f"server error {resp.status_code}")
        if resp.status_code >= 400:
            raise BackendRefusal(f"request rejected ({resp.status_code}): {resp.text[:200]}")
        try:
            content = resp.json()["choices"][0]["message"]["content"]
        except (ValueError, KeyError, IndexError) as exc:
            raise TransportError(f"malformed completion payload: {exc}") from exc
        if not content:
            raise BackendRefusal("empty completion")
        return content
