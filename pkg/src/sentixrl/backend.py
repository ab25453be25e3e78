"""Chat-completion backends and label extraction.

Two interchangeable backends: an HTTP client speaking the common
`/v1/chat/completions` wire protocol, and a deterministic scripted mock
keyed by call tags so every pipeline mechanism is testable offline.
"""

from __future__ import annotations

import re
import sys
import time
from collections.abc import Mapping
from dataclasses import dataclass
from pathlib import Path
from typing import Protocol

import requests

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .errors import SentixrlError
from .labels import LabelDomain

API_KEY_ENV = "SENTIXRL_API_KEY"
BASE_URL_ENV = "SENTIXRL_BASE_URL"

# (utterance id, round number, role) identifying one logical backend call.
CallTag = tuple[str, int, str]


class BackendError(SentixrlError):
    """Base class for backend call failures."""


class BackendTimeout(BackendError):
    """The request timed out or could not connect after all retries."""


class BackendHttpStatus(BackendError):
    """The server answered with a non-success status."""

    def __init__(self, status: int, detail: str = ""):
        super().__init__(f"HTTP {status}" + (f": {detail}" if detail else ""))
        self.status = status


class BackendDecode(BackendError):
    """The response body was not a valid chat completion."""


class ScriptMiss(BackendError):
    """The mock has no entry for the tag and no default response."""


class ScriptFileError(SentixrlError):
    """A mock script file is structurally invalid (a data error, not a
    backend failure)."""


@dataclass(frozen=True)
class Message:
    role: str
    content: str

    def __post_init__(self) -> None:
        if self.role not in ("system", "user", "assistant"):
            raise ValueError(f"unknown message role {self.role!r}")


@dataclass(frozen=True)
class BackendRequest:
    messages: tuple[Message, ...]
    tag: CallTag
    temperature: float = 0.0
    max_tokens: int = 256

    def __post_init__(self) -> None:
        if not self.messages:
            raise ValueError("request needs at least one message")
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")
        if self.max_tokens < 1:
            raise ValueError("max_tokens must be positive")


@dataclass(frozen=True)
class BackendResponse:
    content: str
    latency: float
    raw_status: int
    attempts: int = 1


class Backend(Protocol):
    def complete(self, req: BackendRequest) -> BackendResponse: ...


class MockBackend:
    """Deterministic scripted backend.

    Responses are looked up by the request tag; unknown tags fall back to
    the configured default. A pure function of (script, tag): re-running a
    corpus evaluation with the same script yields identical traces
    regardless of worker concurrency. Latency is always reported as zero.
    """

    def __init__(self, script: Mapping[CallTag, str] | None = None, default: str | None = None):
        self.script = dict(script or {})
        self.default = default

    def complete(self, req: BackendRequest) -> BackendResponse:
        content = self.script.get(tuple(req.tag), self.default)
        if content is None:
            raise ScriptMiss(f"no scripted response for tag {req.tag!r} and no default")
        return BackendResponse(content=content, latency=0.0, raw_status=200, attempts=1)

    @classmethod
    def from_file(cls, path: str | Path) -> "MockBackend":
        """Load a script from TOML.

        Top-level `default` string plus `[[responses]]` entries with
        `utterance`, `round`, `role`, and `content` keys.
        """
        path = Path(path)
        try:
            with path.open("rb") as fh:
                data = tomllib.load(fh)
        except FileNotFoundError:
            raise ScriptFileError(f"mock script not found: {path}") from None
        except tomllib.TOMLDecodeError as exc:
            raise ScriptFileError(f"{path}: {exc}") from exc

        unknown = set(data) - {"default", "responses"}
        if unknown:
            raise ScriptFileError(f"{path}: unknown keys {sorted(unknown)}")
        default = data.get("default")
        if default is not None and not isinstance(default, str):
            raise ScriptFileError(f"{path}: 'default' must be a string")

        script: dict[CallTag, str] = {}
        for i, entry in enumerate(data.get("responses", []), start=1):
            if not isinstance(entry, dict):
                raise ScriptFileError(f"{path}: responses[{i}] must be a table")
            missing = {"utterance", "round", "role", "content"} - set(entry)
            if missing:
                raise ScriptFileError(
                    f"{path}: responses[{i}] missing keys {sorted(missing)}"
                )
            extra = set(entry) - {"utterance", "round", "role", "content"}
            if extra:
                raise ScriptFileError(
                    f"{path}: responses[{i}] unknown keys {sorted(extra)}"
                )
            utterance, round_no, role, content = (
                entry["utterance"], entry["round"], entry["role"], entry["content"],
            )
            if not isinstance(utterance, str) or not isinstance(content, str):
                raise ScriptFileError(
                    f"{path}: responses[{i}] 'utterance' and 'content' must be strings"
                )
            if not isinstance(round_no, int) or isinstance(round_no, bool) or round_no < 0:
                raise ScriptFileError(
                    f"{path}: responses[{i}] 'round' must be a non-negative integer"
                )
            if not isinstance(role, str):
                raise ScriptFileError(f"{path}: responses[{i}] 'role' must be a string")
            tag = (utterance, round_no, role)
            if tag in script:
                raise ScriptFileError(f"{path}: duplicate script entry for tag {tag!r}")
            script[tag] = content

        return cls(script=script, default=default)


# Statuses treated as transient and retried with backoff.
_RETRY_STATUSES = frozenset({429, 500, 502, 503, 504})


class HttpBackend:
    """Client for an OpenAI-compatible chat-completions endpoint.

    POSTs `{base_url}/v1/chat/completions`, retrying transient failures
    (connection errors, timeouts, 429/5xx) with exponential backoff up to
    `max_attempts`. Stateless between calls: safe to share across worker
    threads, with responses correlated to requests purely by return value.
    """

    def __init__(
        self,
        base_url: str,
        model: str = "default",
        api_key: str | None = None,
        timeout: float = 30.0,
        max_attempts: int = 3,
        backoff_base: float = 0.5,
    ):
        if max_attempts < 1:
            raise ValueError("max_attempts must be >= 1")
        self.base_url = base_url.rstrip("/")
        self.model = model
        self.api_key = api_key
        self.timeout = timeout
        self.max_attempts = max_attempts
        self.backoff_base = backoff_base

    @property
    def endpoint(self) -> str:
        return f"{self.base_url}/v1/chat/completions"

    def _headers(self) -> dict[str, str]:
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        return headers

    def complete(self, req: BackendRequest) -> BackendResponse:
        body = {
            "model": self.model,
            "messages": [{"role": m.role, "content": m.content} for m in req.messages],
            "temperature": req.temperature,
            "max_tokens": req.max_tokens,
        }
        start = time.monotonic()
        last_error: BackendError | None = None
        for attempt in range(1, self.max_attempts + 1):
            try:
                resp = requests.post(
                    self.endpoint, json=body, headers=self._headers(), timeout=self.timeout
                )
            except requests.Timeout:
                last_error = BackendTimeout(f"timeout after {self.timeout}s (tag {req.tag!r})")
            except requests.ConnectionError as exc:
                last_error = BackendTimeout(f"connection failed: {exc}")
            else:
                if resp.status_code == 200:
                    content = self._parse(resp)
                    return BackendResponse(
                        content=content,
                        latency=time.monotonic() - start,
                        raw_status=resp.status_code,
                        attempts=attempt,
                    )
                if resp.status_code not in _RETRY_STATUSES:
                    raise BackendHttpStatus(resp.status_code, resp.text[:200])
                last_error = BackendHttpStatus(resp.status_code, resp.text[:200])
            if attempt < self.max_attempts:
                time.sleep(self.backoff_base * 2 ** (attempt - 1))
        assert last_error is not None
        raise last_error

    @staticmethod
    def _parse(resp: requests.Response) -> str:
        try:
            payload = resp.json()
            content = payload["choices"][0]["message"]["content"]
        except (ValueError, KeyError, IndexError, TypeError) as exc:
            raise BackendDecode(f"malformed completion response: {exc}") from exc
        if not isinstance(content, str):
            raise BackendDecode("completion content is not a string")
        return content


@dataclass(frozen=True)
class LabelExtraction:
    """Result of scanning model output for a domain label.

    `label` is None when nothing matched; `span` is the (start, end) of the
    winning case-insensitive occurrence.
    """

    label: str | None
    span: tuple[int, int] | None = None

    @property
    def found(self) -> bool:
        return self.label is not None


def extract_label(
    text: str,
    dom: LabelDomain,
    strategy: str = "last",
    substring: bool = False,
) -> LabelExtraction:
    """Scan free-form model output for domain labels.

    Matches whole words case-insensitively; `substring=True` drops the word
    boundaries for label sets in unsegmented scripts. When several distinct
    labels occur, `strategy` picks the last (default) or first occurrence;
    overlapping matches at the same start prefer the longer label.
    """
    if strategy not in ("last", "first"):
        raise ValueError(f"unknown extraction strategy {strategy!r}")
    matches: list[tuple[int, int, str]] = []
    for label in dom.labels:
        pattern = re.escape(label)
        if not substring:
            pattern = rf"\b{pattern}\b"
        for m in re.finditer(pattern, text, flags=re.IGNORECASE):
            matches.append((m.start(), m.end() - m.start(), label))
    if not matches:
        return LabelExtraction(label=None, span=None)
    if strategy == "last":
        start, length, label = max(matches, key=lambda t: (t[0], t[1]))
    else:
        start, length, label = min(matches, key=lambda t: (t[0], -t[1]))
    return LabelExtraction(label=label, span=(start, start + length))
