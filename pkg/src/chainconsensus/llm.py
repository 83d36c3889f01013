"""Chat-completion providers: scripted, canned, replay, remote HTTP and recording.

Scripted providers read machine-readable markers that the prompt builder
embeds (``TOOL RECOMMENDATION: n``, ``NEGOTIATION RANGE: a-b`` ...), which
makes every orchestration path testable without a model.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import re
import threading
import time
import urllib.error
import urllib.request
from collections import defaultdict, deque
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Sequence

logger = logging.getLogger(__name__)

DEFAULT_TEMPERATURE = 0.1
DEFAULT_MAX_OUTPUT_TOKENS = 90

SCRIPTED = "scripted"
REPLAY = "replay"
REMOTE = "remote"
STRATEGIES = ("echo_tool", "midpoint", "stubborn", "suggestible")


class ProviderError(RuntimeError):
    def __init__(self, message: str, digest: str | None = None):
        super().__init__(f"{message} [request {digest[:12]}]" if digest else message)
        self.digest = digest


class ReplayMissError(ProviderError):
    pass


class RetryExhaustedError(RuntimeError):
    pass


@dataclass(frozen=True)
class ChatRequest:
    system_text: str
    messages: tuple[tuple[str, str], ...]
    temperature: float = DEFAULT_TEMPERATURE
    max_output_tokens: int = DEFAULT_MAX_OUTPUT_TOKENS
    model_id: str = "scripted"

    @property
    def text(self) -> str:
        return "\n".join(t for _, t in self.messages)

    def digest(self) -> str:
        payload = json.dumps({
            "model_id": self.model_id,
            "system_text": self.system_text,
            "messages": [list(m) for m in self.messages],
            "temperature": self.temperature,
        }, sort_keys=True)
        return hashlib.sha256(payload.encode()).hexdigest()

    def to_dict(self) -> dict:
        d = asdict(self)
        d["messages"] = [list(m) for m in self.messages]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ChatRequest":
        return cls(d["system_text"], tuple(tuple(m) for m in d["messages"]),
                   d["temperature"], d["max_output_tokens"], d["model_id"])


def user_request(prompt: str, system_text: str = "", **kwargs) -> ChatRequest:
    return ChatRequest(system_text, (("user", prompt),), **kwargs)


class ChatProvider:
    """Base provider; subclasses implement :meth:`complete`."""

    def complete(self, request: ChatRequest) -> str:
        raise NotImplementedError


_TOOL_RE = re.compile(r"^TOOL RECOMMENDATION: (\d+)\s*$", re.M)
_RANGE_RE = re.compile(r"^NEGOTIATION RANGE: (\d+)-(\d+)\s*$", re.M)
_ROLE_RE = re.compile(r"^NEGOTIATION ROLE: (downstream|upstream)\s*$", re.M)
_OWN_RE = re.compile(r"^YOUR LAST PROPOSAL: (\d+)\s*$", re.M)
_OTHER_RE = re.compile(r"^COUNTERPART LAST PROPOSAL: (\d+)\s*$", re.M)
_DEMAND_RE = re.compile(r"^DOWNSTREAM DEMAND: (\d+)\s*$", re.M)


def _marker(regex, text) -> int | None:
    m = regex.search(text)
    return int(m.group(1)) if m else None


class ScriptedProvider(ChatProvider):
    """Deterministic stand-in for a model, a pure function of the request text.

    * ``echo_tool``: the tool recommendation.
    * ``midpoint``: floor of the negotiation range midpoint.
    * ``stubborn``: its own previous proposal.
    * ``suggestible``: the counterpart's latest proposal.

    Outside a negotiation every strategy answers like ``echo_tool``; without
    a tool marker it echoes the downstream demand. ``upstream_strategy``
    overrides the strategy when the prompt assigns the upstream role.
    """

    def __init__(self, strategy: str = "echo_tool", upstream_strategy: str | None = None):
        for s in (strategy, upstream_strategy):
            if s is not None and s not in STRATEGIES:
                raise ValueError(f"unknown scripted strategy {s!r}")
        self.strategy = strategy
        self.upstream_strategy = upstream_strategy

    def complete(self, request: ChatRequest) -> str:
        text = request.text
        tool = _marker(_TOOL_RE, text)
        base = tool if tool is not None else (_marker(_DEMAND_RE, text) or 0)
        rng = _RANGE_RE.search(text)
        if rng is None:
            return str(base)
        low, high = int(rng.group(1)), int(rng.group(2))
        strategy = self.strategy
        role = _ROLE_RE.search(text)
        if role and role.group(1) == "upstream" and self.upstream_strategy:
            strategy = self.upstream_strategy
        own, other = _marker(_OWN_RE, text), _marker(_OTHER_RE, text)
        if strategy == "midpoint":
            value = (low + high) // 2
        elif strategy == "stubborn":
            value = own if own is not None else base
        elif strategy == "suggestible":
            value = other if other is not None else base
        else:
            value = base
        return str(value)


class CannedProvider(ChatProvider):
    """Returns pre-set responses in order, cycling when ``cycle`` is set."""

    def __init__(self, responses: Sequence[str], cycle: bool = True):
        if not responses:
            raise ValueError("need at least one response")
        self.responses = list(responses)
        self.cycle = cycle
        self.calls = 0

    def complete(self, request: ChatRequest) -> str:
        i = self.calls
        self.calls += 1
        if i >= len(self.responses) and not self.cycle:
            raise ProviderError("canned responses exhausted", request.digest())
        return self.responses[i % len(self.responses)]


class ReplayProvider(ChatProvider):
    """Serves responses from a cassette; never touches the network."""

    def __init__(self, cassette_path):
        self.path = Path(cassette_path)
        self._queues: dict[str, deque] = defaultdict(deque)
        self._lock = threading.Lock()
        for entry in read_cassette(self.path):
            self._queues[entry["digest"]].append(entry["response"])

    def complete(self, request: ChatRequest) -> str:
        digest = request.digest()
        with self._lock:
            queue = self._queues.get(digest)
            if not queue:
                raise ReplayMissError("no recorded response for request", digest)
            return queue.popleft()


class RemoteProvider(ChatProvider):
    """Minimal client for an OpenAI-compatible ``/chat/completions`` endpoint."""

    def __init__(self, endpoint: str, model_id: str | None = None,
                 credential_env: str = "LLM_API_KEY", timeout: float = 60.0):
        self.endpoint = endpoint
        self.model_id = model_id
        self.credential_env = credential_env
        self.timeout = timeout

    def complete(self, request: ChatRequest) -> str:
        digest = request.digest()
        messages = []
        if request.system_text:
            messages.append({"role": "system", "content": request.system_text})
        messages += [{"role": r, "content": t} for r, t in request.messages]
        body = json.dumps({
            "model": self.model_id or request.model_id,
            "messages": messages,
            "temperature": request.temperature,
            "max_tokens": request.max_output_tokens,
        }).encode()
        headers = {"Content-Type": "application/json"}
        key = os.environ.get(self.credential_env)
        if key:
            headers["Authorization"] = f"Bearer {key}"
        req = urllib.request.Request(self.endpoint, data=body, headers=headers, method="POST")
        try:
            with urllib.request.urlopen(req, timeout=self.timeout) as resp:
                payload = json.loads(resp.read())
        except urllib.error.HTTPError as exc:
            kind = "authentication failed" if exc.code in (401, 403) else f"HTTP {exc.code}"
            raise ProviderError(f"remote provider {kind}", digest) from exc
        except (urllib.error.URLError, OSError, ValueError) as exc:
            raise ProviderError(f"remote transport failure: {exc}", digest) from exc
        try:
            return payload["choices"][0]["message"]["content"]
        except (KeyError, IndexError, TypeError) as exc:
            raise ProviderError("unexpected response shape", digest) from exc


class RecordingProvider(ChatProvider):
    """Wraps another provider and appends every exchange to a cassette."""

    def __init__(self, inner: ChatProvider, cassette_path):
        self.inner = inner
        self.path = Path(cassette_path)
        self._lock = threading.Lock()
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self.path.touch()

    def complete(self, request: ChatRequest) -> str:
        response = self.inner.complete(request)
        entry = {"digest": request.digest(), "request": request.to_dict(),
                 "response": response, "timestamp": time.time()}
        with self._lock, open(self.path, "a") as fh:
            fh.write(json.dumps(entry, sort_keys=True) + "\n")
        return response


def record_cassette(provider: ChatProvider, cassette_path) -> RecordingProvider:
    return RecordingProvider(provider, cassette_path)


def read_cassette(path) -> list[dict]:
    entries = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                entry = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ValueError(f"{path}:{lineno}: malformed cassette line") from exc
            entries.append(entry)
    return entries


_MISSING = object()


def complete_with_retry(provider: ChatProvider, request: ChatRequest,
                        parser: Callable[[str], object], max_attempts: int = 3,
                        fallback=_MISSING):
    """Query until ``parser`` accepts a response.

    ``parser`` signals a malformed response by raising ``ValueError``. After
    ``max_attempts`` failures the ``fallback`` is returned, or
    :class:`RetryExhaustedError` raised if none was given.
    """
    if max_attempts < 1:
        raise ValueError("max_attempts must be >= 1")
    digest = request.digest()[:12]
    for attempt in range(1, max_attempts + 1):
        text = provider.complete(request)
        try:
            value = parser(text)
        except ValueError as exc:
            logger.info("request %s attempt %d/%d unparsable: %s",
                        digest, attempt, max_attempts, exc)
            continue
        logger.debug("request %s attempt %d/%d -> %r", digest, attempt, max_attempts, value)
        return value
    if fallback is _MISSING:
        raise RetryExhaustedError(f"request {digest}: no parsable response "
                                  f"after {max_attempts} attempts")
    logger.warning("request %s: falling back to %r", digest, fallback)
    return fallback


@dataclass(frozen=True)
class ProviderSpec:
    kind: str = SCRIPTED
    strategy: str = "echo_tool"
    upstream_strategy: str | None = None
    cassette_path: str | None = None
    endpoint: str | None = None
    model_id: str = "scripted"
    credential_env: str = "LLM_API_KEY"
    record_path: str | None = None
    extra: dict = field(default_factory=dict, hash=False)

    def __post_init__(self):
        if self.kind == SCRIPTED:
            ScriptedProvider(self.strategy, self.upstream_strategy)
        elif self.kind == REPLAY:
            if not self.cassette_path:
                raise ValueError("replay provider needs cassette_path")
        elif self.kind == REMOTE:
            if not self.endpoint:
                raise ValueError("remote provider needs endpoint")
        else:
            raise ValueError(f"unknown provider kind {self.kind!r}")

    def build(self) -> ChatProvider:
        if self.kind == SCRIPTED:
            provider = ScriptedProvider(self.strategy, self.upstream_strategy)
        elif self.kind == REPLAY:
            provider = ReplayProvider(self.cassette_path)
        else:
            provider = RemoteProvider(self.endpoint, self.model_id, self.credential_env)
        if self.record_path:
            provider = RecordingProvider(provider, self.record_path)
        return provider
