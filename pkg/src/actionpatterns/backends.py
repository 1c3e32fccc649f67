"""Completion backends: chat-completions over HTTP, fill-mask over HTTP, and replay.

Every backend exposes ``complete(req)`` and/or ``fill_mask(sentence)``. The
fixture store keys responses by a digest of (prompt, model, temperature) so a
recorded run can be replayed offline byte for byte.
"""
from __future__ import annotations

import enum
import hashlib
import json
import logging
import os
import random
import threading
import time
import uuid
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import requests

from .prompts import MASK

log = logging.getLogger(__name__)

RETRY_STATUS = frozenset({429, 500, 502, 503, 504})


class BackendKind(enum.Enum):
    CHAT_HTTP = "chat_http"
    FILL_MASK = "fill_mask"
    REPLAY = "replay"


class BackendError(RuntimeError):
    pass


class ConfigError(BackendError):
    pass


class AuthError(BackendError):
    pass


class RateLimited(BackendError):
    pass


class RequestTimeout(BackendError):
    pass


class ServerError(BackendError):
    pass


class MalformedResponse(BackendError):
    pass


class FixtureMiss(BackendError):
    def __init__(self, digest: str, summary: str = ""):
        self.digest = digest
        detail = f" ({summary})" if summary else ""
        super().__init__(f"no recorded response for fixture key {digest}{detail}")


class MaskError(ValueError):
    pass


class NoMask(MaskError):
    pass


class MultipleMasks(MaskError):
    pass


@dataclass(frozen=True)
class BackendConfig:
    kind: BackendKind
    model: str
    endpoint: str | None = None
    temperature: float = 0.0
    api_key_env: str | None = None
    timeout: float = 60.0
    max_retries: int = 4
    requests_per_minute: int | None = None
    max_concurrency: int = 4
    fixture_dir: Path | None = None
    mask_token: str = MASK
    # for replay: which live backend kind the fixtures were recorded from
    replays: BackendKind = BackendKind.CHAT_HTTP

    def __post_init__(self) -> None:
        if self.temperature < 0:
            raise ConfigError(f"temperature must be >= 0, got {self.temperature}")
        if self.max_retries < 0:
            raise ConfigError(f"max_retries must be >= 0, got {self.max_retries}")
        if self.requests_per_minute is not None and self.requests_per_minute < 1:
            raise ConfigError("requests_per_minute must be >= 1 when set")
        if self.max_concurrency < 1:
            raise ConfigError("max_concurrency must be >= 1")
        if self.kind is BackendKind.REPLAY:
            if self.fixture_dir is None:
                raise ConfigError("replay backends need a fixture directory")
            if self.replays is BackendKind.REPLAY:
                raise ConfigError("a replay backend cannot replay another replay backend")
        elif not self.endpoint:
            raise ConfigError(f"{self.kind.value} backends need an endpoint URL")

    @property
    def uses_fill_mask(self) -> bool:
        return self.kind is BackendKind.FILL_MASK or (
            self.kind is BackendKind.REPLAY and self.replays is BackendKind.FILL_MASK
        )


@dataclass(frozen=True)
class CompletionRequest:
    prompt: str
    model: str
    temperature: float = 0.0
    request_id: str = field(default_factory=lambda: uuid.uuid4().hex)

    def __post_init__(self) -> None:
        if not self.prompt:
            raise ValueError("prompt must be non-empty")


@dataclass(frozen=True)
class CompletionResult:
    raw: str
    backend: BackendKind
    model: str
    latency_ms: float
    fixture: bool = False


@dataclass(frozen=True)
class MaskPrediction:
    ranked: tuple[tuple[str, float], ...]

    @property
    def tokens(self) -> tuple[str, ...]:
        return tuple(token for token, _ in self.ranked)


def fixture_key(req: CompletionRequest) -> str:
    """Hex SHA-256 over the canonical JSON of (prompt, model, temperature)."""
    payload = json.dumps(
        {"model": req.model, "prompt": req.prompt, "temperature": float(req.temperature)},
        sort_keys=True,
        ensure_ascii=False,
        separators=(",", ":"),
    )
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()


def _summary(req: CompletionRequest, width: int = 80) -> str:
    prompt = " ".join(req.prompt.split())
    if len(prompt) > width:
        prompt = "..." + prompt[-(width - 3) :]
    return f"{req.model} t={float(req.temperature)}: {prompt}"


class FixtureStore:
    """Directory of ``<digest>.txt`` raw responses plus an ``index.json`` of summaries."""

    INDEX = "index.json"

    def __init__(self, root: str | Path):
        self.root = Path(root)
        self._lock = threading.Lock()

    def path_for(self, digest: str) -> Path:
        return self.root / f"{digest}.txt"

    def get(self, req: CompletionRequest) -> str:
        digest = fixture_key(req)
        path = self.path_for(digest)
        if not path.is_file():
            raise FixtureMiss(digest, _summary(req))
        return path.read_bytes().decode("utf-8")

    def put(self, req: CompletionRequest, raw: str) -> str:
        digest = fixture_key(req)
        with self._lock:
            self.root.mkdir(parents=True, exist_ok=True)
            self.path_for(digest).write_bytes(raw.encode("utf-8"))
            index_path = self.root / self.INDEX
            index = json.loads(index_path.read_text(encoding="utf-8")) if index_path.is_file() else {}
            index[digest] = _summary(req)
            index_path.write_text(
                json.dumps(index, indent=1, sort_keys=True, ensure_ascii=False) + "\n", encoding="utf-8"
            )
        return digest


class RateLimiter:
    """Sliding one-minute window shared by all threads using a backend."""

    def __init__(
        self,
        per_minute: int | None,
        clock: Callable[[], float] = time.monotonic,
        sleep: Callable[[float], None] = time.sleep,
    ):
        self.per_minute = per_minute
        self.clock = clock
        self.sleep = sleep
        self._sent: deque[float] = deque()
        self._lock = threading.Lock()

    def acquire(self) -> None:
        if self.per_minute is None:
            return
        with self._lock:
            while True:
                now = self.clock()
                while self._sent and now - self._sent[0] >= 60.0:
                    self._sent.popleft()
                if len(self._sent) < self.per_minute:
                    self._sent.append(now)
                    return
                self.sleep(60.0 - (now - self._sent[0]))


def _masked_sentence(sentence: str, mask_token: str) -> str:
    count = sentence.count(MASK)
    if count == 0:
        raise NoMask(f"sentence has no {MASK} marker: {sentence!r}")
    if count > 1:
        raise MultipleMasks(f"sentence has {count} {MASK} markers: {sentence!r}")
    return sentence.replace(MASK, mask_token)


def parse_fill_mask_response(raw: str) -> MaskPrediction:
    try:
        data = json.loads(raw)
    except json.JSONDecodeError as exc:
        raise MalformedResponse(f"fill-mask response is not JSON: {exc}") from exc
    # some servers wrap single-mask results in an outer list
    if isinstance(data, list) and len(data) == 1 and isinstance(data[0], list):
        data = data[0]
    if not isinstance(data, list) or not data:
        raise MalformedResponse("fill-mask response must be a non-empty list")
    ranked = []
    for item in data:
        try:
            token, score = str(item["token_str"]).strip(), float(item["score"])
        except (KeyError, TypeError, ValueError) as exc:
            raise MalformedResponse(f"bad fill-mask candidate {item!r}") from exc
        if not 0.0 <= score <= 1.0:
            raise MalformedResponse(f"score out of range: {score}")
        ranked.append((token, score))
    ranked.sort(key=lambda pair: -pair[1])
    return MaskPrediction(tuple(ranked))


class Backend:
    """Base class; subclasses implement ``_complete_raw`` and/or ``_fill_mask_raw``."""

    def __init__(self, cfg: BackendConfig):
        self.cfg = cfg
        self._slots = threading.BoundedSemaphore(cfg.max_concurrency)

    def request(self, prompt: str) -> CompletionRequest:
        return CompletionRequest(prompt, self.cfg.model, self.cfg.temperature)

    def complete(self, req: CompletionRequest) -> CompletionResult:
        raise ConfigError(f"{self.cfg.kind.value} backend does not support chat completion")

    def fill_mask(self, sentence: str) -> MaskPrediction:
        raise ConfigError(f"{self.cfg.kind.value} backend does not support fill-mask")


class HttpBackend(Backend):
    def __init__(
        self,
        cfg: BackendConfig,
        *,
        session: requests.Session | None = None,
        clock: Callable[[], float] = time.monotonic,
        sleep: Callable[[float], None] = time.sleep,
        rng: random.Random | None = None,
        backoff_base: float = 1.0,
    ):
        super().__init__(cfg)
        self.session = session or requests.Session()
        self.clock = clock
        self.sleep = sleep
        self.rng = rng or random.Random()
        self.backoff_base = backoff_base
        self.limiter = RateLimiter(cfg.requests_per_minute, clock, sleep)

    def _headers(self, required: bool) -> dict[str, str]:
        headers = {"Content-Type": "application/json"}
        name = self.cfg.api_key_env
        key = os.environ.get(name) if name else None
        if key:
            headers["Authorization"] = f"Bearer {key}"
        elif required:
            raise AuthError(f"API key environment variable {name or '<not configured>'} is not set")
        return headers

    def _backoff(self, attempt: int, response: requests.Response | None) -> float:
        delay = self.backoff_base * 2**attempt
        delay = delay / 2 + self.rng.uniform(0, delay / 2)
        if response is not None:
            try:
                delay = max(delay, float(response.headers.get("Retry-After", 0)))
            except ValueError:
                pass
        return delay

    def post_json(self, body: dict, headers: dict[str, str]) -> requests.Response:
        """POST with rate limiting and bounded retries on 429/5xx."""
        assert self.cfg.endpoint
        for attempt in range(self.cfg.max_retries + 1):
            self.limiter.acquire()
            try:
                response = self.session.post(self.cfg.endpoint, json=body, headers=headers, timeout=self.cfg.timeout)
            except requests.Timeout as exc:
                raise RequestTimeout(f"request to {self.cfg.endpoint} timed out after {self.cfg.timeout}s") from exc
            except requests.RequestException as exc:
                raise BackendError(f"request to {self.cfg.endpoint} failed: {exc}") from exc
            status = response.status_code
            if status in (401, 403):
                raise AuthError(f"{self.cfg.endpoint} rejected the API key (HTTP {status})")
            if status not in RETRY_STATUS:
                if status >= 400:
                    raise MalformedResponse(f"HTTP {status}: {response.text[:500]}")
                return response
            if attempt < self.cfg.max_retries:
                delay = self._backoff(attempt, response)
                log.info("HTTP %d from %s, retry %d in %.2fs", status, self.cfg.endpoint, attempt + 1, delay)
                self.sleep(delay)
        if status == 429:
            raise RateLimited(f"still rate limited after {self.cfg.max_retries} retries")
        raise ServerError(f"HTTP {status} after {self.cfg.max_retries} retries")


class ChatHttpBackend(HttpBackend):
    def complete_raw(self, req: CompletionRequest) -> str:
        headers = self._headers(required=True)
        body = {
            "model": req.model,
            "temperature": req.temperature,
            "messages": [{"role": "user", "content": req.prompt}],
        }
        with self._slots:
            response = self.post_json(body, headers)
        try:
            content = response.json()["choices"][0]["message"]["content"]
        except (ValueError, KeyError, IndexError, TypeError) as exc:
            raise MalformedResponse(f"unexpected chat-completion payload: {response.text[:500]}") from exc
        if not isinstance(content, str):
            raise MalformedResponse("chat-completion content is not a string")
        return content

    def complete(self, req: CompletionRequest) -> CompletionResult:
        start = self.clock()
        raw = self.complete_raw(req)
        return CompletionResult(raw, self.cfg.kind, req.model, (self.clock() - start) * 1000.0)


class FillMaskBackend(HttpBackend):
    def fill_mask_raw(self, sentence: str) -> str:
        headers = self._headers(required=self.cfg.api_key_env is not None)
        with self._slots:
            response = self.post_json({"inputs": sentence}, headers)
        return response.text

    def fill_mask(self, sentence: str) -> MaskPrediction:
        masked = _masked_sentence(sentence, self.cfg.mask_token)
        return parse_fill_mask_response(self.fill_mask_raw(masked))


class ReplayBackend(Backend):
    """Serves recorded responses only; a miss is an error, never a network call."""

    def __init__(self, cfg: BackendConfig, clock: Callable[[], float] = time.monotonic):
        super().__init__(cfg)
        assert cfg.fixture_dir is not None
        self.store = FixtureStore(cfg.fixture_dir)
        self.clock = clock

    def complete(self, req: CompletionRequest) -> CompletionResult:
        start = self.clock()
        raw = self.store.get(req)
        return CompletionResult(raw, BackendKind.REPLAY, req.model, (self.clock() - start) * 1000.0, fixture=True)

    def fill_mask(self, sentence: str) -> MaskPrediction:
        masked = _masked_sentence(sentence, self.cfg.mask_token)
        return parse_fill_mask_response(self.store.get(self.request(masked)))


class RecordingBackend(Backend):
    """Wraps a live backend and stores every raw response in a fixture store."""

    def __init__(self, inner: ChatHttpBackend | FillMaskBackend, store: FixtureStore):
        super().__init__(inner.cfg)
        self.inner = inner
        self.store = store

    def complete(self, req: CompletionRequest) -> CompletionResult:
        result = self.inner.complete(req)
        self.store.put(req, result.raw)
        return result

    def fill_mask(self, sentence: str) -> MaskPrediction:
        if not isinstance(self.inner, FillMaskBackend):
            return self.inner.fill_mask(sentence)
        masked = _masked_sentence(sentence, self.cfg.mask_token)
        raw = self.inner.fill_mask_raw(masked)
        prediction = parse_fill_mask_response(raw)
        self.store.put(self.request(masked), raw)
        return prediction


def make_backend(cfg: BackendConfig, *, record_dir: str | Path | None = None, **http_options) -> Backend:
    """Build the backend for ``cfg``; ``record_dir`` wraps live backends in a recorder."""
    if cfg.kind is BackendKind.REPLAY:
        return ReplayBackend(cfg)
    live: ChatHttpBackend | FillMaskBackend
    if cfg.kind is BackendKind.CHAT_HTTP:
        live = ChatHttpBackend(cfg, **http_options)
    else:
        live = FillMaskBackend(cfg, **http_options)
    if record_dir is not None:
        return RecordingBackend(live, FixtureStore(record_dir))
    return live


def complete(cfg: BackendConfig, req: CompletionRequest) -> CompletionResult:
    if cfg.kind is BackendKind.FILL_MASK:
        raise ConfigError("fill-mask backends answer masked sentences, use fill_mask()")
    return make_backend(cfg).complete(req)


def fill_mask(cfg: BackendConfig, sentence: str) -> MaskPrediction:
    if cfg.kind is BackendKind.CHAT_HTTP:
        raise ConfigError("chat backends do not support fill-mask")
    return make_backend(cfg).fill_mask(sentence)
