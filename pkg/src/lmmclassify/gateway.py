"""Provider-agnostic LMM client: caching, retries, rate limiting, record/replay.

Every request is content-addressed by a 256-bit hash over its canonical
serialization; the same key scheme drives the on-disk cache, fixture files,
and replay lookups, so a prompt+image pair recorded once is reusable across
experiments and runs.
"""

from __future__ import annotations

import base64
import copy
import hashlib
import json
import logging
import mimetypes
import os
import random
import tempfile
import threading
import time
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Mapping, Sequence

import requests

from .errors import (
    AuthenticationError,
    CacheCorruptionError,
    ConfigError,
    FixtureMissError,
    ProviderError,
    RetriesExhaustedError,
    SafetyRefusalError,
)
from .ratelimit import TokenBucket

logger = logging.getLogger(__name__)

FIXTURE_FORMAT = "lmm-exchange-fixture"
FIXTURE_VERSION = 1

DEFAULT_TEMPERATURE = 0.0
DEFAULT_MAX_OUTPUT_TOKENS = 256
REQUEST_TIMEOUT_S = 60.0


@dataclass(frozen=True)
class GenerationParams:
    temperature: float = DEFAULT_TEMPERATURE
    max_output_tokens: int = DEFAULT_MAX_OUTPUT_TOKENS

    def __post_init__(self):
        if self.temperature < 0:
            raise ConfigError(f"temperature must be >= 0, got {self.temperature}")
        if self.max_output_tokens <= 0:
            raise ConfigError(
                f"max_output_tokens must be positive, got {self.max_output_tokens}"
            )


def file_digest(path: str | Path) -> str:
    """Hex SHA-256 of a file's bytes (the image content hash)."""
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


@dataclass(frozen=True)
class LmmRequest:
    """One request to a multimodal model; text-only when image fields are absent."""

    model_id: str
    prompt_text: str
    image_digest: str | None = None
    image_ref: str | None = None
    generation_params: GenerationParams = field(default_factory=GenerationParams)

    def __post_init__(self):
        if (self.image_digest is None) != (self.image_ref is None):
            raise ConfigError(
                "image_digest and image_ref must be present together or both absent"
            )

    @classmethod
    def for_image(
        cls,
        model_id: str,
        prompt_text: str,
        image_path: str | Path,
        generation_params: GenerationParams | None = None,
    ) -> "LmmRequest":
        image_path = Path(image_path)
        if not image_path.is_file():
            raise ConfigError(f"image not readable: {image_path}")
        return cls(
            model_id=model_id,
            prompt_text=prompt_text,
            image_digest=file_digest(image_path),
            image_ref=str(image_path),
            generation_params=generation_params or GenerationParams(),
        )

    @classmethod
    def text_only(
        cls,
        model_id: str,
        prompt_text: str,
        generation_params: GenerationParams | None = None,
    ) -> "LmmRequest":
        return cls(
            model_id=model_id,
            prompt_text=prompt_text,
            generation_params=generation_params or GenerationParams(),
        )


@dataclass(frozen=True)
class LmmExchange:
    """A request plus the provider's verbatim answer."""

    request: LmmRequest
    answer_text: str
    latency_ms: int
    provider_meta: Mapping
    from_cache: bool


PROVIDER_KINDS = ("live-api", "replay-fixture")


@dataclass(frozen=True)
class ProviderConfig:
    kind: str
    endpoint: str | None = None
    credential_ref: str | None = None
    fixture_path: str | None = None
    rate_limit_rps: float = 1.0
    max_retries: int = 3
    backoff_base_ms: int = 250
    adapter: str = "gemini"

    def __post_init__(self):
        if self.kind not in PROVIDER_KINDS:
            raise ConfigError(f"provider kind must be one of {PROVIDER_KINDS}, got {self.kind!r}")
        if self.kind == "live-api" and not (self.endpoint and self.credential_ref):
            raise ConfigError("live-api provider requires endpoint and credential_ref")
        if self.kind == "replay-fixture" and not self.fixture_path:
            raise ConfigError("replay-fixture provider requires fixture_path")
        if self.rate_limit_rps <= 0:
            raise ConfigError(f"rate_limit_rps must be positive, got {self.rate_limit_rps}")
        if self.max_retries < 0:
            raise ConfigError(f"max_retries must be >= 0, got {self.max_retries}")
        if self.backoff_base_ms <= 0:
            raise ConfigError(f"backoff_base_ms must be positive, got {self.backoff_base_ms}")


def _canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=True)


def cache_key(request: LmmRequest) -> str:
    """Content address: SHA-256 over the canonical request serialization."""
    payload = {
        "model_id": request.model_id,
        "prompt_text": request.prompt_text,
        "image_digest": request.image_digest or "",
        "generation_params": {
            "temperature": request.generation_params.temperature,
            "max_output_tokens": request.generation_params.max_output_tokens,
        },
    }
    return hashlib.sha256(_canonical_json(payload).encode("utf-8")).hexdigest()


# ---------------------------------------------------------------------------
# Record serialization (shared by the cache store and fixture files)
# ---------------------------------------------------------------------------


def record_integrity(record: Mapping) -> str:
    body = {k: v for k, v in record.items() if k != "integrity"}
    return hashlib.sha256(_canonical_json(body).encode("utf-8")).hexdigest()


def make_record(
    request: LmmRequest, answer_text: str, recorded_at: str | None = None
) -> dict:
    """Build an integrity-sealed exchange record for a request/answer pair."""
    record = {
        "key": cache_key(request),
        "request": {
            "model_id": request.model_id,
            "prompt_text": request.prompt_text,
            "image_digest": request.image_digest,
            "generation_params": {
                "temperature": request.generation_params.temperature,
                "max_output_tokens": request.generation_params.max_output_tokens,
            },
        },
        "answer_text": answer_text,
        "recorded_at": recorded_at
        or datetime.now(timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ"),
    }
    record["integrity"] = record_integrity(record)
    return record


def encode_record(record: Mapping) -> str:
    return _canonical_json(record)


def decode_record(line: str) -> dict:
    """Parse one record line and verify its integrity seal."""
    try:
        record = json.loads(line)
    except json.JSONDecodeError as exc:
        raise CacheCorruptionError(f"record is not valid JSON: {exc}") from exc
    if not isinstance(record, dict) or "integrity" not in record:
        raise CacheCorruptionError("record is missing its integrity field")
    expected = record_integrity(record)
    if record["integrity"] != expected:
        raise CacheCorruptionError(
            f"integrity mismatch for key {record.get('key', '?')}: "
            f"stored {record['integrity'][:12]}..., computed {expected[:12]}..."
        )
    return record


def fixture_header() -> dict:
    return {"format": FIXTURE_FORMAT, "version": FIXTURE_VERSION}


def write_fixture_file(path: str | Path, records: Sequence[Mapping]) -> None:
    """Write a fixture file: one header line, then one canonical record per line."""
    lines = [_canonical_json(fixture_header())]
    lines.extend(encode_record(r) for r in records)
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_fixture_file(path: str | Path) -> list[dict]:
    """Read and integrity-check a fixture file; returns records in file order."""
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"fixture file not found: {path}")
    lines = path.read_text(encoding="utf-8").splitlines()
    if not lines:
        raise ConfigError(f"fixture file is empty (missing header): {path}")
    try:
        header = json.loads(lines[0])
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}:1: bad fixture header: {exc}") from exc
    if header.get("format") != FIXTURE_FORMAT:
        raise ConfigError(f"{path}: not a {FIXTURE_FORMAT} file (header: {header})")
    records = []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        try:
            records.append(decode_record(line))
        except CacheCorruptionError as exc:
            raise ConfigError(f"{path}:{lineno}: {exc}") from exc
    return records


# ---------------------------------------------------------------------------
# Cache store
# ---------------------------------------------------------------------------


class CacheStore:
    """Directory of one record file per cache key.

    Writes are atomic (temp file + rename), so concurrent writers of the
    same key degrade to last-write-wins. Corrupt records are quarantined on
    read and treated as misses.
    """

    def __init__(self, directory: str | Path):
        self.directory = Path(directory)
        self.directory.mkdir(parents=True, exist_ok=True)

    def path_for(self, key: str) -> Path:
        return self.directory / f"{key}.json"

    def get(self, key: str) -> dict | None:
        path = self.path_for(key)
        if not path.is_file():
            return None
        try:
            return decode_record(path.read_text(encoding="utf-8"))
        except CacheCorruptionError as exc:
            quarantined = path.with_name(f"{path.name}.corrupt-{time.time_ns()}")
            path.rename(quarantined)
            logger.warning(
                "quarantined corrupt cache record %s -> %s (%s)", path.name, quarantined.name, exc
            )
            return None

    def put(self, key: str, record: Mapping) -> None:
        fd, tmp = tempfile.mkstemp(dir=self.directory, suffix=".tmp")
        try:
            with os.fdopen(fd, "w", encoding="utf-8") as fh:
                fh.write(encode_record(record))
            os.replace(tmp, self.path_for(key))
        except BaseException:
            if os.path.exists(tmp):
                os.unlink(tmp)
            raise

    def keys(self) -> list[str]:
        return sorted(p.stem for p in self.directory.glob("*.json"))

    def stats(self) -> dict:
        paths = list(self.directory.glob("*.json"))
        return {"records": len(paths), "bytes": sum(p.stat().st_size for p in paths)}

    def verify(self) -> list[str]:
        """Re-hash every record; returns the keys of corrupt records."""
        corrupt = []
        for path in sorted(self.directory.glob("*.json")):
            try:
                decode_record(path.read_text(encoding="utf-8"))
            except CacheCorruptionError:
                corrupt.append(path.stem)
        return corrupt

    def clear(self) -> int:
        paths = list(self.directory.glob("*.json"))
        for path in paths:
            path.unlink()
        return len(paths)


# ---------------------------------------------------------------------------
# Providers
# ---------------------------------------------------------------------------


class ReplayProvider:
    """Serves recorded exchanges from a fixture file; immutable after load."""

    def __init__(self, config: ProviderConfig):
        self.config = config
        self._records = {r["key"]: r for r in load_fixture_file(config.fixture_path)}

    def __len__(self) -> int:
        return len(self._records)

    def query(self, request: LmmRequest) -> LmmExchange:
        key = cache_key(request)
        record = self._records.get(key)
        if record is None:
            raise FixtureMissError(key, request.prompt_text)
        return LmmExchange(
            request=request,
            answer_text=record["answer_text"],
            latency_ms=0,
            provider_meta={"source": "replay-fixture"},
            from_cache=False,
        )


class GeminiAdapter:
    """Request/response mapping for a Gemini-style generate-content endpoint."""

    def build(self, config: ProviderConfig, request: LmmRequest, api_key: str):
        url = f"{config.endpoint.rstrip('/')}/v1beta/models/{request.model_id}:generateContent"
        headers = {"x-goog-api-key": api_key, "Content-Type": "application/json"}
        parts: list[dict] = [{"text": request.prompt_text}]
        if request.image_ref is not None:
            image_path = Path(request.image_ref)
            if not image_path.is_file():
                raise ProviderError(f"image not readable at send time: {image_path}")
            data = image_path.read_bytes()
            digest = hashlib.sha256(data).hexdigest()
            if digest != request.image_digest:
                raise ProviderError(
                    f"image bytes changed since request construction: {image_path}"
                )
            mime = mimetypes.guess_type(image_path.name)[0] or "application/octet-stream"
            parts.append(
                {
                    "inline_data": {
                        "mime_type": mime,
                        "data": base64.b64encode(data).decode("ascii"),
                    }
                }
            )
        body = {
            "contents": [{"parts": parts}],
            "generationConfig": {
                "temperature": request.generation_params.temperature,
                "maxOutputTokens": request.generation_params.max_output_tokens,
            },
        }
        return url, headers, body

    def parse(self, data: Mapping) -> str:
        feedback = data.get("promptFeedback") or {}
        if feedback.get("blockReason"):
            raise SafetyRefusalError(f"prompt blocked: {feedback['blockReason']}")
        candidates = data.get("candidates") or []
        if not candidates:
            raise ProviderError(f"no candidates in response: {_canonical_json(data)[:200]}")
        candidate = candidates[0]
        if candidate.get("finishReason") == "SAFETY":
            raise SafetyRefusalError("candidate finished with SAFETY")
        parts = (candidate.get("content") or {}).get("parts") or []
        texts = [p["text"] for p in parts if "text" in p]
        if not texts:
            raise ProviderError(f"candidate has no text parts: {_canonical_json(candidate)[:200]}")
        # Verbatim answer; only trailing newlines are removed.
        return "".join(texts).rstrip("\n")


ADAPTERS: dict[str, GeminiAdapter] = {"gemini": GeminiAdapter()}


def register_adapter(name: str, adapter) -> None:
    ADAPTERS[name] = adapter


_TRANSIENT_STATUSES = frozenset({429, 500, 502, 503, 504})
_AUTH_STATUSES = frozenset({401, 403})


class LiveProvider:
    """HTTP client with token-bucket admission, retries, and typed errors."""

    def __init__(
        self,
        config: ProviderConfig,
        *,
        seed: int = 0,
        session: requests.Session | None = None,
    ):
        self.config = config
        if config.adapter not in ADAPTERS:
            raise ConfigError(f"unknown provider adapter {config.adapter!r}")
        self.adapter = ADAPTERS[config.adapter]
        self.bucket = TokenBucket(config.rate_limit_rps)
        self._session = session or requests.Session()
        self._rng = random.Random(seed)
        self._rng_lock = threading.Lock()

    def _jittered_backoff_s(self, attempt: int) -> float:
        base = self.config.backoff_base_ms * (2**attempt) / 1000.0
        with self._rng_lock:
            jitter = self._rng.uniform(-0.2, 0.2)
        return base * (1.0 + jitter)

    def _api_key(self) -> str:
        key = os.environ.get(self.config.credential_ref or "")
        if not key:
            raise AuthenticationError(
                f"credential environment variable {self.config.credential_ref!r} is not set"
            )
        return key

    def query(self, request: LmmRequest) -> LmmExchange:
        if os.environ.get("NO_NETWORK") == "1":
            raise ProviderError("NO_NETWORK=1 forbids live provider calls")
        api_key = self._api_key()
        url, headers, body = self.adapter.build(self.config, request, api_key)
        last_error: Exception | None = None
        attempts = 0
        start = time.monotonic()
        for attempt in range(self.config.max_retries + 1):
            attempts = attempt + 1
            self.bucket.acquire()
            try:
                response = self._session.post(
                    url, headers=headers, json=body, timeout=REQUEST_TIMEOUT_S
                )
            except (requests.Timeout, requests.ConnectionError) as exc:
                last_error = ProviderError(f"transport error: {exc}")
                logger.warning("attempt %d/%d transport error: %s", attempts,
                               self.config.max_retries + 1, exc)
            else:
                status = response.status_code
                if status in _AUTH_STATUSES:
                    raise AuthenticationError(
                        f"authentication failed ({status}): {response.text[:200]}"
                    )
                if status in _TRANSIENT_STATUSES:
                    last_error = ProviderError(f"transient HTTP {status}: {response.text[:200]}")
                    logger.warning("attempt %d/%d got HTTP %d", attempts,
                                   self.config.max_retries + 1, status)
                elif status >= 400:
                    raise ProviderError(f"HTTP {status}: {response.text[:300]}")
                else:
                    answer = self.adapter.parse(response.json())
                    latency_ms = int((time.monotonic() - start) * 1000)
                    return LmmExchange(
                        request=request,
                        answer_text=answer,
                        latency_ms=latency_ms,
                        provider_meta={
                            "source": "live-api",
                            "attempts": attempts,
                            "retries": attempts - 1,
                            "http_status": status,
                        },
                        from_cache=False,
                    )
            if attempt < self.config.max_retries:
                time.sleep(self._jittered_backoff_s(attempt))
        raise RetriesExhaustedError(
            f"gave up after {attempts} attempts: {last_error}", last_error=last_error
        )


# ---------------------------------------------------------------------------
# Gateway
# ---------------------------------------------------------------------------


@dataclass
class FixtureRecordingResult:
    out_path: Path
    written_keys: list[str]
    failures: list[dict]
    failures_path: Path | None


class LmmGateway:
    """Front door for LMM calls: bounded concurrency, caching, record/replay."""

    def __init__(
        self,
        provider: ProviderConfig,
        cache: CacheStore | None = None,
        *,
        seed: int = 0,
        max_inflight: int = 4,
        session: requests.Session | None = None,
    ):
        self.provider_config = provider
        self.cache = cache
        self._inflight = threading.BoundedSemaphore(max_inflight)
        if provider.kind == "replay-fixture":
            self._provider = ReplayProvider(provider)
        else:
            self._provider = LiveProvider(provider, seed=seed, session=session)

    def query(self, request: LmmRequest) -> LmmExchange:
        """Perform the request (no cache), bounded by the in-flight gate."""
        with self._inflight:
            return self._provider.query(request)

    def query_cached(self, request: LmmRequest) -> LmmExchange:
        """Serve from the cache store when possible; persist fresh answers."""
        if self.cache is None:
            return self.query(request)
        key = cache_key(request)
        record = self.cache.get(key)
        if record is not None:
            return LmmExchange(
                request=request,
                answer_text=record["answer_text"],
                latency_ms=0,
                provider_meta={"source": "cache"},
                from_cache=True,
            )
        exchange = self.query(request)
        self.cache.put(key, make_record(request, exchange.answer_text))
        return exchange

    def record_fixtures(
        self,
        requests_to_record: Sequence[LmmRequest],
        out_path: str | Path,
        recorded_at: str | None = None,
    ) -> FixtureRecordingResult:
        """Query each request live and write a replayable fixture file.

        Re-recorded keys keep the superseded record under a "previous"
        field. Failed requests are skipped and listed in a sidecar
        failures manifest next to the fixture.
        """
        if self.provider_config.kind != "live-api":
            raise ConfigError("record_fixtures requires a live-api provider")
        out_path = Path(out_path)
        existing: dict[str, dict] = {}
        order: list[str] = []
        if out_path.is_file():
            for record in load_fixture_file(out_path):
                existing[record["key"]] = record
                order.append(record["key"])
        failures: list[dict] = []
        for request in requests_to_record:
            key = cache_key(request)
            try:
                exchange = self.query(request)
            except ProviderError as exc:
                failures.append(
                    {"key": key, "prompt_text": request.prompt_text, "error": str(exc)}
                )
                continue
            record = make_record(request, exchange.answer_text, recorded_at=recorded_at)
            if key in existing:
                previous = copy.deepcopy(existing[key])
                record = {k: v for k, v in record.items() if k != "integrity"}
                record["previous"] = previous
                record["integrity"] = record_integrity(record)
            else:
                order.append(key)
            existing[key] = record
        out_path.parent.mkdir(parents=True, exist_ok=True)
        write_fixture_file(out_path, [existing[k] for k in order])
        failures_path = None
        if failures:
            failures_path = out_path.with_name(out_path.name + ".failures.json")
            failures_path.write_text(
                json.dumps(failures, indent=2, sort_keys=True) + "\n", encoding="utf-8"
            )
        return FixtureRecordingResult(
            out_path=out_path,
            written_keys=[k for k in order if k in existing],
            failures=failures,
            failures_path=failures_path,
        )
