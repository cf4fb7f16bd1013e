"""Credential vaulting, log/wire redaction, rate limiting, response caching.

Secrets live server-side only: the store never serializes them, its repr
shows provider ids alone, and :func:`redact` scrubs every outgoing frame and
log line. The token-bucket limiter and the TTL cache are the only shared
mutable state in the server; both are safe for concurrent use.
"""

from __future__ import annotations

import datetime as dt
import math
import os
import re
import stat
import threading
from dataclasses import dataclass
from typing import Any, Callable, Iterable, Mapping

from .errors import ConfigError, CredentialMissing, InternalError
from .providers import DataQuery, RateSpec, fnv1a64
from .transport import ErrorObject, JsonRpcMessage, MISSING

REDACTED = "***REDACTED***"

ENV_PREFIX = "QUANTMCP_CRED_"

_CRED_LINE_RE = re.compile(r"[A-Za-z0-9_.-]+\Z")


def env_credential_name(provider_id: str) -> str:
    """Environment variable carrying the secret for ``provider_id``."""
    return ENV_PREFIX + re.sub(r"[^A-Za-z0-9]", "_", provider_id).upper()


class CredentialStore:
    """Read-only map of provider id to secret; never serialized anywhere."""

    def __init__(self, secrets: Mapping[str, str], source: str = "file"):
        self._secrets = dict(secrets)
        self.source = source

    def resolve(self, provider_id: str) -> str:
        try:
            return self._secrets[provider_id]
        except KeyError:
            raise CredentialMissing(
                f"no credential loaded for provider {provider_id!r}",
                data={"provider": provider_id},
            ) from None

    def has(self, provider_id: str) -> bool:
        return provider_id in self._secrets

    def provider_ids(self) -> tuple[str, ...]:
        return tuple(self._secrets)

    def secret_values(self) -> tuple[str, ...]:
        return tuple(self._secrets.values())

    def __len__(self) -> int:
        return len(self._secrets)

    def __repr__(self) -> str:  # secrets must never leak through repr
        return f"CredentialStore(providers={sorted(self._secrets)}, source={self.source!r})"


def load_credentials(
    path: str | os.PathLike | None,
    environ: Mapping[str, str] | None = None,
    provider_ids: Iterable[str] = (),
    strict_permissions: bool = False,
    warn: Callable[[str], None] | None = None,
) -> CredentialStore:
    """Load secrets from a flat ``provider.key = value`` file plus environment.

    ``QUANTMCP_CRED_<PROVIDERID>`` variables override file entries. A missing
    file with no matching environment variables yields an empty store. A
    group- or world-readable file is a warning by default and a startup
    failure with ``strict_permissions``.
    """
    secrets: dict[str, str] = {}
    source = "environment"
    if path is not None and os.path.exists(path):
        source = "file"
        mode = stat.S_IMODE(os.stat(path).st_mode)
        if mode & 0o044:
            message = f"credential file {path} is group/world readable (mode {mode:03o})"
            if strict_permissions:
                raise ConfigError(message)
            if warn is not None:
                warn(message)
        with open(path, encoding="utf-8") as fh:
            for lineno, raw in enumerate(fh, 1):
                line = raw.strip()
                if not line or line.startswith("#"):
                    continue
                if "=" not in line:
                    raise ConfigError(f"{path}:{lineno}: expected 'provider.key = value'")
                left, _, value = line.partition("=")
                left = left.strip()
                value = value.strip()
                if not left.endswith(".key") or len(left) == len(".key"):
                    raise ConfigError(f"{path}:{lineno}: entry name must look like '<provider>.key'")
                provider_id = left[: -len(".key")]
                if not _CRED_LINE_RE.fullmatch(provider_id):
                    raise ConfigError(f"{path}:{lineno}: invalid provider id {provider_id!r}")
                if not value:
                    raise ConfigError(f"{path}:{lineno}: empty secret value")
                if provider_id in secrets:
                    raise ConfigError(f"{path}:{lineno}: duplicate entry for provider {provider_id!r}")
                secrets[provider_id] = value
    env = os.environ if environ is None else environ
    by_env_name = {env_credential_name(pid): pid for pid in provider_ids}
    for name, value in env.items():
        if not name.startswith(ENV_PREFIX) or not value:
            continue
        provider_id = by_env_name.get(name, name[len(ENV_PREFIX):].lower())
        secrets[provider_id] = value
    return CredentialStore(secrets, source=source)


def _redact_str(text: str, secrets: tuple[str, ...]) -> str:
    for secret in secrets:
        if secret in text:
            text = text.replace(secret, REDACTED)
    return text


def _redact_value(value: Any, secrets: tuple[str, ...]) -> Any:
    if isinstance(value, str):
        return _redact_str(value, secrets)
    if isinstance(value, dict):
        return {
            _redact_str(k, secrets) if isinstance(k, str) else k: _redact_value(v, secrets)
            for k, v in value.items()
        }
    if isinstance(value, (list, tuple)):
        return [_redact_value(v, secrets) for v in value]
    return value


def redact(payload: Any, store: CredentialStore) -> Any:
    """Return ``payload`` with every loaded secret substring replaced.

    Works on plain text and on structured values (keys included), returning
    a same-shaped copy. With no loaded secrets the input is returned as-is.
    """
    secrets = tuple(sorted(store.secret_values(), key=len, reverse=True))
    if not secrets:
        return payload
    return _redact_value(payload, secrets)


def redact_message(msg: JsonRpcMessage, store: CredentialStore) -> JsonRpcMessage:
    """Scrub a protocol message before it is serialized onto the wire."""
    if not len(store):
        return msg
    error = msg.error
    if error is not None:
        error = ErrorObject(
            code=error.code,
            message=redact(error.message, store),
            data=redact(error.data, store) if error.data is not MISSING else MISSING,
        )
    return JsonRpcMessage(
        kind=msg.kind,
        id=redact(msg.id, store) if isinstance(msg.id, str) else msg.id,
        method=msg.method,
        params=redact(msg.params, store) if msg.params is not MISSING else MISSING,
        result=redact(msg.result, store) if msg.result is not MISSING else MISSING,
        error=error,
        extra=redact(msg.extra, store),
    )


@dataclass(frozen=True)
class RateDecision:
    allowed: bool
    retry_after_ms: int = 0


class _Bucket:
    __slots__ = ("spec", "tokens", "last_refill")

    def __init__(self, spec: RateSpec):
        self.spec = spec
        self.tokens = float(spec.capacity)
        self.last_refill: float | None = None


class RateLimiter:
    """Per-provider token buckets with linearizable acquire semantics."""

    def __init__(self, rates: Mapping[str, RateSpec]):
        self._buckets = {pid: _Bucket(spec) for pid, spec in rates.items()}
        self._lock = threading.Lock()

    def acquire(self, provider_id: str, now: float) -> RateDecision:
        """Refill by elapsed time, then take one token or compute the wait.

        ``now`` is a monotonic timestamp in seconds.
        """
        with self._lock:
            bucket = self._buckets.get(provider_id)
            if bucket is None:
                raise InternalError(f"no rate bucket configured for provider {provider_id!r}")
            spec = bucket.spec
            if bucket.last_refill is None:
                bucket.last_refill = now
            elapsed = max(0.0, now - bucket.last_refill)
            bucket.tokens = min(float(spec.capacity), bucket.tokens + elapsed * spec.refill_per_sec)
            bucket.last_refill = now
            if bucket.tokens >= 1.0:
                bucket.tokens -= 1.0
                return RateDecision(True)
            needed = 1.0 - bucket.tokens
            return RateDecision(False, retry_after_ms=math.ceil(needed / spec.refill_per_sec * 1000.0))


@dataclass
class CacheEntry:
    key: int
    payload: Any
    expires_at: float


class _Flight:
    __slots__ = ("event", "payload", "exc")

    def __init__(self):
        self.event = threading.Event()
        self.payload: Any = None
        self.exc: BaseException | None = None


def cache_key(provider_id: str, query: DataQuery, kind: str = "historical") -> int:
    """Stable 64-bit key over the canonical query encoding.

    Codes and fields are sorted and options rendered key-sorted, so
    argument order never splits the cache. ``kind`` separates quote lookups
    from plain historical ranges because their TTL rules differ.
    """
    options = query.options.canonical() if query.options is not None else ""
    canonical = "\x1f".join(
        [
            kind,
            provider_id,
            ",".join(sorted(query.codes)),
            ",".join(sorted(query.fields)),
            query.start_date.isoformat(),
            query.end_date.isoformat(),
            options,
        ]
    )
    return fnv1a64(canonical.encode("utf-8"))


class ResponseCache:
    """TTL cache with single-flight deduplication of concurrent misses."""

    def __init__(
        self,
        clock: Callable[[], float],
        historical_ttl_s: float = 86400.0,
        live_ttl_s: float = 5.0,
    ):
        self._clock = clock
        self.historical_ttl_s = float(historical_ttl_s)
        self.live_ttl_s = float(live_ttl_s)
        self._entries: dict[int, CacheEntry] = {}
        self._inflight: dict[int, _Flight] = {}
        self._lock = threading.Lock()

    def ttl_for(self, query: DataQuery, kind: str, today: dt.date) -> float:
        """Ranges ending before today keep 24h; today-touching ranges and quotes, 5s."""
        if kind == "quote" or query.end_date >= today:
            return self.live_ttl_s
        return self.historical_ttl_s

    def lookup_or_store(self, key: int, compute: Callable[[], Any], ttl: float) -> tuple[Any, bool]:
        """Return (payload, cache_hit). A miss invokes ``compute`` exactly once.

        Concurrent identical misses wait on the in-flight producer and share
        its outcome; a failing producer propagates its exception and caches
        nothing, so the next call retries.
        """
        with self._lock:
            entry = self._entries.get(key)
            if entry is not None and entry.expires_at > self._clock():
                return entry.payload, True
            flight = self._inflight.get(key)
            if flight is None:
                flight = _Flight()
                self._inflight[key] = flight
                owner = True
            else:
                owner = False
        if not owner:
            if not flight.event.wait(timeout=30.0):
                raise InternalError("timed out waiting for an in-flight cache fill")
            if flight.exc is not None:
                raise flight.exc
            return flight.payload, True
        try:
            payload = compute()
        except BaseException as exc:
            flight.exc = exc
            with self._lock:
                self._inflight.pop(key, None)
            flight.event.set()
            raise
        with self._lock:
            self._entries[key] = CacheEntry(key=key, payload=payload, expires_at=self._clock() + ttl)
            self._inflight.pop(key, None)
        flight.payload = payload
        flight.event.set()
        return payload, False
