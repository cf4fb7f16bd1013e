"""Server configuration: INI-style file with a [server] section and one
[provider.<id>] section per data source.

Example::

    [server]
    default_provider = synth
    close_time = 15:00:00
    credentials = creds.conf

    [provider.synth]
    kind = synthetic
    seed = 0

Relative paths (credentials, csv_path) resolve against the config file's
directory. Unknown sections or keys are startup errors so typos surface
immediately.
"""

from __future__ import annotations

import configparser
import datetime as dt
import os
import time
from dataclasses import dataclass, field
from typing import Callable, Mapping

from .errors import ConfigError
from .providers import ProviderConfig, RateSpec
from .security import RateLimiter, ResponseCache, load_credentials
from .tools import ToolContext

_SERVER_KEYS = {
    "name",
    "close_time",
    "credentials",
    "default_provider",
    "concurrency",
    "cache_ttl_historical_s",
    "cache_ttl_live_s",
    "strict_credential_permissions",
}

_PROVIDER_KEYS = {
    "kind",
    "base_url",
    "csv_path",
    "seed",
    "field_map",
    "credential_ref",
    "rate_capacity",
    "rate_refill_per_sec",
    "timeout_ms",
    "retries",
    "close_time",
}


@dataclass
class ServerConfig:
    name: str = "quantmcp"
    close_time: dt.time = dt.time(15, 0, 0)
    credentials_path: str | None = None
    default_provider: str = ""
    concurrency: int = 0
    cache_ttl_historical_s: float = 86400.0
    cache_ttl_live_s: float = 5.0
    strict_credential_permissions: bool = False
    providers: dict[str, ProviderConfig] = field(default_factory=dict)


def _parse_time(raw: str, where: str) -> dt.time:
    try:
        return dt.time.fromisoformat(raw)
    except ValueError:
        raise ConfigError(f"{where}: {raw!r} is not a valid HH:MM:SS time") from None


def _parse_int(raw: str, where: str) -> int:
    try:
        return int(raw)
    except ValueError:
        raise ConfigError(f"{where}: {raw!r} is not an integer") from None


def _parse_float(raw: str, where: str) -> float:
    try:
        return float(raw)
    except ValueError:
        raise ConfigError(f"{where}: {raw!r} is not a number") from None


def _parse_bool(raw: str, where: str) -> bool:
    lowered = raw.strip().lower()
    if lowered in ("1", "true", "yes", "on"):
        return True
    if lowered in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"{where}: {raw!r} is not a boolean")


def _parse_field_map(raw: str, where: str) -> dict[str, str]:
    mapping: dict[str, str] = {}
    for token in raw.split(","):
        token = token.strip()
        if not token:
            continue
        if "=" not in token:
            raise ConfigError(f"{where}: entry {token!r} must look like canonical=provider_field")
        canonical, _, provider_field = token.partition("=")
        mapping[canonical.strip()] = provider_field.strip()
    return mapping


def load_config(path: str | os.PathLike) -> ServerConfig:
    """Parse and validate the config file; any problem raises ConfigError."""
    parser = configparser.ConfigParser(interpolation=None)
    try:
        with open(path, encoding="utf-8") as fh:
            parser.read_file(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc
    except configparser.Error as exc:
        raise ConfigError(f"cannot parse config file {path}: {exc}") from exc

    base_dir = os.path.dirname(os.path.abspath(path))

    def resolve(p: str) -> str:
        return p if os.path.isabs(p) else os.path.join(base_dir, p)

    config = ServerConfig()
    if parser.has_section("server"):
        section = parser["server"]
        unknown = set(section) - _SERVER_KEYS
        if unknown:
            raise ConfigError(f"server: unknown key(s) {sorted(unknown)}")
        config.name = section.get("name", config.name)
        if "close_time" in section:
            config.close_time = _parse_time(section["close_time"], "server.close_time")
        if "credentials" in section:
            config.credentials_path = resolve(section["credentials"])
        config.default_provider = section.get("default_provider", "")
        if "concurrency" in section:
            config.concurrency = _parse_int(section["concurrency"], "server.concurrency")
        if "cache_ttl_historical_s" in section:
            config.cache_ttl_historical_s = _parse_float(
                section["cache_ttl_historical_s"], "server.cache_ttl_historical_s"
            )
        if "cache_ttl_live_s" in section:
            config.cache_ttl_live_s = _parse_float(section["cache_ttl_live_s"], "server.cache_ttl_live_s")
        if "strict_credential_permissions" in section:
            config.strict_credential_permissions = _parse_bool(
                section["strict_credential_permissions"], "server.strict_credential_permissions"
            )

    for section_name in parser.sections():
        if section_name == "server":
            continue
        if not section_name.startswith("provider."):
            raise ConfigError(f"unknown section [{section_name}]")
        provider_id = section_name[len("provider."):]
        if not provider_id:
            raise ConfigError("provider section needs an id: [provider.<id>]")
        section = parser[section_name]
        unknown = set(section) - _PROVIDER_KEYS
        if unknown:
            raise ConfigError(f"{section_name}: unknown key(s) {sorted(unknown)}")
        if "kind" not in section:
            raise ConfigError(f"{section_name}.kind: required")
        where = section_name
        provider = ProviderConfig(
            id=provider_id,
            kind=section["kind"].strip(),
            base_url_template=section.get("base_url"),
            csv_path=resolve(section["csv_path"]) if "csv_path" in section else None,
            seed=_parse_int(section["seed"], f"{where}.seed") if "seed" in section else 0,
            field_map=_parse_field_map(section["field_map"], f"{where}.field_map")
            if "field_map" in section
            else {},
            credential_ref=section.get("credential_ref"),
            rate=RateSpec(
                capacity=_parse_int(section["rate_capacity"], f"{where}.rate_capacity")
                if "rate_capacity" in section
                else 5,
                refill_per_sec=_parse_float(
                    section["rate_refill_per_sec"], f"{where}.rate_refill_per_sec"
                )
                if "rate_refill_per_sec" in section
                else 1.0,
            ),
            timeout_ms=_parse_int(section["timeout_ms"], f"{where}.timeout_ms")
            if "timeout_ms" in section
            else 5000,
            retries=_parse_int(section["retries"], f"{where}.retries") if "retries" in section else 0,
            close_time=_parse_time(section["close_time"], f"{where}.close_time")
            if "close_time" in section
            else config.close_time,
        )
        provider.check()
        config.providers[provider_id] = provider

    if not config.providers:
        raise ConfigError("config defines no [provider.<id>] sections")
    if not config.default_provider:
        raise ConfigError("server.default_provider: required")
    if config.default_provider not in config.providers:
        raise ConfigError(
            f"server.default_provider: {config.default_provider!r} is not a configured provider"
        )
    return config


def build_context(
    config: ServerConfig,
    environ: Mapping[str, str] | None = None,
    wall_clock: Callable[[], dt.datetime] | None = None,
    mono_clock: Callable[[], float] | None = None,
    warn: Callable[[str], None] | None = None,
) -> ToolContext:
    """Assemble the runtime dependencies a server needs from its config."""
    credentials = load_credentials(
        config.credentials_path,
        environ=environ,
        provider_ids=config.providers,
        strict_permissions=config.strict_credential_permissions,
        warn=warn,
    )
    limiter = RateLimiter({pid: p.rate for pid, p in config.providers.items()})
    mono = mono_clock if mono_clock is not None else time.monotonic
    cache = ResponseCache(
        clock=mono,
        historical_ttl_s=config.cache_ttl_historical_s,
        live_ttl_s=config.cache_ttl_live_s,
    )
    kwargs = {}
    if wall_clock is not None:
        kwargs["wall_clock"] = wall_clock
    return ToolContext(
        providers=dict(config.providers),
        default_provider_id=config.default_provider,
        credentials=credentials,
        rate_limiter=limiter,
        cache=cache,
        mono_clock=mono,
        **kwargs,
    )
