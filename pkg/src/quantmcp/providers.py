"""Pluggable data-source adapters behind one fetch contract.

Three kinds ship: ``synthetic`` (deterministic, seeded), ``http`` (keyed
REST, one GET per instrument code), and ``csv`` (offline exported files).
Adapters are stateless given their config; rate limiting and caching are
enforced by the caller. Providers deal in calendar dates only; close-of-day
timestamps are materialized during normalization.

The trading calendar is weekday-only (no exchange holidays), trading
calendar fidelity for determinism; see README for the documented divergence
from real exchange calendars.
"""

from __future__ import annotations

import csv
import datetime as dt
import math
import os
import string
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Any, Callable

import requests

from .errors import ConfigError, CredentialMissing, InternalError, ProviderFailure, ValidationError

if TYPE_CHECKING:
    from .normalize import OptionsMap
    from .security import CredentialStore

CANONICAL_FIELDS = ("close", "open", "high", "low", "volume", "pb_lf", "turn")

PROVIDER_KINDS = ("synthetic", "http", "csv")

_URL_PLACEHOLDERS = frozenset({"code", "field", "start", "end", "apikey"})

FNV_OFFSET = 14695981039346656037
FNV_PRIME = 1099511628211
_U64 = (1 << 64) - 1


def fnv1a64(data: bytes) -> int:
    """64-bit FNV-1a hash."""
    h = FNV_OFFSET
    for byte in data:
        h ^= byte
        h = (h * FNV_PRIME) & _U64
    return h


@dataclass(frozen=True)
class RateSpec:
    capacity: int = 5
    refill_per_sec: float = 1.0


@dataclass(frozen=True)
class ProviderConfig:
    """Declarative description of one data source."""

    id: str
    kind: str
    base_url_template: str | None = None
    csv_path: str | None = None
    seed: int = 0
    field_map: dict[str, str] = field(default_factory=dict)
    credential_ref: str | None = None
    rate: RateSpec = field(default_factory=RateSpec)
    timeout_ms: int = 5000
    retries: int = 0
    close_time: dt.time = dt.time(15, 0, 0)

    def check(self) -> None:
        """Enforce config invariants; violations abort startup."""
        if not self.id:
            raise ConfigError("provider id must be non-empty")
        if self.kind not in PROVIDER_KINDS:
            raise ConfigError(f"provider.{self.id}.kind: unknown kind {self.kind!r}")
        if self.kind == "http":
            if not self.base_url_template:
                raise ConfigError(f"provider.{self.id}.base_url: required for http providers")
            names = {
                fname
                for _, fname, _, _ in string.Formatter().parse(self.base_url_template)
                if fname is not None
            }
            unknown = names - _URL_PLACEHOLDERS
            if unknown:
                raise ConfigError(
                    f"provider.{self.id}.base_url: unknown placeholder(s) {sorted(unknown)}"
                )
        if self.kind == "csv":
            if not self.csv_path:
                raise ConfigError(f"provider.{self.id}.csv_path: required for csv providers")
            if not os.path.isfile(self.csv_path) or not os.access(self.csv_path, os.R_OK):
                raise ConfigError(f"provider.{self.id}.csv_path: {self.csv_path!r} is not a readable file")
        if not 0 <= self.seed <= _U64:
            raise ConfigError(f"provider.{self.id}.seed: must fit in 64 unsigned bits")
        if self.rate.capacity < 1:
            raise ConfigError(f"provider.{self.id}.rate_capacity: must be >= 1")
        if self.rate.refill_per_sec <= 0:
            raise ConfigError(f"provider.{self.id}.rate_refill_per_sec: must be > 0")
        if self.timeout_ms < 1:
            raise ConfigError(f"provider.{self.id}.timeout_ms: must be >= 1")
        if self.retries < 0:
            raise ConfigError(f"provider.{self.id}.retries: must be >= 0")


@dataclass(frozen=True)
class DataQuery:
    """Canonical request: instruments, fields, inclusive date range, options."""

    codes: list[str]
    fields: list[str]
    start_date: dt.date
    end_date: dt.date
    options: "OptionsMap | None" = None
    provider_id: str = ""

    def check(self) -> None:
        violations = []
        if not self.codes or any(not isinstance(c, str) or not c for c in self.codes):
            violations.append("codes: must be a non-empty list of non-empty strings")
        elif len(set(self.codes)) != len(self.codes):
            violations.append("codes: duplicate instrument codes")
        if not self.fields:
            violations.append("fields: must be non-empty")
        elif len(set(self.fields)) != len(self.fields):
            violations.append("fields: duplicate field names")
        for f in self.fields:
            if f not in CANONICAL_FIELDS:
                violations.append(
                    f"fields: unknown field {f!r}; canonical fields are {', '.join(CANONICAL_FIELDS)}"
                )
        if self.start_date > self.end_date:
            violations.append("start_date: must not be after end_date")
        if violations:
            raise ValidationError("invalid query", data={"violations": violations})


@dataclass(frozen=True)
class RawProviderPayload:
    """Rows as fetched, keyed by provider field names, dates within range."""

    provider_id: str
    rows: list[dict[str, Any]]
    fetched_at: str


def trading_days(start: dt.date, end: dt.date) -> list[dt.date]:
    """All Mondays through Fridays in [start, end], ascending."""
    if start > end:
        raise ValidationError("start_date must not be after end_date")
    days = []
    day = start
    one = dt.timedelta(days=1)
    while day <= end:
        if day.weekday() < 5:
            days.append(day)
        day += one
    return days


def synthetic_value(code: str, field_name: str, day: dt.date, seed: int) -> float | int:
    """Deterministic pseudo-market value for (code, field, day, seed).

    Derived from a 64-bit FNV-1a hash of ``code|field|YYYY-MM-DD|seed``
    mapped into [0, 1); each field scales that unit value into a plausible
    range (prices near 100-200, turnover under 10, and so on).
    """
    if field_name not in CANONICAL_FIELDS:
        raise ValidationError(f"unknown field {field_name!r}")
    key = f"{code}|{field_name}|{day.isoformat()}|{seed}"
    u = (fnv1a64(key.encode("utf-8")) % 1_000_000) / 1_000_000
    if field_name in ("close", "open", "high", "low"):
        return round(100 + 100 * u, 2)
    if field_name == "volume":
        return math.floor(1_000_000 * u)
    if field_name == "pb_lf":
        return round(1 + 9 * u, 3)
    return round(10 * u, 4)  # turn


def _provider_fields(config: ProviderConfig, fields: list[str]) -> list[str]:
    return [config.field_map.get(f, f) for f in fields]


def _fetch_synthetic(config: ProviderConfig, query: DataQuery) -> list[dict[str, Any]]:
    rows = []
    days = trading_days(query.start_date, query.end_date)
    for code in query.codes:
        for day in days:
            row: dict[str, Any] = {"code": code, "date": day}
            for f in query.fields:
                row[config.field_map.get(f, f)] = synthetic_value(code, f, day, config.seed)
            rows.append(row)
    return rows


def _parse_cell(raw: str, column: str, config: ProviderConfig) -> float | None:
    cell = raw.strip() if raw is not None else ""
    if cell == "":
        return None
    try:
        return float(cell)
    except ValueError:
        raise ProviderFailure(
            f"provider {config.id!r} csv column {column!r} holds non-numeric value {cell!r}",
            data={"reason": "schema", "column": column},
        ) from None


def _fetch_csv(config: ProviderConfig, query: DataQuery) -> list[dict[str, Any]]:
    wanted = _provider_fields(config, query.fields)
    rows = []
    codes = set(query.codes)
    with open(config.csv_path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        for column in ["code", "date", *wanted]:
            if column not in header:
                raise ProviderFailure(
                    f"provider {config.id!r} csv is missing column {column!r}",
                    data={"reason": "schema", "missing_column": column},
                )
        for rec in reader:
            try:
                day = dt.date.fromisoformat((rec.get("date") or "").strip())
            except ValueError:
                raise ProviderFailure(
                    f"provider {config.id!r} csv holds unparseable date {rec.get('date')!r}",
                    data={"reason": "schema"},
                ) from None
            code = (rec.get("code") or "").strip()
            if code not in codes or not query.start_date <= day <= query.end_date:
                continue
            row: dict[str, Any] = {"code": code, "date": day}
            for column in wanted:
                row[column] = _parse_cell(rec.get(column, ""), column, config)
            rows.append(row)
    return rows


def _coerce_numeric(value: Any, column: str, config: ProviderConfig) -> float | int | None:
    if value is None:
        return None
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ProviderFailure(
            f"provider {config.id!r} returned non-numeric value for {column!r}",
            data={"reason": "schema", "column": column},
        )
    return value


def _fetch_http(
    config: ProviderConfig, query: DataQuery, credentials: "CredentialStore"
) -> list[dict[str, Any]]:
    wanted = _provider_fields(config, query.fields)
    apikey = ""
    if "{apikey}" in config.base_url_template:
        apikey = credentials.resolve(config.credential_ref or config.id)
    rows: list[dict[str, Any]] = []
    codes = set(query.codes)
    for code in query.codes:
        url = config.base_url_template.format(
            code=code,
            field=",".join(wanted),
            start=query.start_date.isoformat(),
            end=query.end_date.isoformat(),
            apikey=apikey,
        )
        response = None
        for attempt in range(config.retries + 1):
            try:
                response = requests.get(url, timeout=config.timeout_ms / 1000.0)
                break
            except requests.Timeout as exc:
                if attempt == config.retries:
                    raise ProviderFailure(
                        f"provider {config.id!r} timed out after {config.timeout_ms}ms",
                        data={"timeout": True},
                    ) from exc
            except requests.RequestException as exc:
                if attempt == config.retries:
                    raise ProviderFailure(
                        f"provider {config.id!r} request failed: {exc}",
                        data={"reason": "connection"},
                    ) from exc
        if not 200 <= response.status_code < 300:
            raise ProviderFailure(
                f"provider {config.id!r} returned HTTP {response.status_code}",
                data={"status": response.status_code},
            )
        try:
            body = response.json()
        except ValueError:
            raise ProviderFailure(
                f"provider {config.id!r} returned a non-JSON body",
                data={"reason": "schema"},
            ) from None
        if not isinstance(body, dict) or not isinstance(body.get("rows"), list):
            raise ProviderFailure(
                f'provider {config.id!r} body must be shaped {{"rows": [...]}}',
                data={"reason": "schema"},
            )
        for raw_row in body["rows"]:
            if not isinstance(raw_row, dict):
                raise ProviderFailure(
                    f"provider {config.id!r} returned a non-object row",
                    data={"reason": "schema"},
                )
            try:
                day = dt.date.fromisoformat(str(raw_row.get("date")))
            except ValueError:
                raise ProviderFailure(
                    f"provider {config.id!r} returned unparseable date {raw_row.get('date')!r}",
                    data={"reason": "schema"},
                ) from None
            row_code = raw_row.get("code", code)
            if row_code not in codes or not query.start_date <= day <= query.end_date:
                continue  # keep the payload within the query contract
            row: dict[str, Any] = {"code": row_code, "date": day}
            for column in wanted:
                row[column] = _coerce_numeric(raw_row.get(column), column, config)
            rows.append(row)
    return rows


def fetch_historical(
    config: ProviderConfig,
    query: DataQuery,
    credentials: "CredentialStore",
    now: Callable[[], dt.datetime] | None = None,
) -> RawProviderPayload:
    """Fetch raw rows for ``query`` from the source described by ``config``.

    Synthetic sources yield one row per (code, trading day) with every
    requested field populated; csv and http sources may leave gaps, which
    downstream normalization materializes as nulls.
    """
    query.check()
    if config.kind == "synthetic":
        rows = _fetch_synthetic(config, query)
    elif config.kind == "csv":
        rows = _fetch_csv(config, query)
    elif config.kind == "http":
        rows = _fetch_http(config, query, credentials)
    else:
        raise InternalError(f"provider {config.id!r} has unknown kind {config.kind!r}")
    stamp = (now() if now is not None else dt.datetime.now(dt.timezone.utc)).isoformat()
    return RawProviderPayload(provider_id=config.id, rows=rows, fetched_at=stamp)
