"""Tool handlers exposed through the manifest.

Three tools: historical retrieval, latest quote, and summary statistics.
Every numeric value a handler returns is traceable to a provider payload or
a documented statistic over one; handlers never fabricate data. Provider
and data failures come back as ``ToolResult(is_error=True)`` so a client
can read and react to them, while malformed arguments stay protocol errors.
"""

from __future__ import annotations

import datetime as dt
import math
import time
from dataclasses import dataclass
from typing import Any, Callable

from .errors import CredentialMissing, ProviderFailure, RateLimitedError, ValidationError
from .normalize import CanonicalRecord, apply_fill, normalize_payload, parse_options
from .providers import DataQuery, ProviderConfig, fetch_historical, trading_days
from .registry import (
    DATE_PATTERN,
    ParamSpec,
    ToolDescriptor,
    ToolRegistry,
    ValidatedArgs,
    validate_arguments,
)
from .security import CredentialStore, RateLimiter, ResponseCache, cache_key


def _utc_now() -> dt.datetime:
    return dt.datetime.now(dt.timezone.utc)


@dataclass
class ToolContext:
    """Shared dependencies handed to every tool handler."""

    providers: dict[str, ProviderConfig]
    default_provider_id: str
    credentials: CredentialStore
    rate_limiter: RateLimiter
    cache: ResponseCache
    wall_clock: Callable[[], dt.datetime] = _utc_now
    mono_clock: Callable[[], float] = time.monotonic


@dataclass
class ToolResult:
    """A tool's JSON payload plus the error flag and optional one-liner."""

    content: Any
    is_error: bool = False
    human_summary: str | None = None

    def to_result_obj(self) -> dict[str, Any]:
        obj: dict[str, Any] = {"content": self.content, "is_error": self.is_error}
        if self.human_summary is not None:
            obj["human_summary"] = self.human_summary
        return obj


@dataclass(frozen=True)
class SummaryStats:
    """Per-field statistics over non-null values; stddev uses the n denominator."""

    field: str
    count: int
    mean: float
    min: float
    max: float
    stddev: float

    def to_obj(self) -> dict[str, Any]:
        return {
            "field": self.field,
            "count": self.count,
            "mean": self.mean,
            "min": self.min,
            "max": self.max,
            "stddev": self.stddev,
        }


def compute_stats(field_name: str, values: list[float]) -> SummaryStats:
    count = len(values)
    mean = math.fsum(values) / count
    variance = math.fsum((v - mean) ** 2 for v in values) / count
    return SummaryStats(
        field=field_name,
        count=count,
        mean=mean,
        min=min(values),
        max=max(values),
        stddev=math.sqrt(variance),
    )


def _error_result(error_kind: str, detail: str) -> ToolResult:
    return ToolResult(
        content={"error_kind": error_kind, "detail": detail},
        is_error=True,
        human_summary=f"{error_kind}: {detail}",
    )


def _parse_date(raw: str, param: str) -> dt.date:
    try:
        return dt.date.fromisoformat(raw)
    except ValueError:
        raise ValidationError(
            f"invalid date for {param!r}",
            data={"violations": [f"{param}: {raw!r} is not a valid YYYY-MM-DD date"]},
        ) from None


def _resolve_provider(ctx: ToolContext, provider_id: str | None) -> ProviderConfig:
    pid = provider_id or ctx.default_provider_id
    provider = ctx.providers.get(pid)
    if provider is None:
        raise ValidationError(
            f"unknown provider {pid!r}",
            data={"violations": [f"provider_id: unknown provider {pid!r}"]},
        )
    return provider


def fetch_normalized(
    ctx: ToolContext, provider: ProviderConfig, query: DataQuery, kind: str = "historical"
) -> tuple[list[CanonicalRecord], dict[str, Any]]:
    """Rate-limit, consult the cache, then fetch + normalize + fill.

    Raises RateLimitedError on a denied acquire and propagates provider
    errors; callers decide how those surface.
    """
    decision = ctx.rate_limiter.acquire(provider.id, ctx.mono_clock())
    if not decision.allowed:
        raise RateLimitedError(
            f"rate limited for provider {provider.id!r}",
            data={"provider": provider.id, "retry_after_ms": decision.retry_after_ms},
        )
    fill = query.options.get("Fill", "Blank") if query.options is not None else "Blank"
    key = cache_key(provider.id, query, kind)
    ttl = ctx.cache.ttl_for(query, kind, today=ctx.wall_clock().date())

    def produce() -> tuple[list[CanonicalRecord], str]:
        raw = fetch_historical(provider, query, ctx.credentials, now=ctx.wall_clock)
        records = normalize_payload(raw, query, provider.close_time, provider.field_map)
        return apply_fill(records, fill, query.fields), raw.fetched_at

    (records, fetched_at), cache_hit = ctx.cache.lookup_or_store(key, produce, ttl)
    meta = {
        "provider_id": provider.id,
        "fetched_at": fetched_at,
        "row_count": len(records),
        "cache_hit": cache_hit,
    }
    return records, meta


def _records_content(records: list[CanonicalRecord], meta: dict[str, Any]) -> dict[str, Any]:
    return {"records": [r.to_obj() for r in records], "meta": meta}


def tool_get_historical_data(args: ValidatedArgs, ctx: ToolContext) -> ToolResult:
    """Daily history for the requested codes/fields over an inclusive range."""
    values = args.values
    provider = _resolve_provider(ctx, values.get("provider_id"))
    options = parse_options(values.get("options", ""))
    query = DataQuery(
        codes=list(values["codes"]),
        fields=list(values["fields"]),
        start_date=_parse_date(values["start_date"], "start_date"),
        end_date=_parse_date(values["end_date"], "end_date"),
        options=options,
        provider_id=provider.id,
    )
    query.check()
    if not trading_days(query.start_date, query.end_date):
        meta = {
            "provider_id": provider.id,
            "fetched_at": ctx.wall_clock().isoformat(),
            "row_count": 0,
            "cache_hit": False,
        }
        return ToolResult(
            content=_records_content([], meta),
            human_summary="no trading days in the requested range",
        )
    try:
        records, meta = fetch_normalized(ctx, provider, query, kind="historical")
    except ProviderFailure as exc:
        return _error_result("provider_failure", exc.message)
    except CredentialMissing as exc:
        return _error_result("credential_missing", exc.message)
    return ToolResult(content=_records_content(records, meta))


def tool_get_quote(args: ValidatedArgs, ctx: ToolContext) -> ToolResult:
    """One record per code for the last trading day at or before ``as_of``."""
    values = args.values
    provider = _resolve_provider(ctx, values.get("provider_id"))
    if "as_of" in values:
        as_of = _parse_date(values["as_of"], "as_of")
    else:
        as_of = ctx.wall_clock().date()
    day = as_of
    while day.weekday() >= 5:
        day -= dt.timedelta(days=1)
    query = DataQuery(
        codes=list(values["codes"]),
        fields=list(values["fields"]),
        start_date=day,
        end_date=day,
        options=None,
        provider_id=provider.id,
    )
    query.check()
    try:
        records, meta = fetch_normalized(ctx, provider, query, kind="quote")
    except ProviderFailure as exc:
        return _error_result("provider_failure", exc.message)
    except CredentialMissing as exc:
        return _error_result("credential_missing", exc.message)
    kept = [r for r in records if any(v is not None for v in r.values.values())]
    meta["row_count"] = len(kept)
    summary = None if kept else "no data for the requested codes"
    return ToolResult(content=_records_content(kept, meta), human_summary=summary)


def _summary_inputs(values: dict[str, Any], ctx: ToolContext) -> tuple[list[dict[str, Any]], ToolResult | None]:
    """Resolve the record set: inline records or a nested historical query."""
    has_records = "records" in values
    has_query = "query" in values
    if has_records == has_query:
        raise ValidationError(
            "provide exactly one of records or query",
            data={"violations": ["records/query: provide exactly one of the two"]},
        )
    if has_records:
        return list(values["records"]), None
    validated = validate_arguments(HISTORICAL_DESCRIPTOR, values["query"])
    provider = _resolve_provider(ctx, validated.values.get("provider_id"))
    options = parse_options(validated.values.get("options", ""))
    query = DataQuery(
        codes=list(validated.values["codes"]),
        fields=list(validated.values["fields"]),
        start_date=_parse_date(validated.values["start_date"], "query.start_date"),
        end_date=_parse_date(validated.values["end_date"], "query.end_date"),
        options=options,
        provider_id=provider.id,
    )
    query.check()
    if not trading_days(query.start_date, query.end_date):
        return [], None
    try:
        records, _ = fetch_normalized(ctx, provider, query, kind="historical")
    except ProviderFailure as exc:
        return [], _error_result("provider_failure", exc.message)
    except CredentialMissing as exc:
        return [], _error_result("credential_missing", exc.message)
    return [r.to_obj() for r in records], None


def tool_compute_summary(args: ValidatedArgs, ctx: ToolContext) -> ToolResult:
    """Per-field count/mean/min/max/stddev over non-null record values."""
    values = args.values
    summarize_fields = values["summarize_fields"]
    if not summarize_fields:
        raise ValidationError(
            "summarize_fields must not be empty",
            data={"violations": ["summarize_fields: must name at least one field"]},
        )
    rows, failure = _summary_inputs(values, ctx)
    if failure is not None:
        return failure
    if not rows:
        return _error_result("empty_input", "no records to summarize")
    violations = []
    for i, row in enumerate(rows):
        for f in summarize_fields:
            v = row.get(f)
            if v is not None and (isinstance(v, bool) or not isinstance(v, (int, float))):
                violations.append(f"records[{i}].{f}: expected number or null")
    if violations:
        raise ValidationError("records hold non-numeric values", data={"violations": violations})
    summaries: list[dict[str, Any]] = []
    for f in summarize_fields:
        nums = [row[f] for row in rows if row.get(f) is not None]
        if not nums:
            summaries.append({"field": f, "error": "no non-null values"})
        else:
            summaries.append(compute_stats(f, [float(v) for v in nums]).to_obj())
    return ToolResult(content={"summaries": summaries, "inputs": {"row_count": len(rows)}})


_CODES_SPEC = ParamSpec(
    kind="array-of-string",
    description='Instrument codes to query, e.g. ["300750.SZ"].',
    required=True,
)
_FIELDS_SPEC = ParamSpec(
    kind="array-of-string",
    description="Canonical field names: close, open, high, low, volume, pb_lf, turn.",
    required=True,
)
_PROVIDER_SPEC = ParamSpec(
    kind="string",
    description="Provider id to fetch from; defaults to the configured default provider.",
)

HISTORICAL_DESCRIPTOR = ToolDescriptor(
    name="tool_get_historical_data",
    description=(
        "Fetch daily historical values for the given instrument codes and fields "
        "over an inclusive date range, normalized to one record per code and "
        "trading day."
    ),
    params={
        "codes": _CODES_SPEC,
        "fields": _FIELDS_SPEC,
        "start_date": ParamSpec(
            kind="string",
            description="Inclusive range start, YYYY-MM-DD.",
            required=True,
            pattern=DATE_PATTERN,
        ),
        "end_date": ParamSpec(
            kind="string",
            description="Inclusive range end, YYYY-MM-DD.",
            required=True,
            pattern=DATE_PATTERN,
        ),
        "options": ParamSpec(
            kind="string",
            description=(
                'Semicolon-separated options, e.g. "PriceAdj=F;Fill=Previous". '
                "Fill=Previous carries the last non-null value forward; the "
                "default (Blank) leaves gaps null."
            ),
            default="",
        ),
        "provider_id": _PROVIDER_SPEC,
    },
    output_description=(
        "Object with records (list of {code, timestamp, <field>...}) and meta "
        "(provider_id, fetched_at, row_count, cache_hit)."
    ),
)

QUOTE_DESCRIPTOR = ToolDescriptor(
    name="tool_get_quote",
    description=(
        "Fetch the most recent record per instrument code for the last trading "
        "day at or before as_of (default: today)."
    ),
    params={
        "codes": _CODES_SPEC,
        "fields": _FIELDS_SPEC,
        "as_of": ParamSpec(
            kind="string",
            description="Reference date, YYYY-MM-DD; defaults to the server's current UTC date.",
            pattern=DATE_PATTERN,
        ),
        "provider_id": _PROVIDER_SPEC,
    },
    output_description="Object with records (at most one per code) and meta.",
)

SUMMARY_DESCRIPTOR = ToolDescriptor(
    name="tool_compute_summary",
    description=(
        "Compute per-field summary statistics (count, mean, min, max, stddev) "
        "over records you already hold, or over the result of a nested "
        "historical query. Nulls are excluded."
    ),
    params={
        "records": ParamSpec(
            kind="array-of-object",
            description="Inline records shaped {code, timestamp, <field>...}; mutually exclusive with query.",
        ),
        "query": ParamSpec(
            kind="object",
            description=(
                "A full historical query (same arguments as tool_get_historical_data); "
                "mutually exclusive with records."
            ),
        ),
        "summarize_fields": ParamSpec(
            kind="array-of-string",
            description="Fields to summarize, e.g. [\"close\", \"turn\"].",
            required=True,
        ),
    },
    output_description="Object with summaries (one entry per requested field) and inputs.row_count.",
)


def build_registry() -> ToolRegistry:
    """The default tool catalog served over tools/list."""
    registry = ToolRegistry()
    registry.register(HISTORICAL_DESCRIPTOR, tool_get_historical_data)
    registry.register(QUOTE_DESCRIPTOR, tool_get_quote)
    registry.register(SUMMARY_DESCRIPTOR, tool_compute_summary)
    return registry
