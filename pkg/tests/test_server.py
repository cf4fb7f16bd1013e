"""Lifecycle, dispatch routing, stdio framing behavior, and concurrency."""

from __future__ import annotations

import io
import json
import logging
import time

import pytest

from conftest import initialize, make_ctx

from quantmcp.providers import ProviderConfig, RateSpec
from quantmcp.registry import ParamSpec, ToolDescriptor, ToolRegistry
from quantmcp.server import Dispatcher, StdioServer
from quantmcp.tools import ToolResult, build_registry
from quantmcp.transport import (
    NOTIFICATION,
    REQUEST,
    JsonRpcMessage,
    parse_message,
)

Q1_CALL_PARAMS = {
    "name": "tool_get_historical_data",
    "arguments": {
        "codes": ["300750.SZ"],
        "fields": ["close", "pb_lf", "turn"],
        "start_date": "2024-01-01",
        "end_date": "2024-03-31",
        "options": "PriceAdj=F;Fill=Previous",
    },
}


def _req(id, method, params=None) -> JsonRpcMessage:
    msg = JsonRpcMessage(REQUEST, id=id, method=method)
    if params is not None:
        msg.params = params
    return msg


# --- lifecycle ---------------------------------------------------------------


def test_tools_requests_are_rejected_before_initialize(dispatcher):
    for method in ("tools/list", "tools/call"):
        response = dispatcher.dispatch(_req(1, method, {"name": "x", "arguments": {}}))
        assert response.error.code == -32600
        assert "initialize" in response.error.message


def test_initialize_reports_protocol_version_and_capabilities(dispatcher):
    response = dispatcher.dispatch(
        _req(1, "initialize", {"clientInfo": {"name": "replay-harness", "version": "1"}})
    )
    result = response.result
    assert result["protocolVersion"]
    assert result["serverInfo"]["name"] == "quantmcp"
    assert "tools" in result["capabilities"]


def test_double_initialize_is_an_invalid_request(dispatcher):
    dispatcher.dispatch(_req(1, "initialize"))
    response = dispatcher.dispatch(_req(2, "initialize"))
    assert response.error.code == -32600


def test_client_info_is_recorded_and_logged(dispatcher, caplog):
    with caplog.at_level(logging.INFO, logger="quantmcp.server"):
        dispatcher.dispatch(_req(1, "initialize", {"clientInfo": {"name": "replay-harness"}}))
    assert dispatcher.state.session_info["name"] == "replay-harness"
    assert any("replay-harness" in record.message for record in caplog.records)


def test_unknown_method_is_method_not_found(live_dispatcher):
    response = live_dispatcher.dispatch(_req(3, "prompts/list"))
    assert response.error.code == -32601
    assert response.error.data == {"method": "prompts/list"}


def test_notifications_produce_no_response(live_dispatcher):
    note = JsonRpcMessage(NOTIFICATION, method="notifications/initialized")
    assert live_dispatcher.dispatch(note) is None


def test_inbound_responses_are_ignored(live_dispatcher):
    from quantmcp.transport import RESPONSE

    assert live_dispatcher.dispatch(JsonRpcMessage(RESPONSE, id=1, result={})) is None


def test_response_ids_always_match_request_ids(live_dispatcher):
    for rid in (7, "alpha", 0, "z-9"):
        response = live_dispatcher.dispatch(_req(rid, "tools/list"))
        assert response.id == rid


# --- tools/list ----------------------------------------------------------------


def test_manifest_lists_every_registered_tool_once(live_dispatcher):
    result = live_dispatcher.dispatch(_req(1, "tools/list")).result
    names = [t["name"] for t in result["tools"]]
    assert names == ["tool_get_historical_data", "tool_get_quote", "tool_compute_summary"]
    assert len(set(names)) == len(names)


def test_empty_registry_lists_no_tools(ctx):
    dispatcher = Dispatcher(ToolRegistry(), ctx)
    initialize(dispatcher)
    assert dispatcher.dispatch(_req(1, "tools/list")).result["tools"] == []


def test_manifest_entries_match_the_documented_meta_shape(live_dispatcher):
    """Validate every emitted schema with an independent JSON Schema oracle."""
    jsonschema = pytest.importorskip("jsonschema")
    meta_schema = {
        "type": "object",
        "required": ["name", "description", "inputSchema"],
        "additionalProperties": False,
        "properties": {
            "name": {"type": "string", "pattern": "^[a-z0-9_]+$"},
            "description": {"type": "string", "minLength": 1},
            "inputSchema": {
                "type": "object",
                "required": ["type", "properties", "required"],
                "properties": {
                    "type": {"const": "object"},
                    "required": {"type": "array", "items": {"type": "string"}},
                    "properties": {
                        "type": "object",
                        "additionalProperties": {
                            "type": "object",
                            "required": ["type", "description"],
                            "properties": {
                                "type": {
                                    "enum": ["string", "number", "integer", "boolean", "array", "object"]
                                },
                                "description": {"type": "string", "minLength": 1},
                            },
                        },
                    },
                },
            },
        },
    }
    manifest = live_dispatcher.dispatch(_req(1, "tools/list")).result["tools"]
    for entry in manifest:
        jsonschema.validate(entry, meta_schema)
        schema = entry["inputSchema"]
        assert set(schema["required"]) <= set(schema["properties"])


# --- tools/call ------------------------------------------------------------------


def test_call_after_initialize_returns_a_tool_result(live_dispatcher):
    response = live_dispatcher.dispatch(_req(2, "tools/call", Q1_CALL_PARAMS))
    assert response.error is None
    assert response.result["is_error"] is False
    assert len(response.result["content"]["records"]) == 65


def test_unknown_tool_is_invalid_params_with_tool_name(live_dispatcher):
    response = live_dispatcher.dispatch(
        _req(2, "tools/call", {"name": "tool_get_wind_historical_data", "arguments": {}})
    )
    assert response.error.code == -32602
    assert response.error.data["tool"] == "tool_get_wind_historical_data"


def test_missing_required_argument_names_it(live_dispatcher):
    params = {"name": "tool_get_historical_data", "arguments": {"fields": ["close"]}}
    response = live_dispatcher.dispatch(_req(2, "tools/call", params))
    assert response.error.code == -32602
    violations = response.error.data["violations"]
    assert any(v.startswith("codes:") for v in violations)


def test_malformed_call_params_are_invalid_params(live_dispatcher):
    for params in (None, {"arguments": {}}, {"name": 7, "arguments": {}}):
        msg = _req(2, "tools/call", params) if params is not None else _req(2, "tools/call")
        response = live_dispatcher.dispatch(msg)
        assert response.error.code == -32602


def test_crashing_handler_maps_to_internal_error(ctx):
    registry = ToolRegistry()
    registry.register(
        ToolDescriptor(name="boom", description="crashes", params={}),
        lambda args, ctx: 1 / 0,
    )
    dispatcher = Dispatcher(registry, ctx)
    initialize(dispatcher)
    response = dispatcher.dispatch(_req(5, "tools/call", {"name": "boom", "arguments": {}}))
    assert response.error.code == -32603


def test_provider_failure_is_not_a_protocol_error():
    http = ProviderConfig(
        id="alpha",
        kind="http",
        base_url_template="http://127.0.0.1:9/q?code={code}",
        timeout_ms=300,
        rate=RateSpec(1000, 1000.0),
    )
    dispatcher = Dispatcher(build_registry(), make_ctx(providers={"alpha": http}))
    initialize(dispatcher)
    response = dispatcher.dispatch(_req(2, "tools/call", Q1_CALL_PARAMS))
    assert response.error is None
    assert response.result["is_error"] is True
    assert response.result["content"]["error_kind"] == "provider_failure"


def test_rate_limited_call_maps_to_32002():
    synth = ProviderConfig(id="synth", kind="synthetic", rate=RateSpec(capacity=1, refill_per_sec=1.0))
    dispatcher = Dispatcher(build_registry(), make_ctx(providers={"synth": synth}))
    initialize(dispatcher)
    dispatcher.dispatch(_req(1, "tools/call", Q1_CALL_PARAMS))
    other = {
        "name": "tool_get_historical_data",
        "arguments": dict(Q1_CALL_PARAMS["arguments"], end_date="2024-02-29"),
    }
    response = dispatcher.dispatch(_req(2, "tools/call", other))
    assert response.error.code == -32002
    assert response.error.data["retry_after_ms"] > 0


# --- stdio loop -------------------------------------------------------------------


def _run_session(lines: list[str], ctx=None, concurrency: int = 0) -> list[dict]:
    dispatcher = Dispatcher(build_registry(), ctx or make_ctx())
    out = io.StringIO()
    server = StdioServer(dispatcher, io.StringIO("".join(l + "\n" for l in lines)), out, concurrency)
    assert server.run() == 0
    return [json.loads(line) for line in out.getvalue().splitlines()]


def _session_lines() -> list[str]:
    return [
        json.dumps({"jsonrpc": "2.0", "id": 1, "method": "initialize", "params": {"clientInfo": {"name": "t"}}}),
        json.dumps({"jsonrpc": "2.0", "id": 2, "method": "tools/list"}),
        json.dumps({"jsonrpc": "2.0", "id": 3, "method": "tools/call", "params": Q1_CALL_PARAMS}),
    ]


def test_full_session_over_stdio():
    frames = _run_session(_session_lines())
    assert [f["id"] for f in frames] == [1, 2, 3]
    assert len(frames[2]["result"]["content"]["records"]) == 65


def test_garbage_input_yields_parse_error_and_the_server_survives():
    lines = ["{nonsense", _session_lines()[0], "more garbage }{", _session_lines()[1]]
    frames = _run_session(lines)
    assert frames[0]["error"]["code"] == -32700
    assert frames[0]["id"] is None
    assert frames[1]["id"] == 1
    assert frames[2]["error"]["code"] == -32700
    assert frames[3]["id"] == 2


def test_invalid_envelope_answers_32600_with_recovered_id():
    lines = [json.dumps({"jsonrpc": "2.0", "id": 9, "result": 1, "error": {"code": -32603, "message": "x"}})]
    frames = _run_session(lines)
    assert frames[0]["error"]["code"] == -32600
    assert frames[0]["id"] == 9


def test_blank_lines_are_skipped():
    lines = ["", "   ", _session_lines()[0]]
    frames = _run_session(lines)
    assert len(frames) == 1 and frames[0]["id"] == 1


def test_notifications_emit_nothing_on_the_wire():
    lines = _session_lines()[:1] + [json.dumps({"jsonrpc": "2.0", "method": "notifications/initialized"})]
    frames = _run_session(lines)
    assert len(frames) == 1


def test_every_frame_declares_the_protocol_version():
    for frame in _run_session(_session_lines()):
        assert frame["jsonrpc"] == "2.0"


def test_emitted_frames_are_redacted():
    http = ProviderConfig(
        id="alpha",
        kind="http",
        base_url_template="http://127.0.0.1:9/q?code={code}&apikey={apikey}",
        timeout_ms=300,
        rate=RateSpec(1000, 1000.0),
    )
    ctx = make_ctx(providers={"alpha": http}, secrets={"alpha": "sk-hunter2-hunter2"})
    lines = _session_lines()
    frames = _run_session(lines, ctx=ctx)
    blob = json.dumps(frames)
    assert "sk-hunter2-hunter2" not in blob
    # the failure detail still names the provider, just not the secret
    assert frames[2]["result"]["content"]["error_kind"] == "provider_failure"


def test_concurrent_mode_interleaves_but_correlates_ids(ctx):
    registry = ToolRegistry()
    order = []

    def slow(args, _ctx):
        delay = args.values["delay_ms"] / 1000.0
        time.sleep(delay)
        order.append(args.values["tag"])
        return ToolResult(content={"tag": args.values["tag"]})

    registry.register(
        ToolDescriptor(
            name="slow_echo",
            description="sleeps then echoes",
            params={
                "delay_ms": ParamSpec("integer", "sleep duration", required=True),
                "tag": ParamSpec("string", "echo tag", required=True),
            },
        ),
        slow,
    )
    dispatcher = Dispatcher(registry, ctx)
    out = io.StringIO()
    lines = [
        json.dumps({"jsonrpc": "2.0", "id": 1, "method": "initialize"}),
        json.dumps({"jsonrpc": "2.0", "id": 2, "method": "tools/call",
                    "params": {"name": "slow_echo", "arguments": {"delay_ms": 200, "tag": "slow"}}}),
        json.dumps({"jsonrpc": "2.0", "id": 3, "method": "tools/call",
                    "params": {"name": "slow_echo", "arguments": {"delay_ms": 10, "tag": "fast"}}}),
    ]
    server = StdioServer(dispatcher, io.StringIO("".join(l + "\n" for l in lines)), out, concurrency=4)
    assert server.run() == 0
    frames = [json.loads(line) for line in out.getvalue().splitlines()]
    by_id = {f["id"]: f for f in frames}
    assert by_id[2]["result"]["content"]["tag"] == "slow"
    assert by_id[3]["result"]["content"]["tag"] == "fast"
    assert order == ["fast", "slow"]  # responses interleaved, ids correlate


def test_concurrent_writes_never_shear_frames(ctx):
    registry = ToolRegistry()
    registry.register(
        ToolDescriptor(
            name="echo_blob",
            description="returns a large blob",
            params={"n": ParamSpec("integer", "blob size", required=True)},
        ),
        lambda args, _ctx: ToolResult(content={"blob": "x" * args.values["n"]}),
    )
    dispatcher = Dispatcher(registry, ctx)
    out = io.StringIO()
    lines = [json.dumps({"jsonrpc": "2.0", "id": 0, "method": "initialize"})]
    for i in range(1, 21):
        lines.append(
            json.dumps({"jsonrpc": "2.0", "id": i, "method": "tools/call",
                        "params": {"name": "echo_blob", "arguments": {"n": 5000 + i}}})
        )
    server = StdioServer(dispatcher, io.StringIO("".join(l + "\n" for l in lines)), out, concurrency=8)
    assert server.run() == 0
    frames = [parse_message(line) for line in out.getvalue().splitlines()]
    assert sorted(f.id for f in frames) == list(range(21))
