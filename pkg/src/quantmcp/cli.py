"""Operator and test entry point: serve, list tools, call them, replay.

Exit codes are pinned for CI scripting: 0 success, 1 tool-level error,
2 usage/config error, 3 runtime/transport error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from typing import Any

from . import __version__
from .config import build_context, load_config
from .errors import ConfigError
from .security import redact, redact_message
from .server import Dispatcher, StdioServer
from .tools import build_registry
from .transport import REQUEST, JsonRpcMessage, parse_message, round_floats, serialize_message

# Volatile fields ignored when diffing replayed frames against a transcript.
REPLAY_MASKED_KEYS = ("fetched_at", "version")

EXIT_OK = 0
EXIT_TOOL_ERROR = 1
EXIT_USAGE = 2
EXIT_RUNTIME = 3


def _build_dispatcher(config_path: str) -> Dispatcher:
    config = load_config(config_path)
    ctx = build_context(config, warn=lambda msg: print(f"warning: {msg}", file=sys.stderr))
    return Dispatcher(build_registry(), ctx, server_name=config.name)


def cmd_serve(args: argparse.Namespace) -> int:
    try:
        config = load_config(args.config)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(stream=sys.stderr, level=logging.INFO, format="%(message)s")
    ctx = build_context(config, warn=lambda msg: logging.getLogger("quantmcp").warning(msg))
    dispatcher = Dispatcher(build_registry(), ctx, server_name=config.name)
    concurrency = args.concurrent if args.concurrent is not None else config.concurrency
    server = StdioServer(dispatcher, sys.stdin, sys.stdout, concurrency=concurrency)
    try:
        return server.run()
    except OSError as exc:
        print(f"transport error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


def cmd_tools_list(args: argparse.Namespace) -> int:
    try:
        dispatcher = _build_dispatcher(args.config)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    manifest = [d.manifest_entry() for d in dispatcher.state.registry.descriptors()]
    print(json.dumps({"tools": manifest}, indent=2, ensure_ascii=False))
    return EXIT_OK


def cmd_call(args: argparse.Namespace) -> int:
    try:
        arguments = json.loads(args.params)
    except json.JSONDecodeError as exc:
        print(f"params error: not valid JSON: {exc.msg}", file=sys.stderr)
        return EXIT_USAGE
    if not isinstance(arguments, dict):
        print("params error: params must be a JSON object", file=sys.stderr)
        return EXIT_USAGE
    try:
        dispatcher = _build_dispatcher(args.config)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    dispatcher.dispatch(
        JsonRpcMessage(
            REQUEST,
            id=1,
            method="initialize",
            params={"clientInfo": {"name": "quantmcp-cli", "version": __version__}},
        )
    )
    response = dispatcher.dispatch(
        JsonRpcMessage(
            REQUEST,
            id=2,
            method="tools/call",
            params={"name": args.tool, "arguments": arguments},
        )
    )
    store = dispatcher.ctx.credentials
    if response.error is not None:
        print(json.dumps(redact(response.error.to_obj(), store), indent=2), file=sys.stderr)
        return EXIT_USAGE
    result = response.result
    print(json.dumps(round_floats(redact(result["content"], store)), indent=2, ensure_ascii=False))
    return EXIT_TOOL_ERROR if result["is_error"] else EXIT_OK


def mask_volatile(value: Any) -> Any:
    """Drop replay-masked keys (fetched_at, server version) recursively."""
    if isinstance(value, dict):
        return {k: mask_volatile(v) for k, v in value.items() if k not in REPLAY_MASKED_KEYS}
    if isinstance(value, list):
        return [mask_volatile(v) for v in value]
    return value


def _load_transcript(path: str) -> list[tuple[str, dict[str, Any]]]:
    entries: list[tuple[str, dict[str, Any]]] = []
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ConfigError(f"{path}:{lineno}: not valid JSON: {exc.msg}") from None
            direction = obj.get("direction") if isinstance(obj, dict) else None
            message = obj.get("message") if isinstance(obj, dict) else None
            if direction not in ("in", "out") or not isinstance(message, dict):
                raise ConfigError(f'{path}:{lineno}: expected {{"direction": "in"|"out", "message": {{...}}}}')
            entries.append((direction, message))
    return entries


def cmd_replay(args: argparse.Namespace) -> int:
    try:
        entries = _load_transcript(args.transcript)
        dispatcher = _build_dispatcher(args.config)
    except (ConfigError, OSError) as exc:
        print(f"replay error: {exc}", file=sys.stderr)
        return EXIT_USAGE

    store = dispatcher.ctx.credentials
    produced: list[dict[str, Any]] = []
    expected: list[dict[str, Any]] = []
    for direction, message in entries:
        if direction == "out":
            expected.append(message)
            continue
        try:
            msg = parse_message(json.dumps(message))
        except Exception as exc:
            print(f"replay error: unreplayable frame: {exc}", file=sys.stderr)
            return EXIT_USAGE
        response = dispatcher.dispatch(msg)
        if response is not None:
            wire = serialize_message(redact_message(response, store))
            produced.append(json.loads(wire))

    failures = 0
    total = max(len(produced), len(expected))
    for i in range(total):
        if i >= len(produced):
            print(f"frame {i + 1}: FAIL (expected a response, none produced)")
            failures += 1
            continue
        if i >= len(expected):
            print(f"frame {i + 1}: FAIL (unexpected extra response)")
            failures += 1
            continue
        got = mask_volatile(produced[i])
        want = mask_volatile(expected[i])
        if got == want:
            print(f"frame {i + 1}: PASS")
        else:
            print(f"frame {i + 1}: FAIL")
            print(f"  expected: {json.dumps(want, ensure_ascii=False, sort_keys=True)}")
            print(f"  actual:   {json.dumps(got, ensure_ascii=False, sort_keys=True)}")
            failures += 1
    print(f"replayed {total} frames: {total - failures} passed, {failures} failed")
    return EXIT_OK if failures == 0 else EXIT_TOOL_ERROR


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="quantmcp",
        description="Serve, inspect, call, and replay the financial tool server.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    serve = sub.add_parser("serve", help="serve the protocol on stdin/stdout until EOF")
    serve.add_argument("--config", required=True, help="path to the server config file")
    serve.add_argument(
        "--concurrent",
        type=int,
        default=None,
        metavar="N",
        help="process up to N tools/call requests in parallel (default: sequential)",
    )
    serve.set_defaults(func=cmd_serve)

    tools = sub.add_parser("tools", help="tool catalog commands")
    tools_sub = tools.add_subparsers(dest="tools_command", required=True)
    tools_list = tools_sub.add_parser("list", help="print the tool manifest")
    tools_list.add_argument("--config", required=True)
    tools_list.set_defaults(func=cmd_tools_list)

    call = sub.add_parser("call", help="invoke one tool in-process and print its result")
    call.add_argument("tool", help="tool name, e.g. tool_get_historical_data")
    call.add_argument("params", help="tool arguments as a JSON object")
    call.add_argument("--config", required=True)
    call.set_defaults(func=cmd_call)

    replay = sub.add_parser("replay", help="replay a recorded transcript and diff the output")
    replay.add_argument("transcript", help="path to a JSONL transcript")
    replay.add_argument("--config", required=True)
    replay.set_defaults(func=cmd_replay)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
