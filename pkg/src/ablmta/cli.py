"""Command line entry points: serve, bl, stats, simulate.

Exit codes: 0 on success, 1 on errors and usage problems, 2 when the
admin server cannot be reached.
"""
from __future__ import annotations

import argparse
import asyncio
import logging
import socket
import sys
from typing import Sequence

from . import __version__
from .config import CONFIG_KEYS, ConfigError, parse_address, resolve_server_config
from .server import run_server
from .sim import load_scenario, run_scenario, write_report
from .store import FormatError

_ADMIN_TIMEOUT_S = 10.0


class _Parser(argparse.ArgumentParser):
    # argparse exits 2 on usage errors; this tool reserves 2 for
    # connection failures, so usage errors exit 1 instead.
    def error(self, message: str) -> None:  # type: ignore[override]
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(1)


def _config_flags() -> _Parser:
    common = _Parser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="flat key = value config file")
    for key in CONFIG_KEYS:
        common.add_argument(f"--{key}", metavar="VALUE", help=argparse.SUPPRESS)
    return common


def build_parser() -> _Parser:
    common = _config_flags()
    parser = _Parser(
        prog="ablmta",
        description="SMTP receiver with an in-dialogue active blacklist.",
    )
    parser.add_argument("--version", action="version", version=f"ablmta {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("serve", parents=[common], help="run the SMTP and admin servers")
    bl = sub.add_parser("bl", parents=[common], help="inspect or edit the blacklist")
    bl_sub = bl.add_subparsers(dest="bl_command", required=True)
    bl_sub.add_parser("list", parents=[common], help="list entries")
    bl_add = bl_sub.add_parser("add", parents=[common], help="add or refresh an entry")
    bl_add.add_argument("ip")
    bl_add.add_argument("sender", help='sender mailbox, or "-" for the whole IP')
    bl_add.add_argument("reason", nargs="*", help="free-text reason (default: manual)")
    bl_del = bl_sub.add_parser("del", parents=[common], help="remove an entry")
    bl_del.add_argument("ip")
    bl_del.add_argument("sender", help='sender mailbox, or "-" for the whole IP')
    sub.add_parser("stats", parents=[common], help="print server counters")
    simulate = sub.add_parser("simulate", parents=[common], help="run a traffic scenario")
    simulate.add_argument("scenario", metavar="SCENARIO", help="scenario file path")
    simulate.add_argument("--out", metavar="PATH", help="write the CSV report here (default: stdout)")
    return parser


def _resolve_config(args: argparse.Namespace):
    file_text = None
    if args.config:
        with open(args.config, "r", encoding="utf-8") as f:
            file_text = f.read()
    overrides = {
        key: value
        for key in CONFIG_KEYS
        if (value := getattr(args, key, None)) is not None
    }
    return resolve_server_config(file_text, overrides)


def _admin_roundtrip(address: str, request: str) -> tuple[list[str], str | None]:
    """Send one admin command; returns (data lines, error message or None)."""
    host, port = parse_address(address)
    with socket.create_connection((host, port), timeout=_ADMIN_TIMEOUT_S) as conn:
        conn.sendall(request.encode("utf-8") + b"\n")
        lines: list[str] = []
        with conn.makefile("rb") as stream:
            for raw in stream:
                text = raw.decode("utf-8", "replace").rstrip("\n")
                if text == "OK":
                    return lines, None
                if text.startswith("ERR"):
                    return lines, text[3:].strip() or "server reported an error"
                lines.append(text)
    return lines, "connection closed before OK"


def _run_admin_command(args: argparse.Namespace, request: str) -> int:
    try:
        config = _resolve_config(args)
    except (ConfigError, OSError) as exc:
        print(f"ablmta: {exc}", file=sys.stderr)
        return 1
    try:
        lines, error = _admin_roundtrip(config.admin_listen_address, request)
    except (OSError, asyncio.TimeoutError) as exc:
        print(f"ablmta: cannot reach admin server at {config.admin_listen_address}: {exc}", file=sys.stderr)
        return 2
    for line in lines:
        print(line)
    if error is not None:
        print(f"ablmta: {error}", file=sys.stderr)
        return 1
    return 0


def _cmd_serve(args: argparse.Namespace) -> int:
    logging.basicConfig(
        level=logging.INFO,
        format="%(asctime)s %(levelname)s %(name)s %(message)s",
        stream=sys.stderr,
    )
    try:
        config = _resolve_config(args)
    except (ConfigError, OSError) as exc:
        print(f"ablmta: {exc}", file=sys.stderr)
        return 1
    try:
        asyncio.run(run_server(config))
    except FormatError as exc:
        print(f"ablmta: refusing to start, snapshot is corrupt: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"ablmta: {exc}", file=sys.stderr)
        return 1
    return 0


def _cmd_simulate(args: argparse.Namespace) -> int:
    try:
        with open(args.scenario, "r", encoding="utf-8") as f:
            scenario = load_scenario(f.read())
    except (ConfigError, OSError) as exc:
        print(f"ablmta: {exc}", file=sys.stderr)
        return 1
    report = run_scenario(scenario)
    if args.out:
        with open(args.out, "w", encoding="utf-8") as f:
            write_report(report, f)
    else:
        write_report(report, sys.stdout)
    return 0


def run(argv: Sequence[str]) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(list(argv))
    except SystemExit as exc:
        return int(exc.code or 0)
    if args.command == "serve":
        return _cmd_serve(args)
    if args.command == "stats":
        return _run_admin_command(args, "STATS")
    if args.command == "bl":
        if args.bl_command == "list":
            return _run_admin_command(args, "BL LIST")
        if args.bl_command == "add":
            reason = " ".join(args.reason) if args.reason else "manual"
            return _run_admin_command(args, f"BL ADD {args.ip} {args.sender} {reason}")
        if args.bl_command == "del":
            return _run_admin_command(args, f"BL DEL {args.ip} {args.sender}")
    if args.command == "simulate":
        return _cmd_simulate(args)
    raise AssertionError(f"unhandled command {args.command!r}")


def main() -> None:
    sys.exit(run(sys.argv[1:]))


if __name__ == "__main__":
    main()
