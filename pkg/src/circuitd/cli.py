"""Operator CLI: a thin client over the supervisor operations.

Exit codes: 0 ok, 2 validation failure, 3 runtime error. The deployment
root comes from --root or the CIRCUITD_ROOT environment variable.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time

from . import supervisor as sv
from .circuit import parse_circuit, validate_circuit
from .control_api import serve_control_api
from .errors import CircuitdError, CircuitSyntaxError, SchemaError


def _root(args) -> str:
    root = args.root or os.environ.get("CIRCUITD_ROOT")
    if not root:
        print("error: no deploy root (use --root or set CIRCUITD_ROOT)", file=sys.stderr)
        raise SystemExit(3)
    return root


def _load_spec(path: str):
    try:
        with open(path, encoding="utf-8") as f:
            return parse_circuit(f.read())
    except FileNotFoundError:
        print(f"error: no such file: {path}", file=sys.stderr)
        raise SystemExit(3)
    except (CircuitSyntaxError, SchemaError) as e:
        print(f"error: {e}", file=sys.stderr)
        raise SystemExit(2)


def cmd_validate(args) -> int:
    spec = _load_spec(args.spec)
    violations = validate_circuit(spec)
    if violations:
        for v in violations:
            print(str(v))
        print(f"{len(violations)} violation(s)")
        return 2
    print(f"circuit '{spec.circuit_name}' is valid "
          f"({len(spec.agents)} agents, {len(spec.edges)} edges)")
    return 0


def cmd_deploy(args) -> int:
    spec = _load_spec(args.spec)
    violations = validate_circuit(spec)
    if violations:
        for v in violations:
            print(str(v))
        return 2
    manifest = sv.deploy(_root(args), spec)
    print(f"deployed '{spec.circuit_name}' version {manifest.version} at {manifest.deploy_root}")
    return 0


def cmd_start(args) -> int:
    manifest = sv.load_manifest(_root(args))
    if args.all:
        report = sv.start_all(manifest)
        for name, pid in report.items():
            print(f"started {name} (pid {pid})")
    else:
        pid = sv.start_agent(manifest, args.agent)
        print(f"started {args.agent} (pid {pid})")
    return 0


def cmd_stop(args) -> int:
    manifest = sv.load_manifest(_root(args))
    mode = "kill" if args.kill else "graceful"
    names = manifest.circuit.agent_names() if args.agent == "--all" or args.all else [args.agent]
    for name in names:
        if sv.stop_agent(manifest, name, mode=mode):
            print(f"stopped {name}")
        else:
            print(f"warning: {name} was not running")
    return 0


def _print_status(manifest) -> None:
    snaps = sv.status(manifest)
    width = max(len(s.agent) for s in snaps) if snaps else 5
    print(f"{'AGENT':<{width}}  {'KIND':<17} {'STATE':<8} {'PID':>7} {'INBOX':>6} "
          f"{'WORK':>5} {'DONE':>7} {'DEAD':>5} {'D/MIN':>6}")
    for s in snaps:
        print(f"{s.agent:<{width}}  {s.kind:<17} {s.state:<8} "
              f"{s.pid if s.pid else '-':>7} {s.inbox_depth:>6} {s.working_depth:>5} "
              f"{s.processed_total:>7} {s.deadletter_total:>5} {s.throughput_1m:>6}")


def cmd_status(args) -> int:
    manifest = sv.load_manifest(_root(args))
    while True:
        if args.json:
            print(json.dumps([s.to_dict() for s in sv.status(manifest)], indent=2))
        else:
            _print_status(manifest)
        if not args.watch:
            return 0
        time.sleep(1.0)
        print()


def cmd_ingest(args) -> int:
    manifest = sv.load_manifest(_root(args))
    if args.id and len(args.files) != 1:
        print("error: --id requires exactly one file", file=sys.stderr)
        return 2
    for path in args.files:
        with open(path, "rb") as f:
            payload = f.read()
        doc = sv.ingest(manifest, args.ingest_root, payload, doc_id=args.id)
        print(doc)
    return 0


def cmd_retry(args) -> int:
    manifest = sv.load_manifest(_root(args))
    sv.retry_dead_letter(manifest, args.agent, args.doc)
    print(f"requeued {args.doc} at {args.agent}")
    return 0


def cmd_serve(args) -> int:
    manifest = sv.load_manifest(_root(args))
    ui_dir = args.ui_dir or os.environ.get("CIRCUITD_UI_DIR")
    if ui_dir is None and os.path.isdir(os.path.join(os.getcwd(), "frontend", "dist")):
        ui_dir = os.path.join(os.getcwd(), "frontend", "dist")
    server = serve_control_api(manifest, bind=args.bind, ui_dir=ui_dir)
    print(f"control api on http://{args.bind}/ (ui: {ui_dir or 'none'})")
    try:
        while True:
            time.sleep(3600)
    except KeyboardInterrupt:
        server.shutdown()
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="circuitd")
    parser.add_argument("--root", help="deploy root (default: $CIRCUITD_ROOT)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate", help="check a circuit spec")
    p.add_argument("spec")
    p.set_defaults(fn=cmd_validate)

    p = sub.add_parser("deploy", help="deploy a circuit spec")
    p.add_argument("spec")
    p.set_defaults(fn=cmd_deploy)

    p = sub.add_parser("start", help="start agents")
    p.add_argument("agent", nargs="?")
    p.add_argument("--all", action="store_true")
    p.set_defaults(fn=cmd_start)

    p = sub.add_parser("stop", help="stop agents")
    p.add_argument("agent", nargs="?")
    p.add_argument("--all", action="store_true")
    p.add_argument("--kill", action="store_true", help="terminate without waiting")
    p.set_defaults(fn=cmd_stop)

    p = sub.add_parser("status", help="show agent status")
    p.add_argument("--watch", action="store_true")
    p.add_argument("--json", action="store_true")
    p.set_defaults(fn=cmd_status)

    p = sub.add_parser("ingest", help="ingest document files at a root")
    p.add_argument("ingest_root", metavar="root")
    p.add_argument("files", nargs="+")
    p.add_argument("--id", help="explicit document id (single file only)")
    p.set_defaults(fn=cmd_ingest)

    p = sub.add_parser("retry", help="retry a dead-lettered document")
    p.add_argument("agent")
    p.add_argument("doc")
    p.set_defaults(fn=cmd_retry)

    p = sub.add_parser("serve", help="serve the HTTP control API and dashboard")
    p.add_argument("--bind", default="127.0.0.1:8765")
    p.add_argument("--ui-dir", help="dashboard static assets directory")
    p.set_defaults(fn=cmd_serve)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    if args.command in ("start", "stop") and not args.all and not args.agent:
        print("error: give an agent name or --all", file=sys.stderr)
        return 2
    try:
        return args.fn(args)
    except FileNotFoundError as e:
        print(f"error: {e}", file=sys.stderr)
        return 3
    except CircuitdError as e:
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
