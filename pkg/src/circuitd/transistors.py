"""Flow-control agents: multiplexer, synchronizer, dispatcher, filter, translator.

These reuse the whole agent machinery (mailbox, lease, attempt ledger,
dead letters) but carry no external component; their behavior is a small
pure step over the claimed entry. Documents, not payloads, move through
them: a step reads upstream knowledge where it needs to and forwards the
document id.
"""

from __future__ import annotations

import json
import os
import re
import time

from . import home as h
from . import mailbox as mb
from .circuit import CircuitSpec, sync_mode_for
from .context import AgentContext
from .errors import BadPattern, ComponentFailure, MappingError, MissingInput
from .mailbox import MailboxEntry


# -- predicates ----------------------------------------------------------------

class Predicate:
    """Compiled boolean function over one document's upstream knowledge."""

    def __init__(self, spec: dict):
        self.kind = spec.get("kind")
        self.negate = bool(spec.get("negate", False))
        self.agent = spec.get("agent")
        self.format = spec.get("format")
        self.value = spec.get("value")
        self.pattern = None
        if self.kind == "payload_regex":
            try:
                self.pattern = re.compile(spec["pattern"])
            except (re.error, KeyError) as e:
                raise BadPattern(f"filter pattern does not compile: {e}") from e
        elif self.kind not in ("knowledge_exists", "const"):
            raise BadPattern(f"unknown predicate kind {self.kind!r}")

    def evaluate(self, ctx: AgentContext, doc: str) -> bool:
        if self.kind == "const":
            result = bool(self.value)
        elif self.kind == "knowledge_exists":
            result = h.get_knowledge(ctx.home_of(self.agent), doc, self.format) is not None
        else:  # payload_regex
            rec = h.get_knowledge(ctx.home_of(self.agent), doc, self.format)
            if rec is None:
                raise MissingInput(f"{{in:{self.agent}.{self.format}}}")
            result = self.pattern.search(rec.payload.decode("utf-8", errors="replace")) is not None
        return result != self.negate


# -- multiplexer ----------------------------------------------------------------

def multiplex(ctx: AgentContext, entry: MailboxEntry) -> str:
    """Duplicate the flow: enqueue the doc to every downstream, then ack.

    A crash mid-fanout re-fans-out after recovery; downstream knowledge
    stores absorb the duplicates.
    """
    ctx.route(entry.doc)
    ctx.complete(entry)
    return "done"


# -- synchronizer ----------------------------------------------------------------

def _sync_state_path(ctx: AgentContext, doc: str) -> str:
    return ctx.home.path("state", "sync", doc)


def _read_sync_state(ctx: AgentContext, doc: str) -> tuple[set[str], bool]:
    try:
        with open(_sync_state_path(ctx, doc), encoding="utf-8") as f:
            lines = [ln.strip() for ln in f if ln.strip()]
    except FileNotFoundError:
        return set(), False
    forwarded = "#forwarded" in lines
    return {ln for ln in lines if not ln.startswith("#")}, forwarded


def _write_sync_state(ctx: AgentContext, doc: str, seen: set[str], forwarded: bool) -> None:
    lines = sorted(seen)
    if forwarded:
        lines.append("#forwarded")
    tmp = ctx.home.path("state", "sync", f".{doc}.tmp")
    with open(tmp, "w", encoding="utf-8") as f:
        f.write("\n".join(lines) + "\n")
    os.replace(tmp, _sync_state_path(ctx, doc))


def synchronize(ctx: AgentContext, entry: MailboxEntry, mode: str | None = None) -> str:
    """Merge flows: forward once per doc, per the barrier/union mode.

    barrier forwards when the doc has arrived on every in-edge; union
    forwards on first arrival. Either way later arrivals are recorded and
    acked without forwarding, which is what makes a multiplexer diamond
    exactly-once end to end.
    """
    mode = mode or sync_mode_for(ctx.circuit, ctx.agent.name)
    doc = entry.doc
    seen, forwarded = _read_sync_state(ctx, doc)
    if entry.source is not None:
        seen = seen | {entry.source}

    if mode == "barrier":
        ready = set(ctx.upstream) <= seen
    else:
        ready = True

    if ready and not forwarded:
        # Forward before persisting the sentinel: a crash in between means a
        # duplicate forward, never a lost document.
        ctx.route(doc)
        _write_sync_state(ctx, doc, seen, forwarded=True)
        ctx.complete(entry)
        return "done"
    _write_sync_state(ctx, doc, seen, forwarded=forwarded)
    mb.ack(ctx.home.mailbox, entry)
    return "held"


# -- filter ----------------------------------------------------------------------

def filter_step(ctx: AgentContext, entry: MailboxEntry, predicate: Predicate | None = None) -> str:
    """Forward iff the predicate holds; either way the doc is decided and acked."""
    pred = predicate or Predicate(ctx.agent.params["predicate"])
    doc = entry.doc
    result = pred.evaluate(ctx, doc)  # may raise MissingInput (retriable)
    if result:
        ctx.route(doc)
    h.append_log(ctx.home, "decisions.log", {
        "doc": doc, "forwarded": result, "at": h.rfc3339(time.time()),
    })
    ctx.complete(entry)
    return "done" if result else "dropped"


# -- dispatcher --------------------------------------------------------------------

def fnv1a64(data: bytes) -> int:
    """64-bit FNV-1a; non-cryptographic, stable across processes and runs."""
    value = 0xCBF29CE484222325
    for byte in data:
        value ^= byte
        value = (value * 0x100000001B3) & 0xFFFFFFFFFFFFFFFF
    return value


def _rr_counter(ctx: AgentContext) -> int:
    try:
        with open(ctx.home.path("state", "dispatch.counter"), encoding="ascii") as f:
            return int(f.read().strip() or "0")
    except FileNotFoundError:
        return 0


def _write_rr_counter(ctx: AgentContext, value: int) -> None:
    tmp = ctx.home.path("state", ".dispatch.counter.tmp")
    with open(tmp, "w", encoding="ascii") as f:
        f.write(f"{value}\n")
    os.replace(tmp, ctx.home.path("state", "dispatch.counter"))


def dispatch(ctx: AgentContext, entry: MailboxEntry) -> str:
    """Split the flow: enqueue the doc to exactly one downstream target."""
    params = ctx.agent.params
    rule = params["rule"]
    targets = sorted(ctx.downstream)
    doc = entry.doc

    if rule == "round_robin":
        counter = _rr_counter(ctx)
        target = targets[counter % len(targets)]
        ctx.route(doc, targets=[target])
        _write_rr_counter(ctx, counter + 1)
    elif rule == "hash_by_doc_id":
        target = targets[fnv1a64(doc.encode("utf-8")) % len(targets)]
        ctx.route(doc, targets=[target])
    elif rule == "by_predicate":
        target = params["default"]
        for branch in params["branches"]:
            if Predicate(branch["predicate"]).evaluate(ctx, doc):
                target = branch["target"]
                break
        ctx.route(doc, targets=[target])
    else:
        raise BadPattern(f"unknown dispatch rule {rule!r}")

    h.append_log(ctx.home, "decisions.log", {
        "doc": doc, "target": target, "at": h.rfc3339(time.time()),
    })
    ctx.complete(entry)
    return "done"


# -- translator ---------------------------------------------------------------------

def _map_identity(payload: bytes) -> bytes:
    return payload


def _map_lines_to_json(payload: bytes) -> bytes:
    try:
        text = payload.decode("utf-8")
    except UnicodeDecodeError as e:
        raise MappingError(f"source is not UTF-8: {e}") from e
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    return json.dumps(lines, separators=(",", ":")).encode("utf-8")


def _map_keyvalue_to_json(payload: bytes) -> bytes:
    try:
        text = payload.decode("utf-8")
    except UnicodeDecodeError as e:
        raise MappingError(f"source is not UTF-8: {e}") from e
    obj = {}
    for i, line in enumerate(text.splitlines()):
        if not line.strip():
            continue
        key, sep, value = line.partition("=")
        if not sep or not key.strip():
            raise MappingError(f"line {i + 1} is not key=value: {line[:80]!r}")
        obj[key.strip()] = value.strip()
    return json.dumps(obj, separators=(",", ":"), sort_keys=True).encode("utf-8")


MAPPINGS = {
    "identity": _map_identity,
    "lines_to_json": _map_lines_to_json,
    "keyvalue_to_json": _map_keyvalue_to_json,
}


def register_mapping(name: str, fn) -> None:
    """Extend the mapping registry (applications may add their own)."""
    MAPPINGS[name] = fn


def translate(ctx: AgentContext, entry: MailboxEntry) -> str:
    """Convert one upstream format into another under this agent's name.

    Translators with a component contract run through the adapter path
    instead; this is the built-in pure-mapping route.
    """
    params = ctx.agent.params
    mapping_name = params["mapping"]
    if mapping_name not in MAPPINGS:
        raise BadPattern(f"unknown mapping {mapping_name!r}")
    source = params["source"]
    out_format = params["output_format"]
    doc = entry.doc

    rec = h.get_knowledge(ctx.home_of(source["agent"]), doc, source["format"])
    if rec is None:
        raise MissingInput(f"{{in:{source['agent']}.{source['format']}}}")
    existing = h.get_knowledge(ctx.home, doc, out_format)
    if existing is None:
        converted = MAPPINGS[mapping_name](rec.payload)  # may raise MappingError
        h.put_knowledge(ctx.home, h.KnowledgeRecord(
            agent=ctx.agent.name, doc=doc, format=out_format, payload=converted,
        ))
    ctx.route(doc)
    ctx.complete(entry)
    return "done"


def wrap_failures(ctx: AgentContext, entry: MailboxEntry, step) -> str:
    """Run a transistor step with the shared attempt/dead-letter handling."""
    from .adapter import handle_failure

    try:
        return step(ctx, entry)
    except ComponentFailure as exc:
        return handle_failure(ctx, entry, exc)
