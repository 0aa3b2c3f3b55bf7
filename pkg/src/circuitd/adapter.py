"""The transducer that turns an external executable into an agent.

For each claimed document the adapter gathers upstream knowledge files,
substitutes them into the component's argv template, runs the component
in the agent's work directory, persists the output file as this agent's
knowledge, and only then routes the document id downstream. That ordering
(persist, route, ack) means a downstream agent never sees a document
whose upstream knowledge is not yet durably readable; the price is that a
crash inside the window can hand downstream a duplicate id, which the
overwrite-idempotent knowledge store absorbs.

Components must be deterministic or idempotent per input: reprocessing a
document must produce the same output bytes.
"""

from __future__ import annotations

import os
import re
import secrets
import signal
import subprocess
import time
from dataclasses import dataclass

from . import home as h
from .circuit import ComponentContract
from .context import AgentContext
from .errors import (
    ComponentFailure,
    ComponentTimeout,
    MissingInput,
    MissingOutput,
    NonZeroExit,
)
from .mailbox import MailboxEntry

STDERR_CAP = 64 * 1024

_IN_REF_RE = re.compile(r"\{in:([^}]+)\}")


def gather_inputs(ctx: AgentContext, contract: ComponentContract, doc: str) -> dict[str, str]:
    """Resolve every {in:agent.format} placeholder to an existing file path.

    A missing input is a retriable failure, not a hard error: on a parallel
    branch the producer may simply not have finished yet.
    """
    bindings: dict[str, str] = {}
    for agent, fmt in contract.input_refs():
        placeholder = f"{{in:{agent}.{fmt}}}"
        path = h.knowledge_path(ctx.home_of(agent), doc, fmt)
        if not os.path.exists(path):
            raise MissingInput(placeholder)
        bindings[placeholder] = path
    return bindings


@dataclass(frozen=True)
class InvocationResult:
    exit_code: int
    out_payload: bytes
    duration_ms: int


def _substitute(template: str, bindings: dict[str, str]) -> str:
    out = template
    for key, value in bindings.items():
        out = out.replace(key, value)
    return out


def invoke_component(
    contract: ComponentContract,
    bindings: dict[str, str],
    workdir: str,
    doc: str,
    agent_name: str = "",
) -> InvocationResult:
    """Run the component once; any outcome other than exit 0 + output file is a failure."""
    out_path = os.path.join(workdir, f"{doc}.{secrets.token_hex(4)}.out")
    full = dict(bindings)
    full["{doc}"] = doc
    full["{out}"] = out_path
    argv = [_substitute(arg, full) for arg in contract.argv_template]

    env = dict(os.environ)
    env.update(dict(contract.env))
    env["CIRCUIT_AGENT"] = agent_name
    env["CIRCUIT_DOC"] = doc

    started = time.monotonic()
    proc = subprocess.Popen(
        argv,
        cwd=workdir,
        env=env,
        stdout=subprocess.DEVNULL,
        stderr=subprocess.PIPE,
        start_new_session=True,  # lets timeout kill the whole process group
    )
    try:
        _, stderr = proc.communicate(timeout=contract.timeout_ms / 1000.0)
    except subprocess.TimeoutExpired:
        try:
            os.killpg(proc.pid, signal.SIGKILL)
        except ProcessLookupError:
            pass
        proc.wait()
        _cleanup(out_path)
        raise ComponentTimeout(f"component exceeded {contract.timeout_ms} ms")
    duration_ms = int((time.monotonic() - started) * 1000)

    stderr_text = stderr[:STDERR_CAP].decode("utf-8", errors="replace")
    if proc.returncode != 0:
        _cleanup(out_path)
        raise NonZeroExit(proc.returncode, stderr_text)
    try:
        with open(out_path, "rb") as f:
            payload = f.read()
    except FileNotFoundError:
        raise MissingOutput("component exited 0 but wrote no output file") from None
    _cleanup(out_path)
    return InvocationResult(exit_code=0, out_payload=payload, duration_ms=duration_ms)


def _cleanup(path: str) -> None:
    try:
        os.unlink(path)
    except FileNotFoundError:
        pass


def process_one(ctx: AgentContext, entry: MailboxEntry) -> str:
    """Handle one claimed document; returns done, requeued, or dead_lettered."""
    contract = ctx.agent.component
    assert contract is not None, "process_one requires a component contract"
    doc = entry.doc
    try:
        bindings = gather_inputs(ctx, contract, doc)
        existing = h.get_knowledge(ctx.home, doc, contract.output_format)
        if existing is None:
            workdir = ctx.home.path("work")
            result = invoke_component(contract, bindings, workdir, doc, ctx.agent.name)
            h.put_knowledge(ctx.home, h.KnowledgeRecord(
                agent=ctx.agent.name,
                doc=doc,
                format=contract.output_format,
                payload=result.out_payload,
            ))
            _log_invocation(ctx, doc, contract, result.exit_code, result.duration_ms, "ok")
        # Knowledge is durable; only now may downstream learn about the doc.
        ctx.route(doc)
        ctx.complete(entry)
        return "done"
    except ComponentFailure as exc:
        return handle_failure(ctx, entry, exc)


def handle_failure(ctx: AgentContext, entry: MailboxEntry, exc: ComponentFailure) -> str:
    """Shared failure path: count the attempt, requeue or skip past the doc."""
    from . import mailbox as mb

    doc = entry.doc
    if isinstance(exc, (ComponentTimeout, NonZeroExit, MissingOutput)) and ctx.agent.component:
        exit_code = exc.exit_code if isinstance(exc, NonZeroExit) else -1
        _log_invocation(ctx, doc, ctx.agent.component, exit_code, 0, type(exc).__name__)
    count = h.record_failure(ctx.home, doc, f"{type(exc).__name__}: {exc}")
    if count >= ctx.agent.failure_threshold:
        snapshot = ctx.agent.component.input_refs() if ctx.agent.component else []
        h.dead_letter(ctx.home, h.DeadLetter(
            doc=doc,
            attempts=count,
            last_error=f"{type(exc).__name__}: {exc}",
            inputs_snapshot=snapshot,
            failed_at=time.time(),
        ))
        mb.ack(ctx.home.mailbox, entry)  # skipped: the flow moves on
        return "dead_lettered"
    mb.nack(ctx.home.mailbox, entry)
    return "requeued"


def _log_invocation(
    ctx: AgentContext, doc: str, contract: ComponentContract,
    exit_code: int, duration_ms: int, outcome: str,
) -> None:
    h.append_log(ctx.home, "invocations.log", {
        "doc": doc,
        "argv": list(contract.argv_template),
        "exit": exit_code,
        "duration_ms": duration_ms,
        "outcome": outcome,
        "at": h.rfc3339(time.time()),
    })
