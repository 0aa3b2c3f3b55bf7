"""The agent activity: poll the mailbox, handle one document, repeat.

Every agent kind shares this loop; only the per-entry step differs. The
loop owns the operational duties: heartbeating the lease (and dying
instantly when fenced), publishing a status snapshot at least once per
heartbeat, recording claims in the fencing log, and draining
continuously while mail is waiting (the poll interval only applies to an
empty mailbox).
"""

from __future__ import annotations

import os
import threading
import time
from collections import deque
from dataclasses import dataclass, field

from . import adapter
from . import home as h
from . import mailbox as mb
from . import networker as nw
from . import transistors as tr
from .circuit import CircuitSpec, sync_mode_for
from .context import AgentContext
from .errors import Fenced

HEARTBEAT_INTERVAL_S = 1.0
STALE_AFTER_INTERVALS = 3


@dataclass
class LoopReport:
    processed: int = 0
    requeued: int = 0
    dead_lettered: int = 0
    dropped: int = 0
    held: int = 0
    polls: int = 0
    claims: int = 0
    fenced: bool = False


class AgentRuntime:
    """One agent's poll loop; construct only with the lease already held."""

    def __init__(
        self,
        deploy_root: str,
        circuit: CircuitSpec,
        name: str,
        lease: h.Lease,
        heartbeat_interval_s: float = HEARTBEAT_INTERVAL_S,
    ):
        self.ctx = AgentContext.for_agent(deploy_root, circuit, name)
        self.lease = lease
        self.heartbeat_interval_s = heartbeat_interval_s
        self.started_at = time.time()
        self._next_heartbeat = 0.0
        self._last_doc: str | None = None
        self._completions: deque[float] = deque()
        self._processed_total = len(h.read_log(self.ctx.home, "processed.log"))

        kind = self.ctx.agent.kind
        self._transport = None
        if kind == "filter":
            self._predicate = tr.Predicate(self.ctx.agent.params["predicate"])  # BadPattern -> refuse to start
        elif kind == "synchronizer":
            self._sync_mode = sync_mode_for(circuit, name)
        elif kind == "networker-send":
            self._transport = nw.sender_transport(self.ctx.agent.params, self.ctx)
        elif kind == "networker-receive":
            self._transport = nw.receiver_transport(self.ctx.agent.params, self.ctx)

    # -- per-entry step ---------------------------------------------------

    def _step(self, entry: mb.MailboxEntry) -> str:
        ctx = self.ctx
        kind = ctx.agent.kind
        if kind == "adapter" or (kind == "translator" and ctx.agent.component is not None):
            return adapter.process_one(ctx, entry)
        if kind == "translator":
            return tr.wrap_failures(ctx, entry, tr.translate)
        if kind == "filter":
            return tr.wrap_failures(ctx, entry, lambda c, e: tr.filter_step(c, e, self._predicate))
        if kind == "dispatcher":
            return tr.wrap_failures(ctx, entry, tr.dispatch)
        if kind == "synchronizer":
            return tr.wrap_failures(ctx, entry, lambda c, e: tr.synchronize(c, e, self._sync_mode))
        if kind == "multiplexer":
            return tr.multiplex(ctx, entry)
        if kind == "networker-send":
            return tr.wrap_failures(ctx, entry, lambda c, e: nw.networker_send(c, e, self._transport))
        # ingest-root (and any passthrough): forward whatever lands here
        ctx.route(entry.doc)
        ctx.complete(entry)
        return "done"

    def _account(self, outcome: str, report: LoopReport, doc: str) -> None:
        if outcome in ("done", "dropped"):
            report.processed += 1
            self._processed_total += 1
            self._completions.append(time.monotonic())
            self._last_doc = doc
        if outcome == "dropped":
            report.dropped += 1
        elif outcome == "requeued":
            report.requeued += 1
        elif outcome == "dead_lettered":
            report.dead_lettered += 1
        elif outcome == "held":
            report.held += 1

    def _work_once(self, report: LoopReport) -> bool:
        ctx = self.ctx
        if ctx.agent.kind == "networker-receive":
            status, doc = nw.networker_receive_one(ctx, self._transport)
            if status == "empty":
                return False
            if status == "received":
                self._account("done", report, doc)
            return True

        if ctx.agent.kind == "networker-send" and self._transport is not None:
            for doc in self._transport.poll_rejected_docs():
                count = h.record_failure(ctx.home, doc, "TransportError: receiver rejected bundle")
                if count >= ctx.agent.failure_threshold:
                    h.dead_letter(ctx.home, h.DeadLetter(
                        doc=doc, attempts=count,
                        last_error="TransportError: receiver rejected bundle",
                        failed_at=time.time(),
                    ))
                    report.dead_lettered += 1
                else:
                    mb.enqueue(ctx.home.mailbox, doc)

        entry = mb.claim_next(ctx.home.mailbox)
        if entry is None:
            return False
        report.claims += 1
        h.append_log(ctx.home, "fencing.log", {
            "event": "claim", "token": self.lease.token, "doc": entry.doc, "seq": entry.seq,
        })
        outcome = self._step(entry)
        self._account(outcome, report, entry.doc)
        return True

    # -- operational duties -------------------------------------------------

    def _tick(self) -> None:
        now = time.monotonic()
        if now < self._next_heartbeat:
            return
        self.lease = h.heartbeat(self.ctx.home, self.lease)  # raises Fenced
        self.write_status("running")
        self._next_heartbeat = now + self.heartbeat_interval_s

    def throughput_1m(self) -> int:
        cutoff = time.monotonic() - 60.0
        while self._completions and self._completions[0] < cutoff:
            self._completions.popleft()
        return len(self._completions)

    def write_status(self, state: str) -> None:
        depths = mb.depth(self.ctx.home.mailbox)
        deadletters = sum(
            1 for n in os.listdir(self.ctx.home.path("deadletter")) if n.endswith(".json")
        )
        h.write_status(self.ctx.home, {
            "agent": self.ctx.agent.name,
            "state": state,
            "pid": os.getpid(),
            "token": self.lease.token,
            "inbox_depth": depths["inbox"],
            "working_depth": depths["working"],
            "processed_total": self._processed_total,
            "deadletter_total": deadletters,
            "last_doc": self._last_doc,
            "throughput_1m": self.throughput_1m(),
            "heartbeat_at": h.rfc3339(time.time()),
            "started_at": h.rfc3339(self.started_at),
        })

    def close(self) -> None:
        if self._transport is not None:
            self._transport.close()

    # -- the loop -------------------------------------------------------------

    def run(self, stop: threading.Event) -> LoopReport:
        """Poll until stop; finishes the in-flight document before exiting.

        Raises Fenced the moment a heartbeat discovers another instance
        took over; the in-flight state is left for the successor's
        recovery.
        """
        report = LoopReport()
        poll_s = self.ctx.agent.poll_interval_ms / 1000.0
        try:
            while not stop.is_set():
                self._tick()
                if self._work_once(report):
                    continue
                report.polls += 1
                deadline = time.monotonic() + poll_s
                while not stop.is_set():
                    remaining = deadline - time.monotonic()
                    if remaining <= 0:
                        break
                    self._tick()
                    time.sleep(min(0.05, remaining))
        finally:
            self.close()
        return report


def run_agent(
    deploy_root: str,
    circuit: CircuitSpec,
    name: str,
    stop: threading.Event,
    grace_s: float = h.LEASE_GRACE_S,
    heartbeat_interval_s: float = HEARTBEAT_INTERVAL_S,
) -> LoopReport:
    """Full agent activation: lease, recovery, loop, clean release.

    This is what an agent process executes; tests drive it in threads.
    """
    spec = circuit.agent(name)
    home = h.init_home(deploy_root, spec)
    lease = h.acquire_lease(home, os.getpid(), grace_s=grace_s)
    mb.recover(home.mailbox)
    runtime = AgentRuntime(deploy_root, circuit, name, lease, heartbeat_interval_s)
    runtime.write_status("running")
    try:
        report = runtime.run(stop)
    except Fenced:
        # A successor owns the home now; leave every file alone unless the
        # lease is truly gone (operator revocation with no new holder).
        current = h.read_lease(home)
        if current is None or not h.pid_is_alive(current.holder_pid):
            runtime.write_status("fenced")
        return LoopReport(fenced=True)
    runtime.write_status("stopped")
    h.release_lease(home, lease)
    return report
