"""Per-agent runtime wiring shared by adapters and flow-control agents."""

from __future__ import annotations

import time
from dataclasses import dataclass, field

from . import home as h
from . import mailbox as mb
from .circuit import CircuitSpec, AgentSpec


@dataclass
class AgentContext:
    """Everything one agent's loop needs: its spec, home, and neighbors.

    Routing lives here so every agent kind forwards the same way: a doc id
    is enqueued to each downstream mailbox, tagged with the source edge
    when the destination is a synchronizer (which needs to know which
    in-edge a document arrived on).
    """

    deploy_root: str
    circuit: CircuitSpec
    agent: AgentSpec
    home: h.AgentHome
    upstream: list[str] = field(default_factory=list)
    downstream: list[str] = field(default_factory=list)

    @classmethod
    def for_agent(cls, deploy_root: str, circuit: CircuitSpec, name: str) -> AgentContext:
        agent = circuit.agent(name)
        return cls(
            deploy_root=deploy_root,
            circuit=circuit,
            agent=agent,
            home=h.open_home(deploy_root, name),
            upstream=circuit.upstream_of(name),
            downstream=circuit.downstream_of(name),
        )

    def home_of(self, name: str) -> h.AgentHome:
        return h.open_home(self.deploy_root, name)

    def route(self, doc: str, targets: list[str] | None = None) -> None:
        """Enqueue doc to downstream mailboxes (all of them by default)."""
        for dst in self.downstream if targets is None else targets:
            source = self.agent.name if self.circuit.agent(dst).kind == "synchronizer" else None
            mb.enqueue(self.home_of(dst).mailbox, doc, source=source)

    def complete(self, entry: mb.MailboxEntry) -> None:
        """Mark a claimed entry fully handled: log it, then drop the claim."""
        h.append_log(self.home, "processed.log", {
            "doc": entry.doc, "at": h.rfc3339(time.time()),
        })
        mb.ack(self.home.mailbox, entry)

    def processed_docs(self) -> list[str]:
        return [rec["doc"] for rec in h.read_log(self.home, "processed.log")]
