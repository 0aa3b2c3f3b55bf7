"""Deploy circuits, manage agent processes, ingest documents, read status.

The supervisor is stateless and restartable: everything it knows it reads
back from the deployment root. It never routes documents; routing lives
in the agents, and the supervisor's writes are limited to deployment,
ingestion, and the explicitly mutating operator actions (start, stop,
dead-letter retry).
"""

from __future__ import annotations

import fcntl
import json
import os
import signal
import subprocess
import sys
import time
from dataclasses import dataclass, asdict

from . import home as h
from . import mailbox as mb
from .circuit import (
    CircuitSpec,
    parse_circuit,
    serialize_circuit,
    topo_order,
    validate_circuit,
)
from .errors import (
    DuplicateDocId,
    InvalidCircuit,
    NoSuchDeadLetter,
    SpawnError,
    UnknownAgent,
)
from .runtime import HEARTBEAT_INTERVAL_S, STALE_AFTER_INTERVALS

STOP_WAIT_S = 30.0


@dataclass(frozen=True)
class DeploymentManifest:
    deploy_root: str
    circuit: CircuitSpec
    created_at: float
    version: int

    def manifest_path(self) -> str:
        return os.path.join(self.deploy_root, "circuit.json")


@dataclass(frozen=True)
class StatusSnapshot:
    agent: str
    kind: str
    state: str  # stopped | running | fenced | failed
    pid: int | None
    inbox_depth: int
    working_depth: int
    processed_total: int
    deadletter_total: int
    last_doc: str | None
    throughput_1m: int
    heartbeat_age: float | None

    def to_dict(self) -> dict:
        return asdict(self)


def _heartbeat_interval_s() -> float:
    return float(os.environ.get("CIRCUITD_HEARTBEAT_S", HEARTBEAT_INTERVAL_S))


def deploy(deploy_root: str, spec: CircuitSpec) -> DeploymentManifest:
    """Materialize a circuit: one home per agent plus the persisted manifest.

    Idempotent for an unchanged spec; a redeploy with added agents creates
    only the new homes, leaving existing knowledge in place.
    """
    violations = validate_circuit(spec)
    if violations:
        raise InvalidCircuit("; ".join(str(v) for v in violations))

    os.makedirs(os.path.join(deploy_root, "state"), exist_ok=True)
    previous = None
    try:
        previous = load_manifest(deploy_root)
    except FileNotFoundError:
        pass
    version = previous.version + 1 if previous is not None else 1

    for agent in spec.agents:
        h.init_home(deploy_root, agent)

    manifest = DeploymentManifest(
        deploy_root=deploy_root,
        circuit=spec,
        created_at=time.time(),
        version=version,
    )
    body = json.dumps({
        "version": version,
        "created_at": h.rfc3339(manifest.created_at),
        "circuit": json.loads(serialize_circuit(spec)),
    }, indent=2)
    tmp = os.path.join(deploy_root, ".circuit.json.tmp")
    with open(tmp, "w", encoding="utf-8") as f:
        f.write(body + "\n")
    os.replace(tmp, manifest.manifest_path())
    return manifest


def load_manifest(deploy_root: str) -> DeploymentManifest:
    path = os.path.join(deploy_root, "circuit.json")
    with open(path, encoding="utf-8") as f:
        obj = json.load(f)
    spec = parse_circuit(json.dumps(obj["circuit"]))
    return DeploymentManifest(
        deploy_root=deploy_root,
        circuit=spec,
        created_at=h.parse_rfc3339(obj["created_at"]),
        version=obj["version"],
    )


# -- lifecycle -------------------------------------------------------------------

def start_agent(manifest: DeploymentManifest, name: str) -> int:
    """Launch the agent as an independent OS process; returns its pid.

    The new process acquires the lease itself, killing any predecessor,
    so starting twice converges to exactly one running instance.
    """
    try:
        manifest.circuit.agent(name)
    except UnknownAgent as e:
        raise SpawnError(f"unknown agent '{name}'") from e
    home = h.init_home(manifest.deploy_root, name)
    logfile = open(home.path("log", "agent.out"), "ab")
    try:
        proc = subprocess.Popen(
            [sys.executable, "-m", "circuitd.agent_main", manifest.deploy_root, name],
            stdout=logfile,
            stderr=logfile,
            stdin=subprocess.DEVNULL,
            start_new_session=True,
        )
    except OSError as e:
        raise SpawnError(f"could not launch agent '{name}': {e}") from e
    finally:
        logfile.close()
    return proc.pid


def start_all(manifest: DeploymentManifest) -> dict[str, int]:
    """Launch every agent in topological order (producers see live consumers)."""
    report = {}
    for name in topo_order(manifest.circuit):
        report[name] = start_agent(manifest, name)
    return report


def stop_agent(
    manifest: DeploymentManifest,
    name: str,
    mode: str = "graceful",
    wait_s: float = STOP_WAIT_S,
) -> bool:
    """Stop a running agent; returns False (with no error) if none is running.

    graceful signals cancellation and waits for the in-flight document;
    kill terminates immediately, leaving the in-flight entry in working/
    for the next activation's recovery.
    """
    manifest.circuit.agent(name)
    home = h.open_home(manifest.deploy_root, name)
    lease = h.read_lease(home)
    if lease is None or not h.pid_is_alive(lease.holder_pid):
        return False  # NotRunning is a warning, not an error
    pid = lease.holder_pid
    sig = signal.SIGTERM if mode == "graceful" else signal.SIGKILL
    try:
        os.kill(pid, sig)
    except ProcessLookupError:
        return False
    deadline = time.monotonic() + (wait_s if mode == "graceful" else 10.0)
    while time.monotonic() < deadline:
        if not h.pid_is_alive(pid):
            break
        if h.read_lease(home) is None:
            break
        time.sleep(0.02)
    else:
        raise TimeoutError(f"agent '{name}' (pid {pid}) did not stop within {wait_s}s")
    if mode == "kill":
        # Operator-sanctioned termination: clear the lease so the agent
        # reads as stopped, not crashed.
        current = h.read_lease(home)
        if current is not None and current.holder_pid == pid:
            os.unlink(h.lease_path(home))
        status = h.read_status(home) or {}
        status.update({"state": "stopped", "heartbeat_at": h.rfc3339(time.time())})
        status.setdefault("agent", name)
        h.write_status(home, status)
    return True


def stop_all(manifest: DeploymentManifest, mode: str = "graceful") -> dict[str, bool]:
    return {name: stop_agent(manifest, name, mode=mode) for name in manifest.circuit.agent_names()}


# -- ingestion --------------------------------------------------------------------

def _next_ingest_id(deploy_root: str) -> str:
    """Deployment-unique id: compact UTC timestamp plus a persistent counter."""
    state_dir = os.path.join(deploy_root, "state")
    os.makedirs(state_dir, exist_ok=True)
    lock_fd = os.open(os.path.join(state_dir, "ingest.lock"), os.O_CREAT | os.O_RDWR, 0o644)
    try:
        fcntl.flock(lock_fd, fcntl.LOCK_EX)
        counter_path = os.path.join(state_dir, "ingest.counter")
        try:
            with open(counter_path, encoding="ascii") as f:
                counter = int(f.read().strip() or "0")
        except FileNotFoundError:
            counter = 0
        counter += 1
        tmp = counter_path + ".tmp"
        with open(tmp, "w", encoding="ascii") as f:
            f.write(f"{counter}\n")
        os.replace(tmp, counter_path)
    finally:
        fcntl.flock(lock_fd, fcntl.LOCK_UN)
        os.close(lock_fd)
    stamp = time.strftime("%Y%m%dT%H%M%SZ", time.gmtime())
    return f"{stamp}-{counter:06d}"


def ingest(
    manifest: DeploymentManifest,
    root: str,
    payload: bytes,
    doc_id: str | None = None,
) -> str:
    """Store a document's initial knowledge at a root and push it into the flow."""
    agent = manifest.circuit.agent(root)
    if agent.kind != "ingest-root":
        raise UnknownAgent(f"'{root}' is not an ingest-root (kind={agent.kind})")
    home = h.open_home(manifest.deploy_root, root)

    if doc_id is not None:
        if h.get_knowledge(home, doc_id, "raw.v1") is not None:
            raise DuplicateDocId(f"document '{doc_id}' was already ingested at '{root}'")
        doc = doc_id
    else:
        doc = _next_ingest_id(manifest.deploy_root)

    h.put_knowledge(home, h.KnowledgeRecord(agent=root, doc=doc, format="raw.v1", payload=payload))
    meta = json.dumps({
        "ingested_at": h.rfc3339(time.time()),
        "size": len(payload),
    }).encode("utf-8")
    h.put_knowledge(home, h.KnowledgeRecord(agent=root, doc=doc, format="meta.v1", payload=meta))

    for dst in manifest.circuit.downstream_of(root):
        source = root if manifest.circuit.agent(dst).kind == "synchronizer" else None
        mb.enqueue(h.open_home(manifest.deploy_root, dst).mailbox, doc, source=source)
    return doc


# -- status -------------------------------------------------------------------------

def agent_status(manifest: DeploymentManifest, name: str) -> StatusSnapshot:
    spec = manifest.circuit.agent(name)
    home = h.open_home(manifest.deploy_root, name)
    lease = h.read_lease(home)
    status = h.read_status(home) or {}
    depths = mb.depth(home.mailbox)
    try:
        deadletters = sum(
            1 for n in os.listdir(home.path("deadletter")) if n.endswith(".json"))
    except FileNotFoundError:
        deadletters = 0

    interval = _heartbeat_interval_s()
    if lease is None:
        state = "fenced" if status.get("state") == "fenced" else "stopped"
        pid = None
        age = None
    else:
        age = max(0.0, time.time() - lease.heartbeat_at)
        pid = lease.holder_pid
        if age <= STALE_AFTER_INTERVALS * interval and h.pid_is_alive(pid):
            state = "running"
        else:
            state = "failed"

    processed = status.get("processed_total")
    if processed is None:
        processed = len(h.read_log(home, "processed.log"))
    return StatusSnapshot(
        agent=name,
        kind=spec.kind,
        state=state,
        pid=pid,
        inbox_depth=depths["inbox"],
        working_depth=depths["working"],
        processed_total=processed,
        deadletter_total=deadletters,
        last_doc=status.get("last_doc"),
        throughput_1m=status.get("throughput_1m", 0),
        heartbeat_age=age,
    )


def status(manifest: DeploymentManifest) -> list[StatusSnapshot]:
    return [agent_status(manifest, name) for name in sorted(manifest.circuit.agent_names())]


# -- dead-letter retry ------------------------------------------------------------------

def retry_dead_letter(manifest: DeploymentManifest, agent: str, doc: str) -> None:
    """Reset the attempt ledger, archive the dead letter, requeue the doc."""
    manifest.circuit.agent(agent)
    home = h.open_home(manifest.deploy_root, agent)
    dl = h.load_dead_letter(home, doc)
    if dl is None:
        raise NoSuchDeadLetter(f"no dead letter for doc '{doc}' at agent '{agent}'")
    h.reset_attempts(home, doc)
    h.archive_dead_letter(home, doc)
    mb.enqueue(home.mailbox, doc)
