"""The per-agent directory: knowledge, attempt ledger, dead letters, lease.

Everything an agent produces lives under its home so any process (the
agent, the supervisor, an operator's shell) can inspect it:

    <deploy_root>/agents/<name>/
        mailbox/{tmp,inbox,working}/
        knowledge/<doc>.<format>
        deadletter/<doc>.json        (+ archive/)
        state/attempts/<doc>         ASCII decimal count
        state/lease                  single-line JSON, see acquire_lease
        state/status.json
        state/sync/<doc>             synchronizer arrival sets
        log/*.log                    append-only JSON lines
        work/                        component scratch space

Knowledge writes are tmp+rename replaces, so rerunning an agent over an
already-processed document is byte-idempotent, and readers never observe
a torn payload.
"""

from __future__ import annotations

import fcntl
import json
import os
import secrets
import signal
import time
from contextlib import contextmanager
from dataclasses import dataclass, field

from .circuit import validate_doc_id, validate_identifier
from .errors import Fenced, TakeoverFailed
from .fsops import DEFAULT_FS, FsOps
from . import mailbox as mb

LEASE_GRACE_S = 5.0
LEASE_FORCE_WAIT_S = 2.0


def rfc3339(epoch: float) -> str:
    frac = f"{epoch % 1:.6f}"[1:]
    return time.strftime("%Y-%m-%dT%H:%M:%S", time.gmtime(epoch)) + frac + "Z"


def parse_rfc3339(text: str) -> float:
    import calendar

    base, _, frac = text.rstrip("Z").partition(".")
    epoch = calendar.timegm(time.strptime(base, "%Y-%m-%dT%H:%M:%S"))
    return epoch + (float("0." + frac) if frac else 0.0)


@dataclass(frozen=True)
class AgentHome:
    agent: str
    root: str

    def path(self, *parts: str) -> str:
        return os.path.join(self.root, *parts)

    @property
    def mailbox(self) -> mb.MailboxRef:
        return mb.MailboxRef(self.path("mailbox"))


@dataclass(frozen=True)
class KnowledgeRecord:
    agent: str
    doc: str
    format: str
    payload: bytes
    produced_at: float = 0.0


@dataclass(frozen=True)
class Lease:
    holder_pid: int
    token: str
    heartbeat_at: float
    acquired_at: float


@dataclass(frozen=True)
class DeadLetter:
    doc: str
    attempts: int
    last_error: str
    inputs_snapshot: list = field(default_factory=list)  # [(agent, format), ...]
    failed_at: float = 0.0


def home_path(deploy_root: str, name: str) -> str:
    return os.path.join(deploy_root, "agents", name)


def init_home(deploy_root: str, agent, fs: FsOps = DEFAULT_FS) -> AgentHome:
    """Create the full home layout for an agent; idempotent by name."""
    name = getattr(agent, "name", agent)
    validate_identifier(name, "agent name")
    home = AgentHome(agent=name, root=home_path(deploy_root, name))
    for sub in ("knowledge", "deadletter", "state/attempts", "state/sync", "log", "work"):
        fs.mkdir(home.path(*sub.split("/")))
    mb.mailbox_init(home.path("mailbox"), fs=fs)
    return home


def open_home(deploy_root: str, name: str) -> AgentHome:
    return AgentHome(agent=name, root=home_path(deploy_root, name))


# -- knowledge ----------------------------------------------------------------

def knowledge_path(home: AgentHome, doc: str, fmt: str) -> str:
    return home.path("knowledge", f"{doc}.{fmt}")


def put_knowledge(home: AgentHome, rec: KnowledgeRecord, fs: FsOps = DEFAULT_FS) -> None:
    """Store a payload atomically; an overwrite replaces the whole file."""
    if rec.agent != home.agent:
        raise ValueError(f"record for agent '{rec.agent}' stored in home of '{home.agent}'")
    validate_doc_id(rec.doc)
    validate_identifier(rec.format, "format tag")
    tmp = home.path("knowledge", f".{os.getpid()}.{secrets.token_hex(4)}.tmp")
    fs.write_file(tmp, rec.payload, fsync=True)
    fs.rename(tmp, knowledge_path(home, rec.doc, rec.format))


def get_knowledge(home: AgentHome, doc: str, fmt: str) -> KnowledgeRecord | None:
    path = knowledge_path(home, doc, fmt)
    try:
        with open(path, "rb") as f:
            payload = f.read()
        produced = os.path.getmtime(path)
    except FileNotFoundError:
        return None
    return KnowledgeRecord(agent=home.agent, doc=doc, format=fmt, payload=payload, produced_at=produced)


# -- append-only logs ---------------------------------------------------------

def append_log(home: AgentHome, logname: str, obj: dict) -> None:
    line = json.dumps(obj, separators=(",", ":"), sort_keys=True)
    with open(home.path("log", logname), "a", encoding="utf-8") as f:
        f.write(line + "\n")


def read_log(home: AgentHome, logname: str) -> list[dict]:
    try:
        with open(home.path("log", logname), encoding="utf-8") as f:
            return [json.loads(line) for line in f if line.strip()]
    except FileNotFoundError:
        return []


# -- attempt ledger & dead letters ---------------------------------------------

def attempt_count(home: AgentHome, doc: str) -> int:
    try:
        with open(home.path("state", "attempts", doc), encoding="ascii") as f:
            return int(f.read().strip() or "0")
    except FileNotFoundError:
        return 0


def record_failure(home: AgentHome, doc: str, error: str, fs: FsOps = DEFAULT_FS) -> int:
    """Durably increment the per-document attempt count and log the diagnostic."""
    validate_doc_id(doc)
    count = attempt_count(home, doc) + 1
    tmp = home.path("state", "attempts", f".{doc}.tmp")
    fs.write_file(tmp, f"{count}\n".encode("ascii"), fsync=True)
    fs.rename(tmp, home.path("state", "attempts", doc))
    append_log(home, "failures.log", {
        "doc": doc, "attempt": count, "error": error[:2048], "at": rfc3339(time.time()),
    })
    return count


def reset_attempts(home: AgentHome, doc: str, fs: FsOps = DEFAULT_FS) -> None:
    """Operator retry-reset: the one sanctioned way the ledger goes down."""
    tmp = home.path("state", "attempts", f".{doc}.tmp")
    fs.write_file(tmp, b"0\n", fsync=True)
    fs.rename(tmp, home.path("state", "attempts", doc))


def should_dead_letter(home: AgentHome, doc: str, threshold: int) -> bool:
    if threshold < 1:
        raise ValueError("threshold must be >= 1")
    return attempt_count(home, doc) >= threshold


def dead_letter_path(home: AgentHome, doc: str) -> str:
    return home.path("deadletter", f"{doc}.json")


def dead_letter(home: AgentHome, dl: DeadLetter, fs: FsOps = DEFAULT_FS) -> None:
    """Persist the skip record that keeps the flow moving past a poison doc."""
    obj = {
        "doc": dl.doc,
        "attempts": dl.attempts,
        "last_error": dl.last_error,
        "inputs_snapshot": [list(pair) for pair in dl.inputs_snapshot],
        "failed_at": rfc3339(dl.failed_at or time.time()),
    }
    tmp = home.path("deadletter", f".{dl.doc}.tmp")
    fs.write_file(tmp, json.dumps(obj, indent=2).encode("utf-8"), fsync=True)
    fs.rename(tmp, dead_letter_path(home, dl.doc))


def load_dead_letter(home: AgentHome, doc: str) -> DeadLetter | None:
    try:
        with open(dead_letter_path(home, doc), encoding="utf-8") as f:
            obj = json.load(f)
    except FileNotFoundError:
        return None
    return DeadLetter(
        doc=obj["doc"],
        attempts=obj["attempts"],
        last_error=obj["last_error"],
        inputs_snapshot=[tuple(p) for p in obj.get("inputs_snapshot", [])],
        failed_at=parse_rfc3339(obj["failed_at"]),
    )


def list_dead_letters(home: AgentHome) -> list[DeadLetter]:
    out = []
    try:
        names = sorted(os.listdir(home.path("deadletter")))
    except FileNotFoundError:
        return []
    for name in names:
        if name.endswith(".json"):
            dl = load_dead_letter(home, name[: -len(".json")])
            if dl is not None:
                out.append(dl)
    return out


def archive_dead_letter(home: AgentHome, doc: str, fs: FsOps = DEFAULT_FS) -> None:
    fs.mkdir(home.path("deadletter", "archive"))
    dst = home.path("deadletter", "archive", f"{doc}.{time.time_ns()}.json")
    fs.rename(dead_letter_path(home, doc), dst)


# -- lease ---------------------------------------------------------------------

def lease_path(home: AgentHome) -> str:
    return home.path("state", "lease")


@contextmanager
def _lease_guard(home: AgentHome):
    """Serialize all lease-file mutations for one home across processes."""
    lock_file = home.path("state", "lease.lck")
    fd = os.open(lock_file, os.O_CREAT | os.O_RDWR, 0o644)
    try:
        fcntl.flock(fd, fcntl.LOCK_EX)
        yield
    finally:
        fcntl.flock(fd, fcntl.LOCK_UN)
        os.close(fd)


def pid_is_alive(pid: int) -> bool:
    """True if pid names a live (non-zombie) process."""
    if pid <= 0:
        return False
    try:
        with open(f"/proc/{pid}/stat", encoding="ascii", errors="replace") as f:
            stat = f.read()
        # state is the field right after the parenthesized comm
        state = stat.rpartition(")")[2].split()[0]
        return state not in ("Z", "X")
    except FileNotFoundError:
        return False
    except OSError:
        try:
            os.kill(pid, 0)
            return True
        except ProcessLookupError:
            return False
        except PermissionError:
            return True


def read_lease(home: AgentHome) -> Lease | None:
    try:
        with open(lease_path(home), encoding="utf-8") as f:
            obj = json.loads(f.read())
        return Lease(
            holder_pid=obj["pid"],
            token=obj["token"],
            heartbeat_at=parse_rfc3339(obj["heartbeat_at"]),
            acquired_at=parse_rfc3339(obj["acquired_at"]),
        )
    except (FileNotFoundError, ValueError, KeyError):
        return None


def _write_lease(home: AgentHome, lease: Lease, exclusive: bool) -> None:
    body = json.dumps({
        "pid": lease.holder_pid,
        "token": lease.token,
        "heartbeat_at": rfc3339(lease.heartbeat_at),
        "acquired_at": rfc3339(lease.acquired_at),
    }) + "\n"
    if exclusive:
        fd = os.open(lease_path(home), os.O_CREAT | os.O_EXCL | os.O_WRONLY, 0o644)
        with os.fdopen(fd, "w", encoding="utf-8") as f:
            f.write(body)
            f.flush()
            os.fsync(f.fileno())
    else:
        tmp = home.path("state", f".lease.{os.getpid()}.tmp")
        with open(tmp, "w", encoding="utf-8") as f:
            f.write(body)
            f.flush()
            os.fsync(f.fileno())
        os.replace(tmp, lease_path(home))


def _terminate(pid: int, grace_s: float, force_wait_s: float) -> None:
    try:
        os.kill(pid, signal.SIGTERM)
    except ProcessLookupError:
        return
    except PermissionError:
        raise TakeoverFailed(f"not permitted to signal pid {pid}")
    deadline = time.monotonic() + grace_s
    while time.monotonic() < deadline:
        if not pid_is_alive(pid):
            return
        time.sleep(0.02)
    try:
        os.kill(pid, signal.SIGKILL)
    except ProcessLookupError:
        return
    deadline = time.monotonic() + force_wait_s
    while time.monotonic() < deadline:
        if not pid_is_alive(pid):
            return
        time.sleep(0.02)
    raise TakeoverFailed(f"pid {pid} survived SIGTERM and SIGKILL")


def acquire_lease(
    home: AgentHome,
    my_pid: int | None = None,
    grace_s: float = LEASE_GRACE_S,
    force_wait_s: float = LEASE_FORCE_WAIT_S,
) -> Lease:
    """Become the agent's sole instance, killing any live predecessor.

    A live holder is sent SIGTERM, given grace_s to exit, then SIGKILLed.
    A stale lease (dead pid) is claimed without signaling. The token in
    the lease file fences the rare survivor whose pid was reused: every
    heartbeat re-checks it.
    """
    my_pid = my_pid if my_pid is not None else os.getpid()
    while True:
        victim: int | None = None
        with _lease_guard(home):
            current = read_lease(home)
            if current is None:
                if os.path.exists(lease_path(home)):
                    os.unlink(lease_path(home))  # corrupt lease file
                now = time.time()
                lease = Lease(
                    holder_pid=my_pid,
                    token=secrets.token_hex(16),
                    heartbeat_at=now,
                    acquired_at=now,
                )
                _write_lease(home, lease, exclusive=True)
                append_log(home, "fencing.log", {
                    "event": "takeover", "pid": my_pid, "token": lease.token,
                    "at": rfc3339(now),
                })
                return lease
            if current.holder_pid != my_pid and pid_is_alive(current.holder_pid):
                victim = current.holder_pid
            else:
                os.unlink(lease_path(home))
                continue
        # Signal outside the guard so the dying holder can still take it
        # briefly (to release cleanly) without deadlocking the takeover.
        _terminate(victim, grace_s, force_wait_s)


def heartbeat(home: AgentHome, lease: Lease) -> Lease:
    """Refresh heartbeat_at; raises Fenced when the caller no longer holds the lease."""
    with _lease_guard(home):
        current = read_lease(home)
        if current is None:
            raise Fenced(f"lease for '{home.agent}' was revoked")
        if current.token != lease.token:
            raise Fenced(f"lease for '{home.agent}' was taken over")
        refreshed = Lease(
            holder_pid=lease.holder_pid,
            token=lease.token,
            heartbeat_at=time.time(),
            acquired_at=lease.acquired_at,
        )
        _write_lease(home, refreshed, exclusive=False)
        return refreshed


def release_lease(home: AgentHome, lease: Lease) -> bool:
    """Drop the lease on clean shutdown; no-op if someone else took over."""
    with _lease_guard(home):
        current = read_lease(home)
        if current is not None and current.token == lease.token:
            os.unlink(lease_path(home))
            return True
        return False


# -- status snapshot -----------------------------------------------------------

def write_status(home: AgentHome, obj: dict, fs: FsOps = DEFAULT_FS) -> None:
    tmp = home.path("state", f".status.{os.getpid()}.tmp")
    fs.write_file(tmp, json.dumps(obj, sort_keys=True).encode("utf-8"))
    fs.rename(tmp, home.path("state", "status.json"))


def read_status(home: AgentHome) -> dict | None:
    try:
        with open(home.path("state", "status.json"), encoding="utf-8") as f:
            return json.load(f)
    except (FileNotFoundError, json.JSONDecodeError):
        return None
