"""File-system FIFO mailbox: the agent's address.

Layout: <root>/{tmp,inbox,working}/. An entry is an empty file whose name
carries everything: `<seq>_<doc>.msg`, where seq is a 19-digit nanosecond
timestamp plus a 4-digit per-process counter, so lexicographic order is
claim order. All mutations are write-to-tmp-then-rename or a rename
between directories; nothing is ever overwritten in place, which is what
makes a crash at any point leave either a complete entry or none.

Synchronizers need to know which in-edge a document arrived on, so an
entry may live in a per-source subdirectory `inbox/<from-agent>/` (the one
layout extension); working/ mirrors the subdirectory so recovery puts the
entry back where it came from.

Many processes may enqueue concurrently; claim/ack/nack/recover assume a
single claimant, which the lease enforces one level up.
"""

from __future__ import annotations

import os
import re
import threading
import time
from dataclasses import dataclass

from .errors import NotClaimed
from .circuit import validate_doc_id, validate_identifier
from .fsops import DEFAULT_FS, FsOps

ENTRY_RE = re.compile(r"^[0-9]{19}[0-9]{4}_[A-Za-z0-9._-]+\.msg$")

_seq_lock = threading.Lock()
_seq_last_ns = 0
_seq_counter = 0


def _next_seq() -> str:
    """23-digit key: zero-padded ns timestamp + counter, strictly increasing per process."""
    global _seq_last_ns, _seq_counter
    with _seq_lock:
        ns = time.time_ns()
        if ns <= _seq_last_ns:
            ns = _seq_last_ns
        _seq_counter = (_seq_counter + 1) % 10_000
        if _seq_counter == 0:
            ns += 1  # counter wrapped within one clamped tick
        _seq_last_ns = ns
        return f"{ns:019d}{_seq_counter:04d}"


@dataclass(frozen=True)
class MailboxEntry:
    doc: str
    seq: str
    source: str | None = None  # per-edge sub-inbox name, if any

    @property
    def filename(self) -> str:
        return f"{self.seq}_{self.doc}.msg"


@dataclass(frozen=True)
class MailboxRef:
    path: str

    @property
    def tmp(self) -> str:
        return os.path.join(self.path, "tmp")

    @property
    def inbox(self) -> str:
        return os.path.join(self.path, "inbox")

    @property
    def working(self) -> str:
        return os.path.join(self.path, "working")


def _parse_entry_name(name: str, source: str | None) -> MailboxEntry | None:
    if not ENTRY_RE.match(name):
        return None
    seq, _, rest = name.partition("_")
    return MailboxEntry(doc=rest[: -len(".msg")], seq=seq, source=source)


def _gc_tmp(ref: MailboxRef, fs: FsOps, max_age_s: float) -> None:
    # Only collect tmp files old enough that no live enqueue can still own
    # them; the write-to-rename window is microseconds.
    now = time.time()
    for name in os.listdir(ref.tmp):
        full = os.path.join(ref.tmp, name)
        try:
            if now - os.path.getmtime(full) >= max_age_s:
                fs.unlink(full)
        except FileNotFoundError:
            pass


def mailbox_init(path: str, fs: FsOps = DEFAULT_FS, tmp_gc_age_s: float = 60.0) -> MailboxRef:
    """Create (or re-open) a mailbox; idempotent. Collects orphaned tmp files."""
    if os.path.isfile(path):
        raise OSError(f"mailbox path {path} is a regular file")
    ref = MailboxRef(path)
    for d in (ref.tmp, ref.inbox, ref.working):
        fs.mkdir(d)
    _gc_tmp(ref, fs, tmp_gc_age_s)
    return ref


def enqueue(mbox: MailboxRef, doc: str, source: str | None = None, fs: FsOps = DEFAULT_FS) -> MailboxEntry:
    """Append a document id; safe under arbitrary cross-process concurrency.

    Duplicate enqueues of the same doc are allowed and yield distinct
    entries; consumers dedup through their knowledge store.
    """
    validate_doc_id(doc)
    if source is not None:
        validate_identifier(source, "enqueue source")
    entry = MailboxEntry(doc=doc, seq=_next_seq(), source=source)
    tmp_path = os.path.join(mbox.tmp, f"{os.getpid()}.{entry.filename}")
    inbox_dir = mbox.inbox if source is None else os.path.join(mbox.inbox, source)
    if source is not None:
        fs.mkdir(inbox_dir)
    fs.write_file(tmp_path, b"")
    fs.rename(tmp_path, os.path.join(inbox_dir, entry.filename))
    return entry


def _scan(dirpath: str) -> list[tuple[str, str | None]]:
    """All (entry-name, source) pairs under a mailbox state directory.

    Entry files always match ENTRY_RE and per-source subdirectories never
    do (they are agent names), so one scandir pass suffices; is_dir() runs
    only for the rare non-entry names and uses the cached dirent type.
    """
    found: list[tuple[str, str | None]] = []
    try:
        it = os.scandir(dirpath)
    except FileNotFoundError:
        return found
    with it:
        for de in it:
            if ENTRY_RE.match(de.name):
                found.append((de.name, None))
            elif de.is_dir(follow_symlinks=False):
                for sub in os.listdir(de.path):
                    if ENTRY_RE.match(sub):
                        found.append((sub, de.name))
    return found


def _state_path(mbox: MailboxRef, state_dir: str, entry: MailboxEntry) -> str:
    if entry.source is None:
        return os.path.join(state_dir, entry.filename)
    return os.path.join(state_dir, entry.source, entry.filename)


def claim_next(mbox: MailboxRef, fs: FsOps = DEFAULT_FS) -> MailboxEntry | None:
    """Move the lexicographically smallest inbox entry into working/ and return it."""
    while True:
        candidates = _scan(mbox.inbox)
        if not candidates:
            return None
        name, source = min(candidates, key=lambda t: (t[0], t[1] or ""))
        entry = _parse_entry_name(name, source)
        assert entry is not None
        if source is not None:
            fs.mkdir(os.path.join(mbox.working, source))
        try:
            fs.rename(_state_path(mbox, mbox.inbox, entry), _state_path(mbox, mbox.working, entry))
        except FileNotFoundError:
            continue  # lost a race with a concurrent administrative move; rescan
        return entry


def ack(mbox: MailboxRef, entry: MailboxEntry, fs: FsOps = DEFAULT_FS) -> None:
    """Delete a claimed entry: this mailbox is done with the document."""
    try:
        fs.unlink(_state_path(mbox, mbox.working, entry))
    except FileNotFoundError:
        raise NotClaimed(f"entry {entry.filename} is not in working/") from None


def nack(mbox: MailboxRef, entry: MailboxEntry, fs: FsOps = DEFAULT_FS) -> MailboxEntry:
    """Return a claimed entry to the back of the queue under a fresh seq key.

    Requeueing to the back keeps one poisoned document from starving the
    rest of the flow.
    """
    fresh = MailboxEntry(doc=entry.doc, seq=_next_seq(), source=entry.source)
    try:
        fs.rename(_state_path(mbox, mbox.working, entry), _state_path(mbox, mbox.inbox, fresh))
    except FileNotFoundError:
        raise NotClaimed(f"entry {entry.filename} is not in working/") from None
    return fresh


def recover(mbox: MailboxRef, fs: FsOps = DEFAULT_FS, tmp_gc_age_s: float = 60.0) -> list[MailboxEntry]:
    """Return orphaned working/ entries to the inbox, preserving seq keys.

    Called once at agent activation, before polling starts: whatever the
    previous instance had claimed when it died runs again, ahead of
    anything enqueued since.
    """
    recovered = []
    for name, source in sorted(_scan(mbox.working)):
        entry = _parse_entry_name(name, source)
        assert entry is not None
        if source is not None:
            fs.mkdir(os.path.join(mbox.inbox, source))
        fs.rename(_state_path(mbox, mbox.working, entry), _state_path(mbox, mbox.inbox, entry))
        recovered.append(entry)
    _gc_tmp(mbox, fs, tmp_gc_age_s)
    return recovered


def depth(mbox: MailboxRef) -> dict[str, int]:
    """Point-in-time {inbox, working} counts from a single directory scan."""
    return {"inbox": len(_scan(mbox.inbox)), "working": len(_scan(mbox.working))}
