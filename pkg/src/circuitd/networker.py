"""Cross-deployment document transfer with a store-then-marker discipline.

A networker-send agent packs one document's shipped knowledge records
into a self-contained bundle and delivers it through a transport; the
matching networker-receive agent unpacks committed bundles into its local
deployment and forwards the document id downstream. The commit rule is
the whole protocol: the body travels under a temporary name and only a
zero-length marker (or rename) makes it visible, so a receiver can never
observe a partial bundle, whatever happens to the transport mid-transfer.

Two transports ship: `dir` (a shared spool directory, also the test
workhorse) and `tcp` (length-prefixed frames into a remote spool). Real
FTP wire conformance is out of scope; the store-then-marker discipline is
the part that matters.

Bundle wire format (bit-exact):

    TLB1 <doc> <n-records> <checksum-hex16>\n
    REC <agent> <format> <byte-length>\n
    <payload bytes>\n
    ... one REC section per record ...

The checksum is 64-bit FNV-1a over everything after the header line.
"""

from __future__ import annotations

import os
import secrets
import socket
import socketserver
import threading
import time
from dataclasses import dataclass

from . import home as h
from .circuit import IDENTIFIER_RE
from .context import AgentContext
from .errors import ChecksumMismatch, MissingInput, TransportError
from .mailbox import MailboxEntry
from .transistors import fnv1a64


@dataclass(frozen=True)
class TransferBundle:
    doc: str
    records: tuple[h.KnowledgeRecord, ...] = ()

    def serialize(self) -> bytes:
        body = bytearray()
        for rec in self.records:
            body += f"REC {rec.agent} {rec.format} {len(rec.payload)}\n".encode("ascii")
            body += rec.payload
            body += b"\n"
        checksum = fnv1a64(bytes(body))
        header = f"TLB1 {self.doc} {len(self.records)} {checksum:016x}\n".encode("ascii")
        return header + bytes(body)


def parse_bundle(data: bytes) -> TransferBundle:
    """Parse and checksum-verify a serialized bundle."""
    nl = data.find(b"\n")
    if nl < 0:
        raise ChecksumMismatch("truncated bundle: no header line")
    header = data[:nl].decode("ascii", errors="replace").split(" ")
    if len(header) != 4 or header[0] != "TLB1":
        raise ChecksumMismatch(f"bad bundle header: {header!r}")
    try:
        doc, n_records, checksum = header[1], int(header[2]), int(header[3], 16)
    except ValueError:
        raise ChecksumMismatch(f"unparseable bundle header: {header!r}") from None
    body = data[nl + 1:]
    if fnv1a64(body) != checksum:
        raise ChecksumMismatch(f"bundle for doc {doc}: body checksum mismatch")

    records = []
    pos = 0
    for _ in range(n_records):
        rec_nl = body.find(b"\n", pos)
        if rec_nl < 0:
            raise ChecksumMismatch("truncated record header")
        parts = body[pos:rec_nl].decode("ascii", errors="replace").split(" ")
        if len(parts) != 4 or parts[0] != "REC":
            raise ChecksumMismatch(f"bad record header: {parts!r}")
        try:
            length = int(parts[3])
        except ValueError:
            raise ChecksumMismatch(f"unparseable record header: {parts!r}") from None
        agent, fmt = parts[1], parts[2]
        start = rec_nl + 1
        payload = body[start:start + length]
        if len(payload) != length or body[start + length:start + length + 1] != b"\n":
            raise ChecksumMismatch("truncated record payload")
        records.append(h.KnowledgeRecord(agent=agent, doc=doc, format=fmt, payload=payload))
        pos = start + length + 1
    if pos != len(body):
        raise ChecksumMismatch(f"bundle for doc {doc}: {len(body) - pos} trailing bytes")
    for name in [doc] + [x for r in records for x in (r.agent, r.format)]:
        if not IDENTIFIER_RE.match(name):
            raise ChecksumMismatch(f"bundle carries invalid identifier {name!r}")
    return TransferBundle(doc=doc, records=tuple(records))


# -- transports -----------------------------------------------------------------

class DirTransport:
    """Shared spool directory: both halves see the same files.

    Sender side: upload body under spool/tmp, rename to <name>.tlb, then
    create the zero-length <name>.tlb.ok marker. Receiver side: consume
    only marker-committed bundles; a checksum reject leaves a note the
    sender polls so it can retry the document.
    """

    def __init__(self, path: str):
        self.path = path
        os.makedirs(os.path.join(path, "tmp"), exist_ok=True)
        os.makedirs(os.path.join(path, "rejects"), exist_ok=True)

    # sender half

    def send(self, name: str, body: bytes) -> None:
        tmp = os.path.join(self.path, "tmp", f"{name}.{os.getpid()}.part")
        final = os.path.join(self.path, f"{name}.tlb")
        try:
            with open(tmp, "wb") as f:
                f.write(body)
                f.flush()
                os.fsync(f.fileno())
            os.replace(tmp, final)
            with open(final + ".ok", "wb"):
                pass
        except OSError as e:
            raise TransportError(f"spool write failed: {e}") from e

    def poll_rejected_docs(self) -> list[str]:
        rejects_dir = os.path.join(self.path, "rejects")
        docs = []
        for name in sorted(os.listdir(rejects_dir)):
            full = os.path.join(rejects_dir, name)
            try:
                with open(full, encoding="utf-8") as f:
                    docs.append(f.read().strip())
                os.unlink(full)
            except OSError:
                continue
        return docs

    # receiver half

    def poll_committed(self) -> str | None:
        try:
            names = sorted(os.listdir(self.path))
        except FileNotFoundError:
            return None
        for name in names:
            if not name.endswith(".tlb.ok"):
                continue
            bundle = name[: -len(".ok")]
            if os.path.exists(os.path.join(self.path, bundle)):
                return bundle
            os.unlink(os.path.join(self.path, name))  # orphaned marker
        return None

    def read(self, bundle: str) -> bytes:
        with open(os.path.join(self.path, bundle), "rb") as f:
            return f.read()

    def consume(self, bundle: str) -> None:
        for name in (bundle, bundle + ".ok"):
            try:
                os.unlink(os.path.join(self.path, name))
            except FileNotFoundError:
                pass

    def reject(self, bundle: str, doc: str) -> None:
        tmp = os.path.join(self.path, "tmp", f".rej.{bundle}")
        with open(tmp, "w", encoding="utf-8") as f:
            f.write(doc + "\n")
        os.replace(tmp, os.path.join(self.path, "rejects", f"{bundle}.rej"))
        self.consume(bundle)

    def close(self) -> None:
        pass


def _recv_exact(sock: socket.socket, n: int) -> bytes:
    buf = bytearray()
    while len(buf) < n:
        chunk = sock.recv(n - len(buf))
        if not chunk:
            raise ConnectionError("peer closed mid-frame")
        buf += chunk
    return bytes(buf)


def _recv_frame(sock: socket.socket, limit: int = 256 * 1024 * 1024) -> bytes:
    length = int.from_bytes(_recv_exact(sock, 8), "big")
    if length > limit:
        raise ConnectionError(f"frame of {length} bytes exceeds limit")
    return _recv_exact(sock, length)


def _send_frame(sock: socket.socket, data: bytes) -> None:
    sock.sendall(len(data).to_bytes(8, "big") + data)


class TcpSender:
    """Sender half of the tcp transport: one connection per bundle.

    The receiver verifies the checksum before committing and answers one
    status byte; anything but an explicit accept is a retriable failure.
    """

    def __init__(self, host: str, port: int, timeout_s: float = 10.0):
        self.host = host
        self.port = port
        self.timeout_s = timeout_s

    def send(self, name: str, body: bytes) -> None:
        try:
            with socket.create_connection((self.host, self.port), timeout=self.timeout_s) as sock:
                _send_frame(sock, name.encode("utf-8"))
                _send_frame(sock, body)
                status = _recv_exact(sock, 1)
        except OSError as e:
            raise TransportError(f"tcp send failed: {e}") from e
        if status != b"K":
            raise TransportError(f"receiver refused bundle {name}")

    def poll_rejected_docs(self) -> list[str]:
        return []  # tcp rejects surface synchronously via the status byte

    def close(self) -> None:
        pass


class TcpReceiver:
    """Receiver half of the tcp transport: frames land in a local spool.

    The listener thread stores each verified bundle with the same
    store-then-marker discipline, so the consuming loop sees exactly the
    dir-transport interface over the local spool.
    """

    def __init__(self, host: str, port: int, spool_dir: str):
        self.spool = DirTransport(spool_dir)
        outer = self

        class Handler(socketserver.BaseRequestHandler):
            def handle(self):
                try:
                    name = _recv_frame(self.request, limit=4096).decode("utf-8")
                    body = _recv_frame(self.request)
                    parse_bundle(body)  # checksum gate before commit
                    outer.spool.send(name, body)
                    self.request.sendall(b"K")
                except (ChecksumMismatch, ConnectionError, OSError, ValueError):
                    try:
                        self.request.sendall(b"R")
                    except OSError:
                        pass

        class Server(socketserver.ThreadingTCPServer):
            allow_reuse_address = True
            daemon_threads = True

        self.server = Server((host, port), Handler)
        self.port = self.server.server_address[1]
        self.thread = threading.Thread(target=self.server.serve_forever, daemon=True)
        self.thread.start()

    def poll_committed(self) -> str | None:
        return self.spool.poll_committed()

    def read(self, bundle: str) -> bytes:
        return self.spool.read(bundle)

    def consume(self, bundle: str) -> None:
        self.spool.consume(bundle)

    def reject(self, bundle: str, doc: str) -> None:
        self.spool.reject(bundle, doc)

    def close(self) -> None:
        self.server.shutdown()
        self.server.server_close()


def sender_transport(params: dict, ctx: AgentContext):
    cfg = params["transport"]
    if cfg["kind"] == "dir":
        return DirTransport(cfg["path"])
    return TcpSender(cfg["host"], cfg["port"])


def receiver_transport(params: dict, ctx: AgentContext):
    cfg = params["transport"]
    if cfg["kind"] == "dir":
        return DirTransport(cfg["path"])
    spool = cfg.get("spool") or ctx.home.path("spool")
    return TcpReceiver(cfg["host"], cfg["port"], spool)


# -- agent steps -----------------------------------------------------------------

def networker_send(ctx: AgentContext, entry: MailboxEntry, transport) -> str:
    """Ship one document's configured knowledge records across the boundary."""
    doc = entry.doc
    records = []
    for ref in ctx.agent.params.get("formats", []):
        rec = h.get_knowledge(ctx.home_of(ref["agent"]), doc, ref["format"])
        if rec is None:
            raise MissingInput(f"{{in:{ref['agent']}.{ref['format']}}}")
        records.append(rec)
    bundle = TransferBundle(doc=doc, records=tuple(records))
    name = f"{doc}.{secrets.token_hex(4)}"
    transport.send(name, bundle.serialize())  # may raise TransportError
    h.append_log(ctx.home, "transfers.log", {"doc": doc, "bundle": name, "event": "sent"})
    ctx.complete(entry)
    return "done"


def networker_receive_one(ctx: AgentContext, transport) -> tuple[str, str | None]:
    """Consume one committed bundle, if any; returns (status, doc).

    status is one of "empty", "received", "rejected". Unpacking is
    idempotent: records overwrite identically and duplicate downstream
    enqueues are absorbed by knowledge-store dedup, so a redelivered
    bundle is harmless.
    """
    name = transport.poll_committed()
    if name is None:
        return "empty", None
    base = name[: -len(".tlb")] if name.endswith(".tlb") else name
    doc_from_name = base.rsplit(".", 1)[0]
    data = transport.read(name)
    try:
        bundle = parse_bundle(data)
        # The name carries the doc id outside the body, so header corruption
        # (which the body checksum cannot see) still gets caught here.
        if doc_from_name != bundle.doc:
            raise ChecksumMismatch(
                f"bundle name {name} does not match header doc {bundle.doc}")
    except ChecksumMismatch as e:
        h.append_log(ctx.home, "transfers.log", {
            "bundle": name, "event": "rejected", "error": str(e),
        })
        transport.reject(name, doc_from_name)
        return "rejected", doc_from_name
    for rec in bundle.records:
        target = h.init_home(ctx.deploy_root, rec.agent)
        h.put_knowledge(target, rec)
    ctx.route(bundle.doc)
    h.append_log(ctx.home, "transfers.log", {
        "doc": bundle.doc, "bundle": name, "event": "received",
    })
    h.append_log(ctx.home, "processed.log", {
        "doc": bundle.doc, "at": h.rfc3339(time.time()),
    })
    transport.consume(name)
    return "received", bundle.doc
