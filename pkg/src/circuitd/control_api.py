"""HTTP/JSON control plane over a deployment.

Plain stdlib HTTP: read endpoints are side-effect-free directory reads,
mutating endpoints delegate to the supervisor operations and are
serialized per agent so racing start/stop requests resolve
deterministically. The dashboard is served as static assets under /ui/.

    GET  /status
    GET  /circuit
    GET  /agents/{name}
    POST /agents/{name}/start
    POST /agents/{name}/stop?mode=graceful|kill
    GET  /agents/{name}/deadletter
    POST /agents/{name}/deadletter/{doc}/retry
    POST /ingest?root={name}            body = payload, response = doc id
    GET  /agents/{name}/knowledge/{doc}/{format}
"""

from __future__ import annotations

import json
import os
import re
import threading
from collections import defaultdict
from dataclasses import asdict
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from urllib.parse import urlparse, parse_qs

from . import home as h
from . import supervisor as sv
from .circuit import serialize_circuit
from .errors import BindError, DuplicateDocId, NoSuchDeadLetter, SpawnError, UnknownAgent

_CONTENT_TYPES = {
    ".html": "text/html; charset=utf-8",
    ".js": "text/javascript; charset=utf-8",
    ".css": "text/css; charset=utf-8",
    ".map": "application/json",
    ".svg": "image/svg+xml",
    ".json": "application/json",
}

_FALLBACK_UI = b"""<!doctype html>
<html><body><h1>circuitd</h1>
<p>No dashboard assets found. Build the frontend (see README) and serve with
--ui-dir, or browse the JSON API at <a href="/status">/status</a>.</p>
</body></html>
"""


class ControlApi:
    def __init__(self, manifest: sv.DeploymentManifest, ui_dir: str | None = None):
        self.manifest = manifest
        self.ui_dir = ui_dir
        self._agent_locks: dict[str, threading.Lock] = defaultdict(threading.Lock)
        self._locks_guard = threading.Lock()

    def agent_lock(self, name: str) -> threading.Lock:
        with self._locks_guard:
            return self._agent_locks[name]

    def serve(self, host: str, port: int) -> ThreadingHTTPServer:
        """Bind and start serving on a background thread; returns the server."""
        api = self

        class Handler(BaseHTTPRequestHandler):
            def log_message(self, fmt, *args):
                pass  # the control plane stays quiet; agents own the logs

            def _send(self, code: int, body: bytes, content_type: str = "application/json"):
                self.send_response(code)
                self.send_header("Content-Type", content_type)
                self.send_header("Content-Length", str(len(body)))
                self.send_header("Access-Control-Allow-Origin", "*")
                self.end_headers()
                self.wfile.write(body)

            def _json(self, code: int, obj):
                self._send(code, json.dumps(obj).encode("utf-8"))

            def _error(self, code: int, message: str):
                self._json(code, {"error": message})

            def do_GET(self):
                try:
                    api._get(self)
                except (UnknownAgent, FileNotFoundError) as e:
                    self._error(404, str(e))
                except Exception as e:  # surface, don't kill the server
                    self._error(500, f"{type(e).__name__}: {e}")

            def do_POST(self):
                try:
                    api._post(self)
                except UnknownAgent as e:
                    self._error(404, str(e))
                except NoSuchDeadLetter as e:
                    self._error(404, str(e))
                except DuplicateDocId as e:
                    self._error(409, str(e))
                except SpawnError as e:
                    self._error(500, str(e))
                except Exception as e:
                    self._error(500, f"{type(e).__name__}: {e}")

        try:
            server = ThreadingHTTPServer((host, port), Handler)
        except OSError as e:
            raise BindError(f"cannot bind {host}:{port}: {e}") from e
        thread = threading.Thread(target=server.serve_forever, daemon=True)
        thread.start()
        return server

    # -- request handling -------------------------------------------------

    def _get(self, req) -> None:
        url = urlparse(req.path)
        path = url.path

        if path == "/status":
            snaps = [s.to_dict() for s in sv.status(self.manifest)]
            req._json(200, snaps)
            return
        if path == "/circuit":
            doc = json.loads(serialize_circuit(self.manifest.circuit))
            doc["version"] = self.manifest.version
            req._json(200, doc)
            return

        m = re.fullmatch(r"/agents/([^/]+)", path)
        if m:
            req._json(200, sv.agent_status(self.manifest, m.group(1)).to_dict())
            return

        m = re.fullmatch(r"/agents/([^/]+)/deadletter", path)
        if m:
            self.manifest.circuit.agent(m.group(1))
            home = h.open_home(self.manifest.deploy_root, m.group(1))
            letters = []
            for dl in h.list_dead_letters(home):
                obj = asdict(dl)
                obj["failed_at"] = h.rfc3339(dl.failed_at)
                obj["inputs_snapshot"] = [list(p) for p in dl.inputs_snapshot]
                letters.append(obj)
            req._json(200, letters)
            return

        m = re.fullmatch(r"/agents/([^/]+)/knowledge/([^/]+)/([^/]+)", path)
        if m:
            name, doc, fmt = m.groups()
            self.manifest.circuit.agent(name)
            rec = h.get_knowledge(h.open_home(self.manifest.deploy_root, name), doc, fmt)
            if rec is None:
                req._error(404, f"no knowledge {doc}.{fmt} at '{name}'")
                return
            req._send(200, rec.payload, "application/octet-stream")
            return

        if path == "/" or path == "/ui" or path.startswith("/ui/"):
            self._serve_ui(req, path)
            return
        req._error(404, f"no such endpoint: {path}")

    def _post(self, req) -> None:
        url = urlparse(req.path)
        path = url.path
        query = parse_qs(url.query)

        m = re.fullmatch(r"/agents/([^/]+)/start", path)
        if m:
            name = m.group(1)
            with self.agent_lock(name):
                pid = sv.start_agent(self.manifest, name)
            req._json(200, {"agent": name, "pid": pid})
            return

        m = re.fullmatch(r"/agents/([^/]+)/stop", path)
        if m:
            name = m.group(1)
            mode = query.get("mode", ["graceful"])[0]
            if mode not in ("graceful", "kill"):
                req._error(400, f"bad mode '{mode}'")
                return
            with self.agent_lock(name):
                stopped = sv.stop_agent(self.manifest, name, mode=mode)
            req._json(200, {"agent": name, "stopped": stopped})
            return

        m = re.fullmatch(r"/agents/([^/]+)/deadletter/([^/]+)/retry", path)
        if m:
            name, doc = m.groups()
            with self.agent_lock(name):
                sv.retry_dead_letter(self.manifest, name, doc)
            req._json(200, {"agent": name, "doc": doc, "retried": True})
            return

        if path == "/ingest":
            root = query.get("root", [None])[0]
            if not root:
                req._error(400, "missing root query parameter")
                return
            length = int(req.headers.get("Content-Length", "0"))
            payload = req.rfile.read(length)
            doc = sv.ingest(self.manifest, root, payload)
            req._send(200, doc.encode("utf-8"), "text/plain; charset=utf-8")
            return
        req._error(404, f"no such endpoint: {path}")

    def _serve_ui(self, req, path: str) -> None:
        rel = path[len("/ui/"):] if path.startswith("/ui/") else ""
        if rel in ("", "/"):
            rel = "index.html"
        if self.ui_dir is None:
            req._send(200, _FALLBACK_UI, "text/html; charset=utf-8")
            return
        full = os.path.normpath(os.path.join(self.ui_dir, rel))
        if not full.startswith(os.path.normpath(self.ui_dir) + os.sep):
            req._error(403, "path escapes ui dir")
            return
        try:
            with open(full, "rb") as f:
                body = f.read()
        except (FileNotFoundError, IsADirectoryError):
            req._error(404, f"no ui asset {rel}")
            return
        ext = os.path.splitext(full)[1]
        req._send(200, body, _CONTENT_TYPES.get(ext, "application/octet-stream"))


def serve_control_api(
    manifest: sv.DeploymentManifest,
    bind: str = "127.0.0.1:8765",
    ui_dir: str | None = None,
) -> ThreadingHTTPServer:
    host, _, port = bind.rpartition(":")
    return ControlApi(manifest, ui_dir=ui_dir).serve(host or "127.0.0.1", int(port))
