"""Minimal HTTP/1.1 JSON search endpoint over shared read-only models."""

from __future__ import annotations

import json
import logging
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from urllib.parse import parse_qs, urlsplit

from .app import result_payload
from .cascade import CascadeConfig, Engine, search
from .errors import EmptyAfterTokenize

log = logging.getLogger(__name__)

DEFAULT_LIMIT = 10


def make_handler(engine: Engine, cascade: CascadeConfig):
    class SearchHandler(BaseHTTPRequestHandler):
        protocol_version = "HTTP/1.1"

        def log_message(self, fmt, *args):
            log.debug("%s - %s", self.address_string(), fmt % args)

        def _send(self, status: int, body: bytes, content_type: str) -> None:
            self.send_response(status)
            self.send_header("Content-Type", content_type)
            self.send_header("Content-Length", str(len(body)))
            self.end_headers()
            self.wfile.write(body)

        def _json(self, status: int, obj) -> None:
            self._send(status, json.dumps(obj).encode("utf-8"), "application/json")

        def do_GET(self):
            url = urlsplit(self.path)
            if url.path == "/healthz":
                return self._send(200, b"ok", "text/plain; charset=utf-8")
            if url.path != "/search":
                return self._json(404, {"error": f"no route {url.path}"})
            params = parse_qs(url.query, keep_blank_values=True)
            if not params.get("q") or not params["q"][0].strip():
                return self._json(400, {"error": "missing query parameter q"})
            try:
                k = int(params["k"][0]) if "k" in params else cascade.k
                limit = int(params["n"][0]) if "n" in params else DEFAULT_LIMIT
            except ValueError:
                return self._json(400, {"error": "k and n must be integers"})
            if k < 0 or limit < 1:
                return self._json(400, {"error": "k must be >= 0 and n >= 1"})
            query = params["q"][0]
            try:
                result = search(query, engine, CascadeConfig(k=k, fusion=cascade.fusion), limit=limit)
            except EmptyAfterTokenize as exc:
                return self._json(400, {"error": str(exc)})
            except Exception as exc:  # reported to the client, server keeps running
                log.exception("search failed")
                return self._json(500, {"error": f"{type(exc).__name__}: {exc}"})
            self._json(200, result_payload(query, result))

    return SearchHandler


def make_server(engine: Engine, cascade: CascadeConfig, host: str = "127.0.0.1", port: int = 8765) -> ThreadingHTTPServer:
    server = ThreadingHTTPServer((host, port), make_handler(engine, cascade))
    server.daemon_threads = True
    return server


def serve_in_thread(engine: Engine, cascade: CascadeConfig, host: str = "127.0.0.1", port: int = 0):
    """Start a server on a background thread; returns ``(server, thread)``. Port 0 picks a free port."""
    server = make_server(engine, cascade, host, port)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    return server, thread
