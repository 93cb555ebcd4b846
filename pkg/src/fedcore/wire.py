"""Newline-delimited JSON RPC over stream sockets.

One request per line: ``{"id": n, "method": "...", "params": {...}}``;
one response per line: ``{"id": n, "result": ...}`` or
``{"id": n, "error": {"code": ..., "message": ...}}``.  A malformed line
yields an error response with id 0 and the connection stays open.
"""

from __future__ import annotations

import json
import socket
import socketserver
import threading
from typing import Callable

from .errors import CoreError
from .model import canonical_dumps

Handler = Callable[[str, dict], object]


def encode_response(req_id, result=None, error: dict | None = None) -> bytes:
    body: dict = {"id": req_id}
    if error is not None:
        body["error"] = error
    else:
        body["result"] = result
    return canonical_dumps(body).encode() + b"\n"


def dispatch_line(line: bytes, handler: Handler) -> bytes:
    """Run one request line through ``handler`` and frame the response."""
    try:
        req = json.loads(line)
    except ValueError:
        return encode_response(0, error={"code": 400, "message": "malformed request line"})
    if not isinstance(req, dict) or "method" not in req:
        return encode_response(
            req.get("id", 0) if isinstance(req, dict) else 0,
            error={"code": 400, "message": "request must carry id and method"},
        )
    req_id = req.get("id", 0)
    params = req.get("params") or {}
    if not isinstance(params, dict):
        return encode_response(req_id, error={"code": 400, "message": "params must be an object"})
    try:
        result = handler(req["method"], params)
    except CoreError as e:
        return encode_response(req_id, error=e.envelope())
    except Exception as e:  # survivable internal failure
        return encode_response(req_id, error={"code": 500, "message": f"internal: {e}"})
    return encode_response(req_id, result=result)


class RpcServer:
    """Threaded TCP server speaking the line protocol for one handler."""

    def __init__(self, handler: Handler, host: str = "127.0.0.1", port: int = 0):
        outer = self

        class _Conn(socketserver.StreamRequestHandler):
            def handle(self):
                while True:
                    line = self.rfile.readline()
                    if not line:
                        return
                    if not line.strip():
                        continue
                    self.wfile.write(dispatch_line(line, outer._handler))
                    self.wfile.flush()

        class _Server(socketserver.ThreadingTCPServer):
            allow_reuse_address = True
            daemon_threads = True

        self._handler = handler
        self._server = _Server((host, port), _Conn)
        self._thread = threading.Thread(target=self._server.serve_forever, daemon=True)

    @property
    def address(self) -> str:
        host, port = self._server.server_address[:2]
        return f"{host}:{port}"

    def start(self) -> "RpcServer":
        self._thread.start()
        return self

    def stop(self) -> None:
        self._server.shutdown()
        self._server.server_close()


class RpcClient:
    """Blocking line-protocol client; one in-flight request at a time."""

    def __init__(self, address: str, timeout: float = 10.0):
        host, port = address.rsplit(":", 1)
        self._sock = socket.create_connection((host, int(port)), timeout=timeout)
        self._rfile = self._sock.makefile("rb")
        self._lock = threading.Lock()
        self._next_id = 0

    def call(self, method: str, params: dict | None = None):
        with self._lock:
            self._next_id += 1
            req = {"id": self._next_id, "method": method, "params": params or {}}
            self._sock.sendall(canonical_dumps(req).encode() + b"\n")
            line = self._rfile.readline()
        if not line:
            raise ConnectionError("connection closed by peer")
        resp = json.loads(line)
        if "error" in resp:
            err = resp["error"]
            exc = CoreError(err.get("message", "remote error"), err.get("data"))
            exc.code = err.get("code", 500)
            raise exc
        return resp.get("result")

    def close(self) -> None:
        self._sock.close()
