"""Socket adapters for out-of-process renderers and embedders.

Real rendering or embedding models (a game-engine imitator, a pretrained
vision-language encoder) can be attached without touching the solver: run
them behind a local TCP endpoint speaking this protocol and hand the
client objects to the solver in place of the synthetic stack.

Wire protocol: each message is a 4-byte big-endian unsigned length
followed by that many bytes of UTF-8 JSON.  One request, one response,
connection reusable.

Requests (response on success mirrors the field named in parens):

    {"op": "render",            "values": [..]}                      (features)
    {"op": "render_vjp",        "values": [..], "upstream": [..]}    (gradient)
    {"op": "embed_text",        "text": ".."}                        (embedding)
    {"op": "embed_feature",     "features": [..]}                    (embedding)
    {"op": "embed_feature_vjp", "features": [..], "upstream": [..]}  (gradient)
    {"op": "info"}                           ({"feature_dim", "embed_dim"})

Responses carry {"ok": true, ...} or {"ok": false, "error": "..."}.
"""

from __future__ import annotations

import json
import socket
import socketserver
import struct
import threading

import numpy as np

from .semantic import EmbedderContract, RendererContract

_HEADER = struct.Struct(">I")
MAX_MESSAGE_BYTES = 64 * 1024 * 1024


class AdapterProtocolError(RuntimeError):
    """Raised when the remote endpoint violates the adapter protocol."""


def send_message(sock: socket.socket, payload: dict) -> None:
    blob = json.dumps(payload).encode()
    sock.sendall(_HEADER.pack(len(blob)) + blob)


def recv_message(sock: socket.socket) -> dict:
    header = _recv_exact(sock, _HEADER.size)
    (length,) = _HEADER.unpack(header)
    if length > MAX_MESSAGE_BYTES:
        raise AdapterProtocolError(f"message of {length} bytes exceeds limit")
    return json.loads(_recv_exact(sock, length).decode())


def _recv_exact(sock: socket.socket, n: int) -> bytes:
    chunks = []
    while n > 0:
        chunk = sock.recv(n)
        if not chunk:
            raise AdapterProtocolError("connection closed mid-message")
        chunks.append(chunk)
        n -= len(chunk)
    return b"".join(chunks)


class _AdapterConnection:
    """One persistent request/response connection with lazy connect."""

    def __init__(self, host: str, port: int, timeout: float = 10.0):
        self._address = (host, port)
        self._timeout = timeout
        self._sock: socket.socket | None = None
        self._lock = threading.Lock()

    def call(self, request: dict) -> dict:
        with self._lock:
            if self._sock is None:
                self._sock = socket.create_connection(self._address, timeout=self._timeout)
            try:
                send_message(self._sock, request)
                response = recv_message(self._sock)
            except OSError:
                self.close()
                raise
        if not response.get("ok"):
            raise AdapterProtocolError(response.get("error", "remote adapter error"))
        return response

    def close(self) -> None:
        if self._sock is not None:
            try:
                self._sock.close()
            finally:
                self._sock = None


class SocketRenderer:
    """RendererContract backed by a remote adapter endpoint."""

    def __init__(self, host: str, port: int, timeout: float = 10.0):
        self._conn = _AdapterConnection(host, port, timeout)
        self.feature_dim = int(self._conn.call({"op": "info"})["feature_dim"])

    def render(self, x: np.ndarray) -> np.ndarray:
        resp = self._conn.call({"op": "render", "values": np.asarray(x, dtype=float).tolist()})
        return np.asarray(resp["features"], dtype=float)

    def render_vjp(self, x: np.ndarray, upstream: np.ndarray) -> np.ndarray:
        resp = self._conn.call({
            "op": "render_vjp",
            "values": np.asarray(x, dtype=float).tolist(),
            "upstream": np.asarray(upstream, dtype=float).tolist(),
        })
        return np.asarray(resp["gradient"], dtype=float)

    def close(self) -> None:
        self._conn.close()


class SocketEmbedder:
    """EmbedderContract backed by a remote adapter endpoint."""

    def __init__(self, host: str, port: int, timeout: float = 10.0):
        self._conn = _AdapterConnection(host, port, timeout)
        self.embed_dim = int(self._conn.call({"op": "info"})["embed_dim"])

    def embed_text(self, text: str) -> np.ndarray:
        resp = self._conn.call({"op": "embed_text", "text": text})
        return np.asarray(resp["embedding"], dtype=float)

    def embed_feature(self, f: np.ndarray) -> np.ndarray:
        resp = self._conn.call({"op": "embed_feature", "features": np.asarray(f, dtype=float).tolist()})
        return np.asarray(resp["embedding"], dtype=float)

    def embed_feature_vjp(self, f: np.ndarray, upstream: np.ndarray) -> np.ndarray:
        resp = self._conn.call({
            "op": "embed_feature_vjp",
            "features": np.asarray(f, dtype=float).tolist(),
            "upstream": np.asarray(upstream, dtype=float).tolist(),
        })
        return np.asarray(resp["gradient"], dtype=float)

    def close(self) -> None:
        self._conn.close()


class AdapterServer:
    """Serves a renderer/embedder pair over the adapter protocol.

    Used in tests to exercise the socket path against the synthetic stack
    and as scaffolding for wrapping real models.
    """

    def __init__(self, renderer: RendererContract, embedder: EmbedderContract,
                 host: str = "127.0.0.1", port: int = 0):
        handlers = {
            "info": lambda req: {
                "feature_dim": renderer.feature_dim,
                "embed_dim": embedder.embed_dim,
            },
            "render": lambda req: {
                "features": renderer.render(np.asarray(req["values"], dtype=float)).tolist()
            },
            "render_vjp": lambda req: {
                "gradient": renderer.render_vjp(
                    np.asarray(req["values"], dtype=float),
                    np.asarray(req["upstream"], dtype=float),
                ).tolist()
            },
            "embed_text": lambda req: {
                "embedding": embedder.embed_text(req["text"]).tolist()
            },
            "embed_feature": lambda req: {
                "embedding": embedder.embed_feature(np.asarray(req["features"], dtype=float)).tolist()
            },
            "embed_feature_vjp": lambda req: {
                "gradient": embedder.embed_feature_vjp(
                    np.asarray(req["features"], dtype=float),
                    np.asarray(req["upstream"], dtype=float),
                ).tolist()
            },
        }

        class Handler(socketserver.BaseRequestHandler):
            def handle(self):
                while True:
                    try:
                        request = recv_message(self.request)
                    except (AdapterProtocolError, OSError):
                        return
                    try:
                        op = request.get("op")
                        if op not in handlers:
                            raise AdapterProtocolError(f"unknown op {op!r}")
                        response = {"ok": True, **handlers[op](request)}
                    except Exception as exc:  # report, keep serving
                        response = {"ok": False, "error": str(exc)}
                    try:
                        send_message(self.request, response)
                    except OSError:
                        return

        self._server = socketserver.ThreadingTCPServer((host, port), Handler)
        self._server.daemon_threads = True
        self._thread: threading.Thread | None = None

    @property
    def address(self) -> tuple[str, int]:
        return self._server.server_address[:2]

    def start(self) -> "AdapterServer":
        self._thread = threading.Thread(target=self._server.serve_forever, daemon=True)
        self._thread.start()
        return self

    def stop(self) -> None:
        self._server.shutdown()
        self._server.server_close()
        if self._thread is not None:
            self._thread.join(timeout=5)
