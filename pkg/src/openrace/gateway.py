"""Browser gateway: static console assets plus a /ws binary bridge.

The bridge is intentionally dumb: each WebSocket binary message carries one
wire frame verbatim (magic, CRC and all) in each direction, so the browser
console speaks exactly the same protocol as native clients and the framing
code has a single source of truth.  The WebSocket layer implements the
RFC 6455 subset needed here: HTTP upgrade, masked client frames, binary
server frames, ping/pong and close.
"""

from __future__ import annotations

import base64
import hashlib
import socket
import struct
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path

from . import wire

WS_GUID = "258EAFA5-E914-47DA-95CA-C5AB0DC85B11"

_CONTENT_TYPES = {
    ".html": "text/html; charset=utf-8",
    ".js": "text/javascript; charset=utf-8",
    ".mjs": "text/javascript; charset=utf-8",
    ".css": "text/css; charset=utf-8",
    ".json": "application/json",
    ".png": "image/png",
    ".svg": "image/svg+xml",
    ".map": "application/json",
}


def default_console_root() -> Path | None:
    """Locate built console assets next to the repository, if present."""
    here = Path(__file__).resolve()
    for base in [here.parent.parent.parent, *here.parents]:
        candidate = base / "frontend" / "dist"
        if (candidate / "index.html").exists():
            return candidate
    return None


class WebSocketConnection:
    """One upgraded connection; send/recv of complete messages."""

    def __init__(self, sock: socket.socket):
        self.sock = sock
        self._buf = bytearray()
        self._lock = threading.Lock()
        self.open = True

    def _read_exact(self, n: int) -> bytes:
        while len(self._buf) < n:
            data = self.sock.recv(65536)
            if not data:
                raise ConnectionError("websocket peer closed")
            self._buf.extend(data)
        out = bytes(self._buf[:n])
        del self._buf[:n]
        return out

    def recv_message(self) -> tuple[int, bytes]:
        """Returns (opcode, payload) of the next complete message."""
        payload = bytearray()
        opcode = None
        while True:
            b0, b1 = self._read_exact(2)
            fin = b0 & 0x80
            op = b0 & 0x0F
            masked = b1 & 0x80
            length = b1 & 0x7F
            if length == 126:
                (length,) = struct.unpack("!H", self._read_exact(2))
            elif length == 127:
                (length,) = struct.unpack("!Q", self._read_exact(8))
            mask = self._read_exact(4) if masked else b"\x00" * 4
            data = bytearray(self._read_exact(length))
            if masked:
                for i in range(length):
                    data[i] ^= mask[i % 4]
            if op == 0x9:  # ping -> pong, keep reading
                self.send_raw(0xA, bytes(data))
                continue
            if op == 0x8:
                self.open = False
                raise ConnectionError("websocket close")
            if op != 0:
                opcode = op
            payload.extend(data)
            if fin:
                return opcode or 0x2, bytes(payload)

    def send_raw(self, opcode: int, payload: bytes) -> None:
        header = bytearray([0x80 | opcode])
        n = len(payload)
        if n < 126:
            header.append(n)
        elif n < 1 << 16:
            header.append(126)
            header += struct.pack("!H", n)
        else:
            header.append(127)
            header += struct.pack("!Q", n)
        with self._lock:
            self.sock.sendall(bytes(header) + payload)

    def send_binary(self, payload: bytes) -> None:
        self.send_raw(0x2, payload)

    def close(self) -> None:
        if self.open:
            self.open = False
            try:
                self.send_raw(0x8, b"")
            except OSError:
                pass
        try:
            self.sock.close()
        except OSError:
            pass


def websocket_accept_key(client_key: str) -> str:
    digest = hashlib.sha1((client_key + WS_GUID).encode()).digest()
    return base64.b64encode(digest).decode()


class ConsoleGateway:
    """HTTP server hosting the console plus the /ws wire bridge."""

    def __init__(
        self,
        sim_host: str,
        sim_port: int,
        gateway_host: str = "127.0.0.1",
        gateway_port: int = 0,
        console_root: Path | None = None,
    ):
        self.sim_host = sim_host
        self.sim_port = sim_port
        self.console_root = console_root if console_root is not None else default_console_root()
        gateway = self

        class Handler(BaseHTTPRequestHandler):
            protocol_version = "HTTP/1.1"

            def log_message(self, fmt, *args):  # quiet
                pass

            def do_GET(self):
                if self.path == "/ws":
                    gateway._handle_ws(self)
                    return
                gateway._serve_static(self)

        self._httpd = ThreadingHTTPServer((gateway_host, gateway_port), Handler)
        self._httpd.daemon_threads = True
        self.port = self._httpd.server_port
        self._thread: threading.Thread | None = None

    def start(self) -> "ConsoleGateway":
        self._thread = threading.Thread(
            target=self._httpd.serve_forever, daemon=True, name="openrace-gateway"
        )
        self._thread.start()
        return self

    def stop(self) -> None:
        self._httpd.shutdown()

    # -- static assets ------------------------------------------------------------

    def _serve_static(self, request: BaseHTTPRequestHandler) -> None:
        root = self.console_root
        if root is None:
            body = (
                b"openrace gateway: console assets not built "
                b"(run npm run build under frontend/); /ws is live."
            )
            request.send_response(200)
            request.send_header("Content-Type", "text/plain")
            request.send_header("Content-Length", str(len(body)))
            request.end_headers()
            request.wfile.write(body)
            return
        rel = request.path.lstrip("/") or "index.html"
        target = (root / rel).resolve()
        if not str(target).startswith(str(root.resolve())) or not target.is_file():
            request.send_response(404)
            request.send_header("Content-Length", "9")
            request.end_headers()
            request.wfile.write(b"not found")
            return
        body = target.read_bytes()
        request.send_response(200)
        request.send_header(
            "Content-Type", _CONTENT_TYPES.get(target.suffix, "application/octet-stream")
        )
        request.send_header("Content-Length", str(len(body)))
        request.end_headers()
        request.wfile.write(body)

    # -- websocket bridge -----------------------------------------------------------

    def _handle_ws(self, request: BaseHTTPRequestHandler) -> None:
        key = request.headers.get("Sec-WebSocket-Key")
        if request.headers.get("Upgrade", "").lower() != "websocket" or not key:
            request.send_response(400)
            request.end_headers()
            return
        request.send_response(101, "Switching Protocols")
        request.send_header("Upgrade", "websocket")
        request.send_header("Connection", "Upgrade")
        request.send_header("Sec-WebSocket-Accept", websocket_accept_key(key))
        request.end_headers()
        request.wfile.flush()

        ws = WebSocketConnection(request.connection)
        try:
            sim = socket.create_connection((self.sim_host, self.sim_port), timeout=10)
            sim.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
        except OSError:
            ws.close()
            return

        def sim_to_ws():
            buf = bytearray()
            try:
                while ws.open:
                    data = sim.recv(1 << 16)
                    if not data:
                        break
                    buf.extend(data)
                    while True:
                        size = wire.frame_size(bytes(buf[: wire.HEADER.size]))
                        if size is None or len(buf) < size:
                            break
                        ws.send_binary(bytes(buf[:size]))
                        del buf[:size]
            except (OSError, ConnectionError, wire.WireError):
                pass
            finally:
                ws.close()

        pump = threading.Thread(target=sim_to_ws, daemon=True, name="gateway-pump")
        pump.start()
        try:
            while True:
                opcode, payload = ws.recv_message()
                if opcode == 0x2 and payload:
                    sim.sendall(payload)
        except (OSError, ConnectionError):
            pass
        finally:
            try:
                sim.close()
            except OSError:
                pass
            ws.close()
            pump.join(timeout=2.0)
