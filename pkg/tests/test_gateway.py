import base64
import hashlib
import os
import socket
import struct
import threading

import pytest

from openrace import wire
from openrace.gateway import ConsoleGateway, websocket_accept_key
from openrace.ins import NoiseModel
from openrace.server import ServerConfig, serve_session
from openrace.session import SessionSettings


class MiniWsClient:
    """Just enough RFC 6455 to exercise the gateway from a test."""

    def __init__(self, host: str, port: int, path: str = "/ws"):
        self.sock = socket.create_connection((host, port), timeout=10)
        key = base64.b64encode(os.urandom(16)).decode()
        request = (
            f"GET {path} HTTP/1.1\r\n"
            f"Host: {host}:{port}\r\n"
            "Upgrade: websocket\r\n"
            "Connection: Upgrade\r\n"
            f"Sec-WebSocket-Key: {key}\r\n"
            "Sec-WebSocket-Version: 13\r\n\r\n"
        )
        self.sock.sendall(request.encode())
        response = b""
        while b"\r\n\r\n" not in response:
            response += self.sock.recv(4096)
        head = response.split(b"\r\n\r\n", 1)
        assert b"101" in head[0].splitlines()[0]
        accept = [
            line.split(b":", 1)[1].strip()
            for line in head[0].splitlines()
            if line.lower().startswith(b"sec-websocket-accept")
        ][0]
        assert accept.decode() == websocket_accept_key(key)
        self._buf = bytearray(head[1])

    def send_binary(self, payload: bytes) -> None:
        mask = os.urandom(4)
        masked = bytes(b ^ mask[i % 4] for i, b in enumerate(payload))
        header = bytearray([0x82])
        n = len(payload)
        if n < 126:
            header.append(0x80 | n)
        elif n < 1 << 16:
            header.append(0x80 | 126)
            header += struct.pack("!H", n)
        else:
            header.append(0x80 | 127)
            header += struct.pack("!Q", n)
        self.sock.sendall(bytes(header) + mask + masked)

    def _read_exact(self, n: int) -> bytes:
        while len(self._buf) < n:
            data = self.sock.recv(65536)
            if not data:
                raise ConnectionError("closed")
            self._buf.extend(data)
        out = bytes(self._buf[:n])
        del self._buf[:n]
        return out

    def recv_binary(self) -> bytes:
        payload = bytearray()
        while True:
            b0, b1 = self._read_exact(2)
            fin, op = b0 & 0x80, b0 & 0x0F
            length = b1 & 0x7F
            if length == 126:
                (length,) = struct.unpack("!H", self._read_exact(2))
            elif length == 127:
                (length,) = struct.unpack("!Q", self._read_exact(8))
            data = self._read_exact(length)
            if op == 0x8:
                raise ConnectionError("peer closed")
            payload.extend(data)
            if fin:
                return bytes(payload)

    def close(self) -> None:
        self.sock.close()


@pytest.fixture
def gateway_stack(oval, gt3):
    settings = SessionSettings(
        frame_width=192, frame_height=108, noise=NoiseModel.quiet(), debug_truth=True
    )
    handle = serve_session(
        oval, gt3, settings, ServerConfig(pace="lockstep", duration_s=1e9, render_live=False)
    )
    gateway = ConsoleGateway(*handle.address).start()
    yield handle, gateway
    gateway.stop()
    handle.stop()


class TestGatewayBridge:
    def test_round_trip_echo_lossless_for_all_message_types(self, gateway_stack):
        handle, gateway = gateway_stack
        ws = MiniWsClient("127.0.0.1", gateway.port)

        # hello through the bridge; ACK must come back as one verbatim frame
        hello = wire.encode_message(
            wire.MsgType.SESSION, wire.encode_json_payload({"cmd": "hello", "role": "driver"})
        )
        ws.send_binary(hello)
        for _ in range(10):
            ack = wire.decode_message(ws.recv_binary())
            if ack.type == wire.MsgType.ACK:
                break
        assert ack.type == wire.MsgType.ACK
        assert wire.decode_json_payload(ack.payload)["role"] == "driver"

        # every message type the protocol defines survives the bridge:
        # CONTROL and SESSION commands flow in; STATE/ACK/ERROR flow out.
        ws.send_binary(
            wire.encode_message(wire.MsgType.CONTROL, struct.pack("<fff", 0.25, 0.5, -0.75))
        )
        ws.send_binary(
            wire.encode_message(wire.MsgType.SESSION,
                                wire.encode_json_payload({"cmd": "advance", "ticks": 3}))
        )
        got_state = got_ack = False
        for _ in range(20):
            msg = wire.decode_message(ws.recv_binary())
            if msg.type == wire.MsgType.STATE:
                payload = wire.decode_state_payload(msg.payload)
                assert payload.channels["throttle"] == pytest.approx(0.25)
                assert payload.channels["steering"] == pytest.approx(-0.75)
                got_state = True
            elif msg.type == wire.MsgType.ACK:
                got_ack = True
            if got_state and got_ack:
                break
        assert got_state and got_ack

        # unknown type comes back as a verbatim ERROR frame
        ws.send_binary(wire.encode_message(42, b"mystery"))
        for _ in range(10):
            msg = wire.decode_message(ws.recv_binary())
            if msg.type == wire.MsgType.ERROR:
                assert wire.decode_json_payload(msg.payload)["error"] == "unknown_type"
                break
        else:
            pytest.fail("no ERROR relayed")
        ws.close()

    def test_frames_survive_bit_exact(self, gateway_stack):
        # CRC-protected frames crossing the bridge must arrive intact: decode
        # validates the checksum, so any corruption would raise.
        handle, gateway = gateway_stack
        ws = MiniWsClient("127.0.0.1", gateway.port)
        ws.send_binary(
            wire.encode_message(
                wire.MsgType.SESSION, wire.encode_json_payload({"cmd": "hello", "role": "driver"})
            )
        )
        for _ in range(10):
            if wire.decode_message(ws.recv_binary()).type == wire.MsgType.ACK:
                break
        ws.send_binary(
            wire.encode_message(wire.MsgType.SESSION,
                                wire.encode_json_payload({"cmd": "advance", "ticks": 60}))
        )
        seen = 0
        for _ in range(100):
            msg = wire.decode_message(ws.recv_binary())  # raises on any bit flip
            if msg.type == wire.MsgType.STATE:
                seen += 1
            if msg.type == wire.MsgType.ACK and seen:
                break
        assert seen == 20  # 60 ticks at 100 Hz state rate
        ws.close()

    def test_static_placeholder_without_built_console(self, gateway_stack):
        import urllib.request

        handle, gateway = gateway_stack
        with urllib.request.urlopen(f"http://127.0.0.1:{gateway.port}/") as resp:
            body = resp.read()
        assert resp.status == 200
        assert b"openrace" in body or b"<html" in body.lower()
