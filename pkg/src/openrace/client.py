"""Blocking TCP client for the session wire protocol.

Used by the driver stack, the RL environment and the benchmark harness; a
background pump variant sorts incoming traffic into per-kind queues so a
control loop can consume every STATE while only ever seeing the newest FRAME.
"""

from __future__ import annotations

import queue
import socket
import threading

from . import wire
from .vehicle import ControlCommand


class ClientError(ConnectionError):
    pass


class RaceClient:
    def __init__(self, host: str, port: int, timeout: float = 30.0):
        self.sock = socket.create_connection((host, port), timeout=timeout)
        self.sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
        self._buf = bytearray()
        self.session_info: dict = {}
        self.role: str | None = None

    # -- send ------------------------------------------------------------------

    def send(self, msg_type: int, payload: bytes) -> None:
        self.sock.sendall(wire.encode_message(msg_type, payload))

    def send_raw(self, frame: bytes) -> None:
        self.sock.sendall(frame)

    def send_control(self, cmd: ControlCommand) -> None:
        self.send(wire.MsgType.CONTROL, wire.encode_control(cmd))

    def send_session(self, obj: dict) -> None:
        self.send(wire.MsgType.SESSION, wire.encode_json_payload(obj))

    # -- receive ---------------------------------------------------------------

    def recv(self) -> wire.WireMessage:
        while True:
            size = wire.frame_size(bytes(self._buf[: wire.HEADER.size]))
            if size is not None and len(self._buf) >= size:
                frame = bytes(self._buf[:size])
                del self._buf[:size]
                return wire.decode_message(frame)
            data = self.sock.recv(1 << 16)
            if not data:
                raise ClientError("connection closed by server")
            self._buf.extend(data)

    def hello(self, role: str = "observer") -> dict:
        self.send_session({"cmd": "hello", "role": role})
        msg = self.wait_for(wire.MsgType.ACK)
        ack = wire.decode_json_payload(msg.payload)
        self.role = ack.get("role")
        self.session_info = ack.get("session", {})
        return ack

    def wait_for(self, msg_type: int, max_messages: int = 10000) -> wire.WireMessage:
        """Read until a message of the wanted type arrives; raise on ERROR."""
        for _ in range(max_messages):
            msg = self.recv()
            if msg.type == msg_type:
                return msg
            if msg.type == wire.MsgType.ERROR:
                detail = wire.decode_json_payload(msg.payload)
                raise ClientError(f"server error: {detail}")
        raise ClientError(f"no message of type {msg_type} within {max_messages} messages")

    def close(self) -> None:
        try:
            self.sock.shutdown(socket.SHUT_RDWR)
        except OSError:
            pass
        self.sock.close()


class LatestSlot:
    """Thread-safe single-slot mailbox holding only the newest value."""

    def __init__(self) -> None:
        self._lock = threading.Lock()
        self._value = None
        self._serial = 0

    def put(self, value) -> None:
        with self._lock:
            self._value = value
            self._serial += 1

    def get(self) -> tuple[object, int]:
        with self._lock:
            return self._value, self._serial


class ClientPump:
    """Background reader: STATE into a queue, FRAME into a latest-slot.

    SESSION events and ACKs land in small side queues.  The pump never blocks
    the socket on slow consumers: the state queue is bounded and drops the
    OLDEST entry on overflow (the control loop is expected to keep up; the
    bound only guards against pathological stalls).
    """

    def __init__(self, client: RaceClient, state_queue_size: int = 2048):
        self.client = client
        self.states: queue.Queue = queue.Queue(maxsize=state_queue_size)
        self.frames = LatestSlot()
        self.sessions: queue.Queue = queue.Queue(maxsize=512)
        self.acks: queue.Queue = queue.Queue(maxsize=512)
        self.errors: queue.Queue = queue.Queue(maxsize=512)
        self.alive = True
        self.dropped_states = 0
        self.n_frames = 0
        self.n_states = 0
        self._thread = threading.Thread(target=self._run, daemon=True, name="openrace-pump")
        self._thread.start()

    def _run(self) -> None:
        try:
            while self.alive:
                msg = self.client.recv()
                if msg.type == wire.MsgType.STATE:
                    self.n_states += 1
                    payload = wire.decode_state_payload(msg.payload)
                    try:
                        self.states.put_nowait(payload)
                    except queue.Full:
                        try:
                            self.states.get_nowait()
                            self.dropped_states += 1
                        except queue.Empty:
                            pass
                        self.states.put_nowait(payload)
                elif msg.type == wire.MsgType.FRAME:
                    self.frames.put(wire.decode_frame_payload(msg.payload))
                    self.n_frames += 1
                elif msg.type == wire.MsgType.SESSION:
                    self._offer(self.sessions, wire.decode_json_payload(msg.payload))
                elif msg.type == wire.MsgType.ACK:
                    self._offer(self.acks, wire.decode_json_payload(msg.payload))
                elif msg.type == wire.MsgType.ERROR:
                    self._offer(self.errors, wire.decode_json_payload(msg.payload))
        except (ClientError, OSError):
            pass
        finally:
            self.alive = False

    @staticmethod
    def _offer(q: queue.Queue, item) -> None:
        try:
            q.put_nowait(item)
        except queue.Full:
            pass

    def next_state(self, timeout: float = 5.0):
        try:
            return self.states.get(timeout=timeout)
        except queue.Empty:
            return None

    def latest_frame(self):
        return self.frames.get()

    def stop(self) -> None:
        self.alive = False
        self.client.close()
        self._thread.join(timeout=2.0)


def connect(host: str, port: int, role: str = "observer", timeout: float = 30.0) -> RaceClient:
    client = RaceClient(host, port, timeout=timeout)
    client.hello(role)
    return client
