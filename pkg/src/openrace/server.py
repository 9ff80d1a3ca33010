"""Asynchronous TCP session server: state streaming, control ingestion, frames.

One driver connection plus any number of observers attach to a running
simulation.  Observers receive ground-truth STATE payloads; the driver
receives the INS reading plus speed only (ground truth withheld unless the
session was started with ``debug_truth``).  The physics loop never waits for
clients or for the renderer: state snapshots cross activity boundaries as
immutable objects, frames are rendered on a worker thread and re-served
stale (with a repeat flag) when rendering lags, and the most recent CONTROL
is applied each tick as a zero-order hold.

Pacing modes: ``realtime`` (wall-clock paced by a speed factor), ``max``
(as fast as the machine allows) and ``lockstep`` (the driver advances the
clock explicitly with SESSION advance commands; used by the RL environment).
"""

from __future__ import annotations

import asyncio
import contextlib
import os
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

from . import wire
from .recording import SessionRecorder
from .render import RIGS, render_semantic_ids
from .session import CoreSession, SessionSettings
from .track import TrackDefinition
from .vehicle import PHYSICS_DT, ControlCommand, VehicleParams

DEFAULT_PORT = 9999


@dataclass
class ServerConfig:
    host: str = "127.0.0.1"
    port: int = 0  # 0 = ephemeral
    pace: str = "realtime"  # realtime | max | lockstep
    speed: float = 1.0
    duration_s: float | None = None
    record_dir: str | None = None
    render_live: bool = True
    hold_start: bool = True  # physics waits for the first completed hello

    def __post_init__(self) -> None:
        if self.pace not in ("realtime", "max", "lockstep"):
            raise ValueError(f"unknown pace {self.pace!r}")


def default_port() -> int:
    return int(os.environ.get("OPENRACE_PORT", DEFAULT_PORT))


class _Client:
    def __init__(self, writer: asyncio.StreamWriter):
        self.writer = writer
        self.role: str | None = None
        self.queue: asyncio.Queue[bytes | None] = asyncio.Queue()
        self.closed = False

    def send(self, data: bytes) -> None:
        if not self.closed:
            self.queue.put_nowait(data)

    async def pump(self) -> None:
        try:
            while True:
                data = await self.queue.get()
                if data is None:
                    break
                # Drain whatever queued up into one write.
                chunks = [data]
                while not self.queue.empty():
                    nxt = self.queue.get_nowait()
                    if nxt is None:
                        break
                    chunks.append(nxt)
                self.writer.write(b"".join(chunks))
                await self.writer.drain()
        except (ConnectionError, asyncio.CancelledError):
            pass
        finally:
            self.closed = True
            with contextlib.suppress(Exception):
                self.writer.close()


class RaceServer:
    def __init__(
        self,
        track: TrackDefinition,
        params: VehicleParams,
        settings: SessionSettings | None = None,
        config: ServerConfig | None = None,
    ):
        self.track = track
        self.params = params
        self.settings = settings or SessionSettings()
        self.config = config or ServerConfig()
        self.core = CoreSession(track, params, self.settings)
        self.clients: list[_Client] = []
        self.driver: _Client | None = None
        self.port: int | None = None
        self._stop = asyncio.Event()
        self._go = asyncio.Event()
        self._advance_queue: asyncio.Queue[tuple[int, _Client]] = asyncio.Queue()
        self._render_pool = ThreadPoolExecutor(max_workers=1)
        self._render_future = None
        self._render_started = 0.0
        self._latest_render: tuple[int, float, object] | None = None
        self._last_emitted_render: int = -1
        self._last_logged_cmd: tuple[float, float, float] | None = None
        self.recorder: SessionRecorder | None = None
        self._last_ins = None
        self.render_delay_s = 0.0  # test hook: artificial render latency

        self._rig = RIGS.get(self.settings.camera, RIGS["chase"])
        self._mesh = None
        self._bvh = None
        if self.config.render_live:
            from .bvh import build_bvh
            from .mesh import build_track_mesh

            self._mesh = build_track_mesh(track, self.settings.mesh_resolution)
            self._bvh = build_bvh(self._mesh)

        if self.config.record_dir:
            self.recorder = SessionRecorder(
                self.config.record_dir, track, params, self.settings
            )

    # -- lifecycle -----------------------------------------------------------------

    async def run(self) -> None:
        self._handlers: set[asyncio.Task] = set()

        def on_connect(reader, writer):
            task = asyncio.create_task(self._handle_client(reader, writer))
            self._handlers.add(task)
            task.add_done_callback(self._handlers.discard)

        server = await asyncio.start_server(on_connect, self.config.host, self.config.port)
        self.port = server.sockets[0].getsockname()[1]
        physics = asyncio.create_task(self._physics_loop())
        try:
            await self._stop.wait()
        finally:
            physics.cancel()
            with contextlib.suppress(asyncio.CancelledError):
                await physics
            if self.recorder is not None:
                self.recorder.close(complete=True)
            self._broadcast_session({"event": "session_end"})
            await asyncio.sleep(0.05)
            for client in self.clients:
                client.send(None)  # type: ignore[arg-type]
            for task in list(self._handlers):
                task.cancel()
            if self._handlers:
                await asyncio.gather(*self._handlers, return_exceptions=True)
            server.close()
            await server.wait_closed()
            self._render_pool.shutdown(wait=False)

    def stop(self) -> None:
        self._stop.set()

    # -- physics -------------------------------------------------------------------

    async def _physics_loop(self) -> None:
        try:
            if self.config.hold_start:
                await self._go.wait()
            if self.config.pace == "lockstep":
                await self._run_lockstep()
            elif self.config.pace == "max":
                await self._run_max()
            else:
                await self._run_realtime()
        except Exception as exc:  # surface crashes to clients before dying
            self._broadcast(
                wire.encode_message(
                    wire.MsgType.ERROR,
                    wire.encode_json_payload({"error": "physics", "detail": str(exc)}),
                )
            )
            raise
        finally:
            self._stop.set()

    def _duration_reached(self) -> bool:
        return (
            self.config.duration_s is not None
            and self.core.state.sim_time >= self.config.duration_s - 1e-9
        )

    async def _run_max(self) -> None:
        chunk = self.core.settings.state_every
        ticks_since_yield = 0
        while not self._duration_reached():
            await self._advance(chunk)
            ticks_since_yield += chunk
            if ticks_since_yield >= 60:
                ticks_since_yield = 0
                await asyncio.sleep(0)

    async def _run_realtime(self) -> None:
        loop = asyncio.get_running_loop()
        chunk = self.core.settings.state_every
        start_wall = loop.time()
        start_sim = self.core.state.sim_time
        while not self._duration_reached():
            await self._advance(chunk)
            target = start_wall + (self.core.state.sim_time - start_sim) / self.config.speed
            delay = target - loop.time()
            if delay > 0:
                await asyncio.sleep(delay)
            elif delay < -2.0:
                # Hopelessly behind (e.g. suspended process): rebase the clock.
                start_wall = loop.time()
                start_sim = self.core.state.sim_time

    async def _run_lockstep(self) -> None:
        while not self._duration_reached():
            ticks, client = await self._advance_queue.get()
            await self._advance(ticks)
            client.send(
                wire.encode_message(
                    wire.MsgType.ACK,
                    wire.encode_json_payload(
                        {
                            "advanced": ticks,
                            "tick": self.core.state.tick,
                            "sim_time": self.core.state.sim_time,
                        }
                    ),
                )
            )

    async def _advance(self, ticks: int) -> None:
        for _ in range(ticks):
            self._log_control()
            result = self.core.tick()
            if result.state_due:
                self._emit_state(result)
            if result.frame_due:
                await self._emit_frame(result)

    def _log_control(self) -> None:
        if self.recorder is None:
            return
        cmd = self.core.command
        key = (cmd.throttle, cmd.brake, cmd.steering)
        if key != self._last_logged_cmd:
            self._last_logged_cmd = key
            self.recorder.add_control(self.core.state.tick, cmd)

    # -- emission ------------------------------------------------------------------

    def _emit_state(self, result) -> None:
        state = result.state
        truth_payload = wire.encode_state_payload(state, None, None)
        truth_msg = wire.encode_message(wire.MsgType.STATE, truth_payload)
        driver_payload = wire.encode_state_payload(
            state if self.settings.debug_truth else None, result.ins, state.speed
        )
        driver_msg = wire.encode_message(wire.MsgType.STATE, driver_payload)
        for client in self.clients:
            if client.role == "driver":
                client.send(driver_msg)
            elif client.role == "observer":
                client.send(truth_msg)
        if self.recorder is not None:
            self.recorder.add_state(state)
        self._last_ins = result.ins

    async def _emit_frame(self, result) -> None:
        if self._bvh is None:
            return
        loop = asyncio.get_running_loop()
        want_fresh = self.recorder is not None
        # Harvest a finished render before submitting the next one; abandon
        # renders that have wedged for several wall seconds so a stuck worker
        # cannot freeze the frame channel permanently.
        if self._render_future is not None and self._render_future.done():
            self._latest_render = self._render_future.result()
            self._render_future = None
        elif self._render_future is not None and loop.time() - self._render_started > 5.0:
            self._render_future.cancel()
            self._render_future = None
        if self._render_future is None:
            snapshot = result.state
            self._render_future = loop.run_in_executor(
                self._render_pool, self._render, snapshot.tick, snapshot.sim_time, snapshot
            )
            self._render_started = loop.time()
        if want_fresh or self._latest_render is None:
            self._latest_render = await self._render_future
            self._render_future = None

        tick, sim_time, ids = self._latest_render
        repeat = tick == self._last_emitted_render
        self._last_emitted_render = tick
        payload = wire.encode_frame_payload(
            tick,
            sim_time,
            repeat,
            self._rig.kind,
            self.settings.frame_width,
            self.settings.frame_height,
            self.settings.hfov,
            ids.tobytes(),
        )
        msg = wire.encode_message(wire.MsgType.FRAME, payload)
        for client in self.clients:
            if client.role in ("driver", "observer"):
                client.send(msg)
        if self.recorder is not None and self._last_ins is not None:
            self.recorder.add_capture(ids, result.state, self._last_ins)

    def _render(self, tick: int, sim_time: float, state):
        if self.render_delay_s > 0.0:
            import time

            time.sleep(self.render_delay_s)
        camera = self._rig.camera_for_state(
            state,
            width=self.settings.frame_width,
            height=self.settings.frame_height,
            hfov=self.settings.hfov,
        )
        ids = render_semantic_ids(camera, self._bvh, self._mesh)
        return tick, sim_time, ids

    def _broadcast(self, data: bytes) -> None:
        for client in self.clients:
            if client.role is not None:
                client.send(data)

    def _broadcast_session(self, obj: dict) -> None:
        self._broadcast(
            wire.encode_message(wire.MsgType.SESSION, wire.encode_json_payload(obj))
        )

    # -- client handling -------------------------------------------------------------

    async def _handle_client(self, reader: asyncio.StreamReader, writer: asyncio.StreamWriter) -> None:
        client = _Client(writer)
        self.clients.append(client)
        pump = asyncio.create_task(client.pump())
        buf = bytearray()
        try:
            while True:
                data = await reader.read(65536)
                if not data:
                    break
                buf.extend(data)
                while True:
                    try:
                        size = wire.frame_size(bytes(buf[: wire.HEADER.size]))
                    except wire.BadMagicError:
                        self._reply_error(client, "bad_magic", "stream desynchronized")
                        raise ConnectionError("bad magic")
                    if size is None or len(buf) < size:
                        break
                    frame = bytes(buf[:size])
                    del buf[:size]
                    try:
                        msg = wire.decode_message(frame)
                    except wire.BadCrcError:
                        self._reply_error(client, "bad_crc", "payload CRC mismatch")
                        continue
                    self._dispatch(client, msg)
        except (ConnectionError, asyncio.IncompleteReadError):
            pass
        finally:
            if client is self.driver:
                self.driver = None
                self.core.set_control(ControlCommand())  # held controls release
                self._broadcast_session({"event": "driver_disconnected"})
            client.send(None)  # type: ignore[arg-type]
            with contextlib.suppress(Exception):
                await pump
            if client in self.clients:
                self.clients.remove(client)

    def _reply_error(self, client: _Client, kind: str, detail: str) -> None:
        client.send(
            wire.encode_message(
                wire.MsgType.ERROR, wire.encode_json_payload({"error": kind, "detail": detail})
            )
        )

    def _dispatch(self, client: _Client, msg: wire.WireMessage) -> None:
        if msg.type == wire.MsgType.CONTROL:
            if client is not self.driver:
                self._reply_error(client, "not_driver", "only the driver may send CONTROL")
                return
            try:
                cmd = wire.decode_control(msg.payload)
            except wire.WireError as exc:
                self._reply_error(client, "bad_control", str(exc))
                return
            self.core.set_control(cmd)
        elif msg.type == wire.MsgType.SESSION:
            try:
                obj = wire.decode_json_payload(msg.payload)
            except wire.WireError as exc:
                self._reply_error(client, "bad_session", str(exc))
                return
            self._session_command(client, obj)
        elif msg.type >= wire.DIAG_BASE:
            if client is self.driver:
                data = wire.encode_message(msg.type, msg.payload)
                for other in self.clients:
                    if other.role == "observer":
                        other.send(data)
        else:
            self._reply_error(client, "unknown_type", f"unhandled message type {msg.type}")

    def _session_command(self, client: _Client, obj: dict) -> None:
        cmd = obj.get("cmd")
        if cmd == "hello":
            role = obj.get("role", "observer")
            if role == "driver":
                if self.driver is not None:
                    self._reply_error(client, "driver_slot_taken", "a driver is already connected")
                    return
                self.driver = client
                client.role = "driver"
                self._broadcast_session({"event": "driver_connected"})
            else:
                client.role = "observer"
            client.send(
                wire.encode_message(
                    wire.MsgType.ACK,
                    wire.encode_json_payload({"role": client.role, "session": self._session_info()}),
                )
            )
            self._go.set()
        elif cmd == "ready":
            if client is self.driver:
                self._broadcast_session({"event": "driver_ready"})
        elif cmd == "reset":
            if client is not self.driver:
                self._reply_error(client, "not_driver", "only the driver may reset")
                return
            state = self.core.reset(
                s=obj.get("s"), speed=float(obj.get("speed", 0.0)), d=float(obj.get("d", 0.0))
            )
            self._broadcast_session({"event": "reset", "tick": state.tick, "s": state.s})
            client.send(
                wire.encode_message(
                    wire.MsgType.ACK,
                    wire.encode_json_payload({"reset": True, "tick": state.tick}),
                )
            )
        elif cmd == "advance":
            if client is not self.driver:
                self._reply_error(client, "not_driver", "only the driver may advance")
                return
            if self.config.pace != "lockstep":
                self._reply_error(client, "not_lockstep", "session is not in lockstep pacing")
                return
            self._advance_queue.put_nowait((int(obj.get("ticks", 1)), client))
        elif cmd == "track_geometry":
            if client.role != "observer":
                self._reply_error(client, "not_observer", "geometry is observer-only")
                return
            client.send(
                wire.encode_message(
                    wire.MsgType.ACK, wire.encode_json_payload(self._track_geometry())
                )
            )
        else:
            self._reply_error(client, "unknown_session_cmd", f"unknown cmd {cmd!r}")

    def _session_info(self) -> dict:
        noise = self.settings.noise
        return {
            "track": self.track.name,
            "vehicle": asdict(self.params),
            "state_hz": self.settings.state_hz,
            "frame_hz": self.settings.frame_hz,
            "physics_dt": PHYSICS_DT,
            "debug_truth": self.settings.debug_truth,
            "pace": self.config.pace,
            "camera": {
                "kind": self._rig.name,
                "offset": list(self._rig.offset),
                "pitch": self._rig.pitch,
                "width": self.settings.frame_width,
                "height": self.settings.frame_height,
                "hfov": self.settings.hfov,
            },
            "noise": {
                "accel_sigma": noise.accel_sigma,
                "gyro_sigma": noise.gyro_sigma,
                "odo_speed_sigma": noise.odo_speed_sigma,
                "gps_pos_sigma": noise.gps_pos_sigma,
                "gps_vel_sigma": noise.gps_vel_sigma,
                "gps_heading_sigma": noise.gps_heading_sigma,
                "gps_latency_ticks": noise.gps_latency_ticks,
                "origin_lat": noise.origin_lat,
                "origin_lon": noise.origin_lon,
            },
        }

    def _track_geometry(self) -> dict:
        geom = self.track.geometry
        stride = max(1, len(geom.grid_xyz) // 600)
        pts = geom.grid_xyz[::stride]
        tan = geom.grid_tangent[::stride]
        left = geom.grid_left[::stride]
        right = geom.grid_right[::stride]
        right_n = [[t[1], -t[0]] for t in tan[:, :2]]
        start = self.track.to_world(self.track.start_line_s, 0.0)
        start_t = self.track.heading_at(self.track.start_line_s)
        lw, rw = self.track.widths_at(self.track.start_line_s)
        import math

        start_right = (math.sin(start_t), -math.cos(start_t))
        return {
            "track": self.track.name,
            "closed": self.track.closed,
            "length": self.track.total_length,
            "centerline": [[float(p[0]), float(p[1])] for p in pts],
            "left_edge": [
                [float(p[0] - n[0] * w), float(p[1] - n[1] * w)]
                for p, n, w in zip(pts, right_n, left)
            ],
            "right_edge": [
                [float(p[0] + n[0] * w), float(p[1] + n[1] * w)]
                for p, n, w in zip(pts, right_n, right)
            ],
            "start_line": [
                [float(start[0] - start_right[0] * lw), float(start[1] - start_right[1] * lw)],
                [float(start[0] + start_right[0] * rw), float(start[1] + start_right[1] * rw)],
            ],
        }


class ServerHandle:
    """Runs a RaceServer on a daemon thread; for tests and embedded use."""

    def __init__(self, server: RaceServer):
        self.server = server
        self._thread: threading.Thread | None = None
        self._loop: asyncio.AbstractEventLoop | None = None
        self._started = threading.Event()
        self._done = threading.Event()
        self.error: BaseException | None = None

    @property
    def address(self) -> tuple[str, int]:
        assert self.server.port is not None
        return (self.server.config.host, self.server.port)

    def start(self, timeout: float = 30.0) -> "ServerHandle":
        def runner():
            loop = asyncio.new_event_loop()
            self._loop = loop
            asyncio.set_event_loop(loop)

            async def main():
                task = asyncio.create_task(self.server.run())
                while self.server.port is None and not task.done():
                    await asyncio.sleep(0.005)
                self._started.set()
                await task

            try:
                loop.run_until_complete(main())
            except BaseException as exc:  # noqa: BLE001 - report to the test thread
                self.error = exc
                self._started.set()
            finally:
                loop.close()
                self._done.set()

        self._thread = threading.Thread(target=runner, daemon=True, name="openrace-server")
        self._thread.start()
        if not self._started.wait(timeout):
            raise TimeoutError("server did not start")
        if self.error is not None:
            raise RuntimeError(f"server failed to start: {self.error}")
        return self

    def stop(self, timeout: float = 10.0) -> None:
        if self._loop is not None and not self._done.is_set():
            self._loop.call_soon_threadsafe(self.server.stop)
        self._done.wait(timeout)

    def wait(self, timeout: float | None = None) -> bool:
        return self._done.wait(timeout)


def serve_session(
    track: TrackDefinition,
    params: VehicleParams,
    settings: SessionSettings | None = None,
    config: ServerConfig | None = None,
) -> ServerHandle:
    """Start a session server on a background thread and return its handle."""
    return ServerHandle(RaceServer(track, params, settings, config)).start()
