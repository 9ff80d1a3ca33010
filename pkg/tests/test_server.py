import threading
import time

import numpy as np
import pytest

from openrace import wire
from openrace.client import RaceClient
from openrace.ins import NoiseModel
from openrace.server import RaceServer, ServerConfig, ServerHandle, serve_session
from openrace.session import CoreSession, SessionSettings
from openrace.vehicle import ControlCommand


def collect_until_end(client, max_messages=1_000_000):
    counts = {}
    messages = []
    for _ in range(max_messages):
        msg = client.recv()
        counts[msg.type] = counts.get(msg.type, 0) + 1
        messages.append(msg)
        if msg.type == wire.MsgType.SESSION:
            obj = wire.decode_json_payload(msg.payload)
            if obj.get("event") == "session_end":
                break
    return counts, messages


@pytest.fixture
def quiet_settings():
    return SessionSettings(
        frame_width=192, frame_height=108, noise=NoiseModel.quiet(), spawn_speed=5.0
    )


class TestRates:
    def test_state_and_frame_counts_over_ten_seconds(self, oval, gt3, quiet_settings):
        handle = serve_session(
            oval, gt3, quiet_settings, ServerConfig(pace="max", duration_s=10.0)
        )
        client = RaceClient(*handle.address)
        client.hello("observer")
        counts, _ = collect_until_end(client)
        handle.stop()
        assert abs(counts[wire.MsgType.STATE] - 1000) <= 1
        assert abs(counts[wire.MsgType.FRAME] - 300) <= 1

    def test_frame_rate_change_preserves_state_trajectory(self, oval, gt3):
        def run(frame_hz):
            settings = SessionSettings(
                frame_width=192, frame_height=108, frame_hz=frame_hz,
                noise=NoiseModel.quiet(), spawn_speed=5.0,
            )
            handle = serve_session(
                oval, gt3, settings, ServerConfig(pace="max", duration_s=4.0)
            )
            client = RaceClient(*handle.address)
            client.hello("observer")
            counts, messages = collect_until_end(client)
            handle.stop()
            states = [m.payload for m in messages if m.type == wire.MsgType.STATE]
            return counts, states

        counts30, states30 = run(30.0)
        counts15, states15 = run(15.0)
        assert abs(counts30[wire.MsgType.FRAME] - 120) <= 1
        assert abs(counts15[wire.MsgType.FRAME] - 60) <= 1
        assert states30 == states15  # byte-identical physics


class TestRolesAndHygiene:
    def test_driver_channel_withholds_truth(self, oval, gt3, quiet_settings):
        handle = serve_session(
            oval, gt3, quiet_settings, ServerConfig(pace="max", duration_s=2.0)
        )
        driver = RaceClient(*handle.address)
        ack = driver.hello("driver")
        assert ack["role"] == "driver"
        saw_state = 0
        for _ in range(400):
            msg = driver.recv()
            if msg.type == wire.MsgType.STATE:
                payload = wire.decode_state_payload(msg.payload)
                assert not payload.has_truth  # schema-level hygiene
                assert payload.ins is not None and payload.speed is not None
                saw_state += 1
            elif msg.type == wire.MsgType.SESSION:
                if wire.decode_json_payload(msg.payload).get("event") == "session_end":
                    break
        handle.stop()
        assert saw_state > 100

    def test_debug_truth_grants_driver_truth(self, oval, gt3):
        settings = SessionSettings(
            frame_width=192, frame_height=108, noise=NoiseModel.quiet(), debug_truth=True
        )
        handle = serve_session(oval, gt3, settings, ServerConfig(pace="max", duration_s=1.0))
        driver = RaceClient(*handle.address)
        driver.hello("driver")
        msg = driver.wait_for(wire.MsgType.STATE)
        payload = wire.decode_state_payload(msg.payload)
        handle.stop()
        assert payload.has_truth and payload.ins is not None

    def test_second_driver_rejected(self, oval, gt3, quiet_settings):
        handle = serve_session(
            oval, gt3, quiet_settings, ServerConfig(pace="realtime", duration_s=30.0)
        )
        first = RaceClient(*handle.address)
        first.hello("driver")
        second = RaceClient(*handle.address)
        second.send_session({"cmd": "hello", "role": "driver"})
        msg = second.recv()
        assert msg.type == wire.MsgType.ERROR
        assert wire.decode_json_payload(msg.payload)["error"] == "driver_slot_taken"
        handle.stop()

    def test_observer_control_rejected(self, oval, gt3, quiet_settings):
        handle = serve_session(
            oval, gt3, quiet_settings, ServerConfig(pace="realtime", duration_s=30.0)
        )
        obs = RaceClient(*handle.address)
        obs.hello("observer")
        obs.send_control(ControlCommand(throttle=1.0))
        msg = obs.wait_for(wire.MsgType.ERROR)
        assert wire.decode_json_payload(msg.payload)["error"] == "not_driver"
        handle.stop()

    def test_malformed_control_keeps_previous_command(self, oval, gt3, quiet_settings):
        handle = serve_session(
            oval, gt3, quiet_settings, ServerConfig(pace="realtime", duration_s=30.0)
        )
        driver = RaceClient(*handle.address)
        driver.hello("driver")
        driver.send_control(ControlCommand(throttle=0.5))
        time.sleep(0.1)
        driver.send(wire.MsgType.CONTROL, b"\x01\x02")  # wrong size
        msg = driver.wait_for(wire.MsgType.ERROR)
        assert wire.decode_json_payload(msg.payload)["error"] == "bad_control"
        assert handle.server.core.command.throttle == 0.5
        handle.stop()

    def test_unknown_type_error_but_connection_survives(self, oval, gt3, quiet_settings):
        handle = serve_session(
            oval, gt3, quiet_settings, ServerConfig(pace="realtime", duration_s=30.0)
        )
        client = RaceClient(*handle.address)
        client.hello("observer")
        client.send(40, b"mystery")
        msg = client.wait_for(wire.MsgType.ERROR)
        assert wire.decode_json_payload(msg.payload)["error"] == "unknown_type"
        # still alive afterwards
        client.send_session({"cmd": "track_geometry"})
        geo = wire.decode_json_payload(client.wait_for(wire.MsgType.ACK).payload)
        assert geo["track"] == oval.name
        assert len(geo["centerline"]) > 100
        handle.stop()

    def test_diagnostics_relayed_to_observers(self, oval, gt3, quiet_settings):
        handle = serve_session(
            oval, gt3, quiet_settings, ServerConfig(pace="realtime", duration_s=30.0)
        )
        obs = RaceClient(*handle.address)
        obs.hello("observer")
        driver = RaceClient(*handle.address)
        driver.hello("driver")
        driver.send(wire.MsgType.DIAG_POSE, wire.encode_json_payload({"tick": 7, "x": 1.0}))
        msg = obs.wait_for(wire.MsgType.DIAG_POSE)
        assert wire.decode_json_payload(msg.payload)["tick"] == 7
        handle.stop()


class TestHold:
    def test_no_control_applies_zeros(self, oval, gt3, quiet_settings):
        handle = serve_session(
            oval, gt3, quiet_settings, ServerConfig(pace="max", duration_s=1.0)
        )
        obs = RaceClient(*handle.address)
        obs.hello("observer")
        counts, messages = collect_until_end(obs)
        handle.stop()
        for msg in messages:
            if msg.type == wire.MsgType.STATE:
                ch = wire.decode_state_payload(msg.payload).channels
                assert ch["throttle"] == 0.0 and ch["brake"] == 0.0 and ch["steering"] == 0.0

    def test_zero_order_hold_applies_last_command(self, oval, gt3, quiet_settings):
        handle = serve_session(
            oval, gt3, quiet_settings, ServerConfig(pace="realtime", speed=2.0, duration_s=20.0)
        )
        driver = RaceClient(*handle.address)
        driver.hello("driver")
        obs = RaceClient(*handle.address)
        obs.hello("observer")
        driver.send_control(ControlCommand(throttle=0.7))
        time.sleep(0.4)
        throttles = []
        for _ in range(50):
            msg = obs.recv()
            if msg.type == wire.MsgType.STATE:
                throttles.append(wire.decode_state_payload(msg.payload).channels["throttle"])
        handle.stop()
        assert throttles and all(t == pytest.approx(0.7) for t in throttles[-20:])


class TestLockstep:
    def test_advance_is_exact_and_exclusive(self, oval, gt3):
        settings = SessionSettings(
            noise=NoiseModel.quiet(), debug_truth=True, spawn_speed=10.0
        )
        handle = serve_session(
            oval, gt3, settings, ServerConfig(pace="lockstep", duration_s=1e6, render_live=False)
        )
        driver = RaceClient(*handle.address)
        driver.hello("driver")
        t0 = handle.server.core.state.tick
        time.sleep(0.2)
        assert handle.server.core.state.tick == t0  # nothing moves uncommanded
        driver.send_session({"cmd": "advance", "ticks": 30})
        states = 0
        while True:
            msg = driver.recv()
            if msg.type == wire.MsgType.STATE:
                states += 1
            elif msg.type == wire.MsgType.ACK:
                obj = wire.decode_json_payload(msg.payload)
                if "advanced" in obj:
                    break
        assert states == 10  # 30 ticks at state_every=3
        assert handle.server.core.state.tick == t0 + 30
        handle.stop()

    def test_reset_respawns_vehicle(self, oval, gt3):
        settings = SessionSettings(noise=NoiseModel.quiet(), debug_truth=True)
        handle = serve_session(
            oval, gt3, settings, ServerConfig(pace="lockstep", duration_s=1e6, render_live=False)
        )
        driver = RaceClient(*handle.address)
        driver.hello("driver")
        driver.send_session({"cmd": "reset", "s": 250.0, "speed": 15.0})
        driver.wait_for(wire.MsgType.ACK)
        assert handle.server.core.state.s == pytest.approx(250.0, abs=0.5)
        assert handle.server.core.state.vx == pytest.approx(15.0)
        handle.stop()


class TestAsyncContracts:
    def test_unresponsive_driver_leaves_simulation_running(self, oval, gt3, quiet_settings):
        handle = serve_session(
            oval, gt3, quiet_settings, ServerConfig(pace="max", duration_s=5.0)
        )
        driver = RaceClient(*handle.address)
        driver.hello("driver")
        driver.send_control(ControlCommand(throttle=0.8))
        time.sleep(0.2)  # stop reading: the server must not care
        obs = RaceClient(*handle.address)
        obs.hello("observer")
        speeds = []
        for _ in range(3000):
            msg = obs.recv()
            if msg.type == wire.MsgType.STATE:
                speeds.append(wire.decode_state_payload(msg.payload).channels["speed"])
            elif msg.type == wire.MsgType.SESSION:
                if wire.decode_json_payload(msg.payload).get("event") == "session_end":
                    break
        handle.stop()
        assert speeds[-1] > speeds[0]  # throttle held, sim progressed

    def test_stale_frame_reserved_with_repeat_flag(self, oval, gt3):
        settings = SessionSettings(
            frame_width=192, frame_height=108, noise=NoiseModel.quiet()
        )
        handle = serve_session(oval, gt3, settings, ServerConfig(pace="max", duration_s=3.0))
        handle.server.render_delay_s = 0.5  # renders cannot keep up with frames
        client = RaceClient(*handle.address)
        client.hello("observer")
        repeats = fresh = 0
        ticks = {}
        for _ in range(100000):
            msg = client.recv()
            if msg.type == wire.MsgType.FRAME:
                frame = wire.decode_frame_payload(msg.payload)
                ticks.setdefault(frame.tick, 0)
                ticks[frame.tick] += 1
                if frame.repeat:
                    repeats += 1
                else:
                    fresh += 1
            elif msg.type == wire.MsgType.SESSION:
                if wire.decode_json_payload(msg.payload).get("event") == "session_end":
                    break
        handle.stop()
        assert repeats > 0 and fresh > 0
        assert max(ticks.values()) > 1  # identical frame re-served

    def test_state_cadence_unaffected_by_slow_renderer(self, oval, gt3):
        # 50 Hz state stream while every render takes ~1 s: inter-arrival
        # jitter must stay under 20% of the period.
        settings = SessionSettings(
            frame_width=192, frame_height=108, state_hz=50.0, frame_hz=10.0,
            noise=NoiseModel.quiet(),
        )
        handle = serve_session(
            oval, gt3, settings, ServerConfig(pace="realtime", speed=1.0, duration_s=8.0)
        )
        handle.server.render_delay_s = 1.0
        client = RaceClient(*handle.address)
        client.hello("observer")
        arrivals = []
        while True:
            msg = client.recv()
            if msg.type == wire.MsgType.STATE:
                arrivals.append(time.perf_counter())
            elif msg.type == wire.MsgType.SESSION:
                if wire.decode_json_payload(msg.payload).get("event") == "session_end":
                    break
        handle.stop()
        gaps = np.diff(arrivals[40:-5])
        period = 1.0 / 50.0
        assert len(gaps) > 100
        assert abs(np.median(gaps) - period) < 0.2 * period
        jitter = np.percentile(np.abs(gaps - np.median(gaps)), 95)
        assert jitter < 0.2 * period
