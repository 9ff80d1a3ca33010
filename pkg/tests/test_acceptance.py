"""Acceptance suite: one test per release criterion, each printing PASS/FAIL.

Every tolerance is pinned here; nothing is deferred to later calibration.
The suite runs with the plain pytest invocation and needs no secondary
(browser console) component.
"""

import dataclasses
import hashlib
import math
import threading
import time
from pathlib import Path

import numpy as np
import pytest

from openrace import wire
from openrace.client import RaceClient
from openrace.ins import InsState, NoiseModel, simulate_ins
from openrace.session import CoreSession, SessionSettings
from openrace.server import ServerConfig, serve_session
from openrace.vehicle import ControlCommand, initial_state, state_channels, step


def report(name: str, ok: bool = True) -> None:
    print(f"\n[ACCEPTANCE] {name}: {'PASS' if ok else 'FAIL'}")


def run_session_counts(oval, gt3, frame_hz: float, duration: float = 10.0):
    settings = SessionSettings(
        frame_width=192, frame_height=108, frame_hz=frame_hz,
        noise=NoiseModel.quiet(), spawn_speed=5.0,
    )
    handle = serve_session(oval, gt3, settings, ServerConfig(pace="max", duration_s=duration))
    client = RaceClient(*handle.address)
    client.hello("observer")
    states, frames = [], 0
    while True:
        msg = client.recv()
        if msg.type == wire.MsgType.STATE:
            states.append(msg.payload)
        elif msg.type == wire.MsgType.FRAME:
            frames += 1
        elif msg.type == wire.MsgType.SESSION:
            if wire.decode_json_payload(msg.payload).get("event") == "session_end":
                break
    handle.stop()
    client.close()
    return states, frames


class TestWireRateContract:
    def test_wire_rate_contract(self, oval, gt3):
        t0 = time.monotonic()
        states30, frames30 = run_session_counts(oval, gt3, frame_hz=30.0)
        states15, frames15 = run_session_counts(oval, gt3, frame_hz=15.0)
        elapsed = time.monotonic() - t0
        assert abs(len(states30) - 1000) <= 1
        assert abs(frames30 - 300) <= 1
        assert abs(frames15 - 150) <= 1  # proportional to --frame-hz
        assert states30 == states15  # byte-identical STATE trajectory
        assert elapsed < 30.0, f"runtime {elapsed:.1f}s exceeds 30s budget"
        report("wire-rate contract (1000 +- 1 STATE, 300/150 FRAME, byte-identical)")


class TestInsStatistics:
    def test_ins_statistics(self, oval, gt3):
        t0 = time.monotonic()
        truth = step(initial_state(oval, gt3, speed=20.0), ControlCommand(0.4), gt3, oval)
        dt = 0.01

        # white-noise std over 10k samples
        model = dataclasses.replace(NoiseModel.quiet(seed=11), accel_sigma=0.1)
        state = InsState.fresh(model)
        samples = np.array([simulate_ins(truth, model, state, dt)[0].accel_x for _ in range(10_000)])
        assert 0.095 <= samples.std(ddof=1) <= 0.105

        # random-walk bias variance over 10k trials
        sigma_rw, n_steps = 0.01, 20
        finals = np.empty(10_000)
        for trial in range(10_000):
            m = dataclasses.replace(NoiseModel.quiet(seed=trial), gyro_bias_rw=sigma_rw)
            s = InsState.fresh(m)
            for _ in range(n_steps):
                reading, s = simulate_ins(truth, m, s, dt)
            finals[trial] = reading.gyro_z - truth.yaw_rate
        expected = n_steps * dt * sigma_rw**2
        assert abs(finals.var(ddof=1) - expected) / expected < 0.20

        # zero-noise passthrough is exact
        quiet = NoiseModel.quiet()
        reading, _ = simulate_ins(truth, quiet, InsState.fresh(quiet), dt)
        assert reading.gyro_z == truth.yaw_rate
        assert reading.odometer_speed == truth.speed
        assert reading.ins_timestamp == truth.sim_time

        elapsed = time.monotonic() - t0
        assert elapsed < 60.0, f"runtime {elapsed:.1f}s exceeds 60s budget"
        report("INS statistics (std in [0.095, 0.105], RW variance +-20%, passthrough)")


class TestRaycastOracle:
    def test_raycast_oracle(self, oval, oval_mesh, oval_bvh, rng):
        from openrace.bvh import raycast_batch
        from openrace.render import CameraModel, render_frame
        from test_raycast import brute_force_nearest, ground_plane_mesh, triangle_arrays
        from openrace.bvh import build_bvh

        t0 = time.monotonic()
        v0, e1, e2 = triangle_arrays(oval_mesh)
        n = 10_000
        origins = np.column_stack(
            [rng.uniform(-80, 400, n), rng.uniform(-140, 140, n), rng.uniform(0.5, 40, n)]
        )
        dirs = rng.normal(size=(n, 3))
        dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
        t, tri, _, _, _ = raycast_batch(oval_bvh, origins, dirs)
        for i in range(n):
            bt, btri = brute_force_nearest(origins[i], dirs[i], v0, e1, e2)
            assert tri[i] == btri, f"ray {i}: bvh {tri[i]} vs brute {btri}"
            if btri >= 0:
                assert abs(t[i] - bt) < 1e-9

        mesh = ground_plane_mesh()
        bvh = build_bvh(mesh)
        h, pitch = 2.5, -0.3
        cam = CameraModel.from_yaw_pitch((0.0, 0.0, h), yaw=0.3, pitch=pitch,
                                         width=640, height=360)
        frame = render_frame(cam, bvh, mesh)
        inv_sin = -cam.ray_directions()[..., 2]
        hits = frame.hit_mask
        assert hits.any()
        expected = h / inv_sin[hits]
        got = frame.depth[hits].astype(np.float64)
        assert np.max(np.abs(got - expected) / expected) < 1e-4

        elapsed = time.monotonic() - t0
        assert elapsed < 120.0, f"runtime {elapsed:.1f}s exceeds 120s budget"
        report("raycast oracle (BVH == brute force on 10k rays; depth = h/sin)")


class TestDynamicsOracles:
    def test_dynamics_oracles(self, oval, gt3):
        from openrace.stock import mini_ring
        from openrace.vehicle import PHYSICS_DT, TyreState, tyre_thermal_update

        t0 = time.monotonic()

        # determinism: bit-identical replay
        def run():
            s = initial_state(oval, gt3)
            out = []
            for i in range(900):
                cmd = ControlCommand(throttle=0.8, steering=0.04 * math.sin(i / 30.0))
                s = step(s, cmd, gt3, oval)
                out.append(state_channels(s))
            return out

        assert run() == run()

        # kinematic yaw-rate agreement at low slip
        ring = mini_ring(200.0, 8.0)
        s = initial_state(ring, gt3, speed=15.0)
        for _ in range(1500):
            thr = min(1.0, max(0.0, 0.3 + 2.0 * (15.0 - s.vx)))
            s = step(s, ControlCommand(throttle=thr, steering=-0.05), gt3, ring)
        kinematic = 15.0 * math.tan(0.05 * gt3.max_wheel_angle) / gt3.wheelbase
        assert abs(s.yaw_rate) == pytest.approx(kinematic, rel=0.05)

        # tyre temperature fixed point within 1% of closed form
        tp = gt3.tyre
        tyre = TyreState(temperature=tp.ambient_temp)
        power, speed = 2500.0, 20.0
        for _ in range(60_000):
            tyre = tyre_thermal_update(tyre, power, speed, 0.01, tp)
        expected = tp.ambient_temp + tp.heating_rate * power / (
            tp.cooling_rate * (1.0 + speed / 30.0)
        )
        assert tyre.temperature == pytest.approx(expected, rel=0.01)

        # fuel mass strictly couples to acceleration ordering
        cmds = [ControlCommand(throttle=1.0)] * (10 * 300)
        light = initial_state(oval, gt3, fuel=10.0)
        heavy = initial_state(oval, gt3, fuel=80.0)
        for cmd in cmds:
            light = step(light, cmd, gt3, oval)
            heavy = step(heavy, cmd, gt3, oval)
        assert heavy.speed < light.speed

        elapsed = time.monotonic() - t0
        assert elapsed < 60.0, f"runtime {elapsed:.1f}s exceeds 60s budget"
        report("dynamics oracles (replay, kinematic yaw, thermal fixed point, fuel mass)")


class TestRacelineOracles:
    def test_raceline_oracles(self, ring50, oval):
        from openrace.raceline import CorridorSamples, compute_racing_line

        t0 = time.monotonic()

        n = 401
        pts = np.column_stack([np.arange(n, dtype=float), np.zeros(n)])
        straight = CorridorSamples(
            points=pts,
            right_normals=np.tile([[0.0, -1.0]], (n, 1)),
            left_room=np.full(n, 6.0),
            right_room=np.full(n, 6.0),
            closed=False,
        )
        line = compute_racing_line(straight, margin=1.0, v_cap=40.0)
        assert np.abs(line.points[:, 1]).max() == 0.0  # exactly the centerline
        assert np.allclose(line.speed, 40.0)

        line = compute_racing_line(ring50, margin=1.0, mu=1.0, v_cap=60.0)
        radii = np.linalg.norm(line.points, axis=1)
        assert abs(radii.mean() - 54.0) < 0.2

        radius = float(radii.mean())
        expected = math.sqrt(9.80665 * radius)
        assert np.abs(line.speed - expected).max() / expected < 0.005

        for mu, cap in ((1.0, 55.0), (0.85, 45.0)):
            oline = compute_racing_line(oval, margin=2.0, mu=mu, v_cap=cap)
            ceiling = np.sqrt(mu * 9.80665 / np.maximum(np.abs(oline.curvature), 1e-9))
            assert np.all(oline.speed <= ceiling + 1e-6)

        elapsed = time.monotonic() - t0
        assert elapsed < 120.0, f"runtime {elapsed:.1f}s exceeds 120s budget"
        report("raceline oracles (straight exact, annulus 54 +- 0.2, v = sqrt(mu g R))")


class TestBenchmarkArithmetic:
    def test_benchmark_arithmetic(self):
        from openrace.benchmark import BenchmarkReport, LapResult, format_laptime

        t0 = time.monotonic()
        times = [125.8, 126.1, 126.0, 125.9, 126.2]
        laps = [
            LapResult(index=i + 1, time_s=t, valid=True, violation_s=0.0)
            for i, t in enumerate(times)
        ]
        rep = BenchmarkReport("oval_1km", "gt3_generic", "five", laps, completed=True)
        assert rep.formatted() == "2:06.000 ± 0.158"
        assert format_laptime(199.021) == "3:19.021"
        elapsed = time.monotonic() - t0
        assert elapsed < 1.0
        report('benchmark arithmetic ("2:06.000 +- 0.158", "3:19.021")')


class TestCurriculum:
    def test_curriculum(self, rng):
        from openrace.rlenv import CurriculumState, EpisodeResult, curriculum_update, reward

        t0 = time.monotonic()
        success = EpisodeResult("lap_complete", 1, 10.0, 40.0)
        failure = EpisodeResult("crash", 0, -1.0)

        # cap non-decreasing over 1000 random outcome sequences
        for _ in range(1000):
            state = CurriculumState(buffer_episode_threshold=10)
            prev_cap = state.cap
            for ok in rng.random(30) < 0.5:
                state = curriculum_update(state, success if ok else failure)
                assert state.cap >= prev_cap
                prev_cap = state.cap

        # threshold edge exact at episode 50
        state = CurriculumState(buffer_episode_threshold=50)
        for i in range(49):
            state = curriculum_update(state, success)
        assert state.cap == 0.0
        state = curriculum_update(state, success)
        assert state.cap == 0.5

        # reward monotone in cap over a fixed recorded rollout
        rollout = [(float(rng.uniform(0.2, 2.0)), float(rng.uniform(5, 50))) for _ in range(500)]

        def total(cap):
            c = CurriculumState(speed_reward_cap=cap, cap_level=1)
            return sum(reward(ds, v, c, False) for ds, v in rollout)

        totals = [total(c) for c in (0.0, 0.5, 1.5, 4.0, 12.0)]
        assert all(b >= a for a, b in zip(totals, totals[1:]))

        elapsed = time.monotonic() - t0
        assert elapsed < 30.0, f"runtime {elapsed:.1f}s exceeds 30s budget"
        report("curriculum (non-decreasing cap, threshold edge at 50, reward monotone)")


class TestRlEnvironment:
    def test_rl_environment(self, oval, gt3):
        from openrace.rlenv import OBSERVATION_SIZE, EnvConfig, RacingEnv, ScriptedBaseline

        t0 = time.monotonic()
        settings = SessionSettings(noise=NoiseModel.quiet(), debug_truth=True, spawn_speed=15.0)
        handle = serve_session(
            oval, gt3, settings,
            ServerConfig(pace="lockstep", duration_s=1e9, render_live=False),
        )
        env = RacingEnv(*handle.address, oval, EnvConfig(laps_per_episode=5))
        policy = ScriptedBaseline()

        obs = env.reset(seed=3)
        assert obs.shape == (OBSERVATION_SIZE,)
        seq_a = [obs.copy()]
        result = None
        for _ in range(12_000):
            assert obs.shape == (OBSERVATION_SIZE,)
            obs, r, done, result = env.step(policy(obs))
            seq_a.append(obs.copy())
            if done:
                break
        assert result is not None, "episode never terminated"
        assert result.reason == "lap_complete", f"terminated by {result.reason}"
        assert result.laps >= 5

        # determinism under seed: replay the first 50 steps
        obs = env.reset(seed=3)
        replay = [obs.copy()]
        policy2 = ScriptedBaseline()
        for _ in range(50):
            obs, _, done, _ = env.step(policy2(obs))
            replay.append(obs.copy())
            if done:
                break
        assert all((a == b).all() for a, b in zip(seq_a[:51], replay))

        env.close()
        handle.stop()
        elapsed = time.monotonic() - t0
        assert elapsed < 600.0, f"runtime {elapsed:.1f}s exceeds 10min budget"
        report("RL environment (baseline >= 5 laps, obs length 44, deterministic)")


class TestDatasetGeneration:
    def test_dataset_generation(self, oval, gt3, tmp_path):
        import hashlib

        from openrace.datagen import DatagenConfig, generate_dataset
        from openrace.labels import MISS_ID
        from openrace.recording import SessionRecorder, load_record
        from openrace.render import load_depth_raw, load_normals_raw, load_semantic_png

        t0 = time.monotonic()
        # 30 s at 30 Hz -> 900 captures, recorded offline (no server needed)
        settings = SessionSettings(noise=NoiseModel(seed=9), spawn_speed=12.0)
        core = CoreSession(oval, gt3, settings)
        recorder = SessionRecorder(tmp_path / "rec", oval, gt3, settings)
        image = np.zeros((18, 32), dtype=np.uint8)
        last_ins = None
        while core.state.sim_time < 30.0 - 1e-9:
            state = core.state
            herr = (state.heading - oval.heading_at(state.s) + math.pi) % (2 * math.pi) - math.pi
            steer = min(1.0, max(-1.0, 0.3 * state.d / 6.0 + 1.2 * herr))
            core.set_control(
                ControlCommand(throttle=min(1.0, max(0.0, 0.3 + (16.0 - state.vx) / 16.0)),
                               steering=steer)
            )
            result = core.tick()
            if result.state_due:
                recorder.add_state(result.state)
                last_ins = result.ins
            if result.frame_due and last_ins is not None:
                recorder.add_capture(image, result.state, last_ins)
        recorder.close(complete=True)
        record = load_record(tmp_path / "rec")
        assert abs(len(record.entries) - 900) <= 1

        config = DatagenConfig(width=320, height=180)
        manifest_a = generate_dataset(record, oval, tmp_path / "a", config)
        assert manifest_a["frame_count"] == len(record.entries)

        # hit/miss consistency across the three maps on a sample of frames
        for meta in manifest_a["frames"][:: 90]:
            sem = load_semantic_png(tmp_path / "a" / meta["semantic"])
            depth = load_depth_raw(tmp_path / "a" / meta["depth"])
            normals = load_normals_raw(tmp_path / "a" / meta["normal"])
            hit = sem != MISS_ID
            assert np.isfinite(depth[hit]).all() and np.isinf(depth[~hit]).all()
            assert (np.abs(np.linalg.norm(normals[hit], axis=-1) - 1.0) < 1e-5).all()
            assert (normals[~hit] == 0.0).all()

        # regeneration is byte-identical
        generate_dataset(record, oval, tmp_path / "b", config)

        def digest(root: Path) -> dict:
            return {
                str(p.relative_to(root)): hashlib.sha256(p.read_bytes()).hexdigest()
                for p in sorted(root.rglob("*"))
                if p.is_file()
            }

        assert digest(tmp_path / "a") == digest(tmp_path / "b")

        elapsed = time.monotonic() - t0
        assert elapsed < 600.0, f"runtime {elapsed:.1f}s exceeds 10min budget"
        report("dataset generation (900 triples, byte-identical regen, hit/miss consistent)")
