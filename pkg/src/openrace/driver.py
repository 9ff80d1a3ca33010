"""Full-stack autonomous driver: perceive, map, localize, plan, control.

The pipeline runs three concurrent activities over one driver connection:

* a network pump sorting STATE and FRAME traffic (client.ClientPump),
* a perception worker turning the newest frame into a track observation,
* the control loop, which advances localization on every STATE, fuses
  observations into the circuit map during warm-up, computes the racing
  line once the map closes, and emits a CONTROL for every STATE received,
  re-solving the MPC at a configurable divisor of the state rate and
  holding the last command in between (control emission is never blocked
  by perception or planning).

Driving before the map closes uses a perception-only pursuit of the local
centerline estimate at a fixed cruise speed.
"""

from __future__ import annotations

import math
import threading
import time
from dataclasses import dataclass, field

import numpy as np

from . import wire
from .client import ClientPump, RaceClient
from .localization import Localizer, LocalizerConfig, initial_pose
from .mapping import CircuitMap, PoseLike, maybe_close, note_travel, update_map
from .mpc import MpcParams, MpcTracker, PlannerPose, VehicleLimits, mpc_step, pure_pursuit
from .perception import CameraMount, EdgeExtractor, LocalTrackObservation
from .raceline import RacingLine, compute_racing_line
from .vehicle import ControlCommand


@dataclass
class DriverConfig:
    cruise_speed: float = 13.0  # m/s during mapping
    ready_after_laps: int = 3
    mpc_divisor: int = 4  # solve every Nth STATE message
    raceline_margin: float = 2.0
    raceline_mu: float = 0.85
    raceline_accel: float = 3.5
    raceline_brake: float = 6.0
    raceline_vcap: float = 45.0
    mpc: MpcParams = field(default_factory=MpcParams)
    localizer: LocalizerConfig | None = None
    diagnostics_every_states: int = 10
    map_snapshot_every_states: int = 100
    max_drive_s: float | None = None  # wall-clock safety stop
    debug_truth: bool = False  # use server truth poses (isolation testing)


@dataclass
class DriveOutcome:
    laps: int = 0
    sim_time: float = 0.0
    states_seen: int = 0
    controls_sent: int = 0
    frames_used: int = 0
    map_closed: bool = False
    raceline_ready: bool = False
    ready_sent: bool = False
    reason: str = ""
    pose_log: list = field(default_factory=list)  # (tick, x, y, heading)


class Driver:
    def __init__(self, host: str, port: int, config: DriverConfig | None = None):
        self.config = config or DriverConfig()
        self.client = RaceClient(host, port)
        ack = self.client.hello("driver")
        if ack.get("role") != "driver":
            raise ConnectionError(f"driver slot refused: {ack}")
        info = self.client.session_info
        self.info = info
        self.mount = CameraMount.from_session_info(info)
        self.extractor = EdgeExtractor(self.mount)
        self.limits = VehicleLimits.from_session_info(info)
        self.state_dt = info["physics_dt"] * round(1.0 / (info["physics_dt"] * info["state_hz"]))
        loc_cfg = self.config.localizer or LocalizerConfig.from_noise_info(
            info.get("noise", {}), self.state_dt
        )
        self.localizer_config = loc_cfg
        from .ins import NoiseModel

        noise_info = info.get("noise", {})
        self.gps_anchor = NoiseModel(
            origin_lat=noise_info.get("origin_lat", 0.0),
            origin_lon=noise_info.get("origin_lon", 0.0),
        )
        self.debug_truth_available = bool(info.get("debug_truth"))

        self.pump = ClientPump(self.client)
        self.cmap = CircuitMap()
        self.line: RacingLine | None = None
        self.tracker = MpcTracker(self.limits, self.config.mpc)
        self.outcome = DriveOutcome()
        self._stop = threading.Event()
        self._obs_lock = threading.Lock()
        self._latest_obs: LocalTrackObservation | None = None
        self._obs_serial = 0
        self._line_building = False
        self._pp_hint: int | None = None
        self._pose_hist: list[list[float]] = []  # [tick, x, y, heading]

    # -- perception worker -------------------------------------------------------

    def _perception_loop(self) -> None:
        last_serial = -1
        while not self._stop.is_set():
            try:
                frame, serial = self.pump.latest_frame()
                if frame is None or serial == last_serial:
                    time.sleep(0.002)
                    continue
                last_serial = serial
                if frame.repeat:
                    continue
                obs = self.extractor.observe(frame.image(), tick=frame.tick)
                if obs.usable:
                    with self._obs_lock:
                        self._latest_obs = obs
                        self._obs_serial += 1
                    self.outcome.frames_used += 1
            except Exception as exc:  # noqa: BLE001 - keep perceiving on bad frames
                self.outcome.reason = f"perception error: {exc}"
                time.sleep(0.05)

    def _take_observation(self, max_age_ticks: int, now_tick: int):
        with self._obs_lock:
            obs = self._latest_obs
        if obs is None or now_tick - obs.tick > max_age_ticks:
            return None
        return obs

    # -- raceline worker -----------------------------------------------------------

    def _build_raceline(self) -> None:
        try:
            corridor = self.cmap.to_corridor()
        except Exception as exc:  # noqa: BLE001
            self.outcome.reason = f"raceline corridor failed: {exc}"
            self._line_building = False
            return
        try:
            cfg = self.config
            line = compute_racing_line(
                corridor,
                margin=cfg.raceline_margin,
                mu=cfg.raceline_mu,
                a_max=cfg.raceline_accel,
                b_max=cfg.raceline_brake,
                v_cap=cfg.raceline_vcap,
            )
            self.line = line
            self.outcome.raceline_ready = True
        except Exception as exc:  # noqa: BLE001
            self.outcome.reason = f"raceline failed: {exc}"
        finally:
            self._line_building = False

    # -- diagnostics -----------------------------------------------------------------

    def _send_diag_pose(self, tick: int, pose, planned: np.ndarray | None) -> None:
        obj = {
            "tick": tick,
            "x": pose.x,
            "y": pose.y,
            "heading": pose.heading,
            "velocity": pose.velocity,
            "cov_trace": pose.trace,
        }
        try:
            self.client.send(wire.MsgType.DIAG_POSE, wire.encode_json_payload(obj))
            if planned is not None:
                plan = {"tick": tick, "points": np.round(planned[:, :2], 3).tolist()}
                self.client.send(wire.MsgType.DIAG_PLAN, wire.encode_json_payload(plan))
        except OSError:
            pass

    def _send_diag_map(self) -> None:
        if len(self.cmap) < 8:
            return
        stride = max(1, len(self.cmap) // 400)
        obj = {
            "closed": self.cmap.closed,
            "length": self.cmap.length,
            "points": np.round(self.cmap.points[::stride], 2).tolist(),
        }
        try:
            self.client.send(wire.MsgType.DIAG_MAP, wire.encode_json_payload(obj))
        except OSError:
            pass

    def _send_diag_observation(self, obs: LocalTrackObservation) -> None:
        obj = {
            "tick": obs.tick,
            "centerline": np.round(obs.centerline, 2).tolist(),
            "left": np.round(obs.left_edge, 2).tolist(),
            "right": np.round(obs.right_edge, 2).tolist(),
        }
        try:
            self.client.send(wire.MsgType.DIAG_OBSERVATION, wire.encode_json_payload(obj))
        except OSError:
            pass

    # -- warm-up pursuit ---------------------------------------------------------------

    def _warmup_command(
        self, obs: LocalTrackObservation | None, speed: float, last: ControlCommand
    ) -> ControlCommand:
        cfg = self.config
        if self.line is not None:
            pose = self._pose_planner()
            cmd, self._pp_hint = pure_pursuit(pose, speed, self.line, self.limits, self._pp_hint)
            return cmd
        if obs is None or not obs.usable:
            # Blind: slow down on the last known steering rather than
            # charging straight into the unknown.
            if speed > 10.0:
                return ControlCommand(brake=0.2, steering=last.steering)
            return ControlCommand(
                throttle=0.15 if speed < 5.0 else 0.0, steering=last.steering
            )
        look = min(max(6.0, 0.9 * speed), obs.centerline[-1, 0])
        target = None
        for row in obs.centerline:
            if row[0] >= look:
                target = row
                break
        if target is None:
            target = obs.centerline[-1]
        lx, ly = float(target[0]), float(target[1])
        kappa = 2.0 * ly / max(lx * lx + ly * ly, 1e-6)
        bound = self.limits.steer_bound(speed)
        delta = float(np.clip(math.atan(self.limits.wheelbase * kappa), -bound, bound))
        steering = float(np.clip(-delta / self.limits.max_wheel_angle, -1.0, 1.0))
        accel = float(np.clip(0.6 * (cfg.cruise_speed - speed), -3.0, 2.5))
        force = self.limits.mass * accel + 0.4 * self.limits.drag_area * speed * speed
        if force >= 0:
            return ControlCommand(
                throttle=float(np.clip(force / self.limits.engine_force, 0.0, 1.0)),
                steering=steering,
            )
        return ControlCommand(
            brake=float(np.clip(-force / self.limits.brake_force, 0.0, 1.0)), steering=steering
        )

    def _pose_planner(self) -> PlannerPose:
        p = self.localizer.pose
        return PlannerPose(p.x, p.y, p.heading)

    def _remember_pose(self, tick: int) -> None:
        p = self.localizer.pose
        self._pose_hist.append([tick, p.x, p.y, p.heading])
        if len(self._pose_hist) > 240:
            del self._pose_hist[:80]

    def _pose_at(self, tick: int) -> tuple[float, float, float] | None:
        best = None
        for entry in reversed(self._pose_hist):
            if best is None or abs(entry[0] - tick) < abs(best[0] - tick):
                best = entry
            if entry[0] <= tick:
                break
        if best is None:
            return None
        return best[1], best[2], best[3]

    def _shift_history(self, dx: float, dy: float, dth: float) -> None:
        for entry in self._pose_hist:
            entry[1] += dx
            entry[2] += dy
            entry[3] += dth

    # -- main loop ------------------------------------------------------------------------

    def run(self) -> DriveOutcome:
        cfg = self.config
        out = self.outcome
        perception = threading.Thread(target=self._perception_loop, daemon=True, name="perception")
        perception.start()
        start_wall = time.time()

        # Bootstrap the pose from the first driver STATE (GPS fix or truth).
        first = self.pump.next_state(timeout=20.0)
        if first is None:
            out.reason = "no state traffic"
            self._stop.set()
            return out
        self.localizer = Localizer(
            self._bootstrap_pose(first), self.localizer_config, self.gps_anchor
        )

        laps = 0
        lap_s_prev: float | None = None
        cmd = ControlCommand()
        state_count = 0
        used_obs_serial = -1
        last_tick = first.tick if first.channels else 0

        while not self._stop.is_set():
            if cfg.max_drive_s is not None and time.time() - start_wall > cfg.max_drive_s:
                out.reason = "wall clock limit"
                break
            payload = self.pump.next_state(timeout=5.0)
            if payload is None:
                if not self.pump.alive:
                    out.reason = "connection closed"
                    break
                continue
            while not self.pump.sessions.empty():
                evt = self.pump.sessions.get_nowait()
                if evt.get("event") == "session_end":
                    out.reason = "session end"
                    self._stop.set()
            if self._stop.is_set():
                break

            out.states_seen += 1
            state_count += 1
            ins = payload.ins
            speed = payload.speed if payload.speed is not None else 0.0
            tick = payload.tick
            if ins is not None:
                self.localizer.predict(ins, self.state_dt)
                self.localizer.correct_gps(ins)
                out.sim_time = ins.ins_timestamp
                tick = max(tick, int(round(ins.ins_timestamp / self.info["physics_dt"])))
            if cfg.debug_truth and payload.channels is not None:
                self._follow_truth(payload.channels)

            self._remember_pose(tick)
            obs = self._take_observation(max_age_ticks=70, now_tick=tick)
            if obs is not None and self._obs_serial != used_obs_serial:
                used_obs_serial = self._obs_serial
                stale = self._pose_at(obs.tick)
                if len(self.cmap) >= 32:
                    before = self.localizer.pose
                    if self.localizer.correct_map(obs, self.cmap, stale_pose=stale):
                        after = self.localizer.pose
                        self._shift_history(
                            after.x - before.x, after.y - before.y, after.heading - before.heading
                        )
                        stale = self._pose_at(obs.tick)
                pose = self.localizer.pose
                map_pose = stale if stale is not None else (pose.x, pose.y, pose.heading)
                if not self.cmap.closed:
                    update_map(self.cmap, obs, PoseLike(*map_pose))
                    if maybe_close(self.cmap, PoseLike(pose.x, pose.y, pose.heading)):
                        out.map_closed = True
                        if not self._line_building and self.line is None:
                            self._line_building = True
                            threading.Thread(
                                target=self._build_raceline, daemon=True, name="raceline"
                            ).start()
                self._send_diag_observation(obs)
            if not self.cmap.closed:
                note_travel(self.cmap, speed * self.state_dt)

            # Lap counting from the driver's own arc position on its map.
            if self.cmap.closed and len(self.cmap) > 64:
                s_here, _, _ = self.cmap.project(
                    (self.localizer.pose.x, self.localizer.pose.y)
                )
                if lap_s_prev is not None:
                    total = self.cmap.length
                    if lap_s_prev > total - 30.0 and s_here < 30.0:
                        laps += 1
                        out.laps = laps
                        if (
                            laps >= cfg.ready_after_laps
                            and self.line is not None
                            and not out.ready_sent
                        ):
                            try:
                                self.client.send_session({"cmd": "ready"})
                                out.ready_sent = True
                            except OSError:
                                pass
                lap_s_prev = s_here

            # Control: MPC at the divisor cadence once the line exists.
            planned = None
            if self.line is not None and state_count % cfg.mpc_divisor == 0:
                cmd, solution = mpc_step(self._pose_planner(), speed, self.line, self.tracker)
                planned = solution.states
            elif self.line is None and state_count % 2 == 0:
                cmd = self._warmup_command(obs, speed, cmd)
            try:
                self.client.send_control(cmd)
                out.controls_sent += 1
            except OSError:
                out.reason = "connection lost"
                break

            pose = self.localizer.pose
            out.pose_log.append((tick, pose.x, pose.y, pose.heading))
            if state_count % cfg.diagnostics_every_states == 0:
                self._send_diag_pose(tick, pose, planned)
            if state_count % cfg.map_snapshot_every_states == 0:
                self._send_diag_map()

        self._stop.set()
        self.pump.stop()
        if not out.reason:
            out.reason = "stopped"
        return out

    def _bootstrap_pose(self, payload):
        from .ins import local_from_latlon

        if payload.channels is not None:
            ch = payload.channels
            return initial_pose(ch["x"], ch["y"], ch["heading"], ch["speed"])
        ins = payload.ins
        x, y = local_from_latlon(ins.gps_lat, ins.gps_lon, self.gps_anchor)
        heading = (math.pi / 2.0 - ins.gps_heading) % (2.0 * math.pi)
        heading = (heading + math.pi) % (2.0 * math.pi) - math.pi
        return initial_pose(x, y, heading, ins.odometer_speed)

    def _follow_truth(self, channels: dict) -> None:
        """Debug-truth mode: pin the pose estimate to the simulator truth."""
        from .localization import PoseEstimate

        self.localizer.pose = PoseEstimate(
            x=channels["x"],
            y=channels["y"],
            heading=channels["heading"],
            velocity=channels["speed"],
            covariance=np.eye(3) * 1e-6,
        )

    def stop(self) -> None:
        self._stop.set()


def run_driver(host: str, port: int, config: DriverConfig | None = None) -> DriveOutcome:
    driver = Driver(host, port, config)
    try:
        return driver.run()
    except Exception as exc:  # noqa: BLE001 - surfaced via the outcome
        import traceback

        driver.outcome.reason = f"driver crashed: {exc}\n{traceback.format_exc()}"
        return driver.outcome
    finally:
        driver.stop()
