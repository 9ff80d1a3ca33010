"""Episodic racing environment with privileged observations and a curriculum.

The environment drives a lockstep session: each step sends the action,
advances the simulation by a fixed number of physics ticks, and builds the
observation from the ground truth the server streams back (the privileged
channel, unlike the driver interface).  Rewards combine raceline progress
with a speed bonus whose cap rises through a success-count curriculum, plus
a terminal penalty for leaving the track or crashing.

A scripted pursuit policy is included to validate the environment end to
end without any learning in the loop.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import wire
from .client import RaceClient
from .raceline import RacingLine, compute_racing_line
from .track import TrackDefinition
from .vehicle import ControlCommand

OBSERVATION_SIZE = 44
CURVATURE_SAMPLES = 30
CURVATURE_SPACING = 10.0


@dataclass(frozen=True)
class CurriculumState:
    successful_episode_count: int = 0
    buffer_episode_threshold: int = 50
    cap_level: int = 0
    speed_reward_cap: float = 0.0
    cap_initial: float = 0.0
    cap_increment: float = 0.5
    uncap_after_levels: int = 20
    cap_uncapped: bool = False

    @property
    def cap(self) -> float:
        return math.inf if self.cap_uncapped else self.speed_reward_cap


def curriculum_update(state: CurriculumState, result: "EpisodeResult") -> CurriculumState:
    """Advance the cap after an episode: only successes ever move it."""
    if result.reason != "lap_complete":
        return state
    count = state.successful_episode_count + 1
    level = max(0, count - state.buffer_episode_threshold + 1)
    level = max(level, state.cap_level)  # never regress
    uncapped = level >= state.uncap_after_levels
    return replace(
        state,
        successful_episode_count=count,
        cap_level=level,
        speed_reward_cap=state.cap_initial + level * state.cap_increment,
        cap_uncapped=uncapped,
    )


def reward(
    progress: float,
    speed: float,
    curriculum: CurriculumState,
    violation: bool,
    speed_bonus_coef: float = 0.01,
    violation_penalty: float = 10.0,
) -> float:
    bonus = min(speed_bonus_coef * speed * speed, curriculum.cap)
    return progress + bonus - (violation_penalty if violation else 0.0)


@dataclass(frozen=True)
class EpisodeResult:
    reason: str  # lap_complete | track_limit | crash | timeout
    laps: int
    total_reward: float
    lap_time: float | None = None

    def __post_init__(self) -> None:
        if self.reason not in ("lap_complete", "track_limit", "crash", "timeout"):
            raise ValueError(f"unknown termination reason {self.reason!r}")
        if (self.reason == "lap_complete") != (self.lap_time is not None):
            raise ValueError("lap_time present iff lap_complete")


@dataclass
class EnvConfig:
    agent_period_ticks: int = 10
    laps_per_episode: int = 1
    timeout_s: float = 600.0
    offtrack_grace_s: float = 0.5
    spawn_s: float | None = None  # None = start line
    spawn_speed: float = 15.0
    spawn_jitter_s: float = 0.0  # uniform +- jitter on spawn arc position
    raceline_margin: float = 2.0
    raceline_mu: float = 0.9
    raceline_vcap: float = 48.0
    speed_bonus_coef: float = 0.01
    violation_penalty: float = 10.0
    curriculum: CurriculumState = field(default_factory=CurriculumState)


class RacingEnv:
    """Gym-style episodic interface over a lockstep session.

    The server must run with ``pace='lockstep'`` and ``debug_truth`` so the
    driver channel carries ground truth; the environment is privileged by
    design and says so in its metadata.
    """

    metadata = {"observation": "privileged ground truth", "size": OBSERVATION_SIZE}

    def __init__(
        self,
        host: str,
        port: int,
        track: TrackDefinition,
        config: EnvConfig | None = None,
        line: RacingLine | None = None,
    ):
        self.config = config or EnvConfig()
        self.track = track
        self.client = RaceClient(host, port)
        ack = self.client.hello("driver")
        info = ack.get("session", {})
        if info.get("pace") != "lockstep":
            raise ConnectionError("RacingEnv requires a lockstep session")
        if not info.get("debug_truth"):
            raise ConnectionError("RacingEnv requires a debug_truth session")
        self.line = line or compute_racing_line(
            track,
            margin=self.config.raceline_margin,
            mu=self.config.raceline_mu,
            v_cap=self.config.raceline_vcap,
        )
        self._physics_dt = info.get("physics_dt", 1.0 / 300.0)
        state_hz = info.get("state_hz", 100.0)
        self._state_every = max(1, round(1.0 / (self._physics_dt * state_hz)))
        self._rng = np.random.default_rng(0)
        self._active = False
        self._line_hint: int | None = None
        self._line_s: float = 0.0
        self._offtrack_time = 0.0
        self._episode_reward = 0.0
        self._laps = 0
        self._episode_time0 = 0.0
        self._lap_time_acc = 0.0
        self.curriculum = self.config.curriculum
        self.last_channels: dict | None = None

    # -- wire helpers ------------------------------------------------------------

    def _advance(self, ticks: int) -> list[dict]:
        """Advance the lockstep clock; returns truth channel dicts received."""
        self.client.send_session({"cmd": "advance", "ticks": ticks})
        states: list[dict] = []
        while True:
            msg = self.client.recv()
            if msg.type == wire.MsgType.STATE:
                payload = wire.decode_state_payload(msg.payload)
                if payload.channels is not None:
                    states.append(payload.channels)
            elif msg.type == wire.MsgType.ACK:
                obj = wire.decode_json_payload(msg.payload)
                if "advanced" in obj:
                    return states
            elif msg.type == wire.MsgType.ERROR:
                raise ConnectionError(f"server error: {wire.decode_json_payload(msg.payload)}")

    # -- observation --------------------------------------------------------------

    def _observe(self, ch: dict) -> np.ndarray:
        line = self.line
        s_line, d_line, self._line_hint = line.project((ch["x"], ch["y"]), hint=self._line_hint)
        self._line_s = s_line
        kappas = [
            line.curvature_at(s_line + CURVATURE_SPACING * k)
            for k in range(1, CURVATURE_SAMPLES + 1)
        ]
        slips = []
        ratios = []
        for w in ("fl", "fr", "rl", "rr"):
            slips.append(ch[f"tyre_{w}_slip_angle"])
            ratios.append(ch[f"tyre_{w}_slip_ratio"])
        left_w, right_w = self.track.widths_at(ch["lap_progress_s"])
        d_track = ch["lateral_offset_d"]
        obs = np.array(
            kappas
            + slips
            + ratios
            + [
                ch["vx"],
                ch["vy"],
                ch["yaw_rate"],
                d_line,
                left_w + d_track,  # distance to the left track limit
                right_w - d_track,  # distance to the right track limit
            ],
            dtype=np.float64,
        )
        assert obs.shape == (OBSERVATION_SIZE,)
        return obs

    # -- episode control ---------------------------------------------------------------

    def reset(self, seed: int | None = None) -> np.ndarray:
        if seed is not None:
            self._rng = np.random.default_rng(seed)
        cfg = self.config
        spawn = cfg.spawn_s if cfg.spawn_s is not None else self.track.start_line_s
        if cfg.spawn_jitter_s > 0.0:
            spawn += float(self._rng.uniform(-cfg.spawn_jitter_s, cfg.spawn_jitter_s))
        self.client.send_session(
            {"cmd": "reset", "s": self.track.wrap_s(spawn), "speed": cfg.spawn_speed}
        )
        self.client.wait_for(wire.MsgType.ACK)
        states = self._advance(self._state_every)
        ch = states[-1]
        self.last_channels = ch
        self._active = True
        self._offtrack_time = 0.0
        self._episode_reward = 0.0
        self._laps = 0
        self._line_hint = None
        self._episode_time0 = ch["sim_time"]
        self._lap_count0 = ch["lap_count"]
        obs = self._observe(ch)
        return obs

    def step(self, action: ControlCommand) -> tuple[np.ndarray, float, bool, EpisodeResult | None]:
        if not self._active:
            raise RuntimeError("step() after episode termination; call reset()")
        cfg = self.config
        s_before = self._line_s
        self.client.send_control(action)
        states = self._advance(cfg.agent_period_ticks)
        ch = states[-1]
        self.last_channels = ch

        # Off-track accounting from every intermediate truth sample.
        state_dt = cfg.agent_period_ticks * self._physics_dt / max(len(states), 1)
        for sample in states:
            if sample["track_limit_margin"] < 0.0:
                self._offtrack_time += state_dt
            else:
                self._offtrack_time = 0.0

        obs = self._observe(ch)
        s_after = self._line_s
        progress = s_after - s_before
        if self.line.closed and progress < -0.5 * self.line.length:
            progress += self.line.length
        elif self.line.closed and progress > 0.5 * self.line.length:
            progress -= self.line.length

        laps_done = int(ch["lap_count"] - self._lap_count0)
        terminated = False
        result = None
        violation = False
        if ch["crashed"] > 0.0:
            terminated, reason = True, "crash"
            violation = True
        elif self._offtrack_time > cfg.offtrack_grace_s:
            terminated, reason = True, "track_limit"
            violation = True
        elif laps_done >= cfg.laps_per_episode:
            terminated, reason = True, "lap_complete"
        elif ch["sim_time"] - self._episode_time0 >= cfg.timeout_s:
            terminated, reason = True, "timeout"

        r = reward(
            progress,
            ch["speed"],
            self.curriculum,
            violation,
            cfg.speed_bonus_coef,
            cfg.violation_penalty,
        )
        self._episode_reward += r
        if terminated:
            self._active = False
            lap_time = ch["last_lap_time"] if reason == "lap_complete" else None
            result = EpisodeResult(
                reason=reason,
                laps=laps_done,
                total_reward=self._episode_reward,
                lap_time=lap_time,
            )
            self.curriculum = curriculum_update(self.curriculum, result)
        return obs, r, terminated, result

    def close(self) -> None:
        self.client.close()


class ScriptedBaseline:
    """Deterministic pursuit policy over the privileged observation.

    Steering blends curvature feedforward at a speed-scaled lookahead with
    PD feedback on the distance to the racing line; the throttle chases the
    most restrictive braking-aware corner speed visible in the curvature
    horizon.  Stateful only through the previous lateral distance.
    """

    def __init__(
        self,
        wheelbase: float = 2.65,
        max_wheel_angle: float = 0.42,
        mu: float = 0.85,
        speed_scale: float = 0.92,
        v_cap: float = 46.0,
        dt: float = 1.0 / 30.0,
    ):
        self.wheelbase = wheelbase
        self.max_wheel_angle = max_wheel_angle
        self.mu = mu
        self.speed_scale = speed_scale
        self.v_cap = v_cap
        self.dt = dt
        self._prev_d: float | None = None

    def __call__(self, obs: np.ndarray) -> ControlCommand:
        kappas = obs[:CURVATURE_SAMPLES]
        vx, vy, _yaw = obs[38], obs[39], obs[40]
        d_line = obs[41]
        speed = math.hypot(vx, vy)

        look = min(max(10.0, 0.9 * speed), 290.0)
        idx = min(CURVATURE_SAMPLES - 1, max(0, int(look / CURVATURE_SPACING) - 1))
        kappa_ff = float(kappas[idx])

        d_rate = 0.0 if self._prev_d is None else (d_line - self._prev_d) / self.dt
        self._prev_d = d_line

        # Positive d_line = right of the line; positive delta steers left.
        delta = math.atan(self.wheelbase * kappa_ff) + 0.08 * d_line + 0.05 * d_rate
        bound = math.atan(self.wheelbase * (self.mu * 9.80665) / max(speed, 3.0) ** 2)
        delta = max(-bound, min(bound, delta))
        steering = max(-1.0, min(1.0, -delta / self.max_wheel_angle))

        # Braking-aware target: each curvature sample caps the speed we may
        # carry right now given the braking distance to reach it.
        g = 9.80665
        brake = 6.0
        v_target = self.v_cap
        for k in range(CURVATURE_SAMPLES):
            kap = abs(float(kappas[k]))
            v_corner = self.speed_scale * math.sqrt(self.mu * g / max(kap, 1e-6))
            dist = CURVATURE_SPACING * (k + 1)
            v_now = math.sqrt(v_corner * v_corner + 2.0 * brake * dist)
            v_target = min(v_target, v_corner if k == 0 else v_now)
        v_target = min(v_target, self.v_cap)

        err = v_target - speed
        if err >= 0.0:
            throttle = min(1.0, 0.25 + 0.35 * err)
            return ControlCommand(throttle=throttle, steering=steering)
        return ControlCommand(brake=min(1.0, 0.35 * -err), steering=steering)


def scripted_baseline(observation: np.ndarray, _policy=ScriptedBaseline()) -> ControlCommand:
    """Module-level convenience wrapper sharing one policy instance."""
    return _policy(observation)
