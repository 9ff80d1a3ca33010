"""Single-vehicle simulation session: physics cadence, INS and event flags.

``CoreSession`` owns one vehicle on one track and advances it tick by tick at
the fixed physics rate, reporting when a state emission (default 100 Hz) or a
frame emission (default 30 Hz) is due.  It is transport-agnostic: the TCP
server, the recorder and the tests all drive the same object.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

from .ins import InsReading, InsState, NoiseModel, simulate_ins
from .track import TrackDefinition
from .vehicle import (
    PHYSICS_DT,
    PHYSICS_HZ,
    ControlCommand,
    GroundTruthState,
    VehicleParams,
    initial_state,
    step,
)


@dataclass
class SessionSettings:
    state_hz: float = 100.0
    frame_hz: float = 30.0
    frame_width: int = 640
    frame_height: int = 360
    camera: str = "chase"
    hfov: float = 1.4
    noise: NoiseModel = field(default_factory=NoiseModel)
    debug_truth: bool = False
    initial_fuel: float = 60.0
    spawn_s: float | None = None
    spawn_speed: float = 0.0
    spawn_d: float = 0.0
    wear_enabled: bool = True
    mesh_resolution: float = 1.0

    def __post_init__(self) -> None:
        if not (0 < self.state_hz <= PHYSICS_HZ):
            raise ValueError(f"state_hz {self.state_hz} outside (0, {PHYSICS_HZ}]")
        if not (0 < self.frame_hz <= PHYSICS_HZ):
            raise ValueError(f"frame_hz {self.frame_hz} outside (0, {PHYSICS_HZ}]")

    @property
    def state_every(self) -> int:
        return max(1, round(PHYSICS_HZ / self.state_hz))

    @property
    def frame_every(self) -> int:
        return max(1, round(PHYSICS_HZ / self.frame_hz))

    @property
    def state_dt(self) -> float:
        return self.state_every * PHYSICS_DT


@dataclass
class TickResult:
    state: GroundTruthState
    state_due: bool
    frame_due: bool
    ins: InsReading | None


class CoreSession:
    def __init__(
        self,
        track: TrackDefinition,
        params: VehicleParams,
        settings: SessionSettings | None = None,
    ):
        self.track = track
        self.params = params
        self.settings = settings or SessionSettings()
        self.command = ControlCommand()
        self.clamp_warnings = 0
        self._ins_state = InsState.fresh(self.settings.noise)
        self.state = self._spawn(
            self.settings.spawn_s, self.settings.spawn_speed, self.settings.spawn_d
        )

    def _spawn(self, s: float | None, speed: float, d: float) -> GroundTruthState:
        st = initial_state(
            self.track,
            self.params,
            s=s,
            speed=speed,
            d=d,
            fuel=self.settings.initial_fuel,
        )
        st.extras["wear_enabled"] = 1.0 if self.settings.wear_enabled else 0.0
        return st

    def set_control(self, cmd: ControlCommand) -> None:
        """Zero-order hold: the latest command applies from the next tick on."""
        _, clamped = cmd.clamped()
        if clamped:
            self.clamp_warnings += 1
        self.command = cmd

    def reset(self, s: float | None = None, speed: float = 0.0, d: float = 0.0) -> GroundTruthState:
        """Respawn the vehicle; tick/time continue, dynamics state is fresh."""
        tick = self.state.tick
        sim_time = self.state.sim_time
        st = self._spawn(s, speed, d)
        self.state = replace(st, tick=tick, sim_time=sim_time)
        self.command = ControlCommand()
        return self.state

    def tick(self) -> TickResult:
        self.state = step(self.state, self.command, self.params, self.track, PHYSICS_DT)
        t = self.state.tick
        state_due = t % self.settings.state_every == 0
        frame_due = t % self.settings.frame_every == 0
        ins = None
        if state_due:
            ins, self._ins_state = simulate_ins(
                self.state, self.settings.noise, self._ins_state, self.settings.state_dt
            )
        return TickResult(state=self.state, state_due=state_due, frame_due=frame_due, ins=ins)

    def run(self, sim_seconds: float, on_tick=None) -> GroundTruthState:
        """Advance without any I/O; handy for tests and offline replays."""
        n = round(sim_seconds * PHYSICS_HZ)
        for _ in range(n):
            result = self.tick()
            if on_tick is not None:
                on_tick(result)
        return self.state
