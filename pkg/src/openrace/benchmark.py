"""Lap benchmarks: flying single lap, five-lap consistency, twenty-lap runs.

Timing is computed harness-side from the observer's ground-truth stream:
start-line crossings are detected geometrically and interpolated between
state samples, so lap times do not depend on the simulator's own counters.
A timed lap is invalid once the vehicle spends more than the configured
cumulative time beyond the track limits; any invalid timed lap fails the
whole benchmark, which is the multi-lap consistency bar.
"""

from __future__ import annotations

import json
import math
import subprocess
import threading
import time
from dataclasses import dataclass, field
from decimal import ROUND_HALF_UP, Decimal

import numpy as np

from . import wire
from .client import RaceClient
from .server import RaceServer, ServerConfig, ServerHandle
from .session import SessionSettings
from .track import TrackDefinition
from .vehicle import VehicleParams


@dataclass(frozen=True)
class BenchmarkProtocol:
    kind: str  # single | five | twenty
    timed_laps: int
    warmup_cap: int = 10  # laps before timing starts even without a ready signal
    violation_budget_s: float = 0.2  # cumulative off-track seconds per lap

    def __post_init__(self) -> None:
        expected = {"single": 1, "five": 5, "twenty": 20}
        if self.kind not in expected:
            raise ValueError(f"unknown protocol kind {self.kind!r}")
        if expected[self.kind] != self.timed_laps:
            raise ValueError(f"{self.kind} protocol must time {expected[self.kind]} laps")


PROTOCOLS = {
    "single": BenchmarkProtocol("single", 1),
    "five": BenchmarkProtocol("five", 5),
    "twenty": BenchmarkProtocol("twenty", 20),
}


@dataclass
class LapResult:
    index: int
    time_s: float
    valid: bool
    violation_s: float
    fuel_used_kg: float = 0.0
    mean_tyre_temp: float = 0.0
    max_tyre_temp: float = 0.0
    max_wear: float = 0.0


@dataclass
class BenchmarkReport:
    track: str
    vehicle: str
    protocol: str
    laps: list[LapResult]
    completed: bool
    failure_reason: str = ""
    warmup_laps: int = 0

    @property
    def valid_times(self) -> list[float]:
        return [lap.time_s for lap in self.laps if lap.valid]

    @property
    def mean_s(self) -> float | None:
        times = self.valid_times
        return float(np.mean(times)) if times else None

    @property
    def std_s(self) -> float | None:
        times = self.valid_times
        if len(times) < 2:
            return 0.0 if times else None
        return float(np.std(times, ddof=1))

    @property
    def passed(self) -> bool:
        return self.completed and all(lap.valid for lap in self.laps)

    def formatted(self) -> str:
        if self.mean_s is None:
            return "no valid laps"
        if len(self.valid_times) == 1:
            return format_laptime(self.mean_s)
        return f"{format_laptime(self.mean_s)} ± {format_seconds(self.std_s)}"

    def to_dict(self) -> dict:
        return {
            "track": self.track,
            "vehicle": self.vehicle,
            "protocol": self.protocol,
            "passed": self.passed,
            "completed": self.completed,
            "failure_reason": self.failure_reason,
            "warmup_laps": self.warmup_laps,
            "mean_s": self.mean_s,
            "std_s": self.std_s,
            "formatted": self.formatted(),
            "laps": [vars(lap) for lap in self.laps],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1)

    def text_table(self) -> str:
        rows = [
            ("lap", "time", "valid", "offtrack s", "fuel kg", "tyre mean/max C", "wear"),
        ]
        for lap in self.laps:
            rows.append(
                (
                    str(lap.index),
                    format_laptime(lap.time_s),
                    "yes" if lap.valid else "NO",
                    f"{lap.violation_s:.2f}",
                    f"{lap.fuel_used_kg:.2f}",
                    f"{lap.mean_tyre_temp:.0f}/{lap.max_tyre_temp:.0f}",
                    f"{lap.max_wear:.3f}",
                )
            )
        widths = [max(len(r[i]) for r in rows) for i in range(len(rows[0]))]
        lines = ["  ".join(cell.ljust(w) for cell, w in zip(row, widths)) for row in rows]
        header = (
            f"{self.track} / {self.vehicle} / {self.protocol}-lap: {self.formatted()}"
            f"  [{'PASS' if self.passed else 'FAIL'}{': ' + self.failure_reason if self.failure_reason else ''}]"
        )
        return "\n".join([header] + lines)


def format_laptime(seconds: float) -> str:
    """m:s.ms with milliseconds rounded half-up, e.g. 125.627 -> '2:05.627'."""
    if seconds <= 0:
        raise ValueError("lap time must be positive")
    ms = int(Decimal(repr(seconds)).quantize(Decimal("0.001"), rounding=ROUND_HALF_UP) * 1000)
    minutes, rem = divmod(ms, 60_000)
    sec, milli = divmod(rem, 1000)
    return f"{minutes}:{sec:02d}.{milli:03d}"


def format_seconds(seconds: float) -> str:
    q = Decimal(repr(seconds)).quantize(Decimal("0.001"), rounding=ROUND_HALF_UP)
    return f"{q:.3f}"


# -- crossing detection ---------------------------------------------------------------


def lap_time_from_crossings(
    times: np.ndarray,
    positions: np.ndarray,
    line_a,
    line_b,
    direction,
) -> list[float]:
    """Interpolated times at which the trajectory crosses the start line.

    ``direction`` is the forward travel direction at the line; crossings
    against it are ignored.  Lap times are differences of consecutive
    crossing times.
    """
    times = np.asarray(times, dtype=float)
    positions = np.asarray(positions, dtype=float)
    if len(times) >= 2:
        gaps = np.diff(times)
        if np.any(gaps > 0.02 + 1e-9):
            raise ValueError(f"sample spacing up to {gaps.max():.4f}s exceeds 0.02s")
    a = np.asarray(line_a, dtype=float)
    b = np.asarray(line_b, dtype=float)
    d = np.asarray(direction, dtype=float)
    crossings: list[float] = []
    for i in range(len(times) - 1):
        p0 = positions[i]
        p1 = positions[i + 1]
        hit = _segment_intersection(p0, p1, a, b)
        if hit is None:
            continue
        if float((p1 - p0) @ d) <= 0.0:
            continue  # moving against the track direction
        crossings.append(float(times[i] + hit * (times[i + 1] - times[i])))
    return crossings


def _segment_intersection(p0, p1, a, b) -> float | None:
    """Parameter t along p0->p1 where it crosses segment a->b, else None."""
    r = p1 - p0
    s = b - a
    denom = r[0] * s[1] - r[1] * s[0]
    if abs(denom) < 1e-12:
        return None
    qp = a - p0
    t = (qp[0] * s[1] - qp[1] * s[0]) / denom
    u = (qp[0] * r[1] - qp[1] * r[0]) / denom
    if 0.0 <= t < 1.0 and 0.0 <= u <= 1.0:
        return float(t)
    return None


def crossings_to_laps(crossings: list[float]) -> list[float]:
    if len(crossings) < 2:
        raise ValueError("need at least two crossings for a lap time")
    return [b - a for a, b in zip(crossings[:-1], crossings[1:])]


# -- harness ------------------------------------------------------------------------------


@dataclass
class _StreamLog:
    times: list = field(default_factory=list)
    xy: list = field(default_factory=list)
    margin: list = field(default_factory=list)
    fuel: list = field(default_factory=list)
    tyre_mean: list = field(default_factory=list)
    tyre_max: list = field(default_factory=list)
    wear: list = field(default_factory=list)
    lap_count: list = field(default_factory=list)


def run_benchmark(
    agent,
    track: TrackDefinition,
    params: VehicleParams,
    protocol: BenchmarkProtocol | str,
    settings: SessionSettings | None = None,
    server_config: ServerConfig | None = None,
    harness_timeout_s: float = 1800.0,
) -> BenchmarkReport:
    """Run one agent through a protocol and time it from the observer stream.

    ``agent`` is either a shell command template (``{host}``/``{port}``
    substituted, run as a subprocess) or a callable invoked as
    ``agent(host, port)`` on a worker thread.
    """
    if isinstance(protocol, str):
        protocol = PROTOCOLS[protocol]
    settings = settings or SessionSettings()
    server_config = server_config or ServerConfig(pace="realtime", speed=1.0)
    handle = ServerHandle(RaceServer(track, params, settings, server_config)).start()
    host, port = handle.address

    log = _StreamLog()
    ready_time: list[float | None] = [None]
    driver_gone: list[bool] = [False]
    stop = threading.Event()

    def observe():
        obs = RaceClient(host, port)
        obs.hello("observer")
        try:
            while not stop.is_set():
                msg = obs.recv()
                if msg.type == wire.MsgType.STATE:
                    ch = wire.decode_state_payload(msg.payload).channels
                    if ch is None:
                        continue
                    log.times.append(ch["sim_time"])
                    log.xy.append((ch["x"], ch["y"]))
                    log.margin.append(ch["track_limit_margin"])
                    log.fuel.append(ch["fuel_remaining"])
                    temps = [ch[f"tyre_{w}_temp"] for w in ("fl", "fr", "rl", "rr")]
                    log.tyre_mean.append(float(np.mean(temps)))
                    log.tyre_max.append(float(np.max(temps)))
                    log.wear.append(max(ch[f"tyre_{w}_wear"] for w in ("fl", "fr", "rl", "rr")))
                    log.lap_count.append(ch["lap_count"])
                elif msg.type == wire.MsgType.SESSION:
                    evt = wire.decode_json_payload(msg.payload)
                    if evt.get("event") == "driver_ready" and ready_time[0] is None:
                        ready_time[0] = log.times[-1] if log.times else 0.0
                    elif evt.get("event") == "driver_disconnected":
                        driver_gone[0] = True
                    elif evt.get("event") == "session_end":
                        break
        except (ConnectionError, OSError):
            pass
        finally:
            obs.close()

    observer_thread = threading.Thread(target=observe, daemon=True, name="bench-observer")
    observer_thread.start()

    agent_error: list[str] = []
    proc = None
    agent_thread = None
    if callable(agent):

        def run_agent():
            try:
                agent(host, port)
            except Exception as exc:  # noqa: BLE001 - reported in the report
                agent_error.append(str(exc))

        agent_thread = threading.Thread(target=run_agent, daemon=True, name="bench-agent")
        agent_thread.start()
    else:
        cmd = str(agent).format(host=host, port=port, server=f"{host}:{port}")
        proc = subprocess.Popen(cmd, shell=True)

    # Wait for the timed window to complete.
    start_wall = time.time()
    failure = ""
    start_line_a, start_line_b, direction = _start_line(track)
    try:
        while True:
            time.sleep(0.25)
            if time.time() - start_wall > harness_timeout_s:
                failure = "harness timeout"
                break
            if agent_error:
                failure = f"agent error: {agent_error[0]}"
                break
            if proc is not None and proc.poll() not in (None, 0):
                failure = f"agent exited with {proc.returncode}"
                break
            if driver_gone[0] and ready_time[0] is None:
                failure = "driver disconnected before ready"
                break
            crossings = _crossings_so_far(log, start_line_a, start_line_b, direction)
            begin = _timing_begin(crossings, ready_time[0], log, protocol)
            if begin is None:
                continue
            timed = [c for c in crossings if c >= begin - 1e-9]
            if len(timed) >= protocol.timed_laps + 1:
                break
            if driver_gone[0]:
                failure = "driver disconnected mid-run"
                break
    finally:
        stop.set()
        handle.stop()
        if proc is not None and proc.poll() is None:
            proc.terminate()
        if agent_thread is not None:
            agent_thread.join(timeout=10.0)
        observer_thread.join(timeout=10.0)

    crossings = _crossings_so_far(log, start_line_a, start_line_b, direction)
    begin = _timing_begin(crossings, ready_time[0], log, protocol)
    laps: list[LapResult] = []
    warmup_laps = 0
    if begin is not None:
        warmup_laps = sum(1 for c in crossings if c < begin - 1e-9)
        timed = [c for c in crossings if c >= begin - 1e-9][: protocol.timed_laps + 1]
        times = np.asarray(log.times)
        for i in range(len(timed) - 1):
            t0, t1 = timed[i], timed[i + 1]
            sel = (times >= t0) & (times < t1)
            margins = np.asarray(log.margin)[sel]
            dt = np.median(np.diff(times[sel])) if sel.sum() > 3 else 0.01
            violation = float(np.sum(margins < 0.0) * dt)
            fuel = np.asarray(log.fuel)[sel]
            laps.append(
                LapResult(
                    index=i + 1,
                    time_s=t1 - t0,
                    valid=violation <= protocol.violation_budget_s,
                    violation_s=violation,
                    fuel_used_kg=float(fuel[0] - fuel[-1]) if len(fuel) else 0.0,
                    mean_tyre_temp=float(np.mean(np.asarray(log.tyre_mean)[sel])) if sel.any() else 0.0,
                    max_tyre_temp=float(np.max(np.asarray(log.tyre_max)[sel])) if sel.any() else 0.0,
                    max_wear=float(np.max(np.asarray(log.wear)[sel])) if sel.any() else 0.0,
                )
            )
    completed = len(laps) == protocol.timed_laps and not failure
    if not failure and not completed:
        failure = f"only {len(laps)} of {protocol.timed_laps} timed laps"
    if completed and not all(lap.valid for lap in laps):
        failure = "invalid timed lap (track limits)"
    return BenchmarkReport(
        track=track.name,
        vehicle=params.name,
        protocol=protocol.kind,
        laps=laps,
        completed=completed,
        failure_reason=failure,
        warmup_laps=warmup_laps,
    )


def _start_line(track: TrackDefinition):
    s = track.start_line_s
    center = track.to_world(s, 0.0)[:2]
    heading = track.heading_at(s)
    left, right = track.widths_at(s)
    right_n = np.array([math.sin(heading), -math.cos(heading)])
    a = center - right_n * (left + 1.0)
    b = center + right_n * (right + 1.0)
    direction = np.array([math.cos(heading), math.sin(heading)])
    return a, b, direction


def _crossings_so_far(log: _StreamLog, a, b, direction) -> list[float]:
    n = len(log.times)
    if n < 2:
        return []
    return lap_time_from_crossings(
        np.asarray(log.times[:n]), np.asarray(log.xy[:n]), a, b, direction
    )


def _timing_begin(crossings, ready, log: _StreamLog, protocol: BenchmarkProtocol):
    """The crossing at which the timed window starts, or None if not yet."""
    if not crossings:
        return None
    if ready is not None:
        after = [c for c in crossings if c >= ready]
        return after[0] if after else None
    if len(crossings) > protocol.warmup_cap:
        return crossings[protocol.warmup_cap]
    return None
