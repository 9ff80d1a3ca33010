"""Session recording: capture manifest, frame images and delimited telemetry.

Layout of a recording directory:

    manifest.json   session metadata + one entry per ~30 Hz capture
    frames/NNNNNN.png   colorized render for each capture
    states.orkt     one telemetry row per state tick (comma-delimited text)

Telemetry files start with the line ``openrace-telemetry v1`` followed by a
header row naming every column; values are printed with 17 significant
digits so parsing them back reproduces the exact float64 bit patterns, which
is what makes recorded control logs bit-exactly replayable.
"""

from __future__ import annotations

import json
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .ins import INS_FIELDS, InsReading
from .session import CoreSession, SessionSettings
from .track import TrackDefinition
from .vehicle import (
    PHYSICS_HZ,
    ControlCommand,
    GroundTruthState,
    VehicleParams,
    state_channels,
)

TELEMETRY_HEADER = "openrace-telemetry v1"
RECORD_FORMAT = "openrace-record v1"


class RecordError(ValueError):
    pass


def _fmt(v: float) -> str:
    return format(v, ".17g")


class TelemetryWriter:
    def __init__(self, path, columns: list[str]):
        self.path = Path(path)
        self.columns = list(columns)
        self._fh = open(self.path, "w")
        self._fh.write(TELEMETRY_HEADER + "\n")
        self._fh.write(",".join(self.columns) + "\n")
        self.rows = 0

    def write_row(self, values: dict[str, float]) -> None:
        self._fh.write(",".join(_fmt(values.get(c, math.nan)) for c in self.columns) + "\n")
        self.rows += 1

    def close(self) -> None:
        self._fh.close()


def read_telemetry(path) -> tuple[list[str], np.ndarray]:
    with open(path) as fh:
        header = fh.readline().strip()
        if header != TELEMETRY_HEADER:
            raise RecordError(f"bad telemetry header {header!r}")
        columns = fh.readline().strip().split(",")
        data = np.loadtxt(fh, delimiter=",", ndmin=2)
    if data.size and data.shape[1] != len(columns):
        raise RecordError("telemetry column count mismatch")
    return columns, data


@dataclass
class RecordEntry:
    tick: int
    sim_time: float
    image: str
    state: dict[str, float]
    ins: tuple[float, ...]


@dataclass
class SessionRecord:
    root: Path
    track_name: str
    vehicle_name: str
    state_hz: float
    frame_hz: float
    noise_seed: int
    entries: list[RecordEntry]
    controls: list[tuple[int, float, float, float]]
    complete: bool
    meta: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.entries)


class SessionRecorder:
    """Accumulates captures, telemetry and control changes for one session."""

    def __init__(
        self,
        out_dir,
        track: TrackDefinition,
        params: VehicleParams,
        settings: SessionSettings,
        columns: list[str] | None = None,
    ):
        self.root = Path(out_dir)
        (self.root / "frames").mkdir(parents=True, exist_ok=True)
        self.settings = settings
        self.track_name = track.name
        self.vehicle_name = params.name
        self.entries: list[dict] = []
        self.controls: list[dict] = []
        self._columns = columns
        self._telemetry: TelemetryWriter | None = None
        self._capture_index = 0
        self._failed = False
        self._started = time.time()
        self._last_cmd: tuple[float, float, float] | None = None

    def add_state(self, state: GroundTruthState) -> None:
        if self._failed:
            return
        try:
            if self._telemetry is None:
                cols = self._columns or list(state_channels(state).keys())
                self._telemetry = TelemetryWriter(self.root / "states.orkt", cols)
            self._telemetry.write_row(state_channels(state))
        except OSError:
            self._failed = True
            self.close(complete=False)
            raise

    def add_control(self, tick: int, cmd: ControlCommand) -> None:
        key = (cmd.throttle, cmd.brake, cmd.steering)
        if key == self._last_cmd:
            return
        self._last_cmd = key
        self.controls.append(
            {"tick": tick, "throttle": cmd.throttle, "brake": cmd.brake, "steering": cmd.steering}
        )

    def add_capture(self, ids_image: np.ndarray, state: GroundTruthState, ins: InsReading) -> None:
        if self._failed:
            return
        from .render import save_preview_png

        name = f"frames/{self._capture_index:06d}.png"
        try:
            save_preview_png(self.root / name, ids_image)
        except OSError:
            self._failed = True
            self.close(complete=False)
            raise
        self._capture_index += 1
        self.entries.append(
            {
                "tick": state.tick,
                "sim_time": state.sim_time,
                "image": name,
                "state": {k: v for k, v in state_channels(state).items()},
                "ins": list(ins.as_tuple()),
            }
        )

    def close(self, complete: bool = True) -> Path:
        if self._telemetry is not None:
            self._telemetry.close()
            self._telemetry = None
        manifest = {
            "format": RECORD_FORMAT,
            "track": self.track_name,
            "vehicle": self.vehicle_name,
            "state_hz": self.settings.state_hz,
            "frame_hz": self.settings.frame_hz,
            "noise_seed": self.settings.noise.seed,
            "debug_truth": self.settings.debug_truth,
            "started_unix": self._started,
            "complete": bool(complete and not self._failed),
            "entries": self.entries,
            "controls": self.controls,
        }
        path = self.root / "manifest.json"
        path.write_text(json.dumps(manifest, indent=1))
        return path


def load_record(root) -> SessionRecord:
    root = Path(root)
    manifest_path = root / "manifest.json"
    if not manifest_path.exists():
        raise RecordError(f"no manifest.json under {root}")
    manifest = json.loads(manifest_path.read_text())
    if manifest.get("format") != RECORD_FORMAT:
        raise RecordError(f"unknown record format {manifest.get('format')!r}")

    entries = []
    last_time = -math.inf
    frame_period = 1.0 / manifest["frame_hz"]
    tol = 1.0 / PHYSICS_HZ + 1e-9
    for i, raw in enumerate(manifest["entries"]):
        if raw["sim_time"] < last_time:
            raise RecordError(f"entry {i} out of time order")
        if entries and abs((raw["sim_time"] - last_time) - frame_period) > tol:
            raise RecordError(
                f"entry {i} spacing {raw['sim_time'] - last_time:.4f}s deviates "
                f"from frame period {frame_period:.4f}s by more than one tick"
            )
        last_time = raw["sim_time"]
        image = root / raw["image"]
        if not image.exists():
            raise RecordError(f"entry {i} image missing: {image}")
        ins_vals = raw["ins"]
        if len(ins_vals) != len(INS_FIELDS):
            raise RecordError(f"entry {i} has {len(ins_vals)} INS fields, expected 17")
        entries.append(
            RecordEntry(
                tick=raw["tick"],
                sim_time=raw["sim_time"],
                image=raw["image"],
                state=raw["state"],
                ins=tuple(ins_vals),
            )
        )

    controls = [
        (c["tick"], c["throttle"], c["brake"], c["steering"]) for c in manifest.get("controls", [])
    ]
    return SessionRecord(
        root=root,
        track_name=manifest["track"],
        vehicle_name=manifest["vehicle"],
        state_hz=manifest["state_hz"],
        frame_hz=manifest["frame_hz"],
        noise_seed=manifest.get("noise_seed", 0),
        entries=entries,
        controls=controls,
        complete=manifest.get("complete", False),
        meta=manifest,
    )


def replay_control_log(
    record: SessionRecord,
    track: TrackDefinition,
    params: VehicleParams,
    settings: SessionSettings,
    sim_seconds: float,
) -> list[GroundTruthState]:
    """Re-run a recorded control log; returns the per-state-tick trajectory."""
    session = CoreSession(track, params, settings)
    by_tick = {tick: ControlCommand(t, b, s) for tick, t, b, s in record.controls}
    out = []
    n = round(sim_seconds * PHYSICS_HZ)
    for _ in range(n):
        cmd = by_tick.get(session.state.tick)
        if cmd is not None:
            session.set_control(cmd)
        result = session.tick()
        if result.state_due:
            out.append(result.state)
    return out
