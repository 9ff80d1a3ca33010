"""Bundled procedural circuits and the default vehicle parameter set.

Three desk-scale tracks are generated from closed analytic layouts: a 1 km
oval, a rolling road course with elevation change, and a flat paperclip
circuit with two tight hairpins.  They are shipped pre-rendered as ``.ort``
files under ``openrace/data`` and can be regenerated with
``scripts/make_assets.py``.
"""

from __future__ import annotations

import math
from importlib import resources
from pathlib import Path

import numpy as np

from .labels import CURB, SAND, STRUCTURES, VEGETATION, WATER
from .track import SurfaceRegion, TrackDefinition, load_track, save_track
from .vehicle import VehicleParams, load_vehicle, save_vehicle


def _close(points: np.ndarray) -> np.ndarray:
    return np.vstack([points, points[:1]])


def oval_1km() -> TrackDefinition:
    """Closed 1 km oval: two straights joined by 60 m radius 180-degree arcs."""
    radius = 60.0
    straight = (1000.0 - 2.0 * math.pi * radius) / 2.0
    step = 5.0
    pts: list[tuple[float, float]] = []
    # Bottom straight along +x from (0, -radius).
    for x in np.arange(0.0, straight, step):
        pts.append((x, -radius))
    # Right 180-degree arc, counterclockwise.
    arc_len = math.pi * radius
    for a in np.arange(0.0, arc_len, step):
        ang = -math.pi / 2 + a / radius
        pts.append((straight + radius * math.cos(ang), radius * math.sin(ang)))
    # Top straight along -x.
    for x in np.arange(straight, 0.0, -step):
        pts.append((x, radius))
    # Left arc back to start.
    for a in np.arange(0.0, arc_len, step):
        ang = math.pi / 2 + a / radius
        pts.append((radius * math.cos(ang), radius * math.sin(ang)))
    xy = _close(np.array(pts))
    samples = np.column_stack(
        [xy[:, 0], xy[:, 1], np.zeros(len(xy)), np.full(len(xy), 6.0), np.full(len(xy), 6.0)]
    )
    arc0 = straight  # arc length where turn 1 begins
    arc1 = straight + math.pi * radius + straight
    regions = [
        # Exit curbs on both hairpin-free arcs.
        SurfaceRegion(arc0, arc0 + 60.0, 6.0, 7.2, CURB, 1),
        SurfaceRegion(arc1, arc1 + 60.0, 6.0, 7.2, CURB, 1),
        # Sand trap outside turn 2, grandstand block along the main straight.
        SurfaceRegion(arc1 + 40.0, arc1 + 120.0, 8.0, 16.0, SAND, 0),
        SurfaceRegion(40.0, 180.0, -14.0, -11.0, STRUCTURES, 0),
        # Infield pond and tree line.
        SurfaceRegion(arc0 + 30.0, arc0 + 120.0, -20.0, -12.0, WATER, 0),
        SurfaceRegion(500.0, 620.0, 9.0, 18.0, VEGETATION, 0),
    ]
    return TrackDefinition(
        name="oval_1km",
        closed=True,
        samples=samples,
        regions=regions,
        start_line_s=0.0,
        friction_coefficient=1.0,
    )


def hillside_gp() -> TrackDefinition:
    """Rolling ~2.2 km road course: wavy ellipse with 10 m of elevation change."""
    n = 440
    theta = np.linspace(0.0, 2.0 * math.pi, n, endpoint=False)
    r = 330.0 + 40.0 * np.cos(2.0 * theta) + 18.0 * np.sin(3.0 * theta)
    x = r * np.cos(theta)
    y = 0.82 * r * np.sin(theta)
    z = 5.0 * np.sin(2.0 * theta) + 3.0 * np.cos(3.0 * theta)
    width = 5.5 + 1.0 * np.cos(theta)
    xy = _close(np.column_stack([x, y, z, width, width]))
    regions = [
        SurfaceRegion(150.0, 300.0, 8.0, 20.0, VEGETATION, 0),
        SurfaceRegion(900.0, 1000.0, 7.0, 13.0, SAND, 0),
        SurfaceRegion(1400.0, 1500.0, -13.0, -10.0, STRUCTURES, 0),
    ]
    return TrackDefinition(
        name="hillside_gp",
        closed=True,
        samples=xy,
        regions=regions,
        start_line_s=0.0,
        friction_coefficient=1.0,
    )


def hairpin_club() -> TrackDefinition:
    """Flat ~0.9 km paperclip: long straights into two 18 m radius hairpins."""
    radius = 18.0
    straight = 400.0
    step = 4.0
    pts: list[tuple[float, float]] = []
    for x in np.arange(0.0, straight, step):
        pts.append((x, -radius))
    arc_len = math.pi * radius
    for a in np.arange(0.0, arc_len, 2.0):
        ang = -math.pi / 2 + a / radius
        pts.append((straight + radius * math.cos(ang), radius * math.sin(ang)))
    for x in np.arange(straight, 0.0, -step):
        pts.append((x, radius))
    for a in np.arange(0.0, arc_len, 2.0):
        ang = math.pi / 2 + a / radius
        pts.append((radius * math.cos(ang), radius * math.sin(ang)))
    xy = _close(np.array(pts))
    samples = np.column_stack(
        [xy[:, 0], xy[:, 1], np.zeros(len(xy)), np.full(len(xy), 5.0), np.full(len(xy), 5.0)]
    )
    regions = [
        SurfaceRegion(straight, straight + arc_len, 5.0, 6.5, CURB, 1),
        SurfaceRegion(straight + 10.0, straight + arc_len + 30.0, 7.0, 15.0, SAND, 0),
    ]
    return TrackDefinition(
        name="hairpin_club",
        closed=True,
        samples=samples,
        regions=regions,
        start_line_s=0.0,
        friction_coefficient=1.0,
    )


def mini_ring(radius: float = 50.0, width: float = 6.0) -> TrackDefinition:
    """Small constant-radius test ring; handy for steady-state dynamics checks."""
    n = 72
    theta = np.linspace(0.0, 2.0 * math.pi, n, endpoint=False)
    samples = np.column_stack(
        [
            radius * np.cos(theta),
            radius * np.sin(theta),
            np.zeros(n),
            np.full(n, width),
            np.full(n, width),
        ]
    )
    samples = _close(samples)
    return TrackDefinition(
        name=f"ring_{int(radius)}m", closed=True, samples=samples, friction_coefficient=1.0
    )


def gt3_generic() -> VehicleParams:
    """Generic GT3-category parameter set; plausible, not calibrated to any real car."""
    from .vehicle import TyreParams

    return VehicleParams(
        name="gt3_generic",
        mass_dry=1250.0,
        fuel_capacity=90.0,
        wheelbase=2.65,
        track_width=1.64,
        cg_to_front=1.30,
        yaw_inertia=1700.0,
        steering_ratio=13.0,
        max_wheel_angle=0.42,
        engine_force_max=6200.0,
        brake_force_max=16000.0,
        drag_coefficient_area=1.9,
        fuel_base_rate=0.002,
        fuel_throttle_rate=0.045,
        fuel_speed_ref=80.0,
        tyre=TyreParams(
            cornering_stiffness=150000.0,
            peak_grip_mu=1.35,
            optimal_temp=75.0,
            temp_window=85.0,
            wear_rate=3.0e-7,
            heating_rate=1.2e-3,
            cooling_rate=0.04,
            ambient_temp=25.0,
            initial_temp=55.0,
        ),
    )


STOCK_TRACKS = {
    "oval_1km": oval_1km,
    "hillside_gp": hillside_gp,
    "hairpin_club": hairpin_club,
}

STOCK_VEHICLES = {"gt3_generic": gt3_generic}


def data_dir() -> Path:
    return Path(str(resources.files("openrace"))) / "data"


def write_assets(root: Path | None = None) -> list[Path]:
    """Regenerate the bundled .ort/.orv files; returns the written paths."""
    root = Path(root) if root is not None else data_dir()
    written = []
    tracks = root / "tracks"
    vehicles = root / "vehicles"
    tracks.mkdir(parents=True, exist_ok=True)
    vehicles.mkdir(parents=True, exist_ok=True)
    for name, build in STOCK_TRACKS.items():
        path = tracks / f"{name}.ort"
        save_track(build(), path)
        written.append(path)
    for name, build in STOCK_VEHICLES.items():
        path = vehicles / f"{name}.orv"
        save_vehicle(build(), path)
        written.append(path)
    return written


def stock_track_path(name: str) -> Path:
    path = data_dir() / "tracks" / f"{name}.ort"
    if not path.exists():
        raise FileNotFoundError(f"no bundled track {name!r}; known: {sorted(STOCK_TRACKS)}")
    return path


def stock_vehicle_path(name: str) -> Path:
    path = data_dir() / "vehicles" / f"{name}.orv"
    if not path.exists():
        raise FileNotFoundError(f"no bundled vehicle {name!r}; known: {sorted(STOCK_VEHICLES)}")
    return path


def resolve_track(spec: str) -> TrackDefinition:
    """Accept either a bundled track name or a path to an .ort file."""
    p = Path(spec)
    if p.suffix == ".ort" or p.exists():
        return load_track(p)
    return load_track(stock_track_path(spec))


def resolve_vehicle(spec: str) -> VehicleParams:
    p = Path(spec)
    if p.suffix == ".orv" or p.exists():
        return load_vehicle(p)
    return load_vehicle(stock_vehicle_path(spec))
