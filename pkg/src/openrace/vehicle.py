"""Fixed-timestep vehicle dynamics: dynamic bicycle model with thermal tyres.

Conventions (used toolkit-wide):

* world frame: z-up, right-handed; heading is CCW from +x.
* body frame: x forward, y left, z up; positive yaw rate = left (CCW) turn.
* steering command: positive steers RIGHT (so a positive command produces a
  negative yaw rate); wheel angles are reported in the same right-positive
  sense.
* curvilinear d: positive to the driver's right.

The integrator is semi-implicit Euler at a fixed 300 Hz: velocities update
from current-state forces, then positions advance with the new velocities.
All transitions are pure functions of their inputs, which makes trajectories
bit-reproducible from a control log.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from pathlib import Path

from .track import TrackDefinition

GRAVITY = 9.80665
AIR_DENSITY = 1.225
ROLLING_RESISTANCE = 0.013
PHYSICS_HZ = 300
PHYSICS_DT = 1.0 / PHYSICS_HZ

VEHICLE_FORMAT_HEADER = "openrace-vehicle v1"

WHEEL_NAMES = ("fl", "fr", "rl", "rr")


class VehicleError(ValueError):
    """Bad vehicle parameter file or parameter invariant violation."""


@dataclass(frozen=True)
class TyreParams:
    cornering_stiffness: float  # N/rad per axle
    peak_grip_mu: float
    optimal_temp: float  # deg C
    temp_window: float  # deg C
    wear_rate: float  # fraction per J of slip work
    heating_rate: float  # deg C per J
    cooling_rate: float  # 1/s toward ambient
    ambient_temp: float = 25.0
    initial_temp: float = 70.0

    def __post_init__(self) -> None:
        for name in (
            "cornering_stiffness",
            "peak_grip_mu",
            "optimal_temp",
            "temp_window",
            "wear_rate",
            "heating_rate",
            "cooling_rate",
        ):
            if getattr(self, name) <= 0:
                raise VehicleError(f"tyre parameter {name} must be positive")
        if not (0.5 < self.peak_grip_mu <= 2.5):
            raise VehicleError(f"peak_grip_mu {self.peak_grip_mu} outside (0.5, 2.5]")


@dataclass(frozen=True)
class VehicleParams:
    name: str
    mass_dry: float
    fuel_capacity: float
    wheelbase: float
    track_width: float
    cg_to_front: float
    yaw_inertia: float
    steering_ratio: float
    max_wheel_angle: float
    engine_force_max: float
    brake_force_max: float
    drag_coefficient_area: float
    tyre: TyreParams
    fuel_base_rate: float = 0.002  # kg/s at idle
    fuel_throttle_rate: float = 0.045  # kg/s at full throttle, speed-scaled
    fuel_speed_ref: float = 80.0  # m/s

    def __post_init__(self) -> None:
        positive = (
            "mass_dry",
            "fuel_capacity",
            "wheelbase",
            "track_width",
            "cg_to_front",
            "yaw_inertia",
            "steering_ratio",
            "max_wheel_angle",
            "engine_force_max",
            "brake_force_max",
            "drag_coefficient_area",
        )
        for name in positive:
            if getattr(self, name) <= 0:
                raise VehicleError(f"vehicle parameter {name} must be positive")
        if self.cg_to_front >= self.wheelbase:
            raise VehicleError("cg_to_front must be less than wheelbase")


@dataclass(frozen=True)
class TyreState:
    temperature: float
    wear: float = 0.0
    last_slip_angle: float = 0.0
    last_slip_ratio: float = 0.0


@dataclass(frozen=True)
class ControlCommand:
    throttle: float = 0.0
    brake: float = 0.0
    steering: float = 0.0

    def clamped(self) -> tuple["ControlCommand", bool]:
        t = min(max(self.throttle, 0.0), 1.0)
        b = min(max(self.brake, 0.0), 1.0)
        s = min(max(self.steering, -1.0), 1.0)
        changed = (t, b, s) != (self.throttle, self.brake, self.steering)
        return ControlCommand(t, b, s), changed


@dataclass(frozen=True)
class GroundTruthState:
    """Complete simulator truth for one vehicle at one physics tick."""

    tick: int
    sim_time: float
    x: float
    y: float
    z: float
    heading: float
    roll: float
    pitch: float
    vx: float
    vy: float
    yaw_rate: float
    accel_long: float
    accel_lat: float
    wheel_angle_left: float
    wheel_angle_right: float
    throttle: float
    brake: float
    steering: float
    fuel_remaining: float
    tyres: tuple[TyreState, TyreState, TyreState, TyreState]
    lap_count: int
    lap_time_current: float
    last_lap_time: float
    s: float
    d: float
    track_limit_margin: float
    crashed: bool
    extras: dict[str, float] = field(default_factory=dict)

    @property
    def speed(self) -> float:
        return math.hypot(self.vx, self.vy)

    @property
    def position(self) -> tuple[float, float, float]:
        return (self.x, self.y, self.z)


def steering_to_wheel_angles(params: VehicleParams, steering: float) -> tuple[float, float]:
    """Ackermann split of a steering command into (left, right) wheel angles.

    The mean angle is ``steering * max_wheel_angle``; the inner wheel follows
    cot(d_in) = cot(d) - w/(2L) and the outer cot(d_out) = cot(d) + w/(2L).
    Angles keep the command's sign (positive = right turn), so for a right
    turn the right wheel is the inner one with the larger magnitude.
    """
    delta = steering * params.max_wheel_angle
    if abs(delta) < 1e-12:
        return 0.0, 0.0
    half = params.track_width / (2.0 * params.wheelbase)
    mag = abs(delta)
    cot = 1.0 / math.tan(mag)
    inner = math.atan(1.0 / (cot - half))
    outer = math.atan(1.0 / (cot + half))
    if delta > 0:  # right turn: right wheel inner
        return math.copysign(outer, delta), math.copysign(inner, delta)
    return math.copysign(inner, delta), math.copysign(outer, delta)


def wheel_angles_to_steering(params: VehicleParams, left: float, right: float) -> float:
    """Exact inverse of :func:`steering_to_wheel_angles`.

    The split satisfies cot(inner) + cot(outer) = 2 cot(mean), so the mean
    angle comes back through the cot average rather than the arithmetic one.
    """
    if left == 0.0 and right == 0.0:
        return 0.0
    sign = 1.0 if (left + right) > 0 else -1.0
    cot_sum = 1.0 / math.tan(abs(left)) + 1.0 / math.tan(abs(right))
    mean = math.atan(2.0 / cot_sum)
    return sign * mean / params.max_wheel_angle


def thermal_grip_factor(temperature: float, params: TyreParams) -> float:
    arg = (temperature - params.optimal_temp) / params.temp_window
    return math.exp(-arg * arg)


def tyre_thermal_update(
    tyre: TyreState, slip_power: float, speed: float, dt: float, params: TyreParams
) -> TyreState:
    """Advance one tyre's temperature and wear given slip power in watts.

    Heating is proportional to slip power; cooling is Newtonian toward ambient
    with an airflow term growing with speed.  Wear integrates slip work and
    saturates at 1.
    """
    heat = params.heating_rate * slip_power * dt
    cool = params.cooling_rate * (tyre.temperature - params.ambient_temp) * (1.0 + speed / 30.0) * dt
    temp = max(0.0, tyre.temperature + heat - cool)
    wear = min(1.0, tyre.wear + params.wear_rate * slip_power * dt)
    return replace(tyre, temperature=temp, wear=wear)


def fuel_update(fuel: float, throttle: float, speed: float, dt: float, params: VehicleParams) -> float:
    rate = params.fuel_base_rate + params.fuel_throttle_rate * throttle * (
        0.3 + speed / params.fuel_speed_ref
    )
    return max(0.0, fuel - rate * dt)


def initial_state(
    track: TrackDefinition,
    params: VehicleParams,
    s: float | None = None,
    speed: float = 0.0,
    d: float = 0.0,
    fuel: float | None = None,
) -> GroundTruthState:
    s0 = track.start_line_s if s is None else track.wrap_s(s)
    pos = track.to_world(s0, d)
    heading = track.heading_at(s0)
    left, right = track.widths_at(s0)
    t0 = params.tyre.initial_temp
    tyres = tuple(TyreState(temperature=t0) for _ in range(4))
    return GroundTruthState(
        tick=0,
        sim_time=0.0,
        x=float(pos[0]),
        y=float(pos[1]),
        z=float(pos[2]),
        heading=heading,
        roll=0.0,
        pitch=0.0,
        vx=speed,
        vy=0.0,
        yaw_rate=0.0,
        accel_long=0.0,
        accel_lat=0.0,
        wheel_angle_left=0.0,
        wheel_angle_right=0.0,
        throttle=0.0,
        brake=0.0,
        steering=0.0,
        fuel_remaining=min(60.0 if fuel is None else fuel, params.fuel_capacity),
        tyres=tyres,  # type: ignore[arg-type]
        lap_count=0,
        lap_time_current=0.0,
        last_lap_time=0.0,
        s=s0,
        d=d,
        track_limit_margin=min(right - d, left + d),
        crashed=False,
        extras={"distance_traveled": 0.0, "clamp_warnings": 0.0},
    )


def step(
    state: GroundTruthState,
    cmd: ControlCommand,
    params: VehicleParams,
    track: TrackDefinition,
    dt: float = PHYSICS_DT,
) -> GroundTruthState:
    """One physics tick.  Pure: identical inputs give bit-identical outputs."""
    for v in (state.x, state.y, state.vx, state.vy, state.yaw_rate, state.heading):
        if not math.isfinite(v):
            raise VehicleError("non-finite state rejected")

    cmd, was_clamped = cmd.clamped()
    tp = params.tyre
    mass = params.mass_dry + state.fuel_remaining
    a_f = params.cg_to_front
    b_r = params.wheelbase - a_f
    fz_front = mass * GRAVITY * b_r / params.wheelbase
    fz_rear = mass * GRAVITY * a_f / params.wheelbase

    # Steering geometry; dynamics use the CCW-positive mean angle.
    wl, wr = steering_to_wheel_angles(params, cmd.steering)
    delta = -cmd.steering * params.max_wheel_angle

    vx, vy, r = state.vx, state.vy, state.yaw_rate
    speed = math.hypot(vx, vy)
    vx_eff = max(abs(vx), 0.5)
    # Lateral forces fade out below walking pace so the car can rest.
    lat_fade = min(1.0, speed / 1.0)

    def axle_factors(i0: int, i1: int) -> tuple[float, float]:
        th = 0.5 * (
            thermal_grip_factor(state.tyres[i0].temperature, tp)
            + thermal_grip_factor(state.tyres[i1].temperature, tp)
        )
        wear = 0.5 * (state.tyres[i0].wear + state.tyres[i1].wear)
        grip = tp.peak_grip_mu * th * (1.0 - 0.3 * wear)
        stiff = (0.6 + 0.4 * th) * (1.0 - 0.3 * wear)
        return grip, stiff

    grip_f, stiff_f = axle_factors(0, 1)
    grip_r, stiff_r = axle_factors(2, 3)
    mu_track = track.friction_coefficient
    mu_f = grip_f * mu_track
    mu_r = grip_r * mu_track

    alpha_f = math.atan2(vy + a_f * r, vx_eff) - delta
    alpha_r = math.atan2(vy - b_r * r, vx_eff)
    fy_f = -tp.cornering_stiffness * stiff_f * alpha_f * lat_fade
    fy_r = -tp.cornering_stiffness * stiff_r * alpha_r * lat_fade
    fy_f = max(-mu_f * fz_front, min(mu_f * fz_front, fy_f))
    fy_r = max(-mu_r * fz_rear, min(mu_r * fz_rear, fy_r))

    # Longitudinal: rear-driven engine, load-split brakes, quadratic drag,
    # rolling resistance and the gravity component along the body x axis.
    fuel_ok = 1.0 if state.fuel_remaining > 0.0 else 0.0
    f_drive = cmd.throttle * params.engine_force_max * fuel_ok
    f_drive = min(f_drive, mu_r * fz_rear)  # traction-limited at the driven axle
    f_brake = cmd.brake * params.brake_force_max
    f_brake = min(f_brake, (mu_f * fz_front + mu_r * fz_rear))
    f_drag = 0.5 * AIR_DENSITY * params.drag_coefficient_area * speed * vx
    f_roll = ROLLING_RESISTANCE * mass * GRAVITY * math.tanh(vx / 0.2)

    herr = _heading_error(state.heading, track, state.s)
    grade = track.grade_at(state.s)
    slope_x = grade * math.cos(herr)
    f_grade = -mass * GRAVITY * slope_x / math.sqrt(1.0 + slope_x * slope_x)

    brake_sign = math.tanh(vx / 0.2)
    fx = f_drive - f_brake * brake_sign - f_drag - f_roll + f_grade

    ax = fx / mass - fy_f * math.sin(delta) / mass
    ay = (fy_f * math.cos(delta) + fy_r) / mass
    dr = (a_f * fy_f * math.cos(delta) - b_r * fy_r) / params.yaw_inertia

    accel_long = ax
    accel_lat = ay

    new_vx = vx + (ax + vy * r) * dt
    new_vy = vy + (ay - vx * r) * dt
    new_r = r + dr * dt

    # Static latch: without drive force, dissipation cannot reverse the car.
    if vx >= 0.0 and new_vx < 0.0 and f_drive <= 0.0:
        new_vx = 0.0
    if abs(new_vx) < 0.02 and f_drive == 0.0 and cmd.brake > 0.0:
        new_vx = 0.0
        new_vy *= 0.5
        new_r *= 0.5

    heading = _wrap_pi(state.heading + new_r * dt)
    cos_h = math.cos(heading)
    sin_h = math.sin(heading)
    x = state.x + (new_vx * cos_h - new_vy * sin_h) * dt
    y = state.y + (new_vx * sin_h + new_vy * cos_h) * dt

    hint = int(state.extras.get("centerline_hint", -1.0))
    s, d, idx, _tangent = track.geometry.project_fast(
        (x, y), hint if hint >= 0 else None
    )
    left, right = track.widths_at(s)
    margin = min(right - d, left + d)
    z = track.elevation_at(s)
    theta_t = math.atan(grade)
    pitch = theta_t * math.cos(herr)
    roll = theta_t * math.sin(herr)

    # Thermal/wear per tyre from axle slip power, split evenly across the axle.
    # Longitudinal slip work mostly ends up in the brake assembly / driveline;
    # only a fraction shears the tread.
    k_long = 30.0  # pseudo longitudinal stiffness, 1/slip per unit load
    tread_fraction = 0.3
    f_long_r = f_drive - 0.4 * f_brake * brake_sign
    f_long_f = -0.6 * f_brake * brake_sign
    slip_ratio_f = f_long_f / (k_long * fz_front)
    slip_ratio_r = f_long_r / (k_long * fz_rear)
    v_slip_f = abs(vx_eff * math.tan(alpha_f))
    v_slip_r = abs(vx_eff * math.tan(alpha_r))
    p_front = abs(fy_f) * v_slip_f + tread_fraction * abs(f_long_f) * abs(vx_eff * slip_ratio_f)
    p_rear = abs(fy_r) * v_slip_r + tread_fraction * abs(f_long_r) * abs(vx_eff * slip_ratio_r)
    wear_on = state.extras.get("wear_enabled", 1.0) > 0.0
    new_tyres = []
    for i, tyre in enumerate(state.tyres):
        front = i < 2
        power = 0.5 * (p_front if front else p_rear)
        updated = tyre_thermal_update(tyre, power, speed, dt, tp)
        if not wear_on:
            updated = replace(updated, wear=tyre.wear)
        updated = replace(
            updated,
            last_slip_angle=alpha_f if front else alpha_r,
            last_slip_ratio=slip_ratio_f if front else slip_ratio_r,
        )
        new_tyres.append(updated)

    fuel = fuel_update(state.fuel_remaining, cmd.throttle, speed, dt, params)

    # Lap bookkeeping: interpolate the start-line crossing within the tick.
    total = track.total_length
    lap_count = state.lap_count
    last_lap = state.last_lap_time
    lap_time = state.lap_time_current + dt
    if track.closed:
        rel_prev = (state.s - track.start_line_s) % total
        rel_new = (s - track.start_line_s) % total
        if rel_prev > total - 25.0 and rel_new < 25.0 and new_vx > 0.0:
            frac = (total - rel_prev) / max(total - rel_prev + rel_new, 1e-9)
            last_lap = state.lap_time_current + frac * dt
            lap_time = (1.0 - frac) * dt
            lap_count += 1

    crashed = state.crashed
    if margin < -8.0:
        crashed = True
    if abs(accel_lat) > 10.0 * tp.peak_grip_mu * GRAVITY:
        crashed = True

    extras = dict(state.extras)
    extras["distance_traveled"] = extras.get("distance_traveled", 0.0) + speed * dt
    extras["centerline_hint"] = float(idx)
    extras["mass"] = mass
    extras["drag_force"] = f_drag
    extras["engine_force"] = f_drive
    extras["grade"] = grade
    extras["grip_factor_front"] = grip_f
    extras["grip_factor_rear"] = grip_r
    if was_clamped:
        extras["clamp_warnings"] = extras.get("clamp_warnings", 0.0) + 1.0

    return GroundTruthState(
        tick=state.tick + 1,
        sim_time=state.sim_time + dt,
        x=x,
        y=y,
        z=z,
        heading=heading,
        roll=roll,
        pitch=pitch,
        vx=new_vx,
        vy=new_vy,
        yaw_rate=new_r,
        accel_long=accel_long,
        accel_lat=accel_lat,
        wheel_angle_left=wl,
        wheel_angle_right=wr,
        throttle=cmd.throttle,
        brake=cmd.brake,
        steering=cmd.steering,
        fuel_remaining=fuel,
        tyres=tuple(new_tyres),  # type: ignore[arg-type]
        lap_count=lap_count,
        lap_time_current=lap_time,
        last_lap_time=last_lap,
        s=s,
        d=d,
        track_limit_margin=margin,
        crashed=crashed,
        extras=extras,
    )


def _wrap_pi(a: float) -> float:
    return (a + math.pi) % (2.0 * math.pi) - math.pi


def _heading_error(heading: float, track: TrackDefinition, s: float) -> float:
    return _wrap_pi(heading - track.heading_at(s))


# -- named channel schema -------------------------------------------------------

CORE_CHANNELS: tuple[str, ...] = (
    "tick",
    "sim_time",
    "x",
    "y",
    "z",
    "heading",
    "roll",
    "pitch",
    "vx",
    "vy",
    "speed",
    "yaw_rate",
    "accel_long",
    "accel_lat",
    "wheel_angle_left",
    "wheel_angle_right",
    "throttle",
    "brake",
    "steering",
    "fuel_remaining",
    "lap_count",
    "lap_time_current",
    "last_lap_time",
    "lap_progress_s",
    "lateral_offset_d",
    "track_limit_margin",
    "crashed",
) + tuple(
    f"tyre_{w}_{q}" for w in WHEEL_NAMES for q in ("temp", "wear", "slip_angle", "slip_ratio")
)


def state_channels(state: GroundTruthState) -> dict[str, float]:
    """Flatten a state into the documented named-channel map (plus extras)."""
    out: dict[str, float] = {
        "tick": float(state.tick),
        "sim_time": state.sim_time,
        "x": state.x,
        "y": state.y,
        "z": state.z,
        "heading": state.heading,
        "roll": state.roll,
        "pitch": state.pitch,
        "vx": state.vx,
        "vy": state.vy,
        "speed": state.speed,
        "yaw_rate": state.yaw_rate,
        "accel_long": state.accel_long,
        "accel_lat": state.accel_lat,
        "wheel_angle_left": state.wheel_angle_left,
        "wheel_angle_right": state.wheel_angle_right,
        "throttle": state.throttle,
        "brake": state.brake,
        "steering": state.steering,
        "fuel_remaining": state.fuel_remaining,
        "lap_count": float(state.lap_count),
        "lap_time_current": state.lap_time_current,
        "last_lap_time": state.last_lap_time,
        "lap_progress_s": state.s,
        "lateral_offset_d": state.d,
        "track_limit_margin": state.track_limit_margin,
        "crashed": 1.0 if state.crashed else 0.0,
    }
    for name, tyre in zip(WHEEL_NAMES, state.tyres):
        out[f"tyre_{name}_temp"] = tyre.temperature
        out[f"tyre_{name}_wear"] = tyre.wear
        out[f"tyre_{name}_slip_angle"] = tyre.last_slip_angle
        out[f"tyre_{name}_slip_ratio"] = tyre.last_slip_ratio
    for key, val in state.extras.items():
        out[key] = val
    return out


# -- parameter file I/O ----------------------------------------------------------


def load_vehicle(path) -> VehicleParams:
    path = Path(path)
    if not path.exists():
        raise VehicleError(f"vehicle file not found: {path}")
    return parse_vehicle(path.read_text())


def parse_vehicle(text: str) -> VehicleParams:
    lines = [ln.strip() for ln in text.splitlines()]
    lines = [ln for ln in lines if ln and not ln.startswith("#")]
    if not lines or lines[0] != VEHICLE_FORMAT_HEADER:
        raise VehicleError(f"missing or wrong header; expected {VEHICLE_FORMAT_HEADER!r}")
    kv: dict[str, str] = {}
    for ln in lines[1:]:
        parts = ln.split(None, 1)
        if len(parts) != 2:
            raise VehicleError(f"bad vehicle line: {ln!r}")
        kv[parts[0]] = parts[1]

    def num(key: str, default: float | None = None) -> float:
        if key not in kv:
            if default is None:
                raise VehicleError(f"missing vehicle parameter {key}")
            return default
        try:
            return float(kv[key])
        except ValueError:
            raise VehicleError(f"parameter {key}: not a number: {kv[key]!r}") from None

    tyre = TyreParams(
        cornering_stiffness=num("tyre.cornering_stiffness"),
        peak_grip_mu=num("tyre.peak_grip_mu"),
        optimal_temp=num("tyre.optimal_temp"),
        temp_window=num("tyre.temp_window"),
        wear_rate=num("tyre.wear_rate"),
        heating_rate=num("tyre.heating_rate"),
        cooling_rate=num("tyre.cooling_rate"),
        ambient_temp=num("tyre.ambient_temp", 25.0),
        initial_temp=num("tyre.initial_temp", 70.0),
    )
    return VehicleParams(
        name=kv.get("name", "unnamed"),
        mass_dry=num("mass_dry"),
        fuel_capacity=num("fuel_capacity"),
        wheelbase=num("wheelbase"),
        track_width=num("track_width"),
        cg_to_front=num("cg_to_front"),
        yaw_inertia=num("yaw_inertia"),
        steering_ratio=num("steering_ratio"),
        max_wheel_angle=num("max_wheel_angle"),
        engine_force_max=num("engine_force_max"),
        brake_force_max=num("brake_force_max"),
        drag_coefficient_area=num("drag_coefficient_area"),
        fuel_base_rate=num("fuel_base_rate", 0.002),
        fuel_throttle_rate=num("fuel_throttle_rate", 0.045),
        fuel_speed_ref=num("fuel_speed_ref", 80.0),
        tyre=tyre,
    )


def serialize_vehicle(params: VehicleParams) -> str:
    kv = [
        ("name", params.name),
        ("mass_dry", params.mass_dry),
        ("fuel_capacity", params.fuel_capacity),
        ("wheelbase", params.wheelbase),
        ("track_width", params.track_width),
        ("cg_to_front", params.cg_to_front),
        ("yaw_inertia", params.yaw_inertia),
        ("steering_ratio", params.steering_ratio),
        ("max_wheel_angle", params.max_wheel_angle),
        ("engine_force_max", params.engine_force_max),
        ("brake_force_max", params.brake_force_max),
        ("drag_coefficient_area", params.drag_coefficient_area),
        ("fuel_base_rate", params.fuel_base_rate),
        ("fuel_throttle_rate", params.fuel_throttle_rate),
        ("fuel_speed_ref", params.fuel_speed_ref),
        ("tyre.cornering_stiffness", params.tyre.cornering_stiffness),
        ("tyre.peak_grip_mu", params.tyre.peak_grip_mu),
        ("tyre.optimal_temp", params.tyre.optimal_temp),
        ("tyre.temp_window", params.tyre.temp_window),
        ("tyre.wear_rate", params.tyre.wear_rate),
        ("tyre.heating_rate", params.tyre.heating_rate),
        ("tyre.cooling_rate", params.tyre.cooling_rate),
        ("tyre.ambient_temp", params.tyre.ambient_temp),
        ("tyre.initial_temp", params.tyre.initial_temp),
    ]
    lines = [VEHICLE_FORMAT_HEADER]
    for key, val in kv:
        if isinstance(val, float):
            lines.append(f"{key} {val:.10g}")
        else:
            lines.append(f"{key} {val}")
    return "\n".join(lines) + "\n"


def save_vehicle(params: VehicleParams, path) -> None:
    Path(path).write_text(serialize_vehicle(params))
