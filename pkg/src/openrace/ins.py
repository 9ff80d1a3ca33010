"""Simulated inertial navigation sensor bundle with noise, drift and GPS faults.

Exactly 17 scalars per reading: body-frame accelerations (3), body rates (3),
odometer distance and speed (2), GPS latitude/longitude/altitude (3), GPS
velocity NED (3), GPS course (1), fix quality (1) and the timestamp (1).

Accelerometer and gyro channels carry white noise plus a random-walk bias;
GPS channels carry white noise, a fixed latency, and seeded dropouts during
which the fix freezes and the quality flag degrades 2 -> 1 -> 0.  Latitude
and longitude come from the local x/y via a flat-earth tangent plane at a
configurable anchor.  With all noise terms at zero the reading reproduces the
truth-derived quantities exactly.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field, fields

import numpy as np

from .vehicle import GRAVITY, GroundTruthState

EARTH_RADIUS = 6_378_137.0
DEG = 180.0 / math.pi

INS_FIELDS = (
    "accel_x",
    "accel_y",
    "accel_z",
    "gyro_x",
    "gyro_y",
    "gyro_z",
    "odometer_distance",
    "odometer_speed",
    "gps_lat",
    "gps_lon",
    "gps_alt",
    "gps_vn",
    "gps_ve",
    "gps_vd",
    "gps_heading",
    "gps_fix_quality",
    "ins_timestamp",
)


@dataclass(frozen=True)
class InsReading:
    accel_x: float
    accel_y: float
    accel_z: float
    gyro_x: float
    gyro_y: float
    gyro_z: float
    odometer_distance: float
    odometer_speed: float
    gps_lat: float
    gps_lon: float
    gps_alt: float
    gps_vn: float
    gps_ve: float
    gps_vd: float
    gps_heading: float
    gps_fix_quality: float
    ins_timestamp: float

    def as_tuple(self) -> tuple[float, ...]:
        return tuple(getattr(self, f) for f in INS_FIELDS)

    @classmethod
    def from_values(cls, values) -> "InsReading":
        if len(values) != 17:
            raise ValueError(f"expected 17 INS values, got {len(values)}")
        return cls(*values)


assert len(fields(InsReading)) == 17 == len(INS_FIELDS)


@dataclass(frozen=True)
class NoiseModel:
    """Per-sensor white-noise and bias-random-walk magnitudes, plus GPS faults."""

    accel_sigma: float = 0.05  # m/s^2
    accel_bias_rw: float = 0.002  # m/s^2 / sqrt(s)
    gyro_sigma: float = 0.002  # rad/s
    gyro_bias_rw: float = 2.0e-4  # rad/s / sqrt(s)
    odo_distance_sigma: float = 0.02  # m
    odo_speed_sigma: float = 0.05  # m/s
    gps_pos_sigma: float = 0.4  # m
    gps_alt_sigma: float = 0.8  # m
    gps_vel_sigma: float = 0.1  # m/s
    gps_heading_sigma: float = 0.01  # rad
    gps_latency_ticks: int = 0
    gps_dropout_per_s: float = 0.0  # probability of a dropout starting, per second
    gps_dropout_duration: float = 2.0  # s, mean dropout length
    origin_lat: float = 0.0  # deg, flat-earth anchor
    origin_lon: float = 0.0
    origin_alt: float = 0.0
    seed: int = 0

    def __post_init__(self) -> None:
        for f in fields(self):
            if f.name.endswith(("sigma", "_rw")) and getattr(self, f.name) < 0:
                raise ValueError(f"{f.name} must be >= 0")

    @classmethod
    def quiet(cls, seed: int = 0) -> "NoiseModel":
        """Truth passthrough: every noise term zero."""
        return cls(
            accel_sigma=0.0,
            accel_bias_rw=0.0,
            gyro_sigma=0.0,
            gyro_bias_rw=0.0,
            odo_distance_sigma=0.0,
            odo_speed_sigma=0.0,
            gps_pos_sigma=0.0,
            gps_alt_sigma=0.0,
            gps_vel_sigma=0.0,
            gps_heading_sigma=0.0,
            gps_latency_ticks=0,
            gps_dropout_per_s=0.0,
            seed=seed,
        )


@dataclass
class InsState:
    """Evolving sensor state: RNG, biases, attitude memory, GPS pipeline."""

    rng: np.random.Generator
    biases: np.ndarray  # ax, ay, az, gx, gy, gz
    prev_roll: float = 0.0
    prev_pitch: float = 0.0
    gps_queue: deque = field(default_factory=deque)
    frozen_fix: tuple | None = None
    dropout_left: float = 0.0
    frozen_for: float = 0.0

    @classmethod
    def fresh(cls, model: NoiseModel) -> "InsState":
        return cls(rng=np.random.default_rng(model.seed), biases=np.zeros(6))


def latlon_from_local(x: float, y: float, model: NoiseModel) -> tuple[float, float]:
    lat = model.origin_lat + (y / EARTH_RADIUS) * DEG
    lon = model.origin_lon + (x / (EARTH_RADIUS * math.cos(model.origin_lat / DEG))) * DEG
    return lat, lon


def local_from_latlon(lat: float, lon: float, model: NoiseModel) -> tuple[float, float]:
    y = (lat - model.origin_lat) / DEG * EARTH_RADIUS
    x = (lon - model.origin_lon) / DEG * EARTH_RADIUS * math.cos(model.origin_lat / DEG)
    return x, y


def compass_heading(heading: float) -> float:
    """Math heading (CCW from +x/east) to GPS course (CW from north), in rad."""
    return (math.pi / 2.0 - heading) % (2.0 * math.pi)


def simulate_ins(
    truth: GroundTruthState,
    model: NoiseModel,
    state: InsState,
    dt: float,
) -> tuple[InsReading, InsState]:
    """Produce one noisy reading from ground truth and advance the sensor state.

    The RNG draw order is fixed regardless of configured magnitudes so that a
    given seed always yields the same noise sequence.
    """
    rng = state.rng
    white = rng.normal(0.0, 1.0, size=14)
    walk = rng.normal(0.0, 1.0, size=6)
    u_dropout = rng.uniform()

    state.biases = state.biases + walk * np.array(
        [model.accel_bias_rw] * 3 + [model.gyro_bias_rw] * 3
    ) * math.sqrt(dt)

    # Truth-derived specific force: body accelerations plus gravity reaction.
    sp, cp = math.sin(truth.pitch), math.cos(truth.pitch)
    sr, cr = math.sin(truth.roll), math.cos(truth.roll)
    accel_true = (
        truth.accel_long + GRAVITY * sp,
        truth.accel_lat - GRAVITY * cp * sr,
        GRAVITY * cp * cr,
    )
    gyro_true = (
        (truth.roll - state.prev_roll) / dt,
        (truth.pitch - state.prev_pitch) / dt,
        truth.yaw_rate,
    )
    state.prev_roll = truth.roll
    state.prev_pitch = truth.pitch

    accel = [accel_true[i] + state.biases[i] + white[i] * model.accel_sigma for i in range(3)]
    gyro = [gyro_true[i] + state.biases[3 + i] + white[3 + i] * model.gyro_sigma for i in range(3)]

    odo_dist = truth.extras.get("distance_traveled", 0.0) + white[6] * model.odo_distance_sigma
    odo_speed = truth.speed + white[7] * model.odo_speed_sigma

    # GPS sample for this tick, delayed by the configured latency.
    cos_h, sin_h = math.cos(truth.heading), math.sin(truth.heading)
    ve_world = truth.vx * cos_h - truth.vy * sin_h
    vn_world = truth.vx * sin_h + truth.vy * cos_h
    gx = truth.x + white[8] * model.gps_pos_sigma
    gy = truth.y + white[9] * model.gps_pos_sigma
    lat, lon = latlon_from_local(gx, gy, model)
    fix = (
        lat,
        lon,
        truth.z + model.origin_alt + white[10] * model.gps_alt_sigma,
        vn_world + white[11] * model.gps_vel_sigma,
        ve_world + white[12] * model.gps_vel_sigma,
        0.0,
        (compass_heading(truth.heading) + white[13] * model.gps_heading_sigma) % (2.0 * math.pi),
    )
    state.gps_queue.append(fix)
    while len(state.gps_queue) > model.gps_latency_ticks + 1:
        state.gps_queue.popleft()
    delayed = state.gps_queue[0]

    if state.dropout_left > 0.0:
        state.dropout_left = max(0.0, state.dropout_left - dt)
        state.frozen_for += dt
    elif u_dropout < model.gps_dropout_per_s * dt:
        state.dropout_left = model.gps_dropout_duration
        state.frozen_fix = delayed
        state.frozen_for = dt

    if state.dropout_left > 0.0 and state.frozen_fix is not None:
        gps_fields = state.frozen_fix
        quality = 1.0 if state.frozen_for <= 1.0 else 0.0
    else:
        state.frozen_fix = None
        state.frozen_for = 0.0
        gps_fields = delayed
        quality = 2.0

    reading = InsReading(
        accel_x=accel[0],
        accel_y=accel[1],
        accel_z=accel[2],
        gyro_x=gyro[0],
        gyro_y=gyro[1],
        gyro_z=gyro[2],
        odometer_distance=odo_dist,
        odometer_speed=odo_speed,
        gps_lat=gps_fields[0],
        gps_lon=gps_fields[1],
        gps_alt=gps_fields[2],
        gps_vn=gps_fields[3],
        gps_ve=gps_fields[4],
        gps_vd=gps_fields[5],
        gps_heading=gps_fields[6],
        gps_fix_quality=quality,
        ins_timestamp=truth.sim_time,
    )
    return reading, state
