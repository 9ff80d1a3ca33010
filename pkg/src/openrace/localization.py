"""Pose estimation: dead reckoning with GPS and map-matching corrections.

The filter tracks (x, y, heading) with a 3x3 covariance; velocity comes from
the odometer reading through a light low pass.  Prediction integrates the
gyro yaw rate and odometer speed and inflates the covariance; corrections
(GPS fixes, Gauss-Newton alignment of an observed centerline against the
circuit map) contract it.  Prediction alone therefore diverges, which is the
honest behavior for an INS without references.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .ins import InsReading, NoiseModel, local_from_latlon
from .mapping import CircuitMap
from .perception import LocalTrackObservation


def _wrap(a: float) -> float:
    return (a + math.pi) % (2.0 * math.pi) - math.pi


@dataclass(frozen=True)
class PoseEstimate:
    x: float
    y: float
    heading: float
    velocity: float
    covariance: np.ndarray  # 3x3 over (x, y, heading)

    def __post_init__(self) -> None:
        cov = np.asarray(self.covariance, dtype=float)
        if cov.shape != (3, 3):
            raise ValueError("covariance must be 3x3")
        if not np.allclose(cov, cov.T, atol=1e-9):
            raise ValueError("covariance must be symmetric")
        if np.any(np.linalg.eigvalsh(cov) < -1e-9):
            raise ValueError("covariance must be positive semi-definite")

    @property
    def trace(self) -> float:
        return float(np.trace(self.covariance))


@dataclass
class LocalizerConfig:
    # Process noise densities (per second of prediction).
    q_xy: float = 0.05
    q_heading: float = 5.0e-4
    # Measurement variances.
    gps_pos_var: float = 0.25
    gps_heading_var: float = 4.0e-4
    gps_latency_s: float = 0.0  # known sensor latency, compensated on update
    map_point_var: float = 0.09
    use_gps: bool = True
    gps_min_speed_for_heading: float = 3.0
    map_gate_rms: float = 1.8
    map_min_points: int = 6
    map_max_jump_m: float = 2.5
    map_max_jump_rad: float = 0.25
    gn_iterations: int = 5
    velocity_lowpass: float = 0.35

    @classmethod
    def from_noise_info(cls, noise: dict, state_dt: float = 0.01) -> "LocalizerConfig":
        pos_sigma = float(noise.get("gps_pos_sigma", 0.5))
        return cls(
            gps_pos_var=max(pos_sigma * pos_sigma, 1e-4),
            gps_heading_var=max(float(noise.get("gps_heading_sigma", 0.02)) ** 2, 1e-6),
            gps_latency_s=float(noise.get("gps_latency_ticks", 0)) * state_dt,
        )


class Localizer:
    def __init__(
        self,
        initial: PoseEstimate,
        config: LocalizerConfig | None = None,
        gps_anchor: NoiseModel | None = None,
    ):
        self.pose = initial
        self.config = config or LocalizerConfig()
        self.gps_anchor = gps_anchor or NoiseModel()
        self._last_gps: tuple[float, float] | None = None
        self._map_hint: int | None = None

    # -- predict ---------------------------------------------------------------

    def predict(self, ins: InsReading, dt: float) -> PoseEstimate:
        cfg = self.config
        pose = self.pose
        v = pose.velocity + cfg.velocity_lowpass * (ins.odometer_speed - pose.velocity)
        heading = _wrap(pose.heading + ins.gyro_z * dt)
        mid = pose.heading + 0.5 * ins.gyro_z * dt
        x = pose.x + v * math.cos(mid) * dt
        y = pose.y + v * math.sin(mid) * dt

        f = np.array(
            [
                [1.0, 0.0, -v * math.sin(mid) * dt],
                [0.0, 1.0, v * math.cos(mid) * dt],
                [0.0, 0.0, 1.0],
            ]
        )
        q = np.diag([cfg.q_xy * dt, cfg.q_xy * dt, cfg.q_heading * dt])
        cov = f @ pose.covariance @ f.T + q
        self.pose = PoseEstimate(x=x, y=y, heading=heading, velocity=v, covariance=cov)
        return self.pose

    # -- GPS correction ----------------------------------------------------------

    def correct_gps(self, ins: InsReading) -> bool:
        cfg = self.config
        if not cfg.use_gps or ins.gps_fix_quality < 2.0:
            return False
        gx, gy = local_from_latlon(ins.gps_lat, ins.gps_lon, self.gps_anchor)
        if self._last_gps == (gx, gy):
            return False  # a frozen or repeated fix carries no new information
        self._last_gps = (gx, gy)

        pose = self.pose
        if cfg.gps_latency_s > 0.0:
            # The fix describes where we were latency seconds ago.
            gx += pose.velocity * cfg.gps_latency_s * math.cos(pose.heading)
            gy += pose.velocity * cfg.gps_latency_s * math.sin(pose.heading)
        use_heading = pose.velocity > cfg.gps_min_speed_for_heading
        if use_heading:
            gps_heading_math = _wrap(math.pi / 2.0 - ins.gps_heading)
            z = np.array([gx, gy, gps_heading_math])
            h = np.eye(3)
            r = np.diag([cfg.gps_pos_var, cfg.gps_pos_var, cfg.gps_heading_var * 25.0])
            innov = z - np.array([pose.x, pose.y, pose.heading])
            innov[2] = _wrap(innov[2])
        else:
            z = np.array([gx, gy])
            h = np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]])
            r = np.diag([cfg.gps_pos_var, cfg.gps_pos_var])
            innov = z - np.array([pose.x, pose.y])
        self._kalman_update(h, innov, r)
        return True

    # -- map correction ----------------------------------------------------------

    def correct_map(
        self,
        obs: LocalTrackObservation,
        cmap: CircuitMap,
        stale_pose: tuple[float, float, float] | None = None,
    ) -> bool:
        """Gauss-Newton alignment of observed centerline points to the map.

        ``stale_pose`` is the (x, y, heading) estimate at the instant the
        observation was captured; the alignment runs there and the resulting
        delta is applied to the current pose, so sensor latency does not
        drag the estimate backward at speed.
        """
        cfg = self.config
        if not obs.usable or len(cmap) < 32 or len(obs.centerline) < cfg.map_min_points:
            return False
        local = obs.centerline
        pose = self.pose
        if stale_pose is not None:
            base_x, base_y, base_th = stale_pose
        else:
            base_x, base_y, base_th = pose.x, pose.y, pose.heading
        x, y, th = base_x, base_y, base_th
        accepted = False
        for _ in range(cfg.gn_iterations):
            c, s = math.cos(th), math.sin(th)
            world = np.column_stack(
                [x + local[:, 0] * c - local[:, 1] * s, y + local[:, 0] * s + local[:, 1] * c]
            )
            rows = []
            residuals = []
            for i, p in enumerate(world):
                _, d, idx = cmap.project(p, hint=self._map_hint)
                if not cmap.closed and (idx <= 1 or idx >= len(cmap) - 2):
                    # Beyond an open map's ends the projection clamps to the
                    # end segment and the residual is meaningless.
                    continue
                self._map_hint = idx
                n0 = cmap.points[idx]
                n1 = cmap.points[(idx + 1) % len(cmap)]
                seg = n1 - n0
                L = np.linalg.norm(seg)
                if L < 1e-9:
                    continue
                normal = np.array([seg[1], -seg[0]]) / L  # right-positive
                # d(residual)/d(pose): normal for x,y; rotation term for heading.
                dp_dth = np.array(
                    [-local[i, 0] * s - local[i, 1] * c, local[i, 0] * c - local[i, 1] * s]
                )
                rows.append([normal[0], normal[1], float(normal @ dp_dth)])
                residuals.append(d)
            if len(rows) < 3:
                return False
            jac = np.array(rows)
            res = np.array(residuals)
            rms = float(np.sqrt(np.mean(res**2)))
            if rms > cfg.map_gate_rms:
                return False
            jtj = jac.T @ jac + 1e-6 * np.eye(3)
            delta = np.linalg.solve(jtj, -jac.T @ res)
            x += delta[0]
            y += delta[1]
            th = _wrap(th + delta[2])
            accepted = True
            if np.linalg.norm(delta) < 1e-4:
                break
        if not accepted:
            return False

        # A legitimate alignment nudges an already-decent pose; a large
        # delta means the observation locked onto the wrong map section.
        innov = np.array([x - base_x, y - base_y, _wrap(th - base_th)])
        if math.hypot(innov[0], innov[1]) > cfg.map_max_jump_m:
            return False
        if abs(innov[2]) > cfg.map_max_jump_rad:
            return False
        # Kalman blend of the alignment delta, weighted by the GN information.
        r_gn = cfg.map_point_var * np.linalg.inv(jac.T @ jac + 1e-6 * np.eye(3))
        self._kalman_update(np.eye(3), innov, r_gn)
        return True

    def _kalman_update(self, h: np.ndarray, innov: np.ndarray, r: np.ndarray) -> None:
        pose = self.pose
        p = pose.covariance
        s_mat = h @ p @ h.T + r
        k = p @ h.T @ np.linalg.inv(s_mat)
        delta = k @ innov
        cov = (np.eye(3) - k @ h) @ p
        cov = 0.5 * (cov + cov.T)
        self.pose = PoseEstimate(
            x=pose.x + delta[0],
            y=pose.y + delta[1],
            heading=_wrap(pose.heading + delta[2]),
            velocity=pose.velocity,
            covariance=cov,
        )


def localize(
    prev: PoseEstimate,
    ins: InsReading,
    obs: LocalTrackObservation | None,
    cmap: CircuitMap | None,
    dt: float,
    config: LocalizerConfig | None = None,
    gps_anchor: NoiseModel | None = None,
) -> PoseEstimate:
    """One-shot predict/correct wrapper around :class:`Localizer`."""
    loc = Localizer(prev, config, gps_anchor)
    loc.predict(ins, dt)
    if config is None or config.use_gps:
        loc.correct_gps(ins)
    if obs is not None and cmap is not None:
        loc.correct_map(obs, cmap)
    return loc.pose


def initial_pose(x: float, y: float, heading: float, velocity: float = 0.0) -> PoseEstimate:
    return PoseEstimate(
        x=x,
        y=y,
        heading=heading,
        velocity=velocity,
        covariance=np.diag([1.0, 1.0, 0.05]),
    )
