"""Receding-horizon trajectory tracking: iLQR over a kinematic bicycle.

The prediction state is (x, y, heading, v) with inputs (front wheel angle,
longitudinal acceleration); internally the state is augmented with the
previous input so input-rate costs stay stage-separable.  The backward pass
is a standard regularized iLQR; the forward pass clamps inputs to their
bounds inside the rollout and backtracks until the cost strictly decreases,
so the accepted-iteration cost sequence is monotone non-increasing by
construction.  A diverged solve falls back to a pure-pursuit emergency law.

Angles follow the toolkit's math convention (CCW positive, wheel angle
positive = left); the emitted ControlCommand flips sign into the
right-positive steering channel.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .raceline import RacingLine
from .vehicle import AIR_DENSITY, ControlCommand, VehicleParams

NZ = 6  # x, y, heading, v, prev_delta, prev_acc
NU = 2


def _wrap(a: float) -> float:
    return (a + math.pi) % (2.0 * math.pi) - math.pi


@dataclass
class MpcParams:
    horizon: int = 20
    dt: float = 0.05
    w_lat: float = 6.0
    w_head: float = 4.0
    w_speed: float = 1.5
    r_delta: float = 2.0
    r_acc: float = 0.05
    rate_delta: float = 25.0
    rate_acc: float = 0.4
    terminal_scale: float = 8.0
    max_iterations: int = 10
    cost_tol: float = 1e-4
    regularization: float = 1e-6
    min_ref_speed: float = 3.0


@dataclass
class VehicleLimits:
    """What the planner assumes about the car; derived from its parameter set."""

    wheelbase: float
    max_wheel_angle: float
    max_accel: float
    max_decel: float
    mass: float
    engine_force: float
    brake_force: float
    drag_area: float
    max_lat_accel: float = 8.0

    @classmethod
    def from_params(cls, params: VehicleParams, fuel_estimate: float = 40.0) -> "VehicleLimits":
        mass = params.mass_dry + fuel_estimate
        return cls(
            wheelbase=params.wheelbase,
            max_wheel_angle=params.max_wheel_angle,
            max_accel=0.95 * params.engine_force_max / mass,
            max_decel=0.9 * min(params.brake_force_max / mass, params.tyre.peak_grip_mu * 9.80665),
            mass=mass,
            engine_force=params.engine_force_max,
            brake_force=params.brake_force_max,
            drag_area=params.drag_coefficient_area,
            max_lat_accel=0.85 * params.tyre.peak_grip_mu * 9.80665,
        )

    @classmethod
    def from_session_info(cls, info: dict) -> "VehicleLimits":
        v = info["vehicle"]
        mass = v["mass_dry"] + 40.0
        return cls(
            wheelbase=v["wheelbase"],
            max_wheel_angle=v["max_wheel_angle"],
            max_accel=0.95 * v["engine_force_max"] / mass,
            max_decel=0.9 * min(v["brake_force_max"] / mass, v["tyre"]["peak_grip_mu"] * 9.80665),
            mass=mass,
            engine_force=v["engine_force_max"],
            brake_force=v["brake_force_max"],
            drag_area=v["drag_coefficient_area"],
            max_lat_accel=0.85 * v["tyre"]["peak_grip_mu"] * 9.80665,
        )

    def steer_bound(self, speed: float) -> float:
        """Wheel angle the tyres can actually translate into yaw at this speed."""
        v2 = max(speed, 3.0) ** 2
        return min(self.max_wheel_angle, math.atan(self.wheelbase * self.max_lat_accel / v2))


@dataclass
class MpcSolution:
    states: np.ndarray  # (N+1, 4): x, y, heading, v
    controls: np.ndarray  # (N, 2): wheel angle (CCW+), accel
    cost: float
    iterations: int
    converged: bool
    fallback: bool = False
    cost_history: list = field(default_factory=list)


@dataclass
class PlannerPose:
    x: float
    y: float
    heading: float


class MpcTracker:
    def __init__(self, limits: VehicleLimits, params: MpcParams | None = None):
        self.limits = limits
        self.params = params or MpcParams()
        self._warm: np.ndarray | None = None
        self._line_hint: int | None = None
        self._prev_u = np.zeros(NU)
        self._delta_bound = self.limits.max_wheel_angle

    # -- reference -------------------------------------------------------------

    def _references(self, line: RacingLine, s0: float, v0: float) -> np.ndarray:
        """Reference states along the line, advanced at a speed the car can
        actually realize: starting from the current speed and relaxing toward
        the profile within the accel/decel envelope.  Without this, a car
        arriving hot into a braking zone overruns time-parameterized refs."""
        p = self.params
        refs = np.zeros((p.horizon + 1, 4))
        s = s0
        v_prop = max(v0, p.min_ref_speed)
        for k in range(p.horizon + 1):
            pt = line.point_at(s)
            v_ref = max(line.speed_at(s), p.min_ref_speed)
            refs[k, 0] = pt[0]
            refs[k, 1] = pt[1]
            refs[k, 2] = line.heading_at(s)
            refs[k, 3] = v_ref
            v_prop = float(
                np.clip(
                    v_ref,
                    v_prop - self.limits.max_decel * p.dt,
                    v_prop + self.limits.max_accel * p.dt,
                )
            )
            v_prop = max(v_prop, p.min_ref_speed)
            s = line.wrap(s + v_prop * p.dt)
        refs[:, 2] = np.unwrap(refs[:, 2])
        return refs

    # -- dynamics ----------------------------------------------------------------

    def _rollout(self, z0: np.ndarray, controls: np.ndarray) -> np.ndarray:
        p = self.params
        L = self.limits.wheelbase
        out = np.zeros((len(controls) + 1, NZ))
        out[0] = z0
        z = z0.copy()
        for k, u in enumerate(controls):
            delta = float(np.clip(u[0], -self._delta_bound, self._delta_bound))
            acc = float(np.clip(u[1], -self.limits.max_decel, self.limits.max_accel))
            x, y, th, v = z[:4]
            z = np.array(
                [
                    x + v * math.cos(th) * p.dt,
                    y + v * math.sin(th) * p.dt,
                    th + v * math.tan(delta) / L * p.dt,
                    max(0.0, v + acc * p.dt),
                    delta,
                    acc,
                ]
            )
            out[k + 1] = z
        return out

    def _jacobians(self, z: np.ndarray, u: np.ndarray):
        p = self.params
        L = self.limits.wheelbase
        th, v = z[2], z[3]
        delta = float(np.clip(u[0], -self._delta_bound, self._delta_bound))
        a = np.eye(NZ)
        a[0, 2] = -v * math.sin(th) * p.dt
        a[0, 3] = math.cos(th) * p.dt
        a[1, 2] = v * math.cos(th) * p.dt
        a[1, 3] = math.sin(th) * p.dt
        a[2, 3] = math.tan(delta) / L * p.dt
        a[4, :] = 0.0
        a[5, :] = 0.0
        b = np.zeros((NZ, NU))
        cos_d = math.cos(delta)
        b[2, 0] = v / (L * cos_d * cos_d) * p.dt
        b[3, 1] = p.dt
        b[4, 0] = 1.0
        b[5, 1] = 1.0
        return a, b

    # -- cost --------------------------------------------------------------------

    def _stage_matrices(self, ref: np.ndarray, terminal: bool):
        p = self.params
        sin_r, cos_r = math.sin(ref[2]), math.cos(ref[2])
        c = np.zeros((3, NZ))
        c[0, 0] = -sin_r
        c[0, 1] = cos_r
        c[1, 2] = 1.0
        c[2, 3] = 1.0
        target = np.array([-sin_r * ref[0] + cos_r * ref[1], ref[2], ref[3]])
        scale = p.terminal_scale if terminal else 1.0
        w = np.diag([p.w_lat * scale, p.w_head * scale, p.w_speed * scale])
        return c, w, target

    def _cost(self, traj: np.ndarray, controls: np.ndarray, refs: np.ndarray) -> float:
        p = self.params
        total = 0.0
        r = np.diag([p.r_delta, p.r_acc])
        wr = np.diag([p.rate_delta, p.rate_acc])
        prev = self._prev_u
        for k in range(len(controls)):
            c, w, target = self._stage_matrices(refs[k], terminal=False)
            e = c @ traj[k] - target
            u = controls[k]
            du = u - (traj[k][4:6] if k > 0 else prev)
            total += float(e @ w @ e + u @ r @ u + du @ wr @ du)
        c, w, target = self._stage_matrices(refs[-1], terminal=True)
        e = c @ traj[-1] - target
        total += float(e @ w @ e)
        return total

    # -- solver --------------------------------------------------------------------

    def solve(
        self,
        pose: PlannerPose,
        speed: float,
        line: RacingLine,
    ) -> MpcSolution:
        p = self.params
        self._delta_bound = self.limits.steer_bound(speed)
        s0, _, self._line_hint = line.project((pose.x, pose.y), hint=self._line_hint)
        refs = self._references(line, s0, speed)
        # Bring the vehicle heading onto the reference branch.
        th0 = refs[0, 2] + _wrap(pose.heading - refs[0, 2])
        z0 = np.array([pose.x, pose.y, th0, max(0.0, speed), self._prev_u[0], self._prev_u[1]])

        controls = (
            self._warm.copy()
            if self._warm is not None and len(self._warm) == p.horizon
            else np.zeros((p.horizon, NU))
        )
        traj = self._rollout(z0, controls)
        cost = self._cost(traj, controls, refs)
        history = [cost]
        r2 = 2.0 * np.diag([p.r_delta, p.r_acc])
        wr2 = 2.0 * np.diag([p.rate_delta, p.rate_acc])
        sel = np.zeros((NU, NZ))
        sel[0, 4] = 1.0
        sel[1, 5] = 1.0

        converged = False
        iterations = 0
        for iteration in range(p.max_iterations):
            iterations = iteration + 1
            # Backward pass.
            c, w, target = self._stage_matrices(refs[-1], terminal=True)
            e = c @ traj[-1] - target
            vz = 2.0 * c.T @ w @ e
            vzz = 2.0 * c.T @ w @ c
            ks = np.zeros((p.horizon, NU))
            kk = np.zeros((p.horizon, NU, NZ))
            failed = False
            for k in range(p.horizon - 1, -1, -1):
                a_mat, b_mat = self._jacobians(traj[k], controls[k])
                c, w, target = self._stage_matrices(refs[k], terminal=False)
                e = c @ traj[k] - target
                u = controls[k]
                prev_u = traj[k][4:6] if k > 0 else self._prev_u
                du = u - prev_u
                lz = 2.0 * c.T @ w @ e
                lzz = 2.0 * c.T @ w @ c
                lu = r2 @ u + wr2 @ du
                luu = r2 + wr2
                luz = np.zeros((NU, NZ))
                if k > 0:
                    luz = -wr2 @ sel
                    lzz = lzz + sel.T @ wr2 @ sel
                    lz = lz + sel.T @ wr2 @ (-du)
                qz = lz + a_mat.T @ vz
                qu = lu + b_mat.T @ vz
                qzz = lzz + a_mat.T @ vzz @ a_mat
                quu = luu + b_mat.T @ vzz @ b_mat + p.regularization * np.eye(NU)
                quz = luz + b_mat.T @ vzz @ a_mat
                try:
                    quu_inv = np.linalg.inv(quu)
                except np.linalg.LinAlgError:
                    failed = True
                    break
                ks[k] = -quu_inv @ qu
                kk[k] = -quu_inv @ quz
                vz = qz + kk[k].T @ quu @ ks[k] + kk[k].T @ qu + quz.T @ ks[k]
                vzz = qzz + kk[k].T @ quu @ kk[k] + kk[k].T @ quz + quz.T @ kk[k]
                vzz = 0.5 * (vzz + vzz.T)
            if failed:
                break

            # Forward pass with backtracking; accept only strict improvement.
            improved = False
            for alpha in (1.0, 0.5, 0.25, 0.125, 0.0625, 0.03125):
                new_controls = np.zeros_like(controls)
                z = z0.copy()
                new_traj = np.zeros_like(traj)
                new_traj[0] = z0
                for k in range(p.horizon):
                    u = controls[k] + alpha * ks[k] + kk[k] @ (z - traj[k])
                    u[0] = np.clip(u[0], -self._delta_bound, self._delta_bound)
                    u[1] = np.clip(u[1], -self.limits.max_decel, self.limits.max_accel)
                    new_controls[k] = u
                    x, y, th, v = z[:4]
                    z = np.array(
                        [
                            x + v * math.cos(th) * p.dt,
                            y + v * math.sin(th) * p.dt,
                            th + v * math.tan(u[0]) / self.limits.wheelbase * p.dt,
                            max(0.0, v + u[1] * p.dt),
                            u[0],
                            u[1],
                        ]
                    )
                    new_traj[k + 1] = z
                new_cost = self._cost(new_traj, new_controls, refs)
                if math.isfinite(new_cost) and new_cost < cost:
                    controls = new_controls
                    traj = new_traj
                    improvement = cost - new_cost
                    cost = new_cost
                    history.append(cost)
                    improved = True
                    break
            if not improved:
                converged = True
                break
            if improvement < p.cost_tol:
                converged = True
                break

        fallback = not math.isfinite(cost)
        self._warm = np.vstack([controls[1:], controls[-1:]])
        solution = MpcSolution(
            states=traj[:, :4].copy(),
            controls=controls.copy(),
            cost=cost,
            iterations=iterations,
            converged=converged,
            fallback=fallback,
            cost_history=history,
        )
        if not fallback:
            self._prev_u = controls[0].copy()
        return solution

    # -- command conversion -----------------------------------------------------------

    def to_command(self, solution: MpcSolution, speed: float) -> ControlCommand:
        lim = self.limits
        delta = float(solution.controls[0, 0])
        acc = float(solution.controls[0, 1])
        steering = float(np.clip(-delta / lim.max_wheel_angle, -1.0, 1.0))
        drag = 0.5 * AIR_DENSITY * lim.drag_area * speed * speed
        force = lim.mass * acc + drag
        if force >= 0.0:
            return ControlCommand(
                throttle=float(np.clip(force / lim.engine_force, 0.0, 1.0)),
                brake=0.0,
                steering=steering,
            )
        return ControlCommand(
            throttle=0.0,
            brake=float(np.clip(-force / lim.brake_force, 0.0, 1.0)),
            steering=steering,
        )


def pure_pursuit(
    pose: PlannerPose,
    speed: float,
    line: RacingLine,
    limits: VehicleLimits,
    hint: int | None = None,
) -> tuple[ControlCommand, int]:
    """Emergency tracking law: geometric pursuit of a speed-scaled lookahead."""
    s0, _, idx = line.project((pose.x, pose.y), hint=hint)
    lookahead = float(np.clip(1.2 * speed, 6.0, 30.0))
    target = line.point_at(s0 + lookahead)
    dx = target[0] - pose.x
    dy = target[1] - pose.y
    c, s = math.cos(pose.heading), math.sin(pose.heading)
    lx = dx * c + dy * s
    ly = -dx * s + dy * c
    dist2 = lx * lx + ly * ly
    kappa = 2.0 * ly / max(dist2, 1e-6)
    bound = limits.steer_bound(speed)
    delta = float(np.clip(math.atan(limits.wheelbase * kappa), -bound, bound))
    steering = float(np.clip(-delta / limits.max_wheel_angle, -1.0, 1.0))
    v_target = max(line.speed_at(s0), 3.0)
    accel = float(np.clip(0.8 * (v_target - speed), -limits.max_decel, limits.max_accel))
    drag = 0.5 * AIR_DENSITY * limits.drag_area * speed * speed
    force = limits.mass * accel + drag
    if force >= 0:
        cmd = ControlCommand(
            throttle=float(np.clip(force / limits.engine_force, 0.0, 1.0)), steering=steering
        )
    else:
        cmd = ControlCommand(
            brake=float(np.clip(-force / limits.brake_force, 0.0, 1.0)), steering=steering
        )
    return cmd, idx


def mpc_step(
    pose: PlannerPose,
    speed: float,
    line: RacingLine,
    tracker: MpcTracker,
) -> tuple[ControlCommand, MpcSolution]:
    """One receding-horizon step; falls back to pure pursuit on divergence."""
    solution = tracker.solve(pose, speed, line)
    if solution.fallback or not math.isfinite(solution.cost):
        cmd, _ = pure_pursuit(pose, speed, line, tracker.limits)
        solution.fallback = True
        return cmd, solution
    return tracker.to_command(solution, speed), solution
