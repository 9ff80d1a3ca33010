import math

import numpy as np
import pytest

from openrace.raceline import (
    CorridorSamples,
    RacingLine,
    compute_racing_line,
    discrete_curvature,
    velocity_profile,
)
from openrace.stock import mini_ring, oval_1km

G = 9.80665


def straight_corridor(length=400, width=6.0):
    n = length + 1
    pts = np.column_stack([np.arange(n, dtype=float), np.zeros(n)])
    normals = np.tile([[0.0, -1.0]], (n, 1))
    return CorridorSamples(
        points=pts,
        right_normals=normals,
        left_room=np.full(n, width),
        right_room=np.full(n, width),
        closed=False,
    )


class TestOffsets:
    def test_straight_stays_on_centerline_with_cap_speed(self):
        line = compute_racing_line(straight_corridor(), margin=1.0, v_cap=40.0)
        assert np.abs(line.points[:, 1]).max() == 0.0
        assert np.allclose(line.speed, 40.0)

    def test_annulus_converges_to_largest_inscribed_circle(self, ring50):
        # corridor [45, 55] with margin 1 -> optimal circle radius 54
        line = compute_racing_line(ring50, margin=1.0, mu=1.0, v_cap=60.0)
        radii = np.linalg.norm(line.points, axis=1)
        assert abs(radii.mean() - 54.0) < 0.2
        assert radii.max() - radii.min() < 0.1

    def test_circle_speed_matches_analytic(self, ring50):
        line = compute_racing_line(ring50, margin=1.0, mu=1.0, v_cap=60.0)
        radius = float(np.linalg.norm(line.points, axis=1).mean())
        expected = math.sqrt(1.0 * G * radius)
        # away from transients there are none on a circle: constant profile
        assert np.abs(line.speed - expected).max() / expected < 0.005

    def test_oval_beats_centerline_objective(self, oval):
        from openrace.raceline import _smooth

        line = compute_racing_line(oval, margin=2.0, mu=1.0, v_cap=55.0)
        corridor = CorridorSamples.from_track(oval)
        center_kappa = _smooth(discrete_curvature(corridor.points, True), True)
        assert np.sum(line.curvature**2) < np.sum(center_kappa**2)

    def test_offsets_respect_margin(self, oval):
        margin = 2.0
        line = compute_racing_line(oval, margin=margin, mu=1.0, v_cap=55.0)
        for p in line.points[::25]:
            pose, _ = oval.project((p[0], p[1], 0.0))
            left, right = oval.widths_at(pose.s)
            assert -left + margin - 0.05 <= pose.d <= right - margin + 0.05


class TestVelocityProfile:
    def test_never_violates_lateral_grip_everywhere(self, oval):
        for mu, cap in ((1.0, 55.0), (0.8, 40.0)):
            line = compute_racing_line(oval, margin=2.0, mu=mu, v_cap=cap)
            ceiling = np.sqrt(mu * G / np.maximum(np.abs(line.curvature), 1e-9))
            assert np.all(line.speed <= ceiling + 1e-6)

    def test_forward_pass_limits_acceleration(self):
        kappa = np.zeros(200)
        kappa[:5] = 1.0 / 20.0  # slow entry, then straight
        spacing = np.ones(200)
        v = velocity_profile(kappa, spacing, 1.0, a_max=3.0, b_max=8.0, v_cap=60.0, closed=False)
        dv2 = np.diff(v**2)
        assert np.all(dv2 <= 2.0 * 3.0 * 1.0 + 1e-9)

    def test_backward_pass_limits_braking(self):
        kappa = np.zeros(200)
        kappa[-5:] = 1.0 / 20.0
        spacing = np.ones(200)
        v = velocity_profile(kappa, spacing, 1.0, a_max=8.0, b_max=4.0, v_cap=60.0, closed=False)
        dv2 = np.diff(v**2)
        assert np.all(-dv2 <= 2.0 * 4.0 * 1.0 + 1e-9)

    def test_closed_profile_wraps(self):
        kappa = np.zeros(300)
        kappa[10:20] = 1.0 / 15.0  # a corner just past the seam
        spacing = np.ones(300)
        v = velocity_profile(kappa, spacing, 1.0, a_max=4.0, b_max=6.0, v_cap=60.0, closed=True)
        # braking for the corner must propagate backwards across the seam
        assert v[-1] < 60.0


class TestRacingLineQueries:
    def test_projection_round_trip(self, oval):
        line = compute_racing_line(oval, margin=2.0, mu=1.0, v_cap=55.0)
        for s in (0.0, 123.4, 500.0, 990.0):
            p = line.point_at(s)
            s2, d2, _ = line.project(p)
            assert abs(d2) < 1e-6
            ds = min(abs(s2 - s), line.length - abs(s2 - s))
            assert ds < 0.6

    def test_wrap_and_interpolation(self, ring50):
        line = compute_racing_line(ring50, margin=1.0, mu=1.0, v_cap=60.0)
        assert line.curvature_at(line.length + 5.0) == pytest.approx(
            line.curvature_at(5.0), rel=1e-6
        )
