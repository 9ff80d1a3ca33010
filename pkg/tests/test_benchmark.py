import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from openrace.benchmark import (
    PROTOCOLS,
    BenchmarkProtocol,
    BenchmarkReport,
    LapResult,
    crossings_to_laps,
    format_laptime,
    format_seconds,
    lap_time_from_crossings,
)


class TestFormatLaptime:
    def test_spa_style_figure(self):
        assert format_laptime(199.021) == "3:19.021"

    def test_monza_style_figure(self):
        assert format_laptime(125.627) == "2:05.627"

    def test_rounding_half_up_edge(self):
        assert format_laptime(60.0005) == "1:00.001"

    def test_sub_minute(self):
        assert format_laptime(59.999) == "0:59.999"

    def test_rejects_non_positive(self):
        with pytest.raises(ValueError):
            format_laptime(0.0)

    @given(st.floats(min_value=0.5, max_value=3600.0))
    @settings(max_examples=300, deadline=None)
    def test_format_parses_back(self, seconds):
        text = format_laptime(seconds)
        minutes, rest = text.split(":")
        parsed = int(minutes) * 60 + float(rest)
        assert abs(parsed - seconds) <= 0.0005 + 1e-9


class TestInjectedLapArithmetic:
    def test_hand_computed_mean_and_std(self):
        times = [125.8, 126.1, 126.0, 125.9, 126.2]
        laps = [
            LapResult(index=i + 1, time_s=t, valid=True, violation_s=0.0)
            for i, t in enumerate(times)
        ]
        report = BenchmarkReport(
            track="oval_1km", vehicle="gt3_generic", protocol="five", laps=laps, completed=True
        )
        assert report.mean_s == pytest.approx(126.0)
        assert report.std_s == pytest.approx(0.1581138830, abs=1e-9)
        assert report.formatted() == "2:06.000 ± 0.158"

    def test_invalid_lap_fails_report(self):
        laps = [
            LapResult(index=1, time_s=100.0, valid=True, violation_s=0.0),
            LapResult(index=2, time_s=101.0, valid=False, violation_s=0.5),
        ]
        report = BenchmarkReport(
            track="t", vehicle="v", protocol="five", laps=laps, completed=True
        )
        assert not report.passed

    def test_table_and_json(self):
        laps = [LapResult(index=1, time_s=100.0, valid=True, violation_s=0.0)]
        report = BenchmarkReport(
            track="t", vehicle="v", protocol="single", laps=laps, completed=True
        )
        assert "1:40.000" in report.text_table()
        assert '"passed": true' in report.to_json()


class TestCrossings:
    def make_track_pass(self, speed, dt=0.01, t_cross=1.004):
        # Constant motion along +x crossing the line x=0 at exactly t_cross.
        times = np.arange(0.0, 2.0, dt)
        x = (times - t_cross) * speed
        y = np.zeros_like(x)
        return times, np.column_stack([x, y])

    def test_constant_velocity_crossing_interpolates_exactly(self):
        times, pos = self.make_track_pass(20.0)
        crossings = lap_time_from_crossings(
            times, pos, (0.0, -10.0), (0.0, 10.0), (1.0, 0.0)
        )
        assert len(crossings) == 1
        assert crossings[0] == pytest.approx(1.004, abs=1e-12)

    def test_lap_time_from_two_crossings(self):
        dt = 0.01
        lap = 125.627
        times = np.arange(0.0, 130.0, dt)
        # synthetic loop: cross at t=1.0 and t=1.0+lap moving +x
        x = np.full_like(times, -1.0)
        for t_cross in (1.0, 1.0 + lap):
            sel = np.abs(times - t_cross) < 0.5
            x[sel] = (times[sel] - t_cross) * 10.0
        pos = np.column_stack([x, np.zeros_like(x)])
        crossings = lap_time_from_crossings(times, pos, (0.0, -5.0), (0.0, 5.0), (1.0, 0.0))
        laps = crossings_to_laps(crossings)
        assert len(laps) == 1
        assert format_laptime(laps[0]) == "2:05.627"

    def test_reverse_crossing_ignored(self):
        dt = 0.01
        times = np.arange(0.0, 3.0, dt)
        x = np.where(times < 1.5, (times - 1.0) * 10.0, (2.0 - times) * 10.0)
        pos = np.column_stack([x, np.zeros_like(x)])
        crossings = lap_time_from_crossings(times, pos, (0.0, -5.0), (0.0, 5.0), (1.0, 0.0))
        assert len(crossings) == 1  # the backward pass over the line is dropped

    def test_start_reference_invariance(self):
        times, pos = self.make_track_pass(15.0)
        a = lap_time_from_crossings(times, pos, (0.0, -5.0), (0.0, 5.0), (1.0, 0.0))
        b = lap_time_from_crossings(times + 1234.5, pos, (0.0, -5.0), (0.0, 5.0), (1.0, 0.0))
        assert b[0] - a[0] == pytest.approx(1234.5, abs=1e-9)

    def test_sample_spacing_enforced(self):
        times = np.array([0.0, 0.2, 0.4])
        pos = np.zeros((3, 2))
        with pytest.raises(ValueError):
            lap_time_from_crossings(times, pos, (0.0, -5.0), (0.0, 5.0), (1.0, 0.0))


class TestProtocols:
    def test_kinds_and_lap_counts(self):
        assert PROTOCOLS["single"].timed_laps == 1
        assert PROTOCOLS["five"].timed_laps == 5
        assert PROTOCOLS["twenty"].timed_laps == 20

    def test_mismatched_lap_count_rejected(self):
        with pytest.raises(ValueError):
            BenchmarkProtocol("five", 4)
