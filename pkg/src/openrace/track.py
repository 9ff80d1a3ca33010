"""Circuit geometry: centerline model, curvilinear projection and surface labels.

A track is described by centerline samples carrying elevation and left/right
corridor widths.  Internally the centerline is interpolated with a C1 cubic
Hermite spline (Catmull-Rom tangents, periodic for closed circuits) and
re-parameterized onto a uniform 1 m arc-length grid.  Curvilinear coordinates
(s, d) follow the convention: s is arc length along the centerline, d is the
signed lateral offset with positive d to the driver's right of the direction
of travel.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.interpolate import CubicHermiteSpline
from scipy.spatial import cKDTree

from .labels import DRIVABLE, GRASS, ROAD, TRACK_LIMITS, SemanticLabel, label_by_name

GRID_SPACING = 1.0
_DENSE_STEP = 0.25
_MAX_QUERY_RANGE = 200.0

TRACK_FORMAT_HEADER = "openrace-track v1"


class TrackError(ValueError):
    """Raised for unparseable track files or invariant violations."""


class ProjectionError(ValueError):
    """Raised when a query point is too far from the centerline."""


@dataclass(frozen=True)
class CurvilinearPose:
    s: float
    d: float
    heading_error: float = 0.0


@dataclass(frozen=True)
class SurfaceRegion:
    """A painted surface patch in (s, d) track coordinates.

    Negative d is left of the centerline.  Higher priority wins where regions
    overlap; among equal priorities the later-defined region wins.
    """

    s_min: float
    s_max: float
    d_min: float
    d_max: float
    label: SemanticLabel
    priority: int = 0

    def __post_init__(self) -> None:
        if not (self.s_max > self.s_min and self.d_max > self.d_min):
            raise TrackError(
                f"empty region interval s=[{self.s_min},{self.s_max}] d=[{self.d_min},{self.d_max}]"
            )

    def contains(self, s: float, d: float) -> bool:
        return self.s_min <= s <= self.s_max and self.d_min <= d <= self.d_max


class _Centerline:
    """Spline + uniform arc-length grid built once per track; immutable after."""

    def __init__(self, points: np.ndarray, widths: np.ndarray, closed: bool):
        n = len(points)
        if closed:
            # Drop the duplicated final sample; wrap handled via the knot vector.
            pts = points[:-1]
            w = widths[:-1]
        else:
            pts = points
            w = widths
        chords = np.linalg.norm(np.diff(pts, axis=0), axis=1)
        if closed:
            wrap = np.linalg.norm(pts[0] - pts[-1])
            knots = np.concatenate(([0.0], np.cumsum(chords), [np.sum(chords) + wrap]))
            ext_pts = np.vstack([pts, pts[:1]])
            ext_w = np.vstack([w, w[:1]])
        else:
            knots = np.concatenate(([0.0], np.cumsum(chords)))
            ext_pts = pts
            ext_w = w

        tangents = np.empty_like(ext_pts)
        if closed:
            m = len(pts)
            tangents[1:m] = (ext_pts[2 : m + 1] - ext_pts[0 : m - 1]) / (
                knots[2 : m + 1] - knots[0 : m - 1]
            )[:, None]
            du0 = (knots[1] - knots[0]) + (knots[m] - knots[m - 1])
            tangents[0] = (ext_pts[1] - ext_pts[m - 1]) / du0
            tangents[m] = tangents[0]
        else:
            tangents[1:-1] = (ext_pts[2:] - ext_pts[:-2]) / (knots[2:] - knots[:-2])[:, None]
            tangents[0] = (ext_pts[1] - ext_pts[0]) / (knots[1] - knots[0])
            tangents[-1] = (ext_pts[-1] - ext_pts[-2]) / (knots[-1] - knots[-2])

        self.closed = closed
        self._u_max = float(knots[-1])
        self._spline = CubicHermiteSpline(knots, ext_pts, tangents)
        self._dspline = self._spline.derivative()
        self._ddspline = self._dspline.derivative()
        self._knots = knots
        self._sample_widths = ext_w

        # Dense arc-length table: u (spline parameter) vs s (true arc length).
        n_dense = max(64, int(math.ceil(self._u_max / _DENSE_STEP)))
        u_dense = np.linspace(0.0, self._u_max, n_dense + 1)
        p_dense = self._spline(u_dense)
        seg = np.linalg.norm(np.diff(p_dense, axis=0), axis=1)
        s_dense = np.concatenate(([0.0], np.cumsum(seg)))
        self.total_length = float(s_dense[-1])
        self._u_dense = u_dense
        self._s_dense = s_dense

        # Uniform grid at 1 m spacing over [0, L).
        n_grid = max(8, int(round(self.total_length / GRID_SPACING)))
        s_grid = np.linspace(0.0, self.total_length, n_grid, endpoint=not closed)
        if closed:
            s_grid = np.arange(n_grid) * (self.total_length / n_grid)
        u_grid = np.interp(s_grid, s_dense, u_dense)
        self.grid_s = s_grid
        self.grid_u = u_grid
        self.grid_xyz = self._spline(u_grid)
        tan = self._dspline(u_grid)
        norm = np.linalg.norm(tan[:, :2], axis=1)
        self.grid_tangent = tan / np.maximum(norm, 1e-12)[:, None]
        w_arc = np.interp(knots, u_dense, s_dense)  # arc length at each sample knot
        self.grid_left = np.interp(s_grid, w_arc, ext_w[:, 0])
        self.grid_right = np.interp(s_grid, w_arc, ext_w[:, 1])
        self.grid_curvature = self._finite_diff_curvature()
        self.grid_grade = self._finite_diff_grade()
        self._tree = cKDTree(self.grid_xyz[:, :2])

    def _finite_diff_curvature(self) -> np.ndarray:
        p = self.grid_xyz[:, :2]
        if self.closed:
            prev = np.roll(p, 1, axis=0)
            nxt = np.roll(p, -1, axis=0)
        else:
            prev = np.vstack([p[:1], p[:-1]])
            nxt = np.vstack([p[1:], p[-1:]])
        e1 = p - prev
        e2 = nxt - p
        cross = e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0]
        a = np.linalg.norm(e1, axis=1)
        b = np.linalg.norm(e2, axis=1)
        c = np.linalg.norm(nxt - prev, axis=1)
        denom = np.maximum(a * b * c, 1e-12)
        return 2.0 * cross / denom

    def _finite_diff_grade(self) -> np.ndarray:
        z = self.grid_xyz[:, 2]
        if self.closed:
            return (np.roll(z, -1) - np.roll(z, 1)) / (2.0 * GRID_SPACING)
        return np.gradient(z, GRID_SPACING)

    # -- parameter bookkeeping -------------------------------------------------

    def wrap_s(self, s: float) -> float:
        if self.closed:
            return s % self.total_length
        return min(max(s, 0.0), self.total_length)

    def _u_of_s(self, s: float) -> float:
        return float(np.interp(self.wrap_s(s), self._s_dense, self._u_dense))

    def _s_of_u(self, u: float) -> float:
        return float(np.interp(u, self._u_dense, self._s_dense))

    def point_at(self, s: float) -> np.ndarray:
        return self._spline(self._u_of_s(s))

    def tangent_at(self, s: float) -> np.ndarray:
        t = self._dspline(self._u_of_s(s))
        n = np.linalg.norm(t[:2])
        return t / max(n, 1e-12)

    def heading_at(self, s: float) -> float:
        t = self.tangent_at(s)
        return math.atan2(t[1], t[0])

    def widths_at(self, s: float) -> tuple[float, float]:
        s = self.wrap_s(s)
        if self.closed:
            grid = np.append(self.grid_s, self.total_length)
            left = np.append(self.grid_left, self.grid_left[0])
            right = np.append(self.grid_right, self.grid_right[0])
        else:
            grid, left, right = self.grid_s, self.grid_left, self.grid_right
        return float(np.interp(s, grid, left)), float(np.interp(s, grid, right))

    def curvature_at(self, s: float) -> float:
        s = self.wrap_s(s)
        if self.closed:
            grid = np.append(self.grid_s, self.total_length)
            kap = np.append(self.grid_curvature, self.grid_curvature[0])
        else:
            grid, kap = self.grid_s, self.grid_curvature
        return float(np.interp(s, grid, kap))

    def grade_at(self, s: float) -> float:
        s = self.wrap_s(s)
        if self.closed:
            grid = np.append(self.grid_s, self.total_length)
            g = np.append(self.grid_grade, self.grid_grade[0])
        else:
            grid, g = self.grid_s, self.grid_grade
        return float(np.interp(s, grid, g))

    # -- projection --------------------------------------------------------------

    def nearest_grid_index(self, xy: np.ndarray, hint: int | None = None) -> int:
        n = len(self.grid_xyz)
        if hint is not None:
            window = 40
            idx = (np.arange(hint - window, hint + window + 1)) % n if self.closed else np.clip(
                np.arange(hint - window, hint + window + 1), 0, n - 1
            )
            pts = self.grid_xyz[idx, :2]
            d2 = np.sum((pts - xy) ** 2, axis=1)
            best = int(idx[int(np.argmin(d2))])
            # Window search is only trustworthy when the point stayed local.
            if math.sqrt(float(np.min(d2))) < 25.0:
                return best
        return int(self._tree.query(xy)[1])

    def project(self, position, heading: float | None = None, hint: int | None = None) -> tuple[CurvilinearPose, int]:
        """Project a 3D point onto the centerline (plan view).

        Returns the curvilinear pose and the nearest grid index, which callers
        stepping along the track should pass back as ``hint``.
        """
        p = np.asarray(position, dtype=float)
        xy = p[:2]
        idx = self.nearest_grid_index(xy, hint)
        dist = float(np.linalg.norm(self.grid_xyz[idx, :2] - xy))
        if dist > _MAX_QUERY_RANGE:
            raise ProjectionError(f"point {p[:2].tolist()} is {dist:.1f} m from the centerline")

        u = float(self.grid_u[idx])
        for _ in range(8):
            c = self._spline(u)
            t = self._dspline(u)
            a = self._ddspline(u)
            r = xy - c[:2]
            g = float(np.dot(r, t[:2]))
            gp = float(-np.dot(t[:2], t[:2]) + np.dot(r, a[:2]))
            if abs(gp) < 1e-12:
                break
            step = g / gp
            step = max(-2.0 * GRID_SPACING, min(2.0 * GRID_SPACING, -step))
            u += step
            if self.closed:
                u %= self._u_max
            else:
                u = min(max(u, 0.0), self._u_max)
            if abs(step) < 1e-10:
                break

        c = self._spline(u)
        t = self._dspline(u)
        tn = t[:2] / max(np.linalg.norm(t[:2]), 1e-12)
        right = np.array([tn[1], -tn[0]])
        d = float(np.dot(xy - c[:2], right))
        s = self.wrap_s(self._s_of_u(u))
        herr = 0.0
        if heading is not None:
            herr = _wrap_angle(heading - math.atan2(tn[1], tn[0]))
        return CurvilinearPose(s=s, d=d, heading_error=herr), idx

    def project_fast(self, xy, hint: int | None = None) -> tuple[float, float, int, float]:
        """Cheap polyline projection onto the 1 m grid for per-tick callers.

        Returns (s, d, grid_index, tangent_heading).  Accuracy is bounded by
        the chord sagitta of the grid (~1 cm at 12 m corner radius); use
        :meth:`project` where millimetre precision matters.
        """
        px, py = float(xy[0]), float(xy[1])
        p = np.array([px, py])
        idx = self.nearest_grid_index(p, hint)
        n = len(self.grid_xyz)
        best = None
        for seg0 in (idx - 1, idx):
            i0 = seg0 % n if self.closed else min(max(seg0, 0), n - 2)
            i1 = (i0 + 1) % n if self.closed else i0 + 1
            ax, ay = self.grid_xyz[i0, 0], self.grid_xyz[i0, 1]
            bx, by = self.grid_xyz[i1, 0], self.grid_xyz[i1, 1]
            ex, ey = bx - ax, by - ay
            seg_len2 = ex * ex + ey * ey
            if seg_len2 < 1e-18:
                continue
            t = ((px - ax) * ex + (py - ay) * ey) / seg_len2
            t = min(max(t, 0.0), 1.0)
            cx, cy = ax + t * ex, ay + t * ey
            dist2 = (px - cx) ** 2 + (py - cy) ** 2
            if best is None or dist2 < best[0]:
                seg_len = math.sqrt(seg_len2)
                s_here = self.grid_s[i0] + t * seg_len
                right_x, right_y = ey / seg_len, -ex / seg_len
                d_here = (px - cx) * right_x + (py - cy) * right_y
                best = (dist2, s_here, d_here, i0, math.atan2(ey, ex))
        assert best is not None
        _, s_val, d_val, i0, head = best
        return self.wrap_s(float(s_val)), float(d_val), int(i0), head

    def to_world(self, s: float, d: float) -> np.ndarray:
        c = self.point_at(s)
        t = self.tangent_at(s)
        right = np.array([t[1], -t[0], 0.0])
        return c + d * right


def _wrap_angle(a: float) -> float:
    return (a + math.pi) % (2.0 * math.pi) - math.pi


@dataclass
class TrackDefinition:
    """A circuit: named centerline samples, surface regions and defaults.

    ``samples`` is an (N, 5) array of x, y, z, left_width, right_width.
    ``stripe_width`` is the painted track-limits line just outside the
    corridor; ``border_width`` the tarmac band beyond it before grass.
    """

    name: str
    closed: bool
    samples: np.ndarray
    regions: list[SurfaceRegion] = field(default_factory=list)
    start_line_s: float = 0.0
    friction_coefficient: float = 1.0
    stripe_width: float = 0.2
    border_width: float = 3.0
    _geom: _Centerline | None = field(default=None, repr=False, compare=False)

    def __post_init__(self) -> None:
        self.samples = np.asarray(self.samples, dtype=float)
        self._validate_samples()
        self._geom = _Centerline(self.samples[:, :3], self.samples[:, 3:5], self.closed)
        if not (0.0 <= self.start_line_s < self.total_length):
            raise TrackError(
                f"start_line_s={self.start_line_s} outside [0, {self.total_length:.3f})"
            )

    def _validate_samples(self) -> None:
        n = len(self.samples)
        if n < 16:
            raise TrackError(f"need at least 16 centerline samples, got {n}")
        if self.samples.shape[1] != 5:
            raise TrackError("samples must have columns x y z left_width right_width")
        gaps = np.linalg.norm(np.diff(self.samples[:, :3], axis=0), axis=1)
        bad = np.where((gaps <= 0.1) | (gaps > 50.0))[0]
        if len(bad):
            i = int(bad[0])
            raise TrackError(
                f"sample spacing {gaps[i]:.4f} m between samples {i} and {i + 1} outside (0.1, 50]"
            )
        for i, (lw, rw) in enumerate(self.samples[:, 3:5]):
            if lw <= 0 or rw <= 0:
                raise TrackError(f"non-positive width at sample {i}: left={lw} right={rw}")
        if self.closed:
            gap = float(np.linalg.norm(self.samples[0, :3] - self.samples[-1, :3]))
            if gap > 1e-6:
                raise TrackError(f"closed track endpoints differ by {gap:.2e} m (limit 1e-6)")

    # -- geometry passthroughs ---------------------------------------------------

    @property
    def geometry(self) -> _Centerline:
        assert self._geom is not None
        return self._geom

    @property
    def total_length(self) -> float:
        return self.geometry.total_length

    def wrap_s(self, s: float) -> float:
        return self.geometry.wrap_s(s)

    def project(self, position, heading: float | None = None, hint: int | None = None):
        return self.geometry.project(position, heading=heading, hint=hint)

    def to_world(self, s: float, d: float) -> np.ndarray:
        return self.geometry.to_world(s, d)

    def heading_at(self, s: float) -> float:
        return self.geometry.heading_at(s)

    def widths_at(self, s: float) -> tuple[float, float]:
        return self.geometry.widths_at(s)

    def curvature_at(self, s: float) -> float:
        return self.geometry.curvature_at(s)

    def grade_at(self, s: float) -> float:
        return self.geometry.grade_at(s)

    def elevation_at(self, s: float) -> float:
        return float(self.geometry.point_at(s)[2])

    def margin(self, position, hint: int | None = None) -> tuple[float, int]:
        """Signed distance to the nearer corridor edge; positive inside."""
        pose, idx = self.project(position, hint=hint)
        left, right = self.widths_at(pose.s)
        return min(right - pose.d, left + pose.d), idx

    def label_at(self, s: float, d: float) -> SemanticLabel:
        s = self.wrap_s(s)
        best: SurfaceRegion | None = None
        for reg in self.regions:
            if reg.contains(s, d) and (best is None or reg.priority >= best.priority):
                best = reg
        if best is not None:
            return best.label
        left, right = self.widths_at(s)
        if -left <= d <= right:
            return DRIVABLE
        out = d - right if d > 0 else -d - left
        if out <= self.stripe_width:
            return TRACK_LIMITS
        if out <= self.stripe_width + self.border_width:
            return ROAD
        return GRASS

    def labels_at(self, s: np.ndarray, d: np.ndarray) -> np.ndarray:
        """Vectorized label query; same layering rules as :meth:`label_at`."""
        s = np.asarray(s, dtype=float)
        d = np.asarray(d, dtype=float)
        if self.closed:
            s = s % self.total_length
        else:
            s = np.clip(s, 0.0, self.total_length)
        geom = self.geometry
        if self.closed:
            grid = np.append(geom.grid_s, self.total_length)
            lw = np.interp(s, grid, np.append(geom.grid_left, geom.grid_left[0]))
            rw = np.interp(s, grid, np.append(geom.grid_right, geom.grid_right[0]))
        else:
            lw = np.interp(s, geom.grid_s, geom.grid_left)
            rw = np.interp(s, geom.grid_s, geom.grid_right)
        out = np.where(d > 0, d - rw, -d - lw)
        ids = np.full(s.shape, GRASS.id, dtype=np.uint8)
        ids[out <= self.stripe_width + self.border_width] = ROAD.id
        ids[out <= self.stripe_width] = TRACK_LIMITS.id
        ids[out <= 0.0] = DRIVABLE.id
        pri = np.full(s.shape, -np.inf)
        for reg in self.regions:
            mask = (s >= reg.s_min) & (s <= reg.s_max) & (d >= reg.d_min) & (d <= reg.d_max)
            mask &= pri <= reg.priority
            ids[mask] = reg.label.id
            pri[mask] = reg.priority
        return ids


# -- spec-shaped free functions ----------------------------------------------------


def project_to_centerline(track: TrackDefinition, position) -> CurvilinearPose:
    pose, _ = track.project(position)
    return pose


def track_limits_margin(track: TrackDefinition, position) -> float:
    m, _ = track.margin(position)
    return m


def semantic_label_at(track: TrackDefinition, s: float, d: float) -> SemanticLabel:
    return track.label_at(s, d)


# -- file format --------------------------------------------------------------------


def load_track(path) -> TrackDefinition:
    path = Path(path)
    if not path.exists():
        raise TrackError(f"track file not found: {path}")
    return parse_track(path.read_text(), name_hint=path.stem)


def parse_track(text: str, name_hint: str = "unnamed") -> TrackDefinition:
    lines = [ln.rstrip() for ln in text.splitlines()]
    lines = [ln for ln in lines if ln.strip() and not ln.lstrip().startswith("#")]
    if not lines or lines[0].strip() != TRACK_FORMAT_HEADER:
        raise TrackError(f"missing or wrong header; expected {TRACK_FORMAT_HEADER!r}")

    meta: dict[str, str] = {}
    samples: list[list[float]] = []
    regions: list[SurfaceRegion] = []
    i = 1
    n_samples = n_regions = 0
    while i < len(lines):
        parts = lines[i].split()
        key = parts[0]
        if key == "samples":
            n_samples = int(parts[1])
            for j in range(n_samples):
                i += 1
                row = lines[i].split()
                if len(row) != 5:
                    raise TrackError(f"sample {j}: expected 5 columns, got {len(row)}")
                try:
                    samples.append([float(v) for v in row])
                except ValueError as exc:
                    raise TrackError(f"sample {j}: {exc}") from None
        elif key == "regions":
            n_regions = int(parts[1])
            for j in range(n_regions):
                i += 1
                row = lines[i].split()
                if len(row) not in (5, 6):
                    raise TrackError(f"region {j}: expected 5 or 6 columns, got {len(row)}")
                try:
                    label = label_by_name(row[4])
                except KeyError as exc:
                    raise TrackError(f"region {j}: {exc}") from None
                prio = int(row[5]) if len(row) == 6 else j
                regions.append(
                    SurfaceRegion(
                        float(row[0]), float(row[1]), float(row[2]), float(row[3]), label, prio
                    )
                )
        else:
            meta[key] = " ".join(parts[1:])
        i += 1

    if len(samples) != n_samples:
        raise TrackError(f"declared {n_samples} samples, parsed {len(samples)}")

    return TrackDefinition(
        name=meta.get("name", name_hint),
        closed=meta.get("closed", "true").lower() in ("true", "1", "yes"),
        samples=np.array(samples, dtype=float),
        regions=regions,
        start_line_s=float(meta.get("start_line_s", 0.0)),
        friction_coefficient=float(meta.get("friction", 1.0)),
        stripe_width=float(meta.get("stripe_width", 0.2)),
        border_width=float(meta.get("border_width", 3.0)),
    )


def serialize_track(track: TrackDefinition) -> str:
    out = [TRACK_FORMAT_HEADER]
    out.append(f"name {track.name}")
    out.append(f"closed {'true' if track.closed else 'false'}")
    out.append(f"friction {track.friction_coefficient:.6g}")
    out.append(f"start_line_s {track.start_line_s:.6g}")
    out.append(f"stripe_width {track.stripe_width:.6g}")
    out.append(f"border_width {track.border_width:.6g}")
    out.append(f"samples {len(track.samples)}")
    out.append("# x y z left_width right_width")
    for row in track.samples:
        out.append(" ".join(f"{v:.6f}" for v in row))
    if track.regions:
        out.append(f"regions {len(track.regions)}")
        out.append("# s_min s_max d_min d_max label priority")
        for reg in track.regions:
            out.append(
                f"{reg.s_min:.3f} {reg.s_max:.3f} {reg.d_min:.3f} {reg.d_max:.3f} "
                f"{reg.label.name} {reg.priority}"
            )
    return "\n".join(out) + "\n"


def save_track(track: TrackDefinition, path) -> None:
    Path(path).write_text(serialize_track(track))
