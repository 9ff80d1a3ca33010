"""Online circuit mapping from local track observations.

The map grows as an ordered chain of centerline samples (~1 m apart) with
per-sample half widths and fusion confidence.  Points near existing samples
are fused by confidence-weighted averaging; points beyond the head extend
the chain.  Closure triggers once the vehicle re-enters the neighborhood of
the map start after covering most of the estimated lap, after which the map
is resampled onto a uniform grid and only fusion (no growth) continues.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .perception import LocalTrackObservation
from .raceline import CorridorSamples


@dataclass
class PoseLike:
    x: float
    y: float
    heading: float


@dataclass
class CircuitMap:
    spacing: float = 1.0
    points: np.ndarray = field(default_factory=lambda: np.zeros((0, 2)))
    half_left: np.ndarray = field(default_factory=lambda: np.zeros(0))
    half_right: np.ndarray = field(default_factory=lambda: np.zeros(0))
    confidence: np.ndarray = field(default_factory=lambda: np.zeros(0))
    closed: bool = False
    traveled: float = 0.0
    fuse_gate: float = 2.5
    closure_radius: float = 5.0
    closure_fraction: float = 0.8
    closure_min_length: float = 250.0
    max_confidence: float = 25.0

    def __len__(self) -> int:
        return len(self.points)

    @property
    def length(self) -> float:
        if len(self.points) < 2:
            return 0.0
        seg = np.diff(self.points, axis=0)
        total = float(np.sum(np.linalg.norm(seg, axis=1)))
        if self.closed:
            total += float(np.linalg.norm(self.points[0] - self.points[-1]))
        return total

    def arc_positions(self) -> np.ndarray:
        seg = np.linalg.norm(np.diff(self.points, axis=0), axis=1)
        return np.concatenate(([0.0], np.cumsum(seg)))

    # -- queries ---------------------------------------------------------------

    def nearest_index(self, xy, hint: int | None = None) -> int:
        p = np.asarray(xy)
        n = len(self.points)
        if hint is not None and n:
            window = np.arange(hint - 40, hint + 41)
            window = window % n if self.closed else np.clip(window, 0, n - 1)
            d2 = np.sum((self.points[window] - p) ** 2, axis=1)
            idx = int(window[int(np.argmin(d2))])
            if math.sqrt(float(np.min(d2))) < 20.0:
                return idx
        d2 = np.sum((self.points - p) ** 2, axis=1)
        return int(np.argmin(d2))

    def project(self, xy, hint: int | None = None) -> tuple[float, float, int]:
        """(arc position, signed lateral d right-positive, nearest index)."""
        p = np.asarray(xy, dtype=float)
        n = len(self.points)
        if n < 2:
            return 0.0, 0.0, 0
        idx = self.nearest_index(p, hint)
        arcs = self.arc_positions()
        best = None
        for i0 in (idx - 1, idx):
            if not self.closed and (i0 < 0 or i0 + 1 >= n):
                continue
            a = self.points[i0 % n]
            b = self.points[(i0 + 1) % n]
            seg = b - a
            L2 = float(seg @ seg)
            if L2 < 1e-12:
                continue
            t = float(np.clip(((p - a) @ seg) / L2, 0.0, 1.0))
            c = a + t * seg
            dist2 = float((p - c) @ (p - c))
            if best is None or dist2 < best[0]:
                L = math.sqrt(L2)
                s_here = float(arcs[i0 % n]) + t * L
                d_here = float((p - c) @ np.array([seg[1], -seg[0]])) / L
                best = (dist2, s_here, d_here, i0 % n)
        assert best is not None
        return best[1], best[2], best[3]

    def to_corridor(self) -> CorridorSamples:
        if len(self.points) < 8:
            raise ValueError("map too small to form a corridor")
        seg = np.roll(self.points, -1, axis=0) - self.points
        if not self.closed:
            seg[-1] = seg[-2]
        norm = np.linalg.norm(seg, axis=1, keepdims=True)
        tan = seg / np.maximum(norm, 1e-12)
        normals = np.column_stack([tan[:, 1], -tan[:, 0]])
        return CorridorSamples(
            points=self.points.copy(),
            right_normals=normals,
            left_room=self.half_left.copy(),
            right_room=self.half_right.copy(),
            closed=self.closed,
        )


def _world_points(obs: LocalTrackObservation, pose: PoseLike) -> np.ndarray:
    c, s = math.cos(pose.heading), math.sin(pose.heading)
    x = obs.centerline[:, 0]
    y = obs.centerline[:, 1]
    return np.column_stack([pose.x + x * c - y * s, pose.y + x * s + y * c])


def update_map(cmap: CircuitMap, obs: LocalTrackObservation, pose: PoseLike) -> CircuitMap:
    """Fuse one observation into the map (mutates and returns it).

    Growth and refinement are decoupled so the chain can never stall: the
    corridor midpoint observed just ahead of the vehicle appends to the
    chain whenever the vehicle has advanced a sample spacing (it moves with
    the car, so a pose correction cannot strand the head), while every
    observed centerline point fuses into nearby existing samples by
    confidence-weighted averaging.
    """
    if not obs.usable:
        return cmap
    world = _world_points(obs, pose)
    order = np.argsort(obs.centerline[:, 0])
    world = world[order]
    half = obs.half_widths[order]

    # The anchor: nearest observed midpoint (a few meters ahead of the car).
    anchor_sel = obs.centerline[order, 0] <= 14.0
    if not anchor_sel.any():
        anchor_sel[0] = True
    anchor_i = int(np.argmax(anchor_sel))
    anchor = world[anchor_i]
    anchor_half = half[anchor_i]

    if len(cmap.points) == 0:
        cmap.points = anchor[None, :].copy()
        cmap.half_left = np.array([anchor_half[0]])
        cmap.half_right = np.array([anchor_half[1]])
        cmap.confidence = np.ones(1)
        return cmap

    if not cmap.closed:
        head = cmap.points[-1]
        rel = anchor - head
        gap = float(np.linalg.norm(rel))
        backward = False
        if len(cmap.points) >= 3:
            base = cmap.points[-1] - cmap.points[-3]
            norm = float(np.linalg.norm(base))
            backward = norm > 1e-9 and float(rel @ base) / norm < 0.0
        if cmap.spacing <= gap <= 20.0 and not backward:
            n_new = max(1, round(gap / cmap.spacing))
            for k in range(1, n_new + 1):
                q = head + rel * (k / n_new)
                cmap.points = np.vstack([cmap.points, q])
                cmap.half_left = np.append(cmap.half_left, anchor_half[0])
                cmap.half_right = np.append(cmap.half_right, anchor_half[1])
                cmap.confidence = np.append(cmap.confidence, 1.0)

    # Group observation points by their nearest sample and fuse group means,
    # so one observation updates each sample at most once (a map that already
    # equals the observation is an exact fixed point).
    groups: dict[int, list[int]] = {}
    for i in range(len(world)):
        idx = cmap.nearest_index(world[i])
        if float(np.linalg.norm(cmap.points[idx] - world[i])) <= cmap.fuse_gate:
            groups.setdefault(idx, []).append(i)
    for idx, members in groups.items():
        mean_p = world[members].mean(axis=0)
        mean_l = float(half[members, 0].mean())
        mean_r = float(half[members, 1].mean())
        w = min(cmap.confidence[idx], cmap.max_confidence)
        cmap.points[idx] = (w * cmap.points[idx] + mean_p) / (w + 1.0)
        cmap.half_left[idx] = (w * cmap.half_left[idx] + mean_l) / (w + 1.0)
        cmap.half_right[idx] = (w * cmap.half_right[idx] + mean_r) / (w + 1.0)
        cmap.confidence[idx] = w + 1.0
    return cmap


def note_travel(cmap: CircuitMap, distance: float) -> None:
    cmap.traveled += max(0.0, distance)


def maybe_close(cmap: CircuitMap, pose: PoseLike) -> bool:
    """Detect loop closure and freeze the map onto a uniform grid.

    Requires all three of: the pose re-entering the start neighborhood, a
    near-complete lap of travel, and the chain HEAD having wrapped back to
    the start region (otherwise a mid-lap mapping dropout would close a map
    with a gap in it).
    """
    if cmap.closed or len(cmap.points) < 50 or cmap.length < cmap.closure_min_length:
        return False
    start = cmap.points[0]
    dist = math.hypot(pose.x - start[0], pose.y - start[1])
    if dist > cmap.closure_radius or cmap.traveled < cmap.closure_fraction * cmap.length:
        return False
    head_gap = float(np.linalg.norm(cmap.points[-1] - start))
    if head_gap > 3.0 * cmap.closure_radius:
        return False  # the chain has not wrapped; a gap would corrupt the loop
    # Drop head samples that already overlap the start region, then resample.
    arcs = cmap.arc_positions()
    total = arcs[-1]
    keep = np.ones(len(cmap.points), dtype=bool)
    for i in range(len(cmap.points) - 1, max(len(cmap.points) - 40, 1), -1):
        if (
            np.linalg.norm(cmap.points[i] - start) < cmap.closure_radius
            and arcs[i] > 0.5 * total
        ):
            keep[i] = False
        else:
            break
    cmap.points = cmap.points[keep]
    cmap.half_left = cmap.half_left[keep]
    cmap.half_right = cmap.half_right[keep]
    cmap.confidence = cmap.confidence[keep]
    _resample_closed(cmap)
    cmap.closed = True
    return True


def _resample_closed(cmap: CircuitMap) -> None:
    pts = np.vstack([cmap.points, cmap.points[:1]])
    hl = np.append(cmap.half_left, cmap.half_left[0])
    hr = np.append(cmap.half_right, cmap.half_right[0])
    seg = np.linalg.norm(np.diff(pts, axis=0), axis=1)
    arcs = np.concatenate(([0.0], np.cumsum(seg)))
    total = arcs[-1]
    n = max(16, int(round(total / cmap.spacing)))
    s_new = np.arange(n) * (total / n)
    x = np.interp(s_new, arcs, pts[:, 0])
    y = np.interp(s_new, arcs, pts[:, 1])
    cmap.points = _smooth_polyline(np.column_stack([x, y]), half_window=2)
    cmap.half_left = np.interp(s_new, arcs, hl)
    cmap.half_right = np.interp(s_new, arcs, hr)
    cmap.confidence = np.full(n, 4.0)


def _smooth_polyline(pts: np.ndarray, half_window: int) -> np.ndarray:
    k = 2 * half_window + 1
    kernel = np.ones(k) / k
    out = np.empty_like(pts)
    for col in range(2):
        padded = np.concatenate([pts[-half_window:, col], pts[:, col], pts[:half_window, col]])
        out[:, col] = np.convolve(padded, kernel, mode="valid")
    return out


def map_from_track(track) -> CircuitMap:
    """Ground-truth map built straight from a TrackDefinition (RL, tests)."""
    geom = track.geometry
    return CircuitMap(
        points=geom.grid_xyz[:, :2].copy(),
        half_left=geom.grid_left.copy(),
        half_right=geom.grid_right.copy(),
        confidence=np.full(len(geom.grid_xyz), 25.0),
        closed=track.closed,
        traveled=track.total_length,
    )
