"""Track-edge extraction from semantic frames via inverse ground projection.

Each image column is scanned bottom-up for the first transition out of the
corridor labels (drivable / track limits / curb); those boundary pixels are
projected through the pinhole model onto the vehicle's local ground plane
and paired into left/right edge polylines, whose midpoints form the local
centerline estimate.  Everything is expressed in the vehicle frame:
x forward, y left.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .labels import CURB, DRIVABLE, TRACK_LIMITS

CORRIDOR_IDS = (DRIVABLE.id, TRACK_LIMITS.id, CURB.id)


@dataclass
class CameraMount:
    """Intrinsics plus pose of the camera in the vehicle frame."""

    width: int
    height: int
    hfov: float
    offset: tuple[float, float, float]  # vehicle frame, y left
    pitch: float

    @classmethod
    def from_session_info(cls, info: dict) -> "CameraMount":
        cam = info["camera"]
        return cls(
            width=int(cam["width"]),
            height=int(cam["height"]),
            hfov=float(cam["hfov"]),
            offset=tuple(cam["offset"]),
            pitch=float(cam["pitch"]),
        )


@dataclass
class LocalTrackObservation:
    """Track edges seen from the vehicle, ordered by forward distance."""

    left_edge: np.ndarray  # (Nl, 2) vehicle frame
    right_edge: np.ndarray  # (Nr, 2)
    centerline: np.ndarray  # (K, 2)
    half_widths: np.ndarray  # (K, 2) left/right corridor half width per point
    tick: int = 0
    usable: bool = True

    @classmethod
    def unusable(cls, tick: int = 0) -> "LocalTrackObservation":
        empty = np.zeros((0, 2))
        return cls(
            left_edge=empty,
            right_edge=empty,
            centerline=empty,
            half_widths=np.zeros((0, 2)),
            tick=tick,
            usable=False,
        )


@dataclass
class EdgeExtractor:
    mount: CameraMount
    min_forward: float = 3.0
    max_forward: float = 60.0
    max_lateral: float = 30.0
    bin_size: float = 2.0
    min_columns_per_side: int = 3
    _dirs: np.ndarray | None = field(default=None, repr=False)

    def _ray_grid(self) -> np.ndarray:
        """Per-pixel ray directions in the vehicle frame (computed once)."""
        if self._dirs is not None:
            return self._dirs
        m = self.mount
        tan_h = math.tan(m.hfov / 2.0)
        tan_v = tan_h * m.height / m.width
        us = (2.0 * (np.arange(m.width) + 0.5) / m.width - 1.0) * tan_h
        vs = (1.0 - 2.0 * (np.arange(m.height) + 0.5) / m.height) * tan_v
        cp, sp = math.cos(m.pitch), math.sin(m.pitch)
        fwd = np.array([cp, 0.0, sp])
        right = np.array([0.0, -1.0, 0.0])
        up = np.cross(right, fwd)
        dirs = (
            us[None, :, None] * right[None, None, :]
            + vs[:, None, None] * up[None, None, :]
            + fwd[None, None, :]
        )
        dirs /= np.linalg.norm(dirs, axis=2, keepdims=True)
        self._dirs = dirs
        return dirs

    def boundary_points(self, semantic: np.ndarray) -> np.ndarray:
        """Ground-plane hits of per-column corridor-exit pixels, (N, 2)."""
        h, w = semantic.shape
        if (h, w) != (self.mount.height, self.mount.width):
            raise ValueError(
                f"semantic image {w}x{h} does not match camera {self.mount.width}x{self.mount.height}"
            )
        corridor = np.isin(semantic, CORRIDOR_IDS)
        # Length of the corridor run touching the bottom row, per column.
        runs = np.cumprod(corridor[::-1, :], axis=0).sum(axis=0)
        cols = np.where((runs > 0) & (runs < h))[0]
        if len(cols) == 0:
            return np.zeros((0, 2))
        rows = h - runs[cols]  # first non-corridor pixel from the bottom
        boundary_rows = rows  # project the transition pixel itself

        dirs = self._ray_grid()[boundary_rows, cols]
        ox, oy, oz = self.mount.offset
        dz = dirs[:, 2]
        ok = dz < -1e-6
        t = -oz / np.where(ok, dz, -1.0)
        pts = np.column_stack([ox + t * dirs[:, 0], oy + t * dirs[:, 1]])
        ok &= (pts[:, 0] > self.min_forward) & (pts[:, 0] < self.max_forward)
        ok &= np.abs(pts[:, 1]) < self.max_lateral
        return pts[ok]

    def observe(self, semantic: np.ndarray, tick: int = 0) -> LocalTrackObservation:
        pts = self.boundary_points(semantic)
        left = pts[pts[:, 1] > 0.2]
        right = pts[pts[:, 1] < -0.2]
        if len(left) < self.min_columns_per_side or len(right) < self.min_columns_per_side:
            return LocalTrackObservation.unusable(tick)

        edges = np.arange(self.min_forward, self.max_forward + self.bin_size, self.bin_size)
        center = []
        widths = []
        left_poly = []
        right_poly = []
        for x0, x1 in zip(edges[:-1], edges[1:]):
            lsel = left[(left[:, 0] >= x0) & (left[:, 0] < x1)]
            rsel = right[(right[:, 0] >= x0) & (right[:, 0] < x1)]
            xm = 0.5 * (x0 + x1)
            if len(lsel):
                left_poly.append((xm, float(np.median(lsel[:, 1]))))
            if len(rsel):
                right_poly.append((xm, float(np.median(rsel[:, 1]))))
            if len(lsel) and len(rsel):
                yl = float(np.median(lsel[:, 1]))
                yr = float(np.median(rsel[:, 1]))
                if yl - yr < 2.0:  # paired edges too narrow to be the corridor
                    continue
                center.append((xm, 0.5 * (yl + yr)))
                widths.append((yl - 0.5 * (yl + yr), 0.5 * (yl + yr) - yr))
        if len(center) < 3:
            return LocalTrackObservation.unusable(tick)
        return LocalTrackObservation(
            left_edge=np.array(left_poly),
            right_edge=np.array(right_poly),
            centerline=np.array(center),
            half_widths=np.array(widths),
            tick=tick,
            usable=True,
        )


def segment_to_edges(
    semantic: np.ndarray, mount: CameraMount, tick: int = 0
) -> LocalTrackObservation:
    return EdgeExtractor(mount).observe(semantic, tick)
