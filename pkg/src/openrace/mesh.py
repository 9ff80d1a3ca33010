"""Triangulated, semantically labeled circuit geometry for ray casting.

The corridor and its lateral aprons are swept into a ribbon of quads (two
triangles each) on a regular (s, d) grid; each triangle takes the surface
label at its centroid.  Regions labeled ``structures`` additionally extrude
trackside boxes so renders contain occluders above the ground plane.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .labels import STRUCTURES
from .track import TrackDefinition

APRON_WIDTH = 25.0
_MIN_TRIANGLE_AREA = 1e-9


@dataclass
class TrackMesh:
    vertices: np.ndarray  # (V, 3) float64
    triangles: np.ndarray  # (T, 3) int32
    labels: np.ndarray  # (T,) uint8
    normals: np.ndarray  # (T, 3) float64, unit

    @property
    def triangle_count(self) -> int:
        return len(self.triangles)


def _triangle_normals_areas(vertices: np.ndarray, triangles: np.ndarray):
    a = vertices[triangles[:, 0]]
    b = vertices[triangles[:, 1]]
    c = vertices[triangles[:, 2]]
    cross = np.cross(b - a, c - a)
    norm = np.linalg.norm(cross, axis=1)
    areas = 0.5 * norm
    normals = cross / np.maximum(norm, 1e-30)[:, None]
    return normals, areas


def build_track_mesh(
    track: TrackDefinition, resolution: float = 1.0, apron: float = APRON_WIDTH
) -> TrackMesh:
    if not (0.25 <= resolution <= 5.0):
        raise ValueError(f"resolution {resolution} outside [0.25, 5] m")

    geom = track.geometry
    length = track.total_length
    n_rows = max(4, int(round(length / resolution)))
    s_rows = np.arange(n_rows) * (length / n_rows)
    if not track.closed:
        s_rows = np.linspace(0.0, length, n_rows + 1)

    max_left = float(np.max(geom.grid_left)) + apron
    max_right = float(np.max(geom.grid_right)) + apron
    d_lo = -max_left
    d_hi = max_right
    n_cols = max(2, int(np.ceil((d_hi - d_lo) / resolution)))
    d_cols = np.linspace(d_lo, d_hi, n_cols + 1)

    # Vertex lattice: centerline frame swept laterally; elevation rides the
    # centerline only (aprons are level with the track).
    centers = np.array([geom.point_at(s) for s in s_rows])
    tangents = np.array([geom.tangent_at(s) for s in s_rows])
    right = np.column_stack([tangents[:, 1], -tangents[:, 0], np.zeros(len(s_rows))])
    verts = centers[:, None, :] + d_cols[None, :, None] * right[:, None, :]
    vertices = verts.reshape(-1, 3)

    rows_tri = len(s_rows) if track.closed else len(s_rows) - 1
    ds_row = length / n_rows if track.closed else s_rows[1] - s_rows[0]
    quads = []
    centroids_s = []
    centroids_d = []
    row_stride = n_cols + 1
    for i in range(rows_tri):
        i_next = (i + 1) % len(s_rows)
        base0 = i * row_stride
        base1 = i_next * row_stride
        for j in range(n_cols):
            v00 = base0 + j
            v01 = base0 + j + 1
            v10 = base1 + j
            v11 = base1 + j + 1
            # Triangle A spans rows (i, i, i+1); B spans (i, i+1, i+1).
            quads.append((v00, v01, v11))
            quads.append((v00, v11, v10))
            d_lo_q, d_hi_q = d_cols[j], d_cols[j + 1]
            centroids_s.extend([s_rows[i] + ds_row / 3.0, s_rows[i] + 2.0 * ds_row / 3.0])
            centroids_d.extend([(d_lo_q + 2.0 * d_hi_q) / 3.0, (2.0 * d_lo_q + d_hi_q) / 3.0])
    triangles = np.array(quads, dtype=np.int32)
    labels = track.labels_at(np.array(centroids_s), np.array(centroids_d))

    normals, areas = _triangle_normals_areas(vertices, triangles)
    keep = areas > _MIN_TRIANGLE_AREA
    triangles = triangles[keep]
    labels = labels[keep]
    normals = normals[keep]
    # Ground normals face up.
    flip = normals[:, 2] < 0
    triangles[flip] = triangles[flip][:, ::-1]
    normals[flip] = -normals[flip]

    vert_list = [vertices]
    tri_list = [triangles]
    label_list = [labels]
    normal_list = [normals]
    v_off = len(vertices)
    for reg in track.regions:
        if reg.label.id != STRUCTURES.id:
            continue
        bv, bt, bl, bn = _box_mesh(track, reg, v_off)
        vert_list.append(bv)
        tri_list.append(bt)
        label_list.append(bl)
        normal_list.append(bn)
        v_off += len(bv)

    mesh = TrackMesh(
        vertices=np.vstack(vert_list),
        triangles=np.vstack(tri_list).astype(np.int32),
        labels=np.concatenate(label_list).astype(np.uint8),
        normals=np.vstack(normal_list),
    )
    return mesh


def _box_mesh(track: TrackDefinition, reg, v_off: int, height: float = 3.5):
    """Axis-box along the corridor frame for a structures region footprint."""
    corners = []
    for s in (reg.s_min, reg.s_max):
        for d in (reg.d_min, reg.d_max):
            corners.append(track.to_world(track.wrap_s(s), d))
    base = np.array(corners)  # order: (s0,d0) (s0,d1) (s1,d0) (s1,d1)
    top = base + np.array([0.0, 0.0, height])
    verts = np.vstack([base, top])
    # Quads: 4 sides + roof (no floor: it sits on the ground ribbon).
    quad_ids = [
        (0, 1, 5, 4),
        (1, 3, 7, 5),
        (3, 2, 6, 7),
        (2, 0, 4, 6),
        (4, 5, 7, 6),
    ]
    tris_local = []
    for a, b, c, d in quad_ids:
        tris_local.append((a, b, c))
        tris_local.append((a, c, d))
    tris_local = np.array(tris_local, dtype=np.int32)
    normals, areas = _triangle_normals_areas(verts, tris_local)
    keep = areas > _MIN_TRIANGLE_AREA
    tris = tris_local[keep] + v_off
    labels = np.full(len(tris), STRUCTURES.id, dtype=np.uint8)
    return verts, tris, labels, normals[keep]


def estimate_ribbon_triangles(track: TrackDefinition, resolution: float, apron: float = APRON_WIDTH) -> float:
    """Analytic count 2 * (L / res) * (total width / res) for sanity checks."""
    geom = track.geometry
    width = float(np.max(geom.grid_left) + np.max(geom.grid_right)) + 2.0 * apron
    return 2.0 * (track.total_length / resolution) * (width / resolution)
