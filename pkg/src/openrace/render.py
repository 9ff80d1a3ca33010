"""Pinhole annotation renderer: semantic / depth / surface-normal maps.

One primary ray is cast through every pixel center (no anti-aliasing, so
labels stay exact).  Camera convention: world is z-up right-handed; the
camera looks along its +forward axis with the principal axis through the
image center; FOV is horizontal and pixels are square.  Depth is the ray
parameter t in meters; normals are unit vectors in the camera (right, up,
forward) basis flipped to face the camera.  Misses carry +inf depth, a zero
normal and label id 255.
"""

from __future__ import annotations

import math
import struct
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .bvh import Bvh, raycast_batch
from .labels import MISS_ID, color_table
from .mesh import TrackMesh
from .vehicle import GroundTruthState

DEPTH_MAGIC = b"ORKD"
NORMAL_MAGIC = b"ORKN"
_RAW_HEADER = struct.Struct("<4sIII")  # magic, width, height, reserved


@dataclass(frozen=True)
class CameraModel:
    width: int
    height: int
    hfov: float  # radians
    position: tuple[float, float, float]
    rotation: tuple  # 3x3 row tuples, columns are (right, up, forward) in world

    def __post_init__(self) -> None:
        if not (0.0 < self.hfov < math.pi):
            raise ValueError(f"hfov {self.hfov} outside (0, pi)")
        if self.width * self.height > 8192 * 8192:
            raise ValueError("image larger than 8192^2")

    @property
    def rotation_matrix(self) -> np.ndarray:
        return np.array(self.rotation, dtype=float)

    @property
    def right(self) -> np.ndarray:
        return self.rotation_matrix[:, 0]

    @property
    def up(self) -> np.ndarray:
        return self.rotation_matrix[:, 1]

    @property
    def forward(self) -> np.ndarray:
        return self.rotation_matrix[:, 2]

    @classmethod
    def from_yaw_pitch(
        cls,
        position,
        yaw: float,
        pitch: float,
        width: int = 640,
        height: int = 360,
        hfov: float = 1.4,
    ) -> "CameraModel":
        """Camera at `position` yawed CCW from +x, pitched up positive."""
        cy, sy = math.cos(yaw), math.sin(yaw)
        cp, sp = math.cos(pitch), math.sin(pitch)
        forward = np.array([cy * cp, sy * cp, sp])
        right = np.array([sy, -cy, 0.0])
        up = np.cross(right, forward)
        rot = np.column_stack([right, up, forward])
        return cls(
            width=width,
            height=height,
            hfov=hfov,
            position=tuple(float(v) for v in position),
            rotation=tuple(tuple(row) for row in rot),
        )

    def ray_directions(self) -> np.ndarray:
        """(H, W, 3) unit world-frame directions through each pixel center."""
        tan_h = math.tan(self.hfov / 2.0)
        tan_v = tan_h * self.height / self.width
        us = (2.0 * (np.arange(self.width) + 0.5) / self.width - 1.0) * tan_h
        vs = (1.0 - 2.0 * (np.arange(self.height) + 0.5) / self.height) * tan_v
        r = self.rotation_matrix
        dirs = (
            us[None, :, None] * r[:, 0][None, None, :]
            + vs[:, None, None] * r[:, 1][None, None, :]
            + r[:, 2][None, None, :]
        )
        dirs /= np.linalg.norm(dirs, axis=2, keepdims=True)
        return dirs


@dataclass(frozen=True)
class CameraRig:
    """Camera mount in the vehicle frame (x forward, y left, z up)."""

    kind: int  # 0 chase, 1 cockpit
    name: str
    offset: tuple[float, float, float]
    pitch: float

    def camera_for_state(
        self, state: GroundTruthState, width: int = 640, height: int = 360, hfov: float = 1.4
    ) -> CameraModel:
        cy, sy = math.cos(state.heading), math.sin(state.heading)
        ox, oy, oz = self.offset
        pos = (
            state.x + ox * cy - oy * sy,
            state.y + ox * sy + oy * cy,
            state.z + oz,
        )
        return CameraModel.from_yaw_pitch(
            pos, yaw=state.heading, pitch=self.pitch, width=width, height=height, hfov=hfov
        )


CHASE_RIG = CameraRig(kind=0, name="chase", offset=(-7.0, 0.0, 2.6), pitch=-0.10)
COCKPIT_RIG = CameraRig(kind=1, name="cockpit", offset=(0.3, 0.0, 1.15), pitch=-0.03)
RIGS = {"chase": CHASE_RIG, "cockpit": COCKPIT_RIG}
RIGS_BY_KIND = {rig.kind: rig for rig in RIGS.values()}


@dataclass
class AnnotationFrame:
    semantic: np.ndarray  # (H, W) uint8 label ids, MISS_ID on miss
    depth: np.ndarray  # (H, W) float32 meters, +inf on miss
    normals: np.ndarray  # (H, W, 3) float32 camera frame, zero on miss
    camera: CameraModel
    source_tick: int = 0

    @property
    def hit_mask(self) -> np.ndarray:
        return self.semantic != MISS_ID


def render_frame(
    camera: CameraModel, bvh: Bvh, mesh: TrackMesh, source_tick: int = 0
) -> AnnotationFrame:
    h, w = camera.height, camera.width
    dirs = camera.ray_directions().reshape(-1, 3)
    origins = np.broadcast_to(np.asarray(camera.position, dtype=float), dirs.shape)
    t, tri, _, _, _ = raycast_batch(bvh, np.ascontiguousarray(origins), dirs)

    hit = tri >= 0
    semantic = np.full(h * w, MISS_ID, dtype=np.uint8)
    semantic[hit] = mesh.labels[tri[hit]]
    depth = np.full(h * w, np.inf, dtype=np.float32)
    depth[hit] = t[hit].astype(np.float32)

    normals = np.zeros((h * w, 3), dtype=np.float32)
    if hit.any():
        n_world = mesh.normals[tri[hit]]
        facing = np.einsum("ij,ij->i", n_world, dirs[hit])
        n_world = np.where(facing[:, None] > 0, -n_world, n_world)
        r = camera.rotation_matrix
        normals[hit] = (n_world @ r).astype(np.float32)  # components on (right, up, fwd)

    return AnnotationFrame(
        semantic=semantic.reshape(h, w),
        depth=depth.reshape(h, w),
        normals=normals.reshape(h, w, 3),
        camera=camera,
        source_tick=source_tick,
    )


def render_semantic_ids(camera: CameraModel, bvh: Bvh, mesh: TrackMesh) -> np.ndarray:
    """Semantic-only render used by the live frame channel."""
    return render_frame(camera, bvh, mesh).semantic


# -- annotation file I/O ---------------------------------------------------------


def save_semantic_png(path, ids: np.ndarray) -> None:
    from PIL import Image

    Image.fromarray(ids.astype(np.uint8), mode="L").save(path, format="PNG")


def load_semantic_png(path) -> np.ndarray:
    from PIL import Image

    return np.asarray(Image.open(path).convert("L"), dtype=np.uint8)


def save_preview_png(path, ids: np.ndarray) -> None:
    from PIL import Image

    rgb = color_table()[ids]
    Image.fromarray(rgb, mode="RGB").save(path, format="PNG")


def save_depth_raw(path, depth: np.ndarray) -> None:
    h, w = depth.shape
    with open(path, "wb") as f:
        f.write(_RAW_HEADER.pack(DEPTH_MAGIC, w, h, 0))
        f.write(np.ascontiguousarray(depth, dtype="<f4").tobytes())


def load_depth_raw(path) -> np.ndarray:
    data = Path(path).read_bytes()
    magic, w, h, _ = _RAW_HEADER.unpack_from(data)
    if magic != DEPTH_MAGIC:
        raise ValueError(f"not a depth file: magic {magic!r}")
    return np.frombuffer(data, dtype="<f4", offset=_RAW_HEADER.size).reshape(h, w).copy()


def save_normals_raw(path, normals: np.ndarray) -> None:
    h, w, _ = normals.shape
    with open(path, "wb") as f:
        f.write(_RAW_HEADER.pack(NORMAL_MAGIC, w, h, 0))
        f.write(np.ascontiguousarray(normals, dtype="<f4").tobytes())


def load_normals_raw(path) -> np.ndarray:
    data = Path(path).read_bytes()
    magic, w, h, _ = _RAW_HEADER.unpack_from(data)
    if magic != NORMAL_MAGIC:
        raise ValueError(f"not a normals file: magic {magic!r}")
    return np.frombuffer(data, dtype="<f4", offset=_RAW_HEADER.size).reshape(h, w, 3).copy()
