"""Annotation dataset generation from session recordings.

For every capture in a recording the camera pose is rebuilt from the stored
vehicle state and the scene is re-rendered into co-registered semantic,
depth and surface-normal maps.  Outputs per frame: an 8-bit semantic PNG of
label ids, a colorized preview PNG, a float32 depth raster and a float32x3
normal raster, plus a manifest with per-frame files and camera poses and a
per-label pixel-count summary.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .bvh import build_bvh
from .labels import ALL_LABELS, MISS_ID
from .mesh import build_track_mesh
from .recording import SessionRecord
from .render import (
    RIGS,
    CameraRig,
    render_frame,
    save_depth_raw,
    save_normals_raw,
    save_preview_png,
    save_semantic_png,
)
from .track import TrackDefinition

log = logging.getLogger(__name__)

DATASET_FORMAT = "openrace-dataset v1"
MAX_SKIP_FRACTION = 0.01


class DatagenError(RuntimeError):
    pass


@dataclass
class DatagenConfig:
    camera: str = "chase"
    width: int = 640
    height: int = 360
    hfov: float = 1.4
    mesh_resolution: float = 1.0


class _FakeState:
    """Minimal pose view over a recorded channel dict for the camera rig."""

    __slots__ = ("x", "y", "z", "heading")

    def __init__(self, channels: dict):
        self.x = channels["x"]
        self.y = channels["y"]
        self.z = channels["z"]
        self.heading = channels["heading"]


def generate_dataset(
    record: SessionRecord,
    track: TrackDefinition,
    out_dir,
    config: DatagenConfig | None = None,
) -> dict:
    """Render annotation triples for every record entry; returns the manifest."""
    config = config or DatagenConfig()
    if record.track_name != track.name:
        raise DatagenError(
            f"record was made on {record.track_name!r}, not {track.name!r}"
        )
    rig: CameraRig = RIGS[config.camera]
    out = Path(out_dir)
    for sub in ("semantic", "preview", "depth", "normal"):
        (out / sub).mkdir(parents=True, exist_ok=True)

    mesh = build_track_mesh(track, config.mesh_resolution)
    bvh = build_bvh(mesh)

    frames = []
    skipped = 0
    pixel_counts = {lab.name: 0 for lab in ALL_LABELS}
    pixel_counts["miss"] = 0
    for i, entry in enumerate(record.entries):
        try:
            state = _FakeState(entry.state)
        except KeyError as exc:
            log.warning("entry %d missing state channel %s; skipped", i, exc)
            skipped += 1
            continue
        camera = rig.camera_for_state(
            state, width=config.width, height=config.height, hfov=config.hfov
        )
        frame = render_frame(camera, bvh, mesh, source_tick=entry.tick)
        name = f"{i:06d}"
        save_semantic_png(out / "semantic" / f"{name}.png", frame.semantic)
        save_preview_png(out / "preview" / f"{name}.png", frame.semantic)
        save_depth_raw(out / "depth" / f"{name}.orkd", frame.depth)
        save_normals_raw(out / "normal" / f"{name}.orkn", frame.normals)
        ids, counts = np.unique(frame.semantic, return_counts=True)
        for label_id, count in zip(ids, counts):
            if label_id == MISS_ID:
                pixel_counts["miss"] += int(count)
            else:
                for lab in ALL_LABELS:
                    if lab.id == label_id:
                        pixel_counts[lab.name] += int(count)
                        break
        frames.append(
            {
                "index": i,
                "tick": entry.tick,
                "sim_time": entry.sim_time,
                "semantic": f"semantic/{name}.png",
                "preview": f"preview/{name}.png",
                "depth": f"depth/{name}.orkd",
                "normal": f"normal/{name}.orkn",
                "camera": {
                    "position": list(camera.position),
                    "rotation": [list(r) for r in camera.rotation],
                    "width": camera.width,
                    "height": camera.height,
                    "hfov": camera.hfov,
                },
            }
        )

    if record.entries and skipped / len(record.entries) > MAX_SKIP_FRACTION:
        raise DatagenError(
            f"skipped {skipped} of {len(record.entries)} entries (> {MAX_SKIP_FRACTION:.0%})"
        )

    manifest = {
        "format": DATASET_FORMAT,
        "track": track.name,
        "camera": config.camera,
        "source_record": str(record.root),
        "frame_count": len(frames),
        "skipped": skipped,
        "pixel_counts": pixel_counts,
        "frames": frames,
    }
    (out / "dataset.json").write_text(json.dumps(manifest, indent=1, sort_keys=True))
    return manifest
