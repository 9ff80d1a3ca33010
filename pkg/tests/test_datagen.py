import hashlib
import json
from pathlib import Path

import numpy as np
import pytest

from openrace.datagen import DatagenConfig, DatagenError, generate_dataset
from openrace.ins import NoiseModel
from openrace.labels import MISS_ID
from openrace.recording import SessionRecorder, load_record
from openrace.render import load_depth_raw, load_normals_raw, load_semantic_png
from openrace.session import CoreSession, SessionSettings
from openrace.vehicle import ControlCommand


@pytest.fixture(scope="module")
def short_record(tmp_path_factory, oval, gt3):
    root = tmp_path_factory.mktemp("rec")
    settings = SessionSettings(noise=NoiseModel(seed=4), spawn_speed=12.0)
    core = CoreSession(oval, gt3, settings)
    recorder = SessionRecorder(root, oval, gt3, settings)
    core.set_control(ControlCommand(throttle=0.35))
    image = np.zeros((18, 32), dtype=np.uint8)
    last_ins = None
    for _ in range(round(2.0 * 300)):
        result = core.tick()
        if result.state_due:
            recorder.add_state(result.state)
            last_ins = result.ins
        if result.frame_due and last_ins is not None:
            recorder.add_capture(image, result.state, last_ins)
    recorder.close(complete=True)
    return load_record(root)


def tree_digest(root: Path) -> dict[str, str]:
    out = {}
    for path in sorted(root.rglob("*")):
        if path.is_file():
            out[str(path.relative_to(root))] = hashlib.sha256(path.read_bytes()).hexdigest()
    return out


class TestGenerateDataset:
    def test_cardinality_and_consistency(self, short_record, oval, tmp_path):
        config = DatagenConfig(width=96, height=54)
        manifest = generate_dataset(short_record, oval, tmp_path / "ds", config)
        assert manifest["frame_count"] == len(short_record.entries)
        frames = manifest["frames"]
        assert len(frames) == len(short_record.entries)
        for meta in frames[:: max(1, len(frames) // 6)]:
            sem = load_semantic_png(tmp_path / "ds" / meta["semantic"])
            depth = load_depth_raw(tmp_path / "ds" / meta["depth"])
            normals = load_normals_raw(tmp_path / "ds" / meta["normal"])
            assert sem.shape == depth.shape == normals.shape[:2]
            hit = sem != MISS_ID
            # a pixel is a hit in one map iff in all three
            assert np.isfinite(depth[hit]).all()
            assert np.isinf(depth[~hit]).all()
            lengths = np.linalg.norm(normals[hit], axis=-1)
            assert np.abs(lengths - 1.0).max() < 1e-5
            assert (normals[~hit] == 0.0).all()

    def test_regeneration_byte_identical(self, short_record, oval, tmp_path):
        config = DatagenConfig(width=64, height=36)
        generate_dataset(short_record, oval, tmp_path / "a", config)
        generate_dataset(short_record, oval, tmp_path / "b", config)
        assert tree_digest(tmp_path / "a") == tree_digest(tmp_path / "b")

    def test_track_mismatch_rejected(self, short_record, tmp_path):
        from openrace.stock import hairpin_club

        with pytest.raises(DatagenError, match="record was made on"):
            generate_dataset(short_record, hairpin_club(), tmp_path / "x")

    def test_pixel_count_summary_sane(self, short_record, oval, tmp_path):
        config = DatagenConfig(width=96, height=54)
        manifest = generate_dataset(short_record, oval, tmp_path / "ds2", config)
        counts = manifest["pixel_counts"]
        total = sum(counts.values())
        assert total == manifest["frame_count"] * 96 * 54
        drivable_fraction = counts["drivable"] / total
        # chase-cam frames on the oval: drivable fills a broad central band
        assert 0.10 < drivable_fraction < 0.60

    def test_skip_budget_enforced(self, short_record, oval, tmp_path):
        import copy

        broken = copy.deepcopy(short_record)
        for entry in broken.entries[: max(2, len(broken.entries) // 20)]:
            entry.state.pop("x")
        with pytest.raises(DatagenError, match="skipped"):
            generate_dataset(broken, oval, tmp_path / "broken", DatagenConfig(width=64, height=36))
