import json
import subprocess
import sys

import pytest

from openrace.cli import main
from openrace.stock import stock_track_path


class TestTrackCommands:
    def test_validate_bundled(self, capsys):
        assert main(["track", "validate", "oval_1km"]) == 0
        out = capsys.readouterr().out
        assert "OK" in out and "oval_1km" in out

    def test_validate_rejects_bad_file(self, tmp_path, capsys):
        bad = tmp_path / "bad.ort"
        bad.write_text("openrace-track v1\nname x\nsamples 1\n0 0 0 1 1\n")
        assert main(["track", "validate", str(bad)]) == 1
        assert "INVALID" in capsys.readouterr().out

    def test_info_lists_regions(self, capsys):
        assert main(["track", "info", "oval_1km"]) == 0
        out = capsys.readouterr().out
        assert "total length" in out
        assert "sand" in out


class TestAssets:
    def test_regenerate_into_directory(self, tmp_path, capsys):
        assert main(["assets", "--dir", str(tmp_path)]) == 0
        assert (tmp_path / "tracks" / "oval_1km.ort").exists()
        assert (tmp_path / "vehicles" / "gt3_generic.orv").exists()


class TestDatagenCommand:
    def test_end_to_end_small(self, tmp_path, capsys, oval, gt3):
        import numpy as np

        from openrace.ins import NoiseModel
        from openrace.recording import SessionRecorder
        from openrace.session import CoreSession, SessionSettings

        settings = SessionSettings(noise=NoiseModel.quiet(), spawn_speed=10.0)
        core = CoreSession(oval, gt3, settings)
        rec = SessionRecorder(tmp_path / "rec", oval, gt3, settings)
        image = np.zeros((18, 32), dtype=np.uint8)
        last_ins = None
        for _ in range(300):
            r = core.tick()
            if r.state_due:
                rec.add_state(r.state)
                last_ins = r.ins
            if r.frame_due and last_ins is not None:
                rec.add_capture(image, r.state, last_ins)
        rec.close()

        code = main([
            "datagen",
            "--record", str(tmp_path / "rec"),
            "--track", "oval_1km",
            "--out", str(tmp_path / "ds"),
            "--size", "64x36",
        ])
        assert code == 0
        manifest = json.loads((tmp_path / "ds" / "dataset.json").read_text())
        assert manifest["frame_count"] == 30


class TestEntryPoint:
    def test_module_invocation(self):
        result = subprocess.run(
            [sys.executable, "-m", "openrace.cli", "track", "validate", "oval_1km"],
            capture_output=True,
            text=True,
            timeout=120,
        )
        assert result.returncode == 0
        assert "OK" in result.stdout

    def test_help_lists_subcommands(self, capsys):
        with pytest.raises(SystemExit):
            main(["--help"])
        out = capsys.readouterr().out
        for cmd in ("serve", "datagen", "drive", "rl-env", "benchmark"):
            assert cmd in out
