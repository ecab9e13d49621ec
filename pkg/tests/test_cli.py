import json
import math
import subprocess
import sys

import numpy as np
import pytest

from skyfleet.cli import main
from skyfleet.wire import read_container, read_pgm, read_replay

SMALL = {"seed": 1, "grid": {"name": "custom", "x_min": -20.0, "x_max": 20.0, "y_min": -20.0,
                             "y_max": 20.0},
         "rig": {"image_size": [192, 96]}, "scene": {"n_instances": 8, "area": 40.0}}


@pytest.fixture
def config(tmp_path):
    path = tmp_path / "scenario.json"
    path.write_text(json.dumps(SMALL))
    return str(path)


@pytest.fixture(scope="module")
def run_dir(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    cfg = d / "scenario.json"
    cfg.write_text(json.dumps(SMALL))
    assert main(["run", "--config", str(cfg), "--out", str(d / "out"), "--quiet"]) == 0
    return d / "out"


def test_generate_is_deterministic(config, tmp_path, capsys):
    a, b = tmp_path / "a.json", tmp_path / "b.json"
    assert main(["generate", "--config", config, "--out", str(a)]) == 0
    assert main(["generate", "--config", config, "--out", str(b), "--quiet"]) == 0
    assert a.read_bytes() == b.read_bytes()
    doc = json.loads(a.read_text())
    assert doc["header"]["tool"] == "skyfleet" and len(doc["scene"]["tracks"]) == 8
    assert "8 instances" in capsys.readouterr().out


def test_missing_seed(tmp_path, capsys):
    path = tmp_path / "bad.json"
    path.write_text(json.dumps({"rig": {}}))
    assert main(["generate", "--config", str(path), "--out", str(tmp_path / "x")]) == 1
    assert "seed" in capsys.readouterr().err


def test_missing_config_file(tmp_path):
    assert main(["run", "--config", str(tmp_path / "nope.json"), "--out", str(tmp_path)]) == 1


def test_run_outputs(run_dir):
    report = json.loads((run_dir / "report.json").read_text())
    assert report["tool"] == "skyfleet" and 0 <= report["report"]["iou"] <= 1
    csv = (run_dir / "report.csv").read_text().splitlines()
    assert csv[0].startswith("# skyfleet ") and report["config_hash"] in csv[0]
    assert csv[1].startswith("mode,iou") and csv[2].startswith("sisw,")
    header, arrays = read_container(run_dir / "run.skr")
    assert arrays["occupancy"].shape == (3, 4, 80, 80)
    _, records = read_replay(run_dir / "replay.skp")
    assert len(records) == 36


def test_run_summary_line(config, tmp_path, capsys):
    assert main(["run", "--config", config, "--out", str(tmp_path / "o"), "--mode", "none"]) == 0
    line = capsys.readouterr().out.strip()
    assert line.startswith("iou=") and line.endswith("bytes=0")


def test_rerun_is_byte_identical(run_dir, tmp_path):
    cfg = tmp_path / "scenario.json"
    cfg.write_text(json.dumps(SMALL))
    assert main(["run", "--config", str(cfg), "--out", str(tmp_path / "again"), "--quiet"]) == 0
    for name in ("report.json", "report.csv", "run.skr", "replay.skp"):
        assert (run_dir / name).read_bytes() == (tmp_path / "again" / name).read_bytes()


def test_compare_single_mode(config, tmp_path, capsys):
    out = tmp_path / "t.csv"
    assert main(["compare", "--config", config, "--mode", "none", "--out", str(out)]) == 0
    rows = out.read_text().splitlines()
    assert rows[0].startswith("# skyfleet") and rows[1].startswith("mode,iou,vpq")
    assert len(rows) == 3 and rows[2].startswith("none,")
    assert "none" in capsys.readouterr().out


def test_compare_several_modes(config, capsys):
    assert main(["compare", "--config", config, "--mode", "none,late", "--quiet"]) == 0


def test_compare_rejects_unknown_mode(config, capsys):
    assert main(["compare", "--config", config, "--mode", "none,psychic"]) == 1
    err = capsys.readouterr().err
    assert "psychic" in err and "sisw" in err and "early" in err


def test_dump_mask_has_cell_count_white_pixels(run_dir, tmp_path):
    header, arrays = read_container(run_dir / "run.skr")
    kinds, ledger = header["ledger_kinds"], arrays["ledger"]
    row = next(r for r, k in zip(ledger, kinds)
               if k == "features" and r[0] == 1 and r[1] == 2 and r[2] == 3)
    out = tmp_path / "mask.pgm"
    assert main(["dump", str(run_dir / "run.skr"), "--what", "mask", "--frame", "1",
                 "--drone", "2", "--peer", "3", "--out", str(out), "--quiet"]) == 0
    pix = read_pgm(out.read_bytes())
    assert np.count_nonzero(pix == 255) == row[3] == math.floor(0.25 * 80 * 80)
    assert np.count_nonzero((pix > 0) & (pix < 255)) == 0
    assert out.read_bytes().split(b"\n")[1].startswith(b"# skyfleet")


@pytest.mark.parametrize("what", ["bev", "info-volume"])
def test_dump_grids(run_dir, tmp_path, what):
    out = tmp_path / "g.pgm"
    assert main(["dump", str(run_dir / "run.skr"), "--what", what, "--out", str(out),
                 "--quiet"]) == 0
    assert read_pgm(out.read_bytes()).shape == (80, 80)


def test_dump_frame_out_of_range(run_dir, tmp_path, capsys):
    code = main(["dump", str(run_dir / "run.skr"), "--what", "bev", "--frame", "7",
                 "--out", str(tmp_path / "x.pgm")])
    assert code == 1 and "frame 7" in capsys.readouterr().err


def test_early_with_budget_is_invalid(config, tmp_path):
    assert main(["run", "--config", config, "--out", str(tmp_path / "o"), "--mode", "early",
                 "--budget-bytes", "5000"]) == 1


def test_no_command(capsys):
    assert main([]) == 1


def test_module_entry_point(config, tmp_path):
    proc = subprocess.run([sys.executable, "-m", "skyfleet", "generate", "--config", config,
                           "--out", str(tmp_path / "s.json"), "--quiet"], capture_output=True)
    assert proc.returncode == 0 and (tmp_path / "s.json").exists()
