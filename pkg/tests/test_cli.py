import json

import pytest

from mpqkd.cli import EXIT_CONFIG, EXIT_NUMERIC, main
from mpqkd.model import TallyTable, format_config
from mpqkd.presets import preset_config
from mpqkd.siftmap import write_tallies


def test_plob(capsys):
    assert main(["plob", "--loss-db", "40.92"]) == 0
    assert capsys.readouterr().out.strip() == "1.167326e-04"


def test_preset_prints_loadable_config(tmp_path, capsys):
    assert main(["preset", "--distance", "202.31"]) == 0
    text = capsys.readouterr().out
    assert "beat_center_hz" in text
    (tmp_path / "c.cfg").write_text(text)
    assert main(["estimate", "--config", str(tmp_path / "c.cfg"), "--tallies", str(tmp_path / "none.json")]) == EXIT_CONFIG


def test_pair(tmp_path, capsys):
    (tmp_path / "m.txt").write_text("1 0 1 1 0 0 1 1 1\n")
    assert main(["pair", "--mask", str(tmp_path / "m.txt"), "--l-max", "2"]) == 0
    assert capsys.readouterr().out.split() == ["0", "2", "6", "7"]
    (tmp_path / "m.txt").write_text("1 2\n")
    assert main(["pair", "--mask", str(tmp_path / "m.txt"), "--l-max", "2"]) == EXIT_CONFIG


def test_simulate_and_replay(tmp_path, capsys):
    out = tmp_path / "run"
    assert main(["simulate", "--preset", "202.31", "--rounds", "1000000", "--seed", "3",
                 "--out", str(out), "--records"]) == 0
    assert "n11_z lower" in capsys.readouterr().out
    rep = json.loads((out / "report.json").read_text())
    assert rep["manifest"]["seed"] == 3
    assert (out / "tallies.json").exists() and (out / "manifest.json").exists()
    assert main(["replay", "--preset", "202.31", "--records", str(out / "records.mpqk"),
                 "--out", str(tmp_path / "replay.json")]) == 0
    assert (tmp_path / "replay.json").read_text() == (out / "report.json").read_text()


def test_estimate_from_tallies(tmp_path, capsys):
    t = TallyTable({("mu", "mu"): 9_018_000, ("nu", "nu"): 1_000_000, ("2nu", "2nu"): 2000,
                    ("o", "o"): 5, ("mu", "o"): 1000, ("o", "mu"): 1000, ("nu", "o"): 500,
                    ("o", "nu"): 500, ("2nu", "o"): 50, ("o", "2nu"): 50}, m_z=6300, m_x=520)
    write_tallies(t, tmp_path / "t.json")
    rc = main(["estimate", "--preset", "202.31", "--rounds", str(10**12), "--tallies", str(tmp_path / "t.json")])
    out = capsys.readouterr().out
    assert rc in (0, EXIT_NUMERIC)
    if rc == 0:
        assert "skr_bpp" in json.loads(out)


def test_estimate_with_no_x_pairs_is_numeric_failure(tmp_path):
    write_tallies(TallyTable({("mu", "mu"): 10}), tmp_path / "t.json")
    assert main(["estimate", "--preset", "202.31", "--tallies", str(tmp_path / "t.json")]) == EXIT_NUMERIC


def test_freqest(tmp_path, capsys):
    import numpy as np
    t = np.arange(2000) * 1e-9
    counts = np.round(3 * (1 + np.cos(2 * np.pi * 1e8 * t))).astype(int)
    (tmp_path / "b.csv").write_text("count\n" + "\n".join(map(str, counts)) + "\n")
    assert main(["freqest", "--bins", str(tmp_path / "b.csv"), "--window-us", "1",
                 "--out", str(tmp_path / "e.csv")]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert len(lines) == 2 and float(lines[0].split()[1]) == pytest.approx(1e8, abs=5e5)


def test_freqest_dc_bins_is_numeric_failure(tmp_path):
    (tmp_path / "b.csv").write_text("\n".join(["2"] * 2000) + "\n")
    assert main(["freqest", "--bins", str(tmp_path / "b.csv"), "--window-us", "1"]) == EXIT_NUMERIC


def test_bad_config_exits_2(tmp_path):
    cfg = format_config(preset_config(202.31)).replace("m_slices = 16", "m_slices = -4")
    (tmp_path / "bad.cfg").write_text(cfg)
    assert main(["simulate", "--config", str(tmp_path / "bad.cfg"), "--out", str(tmp_path)]) == EXIT_CONFIG
    assert main(["simulate", "--out", str(tmp_path)]) == EXIT_CONFIG


def test_missing_records_exits_2(tmp_path):
    assert main(["replay", "--preset", "202.31", "--records", str(tmp_path / "nope.mpqk")]) == EXIT_CONFIG
