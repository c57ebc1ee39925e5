import json

import pytest

from dualgrid.cli import main

CONFIG = """\
filter:
  particle_count: 2000
scenario:
  base: simple_road
  duration: 1.5
"""


@pytest.fixture(scope="module")
def config(tmp_path_factory):
    p = tmp_path_factory.mktemp("cfg") / "run.yaml"
    p.write_text(CONFIG)
    return str(p)


@pytest.fixture(scope="module")
def first_run(tmp_path_factory, config):
    out = tmp_path_factory.mktemp("run") / "a"
    assert main(["--config", config, "--out", str(out), "--seed", "1"]) == 0
    return out


def test_outputs(first_run):
    for name in ("metrics.csv", "per_object_duration.csv", "manifest.json",
                 "detections.log", "truth.log"):
        assert (first_run / name).exists()
    manifest = json.loads((first_run / "manifest.json").read_text())
    assert manifest["seed"] == 1 and manifest["modes"] == ["position", "velocity", "dual"]
    assert len(set(manifest["stream_digest"].values())) == 1
    assert list((first_run / "snapshots" / "dual").glob("*.ppm"))


def test_rerun_and_threads_are_byte_identical(tmp_path, config, first_run):
    ref = (first_run / "metrics.csv").read_bytes()
    for threads in ("1", "3"):
        out = tmp_path / threads
        assert main(["--config", config, "--out", str(out), "--seed", "1", "--threads", threads]) == 0
        assert (out / "metrics.csv").read_bytes() == ref


def test_single_mode(tmp_path, config):
    assert main(["--config", config, "--out", str(tmp_path), "--mode", "dual",
                 "--snapshot-every", "0"]) == 0
    rows = (tmp_path / "metrics.csv").read_text().splitlines()
    assert len(rows) == 2 and rows[1].startswith("dual,")


def test_replay_matches_live_run(tmp_path, config, first_run):
    assert main(["--config", config, "--out", str(tmp_path), "--seed", "1", "--replay",
                 str(first_run / "detections.log"), str(first_run / "truth.log")]) == 0
    assert (tmp_path / "metrics.csv").read_bytes() == (first_run / "metrics.csv").read_bytes()


def test_replay_without_truth(tmp_path, config, first_run):
    assert main(["--config", config, "--out", str(tmp_path), "--mode", "position",
                 "--replay", str(first_run / "detections.log")]) == 0
    assert not (tmp_path / "metrics.csv").exists()
    assert (tmp_path / "manifest.json").exists()
    assert list((tmp_path / "snapshots" / "position").glob("*.ppm"))


def test_unknown_config_key(tmp_path, capsys):
    cfg = tmp_path / "bad.yaml"
    cfg.write_text("filter:\n  bogus: 1\n")
    assert main(["simple_road", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 2
    assert "filter.bogus" in capsys.readouterr().err


def test_unwritable_output(tmp_path, config):
    blocker = tmp_path / "file"
    blocker.write_text("")
    assert main(["--config", config, "--out", str(blocker / "out")]) != 0


def test_unknown_scenario(tmp_path):
    assert main(["rural", "--out", str(tmp_path)]) == 2


def test_bad_log(tmp_path):
    det = tmp_path / "d.log"
    det.write_text("#ego,0.0,0.0\n")
    assert main(["--replay", str(det), "--out", str(tmp_path / "o")]) == 2
