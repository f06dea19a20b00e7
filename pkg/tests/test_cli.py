import csv
import json
import math

import pytest

from cqfield.cli import EXIT_DATA, EXIT_NUMERIC, EXIT_OK, EXIT_USAGE, main, verify_manifest
from cqfield.stats import STATS_HEADER

TINY_MODEL = ["--set", "model.geo_layers=1", "--set", "model.geo_width=8", "--set", "model.feature_dim=4",
              "--set", "model.color_layers=1", "--set", "model.color_width=8"]


@pytest.fixture(scope="module")
def data_dir(tmp_path_factory):
    d = tmp_path_factory.mktemp("data")
    assert main(["synth", "--views", "6", "--res", "16", "--out", str(d)]) == EXIT_OK
    return d


@pytest.fixture(scope="module")
def trained(tmp_path_factory, data_dir):
    run = tmp_path_factory.mktemp("run")
    code = main(["train", "--data", str(data_dir), "--mode", "discrete", "--grid-res", "256", "--iterations", "20",
                 "--batch-rays", "32", "--samples-per-ray", "16", "--monitor", "32", "--stats-iters", "5",
                 "--out", str(run)])
    assert code == EXIT_OK
    return run


def test_synth_contract(tmp_path):
    out = tmp_path / "d"
    assert main(["synth", "--shape", "sphere", "--views", "16", "--res", "64", "--out", str(out)]) == EXIT_OK
    assert len(list((out / "images").glob("*.ppm"))) == 16
    assert len(json.loads((out / "cameras.json").read_text())) == 16
    again = tmp_path / "e"
    assert main(["synth", "--shape", "sphere", "--views", "16", "--res", "64", "--out", str(again)]) == EXIT_OK
    for f in (out / "images").iterdir():
        assert f.read_bytes() == (again / "images" / f.name).read_bytes()


def test_synth_single_view_is_usage_error(tmp_path, capsys):
    assert main(["synth", "--views", "1", "--out", str(tmp_path / "x")]) == EXIT_USAGE
    assert "2 views" in capsys.readouterr().err


def test_synth_other_shapes(tmp_path):
    assert main(["synth", "--shape", "torus", "--views", "2", "--res", "8", "--out", str(tmp_path / "t")]) == EXIT_OK
    assert main(["synth", "--shape", "box", "--half-extents", "2", "2", "2", "--views", "2", "--res", "8",
                 "--out", str(tmp_path / "b")]) == EXIT_USAGE


def test_train_outputs(trained):
    for name in ("checkpoint.bin", "stats.csv", "train_log.csv", "config.txt", "resolved_config.txt", "manifest.json"):
        assert (trained / name).exists(), name
    assert "grid.resolution=256" in (trained / "resolved_config.txt").read_text()


def test_train_is_reproducible(tmp_path, data_dir, trained):
    run = tmp_path / "again"
    assert main(["train", "--data", str(data_dir), "--mode", "discrete", "--grid-res", "256", "--iterations", "20",
                 "--batch-rays", "32", "--samples-per-ray", "16", "--monitor", "32", "--stats-iters", "5",
                 "--out", str(run)]) == EXIT_OK
    for name in ("checkpoint.bin", "stats.csv", "train_log.csv"):
        assert (run / name).read_bytes() == (trained / name).read_bytes()


def test_unknown_config_key_is_named(tmp_path, data_dir, capsys):
    cfg = tmp_path / "c.txt"
    cfg.write_text("train.iterations=2\nmodel.depth=9\n")
    assert main(["train", "--data", str(data_dir), "--config", str(cfg), "--out", str(tmp_path / "r")]) == EXIT_USAGE
    assert "model.depth" in capsys.readouterr().err


def test_config_file_is_recorded_verbatim(tmp_path, data_dir):
    cfg = tmp_path / "c.txt"
    text = "# mine\ntrain.iterations = 2\ntrain.batch_rays=8\nrender.samples_per_ray=8\n"
    cfg.write_text(text)
    out = tmp_path / "r"
    assert main(["train", "--data", str(data_dir), "--config", str(cfg), "--iterations", "3", "--stats-iters", "0",
                 *TINY_MODEL, "--out", str(out)]) == EXIT_OK
    assert (out / "config.txt").read_text() == text
    assert "train.iterations=3" in (out / "resolved_config.txt").read_text()


def test_missing_dataset_is_data_error(tmp_path, capsys):
    assert main(["train", "--data", str(tmp_path / "nope"), "--out", str(tmp_path / "r")]) == EXIT_DATA
    assert "does not exist" in capsys.readouterr().err


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_divergence_is_numerical_abort(tmp_path, data_dir, capsys):
    code = main(["train", "--data", str(data_dir), "--iterations", "5", "--batch-rays", "8", "--samples-per-ray", "8",
                 "--set", "train.learning_rate=1e300", "--stats-iters", "0", *TINY_MODEL, "--out", str(tmp_path / "r")])
    assert code == EXIT_NUMERIC
    assert "numerical abort" in capsys.readouterr().err


def test_stats_schema_and_dominance(tmp_path, data_dir):
    out = tmp_path / "s"
    assert main(["stats", "--data", str(data_dir), "--grid-res", "64", "--monitor", "64", "--stats-iterations", "8",
                 "--out", str(out)]) == EXIT_OK
    with open(out / "stats.csv") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == STATS_HEADER
    assert len(rows) == 9 and all(len(r) == 9 for r in rows)
    assert all(int(r[2]) <= int(r[1]) for r in rows[1:])
    ratios = json.loads((out / "ratios.json").read_text())
    assert ratios["unique_ratio"] >= 1.0


def test_stats_zero_monitor_is_usage_error(tmp_path, data_dir):
    assert main(["stats", "--data", str(data_dir), "--monitor", "0", "--out", str(tmp_path / "s")]) == EXIT_USAGE


def test_bad_thread_env(tmp_path, data_dir, monkeypatch):
    monkeypatch.setenv("CQFIELD_THREADS", "zero")
    assert main(["synth", "--views", "2", "--res", "4", "--out", str(tmp_path / "x")]) == EXIT_USAGE


@pytest.mark.parametrize("coord", ["continuous", "discrete"])
def test_extract_and_eval(tmp_path, trained, data_dir, coord):
    out = tmp_path / "m"
    # a 20-step field is nearly uniform; a level inside its range still yields a surface
    import numpy as np

    from cqfield.field import load_checkpoint
    from cqfield.grid import GridSpec
    from cqfield.surface import field_scalar, lattice_points

    vals = field_scalar(load_checkpoint(trained / "checkpoint.bin"), GridSpec(-1, 1, 256), lattice_points(-1, 1, 24),
                        coord)
    level = float(np.median(vals))
    assert main(["extract", "--checkpoint", str(trained / "checkpoint.bin"), "--mc-res", "24", "--level", repr(level),
                 "--coord-mode", coord, "--out", str(out)]) == EXIT_OK
    assert (out / "mesh.obj").stat().st_size > 0
    ev = tmp_path / "e"
    assert main(["eval", "--mesh", str(out / "mesh.obj"), "--data", str(data_dir), "--samples", "2000",
                 "--out", str(ev)]) == EXIT_OK
    report = json.loads((ev / "chamfer.json").read_text())
    assert all(math.isfinite(report[k]) for k in ("accuracy", "completeness", "chamfer"))


def test_eval_empty_mesh(tmp_path, data_dir, capsys):
    mesh = tmp_path / "empty.obj"
    mesh.write_text("")
    assert main(["eval", "--mesh", str(mesh), "--data", str(data_dir), "--out", str(tmp_path / "e")]) == EXIT_DATA
    assert "empty mesh" in capsys.readouterr().err


def test_extract_missing_checkpoint(tmp_path):
    assert main(["extract", "--checkpoint", str(tmp_path / "none.bin"), "--out", str(tmp_path / "m")]) == EXIT_DATA


def test_extract_corrupt_checkpoint(tmp_path, trained):
    bad = tmp_path / "checkpoint.bin"
    bad.write_bytes((trained / "checkpoint.bin").read_bytes()[:100])
    assert main(["extract", "--checkpoint", str(bad), "--out", str(tmp_path / "m")]) == EXIT_DATA


def test_ablation_rows_follow_input_order(tmp_path, data_dir):
    out = tmp_path / "a"
    assert main(["ablate-resolution", "--data", str(data_dir), "--resolutions", "16,64,256,1024,inf",
                 "--iterations", "2", "--batch-rays", "8", "--samples-per-ray", "8", "--mc-res", "8",
                 "--eval-samples", "100", *TINY_MODEL, "--out", str(out)]) == EXIT_OK
    lines = (out / "ablation.csv").read_text().splitlines()
    assert lines[0] == "resolution,chamfer"
    assert [ln.split(",")[0] for ln in lines[1:]] == ["16", "64", "256", "1024", "inf"]


def test_manifest_checksums_detect_tampering(trained, tmp_path):
    import shutil

    run = tmp_path / "copy"
    shutil.copytree(trained, run)
    manifest = json.loads((run / "manifest.json").read_text())
    names = {o["path"] for o in manifest["outputs"]}
    assert {"checkpoint.bin", "stats.csv", "train_log.csv"} <= names
    assert verify_manifest(run) == []
    data = bytearray((run / "checkpoint.bin").read_bytes())
    data[-1] ^= 0xFF
    (run / "checkpoint.bin").write_bytes(bytes(data))
    assert verify_manifest(run) == ["checkpoint.bin"]


def test_check_unknown_case(tmp_path):
    assert main(["check", "no_such_case", "--out", str(tmp_path / "c")]) == EXIT_USAGE


def test_check_runs_a_case(tmp_path, capsys):
    assert main(["check", "marching_cubes", "--out", str(tmp_path / "c")]) == EXIT_OK
    assert json.loads((tmp_path / "c" / "check.json").read_text())["passed"] is True
