import json
from collections import Counter

import pytest

from cqfield.acceptance import CASES, determinism_pipeline
from cqfield.cli import EXIT_DATA, EXIT_OK, main
from cqfield.repro import check_expectations, default_golden_path, load_golden, run_repro_suite


def test_every_criterion_has_exactly_one_golden_case():
    cases = load_golden()
    per = Counter(c["criterion"] for c in cases if c["criterion"] is not None)
    assert sorted(per) == list(range(1, 12))
    assert set(per.values()) == {1}


def test_golden_cases_reference_real_checks_and_bounds():
    for c in load_golden():
        assert c.get("runtime_bound_s"), c["name"]
        if c.get("kind", "check") == "check":
            assert c["command"][0] == "check" and c["command"][1] in CASES


def test_expectation_checker():
    m = {"a": 1.0, "b": {"c": [1, 2]}}
    assert check_expectations(m, [{"metric": "a", "op": "<", "value": 2}]) == []
    assert check_expectations(m, [{"metric": "b.c", "op": "==", "value": [1, 2]}]) == []
    assert check_expectations(m, [{"metric": "a", "op": ">", "value": 2}]) == ["a = 1.0, expected > 2"]
    assert check_expectations(m, [{"metric": "zz", "op": ">", "value": 2}]) == ["zz missing"]


def test_unknown_case_rejected(tmp_path):
    with pytest.raises(ValueError):
        run_repro_suite(out=tmp_path, only=["nope"])


def test_duplicate_names_rejected(tmp_path):
    g = tmp_path / "g.json"
    g.write_text(json.dumps({"cases": [{"name": "x"}, {"name": "x"}]}))
    with pytest.raises(ValueError):
        load_golden(g)


def test_long_cases_skipped_without_full(tmp_path):
    golden = json.loads(default_golden_path().read_text())
    golden["cases"] = [c for c in golden["cases"] if c.get("long")]
    g = tmp_path / "g.json"
    g.write_text(json.dumps(golden))
    report = run_repro_suite(g, tmp_path / "out")
    assert report["passed"] and all(c["skipped"] for c in report["cases"])


def test_suite_runs_property_case_through_cli(tmp_path):
    out = tmp_path / "out"
    assert main(["repro", "--case", "marching_cubes", "--case", "encoding_law", "--out", str(out)]) == EXIT_OK
    report = json.loads((out / "repro_report.json").read_text())
    assert [c["name"] for c in report["cases"]] == ["encoding_law", "marching_cubes"]
    assert report["passed"]


def test_failing_expectation_fails_suite(tmp_path, capsys):
    golden = json.loads(default_golden_path().read_text())
    case = next(c for c in golden["cases"] if c["name"] == "marching_cubes")
    case["expect"] = [{"metric": "triangles", "op": "<", "value": 10}]
    g = tmp_path / "g.json"
    g.write_text(json.dumps({"cases": [case]}))
    assert main(["repro", "--golden", str(g), "--out", str(tmp_path / "o")]) == EXIT_DATA
    assert "FAIL marching_cubes" in capsys.readouterr().out


@pytest.mark.slow
def test_tampered_checkpoint_fails_loudly(tmp_path):
    run = determinism_pipeline(tmp_path / "p")
    golden = json.loads(default_golden_path().read_text())
    case = next(c for c in golden["cases"] if c["name"] == "checkpoint_integrity")
    case["run_dir"] = str(run)
    g = tmp_path / "g.json"
    g.write_text(json.dumps({"cases": [case]}))
    assert run_repro_suite(g, tmp_path / "o1")["passed"]

    data = bytearray((run / "checkpoint.bin").read_bytes())
    data[len(data) // 2] ^= 0x01
    (run / "checkpoint.bin").write_bytes(bytes(data))
    report = run_repro_suite(g, tmp_path / "o2")
    assert not report["passed"]
    assert "checkpoint.bin" in report["cases"][0]["detail"]


@pytest.mark.slow
def test_integrity_case_reruns_into_same_out(tmp_path):
    out = tmp_path / "out"
    for _ in range(2):
        assert main(["--threads", "1", "repro", "--case", "checkpoint_integrity", "--out", str(out)]) == EXIT_OK
