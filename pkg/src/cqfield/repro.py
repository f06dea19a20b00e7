"""Golden-case regression suite.

Each golden case names an acceptance check (run in a fresh interpreter through
the CLI) and the toleranced metrics it must report. The ``run_integrity`` kind
instead re-checks a pipeline run directory against its manifest and, when
given, against pinned output checksums.
"""

from __future__ import annotations

import json
import operator
import shutil
import subprocess
import sys
import time
from pathlib import Path

OPS = {"<": operator.lt, "<=": operator.le, ">": operator.gt, ">=": operator.ge, "==": operator.eq}


def default_golden_path() -> Path:
    return Path(__file__).resolve().parents[2] / "golden" / "cases.json"


def load_golden(path=None) -> list[dict]:
    path = Path(path) if path is not None else default_golden_path()
    if not path.exists():
        raise FileNotFoundError(f"golden case file not found: {path}")
    data = json.loads(path.read_text())
    cases = data["cases"]
    names = [c["name"] for c in cases]
    if len(set(names)) != len(names):
        raise ValueError(f"{path}: duplicate golden case names")
    return cases


def _metric(metrics: dict, key: str):
    value = metrics
    for part in key.split("."):
        value = value[part]
    return value


def check_expectations(metrics: dict, expect: list[dict]) -> list[str]:
    """Human-readable list of violated expectations (empty when all hold)."""
    failures = []
    for e in expect:
        try:
            got = _metric(metrics, e["metric"])
        except (KeyError, TypeError):
            failures.append(f"{e['metric']} missing")
            continue
        if not OPS[e["op"]](got, e["value"]):
            failures.append(f"{e['metric']} = {got!r}, expected {e['op']} {e['value']!r}")
    return failures


def _run_check(case: dict, out: Path) -> dict:
    case_out = out / case["name"]
    cmd = [sys.executable, "-m", "cqfield", "--threads", "1", *case["command"], "--out", str(case_out)]
    proc = subprocess.run(cmd, capture_output=True, text=True)
    if proc.returncode != 0:
        return {"passed": False, "detail": f"exit {proc.returncode}: {proc.stderr.strip()[-400:]}", "measured": {}}
    result = json.loads((case_out / "check.json").read_text())
    failures = check_expectations(result["metrics"], case.get("expect", []))
    if not result["passed"]:
        failures.insert(0, "case reported failure")
    detail = result["detail"] + ("" if not failures else " | " + "; ".join(failures))
    return {"passed": not failures, "detail": detail, "measured": result["metrics"]}


def _run_integrity(case: dict, out: Path) -> dict:
    from cqfield.acceptance import determinism_pipeline
    from cqfield.cli import _sha256, verify_manifest

    if case.get("run_dir"):
        run = Path(case["run_dir"])
    else:
        # scratch directory owned by the suite; a previous repro may have left it behind
        scratch = out / case["name"]
        shutil.rmtree(scratch, ignore_errors=True)
        try:
            run = determinism_pipeline(scratch)
        except RuntimeError as exc:
            return {"passed": False, "detail": f"pipeline failed: {exc}", "measured": {}}
    bad = verify_manifest(run)
    measured = {f: _sha256(run / f) for f in case.get("checksums", {}) if (run / f).exists()}
    drift = [f for f, want in case.get("checksums", {}).items() if measured.get(f) != want]
    failures = []
    if bad:
        failures.append(f"manifest checksum mismatch: {', '.join(bad)}")
    if drift:
        failures.append(f"differs from pinned checksum: {', '.join(drift)}")
    detail = "; ".join(failures) if failures else f"manifest and {len(measured)} pinned checksums match"
    return {"passed": not failures, "detail": detail, "measured": measured}


def run_repro_suite(golden=None, out=".", only=None, full=False) -> dict:
    """Run golden cases sequentially; long training cases run only with ``full``."""
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    cases = load_golden(golden)
    if only:
        unknown = set(only) - {c["name"] for c in cases}
        if unknown:
            raise ValueError(f"unknown golden case(s): {', '.join(sorted(unknown))}")
        cases = [c for c in cases if c["name"] in only]
    report = []
    for case in cases:
        if case.get("long") and not full and not only:
            report.append({"name": case["name"], "criterion": case.get("criterion"), "passed": True,
                           "skipped": True, "detail": "long case skipped (use --full)"})
            continue
        start = time.perf_counter()
        kind = case.get("kind", "check")
        res = _run_integrity(case, out) if kind == "run_integrity" else _run_check(case, out)
        seconds = time.perf_counter() - start
        bound = case.get("runtime_bound_s")
        if bound is not None and seconds > bound:
            res["passed"] = False
            res["detail"] += f" | took {seconds:.0f}s, bound {bound}s"
        report.append({"name": case["name"], "criterion": case.get("criterion"), "seconds": seconds,
                       "runtime_bound_s": bound, **res})
    return {"passed": all(c["passed"] for c in report), "cases": report}
