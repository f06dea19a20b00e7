"""``cqfield`` command line: synth, train, stats, extract, eval, ablate-resolution, repro."""

from __future__ import annotations

import argparse
import contextlib
import hashlib
import json
import logging
import math
import os
import statistics
import sys
import time
from pathlib import Path

from cqfield import __version__
from cqfield.field import load_checkpoint, save_checkpoint
from cqfield.scene import DatasetError, SceneDef, load_dataset, make_rig, save_dataset, synthesize
from cqfield.grid import GridSpec
from cqfield.stats import StatsCollector, count_ratios, export_stats
from cqfield.surface import chamfer, extract_mesh, read_obj, sample_scene_surface, sample_surface, write_obj
from cqfield.train import (STREAM_EVAL, ConfigError, NumericalAbort, TrainConfig, coerce_items, load_config,
                           stream, train)

log = logging.getLogger("cqfield")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


class ReproFailure(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def write_manifest(out: Path, command: list[str], config_text: str, seed, started: float, files) -> Path:
    """Record inputs and output checksums; written via rename so it appears atomically."""
    outputs = []
    for f in sorted({Path(f) for f in files}):
        outputs.append({"path": str(f.relative_to(out)) if f.is_relative_to(out) else str(f),
                        "sha256": _sha256(f), "bytes": f.stat().st_size})
    manifest = {
        "tool": "cqfield",
        "version": __version__,
        "command": command,
        "config": config_text,
        "seed": seed,
        "started": time.strftime("%Y-%m-%dT%H:%M:%S", time.gmtime(started)),
        "finished": time.strftime("%Y-%m-%dT%H:%M:%S", time.gmtime()),
        "outputs": outputs,
    }
    path = out / "manifest.json"
    tmp = out / "manifest.json.tmp"
    tmp.write_text(json.dumps(manifest, indent=2) + "\n")
    tmp.replace(path)
    return path


def verify_manifest(out) -> list[str]:
    """Names of output files whose checksum no longer matches the manifest."""
    out = Path(out)
    manifest = json.loads((out / "manifest.json").read_text())
    bad = []
    for entry in manifest["outputs"]:
        p = out / entry["path"]
        if not p.exists() or _sha256(p) != entry["sha256"]:
            bad.append(entry["path"])
    return bad


def _int_list(text: str) -> list[int]:
    return [int(x) for x in text.split(",") if x.strip()]


def _resolutions(text: str) -> list:
    out = []
    for tok in text.split(","):
        tok = tok.strip().lower()
        if not tok:
            continue
        if tok in ("inf", "∞", "continuous"):
            out.append("inf")
        else:
            r = int(tok)
            if r < 1:
                raise argparse.ArgumentTypeError(f"resolution must be positive, got {r}")
            out.append(r)
    if not out:
        raise argparse.ArgumentTypeError("no resolutions given")
    return out


def _positive(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text}")
    return v


def _config_from_args(args) -> tuple[TrainConfig, str]:
    overrides = {}
    for item in args.set or []:
        if "=" not in item:
            raise UsageError(f"--set expects key=value, got {item!r}")
        k, v = item.split("=", 1)
        overrides.update(coerce_items({k.strip(): v.strip()}, "--set"))
    flag_map = {"mode": "mode", "grid_res": "grid_resolution", "iterations": "iterations", "seed": "seed",
                "compositing": "compositing", "batch_rays": "batch_rays", "samples": "samples_per_ray"}
    for attr, name in flag_map.items():
        v = getattr(args, attr, None)
        if v is not None:
            overrides[name] = v
    text = Path(args.config).read_text() if getattr(args, "config", None) else ""
    return load_config(args.config if getattr(args, "config", None) else None, overrides), text


def _prepare_out(out: Path, force: bool = True) -> None:
    if out.exists() and any(out.iterdir()) and not force:
        raise UsageError(f"output directory {out} is not empty (use --force)")
    out.mkdir(parents=True, exist_ok=True)


def cmd_synth(args) -> list[Path]:
    out = Path(args.out)
    _prepare_out(out, args.force)
    size = {"sphere": (args.radius,), "box": tuple(args.half_extents), "torus": (args.major, args.minor)}[args.shape]
    try:
        scene = SceneDef(shape=args.shape, size=size)
        cams = make_rig(args.views, radius=args.rig_radius, elevation_deg=args.elevation,
                        fov_y=math.radians(args.fov), width=args.res, height=args.res)
        ds = synthesize(scene, cams, GridSpec(-1.0, 1.0, args.grid_res or 256))
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    return save_dataset(ds, out)


def _write_config(out: Path, cfg: TrainConfig, text: str) -> list[Path]:
    (out / "config.txt").write_text(text)
    (out / "resolved_config.txt").write_text(cfg.to_text())
    return [out / "config.txt", out / "resolved_config.txt"]


def cmd_train(args) -> list[Path]:
    cfg, text = _config_from_args(args)
    ds = load_dataset(args.data)
    out = Path(args.out)
    _prepare_out(out)
    files = _write_config(out, cfg, text)
    collector = None
    if args.stats_iters > 0:
        collector = StatsCollector(ds, cfg.grid, args.monitor, cfg.samples_per_ray, cfg.seed)

    def hook(it, params):
        if collector is not None and it <= args.stats_iters:
            collector.step(it)

    train(ds, cfg, out, callback=hook)
    files += [out / "checkpoint.bin", out / "train_log.csv"]
    if collector is not None:
        export_stats(collector.rows, out / "stats.csv")
        files.append(out / "stats.csv")
    return files


def cmd_stats(args) -> list[Path]:
    cfg, text = _config_from_args(args)
    ds = load_dataset(args.data)
    out = Path(args.out)
    _prepare_out(out)
    files = _write_config(out, cfg, text)
    iters = args.stats_iterations
    collector = StatsCollector(ds, cfg.grid, args.monitor, cfg.samples_per_ray, cfg.seed)
    if args.with_training:
        train(ds, cfg.with_overrides(iterations=iters), out, callback=lambda it, p: collector.step(it))
        files += [out / "checkpoint.bin", out / "train_log.csv"]
    else:
        collector.run(iters)
    export_stats(collector.rows, out / "stats.csv")
    ratios = count_ratios(collector.rows[-1]) if collector.rows else {}
    (out / "ratios.json").write_text(json.dumps({"iterations": iters, "monitor": args.monitor, **ratios},
                                                indent=2) + "\n")
    return files + [out / "stats.csv", out / "ratios.json"]


def _run_config(checkpoint: Path, args) -> TrainConfig:
    cfg_path = Path(args.config) if getattr(args, "config", None) else checkpoint.parent / "resolved_config.txt"
    overrides = {}
    if getattr(args, "grid_res", None) is not None:
        overrides["grid_resolution"] = args.grid_res
    if getattr(args, "compositing", None) is not None:
        overrides["compositing"] = args.compositing
    return load_config(cfg_path if cfg_path.exists() else None, overrides)


def cmd_extract(args) -> list[Path]:
    ckpt = Path(args.checkpoint)
    try:
        params = load_checkpoint(ckpt)
    except FileNotFoundError as exc:
        raise DatasetError(f"missing checkpoint {ckpt}") from exc
    except ValueError as exc:
        raise DatasetError(str(exc)) from exc
    cfg = _run_config(ckpt, args)
    out = Path(args.out)
    _prepare_out(out)
    mesh = extract_mesh(params, cfg.grid, args.mc_res, args.level, args.coord_mode, cfg.compositing)
    write_obj(out / "mesh.obj", mesh)
    if mesh.is_empty:
        log.warning("extracted mesh is empty (%s)", mesh.status)
    return [out / "mesh.obj"]


def evaluate_mesh(mesh, scene: SceneDef, samples: int, seed: int):
    if mesh.is_empty:
        raise DatasetError("empty mesh")
    rng = stream(seed, STREAM_EVAL)
    pred = sample_surface(mesh, samples, rng)
    gt = sample_scene_surface(scene, samples, rng)
    return chamfer(pred, gt)


def cmd_eval(args) -> list[Path]:
    mesh_path = Path(args.mesh)
    if not mesh_path.exists():
        raise DatasetError(f"missing mesh {mesh_path}")
    ds = load_dataset(args.data)
    out = Path(args.out)
    _prepare_out(out)
    report = evaluate_mesh(read_obj(mesh_path), ds.scene, args.samples, args.seed)
    (out / "chamfer.json").write_text(report.to_json())
    return [out / "chamfer.json"]


def run_ablation(ds, base: TrainConfig, resolutions, seeds, mc_res: int, samples: int, out: Path | None = None):
    """Train one model per (resolution, seed); ``"inf"`` means continuous coordinates.

    Returns ``[(resolution, median chamfer, [per-seed chamfer])]`` in input order.
    """
    rows = []
    for res in resolutions:
        per_seed = []
        for seed in seeds:
            if res == "inf":
                cfg = base.with_overrides(mode="continuous", seed=seed)
            else:
                cfg = base.with_overrides(mode="discrete", grid_resolution=res, seed=seed)
            params, _ = train(ds, cfg)
            coord_mode = "continuous" if res == "inf" else "discrete"
            mesh = extract_mesh(params, cfg.grid, mc_res, None, coord_mode, cfg.compositing)
            value = evaluate_mesh(mesh, ds.scene, samples, seed).chamfer if not mesh.is_empty else float("inf")
            per_seed.append(value)
            log.info("ablation R=%s seed=%d chamfer=%.5f", res, seed, value)
            if out is not None:
                save_checkpoint(out / f"checkpoint_R{res}_s{seed}.bin", params)
        rows.append((res, statistics.median(per_seed), per_seed))
    return rows


def cmd_ablate(args) -> list[Path]:
    cfg, text = _config_from_args(args)
    ds = load_dataset(args.data)
    out = Path(args.out)
    _prepare_out(out)
    files = _write_config(out, cfg, text)
    rows = run_ablation(ds, cfg, args.resolutions, args.seeds, args.mc_res, args.eval_samples)
    with open(out / "ablation.csv", "w") as fh:
        fh.write("resolution,chamfer\n")
        for res, med, _ in rows:
            fh.write(f"{res},{med!r}\n")
    with open(out / "ablation_runs.csv", "w") as fh:
        fh.write("resolution,seed,chamfer\n")
        for res, _, per_seed in rows:
            for seed, v in zip(args.seeds, per_seed):
                fh.write(f"{res},{seed},{v!r}\n")
    return files + [out / "ablation.csv", out / "ablation_runs.csv"]


def cmd_repro(args) -> list[Path]:
    from cqfield.repro import run_repro_suite

    out = Path(args.out)
    _prepare_out(out)
    report = run_repro_suite(args.golden, out, only=args.case, full=args.full)
    path = out / "repro_report.json"
    path.write_text(json.dumps(report, indent=2) + "\n")
    for case in report["cases"]:
        print(f"{'PASS' if case['passed'] else 'FAIL'} {case['name']}: {case['detail']}")
    if not report["passed"]:
        raise ReproFailure(f"{sum(not c['passed'] for c in report['cases'])} repro case(s) failed")
    return [path]


def cmd_check(args) -> list[Path]:
    from cqfield.acceptance import run_case

    out = Path(args.out)
    _prepare_out(out)
    try:
        result = run_case(args.case)
    except KeyError as exc:
        raise UsageError(exc.args[0]) from exc
    path = out / "check.json"
    path.write_text(json.dumps(result, indent=2, default=float) + "\n")
    print(json.dumps(result, default=float))
    return [path]


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="cqfield", description="Neural implicit fields with quantized coordinates.")
    p.add_argument("--version", action="version", version=f"cqfield {__version__}")
    p.add_argument("--threads", type=_positive, default=None, help="worker thread cap (env CQFIELD_THREADS)")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common_train(sp):
        sp.add_argument("--data", required=True)
        sp.add_argument("--config")
        sp.add_argument("--set", action="append", metavar="KEY=VALUE", help="config override (repeatable)")
        sp.add_argument("--mode", choices=["continuous", "discrete", "mixed_pe_continuous", "mixed_coord_continuous"])
        sp.add_argument("--grid-res", type=_positive)
        sp.add_argument("--compositing", choices=["occupancy", "density"])
        sp.add_argument("--iterations", type=int)
        sp.add_argument("--batch-rays", type=_positive)
        sp.add_argument("--samples-per-ray", dest="samples", type=int)
        sp.add_argument("--seed", type=int)
        sp.add_argument("--out", required=True)

    sp = sub.add_parser("synth", help="render a synthetic multi-view dataset")
    sp.add_argument("--shape", choices=["sphere", "box", "torus"], default="sphere")
    sp.add_argument("--radius", type=float, default=0.5)
    sp.add_argument("--half-extents", type=float, nargs=3, default=(0.35, 0.35, 0.35))
    sp.add_argument("--major", type=float, default=0.45)
    sp.add_argument("--minor", type=float, default=0.15)
    sp.add_argument("--views", type=int, default=16)
    sp.add_argument("--res", type=_positive, default=64)
    sp.add_argument("--rig-radius", type=float, default=2.0)
    sp.add_argument("--elevation", type=float, default=20.0)
    sp.add_argument("--fov", type=float, default=40.0, help="vertical field of view in degrees")
    sp.add_argument("--grid-res", type=_positive)
    sp.add_argument("--seed", type=int, default=1)
    sp.add_argument("--force", action="store_true")
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_synth)

    sp = sub.add_parser("train", help="fit a field to a dataset")
    common_train(sp)
    sp.add_argument("--monitor", type=_positive, default=1024)
    sp.add_argument("--stats-iters", type=int, default=500, help="iterations instrumented (0 disables stats.csv)")
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("stats", help="unique-coordinate and consistency counts")
    common_train(sp)
    sp.add_argument("--monitor", type=_positive, default=1024)
    sp.add_argument("--stats-iterations", type=_positive, default=500)
    sp.add_argument("--with-training", action="store_true")
    sp.set_defaults(func=cmd_stats)

    sp = sub.add_parser("extract", help="marching cubes on a trained field")
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--config")
    sp.add_argument("--grid-res", type=_positive)
    sp.add_argument("--compositing", choices=["occupancy", "density"])
    sp.add_argument("--mc-res", type=int, default=128)
    sp.add_argument("--level", type=float)
    sp.add_argument("--coord-mode", choices=["continuous", "discrete"], default="discrete")
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_extract)

    sp = sub.add_parser("eval", help="Chamfer distance of a mesh to the analytic surface")
    sp.add_argument("--mesh", required=True)
    sp.add_argument("--data", required=True)
    sp.add_argument("--samples", type=_positive, default=100_000)
    sp.add_argument("--seed", type=int, default=1)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("ablate-resolution", help="Chamfer per quantization resolution")
    common_train(sp)
    sp.add_argument("--resolutions", type=_resolutions, default=_resolutions("16,64,256,1024,inf"))
    sp.add_argument("--seeds", type=_int_list, default=[1])
    sp.add_argument("--mc-res", type=int, default=128)
    sp.add_argument("--eval-samples", type=_positive, default=100_000)
    sp.set_defaults(func=cmd_ablate)

    sp = sub.add_parser("repro", help="run the golden reproduction suite")
    sp.add_argument("--golden", default=None, help="golden case file (default: bundled golden/cases.json)")
    sp.add_argument("--case", action="append", help="run only these cases")
    sp.add_argument("--full", action="store_true", help="include the long training cases")
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_repro)

    sp = sub.add_parser("check", help="run one acceptance case and print its metrics")
    sp.add_argument("case")
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_check)
    return p


@contextlib.contextmanager
def _thread_limit(n):
    if n is None:
        yield
        return
    from threadpoolctl import threadpool_limits

    with threadpool_limits(limits=n):
        yield


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # usage errors, --help and --version
        return exc.code if isinstance(exc.code, int) else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    threads = args.threads
    if threads is None and os.environ.get("CQFIELD_THREADS"):
        try:
            threads = _positive(os.environ["CQFIELD_THREADS"])
        except (ValueError, argparse.ArgumentTypeError):
            print("cqfield: error: CQFIELD_THREADS must be a positive integer", file=sys.stderr)
            return EXIT_USAGE
    started = time.time()
    try:
        with _thread_limit(threads):
            files = args.func(args)
        out = Path(args.out)
        cfg_text = (out / "resolved_config.txt").read_text() if (out / "resolved_config.txt").exists() else ""
        write_manifest(out, argv, cfg_text, getattr(args, "seed", None), started, files)
    except (UsageError, ConfigError) as exc:
        print(f"cqfield: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DatasetError, FileNotFoundError) as exc:
        print(f"cqfield: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericalAbort as exc:
        print(f"cqfield: numerical abort: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ReproFailure as exc:
        print(f"cqfield: {exc}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
