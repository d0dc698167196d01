"""Command-line front end: simulate, register, evaluate and demo1d.

Exit codes: 0 success, 2 input error, 3 numerical abort.  Every output file
carries the full flag set so a run can be reproduced from its artefacts.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .geometry import transform
from .model import Region, explored_mask, rasterize_map
from .pipeline import (
    NumericalAbort,
    RunConfig,
    ate_threshold,
    demo_1d,
    evaluate_suite,
    report_csv,
    report_table,
    run_deepmapping,
    run_direct_opt,
    run_icp,
)
from .simulator import (
    DatasetFormatError,
    SensorConfig,
    SimulationError,
    generate_world,
    load_dataset,
    save_dataset,
    simulate,
    write_pgm,
)

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_NUMERIC = 3


class InputError(Exception):
    pass


def _positive_int(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {value}")
    return value


def _positive_float(text: str) -> float:
    value = float(text)
    if not value > 0:
        raise argparse.ArgumentTypeError(f"must be > 0, got {value}")
    return value


def _warm_start(text: str) -> str:
    value = text.replace("-", "_")
    if value not in ("none", "icp_point", "icp_plane"):
        raise argparse.ArgumentTypeError("choose from none, icp-point, icp-plane")
    return value


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="deepmapping", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    parser.subcommands = {}

    def common(p: argparse.ArgumentParser) -> None:
        p.add_argument("--config", type=Path, default=None,
                       help="JSON file of flag defaults; explicit flags take precedence")
        p.add_argument("--seed", type=int, default=0, help="random seed (default: 0)")

    p = sub.add_parser("simulate", help="generate a world, trajectory and scans")
    parser.subcommands["simulate"] = p
    common(p)
    p.add_argument("--width", type=_positive_int, default=256, help="world width in px (default: 256)")
    p.add_argument("--height", type=_positive_int, default=256, help="world height in px (default: 256)")
    p.add_argument("--obstacles", type=int, default=12, help="number of random obstacles (default: 12)")
    p.add_argument("--poses", type=_positive_int, default=32, help="trajectory length (default: 32)")
    p.add_argument("--beams", type=_positive_int, default=128, help="beams per scan (default: 128)")
    p.add_argument("--fov-deg", type=_positive_float, default=360.0, help="field of view (default: 360)")
    p.add_argument("--max-range", type=_positive_float, default=None, help="sensor range in px (default: unlimited)")
    p.add_argument("--rot-max-deg", type=float, default=10.0, help="max heading change per step (default: 10)")
    p.add_argument("--trans-mean", type=_positive_float, default=8.16, help="mean step length in px (default: 8.16)")
    p.add_argument("--out", type=Path, default=Path("dataset.json"),
                   help="dataset JSON; the world PGM is written next to it (default: dataset.json)")

    p = sub.add_parser("register", help="estimate sensor poses for a dataset")
    parser.subcommands["register"] = p
    common(p)
    p.add_argument("dataset", type=Path, help="dataset JSON written by 'simulate'")
    p.add_argument("outdir", type=Path, help="output directory")
    p.add_argument("--method", choices=("deepmapping", "direct", "icp-point", "icp-plane"), default="deepmapping",
                   help="registration method (default: deepmapping)")
    p.add_argument("--warm-start", type=_warm_start, default="none",
                   help="coarse registration before DeepMapping: none, icp-point, icp-plane (default: none)")
    p.add_argument("--epochs", type=_positive_int, default=500, help="training epochs (default: 500)")
    p.add_argument("--lr", type=_positive_float, default=1e-3, help="Adam learning rate (default: 0.001)")
    p.add_argument("--batch", type=_positive_int, default=128, help="scans per batch (default: 128)")
    p.add_argument("--lambda", dest="lam", type=float, default=10.0, help="Chamfer weight (default: 10)")
    p.add_argument("--samples-per-ray", type=_positive_int, default=19, help="free-space samples per beam (default: 19)")
    p.add_argument("--neighbor-window", type=_positive_int, default=1,
                   help="temporal neighbours per scan in the Chamfer term (default: 1)")
    p.add_argument("--architecture", choices=("desk", "full"), default="desk",
                   help="network widths (default: desk)")
    p.add_argument("--lnet-variant", choices=("conv", "pointwise"), default="conv", help="L-Net type (default: conv)")
    p.add_argument("--checkpoints", type=int, nargs="*", default=[], help="epochs at which to record poses")
    p.add_argument("--icp-max-iter", type=_positive_int, default=50, help="ICP iterations per pair (default: 50)")
    p.add_argument("--icp-tol", type=_positive_float, default=1e-6, help="ICP stopping tolerance (default: 1e-6)")
    p.add_argument("--map-resolution", type=_positive_float, default=1.0, help="occupancy map px per cell (default: 1)")

    p = sub.add_parser("evaluate", help="summarize registration results")
    parser.subcommands["evaluate"] = p
    common(p)
    p.add_argument("inputs", type=Path, nargs="+", help="result JSON files or directories holding them")
    p.add_argument("--ate-threshold-frac", type=_positive_float, default=0.02,
                   help="success threshold as a fraction of world width (default: 0.02)")
    p.add_argument("--world-width", type=_positive_float, default=None,
                   help="world width in px when results do not record it")
    p.add_argument("--out", type=Path, default=None, help="CSV report path (default: stdout only)")

    p = sub.add_parser("demo1d", help="1D network-based versus direct gradient descent")
    parser.subcommands["demo1d"] = p
    common(p)
    p.add_argument("--iterations", type=_positive_int, default=1000, help="descent iterations (default: 1000)")
    p.add_argument("--lr", type=_positive_float, default=2e-4, help="learning rate (default: 0.0002)")
    p.add_argument("--out", type=Path, default=Path("demo1d.csv"), help="trace CSV (default: demo1d.csv)")
    return parser


def parse_args(argv=None) -> argparse.Namespace:
    """Parse flags; ``--config`` values become defaults under explicit flags."""
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.config is not None:
        try:
            overrides = json.loads(args.config.read_text())
        except (OSError, json.JSONDecodeError) as exc:
            parser.error(f"--config {args.config}: {exc}")
        if not isinstance(overrides, dict):
            parser.error(f"--config {args.config}: expected a JSON object")
        sub = parser.subcommands[args.command]
        known = set(vars(args)) - {"command", "config"}
        unknown = sorted(set(k.replace("-", "_") for k in overrides) - known)
        if unknown:
            parser.error(f"--config {args.config}: unknown keys {unknown}")
        sub.set_defaults(**{k.replace("-", "_"): v for k, v in overrides.items()})
        args = parser.parse_args(argv)
    return args


def _plain(value):
    if isinstance(value, Path):
        return str(value)
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    return value


def metadata(args: argparse.Namespace) -> dict:
    flags = {k: _plain(v) for k, v in vars(args).items()}
    return {"program": "deepmapping", "version": __version__, "command": args.command,
            "seed": args.seed, "flags": flags}


def _meta_lines(meta: dict) -> list[str]:
    return [f"meta={json.dumps(meta, sort_keys=True)}"]


def _csv_text(meta: dict, header: list[str], rows) -> str:
    buf = io.StringIO()
    for line in _meta_lines(meta):
        buf.write(f"# {line}\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    return buf.getvalue()


def cmd_simulate(args) -> int:
    meta = metadata(args)
    max_range = math.inf if args.max_range is None else args.max_range
    sensor = SensorConfig(n_beams=args.beams, fov=math.radians(args.fov_deg), max_range=max_range)
    world = generate_world(args.width, args.height, args.obstacles, seed=args.seed)
    ds = simulate(world, sensor, args.poses, math.radians(args.rot_max_deg), args.trans_mean, seed=args.seed)
    out = args.out
    world_file = out.with_suffix(".pgm")
    ds = replace(ds, world_path=world_file.name, meta=dict(ds.meta, cli=meta))
    try:
        out.parent.mkdir(parents=True, exist_ok=True)
        world.to_pgm(world_file, comments=tuple(_meta_lines(meta)))
        save_dataset(out, ds)
    except OSError as exc:
        raise InputError(f"cannot write {out}: {exc}") from None
    print(f"wrote {out} ({len(ds)} poses x {sensor.n_beams} beams, world {args.width}x{args.height}, "
          f"seed {args.seed})")
    return EXIT_OK


def _map_image(result, scans, resolution: float) -> np.ndarray:
    clouds = np.concatenate([transform(s, p) for s, p in zip(scans, result.poses)])
    origins = result.poses[:, :2]
    # cells crossed by a beam or near a hit count as explored
    ts = np.linspace(0.0, 1.0, 32)[:, None, None]
    rays = np.concatenate([origins[i] + ts * (transform(s, p) - origins[i])
                           for i, (s, p) in enumerate(zip(scans, result.poses))]).reshape(-1, 2)
    region = Region.around(clouds)
    explored = explored_mask(np.concatenate([clouds, rays]), region, resolution)
    return rasterize_map(result.mnet, region, resolution, explored)


def cmd_register(args) -> int:
    meta = metadata(args)
    ds = load_dataset(args.dataset)
    if len(ds) < 2:
        raise InputError(f"{args.dataset}: registration needs at least two scans")
    if args.method.startswith("icp"):
        result = run_icp(ds, args.method.split("-")[1], max_iter=args.icp_max_iter, tol=args.icp_tol)
    else:
        cfg = RunConfig(epochs=args.epochs, lr=args.lr, batch_size=args.batch, lam=args.lam,
                        samples_per_ray=args.samples_per_ray, seed=args.seed, warm_start=args.warm_start,
                        variant=args.method, neighbor_window=args.neighbor_window,
                        architecture=args.architecture, lnet_variant=args.lnet_variant,
                        checkpoints=tuple(args.checkpoints))
        runner = run_direct_opt if args.method == "direct" else run_deepmapping
        result = runner(ds, cfg)
    outdir = args.outdir
    try:
        outdir.mkdir(parents=True, exist_ok=True)
        payload = dict(result.to_dict(), meta=meta,
                       world_width=ds.world.width if ds.world is not None else None)
        (outdir / "result.json").write_text(json.dumps(payload, indent=1))
        ates = result.ate_trace or [None] * len(result.loss_trace)
        (outdir / "loss.csv").write_text(_csv_text(
            meta, ["epoch", "loss", "ate"],
            ((i + 1, repr(l), "" if a is None else repr(a)) for i, (l, a) in enumerate(zip(result.loss_trace, ates)))))
        rows = []
        for i, (s, p) in enumerate(zip(ds.scans, result.poses)):
            rows.extend((i, repr(x), repr(y)) for x, y in transform(s, p))
        (outdir / "cloud.csv").write_text(_csv_text(meta, ["frame", "x", "y"], rows))
        if result.mnet is not None:
            write_pgm(outdir / "map.pgm", _map_image(result, ds.scans, args.map_resolution),
                      comments=tuple(_meta_lines(meta)))
    except OSError as exc:
        raise InputError(f"cannot write to {outdir}: {exc}") from None
    summary = ", ".join(f"{k}={v:.4f}" for k, v in result.metrics.items()) or "no ground truth"
    print(f"{result.method}: {summary} ({result.wall_time:.1f}s) -> {outdir}")
    return EXIT_OK


def _result_files(inputs) -> list[Path]:
    files = []
    for path in inputs:
        if path.is_dir():
            files.extend(sorted(path.rglob("*.json")))
        elif path.exists():
            files.append(path)
        else:
            raise InputError(f"{path}: no such file or directory")
    return files


def cmd_evaluate(args) -> int:
    meta = metadata(args)
    results, widths = [], set()
    for path in _result_files(args.inputs):
        try:
            payload = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise InputError(f"{path}: line {exc.lineno} column {exc.colno}: {exc.msg}") from None
        if not isinstance(payload, dict) or "method" not in payload:
            continue
        if "ate" not in (payload.get("metrics") or {}):
            print(f"warning: {path} has no ground-truth metrics; skipped", file=sys.stderr)
            continue
        results.append(payload)
        if payload.get("world_width"):
            widths.add(float(payload["world_width"]))
    if not results:
        raise InputError("no result files with ground truth found")
    if args.world_width is not None:
        width = args.world_width
    elif len(widths) == 1:
        width = widths.pop()
    else:
        raise InputError("world width unknown or inconsistent across results; pass --world-width")
    threshold = ate_threshold(width, args.ate_threshold_frac)
    report = evaluate_suite(results, threshold)
    text = report_csv(report, {"meta": json.dumps(meta, sort_keys=True), "ate_threshold": threshold})
    if args.out is not None:
        try:
            args.out.parent.mkdir(parents=True, exist_ok=True)
            args.out.write_text(text)
        except OSError as exc:
            raise InputError(f"cannot write {args.out}: {exc}") from None
    print(f"ATE threshold {threshold:.3f} px over {len(results)} results")
    print(report_table(report))
    return EXIT_OK


def cmd_demo1d(args) -> int:
    meta = metadata(args)
    res = demo_1d(iterations=args.iterations, lr=args.lr, seed=args.seed)
    rows = ((i, repr(x), repr(z), repr(nx)) for i, (x, z, nx)
            in enumerate(zip(res.x_trace, res.z_trace, res.net_x_trace)))
    meta = dict(meta, final_direct=res.final_direct, final_network=res.final_network)
    try:
        args.out.parent.mkdir(parents=True, exist_ok=True)
        args.out.write_text(_csv_text(meta, ["iteration", "x_direct", "z", "x_network"], rows))
    except OSError as exc:
        raise InputError(f"cannot write {args.out}: {exc}") from None
    print(f"final L direct={res.final_direct:.6f} network={res.final_network:.6f}")
    return EXIT_OK


COMMANDS = {"simulate": cmd_simulate, "register": cmd_register, "evaluate": cmd_evaluate, "demo1d": cmd_demo1d}


def main(argv=None) -> int:
    args = parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except NumericalAbort as exc:
        print(f"error: numerical abort at epoch {exc.epoch}: {exc.detail}", file=sys.stderr)
        return EXIT_NUMERIC
    except (InputError, DatasetFormatError, SimulationError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
