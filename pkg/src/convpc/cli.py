"""Command line entry point: ``convpc <subcommand> ...``."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .checkpoint import CheckpointError
from .config import ConfigError, RunConfig
from .data import KINDS, load_dataset, make_synthetic_dataset, mesh_reference, save_dataset
from .geometry import GeometryError, PointCloud, normalize_unit_cube
from .io import export_cloud, read_cloud
from .tensor import NonFiniteError
from .train import TrainingError

FORMATS = ("ply_binary", "ply_ascii", "xyz")


class CliError(Exception):
    pass


def _format_for(path: Path, fmt: str | None) -> str:
    if fmt:
        return fmt
    return "xyz" if path.suffix.lower() in (".xyz", ".txt") else "ply_binary"


def _existing(path: str) -> Path:
    p = Path(path)
    if not p.exists():
        raise CliError(f"no such file or directory: {p}")
    return p


def _write_lines(lines: list[str], out: str | None) -> None:
    text = "\n".join(lines) + "\n"
    sys.stdout.write(text)
    if out:
        Path(out).write_text(text)


# -- subcommands ------------------------------------------------------------

def cmd_sample(args) -> int:
    ref = mesh_reference(_existing(args.mesh), args.oversample, args.keep, args.seed)
    out = Path(args.out)
    export_cloud(ref, out, _format_for(out, args.format))
    print(f"{out}\t{len(ref)} points")
    return 0


def cmd_synth(args) -> int:
    shapes = make_synthetic_dataset(args.kind, args.count, args.points, args.seed, args.reference_points, args.sampling)
    save_dataset(shapes, args.out)
    for s in shapes:
        print(f"{s.name}\t{len(s.points)}\t{len(s.reference)}")
    return 0


def _load_config(args) -> RunConfig:
    base = RunConfig.load(_existing(args.config)) if args.config else RunConfig()
    values = {}
    for item in args.set or []:
        if "=" not in item:
            raise CliError(f"--set expects key=value, got {item!r}")
        k, v = item.split("=", 1)
        values[k.strip()] = v.strip()
    return RunConfig.from_strings(values, base)


def cmd_train(args) -> int:
    from .plotting import plot_loss_log
    from .train import read_loss_log, train

    config = _load_config(args)
    if args.resume:
        _existing(args.resume)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    config.save(out / "config.txt")
    result = train(config, out, resume=args.resume, save_init=args.save_init)
    rows = read_loss_log(out / "loss.tsv")
    if args.plot and rows:
        plot_loss_log(rows, out / "loss.png", config.loss_weights().as_dict())
    print(f"iterations\t{result.iterations}")
    for k, v in result.final.items():
        print(f"final_{k}\t{v:.6g}")
    print(f"best_val_chamfer\t{result.best_metric:.6g}")
    print(f"final_val_chamfer\t{result.final_metric:.6g}")
    print(f"seconds\t{result.seconds:.1f}")
    return 0


def cmd_recon(args) -> int:
    from .train import load_model

    model, config = load_model(_existing(args.checkpoint))
    raw = read_cloud(_existing(args.input))
    normed = normalize_unit_cube(PointCloud(raw))
    n = args.points or config.n_out
    y = model.reconstruct([normed.points], n, args.uv_mode or config.uv_mode, args.seed, config.occupancy_threshold)[0]
    out = Path(args.out)
    export_cloud(normed.denorm.apply(y), out, _format_for(out, args.format))
    print(f"{out}\t{len(y)} points")
    return 0


def cmd_eval(args) -> int:
    from .plotting import plot_eval
    from .train import evaluate_shapes, load_model

    model, config = load_model(_existing(args.checkpoint))
    shapes = load_dataset(_existing(args.data), config.n_in, config.input_sampling, config.seed)
    if args.limit:
        shapes = shapes[: args.limit]
    report = evaluate_shapes(model, shapes, config, args.points)
    _write_lines(report.lines(), args.out)
    if args.plot:
        plot_eval(report, args.plot)
    return 0


def cmd_gradcheck(args) -> int:
    from .suite import CASES, run_suite

    names = args.only or list(CASES)
    unknown = [n for n in names if n not in CASES]
    if unknown:
        raise CliError(f"unknown operator(s): {', '.join(unknown)}; choose from {', '.join(CASES)}")
    reports, seconds = run_suite(names, tuple(range(args.seeds)))
    for r in reports:
        print(r.line())
    print(f"# {sum(r.passed for r in reports)}/{len(reports)} passed in {seconds:.1f}s")
    return 0 if all(r.passed for r in reports) else 1


def cmd_export(args) -> int:
    pts = read_cloud(_existing(args.input))
    out = Path(args.out)
    export_cloud(pts, out, _format_for(out, args.format))
    print(f"{out}\t{len(pts)} points")
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="convpc", description="Convolutional point cloud autoencoder.")
    ap.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("sample", help="mesh -> oversampled -> farthest-point reference cloud")
    p.add_argument("mesh")
    p.add_argument("--out", required=True)
    p.add_argument("--oversample", type=int, default=80000)
    p.add_argument("--keep", type=int, default=16000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--format", choices=FORMATS)
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("synth", help="write a synthetic dataset directory")
    p.add_argument("--kind", choices=KINDS + ("mixed",), default="mixed")
    p.add_argument("--count", type=int, default=8)
    p.add_argument("--points", type=int, default=500)
    p.add_argument("--reference-points", type=int, default=16000)
    p.add_argument("--sampling", choices=("fps", "random"), default="fps")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train (or resume) a model")
    p.add_argument("--config", help="flat key = value configuration file")
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one configuration key")
    p.add_argument("--out", required=True, help="run directory for loss.tsv and checkpoints")
    p.add_argument("--resume", help="checkpoint to continue from")
    p.add_argument("--save-init", action="store_true", help="also write init.ckpt before the first step")
    p.add_argument("--plot", action="store_true", help="render loss.png from the loss log")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("recon", help="reconstruct a cloud with a trained model")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--points", type=int, help="number of output points (default: training n_out)")
    p.add_argument("--uv-mode", choices=("lloyd", "random"))
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--format", choices=FORMATS)
    p.set_defaults(func=cmd_recon)

    p = sub.add_parser("eval", help="per-shape Chamfer over a dataset directory")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--points", type=int, default=2500)
    p.add_argument("--limit", type=int)
    p.add_argument("--out", help="also write the report to this file")
    p.add_argument("--plot", help="write a bar chart PNG here")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("gradcheck", help="finite-difference check of every operator")
    p.add_argument("--seeds", type=int, default=5)
    p.add_argument("--only", nargs="+", metavar="OP")
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("export", help="convert a point cloud between PLY and XYZ")
    p.add_argument("--input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--format", choices=FORMATS)
    p.set_defaults(func=cmd_export)
    return ap


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except (CliError, ConfigError, CheckpointError, GeometryError, NonFiniteError,
            TrainingError, ValueError, OSError) as exc:
        print(f"convpc {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
