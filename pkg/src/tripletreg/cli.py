"""Command-line interface: pair registration, ring-dataset synthesis, benchmarks.

Exit codes: 0 success, 2 usage error (argument parsing), 3 file/format error,
4 registration error (any pipeline stage).
"""

from __future__ import annotations

import argparse
import logging
import sys
import time
from pathlib import Path

import numpy as np

from .errors import FileFormatError, InvalidInputError, RegistrationError
from .evaluation import (
    generate_ring_views,
    load_ring_dataset,
    rmse,
    rotation_error_degrees,
    save_ring_dataset,
)
from .pipeline import RegistrationConfig, register
from .ply_io import read_ply, write_transform
from .report import BenchRow, write_report
from .voting import dump_votes

log = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_IO = 3
EXIT_PIPELINE = 4


# ---------------------------------------------------------------------------
# shared plumbing
# ---------------------------------------------------------------------------


def _assemble_config(args: argparse.Namespace) -> RegistrationConfig:
    """Defaults, overlaid by --config file, overlaid by --set flags."""
    config = RegistrationConfig.from_file(args.config) if args.config else RegistrationConfig()
    overrides: dict[str, str] = {}
    for item in args.set:
        key, sep, value = item.partition("=")
        if not sep:
            raise InvalidInputError(f"--set expects key=value, got {item!r}")
        overrides[key.strip()] = value
    return config.updated(overrides) if overrides else config


def _add_config_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", metavar="FILE", help="key = value configuration file")
    parser.add_argument(
        "--set",
        metavar="KEY=VALUE",
        action="append",
        default=[],
        help="override one configuration value (repeatable)",
    )


def _parse_camera(text: str) -> np.ndarray:
    parts = [p for p in text.replace(",", " ").split() if p]
    if len(parts) != 3:
        raise InvalidInputError(f"--camera expects three numbers, got {text!r}")
    try:
        return np.array([float(p) for p in parts])
    except ValueError:
        raise InvalidInputError(f"--camera expects three numbers, got {text!r}") from None


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def cmd_register(args: argparse.Namespace) -> int:
    """Align the second cloud onto the first and write the 4x4 transform."""
    config = _assemble_config(args)
    fixed = read_ply(args.src)
    moving = read_ply(args.dst)
    result = register(fixed, moving, config, keep_votes=args.dump_votes is not None)
    d = result.diagnostics
    print(
        f"register: resolution={d.resolution:.6g} correspondences={d.correspondence_count}"
        f" triplets={d.triplet_count} votes={d.vote_count}"
        f" degenerate={d.degenerate_triplet_count} consensus={d.consensus_ratio:.3f}",
        file=sys.stderr,
    )
    if result.votes is not None:
        dump_votes(args.dump_votes, result.votes[0], result.votes[1], delta=config.mode_delta)
    matrix = result.transform.matrix()
    if args.out:
        write_transform(args.out, matrix)
    else:
        for row in matrix:
            print(" ".join("%.17g" % v for v in row))
    return EXIT_OK


def cmd_synth(args: argparse.Namespace) -> int:
    """Generate a ring of partial views (plus ground truth) from a model PLY."""
    model = read_ply(args.model)
    camera = _parse_camera(args.camera) if args.camera else None
    dataset = generate_ring_views(
        model,
        views=args.views,
        step_degrees=args.step,
        camera=camera,
        model_id=Path(args.model).stem,
    )
    out = save_ring_dataset(dataset, args.out, model=model)
    print(f"synth: wrote {len(dataset)} views to {out}", file=sys.stderr)
    return EXIT_OK


def cmd_bench(args: argparse.Namespace) -> int:
    """Register every adjacent view pair of a ring dataset and write a report.

    The report table is deterministic for a given dataset and configuration;
    wall-clock timings go to a `.times.tsv` sidecar so that reruns produce
    byte-identical tables.
    """
    config = _assemble_config(args)
    dataset = load_ring_dataset(args.dataset)
    rows: list[BenchRow] = []
    for fixed_view, moving_view in dataset.adjacent_pairs():
        reference = dataset.relative_transform(fixed_view, moving_view)
        fixed = dataset.views[fixed_view]
        moving = dataset.views[moving_view]
        if args.dry_run:
            rows.append(
                BenchRow(
                    model_id=dataset.model_id,
                    fixed_view=fixed_view,
                    moving_view=moving_view,
                    rmse=0.0,
                    rmse_over_resolution=0.0,
                    rotation_error_degrees=0.0,
                )
            )
            continue
        start = time.perf_counter()
        result = register(fixed, moving, config)
        elapsed = time.perf_counter() - start
        error = rmse(fixed, moving, result.transform.matrix(), reference)
        resolution = result.diagnostics.resolution
        row = BenchRow(
            model_id=dataset.model_id,
            fixed_view=fixed_view,
            moving_view=moving_view,
            rmse=error,
            rmse_over_resolution=error / resolution,
            rotation_error_degrees=rotation_error_degrees(
                result.transform.matrix(), reference
            ),
            stage_seconds=dict(result.diagnostics.stage_seconds),
        )
        rows.append(row)
        print(
            f"bench: pair {row.pair_label} rmse/res={row.rmse_over_resolution:.3f}"
            f" rot_err={row.rotation_error_degrees:.3f}deg in {elapsed:.1f}s",
            file=sys.stderr,
        )
    path = write_report(rows, args.out, figures=not args.no_figures)
    print(f"bench: wrote {path}", file=sys.stderr)
    return EXIT_OK


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tripletreg",
        description="Global point-cloud registration via reliability-sorted "
        "correspondence triplets and histogram voting.",
    )
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    p_reg = sub.add_parser("register", help="align one PLY cloud onto another")
    p_reg.add_argument("src", help="reference cloud (PLY)")
    p_reg.add_argument("dst", help="cloud to align onto the reference (PLY)")
    _add_config_flags(p_reg)
    p_reg.add_argument("--out", metavar="FILE", help="write the 4x4 transform here (default: stdout)")
    p_reg.add_argument(
        "--dump-votes", metavar="DIR", help="write raw pose votes and their histograms here"
    )
    p_reg.set_defaults(func=cmd_register)

    p_syn = sub.add_parser("synth", help="build a ring-view dataset from a model PLY")
    p_syn.add_argument("model", help="input model (PLY)")
    p_syn.add_argument("--views", type=int, default=18, help="number of views (default 18)")
    p_syn.add_argument(
        "--step", type=float, default=20.0, help="rotation step in degrees (default 20)"
    )
    p_syn.add_argument("--camera", metavar="X,Y,Z", help="camera position (default: auto)")
    p_syn.add_argument("--out", metavar="DIR", required=True, help="output dataset directory")
    p_syn.set_defaults(func=cmd_synth)

    p_ben = sub.add_parser("bench", help="register all adjacent pairs of a ring dataset")
    p_ben.add_argument("dataset", help="dataset directory (view_NN.ply / view_NN.gt)")
    _add_config_flags(p_ben)
    p_ben.add_argument(
        "--out", metavar="FILE", default="report.tsv", help="report path (default report.tsv)"
    )
    p_ben.add_argument(
        "--dry-run",
        action="store_true",
        help="skip registration and report zero errors (plumbing check)",
    )
    p_ben.add_argument("--no-figures", action="store_true", help="skip PNG figure rendering")
    p_ben.set_defaults(func=cmd_bench)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING)
    try:
        return args.func(args)
    except (FileFormatError, OSError) as exc:
        print(f"{args.command}: {exc}", file=sys.stderr)
        return EXIT_IO
    except RegistrationError as exc:
        print(f"{args.command}: {exc}", file=sys.stderr)
        return EXIT_PIPELINE


if __name__ == "__main__":
    sys.exit(main())
