"""Command-line entry point: ``qgw partition|match|eval|bench``.

Exit codes: 0 success, 2 invalid input or flags, 3 numerical failure,
4 file I/O error.
"""

from __future__ import annotations

import argparse
import logging
import math
import sys
from pathlib import Path

import numpy as np

from . import bench, diagnostics
from . import io as qio
from .errors import NumericalError, ValidationError
from .gw import GwConfig
from .partition import PartitionConfig, make_partition
from .pipeline import SCHEMA_VERSION, QgwConfig, match_qfgw, match_qgw
from .spaces import build_from_graph, build_from_points

log = logging.getLogger("qgw")

EXIT_OK, EXIT_VALIDATION, EXIT_NUMERICAL, EXIT_IO = 0, 2, 3, 4


# --------------------------------------------------------------------------
# argument helpers


def _positive_int(text):
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}") from None
    if v < 1:
        raise argparse.ArgumentTypeError("must be at least 1")
    return v


def _nonneg_int(text):
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}") from None
    if v < 0:
        raise argparse.ArgumentTypeError("must be nonnegative")
    return v


def _float_in(lo, hi, lo_open=False):
    def parse(text):
        try:
            v = float(text)
        except ValueError:
            raise argparse.ArgumentTypeError(f"expected a number, got {text!r}") from None
        if not math.isfinite(v) or v < lo or v > hi or (lo_open and v == lo):
            lo_b = "(" if lo_open else "["
            raise argparse.ArgumentTypeError(f"must lie in {lo_b}{lo}, {hi}]")
        return v
    return parse


def _int_list(text):
    try:
        vals = [int(t) for t in text.replace(" ", "").split(",") if t]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None
    if any(v < 1 for v in vals):
        raise argparse.ArgumentTypeError("sizes must be positive")
    return vals


def _frac_list(text):
    parse = _float_in(0.0, 1.0, lo_open=True)
    return [parse(t) for t in text.replace(" ", "").split(",") if t]


def _common_flags(parser, suppress):
    default = (lambda v: argparse.SUPPRESS) if suppress else (lambda v: v)
    g = parser.add_argument_group("global options")
    g.add_argument("--seed", type=_nonneg_int, default=default(0), help="RNG seed (default 0)")
    g.add_argument("--threads", type=_positive_int, default=default(1),
                   help="worker threads for the local step (default 1)")
    g.add_argument("--log-level", default=default("WARNING"),
                   choices=["DEBUG", "INFO", "WARNING", "ERROR"])
    g.add_argument("--report", metavar="PATH", default=default(None),
                   help="write the JSON report here (default: stdout)")


def _space_flags(parser):
    parser.add_argument("--kind", choices=["points", "graph"], default="points")
    parser.add_argument("--nodes", type=_positive_int, help="graph node count (default: inferred)")
    parser.add_argument("--inf-replace", type=_float_in(1.0, math.inf), metavar="C",
                        help="replace unreachable graph distances by C times an upper bound on finite ones")


def _partition_flags(parser):
    parser.add_argument("--method", choices=["voronoi", "fluid"], default="voronoi")
    size = parser.add_mutually_exclusive_group()
    size.add_argument("--m", type=_positive_int, help="number of blocks")
    size.add_argument("--sample-frac", type=_float_in(0.0, 1.0, lo_open=True),
                      help="blocks = floor(frac * N)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="qgw", description="Quantized Gromov-Wasserstein matching.")
    _common_flags(parser, suppress=False)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("partition", help="partition a space and write a partition file")
    _common_flags(p, suppress=True)
    p.add_argument("--input", required=True)
    _space_flags(p)
    _partition_flags(p)
    p.add_argument("--out", required=True)

    p = sub.add_parser("match", help="compute a quantized coupling")
    _common_flags(p, suppress=True)
    p.add_argument("--source", required=True)
    p.add_argument("--target", required=True)
    _space_flags(p)
    p.add_argument("--source-partition")
    p.add_argument("--target-partition")
    _partition_flags(p)
    p.add_argument("--alpha", type=_float_in(0.0, 1.0), default=0.0,
                   help="feature weight in the global step (needs features)")
    p.add_argument("--beta", type=_float_in(0.0, 1.0), default=0.0,
                   help="feature weight in the local plans (needs features)")
    p.add_argument("--features", action="store_true",
                   help="fused matching on f* columns (or --source/target-features files)")
    p.add_argument("--source-features")
    p.add_argument("--target-features")
    p.add_argument("--inner", choices=["exact", "entropic"], default="exact",
                   help="linear OT solver inside the global step")
    p.add_argument("--epsilon", type=_float_in(0.0, math.inf, lo_open=True),
                   help="entropic weight (default: scaled to the cost)")
    p.add_argument("--init", choices=["product", "identity", "eccentricity"], default="product",
                   help="starting coupling of the global step")
    p.add_argument("--max-iter", type=_positive_int, default=200, help="global step iteration cap")
    p.add_argument("--conv-tol", type=_float_in(0.0, 1.0), default=1e-9)
    p.add_argument("--support-threshold", type=_float_in(0.0, 1.0), default=1e-12,
                   help="drop global entries below this before the local step")
    p.add_argument("--strict", action="store_true", help="fail (exit 3) if the global solve does not converge")
    p.add_argument("--dense-export", metavar="PATH")
    p.add_argument("--out", required=True, help="coupling file; partitions go to OUT.source/target.partition")

    p = sub.add_parser("eval", help="score a coupling file")
    _common_flags(p, suppress=True)
    p.add_argument("--coupling", required=True)
    p.add_argument("--source", required=True)
    p.add_argument("--target", required=True)
    _space_flags(p)
    p.add_argument("--source-partition", help="default: COUPLING.source.partition")
    p.add_argument("--target-partition", help="default: COUPLING.target.partition")
    p.add_argument("--ground-truth", metavar="PERMFILE")
    p.add_argument("--labels-source")
    p.add_argument("--labels-target")
    p.add_argument("--metric", required=True, choices=["distortion", "distortion-pct", "segment", "colors"])
    p.add_argument("--colors", help="source colour CSV (default: first three feature columns)")
    p.add_argument("--out", help="colour CSV output for --metric colors")

    p = sub.add_parser("bench", help="run a benchmark suite and print CSV")
    _common_flags(p, suppress=True)
    p.add_argument("--suite", choices=["relerr", "scaling"], required=True)
    p.add_argument("--sizes", type=_int_list, required=True, help="comma-separated N values")
    p.add_argument("--fracs", type=_frac_list, default=[0.5])
    p.add_argument("--trials", type=_positive_int, default=5)
    p.add_argument("--repeats", type=_positive_int, default=3, help="timing repeats (scaling)")
    p.add_argument("--out", help="CSV output (default: stdout)")
    return parser


# --------------------------------------------------------------------------
# loading


def _load_space(path, args):
    """Space and its point table (``None`` for graphs)."""
    if args.kind == "graph":
        edges = qio.read_graph(path)
        return build_from_graph(edges, n=args.nodes, inf_replace=args.inf_replace), None
    table = qio.read_points(path)
    return build_from_points(table.coords, weights=table.weights), table


def _partition_config(args):
    if args.m is None and args.sample_frac is None:
        raise ValidationError("give --m or --sample-frac (or partition files)")
    return PartitionConfig(method=args.method, m=args.m, sample_fraction=args.sample_frac, seed=args.seed)


def _features(table, path, n, side):
    if path is not None:
        feats = qio.read_points(path).coords
    elif table is not None and table.features is not None:
        feats = table.features
    else:
        raise ValidationError(f"--features given but the {side} has no feature columns")
    if feats.shape[0] != n:
        raise ValidationError(f"{side} features have {feats.shape[0]} rows, space has {n}")
    return feats


# --------------------------------------------------------------------------
# subcommands


def cmd_partition(args) -> dict:
    space, _ = _load_space(args.input, args)
    part = make_partition(space, _partition_config(args))
    qio.write_partition(args.out, part)
    sizes = part.block_sizes()
    return {"schema_version": SCHEMA_VERSION, "command": "partition", "n": part.n, "m": part.m,
            "method": args.method, "seed": args.seed,
            "block_sizes": {"min": int(sizes.min()), "max": int(sizes.max())}}


def cmd_match(args) -> dict:
    fused = args.features or args.source_features or args.target_features
    if not fused and args.alpha > 0:
        raise ValidationError("alpha requires features")
    if not fused and args.beta > 0:
        raise ValidationError("beta requires features")
    if args.epsilon is not None and args.inner != "entropic":
        raise ValidationError("--epsilon only applies to --inner entropic")
    X, tx = _load_space(args.source, args)
    Y, ty = _load_space(args.target, args)
    fx = fy = None
    if fused:
        fx = _features(tx, args.source_features, X.n, "source")
        fy = _features(ty, args.target_features, Y.n, "target")

    if args.source_partition or args.target_partition:
        if not (args.source_partition and args.target_partition):
            raise ValidationError("give both --source-partition and --target-partition")
        PX = qio.read_partition(args.source_partition, X.measure)
        PY = qio.read_partition(args.target_partition, Y.measure)
    else:
        cfg = _partition_config(args)
        PX = make_partition(X, cfg)
        PY = make_partition(Y, cfg)

    gw_cfg = GwConfig(inner=args.inner, epsilon=args.epsilon, max_outer_iter=args.max_iter,
                      conv_tol=args.conv_tol,
                      init="identity_if_square" if args.init == "identity" else args.init)
    cfg = QgwConfig(gw=gw_cfg, alpha=args.alpha, beta=args.beta,
                    support_threshold=args.support_threshold, workers=args.threads)
    if fused:
        qc, report = match_qfgw(X, PX, fx, Y, PY, fy, cfg)
    else:
        qc, report = match_qgw(X, PX, Y, PY, cfg)
    if args.strict and not report.global_converged:
        raise NumericalError(f"global solve did not converge in {report.global_iterations} iterations")

    out = Path(args.out)
    qio.write_coupling(out, qc)
    qio.write_partition(f"{out}.source.partition", PX)
    qio.write_partition(f"{out}.target.partition", PY)
    if args.dense_export:
        qio.write_dense_coupling(args.dense_export, qc)
    doc = report.to_dict()
    doc.update(command="match", seed=args.seed, threads=args.threads)
    return doc


def cmd_eval(args) -> dict:
    X, tx = _load_space(args.source, args)
    Y, ty = _load_space(args.target, args)
    PX = qio.read_partition(args.source_partition or f"{args.coupling}.source.partition", X.measure)
    PY = qio.read_partition(args.target_partition or f"{args.coupling}.target.partition", Y.measure)
    qc = qio.read_coupling(args.coupling, PX, PY)
    doc = {"schema_version": SCHEMA_VERSION, "command": "eval", "metric": args.metric}

    if args.metric == "colors":
        if args.colors:
            colors = qio.read_points(args.colors).coords
        elif tx is not None and tx.features is not None:
            colors = tx.features[:, :3]
        else:
            raise ValidationError("colors metric needs --colors or feature columns in the source")
        out = diagnostics.color_transfer(qc, colors)
        if args.out:
            qio.write_points(args.out, out)
        doc["n_target"] = int(out.shape[0])
        doc["mean_color"] = out.mean(axis=0).tolist()
        return doc

    match = qc.argmax_all()
    if np.any(match < 0):
        raise ValidationError("some source points carry no mass; argmax matching undefined")
    if args.metric == "segment":
        lx = qio.read_label_file(args.labels_source) if args.labels_source else (tx.labels if tx else None)
        ly = qio.read_label_file(args.labels_target) if args.labels_target else (ty.labels if ty else None)
        if lx is None or ly is None:
            raise ValidationError("missing labels: give --labels-source/--labels-target or label columns")
        doc["value"] = diagnostics.segment_transfer_score(match, lx, ly)
        return doc

    if not args.ground_truth:
        raise ValidationError(f"metric {args.metric} needs --ground-truth")
    gt = qio.read_index_file(args.ground_truth)
    if args.metric == "distortion":
        doc["value"] = diagnostics.distortion_score(Y, match, gt)
        doc["normalized"] = diagnostics.distortion_score(Y, match, gt, normalize=True)
        doc["units"] = "squared target distance; normalized divides by diameter^2"
    else:
        doc["value"] = diagnostics.distortion_percentage(Y, match, gt, seed=args.seed)
    return doc


def cmd_bench(args) -> dict:
    if args.suite == "relerr":
        rows = bench.relerr_suite(args.sizes, args.fracs, args.trials, args.seed, args.threads)
    else:
        rows = bench.scaling_suite(args.sizes, args.seed, args.repeats, args.threads)
    if args.out:
        with open(args.out, "w", newline="") as fh:
            bench.rows_to_csv(rows, fh)
    else:
        sys.stdout.write(bench.rows_to_csv(rows))
    return {"schema_version": SCHEMA_VERSION, "command": "bench", "suite": args.suite, "rows": len(rows)}


COMMANDS = {"partition": cmd_partition, "match": cmd_match, "eval": cmd_eval, "bench": cmd_bench}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=getattr(logging, args.log_level), format="%(levelname)s %(name)s: %(message)s")
    try:
        doc = COMMANDS[args.command](args)
        # match/eval print their report when no path is given; the others stay quiet
        if args.report is not None or args.command in ("match", "eval"):
            qio.write_json(args.report, doc)
    except NumericalError as exc:
        print(f"qgw: numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except ValidationError as exc:
        print(f"qgw: error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except OSError as exc:
        print(f"qgw: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
