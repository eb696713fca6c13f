"""Command-line entry point: ``distpab <command> ...``."""

import argparse
import json
import logging
import sys
import time

import numpy as np

from . import attacks, protocol
from .exceptions import ConstantAttributeError, DistpabError
from .fedml import FedConfig, federated_experiment, split_partitions
from .io import DEFAULT_LABEL_COL, read_dataset, write_dataset, write_rounds_csv
from .perturb import EXPANSION_MODES, PerturbConfig, perturb_centralized
from .geometry import REFLECTION_MODES
from .stats import constant_columns

logger = logging.getLogger("distpab")


def _non_negative_float(text):
    value = float(text)
    if not np.isfinite(value) or value < 0:
        raise argparse.ArgumentTypeError(f"must be a non-negative number, got {text}")
    return value


def _positive_int(text):
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError(f"must be a positive integer, got {text}")
    return value


def _seed(text):
    value = int(text)
    if value < 0:
        raise argparse.ArgumentTypeError("seed must be non-negative")
    return value


def _fraction(text):
    value = float(text)
    if not 0 < value < 1:
        raise argparse.ArgumentTypeError("must lie strictly between 0 and 1")
    return value


def _hidden(text):
    try:
        sizes = tuple(int(s) for s in text.split(",") if s.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated layer sizes, got {text!r}") from None
    if not sizes or min(sizes) < 1:
        raise argparse.ArgumentTypeError("layer sizes must be positive")
    return sizes


def _emit(report, path=None):
    text = json.dumps(report, indent=2, sort_keys=True)
    print(text)
    if path:
        with open(path, "w") as fh:
            fh.write(text + "\n")


def _perturb_config(args):
    expansion = "off" if getattr(args, "no_expansion", False) else args.expansion_mode
    return PerturbConfig(
        sigma=getattr(args, "sigma", 0.3),
        seed=args.seed,
        reflection_mode=getattr(args, "reflection_mode", "all-but-ax"),
        expansion_mode=expansion,
        shuffle=not args.no_shuffle,
    )


def _split_constant(ds, drop_constant):
    """Return the indices of the feature columns that get perturbed."""
    const = constant_columns(ds.X)
    if const.size and not drop_constant:
        raise ConstantAttributeError(
            ds.feature_names[const[0]],
            f"attribute {ds.feature_names[const[0]]!r} is constant; pass --drop-constant to leave it unperturbed",
        )
    keep = np.setdiff1d(np.arange(ds.X.shape[1]), const)
    if keep.size < 2:
        raise DistpabError("fewer than two non-constant attributes remain")
    return keep, const


def cmd_perturb(args):
    ds = read_dataset(args.input, args.label_col)
    cfg = _perturb_config(args)
    keep, const = _split_constant(ds, args.drop_constant)
    X = ds.X[:, keep]
    t0 = time.perf_counter()
    if args.mode == "central":
        out = perturb_centralized(X, cfg, labels=ds.labels)
        data, labels, params, session = out.data, out.labels, out.params, None
    else:
        blocks = split_partitions(X.shape[0], args.partitions)
        label_blocks = [ds.labels[b] if ds.labels is not None else None for b in blocks]
        params, outs, session = protocol.run_simulated([X[b] for b in blocks], cfg, labels=label_blocks)
        data = np.vstack([o.data for o in outs])
        labels = np.concatenate([o.labels for o in outs]) if ds.labels is not None else None
    elapsed = time.perf_counter() - t0

    full = ds.X.copy()
    full[:, keep] = data
    # constant columns stay as they are; every row holds the same value
    write_dataset(args.output, ds.with_rows(full, labels))

    report = {
        "mode": args.mode,
        "partitions": 1 if args.mode == "central" else args.partitions,
        "rows": int(full.shape[0]),
        "attributes": int(full.shape[1]),
        "sigma": cfg.sigma,
        "seed": cfg.seed,
        "phi": params.phi,
        "theta": params.theta,
        "theta_degrees": float(np.rad2deg(params.theta)),
        "axis": params.axis,
        "params_digest": params.digest(),
        "unperturbed_constant_columns": [ds.feature_names[i] for i in const],
        "timing_s": elapsed,
    }
    if session is not None:
        report["node_bytes"] = {str(k): v for k, v in sorted(session.node_bytes.items())}
    _emit(report, args.report)
    return 0


def cmd_coordinator(args):
    cfg = PerturbConfig(sigma=args.sigma, seed=args.seed, reflection_mode=args.reflection_mode)
    coord = protocol.Coordinator(args.listen, args.workers, cfg, timeout=args.timeout)
    logger.info("listening on %s:%d for %d workers", *coord.address, args.workers)
    try:
        _, report = coord.serve()
    except DistpabError as exc:
        if getattr(exc, "report", None) is not None:
            _emit(exc.report.to_dict(), args.report)
        raise
    _emit(report.to_dict(), args.report)
    return 0


def cmd_worker(args):
    ds = read_dataset(args.input, args.label_col)
    cfg = _perturb_config(args)
    out = protocol.run_worker(args.connect, ds.X, cfg, args.node_id, labels=ds.labels, timeout=args.timeout)
    write_dataset(args.output, ds.with_rows(out.data, out.labels))
    _emit({"node_id": args.node_id, "rows": int(out.data.shape[0]), "params_digest": out.params_digest})
    return 0


def cmd_evaluate(args):
    orig = read_dataset(args.original, args.label_col)
    pert = read_dataset(args.perturbed, args.label_col)
    report = attacks.evaluate(orig.X, pert.X, known_fraction=args.known_fraction, seed=args.seed)
    _emit(report.to_dict(), args.output)
    return 0


def cmd_baseline(args):
    ds = read_dataset(args.input, args.label_col)
    noisy = attacks.additive_noise_baseline(ds.X, sigma=args.sigma, seed=args.seed)
    write_dataset(args.output, ds.with_rows(noisy, ds.labels))
    return 0


def cmd_fedml(args):
    ds = read_dataset(args.input, args.label_col)
    if ds.labels is None:
        raise DistpabError(f"dataset has no {args.label_col!r} column to learn")
    cfg = FedConfig(
        clients=args.clients,
        rounds=args.rounds,
        local_epochs=args.local_epochs,
        batch=args.batch,
        lr=args.lr,
        momentum=args.momentum,
        hidden=args.hidden,
        seed=args.seed,
    )
    perturb_cfg = PerturbConfig(sigma=args.sigma, seed=args.seed) if args.perturb else None
    summary = federated_experiment(ds.X, ds.labels, cfg, perturb_cfg)
    if args.rounds_csv:
        write_rounds_csv(args.rounds_csv, summary["fed_accuracy"])
    _emit(summary, args.summary)
    return 0


def build_parser():
    parser = argparse.ArgumentParser(prog="distpab", description="Distributed geometric data perturbation toolkit.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, label=True):
        p.add_argument("--seed", type=_seed, default=0)
        if label:
            p.add_argument("--label-col", default=DEFAULT_LABEL_COL, help="name of the pass-through label column")

    def expansion_flags(p):
        p.add_argument("--no-shuffle", action="store_true")
        p.add_argument("--no-expansion", action="store_true")
        p.add_argument("--expansion-mode", choices=EXPANSION_MODES, default="randexp")

    p = sub.add_parser("perturb", help="perturb a CSV dataset")
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--sigma", type=_non_negative_float, default=0.3)
    p.add_argument("--mode", choices=("central", "simulated"), default="central")
    p.add_argument("--partitions", type=_positive_int, default=1)
    p.add_argument("--reflection-mode", choices=REFLECTION_MODES, default="all-but-ax")
    p.add_argument("--drop-constant", action="store_true", help="leave constant columns unperturbed instead of failing")
    p.add_argument("--report", help="also write the JSON report here")
    expansion_flags(p)
    common(p)
    p.set_defaults(func=cmd_perturb)

    p = sub.add_parser("coordinator", help="run the central entity of a networked session")
    p.add_argument("--listen", required=True, help="host:port")
    p.add_argument("--workers", type=_positive_int, required=True)
    p.add_argument("--sigma", type=_non_negative_float, default=0.3)
    p.add_argument("--reflection-mode", choices=REFLECTION_MODES, default="all-but-ax")
    p.add_argument("--timeout", type=float, default=protocol.DEFAULT_TIMEOUT)
    p.add_argument("--report")
    common(p, label=False)
    p.set_defaults(func=cmd_coordinator)

    p = sub.add_parser("worker", help="perturb a local partition with a remote coordinator")
    p.add_argument("--connect", required=True, help="host:port")
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--node-id", type=int, required=True)
    p.add_argument("--timeout", type=float, default=protocol.DEFAULT_TIMEOUT)
    expansion_flags(p)
    common(p)
    p.set_defaults(func=cmd_worker)

    p = sub.add_parser("evaluate", help="run the attack battery on an (original, perturbed) pair")
    p.add_argument("--original", required=True)
    p.add_argument("--perturbed", required=True)
    p.add_argument("--known-fraction", type=_fraction, default=0.1)
    p.add_argument("--output")
    common(p)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("baseline", help="additive Gaussian noise comparator")
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--sigma", type=_non_negative_float, default=0.3)
    common(p)
    p.set_defaults(func=cmd_baseline)

    p = sub.add_parser("fedml", help="federated vs. centralized training demo")
    p.add_argument("--input", required=True)
    p.add_argument("--clients", type=_positive_int, default=4)
    p.add_argument("--rounds", type=_positive_int, default=20)
    p.add_argument("--local-epochs", type=_positive_int, default=3)
    p.add_argument("--batch", type=_positive_int, default=64)
    p.add_argument("--lr", type=float, default=1e-4)
    p.add_argument("--momentum", type=float, default=0.5)
    p.add_argument("--hidden", type=_hidden, default=(16, 16))
    p.add_argument("--perturb", action=argparse.BooleanOptionalAction, default=True)
    p.add_argument("--sigma", type=_non_negative_float, default=0.3)
    p.add_argument("--rounds-csv", help="write round,accuracy rows here")
    p.add_argument("--summary", help="also write the JSON summary here")
    common(p)
    p.set_defaults(func=cmd_fedml)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    if getattr(args, "command", None) == "perturb" and args.mode == "central" and args.partitions != 1:
        parser.error("--partitions only applies to --mode simulated")
    try:
        return args.func(args)
    except (DistpabError, OSError, ValueError) as exc:
        print(f"distpab: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
