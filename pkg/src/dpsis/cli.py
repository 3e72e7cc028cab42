"""Command-line entry point: ``dpsis {gen,select,bench,bound,replicate-instability}``.

Options may also come from a ``--config`` file of ``key = value`` lines
(``#`` comments, keys spelled like the long flags without dashes, e.g.
``output-dir = out``). Flags given on the command line win over the file.
"""

import argparse
import os
import sys

from dpsis import bench, data
from dpsis.metrics import BoundInput, recovery_bound
from dpsis.selectors import (
    LassoParams,
    TwoStageParams,
    dp_sis,
    lasso_topk,
    sis,
    two_stage_select,
)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _float_list(text):
    return tuple(float(s) for s in str(text).replace(" ", "").split(",") if s)


def _int_list(text):
    return tuple(int(s) for s in str(text).replace(" ", "").split(",") if s)


def _str_list(text):
    return tuple(s.strip() for s in str(text).split(",") if s.strip())


def _add_dataset_args(p):
    p.add_argument("--data", help="CSV file, or one of: synthetic, w1, w1w2")
    p.add_argument("--target", default="y", help="target column name or 0-based index")
    p.add_argument("--n", type=int, default=100)
    p.add_argument("--d", type=int, default=2000)
    p.add_argument("--n-nonzero", type=int, default=8)
    p.add_argument("--noise-variance", type=float, default=1.5)
    p.add_argument("--bernoulli-p", type=float, default=0.4)
    p.add_argument("--data-seed", type=int, default=0, help="seed of the generated dataset")


def _source(args):
    kind = args.data
    if kind is None:
        raise UsageError("--data is required (a CSV path, or synthetic / w1 / w1w2)")
    if kind == "synthetic":
        spec = data.SynthSpec(n=args.n, d=args.d, n_nonzero=args.n_nonzero,
                              noise_variance=args.noise_variance,
                              bernoulli_p=args.bernoulli_p, seed=args.data_seed)
        return bench.DatasetSource("synthetic", synth=spec)
    if kind in ("w1", "w1w2"):
        return bench.DatasetSource(kind, seed=args.data_seed)
    if not os.path.exists(kind):
        raise FileNotFoundError(f"dataset file not found: {kind}")
    return bench.DatasetSource("csv", path=kind, target=args.target)


def build_parser():
    parser = _Parser(prog="dpsis", description="Differentially private feature selection.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    gen = sub.add_parser("gen", help="write a synthetic dataset as CSV plus .meta sidecar")
    gen.add_argument("--kind", choices=["synthetic", "w1", "w1w2"], default="synthetic")
    gen.add_argument("--n", type=int, default=100)
    gen.add_argument("--d", type=int, default=2000)
    gen.add_argument("--n-nonzero", type=int, default=8)
    gen.add_argument("--noise-variance", type=float, default=1.5)
    gen.add_argument("--bernoulli-p", type=float, default=0.4)
    gen.add_argument("--seed", type=int, default=0)
    gen.add_argument("--out", required=True)

    sel = sub.add_parser("select", help="run one selection and print the chosen indices")
    _add_dataset_args(sel)
    sel.add_argument("--method", choices=bench.METHODS, default="dp-sis")
    sel.add_argument("--k", type=int, default=5)
    sel.add_argument("--epsilon", type=float, default=1.0)
    sel.add_argument("--gamma", type=float, default=0.5)
    sel.add_argument("--lambda", dest="lam", type=float, default=0.1)
    sel.add_argument("--seed", type=int, default=0)

    b = sub.add_parser("bench", help="run an experiment grid, write CSV and plot")
    b.add_argument("--config", help="key = value file; flags override it")
    _add_dataset_args(b)
    b.add_argument("--methods", type=_str_list, default="dp-sis,dp-two-stage")
    b.add_argument("--epsilons", type=_float_list, default=None,
                   help="comma list; default 15 log-spaced values in [0.1, 20]")
    b.add_argument("--ks", type=_int_list, default="5")
    b.add_argument("--trials", type=int, default=100)
    b.add_argument("--seed", type=int, default=0, help="master seed")
    b.add_argument("--lambda", dest="lam", type=float, default=0.1)
    b.add_argument("--gamma", type=float, default=0.5)
    b.add_argument("--output-dir", default="results")
    b.add_argument("--workers", type=int, default=None,
                   help=f"worker processes (default: ${bench.WORKERS_ENV} or CPU count)")
    b.add_argument("--record-timing", action="store_true",
                   help="fill wall_time_ms (makes the CSV run-dependent)")
    b.add_argument("--no-plot", action="store_true")

    bd = sub.add_parser("bound", help="probability bound that DP-SIS recovers the exact top-k")
    bd.add_argument("--d", type=int, required=True)
    bd.add_argument("--k", type=int, required=True)
    bd.add_argument("--xi", type=float, required=True)
    bd.add_argument("--gamma", type=float, default=0.5)
    bd.add_argument("--epsilon", type=float, required=True)

    ri = sub.add_parser("replicate-instability",
                        help="per-feature selection counts of SIS vs two-stage")
    ri.add_argument("--reps", type=int, default=1000)
    ri.add_argument("--seed", type=int, default=0)
    ri.add_argument("--lambda", dest="lam", type=float, default=0.1)
    ri.add_argument("--experiments", type=_str_list, default="w1,w1w2")
    ri.add_argument("--output-dir", default="results")
    ri.add_argument("--workers", type=int, default=None)
    ri.add_argument("--no-plot", action="store_true")
    return parser


def _apply_config(parser, argv):
    """Re-parses ``argv`` with defaults taken from the ``--config`` file."""
    args = parser.parse_args(argv)
    path = getattr(args, "config", None)
    if not path:
        return args
    if not os.path.exists(path):
        raise FileNotFoundError(f"config file not found: {path}")
    values = data.read_keyvalue(path)
    sub = parser._subparsers._group_actions[0].choices[args.command]
    dests = {a.option_strings[0].lstrip("-"): a.dest
             for a in sub._actions if a.option_strings and a.dest != "help"}
    defaults = {}
    for key, value in values.items():
        dest = dests.get(key) or dests.get(key.replace("_", "-"))
        if dest is None or dest == "config":
            raise UsageError(f"{path}: unknown config key {key!r}")
        action = next(a for a in sub._actions if a.dest == dest)
        if isinstance(action, argparse._StoreTrueAction):
            defaults[dest] = value.lower() in ("1", "true", "yes", "on")
        else:
            defaults[dest] = action.type(value) if action.type else value
    sub.set_defaults(**defaults)
    return parser.parse_args(argv)


def _cmd_gen(args):
    if args.kind == "synthetic":
        spec = data.SynthSpec(n=args.n, d=args.d, n_nonzero=args.n_nonzero,
                              noise_variance=args.noise_variance,
                              bernoulli_p=args.bernoulli_p, seed=args.seed)
        ds = data.gen_synth_fan(spec)
        meta = {"kind": "synthetic", "n_nonzero": spec.n_nonzero,
                "noise_variance": spec.noise_variance, "bernoulli_p": spec.bernoulli_p,
                "seed": spec.seed}
    else:
        gen = data.gen_instability_w1 if args.kind == "w1" else data.gen_instability_w1w2
        ds = gen(args.seed)
        meta = {"kind": args.kind, "seed": args.seed, "noise_variance": 0.1}
    data.write_csv(ds, args.out, metadata=meta)
    print(f"wrote {args.out} ({ds.n} x {ds.d}) and {data.metadata_path(args.out)}")


def _cmd_select(args):
    ds = _source(args).load()
    if not ds.preprocessed:
        ds = data.preprocess(ds)
    m = args.method
    if m == "sis":
        chosen = sis(ds, args.k)
    elif m == "dp-sis":
        chosen = sorted(dp_sis(ds, args.k, args.epsilon, args.gamma, rng=args.seed).indices)
    elif m == "lasso-topk":
        chosen = lasso_topk(ds, LassoParams(lam=args.lam), args.k)
    else:
        params = TwoStageParams(k=args.k, lasso=LassoParams(lam=args.lam),
                                private_selection=m == "dp-two-stage",
                                epsilon=args.epsilon if m == "dp-two-stage" else None,
                                gamma=args.gamma)
        chosen = two_stage_select(ds, params, rng=args.seed)
    print(" ".join(str(int(i)) for i in chosen))


def _cmd_bench(args):
    cfg = bench.ExperimentConfig(
        dataset=_source(args), methods=args.methods,
        epsilons=args.epsilons if args.epsilons else bench.DEFAULT_EPSILONS,
        ks=args.ks, trials=args.trials, master_seed=args.seed, lam=args.lam,
        gamma=args.gamma, output_dir=args.output_dir, record_timing=args.record_timing)
    rows, paths = bench.run_bench(cfg, workers=args.workers, plot=not args.no_plot)
    for label, path in paths.items():
        print(f"{label}: {path}")
    print(f"{len(rows)} rows")


def _cmd_bound(args):
    b = BoundInput(d=args.d, k=args.k, xi=args.xi, gamma=args.gamma, epsilon=args.epsilon)
    print(f"{recovery_bound(b):.6g}")


def _cmd_replicate(args):
    from dpsis.plotting import emit_instability_plot

    unknown = set(args.experiments) - {"w1", "w1w2"}
    if unknown:
        raise UsageError(f"unknown experiment(s): {sorted(unknown)}")
    counts = bench.replicate_instability(reps=args.reps, master_seed=args.seed, lam=args.lam,
                                         experiments=args.experiments, workers=args.workers)
    os.makedirs(args.output_dir, exist_ok=True)
    csv_path = os.path.join(args.output_dir, "instability_counts.csv")
    bench.emit_instability_csv(counts, csv_path)
    print(f"csv: {csv_path}")
    if not args.no_plot:
        plot_path = os.path.join(args.output_dir, "instability.svg")
        emit_instability_plot(counts, args.reps, plot_path)
        print(f"plot: {plot_path}")
    for exp, rates in counts.items():
        summary = bench.mean_true_feature_rate(rates, args.reps)
        print(exp + ": " + ", ".join(f"{m} {r:.3f}" for m, r in summary.items()))


COMMANDS = {
    "gen": _cmd_gen,
    "select": _cmd_select,
    "bench": _cmd_bench,
    "bound": _cmd_bound,
    "replicate-instability": _cmd_replicate,
}


def main(argv=None):
    parser = build_parser()
    try:
        args = _apply_config(parser, sys.argv[1:] if argv is None else list(argv))
        COMMANDS[args.command](args)
    except (UsageError, ValueError, OSError) as exc:
        message = str(exc).splitlines()[0] if str(exc) else type(exc).__name__
        print(f"error: {message}", file=sys.stderr)
        return 2 if isinstance(exc, UsageError) else 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
