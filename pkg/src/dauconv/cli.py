"""Command-line entry point.

Subcommands: train, eval, gradcheck, oraclecheck, analyze, prune, plus
synthdata (writes a synthetic dataset in the CIFAR-10 binary layout for
machines without the real files).

Exit codes: 0 success, 1 a verification check failed, 2 usage or input
error, 3 internal error. Every failure prints one machine-parsable line
`error[kind]: message` to stderr. Timestamps only ever go to run.log so
that all other outputs are byte-reproducible.

Heavy imports happen inside the handlers so --threads / DAU_THREADS can
pin the BLAS thread count before numpy loads.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dauconv",
        description="CNN training and analysis with displaced-aggregation-unit convolutions",
    )
    parser.add_argument("--threads", type=int, default=None,
                        help="BLAS thread count (default: env DAU_THREADS or library default)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a network from a config file")
    p.add_argument("--config", required=True)
    p.add_argument("--data-dir", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=None, help="override train.seed")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override a config entry (repeatable)")

    p = sub.add_parser("eval", help="evaluate a checkpoint on the test split")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data-dir", required=True)
    p.add_argument("--subset", type=int, default=0, help="evaluate on the first N test images")

    p = sub.add_parser("gradcheck", help="finite-difference verification of every backward pass")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--mode", choices=["interp", "analytic", "both"], default="interp")
    p.add_argument("--instances", type=int, default=20)
    p.add_argument("--corrupt", action="store_true",
                   help="deliberately bias one gradient to prove the harness fails")

    p = sub.add_parser("oraclecheck", help="fast path vs explicit dense-filter oracle")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--cases", type=int, default=200)

    p = sub.add_parser("analyze", help="displacement histograms and scatters from a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--layer", default="all", help="stack index of one layer, or 'all'")
    p.add_argument("--fractions", default="1.0,0.9,0.75")
    p.add_argument("--bin-width", type=float, default=0.25)

    p = sub.add_parser("prune", help="remove weak units by relative amplification threshold")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--tau", type=float, required=True)
    p.add_argument("--out", required=True)

    p = sub.add_parser("synthdata", help="write a synthetic dataset in the CIFAR-10 binary layout")
    p.add_argument("--out", required=True)
    p.add_argument("--train", type=int, default=10000)
    p.add_argument("--test", type=int, default=2000)
    p.add_argument("--seed", type=int, default=0)
    return parser


def _pin_threads(threads) -> None:
    if threads is None:
        threads = os.environ.get("DAU_THREADS")
    if threads:
        for var in ("OPENBLAS_NUM_THREADS", "OMP_NUM_THREADS", "MKL_NUM_THREADS"):
            os.environ[var] = str(threads)


def _overrides(pairs) -> dict:
    out = {}
    for pair in pairs:
        if "=" not in pair:
            from .errors import ConfigError

            raise ConfigError(f"--set expects KEY=VALUE, got {pair!r}")
        key, value = pair.split("=", 1)
        out[key.strip()] = value.strip()
    return out


def _load_data(data_dir: str):
    from .data import load_cifar10

    if not os.path.isdir(data_dir):
        from .errors import DataFormatError

        raise DataFormatError(f"data directory does not exist: {data_dir}")
    return load_cifar10(data_dir)


def cmd_train(args) -> int:
    from . import config as cfgmod
    from . import engine
    from .checkpoint import save_checkpoint

    settings = cfgmod.load_settings(args.config, _overrides(args.set))
    if args.seed is not None:
        settings.train.seed = args.seed
    train_split, test_split = _load_data(args.data_dir)
    if settings.train_subset:
        train_split = train_split.subset(settings.train_subset)
    if settings.eval_subset:
        test_split = test_split.subset(settings.eval_subset)

    os.makedirs(args.out, exist_ok=True)
    with open(os.path.join(args.out, "resolved.cfg"), "w") as fh:
        fh.write(cfgmod.resolved_text(settings))
    log = open(os.path.join(args.out, "run.log"), "a")
    log.write(f"[{time.strftime('%Y-%m-%d %H:%M:%S')}] train start: "
              f"{len(train_split)} train / {len(test_split)} eval images\n")

    model = engine.build_network(settings.net, seed=settings.train.seed)
    records = []

    def on_epoch(m, record):
        records.append(record)
        with open(os.path.join(args.out, "metrics.csv"), "w") as fh:
            fh.write(engine.metrics_to_csv(records))
        log.write(f"[{time.strftime('%Y-%m-%d %H:%M:%S')}] epoch {record['epoch']} "
                  f"loss {record['train_loss']:.4f} acc {record['eval_acc']}\n")
        log.flush()
        every = settings.checkpoint_every
        if every and record["epoch"] % every == 0 and record["epoch"] < settings.train.epochs:
            save_checkpoint(m, os.path.join(args.out, f"epoch_{record['epoch']:03d}.ckpt"))

    model, records = engine.train(model, train_split, settings.train,
                                  eval_split=test_split, on_epoch=on_epoch)
    with open(os.path.join(args.out, "metrics.csv"), "w") as fh:
        fh.write(engine.metrics_to_csv(records))
    save_checkpoint(model, os.path.join(args.out, "final.ckpt"))
    log.write(f"[{time.strftime('%Y-%m-%d %H:%M:%S')}] done\n")
    log.close()
    final_acc = records[-1]["eval_acc"] if records else None
    print(f"trained {settings.train.epochs} epochs; final eval_acc={final_acc}")
    return 0


def cmd_eval(args) -> int:
    from .checkpoint import load_checkpoint
    from .engine import evaluate

    model = load_checkpoint(args.checkpoint)
    _, test_split = _load_data(args.data_dir)
    if args.subset:
        test_split = test_split.subset(args.subset)
    acc = evaluate(model, test_split)
    print(f"eval_acc={acc!r} n={len(test_split)}")
    return 0


def cmd_gradcheck(args) -> int:
    from . import verify

    reports = []
    if args.mode in ("interp", "both"):
        reports += verify.dau_gradient_suite(args.seed, args.instances, "interp",
                                             corrupt=args.corrupt)
        reports.append(verify.dau_adjoint_suite(args.seed, args.instances))
        reports += verify.classic_gradient_suite(args.seed)
    if args.mode in ("analytic", "both"):
        reports += verify.dau_gradient_suite(args.seed, args.instances, "analytic",
                                             corrupt=args.corrupt and args.mode == "analytic")
    for r in reports:
        print(r.line())
    failed = [r for r in reports if not r.ok]
    if failed:
        print(f"error[check]: {len(failed)} gradient class(es) out of tolerance: "
              + ", ".join(r.name for r in failed), file=sys.stderr)
        return 1
    print("all gradient classes within tolerance")
    return 0


def cmd_oraclecheck(args) -> int:
    from . import verify

    report = verify.oracle_suite(args.seed, args.cases)
    first = report.cases[0]
    print(f"case 0: dims={first.dims} F={first.features} K={first.units} "
          f"sigma={first.sigma} integer_mu={first.integer_mu} max|fast-oracle|={first.max_diff:.3e}")
    n_int = sum(c.integer_mu for c in report.cases)
    print(f"{len(report.cases)} cases ({n_int} integer displacement): "
          f"max sub-pixel diff {report.max_subpixel:.3e} (tol {verify.ORACLE_TOL:.0e}), "
          f"max integer diff {report.max_integer:.3e} (tol {verify.ORACLE_TOL_INTEGER:.0e})")
    if not report.ok:
        print("error[check]: fast path disagrees with the explicit-filter oracle", file=sys.stderr)
        return 1
    print("fast path matches the explicit-filter oracle")
    return 0


def cmd_analyze(args) -> int:
    from . import analysis
    from .checkpoint import load_checkpoint

    model = load_checkpoint(args.checkpoint)
    indices = analysis.dau_layer_indices(model) if args.layer == "all" else [int(args.layer)]
    fractions = [float(f) for f in args.fractions.split(",") if f]
    os.makedirs(args.out, exist_ok=True)
    for idx in indices:
        for frac in fractions:
            stats = analysis.distance_histogram(model, idx, frac, args.bin_width)
            records, init_points = analysis.scatter_export(model, idx, frac)
            tag = f"layer{idx}_frac{frac:g}"
            with open(os.path.join(args.out, f"hist_{tag}.csv"), "w") as fh:
                fh.write(analysis.histogram_csv(stats))
            with open(os.path.join(args.out, f"scatter_{tag}.csv"), "w") as fh:
                fh.write(analysis.scatter_csv(records, init_points))
            print(f"layer {idx} fraction {frac:g}: {len(records)} units, "
                  f"mass {stats.total_mass:.4f}")
    report = analysis.parameter_report(model)
    with open(os.path.join(args.out, "params.json"), "w") as fh:
        json.dump(report, fh, indent=2)
    with open(os.path.join(args.out, "params.txt"), "w") as fh:
        fh.write(analysis.parameter_report_text(report))
    return 0


def cmd_prune(args) -> int:
    from . import analysis
    from .checkpoint import load_checkpoint, save_checkpoint

    model = load_checkpoint(args.checkpoint)
    pruned, report = analysis.prune_by_relative_threshold(model, args.tau)
    os.makedirs(args.out, exist_ok=True)
    save_checkpoint(pruned, os.path.join(args.out, "pruned.ckpt"))
    with open(os.path.join(args.out, "prune_report.json"), "w") as fh:
        json.dump(report, fh, indent=2)
    text = analysis.prune_report_text(report)
    with open(os.path.join(args.out, "prune_report.txt"), "w") as fh:
        fh.write(text)
    params = analysis.parameter_report(pruned)
    with open(os.path.join(args.out, "params.json"), "w") as fh:
        json.dump(params, fh, indent=2)
    print(text, end="")
    return 0


def cmd_synthdata(args) -> int:
    from .data import write_synthetic_cifar

    write_synthetic_cifar(args.out, args.train, args.test, args.seed)
    print(f"wrote {args.train} train / {args.test} test synthetic images to {args.out}")
    return 0


_HANDLERS = {
    "train": cmd_train,
    "eval": cmd_eval,
    "gradcheck": cmd_gradcheck,
    "oraclecheck": cmd_oraclecheck,
    "analyze": cmd_analyze,
    "prune": cmd_prune,
    "synthdata": cmd_synthdata,
}


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    _pin_threads(args.threads)
    from .errors import CheckpointError, ConfigError, DataFormatError, TrainingError

    try:
        return _HANDLERS[args.command](args)
    except (ConfigError, DataFormatError, CheckpointError, ValueError) as exc:
        print(f"error[input]: {exc}", file=sys.stderr)
        return 2
    except TrainingError as exc:
        print(f"error[internal]: {exc}", file=sys.stderr)
        return 3
    except Exception as exc:  # noqa: BLE001 - last-resort boundary
        print(f"error[internal]: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
