"""``hazard-bench`` command line.

Exit status: 0 on success, 1 on configuration or data errors, 2 when some
models failed during ``bench``.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import bench, coxph, parametric
from .dataset import ENCODINGS, RecordError, SchemaError, StandardizationError, load_csv, prepare

EXIT_OK, EXIT_CONFIG, EXIT_PARTIAL = 0, 1, 2


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="INI config file; flags override it")
    p.add_argument("--data", help="CSV path (default: bundled GBSG data)")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", help="output directory (or file, for contours/curves)")
    p.add_argument("--models", help="comma-separated model list")
    p.add_argument("--encoding", choices=ENCODINGS)
    p.add_argument("--standardize-on", choices=("train", "all"))
    p.add_argument("--rank-by", choices=("time", "risk"))
    p.add_argument("--chains", type=int)
    p.add_argument("--draws", type=int, help="MCMC steps per chain, burn-in included")
    p.add_argument("--burn", type=int)
    p.add_argument("--jobs", type=int, help="worker processes for chains and trees")
    p.add_argument("--trees", type=int)
    p.add_argument("--min-leaf", type=int)
    p.add_argument("--hidden", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr", type=float)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hazard-bench",
                                     description="Survival model benchmark on GBSG data.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    data = sub.add_parser("data", help="dataset utilities")
    data_sub = data.add_subparsers(dest="data_command", required=True)
    validate = data_sub.add_parser("validate", help="check a CSV and print counts")
    validate.add_argument("path")

    fit = sub.add_parser("fit", help="fit one model and score it on the test split")
    _common(fit)
    fit.add_argument("--model", required=True)
    fit.add_argument("--hazard-ratios", action="store_true",
                     help="print the CoxPH hazard-ratio table")

    b = sub.add_parser("bench", help="run the full benchmark")
    _common(b)

    c = sub.add_parser("contours", help="write the Weibull relative-likelihood grid")
    _common(c)
    c.add_argument("--resolution", type=int, default=100)

    cv = sub.add_parser("curves", help="write survival curves for test subjects")
    _common(cv)
    cv.add_argument("--model", required=True)
    cv.add_argument("-n", "--subjects", type=int, default=10)
    return parser


def _config(args) -> bench.BenchConfig:
    overrides = {
        "data": args.data, "seed": args.seed, "out": args.out,
        "encoding": args.encoding, "standardize_on": args.standardize_on,
        "rank_by": args.rank_by,
        "models": tuple(m for m in args.models.split(",") if m.strip()) if args.models else None,
        "bayes.chains": args.chains, "bayes.draws": args.draws, "bayes.burn": args.burn,
        "bayes.jobs": args.jobs, "rsf.jobs": args.jobs,
        "rsf.trees": args.trees, "rsf.min_leaf_size": args.min_leaf,
        "deepsurv.hidden": args.hidden, "deepsurv.epochs": args.epochs,
        "deepsurv.learning_rate": args.lr,
    }
    if getattr(args, "model", None):
        overrides["models"] = (args.model,)
    if args.config:
        return bench.load_config(args.config, **overrides)
    return bench.apply_overrides(bench.BenchConfig(), **overrides)


def _cmd_validate(args) -> int:
    ds = load_csv(args.path)
    print(f"{args.path}: {len(ds)} rows, {ds.n_events} events, "
          f"{len(ds) - ds.n_events} censored")
    return EXIT_OK


def _cmd_fit(args) -> int:
    cfg = _config(args)
    name = cfg.models[0]
    data = prepare(cfg.data, cfg.encoding, cfg.standardize_on)
    result = bench.run_model(name, data, cfg)
    report = bench.evaluate(result, data, cfg.rank_by)
    print(bench.emit_report([report]))
    art = result.artifacts
    fit = art.get("fit")
    if name == "coxph" and args.hazard_ratios:
        print()
        print(coxph.format_hazard_ratios(coxph.hazard_ratios(fit)))
    if hasattr(fit, "samples"):
        rh = fit.samples.rhat()
        flagged = [k for k, v in rh.items() if not v < 1.05]
        print(f"\nacceptance rate {fit.samples.acceptance_rate:.3f}; "
              f"max split R-hat {max(rh.values()):.4f}"
              + (f" (flagged: {', '.join(flagged)})" if flagged else ""))
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        report.write_subjects(out / f"predictions_{name}.csv")
        bench.write_curves(result, data, cfg.curves, out / f"curves_{name}.csv")
        if hasattr(fit, "samples"):
            fit.samples.to_csv(out / f"draws_{name}.csv")
            fit.samples.write_diagnostics(out / f"diagnostics_{name}.json")
        if name == "coxph":
            coxph.write_hazard_ratios(coxph.hazard_ratios(fit), out / "table3.csv")
        if name == "rsf":
            art["forest"].write_summary(out / "forest_rsf.json")
        if name == "deepsurv":
            fit.write_losses(out / "loss_deepsurv.csv")
            fit.net.save_csv(out / "weights_deepsurv.csv")
        print(f"wrote outputs to {out}")
    return EXIT_OK


def _cmd_bench(args) -> int:
    cfg = _config(args)
    result = bench.run_benchmark(cfg)
    print(bench.emit_report(result.reports))
    for name, err in result.failures.items():
        print(f"FAILED {name}: {err}", file=sys.stderr)
    print(f"\noutputs in {result.out}")
    return EXIT_OK if result.ok else EXIT_PARTIAL


def _cmd_contours(args) -> int:
    cfg = _config(args)
    data = prepare(cfg.data, cfg.encoding, cfg.standardize_on)
    grid = parametric.relative_likelihood_grid(data.train.times, data.train.events,
                                               resolution=args.resolution)
    path = Path(args.out or "contours.csv")
    if path.suffix != ".csv":
        path.mkdir(parents=True, exist_ok=True)
        path = path / "contours.csv"
    grid.to_csv(path)
    print(f"MLE shape={grid.mle.shape:.4f} scale={grid.mle.scale:.2f}; wrote {path}")
    return EXIT_OK


def _cmd_curves(args) -> int:
    cfg = _config(args)
    name = cfg.models[0]
    data = prepare(cfg.data, cfg.encoding, cfg.standardize_on)
    result = bench.run_model(name, data, cfg)
    path = Path(args.out or f"curves_{name}.csv")
    if path.suffix != ".csv":
        path.mkdir(parents=True, exist_ok=True)
        path = path / f"curves_{name}.csv"
    bench.write_curves(result, data, args.subjects, path)
    print(f"wrote {path}")
    return EXIT_OK


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    handlers = {"fit": _cmd_fit, "bench": _cmd_bench, "contours": _cmd_contours,
                "curves": _cmd_curves}
    try:
        if args.command == "data":
            return _cmd_validate(args)
        return handlers[args.command](args)
    except (SchemaError, RecordError, StandardizationError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
