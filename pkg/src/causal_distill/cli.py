"""Command-line entry point: ``causal-distill <command> --config exp.json``.

Exit codes: 0 success, 1 config error, 2 runtime failure, 3 a bound check failed.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys

from . import experiment, interpretable, oracle
from .data import load_dataset
from .experiment import ConfigError, ExperimentConfig
from .metrics import evaluate_model, reports_csv, verify_theorem1, verify_theorem2

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME, EXIT_BOUND = 0, 1, 2, 3

log = logging.getLogger("causal_distill")


def _seed_list(text: str) -> list[int]:
    try:
        return [int(s) for s in text.replace(",", " ").split()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a list of integers: {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="causal-distill", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def staged(name, help_):
        sp = sub.add_parser(name, help=help_)
        sp.add_argument("--config", required=name not in ("evaluate", "bound-report"))
        sp.add_argument("--seed-subset", type=_seed_list, default=None,
                        help="comma-separated seeds (default: all seeds in the config)")
        sp.add_argument("--format", choices=("csv", "json"), default="csv")
        return sp

    run = staged("run", "all stages for every seed, then aggregate")
    run.add_argument("--workers", type=int, default=1)
    staged("gen-data", "generate or load data and write the split")
    staged("train-oracle", "train the counterfactual-regression oracle")
    staged("distill", "fit distilled and baseline variants of every learner")
    for name in ("evaluate", "bound-report"):
        sp = staged(name, f"{name.replace('-', ' ')} per seed, or ad hoc on saved artifacts")
        sp.add_argument("--model", help="interpretable model JSON (ad hoc mode)")
        sp.add_argument("--oracle", help="oracle model JSON (ad hoc mode)")
        sp.add_argument("--data", help="dataset CSV (ad hoc mode)")
        sp.add_argument("--noise-sd", type=float, default=None)
        if name == "bound-report":
            sp.add_argument("--b-phi", type=float, default=1.0)
    return p


def _emit(rows: list[dict], fmt_kind: str) -> None:
    if fmt_kind == "json":
        sys.stdout.write(json.dumps(rows, indent=2, sort_keys=True) + "\n")
    else:
        sys.stdout.write(reports_csv(rows))


def _adhoc(args) -> int:
    if not args.data:
        raise ConfigError("ad hoc mode needs --data (or pass --config)")
    ds = load_dataset(args.data, noise_sd=args.noise_sd)
    f_star = oracle.load_model(args.oracle) if args.oracle else None
    model = interpretable.load_model(args.model) if args.model else None
    if args.command == "evaluate":
        target = model if model is not None else f_star
        if target is None:
            raise ConfigError("evaluate needs --model or --oracle")
        _emit([evaluate_model(target, ds, f_star).to_dict()], args.format)
        return EXIT_OK
    if f_star is None:
        raise ConfigError("bound-report needs --oracle")
    rep = (verify_theorem2(model, f_star, ds, b_phi=args.b_phi) if model is not None
           else verify_theorem1(f_star, ds, args.b_phi))
    _emit([rep.to_dict()], args.format)
    return EXIT_OK if rep.holds_first else EXIT_BOUND


def _run(args) -> int:
    if args.command in ("evaluate", "bound-report") and args.config is None:
        return _adhoc(args)
    cfg: ExperimentConfig = experiment.load_config(args.config)
    seeds = args.seed_subset if args.seed_subset is not None else cfg.seeds
    unknown = sorted(set(seeds) - set(cfg.seeds))
    if unknown:
        raise ConfigError(f"seeds not in config: {unknown}")

    if args.command == "run":
        if args.workers < 1:
            raise ConfigError("--workers must be at least 1")
        result = experiment.run_experiment(cfg, seeds, args.workers, args.format)
        for s, err in result.failed.items():
            log.error("seed %s failed: %s", s, err)
        if result.failed:
            return EXIT_RUNTIME
        if result.bound_failures:
            for b in result.bound_failures:
                log.error("bound violated: seed %s %s/%s", b["seed"], b["model"], b["variant"])
            return EXIT_BOUND
        return EXIT_OK

    stage = experiment.STAGES[args.command]
    rows = []
    for s in seeds:
        rows += stage(cfg, s) or []
    if args.command == "evaluate":
        experiment.aggregate_results(cfg, seeds, args.format)
    if args.command == "bound-report" and any(not r["holds_first"] for r in rows):
        return EXIT_BOUND
    return EXIT_OK


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return _run(args)
    except ConfigError as exc:
        log.error("%s", exc)
        return EXIT_CONFIG
    except Exception as exc:
        log.error("%s: %s", type(exc).__name__, exc)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
