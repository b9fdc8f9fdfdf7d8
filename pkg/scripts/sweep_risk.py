"""
Перебор границ риска: для каждого α — серия испытаний и строка сводки.

Пример:
    python scripts/sweep_risk.py --bench hallway --tau 1 --horizon 8 \
        --alphas 1,0.8,0.6,0.5,0.4 --budget-first 1000sims --budget-step 200sims \
        --trials 200 --out results/hallway_sweep.csv
"""

import argparse
import sys

from utils.errors import RamcpError
from utils.experiment_utils import (
    add_horizon_arguments,
    add_logging_arguments,
    add_model_arguments,
    add_planner_arguments,
    budget_from_args,
    config_from_args,
    dump_run_config,
    horizon_from_args,
    load_model,
    parse_alphas,
    run_settings,
    run_trials,
    setup_logging,
    status,
    summarize,
    write_sweep_csv,
)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(description="Перебор границ риска RAMCP")
    add_model_arguments(parser)
    add_horizon_arguments(parser)
    parser.add_argument("--alphas", type=parse_alphas, required=True, help="границы риска через запятую")
    add_planner_arguments(parser)
    add_logging_arguments(parser)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.trials < 0:
        parser.error("--trials must be nonnegative")
    setup_logging(args.verbose)

    rows = []
    try:
        model = load_model(args)
        horizon = horizon_from_args(args)
        budget = budget_from_args(args)
        config = config_from_args(args)
        for alpha in args.alphas:
            if not args.quiet:
                status(f"alpha={alpha}: {args.trials} trials")
            records = run_trials(
                model, args.tau, alpha, horizon, budget, args.seed, args.trials,
                jobs=args.jobs, config=config, progress=not args.quiet and args.jobs == 1,
            )
            rows.append({"alpha": alpha, **summarize(records)})
    except (RamcpError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2

    write_sweep_csv(args.out if args.out is not None else "-", rows)
    if args.out is not None:
        config_path = dump_run_config(args.out, run_settings(args, model_name=model.name, rows=rows))
        if not args.quiet:
            status(f"Результаты сохранены в {args.out}, конфигурация в {config_path}")

    if args.trials > 0 and all(row["infeasible_fraction"] >= 1.0 for row in rows):
        if not args.quiet:
            status("no feasible solution found for any alpha")
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
