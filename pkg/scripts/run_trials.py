"""
Серия испытаний RAMCP на одной модели при фиксированных τ и α.

Пример:
    python scripts/run_trials.py --bench example1 --tau 1 --alpha 0.6667 \
        --horizon 20 --budget-first 200000sims --budget-step 200000sims \
        --trials 500 --out results/example1.csv
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
    run_settings,
    run_trials,
    setup_logging,
    status,
    write_run_csv,
)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(description="Испытания RAMCP: CSV по испытаниям и сводка")
    add_model_arguments(parser)
    add_horizon_arguments(parser)
    parser.add_argument("--alpha", type=float, required=True, help="допустимый риск")
    add_planner_arguments(parser)
    add_logging_arguments(parser)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if not 0.0 <= args.alpha <= 1.0:
        parser.error("--alpha must lie in [0, 1]")
    if args.trials < 0:
        parser.error("--trials must be nonnegative")
    setup_logging(args.verbose)

    try:
        model = load_model(args)
        horizon = horizon_from_args(args)
        budget = budget_from_args(args)
        config = config_from_args(args)
        if not args.quiet:
            status(f"{model.name}: {model.n_states} states, {args.trials} trials, alpha={args.alpha}")
        records = run_trials(
            model, args.tau, args.alpha, horizon, budget, args.seed, args.trials,
            jobs=args.jobs, config=config, progress=not args.quiet and args.jobs == 1,
        )
    except (RamcpError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2

    summary = write_run_csv(args.out if args.out is not None else "-", records, args.wall_time)
    if args.out is not None:
        config_path = dump_run_config(args.out, run_settings(args, model_name=model.name, summary=summary))
        if not args.quiet:
            status(f"Результаты сохранены в {args.out}, конфигурация в {config_path}")
    if not args.quiet:
        status(
            f"avg_payoff={summary['avg_payoff']:.6g} empirical_risk={summary['empirical_risk']:.4f} "
            f"avg_stated_risk={summary['avg_stated_risk']:.4f}"
        )

    if records and all(r.infeasible for r in records):
        if not args.quiet:
            status("no feasible solution found in any trial")
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
