"""
Точные ответы для маленькой модели: ρ(τ, α), минимальный риск и лучшая
детерминированная политика.

Пример:
    python scripts/run_oracle.py --bench example1 --tau 1 --alpha 0.6667 --horizon 20
"""

import argparse
import sys

from utils.errors import RamcpError
from utils.experiment_utils import (
    add_horizon_arguments,
    add_logging_arguments,
    add_model_arguments,
    horizon_from_args,
    load_model,
    setup_logging,
)
from utils.oracle import MAX_GRAPH_NODES, best_deterministic, exact_eopg, exact_min_risk
from utils.pomdp_model import decision_steps


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(description="Точные решатели на полном графе историй")
    add_model_arguments(parser)
    add_horizon_arguments(parser)
    parser.add_argument("--alpha", type=float, required=True, help="допустимый риск")
    parser.add_argument("--max-nodes", type=int, default=MAX_GRAPH_NODES, help="предел узлов графа историй")
    parser.add_argument("--no-deterministic", action="store_true", help="не искать детерминированную политику")
    add_logging_arguments(parser)
    return parser


def format_report(model, horizon: int, tau: float, alpha: float, solution, min_risk: float, deterministic, skip_det: bool) -> str:
    lines = [
        f"model: {model.name} ({model.n_states} states, {model.n_actions} actions, {model.n_observations} observations)",
        f"horizon: {horizon} ({decision_steps(horizon)} decisions), tau: {tau!r}, alpha: {alpha!r}",
    ]
    if solution.feasible:
        dist = " ".join(f"{model.actions[a]}={p:.6g}" for a, p in solution.root_distribution.items())
        lines.append(f"rho: {solution.value!r}")
        lines.append(f"root distribution: {dist}")
    else:
        lines.append("rho: Infeasible")
    lines.append(f"min risk: {min_risk!r}")
    if not skip_det:
        lines.append(f"best deterministic: {'Infeasible' if deterministic is None else repr(deterministic)}")
    lines.append(f"verdict: {'feasible' if solution.feasible else 'Infeasible'}")
    return "\n".join(lines)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if not 0.0 <= args.alpha <= 1.0:
        parser.error("--alpha must lie in [0, 1]")
    setup_logging(args.verbose)

    try:
        model = load_model(args)
        horizon, tau = horizon_from_args(args).resolve(model, args.tau)
        solution = exact_eopg(model, tau, args.alpha, horizon, args.max_nodes)
        min_risk = exact_min_risk(model, tau, horizon, args.max_nodes)
        deterministic = None
        if not args.no_deterministic:
            deterministic = best_deterministic(model, tau, args.alpha, horizon, args.max_nodes)
    except (RamcpError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2

    print(format_report(model, horizon, tau, args.alpha, solution, min_risk, deterministic, args.no_deterministic))
    return 0 if solution.feasible else 1


if __name__ == "__main__":
    sys.exit(main())
