"""
Общая часть скриптов запуска: аргументы командной строки, загрузка модели,
параллельный прогон испытаний, CSV-таблицы и сводная статистика.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Sequence, TextIO, Tuple

import pandas as pd
from joblib import Parallel, delayed
from tqdm import tqdm

from utils.benchmarks import BENCHMARKS, get_benchmark
from utils.constrained_mdp import LpEngine
from utils.pomdp_format import load_pomdp, save_pomdp
from utils.pomdp_model import HorizonSpec, Pomdp
from utils.ramcp_agent import Budget, PlannerConfig, TrialRecord, parse_budget, run_trial

logger = logging.getLogger(__name__)

DEFAULT_BUDGET_FIRST = "5000ms"  # бюджет первого шага
DEFAULT_BUDGET_STEP = "100ms"  # бюджет остальных шагов
DEFAULT_TRIALS = 1000  # испытаний на одну границу риска
DEFAULT_SEED = 42

TRIAL_FIELDS = ["trial", "seed", "payoff", "safe", "stated_risk", "infeasible", "modes", "steps", "wall_ms"]
SUMMARY_FIELDS = ["trials", "avg_payoff", "empirical_risk", "avg_stated_risk", "infeasible_fraction"]
SWEEP_FIELDS = ["alpha"] + SUMMARY_FIELDS


def status(message: str) -> None:
    """Строка статуса в stderr (stdout может быть занят CSV)."""
    print(message, file=sys.stderr)


def setup_logging(verbose: bool = False) -> None:
    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.WARNING,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )


# ---------------------------------------------------------------- аргументы

def add_model_arguments(parser: argparse.ArgumentParser) -> None:
    source = parser.add_mutually_exclusive_group(required=True)
    source.add_argument("--model", type=Path, help="файл модели POMDP")
    source.add_argument("--bench", choices=sorted(BENCHMARKS), help="встроенная модель")
    parser.add_argument("--hallway-map", type=Path, help="JSON-карта для --bench hallway/hallway-mdp")
    parser.add_argument("--export", type=Path, help="сохранить модель в файл и продолжить")


def add_horizon_arguments(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--tau", type=float, required=True, help="порог выплаты")
    horizon = parser.add_mutually_exclusive_group(required=True)
    horizon.add_argument("--horizon", type=int, help="горизонт N (N+1 решений)")
    horizon.add_argument("--epsilon", type=float, help="погрешность ε, горизонт N(ε), порог τ − ε/2")


def add_planner_arguments(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--budget-first", default=DEFAULT_BUDGET_FIRST, help="бюджет первого шага: <N>ms или <N>sims")
    parser.add_argument("--budget-step", default=DEFAULT_BUDGET_STEP, help="бюджет остальных шагов")
    parser.add_argument("--trials", type=int, default=DEFAULT_TRIALS)
    parser.add_argument("--seed", type=int, default=DEFAULT_SEED)
    parser.add_argument("--jobs", type=int, default=1, help="число параллельных процессов")
    parser.add_argument("--out", type=Path, help="CSV-файл (по умолчанию stdout)")
    parser.add_argument("--wall-time", action="store_true", help="заполнять столбец wall_ms")
    parser.add_argument("--exploration", type=float, help="константа K в UCB")
    parser.add_argument("--plain-pomcp", action="store_true", help="POMCP без ограничения на риск")
    parser.add_argument("--no-escape", action="store_true", help="constrained MDP только по замыканию")
    parser.add_argument("--debug-tree", action="store_true", help="логировать явное дерево")
    parser.add_argument("--debug-lp", action="store_true", help="логировать LP")
    parser.add_argument(
        "--lp-engine",
        choices=[e.value for e in LpEngine],
        default=LpEngine.TREE.value,
        help="tree — динамическое программирование по дереву, simplex — плотная таблица",
    )


def add_logging_arguments(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--quiet", action="store_true", help="без прогресс-бара и статусов")
    parser.add_argument("--verbose", action="store_true", help="логи уровня DEBUG")


def parse_alphas(text: str) -> List[float]:
    """Список границ риска через запятую: "1,0.9,0.5"."""
    try:
        values = [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"alphas must be comma-separated numbers, got {text!r}") from None
    if not values or any(not 0.0 <= a <= 1.0 for a in values):
        raise argparse.ArgumentTypeError("every alpha must lie in [0, 1]")
    return values


def load_model(args: argparse.Namespace) -> Pomdp:
    """Модель из --model или --bench; при --export сохраняет её в файл."""
    if args.model is not None:
        model = load_pomdp(args.model)
    else:
        model = get_benchmark(args.bench, getattr(args, "hallway_map", None)).model
    if getattr(args, "export", None) is not None:
        save_pomdp(model, args.export, comment=f"exported from {args.model or args.bench}")
        logger.info("model written to %s", args.export)
    return model


def horizon_from_args(args: argparse.Namespace) -> HorizonSpec:
    return HorizonSpec(horizon=args.horizon, epsilon=args.epsilon)


def budget_from_args(args: argparse.Namespace) -> Budget:
    return Budget(parse_budget(args.budget_first), parse_budget(args.budget_step))


def config_from_args(args: argparse.Namespace) -> PlannerConfig:
    return PlannerConfig(
        exploration=args.exploration,
        risk_aware=not args.plain_pomcp,
        escape=not args.no_escape,
        debug_tree=args.debug_tree,
        debug_lp=args.debug_lp,
        lp_engine=LpEngine(args.lp_engine),
    )


def run_settings(args: argparse.Namespace, **extra: Any) -> Dict[str, Any]:
    """Эффективная конфигурация запуска для <out>.config.json."""
    settings = {
        key: (str(value) if isinstance(value, Path) else value)
        for key, value in sorted(vars(args).items())
    }
    settings.update(extra)
    return settings


def dump_run_config(out: Path, settings: Dict[str, Any]) -> Path:
    config_path = out.with_name(out.name + ".config.json")
    with config_path.open("w", encoding="utf-8") as f:
        json.dump(settings, f, ensure_ascii=False, indent=2)
    return config_path


# ---------------------------------------------------------------- испытания

def run_trials(
    model: Pomdp,
    tau: float,
    alpha: float,
    horizon: HorizonSpec,
    budget: Budget,
    seed: int,
    trials: int,
    jobs: int = 1,
    config: Optional[PlannerConfig] = None,
    progress: bool = True,
) -> List[TrialRecord]:
    """
    Независимые испытания с потоками (seed, trial).

    Возвращает:
        записи в порядке номеров испытаний (от --jobs не зависят).
    """
    if trials < 0:
        raise ValueError(f"trials must be nonnegative, got {trials}")
    if jobs == 1:
        return [
            run_trial(model, tau, alpha, horizon, budget, seed, i, config)
            for i in tqdm(range(trials), desc="Trials", disable=not progress, file=sys.stderr)
        ]
    return Parallel(n_jobs=jobs)(
        delayed(run_trial)(model, tau, alpha, horizon, budget, seed, i, config)
        for i in range(trials)
    )


# ---------------------------------------------------------------- CSV

def write_csv_header(target, fields: Sequence[str]) -> Tuple[TextIO, csv.DictWriter]:
    """
    Открывает CSV и пишет заголовок.

    Параметры:
        target: путь к файлу, "-" для stdout или уже открытый текстовый поток.
        fields: имена столбцов.

    Возвращает:
        (file, csv.DictWriter).
    """
    if target == "-" or target is None:
        f = sys.stdout
    elif isinstance(target, (str, Path)):
        f = open(target, "w", newline="", encoding="utf-8")
    else:
        f = target
    writer = csv.DictWriter(f, fieldnames=list(fields), lineterminator="\n")
    writer.writeheader()
    return f, writer


def _num(value: float) -> str:
    return repr(float(value))


def trial_row(record: TrialRecord, wall_time: bool = False) -> Dict[str, Any]:
    return {
        "trial": record.trial,
        "seed": record.seed,
        "payoff": _num(record.payoff),
        "safe": int(record.safe),
        "stated_risk": _num(record.stated_risk),
        "infeasible": int(record.infeasible),
        "modes": record.modes_rle(),
        "steps": record.steps,
        "wall_ms": _num(record.wall_ms) if wall_time else "",
    }


def summarize(records: Iterable[TrialRecord]) -> Dict[str, Any]:
    """
    Сводка по испытаниям.

    empirical_risk — доля небезопасных испытаний, avg_stated_risk — среднее
    max{U, α}, infeasible_fraction — доля испытаний с U > α после первой
    фазы. Для нуля испытаний все средние равны 0.0.
    """
    frame = pd.DataFrame(
        [(r.payoff, r.safe, r.stated_risk, r.infeasible) for r in records],
        columns=["payoff", "safe", "stated_risk", "infeasible"],
    )
    if frame.empty:
        return {"trials": 0, "avg_payoff": 0.0, "empirical_risk": 0.0, "avg_stated_risk": 0.0, "infeasible_fraction": 0.0}
    return {
        "trials": len(frame),
        "avg_payoff": float(frame["payoff"].mean()),
        "empirical_risk": float(1.0 - frame["safe"].astype(float).mean()),
        "avg_stated_risk": float(frame["stated_risk"].mean()),
        "infeasible_fraction": float(frame["infeasible"].astype(float).mean()),
    }


def summary_row(summary: Dict[str, Any]) -> Dict[str, Any]:
    return {k: (v if k == "trials" else _num(v)) for k, v in summary.items()}


def write_run_csv(target, records: Sequence[TrialRecord], wall_time: bool = False) -> Dict[str, Any]:
    """
    Таблица испытаний, пустая строка, таблица-сводка.

    Возвращает:
        сводку (summarize).
    """
    f, writer = write_csv_header(target, TRIAL_FIELDS)
    try:
        for record in records:
            writer.writerow(trial_row(record, wall_time))
        f.write("\n")
        summary = summarize(records)
        _, summary_writer = write_csv_header(f, SUMMARY_FIELDS)
        summary_writer.writerow(summary_row(summary))
    finally:
        if f is not sys.stdout and isinstance(target, (str, Path)) and target != "-":
            f.close()
    return summary


def write_sweep_csv(target, rows: Sequence[Dict[str, Any]]) -> None:
    f, writer = write_csv_header(target, SWEEP_FIELDS)
    try:
        for row in rows:
            out = summary_row({k: row[k] for k in SUMMARY_FIELDS})
            out["alpha"] = _num(row["alpha"])
            writer.writerow(out)
    finally:
        if f is not sys.stdout and isinstance(target, (str, Path)) and target != "-":
            f.close()


def read_run_csv(text: str) -> Tuple[pd.DataFrame, Dict[str, Any]]:
    """
    Разбирает вывод write_run_csv.

    Возвращает:
        (таблица испытаний, сводка).
    """
    trials_part, summary_part = text.split("\n\n", 1)
    trials = pd.read_csv(io.StringIO(trials_part + "\n"), keep_default_na=False)
    summary = pd.read_csv(io.StringIO(summary_part)).iloc[0].to_dict()
    summary["trials"] = int(summary["trials"])
    return trials, summary
