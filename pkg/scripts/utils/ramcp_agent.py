"""
Агент RAMCP: цикл «поиск → выбор действия → ход» с пересчётом порога и
границы риска после каждого шага.

На каждом шаге агент:
    1. explore — симуляции POMCP из точного belief корня, пока не исчерпан бюджет;
    2. select_action — LP над замыканием явного дерева, минимизация риска
       или обычный argmax V_a;
    3. play_action — разыгрывает действие из d_pi, получает (o, R),
       сдвигает порог thr ← (thr − R)/γ, ставит rbound ← d^a(o) и обрезает
       оба дерева до ребёнка (a, o).
"""

from __future__ import annotations

import logging
import re
import time
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np

from utils.constrained_mdp import (
    ActionDecision,
    DecisionMode,
    LpEngine,
    build,
    risk_min_fallback,
    solve_decision,
    unconstrained_decision,
)
from utils.environment import SimulatedEnvironment
from utils.errors import BudgetFormatError, InfeasibleConstraint, ModelValidationError
from utils.explicit_tree import ExplicitTree
from utils.pomcp_search import (
    PARTICLE_CAP,
    SearchContext,
    SearchTree,
    default_exploration,
    simulate,
)
from utils.pomdp_model import (
    Belief,
    HorizonSpec,
    Pomdp,
    belief_update,
    decision_steps,
    discounted_payoff,
    is_safe,
    shift_threshold,
    validate,
)
from utils.sampler import RandomSource, sample_state

logger = logging.getLogger(__name__)

ENV_STREAM = 0  # поток среды внутри испытания
STEP_STREAM = 1  # потоки шагов: (STEP_STREAM, step, call)
SEARCH_CALL = 0
ACTION_CALL = 1

_BUDGET_RE = re.compile(r"^\s*(\d+)\s*(ms|sims)\s*$")


@dataclass(frozen=True)
class BudgetLimit:
    """Бюджет одной фазы поиска: миллисекунды или число симуляций."""
    amount: int
    unit: str = "sims"

    def __post_init__(self):
        if self.unit not in ("ms", "sims"):
            raise BudgetFormatError(f"unknown budget unit {self.unit!r}")
        if self.amount < 0:
            raise BudgetFormatError(f"budget must be nonnegative, got {self.amount}")

    def exhausted(self, simulations: int, elapsed_ms: float) -> bool:
        if self.unit == "sims":
            return simulations >= self.amount
        return elapsed_ms >= self.amount

    def __str__(self) -> str:
        return f"{self.amount}{self.unit}"


def parse_budget(text: str) -> BudgetLimit:
    """
    Разбирает бюджет вида "5000ms" или "200000sims".

    Исключения:
        BudgetFormatError — строка не соответствует формату.
    """
    match = _BUDGET_RE.match(str(text))
    if match is None:
        raise BudgetFormatError(f"budget must look like '100ms' or '1000sims', got {text!r}")
    return BudgetLimit(int(match.group(1)), match.group(2))


@dataclass(frozen=True)
class Budget:
    """Бюджет первого шага и всех последующих."""
    first: BudgetLimit
    step: BudgetLimit

    @classmethod
    def simulations(cls, first: int, step: Optional[int] = None) -> "Budget":
        return cls(BudgetLimit(first), BudgetLimit(first if step is None else step))

    def for_step(self, index: int) -> BudgetLimit:
        return self.first if index == 0 else self.step


@dataclass
class PlannerConfig:
    """
    Настройки планировщика.

    Поля:
    - exploration: константа K в UCB (None — 2·(r_max − r_min)·(N+1)).
    - particle_cap: предел частиц в узле поиска.
    - risk_aware: False — обычный POMCP без явного дерева.
    - escape: добавлять ли в constrained MDP пары для действий без явных детей.
    - debug_tree: логировать дамп явного дерева после каждого поиска.
    - debug_lp: логировать дамп LP.
    - lp_engine: чем решать LP (TREE — динамическое программирование по
      дереву, SIMPLEX — плотная таблица).
    """
    exploration: Optional[float] = None
    particle_cap: int = PARTICLE_CAP
    risk_aware: bool = True
    escape: bool = True
    debug_tree: bool = False
    debug_lp: bool = False
    lp_engine: LpEngine = LpEngine.TREE


@dataclass
class StepTrace:
    """Запись одного шага: режим, U корня, ход и новые thr/rbound."""
    mode: DecisionMode
    root_u: float
    simulations: int
    action: int
    observation: int
    reward: float
    threshold: float
    rbound: float


@dataclass
class AgentState:
    """
    Состояние агента между шагами.

    Поля:
    - threshold: thr в единицах текущего корня.
    - rbound: граница риска из [0, 1].
    - remaining: сколько решений осталось.
    - search: дерево поиска.
    - explicit: явное дерево (None для обычного POMCP).
    - belief: точный belief корня.
    - trace: записи сыгранных шагов.
    """
    threshold: float
    rbound: float
    remaining: int
    search: SearchTree
    explicit: Optional[ExplicitTree]
    belief: Belief
    trace: List[StepTrace] = field(default_factory=list)

    @property
    def root_u(self) -> float:
        return self.explicit.root.u if self.explicit is not None else 1.0


class RamcpAgent:
    """
    Онлайн-планировщик для задачи «максимум ожидаемой выплаты при
    ограничении на вероятность выплаты ниже порога».

    Атрибуты:
        model: модель POMDP (0 < γ < 1).
        tau: порог выплаты.
        alpha: допустимый риск.
        horizon: горизонт N (N+1 решений).
        config: PlannerConfig.
        exploration: константа K в UCB.
        state: AgentState.

    Методы:
        explore(limit, rng) -> int
        select_action() -> ActionDecision
        play_action(decision, env, rng) -> (o, R)
    """

    def __init__(
        self,
        model: Pomdp,
        tau: float,
        alpha: float,
        horizon: int,
        config: Optional[PlannerConfig] = None,
    ):
        if not 0.0 < model.discount < 1.0:
            raise ValueError(f"agent needs 0 < discount < 1, got {model.discount}")
        if not 0.0 <= alpha <= 1.0:
            raise ValueError(f"alpha must be in [0, 1], got {alpha}")
        if horizon < 0:
            raise ValueError(f"horizon must be nonnegative, got {horizon}")

        self.model = model
        self.tau = float(tau)
        self.alpha = float(alpha)
        self.horizon = horizon
        self.config = config or PlannerConfig()
        self.exploration = (
            self.config.exploration
            if self.config.exploration is not None
            else default_exploration(model, horizon)
        )

        steps = decision_steps(horizon)
        belief = np.array(model.initial_belief, dtype=float)
        explicit = ExplicitTree.empty(model, belief, 0, steps) if self.config.risk_aware else None
        self.state = AgentState(
            threshold=self.tau,
            rbound=self.alpha,
            remaining=steps,
            search=SearchTree(model.n_actions),
            explicit=explicit,
            belief=belief,
        )

    def explore(self, limit: BudgetLimit, rng: RandomSource) -> int:
        """
        Симуляции из корня, пока не исчерпан бюджет.

        Возвращает:
            число выполненных симуляций.
        """
        state = self.state
        if state.remaining <= 0:
            raise ValueError("episode is over, nothing to explore")

        ctx = SearchContext(
            model=self.model,
            tree=state.search,
            explicit=state.explicit,
            threshold=state.threshold,
            exploration=self.exploration,
            rng=rng,
            particle_cap=self.config.particle_cap,
        )
        root = state.search.root
        start = time.perf_counter()
        simulations = 0
        while not limit.exhausted(simulations, (time.perf_counter() - start) * 1000.0):
            s = sample_state(state.belief, rng)
            simulate(ctx, s, root, state.remaining, 0.0)
            simulations += 1

        logger.debug(
            "explore: %d sims, search=%d nodes, safe hits=%d, U=%.6g",
            simulations, state.search.size(), ctx.safe_hits, state.root_u,
        )
        if self.config.debug_tree and state.explicit is not None:
            logger.info("explicit tree:\n%s", state.explicit.dump())
        return simulations

    def select_action(self) -> ActionDecision:
        """
        Выбор решения:
            rbound < 1 и U < 1: LP при U ≤ rbound, иначе минимизация риска;
            иначе argmax V_a.
        """
        state = self.state
        explicit = state.explicit
        if explicit is not None and state.rbound < 1.0 and explicit.root.u < 1.0:
            if explicit.root.u <= state.rbound:
                mdp = build(explicit.closure(), state.search, escape=self.config.escape)
                try:
                    return solve_decision(
                        mdp, state.rbound, dump_lp=self.config.debug_lp, engine=self.config.lp_engine
                    )
                except InfeasibleConstraint as e:
                    logger.warning("LP infeasible with U=%.6g <= rbound=%.6g (%s), minimizing risk",
                                   explicit.root.u, state.rbound, e)
            return risk_min_fallback(explicit)
        return unconstrained_decision(state.search.root)

    def play_action(
        self,
        decision: ActionDecision,
        env: SimulatedEnvironment,
        rng: RandomSource,
    ) -> Tuple[int, float]:
        """
        Делает ход и обновляет состояние агента.

        Возвращает:
            (o, R) — наблюдение и награду.
        """
        state = self.state
        if state.remaining <= 0:
            raise ValueError("episode is over, no action to play")

        root_u = state.root_u
        action = decision.sample_action(rng)
        observation, reward = env.step(action)

        state.threshold = shift_threshold(state.threshold, reward, self.model.discount)
        state.rbound = decision.risk_for(action, observation)
        state.search = state.search.prune_to(action, observation)
        if state.explicit is not None:
            state.explicit = state.explicit.prune_to(action, observation)
        state.belief = belief_update(self.model, state.belief, action, observation)
        state.remaining -= 1

        state.trace.append(StepTrace(
            mode=decision.mode,
            root_u=root_u,
            simulations=0,
            action=action,
            observation=observation,
            reward=reward,
            threshold=state.threshold,
            rbound=state.rbound,
        ))
        return observation, reward


@dataclass
class TrialRecord:
    """
    Итог одного испытания.

    Поля:
    - trial, seed: номер испытания и базовый seed.
    - payoff: реализованная Disc_{γ,N}.
    - safe: payoff ≥ τ (с допуском).
    - root_u: U корня после первой фазы поиска.
    - stated_risk: max{U, α}.
    - infeasible: U > α после первой фазы.
    - modes: режимы решений по шагам.
    - steps: число сыгранных шагов.
    - wall_ms: время испытания.
    - trace: записи шагов.
    """
    trial: int
    seed: int
    payoff: float
    safe: bool
    root_u: float
    stated_risk: float
    infeasible: bool
    modes: List[DecisionMode]
    steps: int
    wall_ms: float
    trace: List[StepTrace] = field(default_factory=list, repr=False)

    def modes_rle(self) -> str:
        """Режимы в виде run-length строки, например "C3U18"."""
        parts = []
        for mode in self.modes:
            if parts and parts[-1][0] == mode.value:
                parts[-1][1] += 1
            else:
                parts.append([mode.value, 1])
        return "".join(f"{letter}{count}" for letter, count in parts)


def run_trial(
    model: Pomdp,
    tau: float,
    alpha: float,
    horizon: HorizonSpec,
    budget: Budget,
    seed: int,
    trial_index: int = 0,
    config: Optional[PlannerConfig] = None,
) -> TrialRecord:
    """
    Полный эпизод против симулированной среды.

    Параметры:
        model: модель POMDP.
        tau, alpha: порог и допустимый риск.
        horizon: HorizonSpec (явный N или ε).
        budget: бюджеты поиска.
        seed: базовый seed; испытание использует поток (trial_index,).
        trial_index: номер испытания.
        config: PlannerConfig.

    Возвращает:
        TrialRecord.

    Исключения:
        ModelValidationError — модель не проходит validate.
    """
    violations = validate(model)
    if violations:
        raise ModelValidationError(violations, model.name)

    n, threshold = horizon.resolve(model, tau)
    start = time.perf_counter()

    trial_rng = RandomSource(seed, (trial_index,))
    env = SimulatedEnvironment(model, trial_rng.child(ENV_STREAM))
    agent = RamcpAgent(model, threshold, alpha, n, config)

    root_u = 1.0
    step = 0
    while agent.state.remaining > 0:
        step_rng = trial_rng.child(STEP_STREAM, step)
        simulations = agent.explore(budget.for_step(step), step_rng.child(SEARCH_CALL))
        if step == 0:
            root_u = agent.state.root_u
        decision = agent.select_action()
        agent.play_action(decision, env, step_rng.child(ACTION_CALL))
        agent.state.trace[-1].simulations = simulations
        step += 1

    payoff = discounted_payoff(env.rewards, model.discount, n)
    trace = agent.state.trace
    record = TrialRecord(
        trial=trial_index,
        seed=int(seed),
        payoff=payoff,
        safe=is_safe(payoff, threshold),
        root_u=root_u,
        stated_risk=max(root_u, float(alpha)),
        infeasible=root_u > alpha,
        modes=[t.mode for t in trace],
        steps=len(trace),
        wall_ms=(time.perf_counter() - start) * 1000.0,
        trace=trace,
    )
    logger.debug("trial %d: payoff=%.6g safe=%s modes=%s", trial_index, payoff, record.safe, record.modes_rle())
    return record
