"""
Точные решатели для маленьких моделей: значение задачи с ограничением на
риск, минимальный риск и лучшая детерминированная политика.

Все три работают на графе историй глубины D = N+1. Истории с одинаковыми
(длина, belief, накопленная дисконтированная выплата) имеют одинаковое
будущее и склеиваются в один узел, листья склеиваются в два: безопасный и
небезопасный. Это достижимая часть произведения модели на накопленную
выплату, поэтому граф остаётся маленьким даже на длинных горизонтах, если
belief'ы повторяются.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from utils.constrained_mdp import (
    SINK,
    ConstrainedTreeMdp,
    MdpPair,
    assemble_lp,
)
from utils.errors import NumericalFailure, SizeGuardExceeded
from utils.explicit_tree import FRONTIER, INTERNAL, SAFE, ExplicitTree
from utils.lp_solver import LpStatus, solve
from utils.pomcp_search import SearchTree
from utils.pomdp_model import (
    ZERO_TOL,
    Belief,
    History,
    Pomdp,
    belief_update,
    decision_steps,
    is_safe,
    obs_distribution,
    reward_of,
)

logger = logging.getLogger(__name__)

MAX_GRAPH_NODES = 200_000  # предел узлов графа историй
MAX_FRONT_SIZE = 50_000  # предел точек на Парето-фронте одного узла
BELIEF_DIGITS = 12  # точность ключа belief при склейке
PAY_DIGITS = 9  # точность ключа выплаты при склейке


@dataclass
class GraphEdge:
    observation: int
    child: int
    prob: float


@dataclass
class GraphNode:
    """
    Узел графа историй.

    Поля:
    - depth: длина истории.
    - belief: точный belief (None у склеенных листьев).
    - pay: накопленная дисконтированная выплата.
    - kind: INTERNAL, SAFE или FRONTIER (небезопасный лист).
    - rewards: награда r(b, a) по действиям.
    - edges: действие → исходящие рёбра.
    """
    depth: int
    belief: Optional[Belief]
    pay: float
    kind: str
    rewards: List[float] = field(default_factory=list)
    edges: Dict[int, List[GraphEdge]] = field(default_factory=dict)


class HistoryGraph:
    """
    Полный граф историй глубины D = N+1 со склейкой одинаковых узлов.

    Атрибуты:
        model: модель.
        tau: порог.
        horizon: N.
        leaf_depth: D.
        nodes: узлы в порядке обхода в ширину (дети после родителей).
    """

    def __init__(self, model: Pomdp, tau: float, horizon: int, max_nodes: int = MAX_GRAPH_NODES):
        self.model = model
        self.tau = float(tau)
        self.horizon = horizon
        self.leaf_depth = decision_steps(horizon)
        self.nodes: List[GraphNode] = []
        self._build(max_nodes)

    def _build(self, max_nodes: int) -> None:
        model, gamma, depth_max = self.model, self.model.discount, self.leaf_depth
        index: Dict[tuple, int] = {}

        def _node(depth: int, belief: Belief, pay: float) -> int:
            if depth == depth_max:
                kind = SAFE if is_safe(pay, self.tau) else FRONTIER
                key = (depth, kind)
                belief = None
            else:
                kind = INTERNAL
                key = (depth, tuple(np.round(belief, BELIEF_DIGITS)), round(pay, PAY_DIGITS))
            found = index.get(key)
            if found is not None:
                return found
            if len(self.nodes) >= max_nodes:
                raise SizeGuardExceeded(
                    f"history graph exceeds {max_nodes} nodes (depth {depth} of {depth_max})"
                )
            self.nodes.append(GraphNode(depth, belief, pay if kind == INTERNAL else 0.0, kind))
            index[key] = len(self.nodes) - 1
            return len(self.nodes) - 1

        _node(0, np.array(model.initial_belief, dtype=float), 0.0)
        i = 0
        while i < len(self.nodes):
            node = self.nodes[i]
            i += 1
            if node.kind != INTERNAL:
                continue
            weight = gamma ** node.depth
            for a in range(model.n_actions):
                r = reward_of(model, node.belief, a)
                node.rewards.append(r)
                probs = obs_distribution(model, node.belief, a)
                edges = []
                for o in np.flatnonzero(probs > ZERO_TOL):
                    o = int(o)
                    child = _node(node.depth + 1, belief_update(model, node.belief, a, o), node.pay + weight * r)
                    edges.append(GraphEdge(o, child, float(probs[o])))
                node.edges[a] = edges
        logger.debug("history graph: %d nodes for depth %d", len(self.nodes), depth_max)

    @property
    def root(self) -> GraphNode:
        return self.nodes[0]

    def find(self, history: Sequence[Tuple[int, int]]) -> Optional[int]:
        """Индекс узла, в который ведёт история (None, если наблюдение невозможно)."""
        current = 0
        for a, o in history:
            node = self.nodes[current]
            match = [e.child for e in node.edges.get(a, []) if e.observation == o]
            if not match:
                return None
            current = match[0]
        return current

    def to_mdp(self) -> ConstrainedTreeMdp:
        """Constrained MDP над графом (для общей сборки LP)."""
        pairs = []
        for i, node in enumerate(self.nodes):
            for a, edges in node.edges.items():
                pairs.append(MdpPair(i, a, node.rewards[a], [(e.child, e.observation, e.prob) for e in edges]))
        kinds = [n.kind for n in self.nodes] + [SINK]
        depths = [n.depth for n in self.nodes] + [self.leaf_depth]
        return ConstrainedTreeMdp(
            discount=self.model.discount,
            depth_offset=0,
            leaf_depth=self.leaf_depth,
            node_depth=depths,
            node_kind=kinds,
            terminal=[0.0] * len(kinds),
            node_u=[1.0] * len(kinds),
            pairs=pairs,
        )


@dataclass
class EopgSolution:
    """
    Ответ точного решателя.

    Поля:
    - feasible: существует ли политика с риском ≤ α.
    - value: ρ(τ, α) (None, если задача недопустима).
    - root_distribution: оптимальное распределение действий в корне.
    - graph: граф историй.
    - occupancy: y(узел, действие) из оптимума LP.
    """
    feasible: bool
    value: Optional[float]
    root_distribution: Dict[int, float]
    graph: HistoryGraph
    occupancy: Dict[Tuple[int, int], float] = field(default_factory=dict, repr=False)

    def distribution_at(self, history: Sequence[Tuple[int, int]]) -> Dict[int, float]:
        """Распределение действий оптимальной политики в узле истории (пусто, если узел не посещается)."""
        node = self.graph.find(history)
        if node is None:
            return {}
        weights = {a: y for (n, a), y in self.occupancy.items() if n == node and y > ZERO_TOL}
        total = sum(weights.values())
        if total <= ZERO_TOL:
            return {}
        return {a: y / total for a, y in sorted(weights.items())}


def exact_eopg(
    model: Pomdp,
    tau: float,
    alpha: float,
    horizon: int,
    max_nodes: int = MAX_GRAPH_NODES,
) -> EopgSolution:
    """
    Точное значение ρ(τ, α) через LP в мерах занятости на полном графе историй.

    Исключения:
        SizeGuardExceeded — граф больше max_nodes.
    """
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha must be in [0, 1], got {alpha}")
    graph = HistoryGraph(model, tau, horizon, max_nodes)
    mdp = graph.to_mdp()
    lp = assemble_lp(mdp, alpha)
    outcome = solve(lp.problem)
    if outcome.status is LpStatus.INFEASIBLE:
        return EopgSolution(False, None, {}, graph)
    if outcome.status is LpStatus.UNBOUNDED:
        raise NumericalFailure("occupancy LP over the history graph reported unbounded")

    occupancy = {
        (mdp.pairs[k].node, mdp.pairs[k].action): float(max(outcome.x[k], 0.0))
        for k in lp.pair_vars
    }
    solution = EopgSolution(True, outcome.value, {}, graph, occupancy)
    solution.root_distribution = solution.distribution_at(())
    return solution


def exact_min_risk(model: Pomdp, tau: float, horizon: int, max_nodes: int = MAX_GRAPH_NODES) -> float:
    """
    Минимальный риск Ψ(root) динамическим программированием:
        Ψ(лист) = 0, если лист безопасен, иначе 1;
        Ψ(h) = min_a (1 − Σ_o p·(1 − Ψ(hao))).
    """
    graph = HistoryGraph(model, tau, horizon, max_nodes)
    psi = [1.0] * len(graph.nodes)
    for i in range(len(graph.nodes) - 1, -1, -1):
        node = graph.nodes[i]
        if node.kind == SAFE:
            psi[i] = 0.0
        elif node.kind == INTERNAL:
            psi[i] = min(
                1.0 - sum(e.prob * (1.0 - psi[e.child]) for e in edges)
                for edges in node.edges.values()
            )
    return min(1.0, max(0.0, psi[0]))


def _pareto(points: List[Tuple[float, float]]) -> List[Tuple[float, float]]:
    """Недоминируемые точки (safe, value): больше — лучше по обеим координатам."""
    front = []
    best_value = -np.inf
    for safe, value in sorted(points, key=lambda p: (-p[0], -p[1])):
        if value > best_value + ZERO_TOL:
            front.append((safe, value))
            best_value = value
    return front


def _deterministic_fronts(graph: HistoryGraph) -> List[List[Tuple[float, float]]]:
    gamma = graph.model.discount
    fronts: List[List[Tuple[float, float]]] = [[] for _ in graph.nodes]
    for i in range(len(graph.nodes) - 1, -1, -1):
        node = graph.nodes[i]
        if node.kind == SAFE:
            fronts[i] = [(1.0, 0.0)]
            continue
        if node.kind == FRONTIER:
            fronts[i] = [(0.0, 0.0)]
            continue
        candidates = []
        for a, edges in node.edges.items():
            combined = [(0.0, 0.0)]
            for e in edges:
                combined = _pareto([
                    (s + e.prob * cs, v + e.prob * cv)
                    for s, v in combined for cs, cv in fronts[e.child]
                ])
                if len(combined) > MAX_FRONT_SIZE:
                    raise SizeGuardExceeded(f"deterministic policy front exceeds {MAX_FRONT_SIZE} points")
            candidates.extend((s, node.rewards[a] + gamma * v) for s, v in combined)
        fronts[i] = _pareto(candidates)
    return fronts


def best_deterministic(
    model: Pomdp,
    tau: float,
    alpha: float,
    horizon: int,
    max_nodes: int = MAX_GRAPH_NODES,
) -> Optional[float]:
    """
    Лучшая ожидаемая выплата среди детерминированных политик с риском ≤ α.

    Политики перебираются через Парето-фронты (вероятность безопасности,
    ценность) в узлах графа: результат совпадает с полным перебором.

    Возвращает:
        значение или None, если допустимой детерминированной политики нет.
    """
    graph = HistoryGraph(model, tau, horizon, max_nodes)
    fronts = _deterministic_fronts(graph)
    feasible = [v for s, v in fronts[0] if s >= 1.0 - alpha - 1e-9]
    return max(feasible) if feasible else None


def optimal_action_values(model: Pomdp, belief: Belief, steps: int) -> np.ndarray:
    """
    Точные Q-значения без ограничения на риск для belief и числа решений steps:
        Q(b, a) = r(b, a) + γ·Σ_o p(o|b,a)·max_a' Q(b_ao, a').
    """
    gamma = model.discount

    @lru_cache(maxsize=None)
    def _value(key: tuple, k: int) -> float:
        if k == 0:
            return 0.0
        return float(_q(np.array(key), k).max())

    def _q(b: Belief, k: int) -> np.ndarray:
        out = np.zeros(model.n_actions)
        for a in range(model.n_actions):
            probs = obs_distribution(model, b, a)
            future = 0.0
            for o in np.flatnonzero(probs > ZERO_TOL):
                child = belief_update(model, b, a, int(o))
                future += probs[o] * _value(tuple(np.round(child, BELIEF_DIGITS)), k - 1)
            out[a] = reward_of(model, b, a) + gamma * future
        return out

    if steps <= 0:
        return np.zeros(model.n_actions)
    return _q(np.asarray(belief, dtype=float), steps)


def enumerate_safe_histories(
    model: Pomdp,
    tau: float,
    horizon: int,
    max_histories: int = MAX_GRAPH_NODES,
) -> List[Tuple[History, List[float]]]:
    """
    Все истории полной длины с выплатой ≥ τ и награды вдоль них.

    Исключения:
        SizeGuardExceeded — безопасных историй больше max_histories.
    """
    gamma, depth_max = model.discount, decision_steps(horizon)
    out: List[Tuple[History, List[float]]] = []
    stack = [((), [], np.array(model.initial_belief, dtype=float), 0.0)]
    while stack:
        history, rewards, belief, pay = stack.pop()
        depth = len(history)
        if depth == depth_max:
            if is_safe(pay, tau):
                out.append((history, rewards))
                if len(out) > max_histories:
                    raise SizeGuardExceeded(f"more than {max_histories} safe histories")
            continue
        for a in range(model.n_actions - 1, -1, -1):
            r = reward_of(model, belief, a)
            probs = obs_distribution(model, belief, a)
            for o in np.flatnonzero(probs > ZERO_TOL)[::-1]:
                o = int(o)
                stack.append((
                    history + ((a, o),),
                    rewards + [r],
                    belief_update(model, belief, a, o),
                    pay + gamma ** depth * r,
                ))
    return out


def seeded_trees(model: Pomdp, tau: float, horizon: int) -> Tuple[ExplicitTree, SearchTree]:
    """
    Явное дерево, совпадающее с полным безопасным деревом, и дерево поиска,
    в котором у каждого узла замыкания глубже корня V_a равны точным
    Q-значениям (N_a = 1).
    """
    steps = decision_steps(horizon)
    explicit = ExplicitTree.empty(model, model.initial_belief, 0, steps)
    search = SearchTree(model.n_actions)
    for path, rewards in enumerate_safe_histories(model, tau, horizon):
        explicit.update_trees(path, rewards, search)

    for cnode in explicit.closure().nodes:
        if cnode.depth >= steps:
            continue
        node, belief = search.root, np.array(model.initial_belief, dtype=float)
        for key in cnode.history:
            node = node.children.get(key) or node.add_child(key)
            belief = belief_update(model, belief, *key)
        q = optimal_action_values(model, belief, steps - cnode.depth)
        node.visit_count = max(node.visit_count, 1)
        node.action_counts = [1] * model.n_actions
        node.action_values = [float(v) for v in q]
    return explicit, search
