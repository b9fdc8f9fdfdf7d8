"""
Constrained MDP над замыканием явного дерева и его LP в мерах занятости.

Узлы MDP — узлы замыкания и сток. Безопасные листья полной длины несут
штраф C = 1/γ^{D−L}, который в точности сокращает дисконт γ^{D−L}, так что
ожидаемый дисконтированный штраф равен вероятности дойти до безопасного листа.
Frontier-листья короче горизонта уходят в сток с терминальной наградой
max_a V_a из статистик поиска.

Та же сборка LP используется оракулом на полном графе историй, поэтому
структура допускает общих потомков (DAG); векторы риска d^a извлекаются
только для деревьев.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, List, Optional, Tuple

import numpy as np

from utils.errors import InfeasibleConstraint, NumericalFailure
from utils.explicit_tree import FRONTIER, INTERNAL, SAFE, ClosureTree, ExplicitTree
from utils.lp_solver import LpProblem, LpStatus, format_lp, solve
from utils.pomdp_model import format_history
from utils.pomcp_search import SearchNode, SearchTree
from utils.sampler import RandomSource

logger = logging.getLogger(__name__)

OCCUPANCY_TOL = 1e-12  # ниже этого занятость ребёнка считается нулевой
SINK = "sink"
TIE_TOL = 1e-9  # относительный допуск равенства значений в динамическом программировании
SAFE_MASS_TOL = 1e-9  # допуск на достижение безопасной массы 1 − rbound
PENALTY_CHECK_TOL = 1e-6  # допустимая недостача безопасной массы у найденного решения
MAX_BREAKPOINTS = 200  # предел итераций поиска точки излома лагранжиана


class DecisionMode(Enum):
    CONSTRAINED = "C"
    RISK_MINIMIZING = "R"
    UNCONSTRAINED = "U"


@dataclass
class ActionDecision:
    """
    Решение на текущем шаге.

    Поля:
    - d_pi: распределение над действиями корня.
    - risk: для каждого действия словарь наблюдение → d^a(o).
    - mode: режим выбора.
    - default_risk: d^a(o) для наблюдений, которых нет в словаре.
    - value: оптимум LP (для режима CONSTRAINED).
    """
    d_pi: Dict[int, float]
    risk: Dict[int, Dict[int, float]]
    mode: DecisionMode
    default_risk: float = 1.0
    value: Optional[float] = None

    def risk_for(self, action: int, observation: int) -> float:
        return self.risk.get(action, {}).get(observation, self.default_risk)

    def sample_action(self, rng: RandomSource) -> int:
        actions = sorted(self.d_pi)
        if len(actions) == 1:
            return actions[0]
        cdf = np.cumsum([self.d_pi[a] for a in actions])
        return actions[rng.categorical(cdf)]


@dataclass
class MdpPair:
    """
    Пара (узел, действие).

    Поля:
    - node, action: узел и действие.
    - reward: rew(h, a).
    - successors: (ребёнок, наблюдение, p(h, hao)).
    - escape_value: для пар, ведущих сразу в сток, — терминальная ценность V_a.
    """
    node: int
    action: int
    reward: float
    successors: List[Tuple[int, int, float]] = field(default_factory=list)
    escape_value: Optional[float] = None


@dataclass
class ConstrainedTreeMdp:
    """
    Конечный constrained MDP.

    Поля:
    - discount: γ.
    - depth_offset: L — длина истории корня.
    - leaf_depth: D — длина безопасных листьев (N+1).
    - node_depth: длины историй узлов (от начала игры).
    - node_kind: INTERNAL, SAFE, FRONTIER или SINK (последний узел).
    - terminal: терминальные награды листьев.
    - node_u: U узла явного дерева (1 для добавленных frontier-узлов).
    - pairs: пары (узел, действие).
    - labels: подписи узлов для дампа.
    """
    discount: float
    depth_offset: int
    leaf_depth: int
    node_depth: List[int]
    node_kind: List[str]
    terminal: List[float]
    node_u: List[float]
    pairs: List[MdpPair]
    labels: List[str] = field(default_factory=list)
    root: int = 0

    @property
    def sink(self) -> int:
        return len(self.node_kind) - 1

    def penalty(self, node: int) -> float:
        """C(h, ·) = 1/γ^{D−L} для безопасных листьев, иначе 0."""
        if self.node_kind[node] != SAFE:
            return 0.0
        return 1.0 / self.discount ** (self.leaf_depth - self.depth_offset)

    def leaves(self) -> List[int]:
        return [i for i, kind in enumerate(self.node_kind) if kind in (SAFE, FRONTIER)]


def build(closure: ClosureTree, search: Optional[SearchTree], escape: bool = True) -> ConstrainedTreeMdp:
    """
    Строит constrained MDP по замыканию.

    Параметры:
        closure: замыкание явного дерева (горизонт D и смещение L берутся из него).
        search: дерево поиска для терминальных наград (None — все нули).
        escape: добавлять ли пары для действий без явных детей.

    Возвращает:
        ConstrainedTreeMdp; терминальная награда frontier-листа короче
        горизонта — max_a V_a соответствующего узла поиска или 0, если узел
        ни разу не посещался.
    """
    tree = closure.tree
    n_actions = tree.model.n_actions
    model = tree.model

    def _search_node(history) -> Optional[SearchNode]:
        return search.find(history) if search is not None else None

    node_depth, node_kind, terminal, node_u, labels = [], [], [], [], []
    pairs: List[MdpPair] = []
    for index, cnode in enumerate(closure.nodes):
        node_depth.append(cnode.depth)
        node_kind.append(cnode.kind)
        node_u.append(cnode.u)
        labels.append(format_history(model, cnode.history))

        value = 0.0
        if cnode.kind == FRONTIER and cnode.depth < tree.leaf_depth:
            snode = _search_node(cnode.history)
            value = snode.best_value() if snode is not None else 0.0
        terminal.append(value)

        if cnode.kind != INTERNAL:
            continue
        for a, members in sorted(cnode.children.items()):
            successors = [
                (c, closure.nodes[c].history[-1][1], closure.nodes[c].prob) for c in members
            ]
            pairs.append(MdpPair(index, a, closure.nodes[members[0]].reward, successors))
        if escape:
            snode = _search_node(cnode.history)
            for a in range(n_actions):
                if a in cnode.children:
                    continue
                v = 0.0
                if snode is not None and snode.action_counts[a] > 0:
                    v = snode.action_values[a]
                pairs.append(MdpPair(index, a, 0.0, [], escape_value=v))

    node_depth.append(tree.leaf_depth)
    node_kind.append(SINK)
    terminal.append(0.0)
    node_u.append(1.0)
    labels.append(SINK)

    mdp = ConstrainedTreeMdp(
        discount=model.discount,
        depth_offset=closure.root.depth,
        leaf_depth=tree.leaf_depth,
        node_depth=node_depth,
        node_kind=node_kind,
        terminal=terminal,
        node_u=node_u,
        pairs=pairs,
        labels=labels,
    )
    logger.debug("constrained MDP: %d nodes, %d pairs", len(node_kind), len(pairs))
    return mdp


@dataclass
class OccupancyLp:
    """LP и соответствие его переменных парам и листьям MDP."""
    problem: LpProblem
    pair_vars: List[int]
    leaf_vars: Dict[int, int]


def assemble_lp(mdp: ConstrainedTreeMdp, rbound: float) -> OccupancyLp:
    """
    LP в мерах занятости.

    Переменные y(h, a) для пар и z(ℓ) для листьев; Σ_a y(root, a) = 1;
    сохранение потока во внутренних узлах и листьях; цель
    Σ y·γ^{d}·rew + Σ z(f)·γ^{d}·terminal(f) (d — глубина от корня);
    ограничение Σ_{безопасные листья} z ≥ 1 − rbound.
    """
    gamma, offset = mdp.discount, mdp.depth_offset
    n_pairs = len(mdp.pairs)
    leaves = mdp.leaves()
    leaf_vars = {leaf: n_pairs + i for i, leaf in enumerate(leaves)}
    n_vars = n_pairs + len(leaves)

    c = np.zeros(n_vars)
    names = []
    inflow: Dict[int, List[Tuple[int, float]]] = {}
    outflow: Dict[int, List[int]] = {}
    for k, pair in enumerate(mdp.pairs):
        weight = gamma ** (mdp.node_depth[pair.node] - offset)
        c[k] = weight * (pair.reward if pair.escape_value is None else pair.escape_value)
        names.append(f"y[{mdp.labels[pair.node] if mdp.labels else pair.node}|{pair.action}]")
        outflow.setdefault(pair.node, []).append(k)
        for child, _, prob in pair.successors:
            inflow.setdefault(child, []).append((k, prob))
    for leaf, var in leaf_vars.items():
        c[var] = gamma ** (mdp.node_depth[leaf] - offset) * mdp.terminal[leaf]
        names.append(f"z[{mdp.labels[leaf] if mdp.labels else leaf}]")

    rows, rhs = [], []
    root_row = np.zeros(n_vars)
    root_row[outflow.get(mdp.root, [])] = 1.0
    rows.append(root_row)
    rhs.append(1.0)

    for node, kind in enumerate(mdp.node_kind):
        if node == mdp.root or kind == SINK:
            continue
        row = np.zeros(n_vars)
        if kind == INTERNAL:
            row[outflow.get(node, [])] = 1.0
        else:
            row[leaf_vars[node]] = 1.0
        for k, prob in inflow.get(node, []):
            row[k] -= prob
        rows.append(row)
        rhs.append(0.0)

    safety = np.zeros(n_vars)
    for leaf, var in leaf_vars.items():
        if mdp.node_kind[leaf] == SAFE:
            safety[var] = 1.0
    problem = LpProblem(
        c=c,
        a_eq=np.array(rows),
        b_eq=np.array(rhs),
        g_ge=safety.reshape(1, -1),
        h_ge=np.array([1.0 - rbound]),
        names=names,
    )
    return OccupancyLp(problem, list(range(n_pairs)), leaf_vars)


def expected_penalty(mdp: ConstrainedTreeMdp, occupancy: Dict[int, float]) -> float:
    """E[Disc^C] = Σ z(ℓ)·γ^{d(ℓ)}·C(ℓ) по листьям с известной занятостью."""
    return sum(
        z * mdp.discount ** (mdp.node_depth[leaf] - mdp.depth_offset) * mdp.penalty(leaf)
        for leaf, z in occupancy.items()
    )


class LpEngine(Enum):
    TREE = "tree"
    SIMPLEX = "simplex"


@dataclass
class _Policy:
    """Детерминированная политика MDP: выбранные пары и её (R, S) из корня."""
    chosen: np.ndarray
    value: float
    safe: float


class _TreeArrays:
    """
    Векторное представление MDP для динамического программирования.

    Пары упорядочены по узлам, узлы — по глубине (замыкание строится обходом
    в ширину), поэтому пары и рёбра одного уровня лежат непрерывными отрезками.
    """

    def __init__(self, mdp: ConstrainedTreeMdp):
        n_nodes = len(mdp.node_kind)
        gamma, offset = mdp.discount, mdp.depth_offset
        depth = np.asarray(mdp.node_depth)

        self.root = mdp.root
        self.n_nodes = n_nodes
        self.pair_node = np.array([p.node for p in mdp.pairs], dtype=int)
        self.pair_c = np.array([
            gamma ** (mdp.node_depth[p.node] - offset) * (p.reward if p.escape_value is None else p.escape_value)
            for p in mdp.pairs
        ])
        edges = [(k, child, prob) for k, p in enumerate(mdp.pairs) for child, _, prob in p.successors]
        self.edge_pair = np.array([e[0] for e in edges], dtype=int)
        self.edge_child = np.array([e[1] for e in edges], dtype=int)
        self.edge_prob = np.array([e[2] for e in edges], dtype=float)

        kinds = np.asarray(mdp.node_kind)
        self.safe_leaf = kinds == SAFE
        self.leaf_value = np.where(
            kinds != INTERNAL, gamma ** (depth - offset).astype(float) * np.asarray(mdp.terminal), 0.0
        )

        pair_depth = depth[self.pair_node]
        if np.any(np.diff(pair_depth) < 0) or np.any(np.diff(self.edge_pair) < 0):
            raise NumericalFailure("constrained MDP pairs are not ordered by depth")
        self.levels = []
        for d in np.unique(pair_depth):
            p0, p1 = np.searchsorted(pair_depth, [d, d + 1])
            e0, e1 = np.searchsorted(self.edge_pair, [p0, p1])
            nodes = self.pair_node[p0:p1]
            starts = np.flatnonzero(np.r_[True, nodes[1:] != nodes[:-1]])
            self.levels.append((int(p0), int(p1), int(e0), int(e1), starts))

    def best_policy(self, primary: Tuple[float, float], secondary: Tuple[float, float]) -> _Policy:
        """
        Динамическое программирование снизу вверх.

        В каждом узле выбирается пара с максимальной primary-комбинацией
        (R, S), при равенстве — с максимальной secondary, затем первая по
        порядку. R — дисконтированная награда, S — вероятность дойти до
        безопасного листа.
        """
        wr, ws = primary
        vr, vs = secondary
        value = self.leaf_value.copy()
        safe = self.safe_leaf.astype(float)
        chosen = np.zeros(self.pair_node.size, dtype=bool)
        for p0, p1, e0, e1, starts in reversed(self.levels):
            local = self.edge_pair[e0:e1] - p0
            child = self.edge_child[e0:e1]
            prob = self.edge_prob[e0:e1]
            size = p1 - p0
            pair_r = self.pair_c[p0:p1] + np.bincount(local, weights=prob * value[child], minlength=size)
            pair_s = np.bincount(local, weights=prob * safe[child], minlength=size)

            counts = np.diff(np.r_[starts, size])
            key = wr * pair_r + ws * pair_s
            best = np.repeat(np.maximum.reduceat(key, starts), counts)
            candidate = key >= best - TIE_TOL * (1.0 + np.abs(best))
            tie = np.where(candidate, vr * pair_r + vs * pair_s, -np.inf)
            best_tie = np.repeat(np.maximum.reduceat(tie, starts), counts)
            winners = np.flatnonzero(candidate & (tie >= best_tie - TIE_TOL * (1.0 + np.abs(best_tie))))
            segment = np.repeat(np.arange(starts.size), counts)[winners]
            _, first = np.unique(segment, return_index=True)
            picked = winners[first]

            chosen[p0 + picked] = True
            nodes = self.pair_node[p0 + picked]
            value[nodes] = pair_r[picked]
            safe[nodes] = pair_s[picked]
        return _Policy(chosen, float(value[self.root]), float(safe[self.root]))

    def occupancy(self, policy: _Policy) -> Tuple[np.ndarray, np.ndarray]:
        """Меры занятости пар y и узлов детерминированной политики."""
        node_occ = np.zeros(self.n_nodes)
        node_occ[self.root] = 1.0
        y = np.zeros(self.pair_node.size)
        for p0, p1, e0, e1, _ in self.levels:
            y[p0:p1] = node_occ[self.pair_node[p0:p1]] * policy.chosen[p0:p1]
            np.add.at(node_occ, self.edge_child[e0:e1], y[self.edge_pair[e0:e1]] * self.edge_prob[e0:e1])
        return y, node_occ


def solve_tree_lp(mdp: ConstrainedTreeMdp, rbound: float) -> Tuple[np.ndarray, np.ndarray, float]:
    """
    Оптимум LP в мерах занятости без таблицы симплекс-метода.

    Описание:
        ограничение одно, поэтому оптимум — смесь двух детерминированных
        политик, оптимальных для лагранжиана R + λ·S при одном и том же λ.
        Точки излома λ ищутся параметрически: λ = (R_lo − R_hi)/(S_hi − S_lo)
        для текущей пары политик, пока лагранжиан не перестанет улучшаться.
        Каждое вычисление — один проход динамического программирования.

    Возвращает:
        (y по парам, занятость узлов, оптимальное значение).

    Исключения:
        InfeasibleConstraint — безопасная масса 1 − rbound недостижима.
    """
    arrays = _TreeArrays(mdp)
    need = 1.0 - rbound

    lo = arrays.best_policy((1.0, 0.0), (0.0, 1.0))
    if lo.safe >= need - SAFE_MASS_TOL:
        y, occ = arrays.occupancy(lo)
        return y, occ, lo.value

    hi = arrays.best_policy((0.0, 1.0), (1.0, 0.0))
    if hi.safe < need - SAFE_MASS_TOL:
        raise InfeasibleConstraint(f"no policy reaches safe mass {need:.6g} (best {hi.safe:.6g})")

    for _ in range(MAX_BREAKPOINTS):
        gap = hi.safe - lo.safe
        if gap <= SAFE_MASS_TOL:
            break
        lam = max(0.0, (lo.value - hi.value) / gap)
        mid = arrays.best_policy((1.0, lam), (0.0, 1.0))
        current = lo.value + lam * lo.safe
        if mid.value + lam * mid.safe <= current + TIE_TOL * (1.0 + abs(current)):
            break
        if mid.safe >= need:
            hi = mid
        else:
            lo = mid
    else:
        logger.warning("breakpoint search stopped after %d iterations", MAX_BREAKPOINTS)

    gap = hi.safe - lo.safe
    weight = 1.0 if gap <= SAFE_MASS_TOL else min(1.0, max(0.0, (need - lo.safe) / gap))
    y_hi, occ_hi = arrays.occupancy(hi)
    y_lo, occ_lo = arrays.occupancy(lo)
    value = weight * hi.value + (1.0 - weight) * lo.value
    return weight * y_hi + (1.0 - weight) * y_lo, weight * occ_hi + (1.0 - weight) * occ_lo, value


def _solve_simplex(mdp: ConstrainedTreeMdp, rbound: float, dump_lp: bool) -> Tuple[np.ndarray, np.ndarray, float]:
    lp = assemble_lp(mdp, rbound)
    outcome = solve(lp.problem)
    if dump_lp:
        logger.info("occupancy LP (rbound=%.6g):\n%s", rbound, format_lp(lp.problem, outcome))
    if outcome.status is LpStatus.INFEASIBLE:
        raise InfeasibleConstraint(f"no policy reaches safe mass {1.0 - rbound:.6g}")
    if outcome.status is LpStatus.UNBOUNDED:
        raise NumericalFailure("occupancy LP reported unbounded")
    x = np.maximum(outcome.x, 0.0)
    occ = np.zeros(len(mdp.node_kind))
    for leaf, var in lp.leaf_vars.items():
        occ[leaf] = x[var]
    return x[: len(mdp.pairs)], occ, float(outcome.value)


def solve_decision(
    mdp: ConstrainedTreeMdp,
    rbound: float,
    dump_lp: bool = False,
    engine: LpEngine = LpEngine.TREE,
) -> ActionDecision:
    """
    Решает LP и извлекает d_pi и векторы риска.

    Параметры:
        mdp: constrained MDP (дерево).
        rbound: текущая граница риска из [0, 1].
        dump_lp: записать дамп LP в лог.
        engine: TREE — динамическое программирование по лагранжиану,
            SIMPLEX — плотная таблица (для сверки на маленьких деревьях).

    Возвращает:
        ActionDecision в режиме CONSTRAINED:
            d_pi(a) ∝ y(root, a),
            d^a(o) = 1 − SafeMass(ao)/z(ao), а при z(ao) ≤ 1e-12 — U ребёнка.

    Исключения:
        InfeasibleConstraint — LP недопустима.
    """
    if not 0.0 <= rbound <= 1.0:
        raise ValueError(f"rbound must be in [0, 1], got {rbound}")

    if engine is LpEngine.SIMPLEX:
        y, occ, value = _solve_simplex(mdp, rbound, dump_lp)
    else:
        y, occ, value = solve_tree_lp(mdp, rbound)
        if dump_lp:
            logger.info("occupancy LP (rbound=%.6g), tree engine value %.10g:\n%s",
                        rbound, value, format_lp(assemble_lp(mdp, rbound).problem))
    safe_occupancy = {leaf: float(occ[leaf]) for leaf in mdp.leaves() if mdp.node_kind[leaf] == SAFE}
    reached = expected_penalty(mdp, safe_occupancy)
    if reached < 1.0 - rbound - PENALTY_CHECK_TOL:
        raise NumericalFailure(f"occupancy reaches safe mass {reached:.9g} < {1.0 - rbound:.9g}")
    return _decision_from_occupancy(mdp, np.maximum(y, 0.0), np.maximum(occ, 0.0), value)


def _decision_from_occupancy(
    mdp: ConstrainedTreeMdp,
    y: np.ndarray,
    occ: np.ndarray,
    value: float,
) -> ActionDecision:
    # Безопасная масса поддерева: дети всегда имеют больший индекс, чем родитель
    safe_mass = np.where(np.asarray(mdp.node_kind) == SAFE, occ, 0.0)
    by_node: Dict[int, List[int]] = {}
    for k, pair in enumerate(mdp.pairs):
        by_node.setdefault(pair.node, []).append(k)
    for node in range(len(mdp.node_kind) - 1, -1, -1):
        for k in by_node.get(node, []):
            safe_mass[node] += sum(safe_mass[child] for child, _, _ in mdp.pairs[k].successors)

    root_pairs = by_node.get(mdp.root, [])
    total = float(sum(y[k] for k in root_pairs))
    d_pi: Dict[int, float] = {}
    risk: Dict[int, Dict[int, float]] = {}
    for k in root_pairs:
        pair = mdp.pairs[k]
        weight = float(y[k]) / total if total > 0 else 0.0
        if weight > OCCUPANCY_TOL:
            d_pi[pair.action] = d_pi.get(pair.action, 0.0) + weight
        vector = {}
        for child, observation, prob in pair.successors:
            z = prob * float(y[k])
            if z > OCCUPANCY_TOL:
                risk_value = 1.0 - safe_mass[child] / z
            else:
                risk_value = mdp.node_u[child]
            vector[observation] = min(1.0, max(0.0, risk_value))
        risk[pair.action] = vector

    norm = sum(d_pi.values())
    d_pi = {a: p / norm for a, p in d_pi.items()}
    return ActionDecision(d_pi, risk, DecisionMode.CONSTRAINED, default_risk=1.0, value=value)


def risk_min_fallback(tree: ExplicitTree) -> ActionDecision:
    """
    Консервативная минимизация риска: действие с минимальным U_a корня
    (при равенстве — меньший индекс), все d^a(o) = 0.
    """
    u_a = tree.root.u_a
    if not u_a:
        raise ValueError("risk-minimizing fallback needs an allowed root action")
    action = min(sorted(u_a), key=lambda a: u_a[a])
    return ActionDecision({action: 1.0}, {action: {}}, DecisionMode.RISK_MINIMIZING, default_risk=0.0)


def unconstrained_decision(search_root: SearchNode) -> ActionDecision:
    """
    Обычный выбор POMCP: argmax_a V_a среди опробованных действий
    (при равенстве — меньший индекс), все d^a(o) = 1.
    """
    candidates = search_root.tried_actions() or list(range(search_root.n_actions))
    action = max(candidates, key=lambda a: (search_root.action_values[a], -a))
    return ActionDecision({action: 1.0}, {action: {}}, DecisionMode.UNCONSTRAINED, default_risk=1.0)
