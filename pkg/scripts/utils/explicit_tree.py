"""
Явное дерево T_exp: истории, из которых найдено продолжение с выплатой не
ниже порога.

Каждый узел хранит точный belief, вероятность p(h, hao) и награду rew(h, hao)
входящего ребра, а также верхние оценки риска U и U_a. Оценки пересчитываются
динамическим программированием снизу вверх:

    U_a = 1 − Σ_{o: ребёнок есть} p(h, hao)·(1 − U(hao)),   U = min_a U_a,

где минимум берётся только по действиям, у которых есть дети. Отсутствующие
дети вносят риск 1.
"""

from __future__ import annotations

import logging
from collections import deque
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np

from utils.errors import BeliefUpdateFailure, ZeroProbabilityObservation
from utils.pomdp_model import (
    ZERO_TOL,
    Belief,
    History,
    Pomdp,
    belief_update,
    obs_distribution,
    reward_of,
)

if TYPE_CHECKING:
    from utils.pomcp_search import SearchTree

logger = logging.getLogger(__name__)

ObsKey = Tuple[int, int]


class ExplicitNode:
    """
    Узел явного дерева.

    Атрибуты:
        key: (a, o) входящего ребра (None у корня).
        belief: точный belief b_h.
        depth: длина истории от начала игры.
        prob: p(h, hao) входящего ребра.
        reward: rew(h, hao) = r(b_h, a) входящего ребра.
        u: верхняя оценка минимального риска из узла.
        u_a: оценки по действиям, у которых есть дети.
        safe_leaf: лист полной длины, выплата которого достигла порога.
        children: дети по ключу (a, o).
        parent: родитель (None у корня).
    """

    def __init__(
        self,
        belief: Belief,
        depth: int,
        key: Optional[ObsKey] = None,
        prob: float = 1.0,
        reward: float = 0.0,
        parent: Optional["ExplicitNode"] = None,
    ):
        self.key = key
        self.belief = belief
        self.depth = depth
        self.prob = prob
        self.reward = reward
        self.parent = parent
        self.u = 1.0
        self.u_a: Dict[int, float] = {}
        self.safe_leaf = False
        self.children: Dict[ObsKey, "ExplicitNode"] = {}

    def allowed_actions(self) -> List[int]:
        """Действия, у которых есть хотя бы один ребёнок."""
        return sorted({a for a, _ in self.children})

    def history(self) -> History:
        """История относительно корня текущего дерева."""
        keys = []
        node = self
        while node.parent is not None:
            keys.append(node.key)
            node = node.parent
        return tuple(reversed(keys))


def _action_risks(node: ExplicitNode) -> Dict[int, float]:
    safe_mass: Dict[int, float] = {}
    for (a, _), child in node.children.items():
        safe_mass[a] = safe_mass.get(a, 0.0) + child.prob * (1.0 - child.u)
    return {a: min(1.0, max(0.0, 1.0 - m)) for a, m in safe_mass.items()}


class ExplicitTree:
    """
    Явное дерево с корнем в текущей истории игры.

    Атрибуты:
        model: модель POMDP.
        root: корневой узел (точный belief корня поддерживает агент).
        leaf_depth: длина (от начала игры) безопасных листьев, то есть N+1.
    """

    def __init__(self, model: Pomdp, root: ExplicitNode, leaf_depth: int):
        self.model = model
        self.root = root
        self.leaf_depth = leaf_depth

    @classmethod
    def empty(cls, model: Pomdp, belief: Belief, depth: int, leaf_depth: int) -> "ExplicitTree":
        """Пустое дерево: только корень с U = 1."""
        return cls(model, ExplicitNode(np.asarray(belief, dtype=float), depth), leaf_depth)

    @property
    def remaining(self) -> int:
        """Сколько решений осталось от корня до листьев."""
        return self.leaf_depth - self.root.depth

    def nodes(self) -> Iterator[ExplicitNode]:
        stack = [self.root]
        while stack:
            node = stack.pop()
            yield node
            stack.extend(node.children.values())

    def size(self) -> int:
        return sum(1 for _ in self.nodes())

    def find(self, history: Sequence[ObsKey]) -> Optional[ExplicitNode]:
        node = self.root
        for key in history:
            node = node.children.get(key)
            if node is None:
                return None
        return node

    def update_trees(
        self,
        path: History,
        rewards: Sequence[float],
        search_tree: Optional["SearchTree"] = None,
        states: Optional[Sequence[int]] = None,
    ) -> ExplicitNode:
        """
        Добавляет безопасную историю полной длины.

        Параметры:
            path: история относительно корня (ровно remaining шагов).
            rewards: награды вдоль истории (для инициализации дерева поиска).
            search_tree: дерево поиска, куда вставляются недостающие префиксы.
            states: сэмплированные состояния после каждого шага (частицы новых
                узлов поиска).

        Возвращает:
            безопасный лист.

        Исключения:
            BeliefUpdateFailure — префикс требует невозможного наблюдения.

        Описание:
            недостающие префиксы получают точные belief'ы (цепочкой
            belief_update от корня), p и rew; лист получает U = 0; затем
            U_a и U пересчитываются у всех предков. Оценки никогда не растут.
        """
        if len(path) != self.remaining:
            raise ValueError(f"safe history has length {len(path)}, expected {self.remaining}")

        model = self.model
        node = self.root
        for a, o in path:
            child = node.children.get((a, o))
            if child is None:
                probs = obs_distribution(model, node.belief, a)
                try:
                    belief = belief_update(model, node.belief, a, o)
                except ZeroProbabilityObservation as e:
                    raise BeliefUpdateFailure(
                        f"prefix {node.history() + ((a, o),)} conditions on an impossible observation"
                    ) from e
                child = ExplicitNode(
                    belief,
                    node.depth + 1,
                    key=(a, o),
                    prob=float(probs[o]),
                    reward=reward_of(model, node.belief, a),
                    parent=node,
                )
                node.children[(a, o)] = child
            node = child

        leaf = node
        leaf.safe_leaf = True
        leaf.u = 0.0

        node = leaf.parent
        while node is not None:
            for a, risk in _action_risks(node).items():
                node.u_a[a] = min(node.u_a.get(a, 1.0), risk)
            node.u = min(node.u, min(node.u_a.values()))
            node = node.parent

        if search_tree is not None:
            search_tree.insert_path(path, rewards, model.discount, states)
        return leaf

    def min_risk_dp(self) -> float:
        """
        Полный пересчёт U_a и U снизу вверх.

        Возвращает:
            U корня (1 для пустого дерева).
        """
        order = list(self.nodes())
        for node in reversed(order):
            if node.safe_leaf:
                node.u, node.u_a = 0.0, {}
            elif not node.children:
                node.u, node.u_a = 1.0, {}
            else:
                node.u_a = _action_risks(node)
                node.u = min(node.u_a.values())
        return self.root.u

    def closure(self) -> "ClosureTree":
        """Замыкание дерева, см. ClosureTree.build."""
        return ClosureTree.build(self)

    def prune_to(self, action: int, observation: int) -> "ExplicitTree":
        """
        Поддерево с корнем в ребёнке (a, o).

        Если ребёнка нет, возвращается пустое дерево с U = 1, корень которого
        получает точный belief обновлением из старого корня.
        """
        child = self.root.children.get((action, observation))
        if child is not None:
            child.parent = None
            return ExplicitTree(self.model, child, self.leaf_depth)
        logger.debug("played %s outside the explicit tree, restarting with U=1", (action, observation))
        belief = belief_update(self.model, self.root.belief, action, observation)
        return ExplicitTree.empty(self.model, belief, self.root.depth + 1, self.leaf_depth)

    def dump(self) -> str:
        """Текстовый дамп: история, U, p и rew на каждом ребре."""
        model = self.model
        lines = [f"ε U={self.root.u:.6g} U_a={self._fmt_u_a(self.root)}"]
        stack = [(self.root, 0)]
        while stack:
            node, indent = stack.pop()
            for key in sorted(node.children, reverse=True):
                child = node.children[key]
                a, o = key
                mark = " safe" if child.safe_leaf else ""
                lines.append(
                    f"{'  ' * (indent + 1)}{model.actions[a]}/{model.observations[o]} "
                    f"p={child.prob:.6g} rew={child.reward:.6g} U={child.u:.6g}"
                    f"{self._fmt_u_a(child)}{mark}"
                )
                stack.append((child, indent + 1))
        return "\n".join(lines)

    def _fmt_u_a(self, node: ExplicitNode) -> str:
        if not node.u_a:
            return ""
        parts = ", ".join(f"{self.model.actions[a]}:{u:.6g}" for a, u in sorted(node.u_a.items()))
        return f" U_a={{{parts}}}"


FRONTIER = "frontier"
SAFE = "safe"
INTERNAL = "internal"


@dataclass
class ClosureNode:
    """
    Узел замыкания.

    Поля:
    - depth: длина истории от начала игры.
    - history: история относительно корня.
    - kind: INTERNAL (есть дети), SAFE (безопасный лист) или FRONTIER.
    - explicit: соответствующий узел T_exp (None у добавленных frontier-узлов).
    - prob, reward: метки входящего ребра.
    - children: действие → индексы детей.
    """
    depth: int
    history: History
    kind: str
    explicit: Optional[ExplicitNode]
    prob: float = 1.0
    reward: float = 0.0
    children: Dict[int, List[int]] = field(default_factory=dict)

    @property
    def u(self) -> float:
        return self.explicit.u if self.explicit is not None else 1.0


@dataclass
class ClosureTree:
    """
    T_exp плюс для каждого узла h и разрешённого действия a все недостающие
    дети hao' с положительной вероятностью (frontier-узлы с U = 1). После
    замыкания Σ_o p(h, hao) = 1 для каждой пары (h, a).
    """
    tree: ExplicitTree
    nodes: List[ClosureNode]

    @classmethod
    def build(cls, tree: ExplicitTree) -> "ClosureTree":
        model = tree.model
        nodes: List[ClosureNode] = []

        def _make(explicit: Optional[ExplicitNode], depth: int, history: History, prob: float, reward: float) -> int:
            if explicit is None or not (explicit.children or explicit.safe_leaf):
                kind = FRONTIER
            elif explicit.safe_leaf:
                kind = SAFE
            else:
                kind = INTERNAL
            nodes.append(ClosureNode(depth, history, kind, explicit, prob, reward))
            return len(nodes) - 1

        _make(tree.root, tree.root.depth, (), 1.0, 0.0)
        queue = deque([0])
        while queue:
            index = queue.popleft()
            cnode = nodes[index]
            if cnode.kind != INTERNAL:
                continue
            explicit = cnode.explicit
            for a in explicit.allowed_actions():
                probs = obs_distribution(model, explicit.belief, a)
                reward = reward_of(model, explicit.belief, a)
                members = []
                for o in np.flatnonzero(probs > ZERO_TOL):
                    o = int(o)
                    child = explicit.children.get((a, o))
                    prob = child.prob if child is not None else float(probs[o])
                    members.append(_make(child, cnode.depth + 1, cnode.history + ((a, o),), prob, reward))
                cnode.children[a] = members
                queue.extend(members)
        return cls(tree, nodes)

    @property
    def root(self) -> ClosureNode:
        return self.nodes[0]

    def frontier(self) -> List[int]:
        return [i for i, n in enumerate(self.nodes) if n.kind == FRONTIER]

    def added(self) -> List[int]:
        """Frontier-узлы, которых нет в T_exp."""
        return [i for i, n in enumerate(self.nodes) if n.explicit is None]
