"""
Дерево поиска POMCP: статистики узлов, выбор действия по UCB, симуляции и
rollout'ы.

Величина pay — дисконтированная выплата, накопленная от текущего корня
(γ^0·r_1 + γ^1·r_2 + ...), в тех же единицах, что и порог thr после
пересчёта shift_threshold. Поэтому сравнение pay ≥ thr на глубине 0 совпадает
с предикатом безопасности всей игры.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Dict, List, Optional, Sequence, Tuple

from utils.pomdp_model import History, Pomdp
from utils.sampler import RandomSource, sample_step

if TYPE_CHECKING:
    from utils.explicit_tree import ExplicitTree

logger = logging.getLogger(__name__)

PARTICLE_CAP = 10_000  # максимум частиц в узле, дальше reservoir-замена
SAFETY_TOL = 1e-9  # допуск в сравнении pay ≥ thr

ObsKey = Tuple[int, int]


class SearchNode:
    """
    Узел дерева поиска.

    Атрибуты:
        visit_count: N — число симуляций, прошедших через узел.
        action_counts: N_a по действиям.
        action_values: V_a — средняя дисконтированная выплата после действия a.
        particles: частицы (состояния), приближающие belief узла.
        particles_seen: сколько частиц предлагалось узлу (для reservoir-выборки).
        children: дети по ключу (действие, наблюдение).
    """

    def __init__(self, n_actions: int):
        self.visit_count = 0
        self.action_counts = [0] * n_actions
        self.action_values = [0.0] * n_actions
        self.particles: List[int] = []
        self.particles_seen = 0
        self.children: Dict[ObsKey, "SearchNode"] = {}

    @property
    def n_actions(self) -> int:
        return len(self.action_counts)

    def add_particle(self, state: int, rng: RandomSource, cap: int = PARTICLE_CAP) -> None:
        """Reservoir-выборка: до cap частиц храним все, дальше заменяем случайную."""
        self.particles_seen += 1
        if len(self.particles) < cap:
            self.particles.append(state)
            return
        j = rng.integers(self.particles_seen)
        if j < cap:
            self.particles[j] = state

    def update(self, action: int, ret: float) -> None:
        """
        Обновляет статистики после симуляции:
            N += 1, N_a += 1, V_a += (R − V_a)/N_a.
        """
        self.visit_count += 1
        self.action_counts[action] += 1
        self.action_values[action] += (ret - self.action_values[action]) / self.action_counts[action]

    def add_child(self, key: ObsKey) -> "SearchNode":
        child = SearchNode(self.n_actions)
        self.children[key] = child
        return child

    def tried_actions(self) -> List[int]:
        return [a for a, n in enumerate(self.action_counts) if n > 0]

    def best_value(self) -> float:
        """max_a V_a по опробованным действиям (0, если узел не посещался)."""
        tried = self.tried_actions()
        if not tried:
            return 0.0
        return max(self.action_values[a] for a in tried)


def ucb_select(node: SearchNode, exploration: float) -> int:
    """
    Выбор действия по UCB: argmax_a V_a + K·sqrt(ln N / N_a).

    Неопробованное действие имеет бесконечную оценку и выбирается первым
    (наименьший индекс); при равенстве оценок побеждает меньший индекс.
    """
    for a, count in enumerate(node.action_counts):
        if count == 0:
            return a
    log_n = math.log(node.visit_count) if node.visit_count > 0 else 0.0
    best_action, best_score = 0, -math.inf
    for a, (value, count) in enumerate(zip(node.action_values, node.action_counts)):
        score = value + exploration * math.sqrt(log_n / count)
        if score > best_score:
            best_action, best_score = a, score
    return best_action


class SearchTree:
    """Дерево поиска с корнем в текущей истории игры."""

    def __init__(self, n_actions: int, root: Optional[SearchNode] = None):
        self.n_actions = n_actions
        self.root = root if root is not None else SearchNode(n_actions)

    def find(self, history: Sequence[ObsKey]) -> Optional[SearchNode]:
        """Узел по истории относительно корня (None, если его нет)."""
        node = self.root
        for key in history:
            node = node.children.get(key)
            if node is None:
                return None
        return node

    def insert_path(
        self,
        path: History,
        rewards: Sequence[float],
        gamma: float,
        states: Optional[Sequence[int]] = None,
    ) -> int:
        """
        Вставляет отсутствующие префиксы безопасной истории.

        Новый узел получает N = 1, а для действия, сыгранного из него вдоль
        пути, N_a = 1 и V_a = дисконтированная выплата суффикса этой симуляции.
        Если переданы states (состояние после каждого шага пути), новый узел
        получает соответствующую частицу, так что N совпадает с числом
        предложенных узлу частиц. Без states узел остаётся без частиц.

        Возвращает:
            число вставленных узлов.
        """
        suffix = [0.0] * (len(path) + 1)
        for i in range(len(path) - 1, -1, -1):
            suffix[i] = rewards[i] + gamma * suffix[i + 1]

        inserted = 0
        node = self.root
        for i, key in enumerate(path):
            child = node.children.get(key)
            if child is None:
                child = node.add_child(key)
                child.visit_count = 1
                if states is not None:
                    child.particles.append(states[i])
                    child.particles_seen = 1
                if i + 1 < len(path):
                    next_action = path[i + 1][0]
                    child.action_counts[next_action] = 1
                    child.action_values[next_action] = suffix[i + 1]
                inserted += 1
            node = child
        return inserted

    def prune_to(self, action: int, observation: int) -> "SearchTree":
        """Поддерево с корнем в ребёнке (a, o) или пустое дерево, если ребёнка нет."""
        child = self.root.children.get((action, observation))
        return SearchTree(self.n_actions, child)

    def size(self) -> int:
        count, stack = 0, [self.root]
        while stack:
            node = stack.pop()
            count += 1
            stack.extend(node.children.values())
        return count


@dataclass
class SearchContext:
    """
    Всё, что нужно симуляциям одной фазы поиска.

    Поля:
    - model: модель POMDP.
    - tree: дерево поиска.
    - explicit: явное дерево (None для обычного POMCP).
    - threshold: текущий порог thr в единицах корня.
    - exploration: константа K в UCB.
    - rng: поток случайности поиска.
    - particle_cap: предел частиц в узле.
    - path, path_rewards, path_states: стек текущей симулируемой истории,
      наград и сэмплированных состояний вдоль неё.
    """
    model: Pomdp
    tree: SearchTree
    explicit: Optional["ExplicitTree"]
    threshold: float
    exploration: float
    rng: RandomSource
    particle_cap: int = PARTICLE_CAP
    path: List[ObsKey] = field(default_factory=list)
    path_rewards: List[float] = field(default_factory=list)
    path_states: List[int] = field(default_factory=list)
    safe_hits: int = 0

    def push(self, action: int, observation: int, reward: float, state: int) -> float:
        """Добавляет шаг в стек и возвращает вес γ^k этой награды относительно корня."""
        weight = self.model.discount ** len(self.path)
        self.path.append((action, observation))
        self.path_rewards.append(reward)
        self.path_states.append(state)
        return weight

    def pop(self, count: int = 1) -> None:
        del self.path[len(self.path) - count:]
        del self.path_rewards[len(self.path_rewards) - count:]
        del self.path_states[len(self.path_states) - count:]


def _reach_horizon(ctx: SearchContext, pay: float) -> None:
    if ctx.explicit is None or pay < ctx.threshold - SAFETY_TOL:
        return
    ctx.safe_hits += 1
    ctx.explicit.update_trees(tuple(ctx.path), ctx.path_rewards, ctx.tree, ctx.path_states)


def rollout(ctx: SearchContext, state: int, depth: int, pay: float) -> float:
    """
    Rollout с равномерным выбором действий до глубины 0.

    Возвращает:
        дисконтированную выплату от текущего узла.
    """
    model, rng = ctx.model, ctx.rng
    rewards = []
    while depth > 0:
        action = rng.integers(model.n_actions)
        state, observation, reward = sample_step(model, state, action, rng)
        pay += ctx.push(action, observation, reward, state) * reward
        rewards.append(reward)
        depth -= 1
    _reach_horizon(ctx, pay)
    ctx.pop(len(rewards))

    ret = 0.0
    for reward in reversed(rewards):
        ret = reward + model.discount * ret
    return ret


def simulate(
    ctx: SearchContext,
    state: int,
    node: Optional[SearchNode],
    depth: int,
    pay: float,
    parent: Optional[SearchNode] = None,
    key: Optional[ObsKey] = None,
) -> float:
    """
    Одна симуляция POMCP из узла node.

    Параметры:
        ctx: контекст фазы поиска.
        state: текущее (сэмплированное) состояние.
        node: узел истории или None, если истории ещё нет в дереве.
        depth: оставшееся число решений.
        pay: дисконтированная выплата от корня до текущей истории.
        parent, key: куда вставить узел при первом посещении.

    Возвращает:
        дисконтированную выплату от этого узла.

    Описание:
        на глубине 0 безопасная история (pay ≥ thr) передаётся в update_trees;
        при первом посещении узел добавляется и вызывается rollout; иначе
        действие выбирается по UCB и статистики обновляются инкрементально.
    """
    if depth == 0:
        _reach_horizon(ctx, pay)
        return 0.0

    if node is None:
        node = parent.add_child(key)
        node.add_particle(state, ctx.rng, ctx.particle_cap)
        return rollout(ctx, state, depth, pay)

    node.add_particle(state, ctx.rng, ctx.particle_cap)
    model = ctx.model
    action = ucb_select(node, ctx.exploration)
    next_state, observation, reward = sample_step(model, state, action, ctx.rng)
    weight = ctx.push(action, observation, reward, next_state)
    child_key = (action, observation)
    future = simulate(
        ctx, next_state, node.children.get(child_key), depth - 1,
        pay + weight * reward, node, child_key,
    )
    ctx.pop()

    ret = reward + model.discount * future
    node.update(action, ret)
    return ret


def default_exploration(model: Pomdp, horizon: int) -> float:
    """K = 2·(r_max − r_min)·(N+1)."""
    return 2.0 * (model.r_max - model.r_min) * (horizon + 1)
