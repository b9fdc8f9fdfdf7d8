"""
Конечная модель POMDP, её проверка, точное обновление belief и арифметика
дисконтированных выплат.

Модель хранит все распределения в виде numpy-массивов:
    transition[a, s, s'] — вероятность перехода,
    reward[s, a]         — награда,
    obs_fn[s', o]        — вероятность наблюдения (зависит только от состояния),
    initial_belief[s]    — начальное распределение.

Состояния, действия и наблюдения внутри всегда задаются индексами, имена
нужны только для ввода-вывода.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import List, Optional, Sequence, Tuple

import numpy as np

from utils.errors import InsufficientLength, ModelValidationError, ZeroProbabilityObservation

PROB_TOL = 1e-9  # допуск на нормировку строк распределений
ZERO_TOL = 1e-12  # ниже этого нормировщик belief считается нулевым

# История: последовательность пар (действие, наблюдение)
History = Tuple[Tuple[int, int], ...]
Belief = np.ndarray


@dataclass(frozen=True, eq=False)
class Pomdp:
    """
    Конечный POMDP (S, A, Z, δ, r, O, λ, γ).

    Объект неизменяем: массивы после создания переводятся в режим только для
    чтения, поэтому модель можно безопасно передавать в параллельные испытания.
    """

    states: Tuple[str, ...]
    actions: Tuple[str, ...]
    observations: Tuple[str, ...]
    transition: np.ndarray
    reward: np.ndarray
    obs_fn: np.ndarray
    initial_belief: np.ndarray
    discount: float
    name: str = field(default="pomdp")

    def __post_init__(self):
        object.__setattr__(self, "states", tuple(self.states))
        object.__setattr__(self, "actions", tuple(self.actions))
        object.__setattr__(self, "observations", tuple(self.observations))
        object.__setattr__(self, "discount", float(self.discount))

        n_s, n_a, n_o = len(self.states), len(self.actions), len(self.observations)
        expected = {
            "transition": (n_a, n_s, n_s),
            "reward": (n_s, n_a),
            "obs_fn": (n_s, n_o),
            "initial_belief": (n_s,),
        }
        for attr, shape in expected.items():
            arr = np.array(getattr(self, attr), dtype=float)
            if arr.shape != shape:
                raise ValueError(f"{attr} has shape {arr.shape}, expected {shape}")
            arr.setflags(write=False)
            object.__setattr__(self, attr, arr)

    @property
    def n_states(self) -> int:
        return len(self.states)

    @property
    def n_actions(self) -> int:
        return len(self.actions)

    @property
    def n_observations(self) -> int:
        return len(self.observations)

    @cached_property
    def r_max(self) -> float:
        return float(self.reward.max()) if self.reward.size else 0.0

    @cached_property
    def r_min(self) -> float:
        return float(self.reward.min()) if self.reward.size else 0.0

    @cached_property
    def transition_cdf(self) -> np.ndarray:
        # Кумулятивные суммы для выборки s' ~ δ(·|s,a)
        return np.cumsum(self.transition, axis=2)

    @cached_property
    def obs_cdf(self) -> np.ndarray:
        return np.cumsum(self.obs_fn, axis=1)

    def state_index(self, name: str) -> int:
        return self.states.index(name)

    def action_index(self, name: str) -> int:
        return self.actions.index(name)

    def observation_index(self, name: str) -> int:
        return self.observations.index(name)


@dataclass(frozen=True)
class HorizonSpec:
    """
    Горизонт планирования: либо явный N, либо погрешность ε.

    При задании ε горизонт вычисляется через horizon_for_epsilon, а порог
    заменяется на τ − ε/2.
    """

    horizon: Optional[int] = None
    epsilon: Optional[float] = None

    def __post_init__(self):
        if (self.horizon is None) == (self.epsilon is None):
            raise ValueError("HorizonSpec needs exactly one of horizon or epsilon")
        if self.horizon is not None and self.horizon < 0:
            raise ValueError(f"horizon must be nonnegative, got {self.horizon}")
        if self.epsilon is not None and not self.epsilon > 0:
            raise ValueError(f"epsilon must be positive, got {self.epsilon}")

    def resolve(self, model: Pomdp, tau: float) -> Tuple[int, float]:
        """
        Возвращает:
            (N, τ') — конечный горизонт и порог, с которым работает планировщик.
        """
        if self.horizon is not None:
            return int(self.horizon), float(tau)
        n = horizon_for_epsilon(model, self.epsilon)
        return n, float(tau) - self.epsilon / 2.0


def decision_steps(horizon: int) -> int:
    """Число решений (и наград) при горизонте N: сумма идёт по i = 0..N."""
    return horizon + 1


def _rows_violations(rows: np.ndarray, label) -> List[str]:
    out = []
    sums = rows.sum(axis=-1)
    for idx in np.ndindex(sums.shape):
        total = float(sums[idx])
        if abs(total - 1.0) > PROB_TOL:
            out.append(f"{label(idx)} sums to {total:.12g}, expected 1")
    negative = np.argwhere(rows < -PROB_TOL)
    for idx in negative:
        out.append(f"{label(tuple(idx[:-1]))} has a negative entry at column {int(idx[-1])}")
    return out


def validate(model: Pomdp) -> List[str]:
    """
    Проверяет инварианты модели.

    Параметры:
        model: модель POMDP.

    Возвращает:
        список нарушений (пустой список означает корректную модель). Каждое
        нарушение содержит место, где оно найдено.

    Замечание:
        наблюдаемость наград проверяется так: состояния с одинаковыми
        строками obs_fn (поэлементно в пределах 1e-9) и все состояния из
        носителя начального belief должны иметь одинаковые награды.
    """
    violations: List[str] = []

    for attr in ("transition", "reward", "obs_fn", "initial_belief"):
        if not np.isfinite(getattr(model, attr)).all():
            violations.append(f"{attr} has non-finite entries")

    if not 0.0 <= model.discount < 1.0:
        violations.append(f"discount {model.discount} is outside [0, 1)")

    violations += _rows_violations(
        model.transition,
        lambda idx: f"transition row (state={model.states[idx[1]]}, action={model.actions[idx[0]]})",
    )
    violations += _rows_violations(
        model.obs_fn,
        lambda idx: f"obs_fn row (state={model.states[idx[0]]})",
    )
    violations += _rows_violations(model.initial_belief, lambda idx: "initial_belief")

    reported = set()

    def _compare(s: int, t: int, reason: str):
        pair = (min(s, t), max(s, t))
        if pair in reported:
            return
        diff = np.abs(model.reward[s] - model.reward[t]) > PROB_TOL
        if diff.any():
            reported.add(pair)
            names = ", ".join(model.actions[a] for a in np.flatnonzero(diff))
            violations.append(
                f"unobservable rewards: states {model.states[s]} and {model.states[t]} "
                f"({reason}) differ in reward under action(s) {names}"
            )

    # Пары состояний с совпадающими (в пределах допуска) строками наблюдений
    rows = model.obs_fn.reshape(model.n_states, -1)
    for s in range(model.n_states - 1):
        close = np.all(np.abs(rows[s + 1:] - rows[s]) <= PROB_TOL, axis=1)
        for other in s + 1 + np.flatnonzero(close):
            _compare(s, int(other), "identical observation rows")

    support = np.flatnonzero(model.initial_belief > ZERO_TOL)
    for other in support[1:]:
        _compare(int(support[0]), int(other), "initial belief support")

    return violations


def check_belief(weights: Sequence[float], n_states: Optional[int] = None) -> Belief:
    """
    Проверяет и возвращает belief как numpy-массив.

    Исключения:
        ValueError, если веса отрицательны или не суммируются в 1 (в пределах 1e-9).
    """
    b = np.asarray(weights, dtype=float)
    if n_states is not None and b.shape != (n_states,):
        raise ValueError(f"belief has shape {b.shape}, expected ({n_states},)")
    if (b < -PROB_TOL).any():
        raise ValueError("belief has negative weights")
    if abs(float(b.sum()) - 1.0) > PROB_TOL:
        raise ValueError(f"belief sums to {float(b.sum())}, expected 1")
    return b


def predicted_states(model: Pomdp, b: Belief, a: int) -> np.ndarray:
    """Распределение s' после действия a из belief b (до наблюдения)."""
    return b @ model.transition[a]


def obs_distribution(model: Pomdp, b: Belief, a: int) -> np.ndarray:
    """Вектор вероятностей всех наблюдений после действия a из belief b."""
    return predicted_states(model, b, a) @ model.obs_fn


def obs_probability(model: Pomdp, b: Belief, a: int, o: int) -> float:
    """
    Вероятность наблюдать o после действия a из belief b:
        Σ_{s,s'} b(s)·δ(s'|s,a)·O(o|s').
    """
    return float(predicted_states(model, b, a) @ model.obs_fn[:, o])


def belief_update(model: Pomdp, b: Belief, a: int, o: int) -> Belief:
    """
    Байесовское обновление belief.

    Параметры:
        model: модель.
        b: текущий belief.
        a: сыгранное действие.
        o: полученное наблюдение.

    Возвращает:
        b'(s') ∝ O(o|s')·Σ_s b(s)·δ(s'|s,a).

    Исключения:
        ZeroProbabilityObservation, если нормировщик ≤ 1e-12.
    """
    unnormalized = predicted_states(model, b, a) * model.obs_fn[:, o]
    norm = float(unnormalized.sum())
    if norm <= ZERO_TOL:
        raise ZeroProbabilityObservation(
            f"observation {model.observations[o]} has probability {norm:.3g} "
            f"after action {model.actions[a]}"
        )
    return unnormalized / norm


def reward_of(model: Pomdp, b: Belief, a: int) -> float:
    """
    Награда за действие a в belief b.

    Благодаря наблюдаемости наград все состояния носителя дают одно и то же
    значение; расхождение означает, что модель нарушает это допущение.
    """
    support = np.flatnonzero(b > ZERO_TOL)
    values = model.reward[support, a]
    if values.size == 0:
        raise ValueError("belief has empty support")
    if float(values.max() - values.min()) > PROB_TOL:
        raise ModelValidationError(
            [f"rewards of action {model.actions[a]} differ inside one belief support: "
             f"{sorted(set(values.tolist()))}"],
            source=model.name,
        )
    return float(values[0])


def discounted_payoff(rewards: Sequence[float], gamma: float, horizon: int) -> float:
    """
    Конечногоризонтная дисконтированная выплата Σ_{i=0}^{N} γ^i·r_i.

    Исключения:
        InsufficientLength, если наград меньше N+1.
    """
    if len(rewards) < horizon + 1:
        raise InsufficientLength(
            f"need {horizon + 1} rewards for horizon {horizon}, got {len(rewards)}"
        )
    total = 0.0
    weight = 1.0
    for i in range(horizon + 1):
        total += weight * float(rewards[i])
        weight *= gamma
    return total


def discounted_sum(rewards: Sequence[float], gamma: float) -> float:
    """Дисконтированная сумма всей последовательности (приближение бесконечного горизонта)."""
    total = 0.0
    weight = 1.0
    for r in rewards:
        total += weight * float(r)
        weight *= gamma
    return total


def reward_spread(model: Pomdp) -> float:
    """|max{0, r_max} − min{0, r_min}|."""
    return abs(max(0.0, model.r_max) - min(0.0, model.r_min))


def horizon_for_epsilon(model: Pomdp, epsilon: float) -> int:
    """
    Минимальный N с γ^N·spread ≤ (1−γ)·ε/2.

    Степень γ накапливается умножением, без логарифма, чтобы возвращаемый N
    гарантированно удовлетворял неравенству.
    """
    gamma = model.discount
    if not 0.0 <= gamma < 1.0:
        raise ValueError(f"discount must be in [0, 1), got {gamma}")
    if not epsilon > 0:
        raise ValueError(f"epsilon must be positive, got {epsilon}")
    bound = (1.0 - gamma) * epsilon / 2.0
    value = reward_spread(model)
    n = 0
    while value > bound:
        value *= gamma
        n += 1
    return n


def shift_threshold(tau: float, reward: float, gamma: float) -> float:
    """Порог для остатка игры после получения награды: (τ − R)/γ."""
    if not gamma > 0:
        raise ValueError(f"gamma must be positive, got {gamma}")
    return (tau - reward) / gamma


def is_safe(payoff: float, threshold: float, tol: float = 1e-9) -> bool:
    """Предикат безопасности payoff ≥ threshold с допуском."""
    return payoff >= threshold - tol


def format_history(model: Pomdp, history: History) -> str:
    """Подпись истории вида «a/o a/o …», пустая история — «ε»."""
    if not history:
        return "ε"
    return " ".join(f"{model.actions[a]}/{model.observations[o]}" for a, o in history)
