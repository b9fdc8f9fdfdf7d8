"""
Генераторы тестовых моделей: Tiger, лабиринт Hallway с задачами и
ловушками (POMDP и MDP-вариант) и небольшой MDP с развилкой, на котором
рандомизированная политика строго лучше детерминированной.

Награды во всех моделях наблюдаемы: исход (сокровище, тигр, результат
задачи) переводит модель в отдельное состояние с собственным наблюдением,
а награда за исход выплачивается следующим действием.
"""

from __future__ import annotations

import json
import logging
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Tuple, Union

import jsonschema
import numpy as np

from utils.errors import ModelValidationError
from utils.pomdp_model import PROB_TOL, Pomdp, validate

logger = logging.getLogger(__name__)


@dataclass
class GeneratedModel:
    """
    Сгенерированная модель и её происхождение.

    Поля:
    - model: Pomdp.
    - generator: имя генератора.
    - params: параметры генератора.
    """
    model: Pomdp
    generator: str
    params: Dict[str, Any] = field(default_factory=dict)

    @property
    def n_states(self) -> int:
        return self.model.n_states

    def describe(self) -> Dict[str, Any]:
        return {
            "generator": self.generator,
            "params": self.params,
            "states": self.model.n_states,
            "actions": self.model.n_actions,
            "observations": self.model.n_observations,
        }


def _checked(model: Pomdp, generator: str, params: Dict[str, Any]) -> GeneratedModel:
    violations = validate(model)
    if violations:
        raise ModelValidationError(violations, generator)
    logger.debug("%s: %d states, %d observations", generator, model.n_states, model.n_observations)
    return GeneratedModel(model, generator, params)


# ---------------------------------------------------------------- Tiger

def gen_tiger(
    accuracy: float = 0.85,
    listen_cost: float = -1.0,
    treasure: float = 10.0,
    tiger: float = -100.0,
    discount: float = 0.95,
) -> GeneratedModel:
    """
    Классический Tiger с состояниями-исходами.

    Состояния: tiger-left, tiger-right, treasure, eaten.
    Действия: listen, open-left, open-right.
    Наблюдения: hear-left, hear-right, treasure, tiger.

    listen стоит listen_cost и не меняет состояние; открытая дверь ведёт в
    treasure или eaten, и любое следующее действие приносит treasure/tiger
    и возвращает тигра за случайную дверь.
    """
    states = ("tiger-left", "tiger-right", "treasure", "eaten")
    actions = ("listen", "open-left", "open-right")
    observations = ("hear-left", "hear-right", "treasure", "tiger")
    left, right, gold, eaten = range(4)
    listen, open_left, open_right = range(3)

    transition = np.zeros((3, 4, 4))
    transition[listen, left, left] = 1.0
    transition[listen, right, right] = 1.0
    transition[open_left, left, eaten] = 1.0
    transition[open_left, right, gold] = 1.0
    transition[open_right, left, gold] = 1.0
    transition[open_right, right, eaten] = 1.0
    transition[:, gold, left:right + 1] = 0.5
    transition[:, eaten, left:right + 1] = 0.5

    reward = np.zeros((4, 3))
    reward[left, listen] = reward[right, listen] = listen_cost
    reward[gold, :] = treasure
    reward[eaten, :] = tiger

    obs_fn = np.zeros((4, 4))
    obs_fn[left] = [accuracy, 1.0 - accuracy, 0.0, 0.0]
    obs_fn[right] = [1.0 - accuracy, accuracy, 0.0, 0.0]
    obs_fn[gold, 2] = 1.0
    obs_fn[eaten, 3] = 1.0

    model = Pomdp(
        states, actions, observations, transition, reward, obs_fn,
        np.array([0.5, 0.5, 0.0, 0.0]), discount, name="tiger",
    )
    params = dict(accuracy=accuracy, listen_cost=listen_cost, treasure=treasure, tiger=tiger, discount=discount)
    return _checked(model, "tiger", params)


# ---------------------------------------------------------------- Example MDP

def gen_example1(discount: float = 0.5) -> GeneratedModel:
    """
    Полностью наблюдаемый MDP с развилкой.

    Из s с вероятностью 1/2 попадаем в t или u. Из u — в петлю y (−50).
    В t действие a ведёт в петлю v (10), действие b — с вероятностью 1/2 в
    петлю x (−100) и с вероятностью 1/2 в петлю w (10000).
    """
    states = ("s", "t", "u", "v", "w", "x", "y")
    actions = ("a", "b")
    s, t, u, v, w, x, y = range(7)
    a, b = range(2)

    transition = np.zeros((2, 7, 7))
    transition[:, s, t] = 0.5
    transition[:, s, u] = 0.5
    transition[:, u, y] = 1.0
    transition[a, t, v] = 1.0
    transition[b, t, x] = 0.5
    transition[b, t, w] = 0.5
    for loop in (v, w, x, y):
        transition[:, loop, loop] = 1.0

    reward = np.zeros((7, 2))
    reward[v, :] = 10.0
    reward[w, :] = 10000.0
    reward[x, :] = -100.0
    reward[y, :] = -50.0

    initial = np.zeros(7)
    initial[s] = 1.0
    model = Pomdp(states, actions, states, transition, reward, np.eye(7), initial, discount, name="example1")
    return _checked(model, "example1", {"discount": discount})


# ---------------------------------------------------------------- Hallway

HEADINGS = "NESW"
_MOVES = ((-1, 0), (0, 1), (1, 0), (0, -1))
FORWARD, TURN_LEFT, TURN_RIGHT = range(3)

HALLWAY_SCHEMA = {
    "type": "object",
    "required": ["grid"],
    "properties": {
        "grid": {"type": "array", "minItems": 1, "items": {"type": "string", "pattern": "^[#.ST1-9]+$"}},
        "tasks": {
            "type": "object",
            "patternProperties": {
                "^[1-9]$": {
                    "type": "object",
                    "required": ["reward", "penalty", "p_good"],
                    "properties": {
                        "reward": {"type": "number"},
                        "penalty": {"type": "number"},
                        "p_good": {"type": "number", "minimum": 0, "maximum": 1},
                    },
                    "additionalProperties": False,
                }
            },
            "additionalProperties": False,
        },
        "trap_spin": {"type": "array", "items": {"type": "number", "minimum": 0}, "minItems": 4, "maxItems": 4},
        "discount": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
    },
    "additionalProperties": False,
}


@dataclass(frozen=True)
class TaskParams:
    reward: float = 10.0
    penalty: float = -10.0
    p_good: float = 0.5


@dataclass
class HallwaySpec:
    """
    Описание лабиринта.

    Поля:
    - grid: строки карты ('#' стена, '.' проход, 'S' старт, '1'..'9' задача, 'T' ловушка).
    - tasks: параметры задач по типу (цифре); отсутствующие типы получают TaskParams().
    - trap_spin: вероятности поворота на 0, 1, 2, 3 четверти по часовой стрелке.
    - discount: γ.
    """
    grid: List[str]
    tasks: Dict[int, TaskParams] = field(default_factory=dict)
    trap_spin: Tuple[float, float, float, float] = (0.25, 0.25, 0.25, 0.25)
    discount: float = 0.95

    def __post_init__(self):
        problems = []
        widths = {len(row) for row in self.grid}
        if not self.grid or len(widths) != 1:
            problems.append("map must be a non-empty rectangle")
        starts = sum(row.count("S") for row in self.grid)
        if starts != 1:
            problems.append(f"map must contain exactly one 'S', found {starts}")
        bad = sorted({ch for row in self.grid for ch in row} - set("#.ST123456789"))
        if bad:
            problems.append(f"unknown map symbols {bad}")
        for kind, params in self.tasks.items():
            if not 0.0 <= params.p_good <= 1.0:
                problems.append(f"task {kind}: p_good {params.p_good} outside [0, 1]")
        spin = np.asarray(self.trap_spin, dtype=float)
        if spin.shape != (4,) or (spin < 0).any() or abs(spin.sum() - 1.0) > PROB_TOL:
            problems.append("trap_spin must be a distribution over 4 quarter turns")
        if not 0.0 < self.discount < 1.0:
            problems.append(f"discount {self.discount} outside (0, 1)")
        if problems:
            raise ModelValidationError(problems, "hallway map")

    @property
    def height(self) -> int:
        return len(self.grid)

    @property
    def width(self) -> int:
        return len(self.grid[0])

    def cell(self, row: int, col: int) -> str:
        if 0 <= row < self.height and 0 <= col < self.width:
            return self.grid[row][col]
        return "#"

    def start(self) -> Tuple[int, int]:
        for r, line in enumerate(self.grid):
            if "S" in line:
                return r, line.index("S")
        raise ModelValidationError(["no start cell"], "hallway map")

    def task_cells(self) -> List[Tuple[Tuple[int, int], int]]:
        """Клетки задач (в порядке обхода карты) и их типы."""
        return [
            ((r, c), int(ch))
            for r, line in enumerate(self.grid)
            for c, ch in enumerate(line)
            if ch.isdigit()
        ]

    def task(self, kind: int) -> TaskParams:
        return self.tasks.get(kind, TaskParams())


DEFAULT_HALLWAY = HallwaySpec(
    grid=["###", "S.1", "###"],
    tasks={1: TaskParams(reward=10.0, penalty=-10.0, p_good=0.5)},
)


def load_hallway_spec(path: Union[str, Path]) -> HallwaySpec:
    """
    Читает карту из JSON и проверяет её по HALLWAY_SCHEMA.

    Исключения:
        ModelValidationError — файл не соответствует схеме или карта некорректна.
    """
    with open(path, "r", encoding="utf-8") as f:
        data = json.load(f)
    try:
        jsonschema.validate(data, HALLWAY_SCHEMA)
    except jsonschema.ValidationError as e:
        where = "/".join(str(p) for p in e.absolute_path) or "<root>"
        raise ModelValidationError([f"{where}: {e.message}"], str(path)) from e

    tasks = {int(k): TaskParams(**v) for k, v in data.get("tasks", {}).items()}
    return HallwaySpec(
        grid=list(data["grid"]),
        tasks=tasks,
        trap_spin=tuple(data.get("trap_spin", (0.25, 0.25, 0.25, 0.25))),
        discount=data.get("discount", 0.95),
    )


# Состояние лабиринта: (строка, столбец, курс, маска оставшихся задач, исход)
# исход: 0 если задачи не было, иначе 1 + 2·(номер типа в списке) + (0 удача / 1 неудача)
HallState = Tuple[int, int, int, int, int]


def _wall_mask(spec: HallwaySpec, row: int, col: int, heading: int) -> int:
    """Биты стен: 1 — впереди, 2 — справа, 4 — сзади, 8 — слева."""
    mask = 0
    for bit in range(4):
        dr, dc = _MOVES[(heading + bit) % 4]
        if spec.cell(row + dr, col + dc) == "#":
            mask |= 1 << bit
    return mask


def gen_hallway(spec: HallwaySpec = DEFAULT_HALLWAY, observable: bool = False) -> GeneratedModel:
    """
    Робот в лабиринте: не знает курса и координат, видит стены вокруг.

    Параметры:
        spec: HallwaySpec.
        observable: True — MDP-вариант с наблюдением полного состояния.

    Описание:
        действия forward, turn-left, turn-right. Вход в клетку с задачей
        решает её (награда с вероятностью p_good, иначе штраф) и убирает
        задачу; исход виден в наблюдении, а награда за него выплачивается
        следующим действием. Вход в ловушку поворачивает робота на случайное
        число четвертей по trap_spin. Строятся только состояния, достижимые
        из начального belief (старт, любой курс, все задачи на месте).
    """
    tasks = spec.task_cells()
    kinds = sorted({k for _, k in tasks})
    kind_slot = {k: i for i, k in enumerate(kinds)}
    task_at = {cell: (bit, kind) for bit, (cell, kind) in enumerate(tasks)}
    full_mask = (1 << len(tasks)) - 1
    spin = np.asarray(spec.trap_spin, dtype=float)

    def _outcome_reward(outcome: int) -> float:
        if outcome == 0:
            return 0.0
        slot, bad = divmod(outcome - 1, 2)
        params = spec.task(kinds[slot])
        return params.penalty if bad else params.reward

    def _successors(state: HallState, action: int) -> List[Tuple[HallState, float]]:
        row, col, heading, mask, _ = state
        if action == TURN_LEFT:
            return [((row, col, (heading - 1) % 4, mask, 0), 1.0)]
        if action == TURN_RIGHT:
            return [((row, col, (heading + 1) % 4, mask, 0), 1.0)]

        dr, dc = _MOVES[heading]
        if spec.cell(row + dr, col + dc) == "#":
            return [((row, col, heading, mask, 0), 1.0)]
        row, col = row + dr, col + dc

        results: List[Tuple[HallState, float]] = []
        headings = [(heading, 1.0)]
        if spec.cell(row, col) == "T":
            headings = [((heading + q) % 4, float(p)) for q, p in enumerate(spin) if p > 0]
        task = task_at.get((row, col))
        for h, ph in headings:
            if task is not None and mask & (1 << task[0]):
                bit, kind = task
                params = spec.task(kind)
                base = 1 + 2 * kind_slot[kind]
                rest = mask & ~(1 << bit)
                if params.p_good > 0:
                    results.append(((row, col, h, rest, base), ph * params.p_good))
                if params.p_good < 1:
                    results.append(((row, col, h, rest, base + 1), ph * (1.0 - params.p_good)))
            else:
                results.append(((row, col, h, mask, 0), ph))
        return results

    start_row, start_col = spec.start()
    initial = [(start_row, start_col, h, full_mask, 0) for h in range(4)]

    index: Dict[HallState, int] = {}
    order: List[HallState] = []
    queue = deque()
    for s in initial:
        index[s] = len(order)
        order.append(s)
        queue.append(s)
    edges: Dict[Tuple[int, int], List[Tuple[HallState, float]]] = {}
    while queue:
        s = queue.popleft()
        for a in range(3):
            succ = _successors(s, a)
            edges[(index[s], a)] = succ
            for nxt, _ in succ:
                if nxt not in index:
                    index[nxt] = len(order)
                    order.append(nxt)
                    queue.append(nxt)

    n = len(order)
    transition = np.zeros((3, n, n))
    for (i, a), succ in edges.items():
        for nxt, p in succ:
            transition[a, i, index[nxt]] += p

    reward = np.array([[_outcome_reward(s[4])] * 3 for s in order])

    def _outcome_label(outcome: int) -> str:
        if outcome == 0:
            return "none"
        slot, bad = divmod(outcome - 1, 2)
        return f"task{kinds[slot]}-{'bad' if bad else 'good'}"

    state_names = tuple(
        f"r{r}c{c}{HEADINGS[h]}-m{m:0{max(1, len(tasks))}b}-{_outcome_label(o)}"
        for r, c, h, m, o in order
    )
    if observable:
        observations = state_names
        obs_fn = np.eye(n)
    else:
        labels = [f"w{_wall_mask(spec, r, c, h):04b}-{_outcome_label(o)}" for r, c, h, _, o in order]
        observations = tuple(dict.fromkeys(labels))
        obs_index = {label: i for i, label in enumerate(observations)}
        obs_fn = np.zeros((n, len(observations)))
        for i, label in enumerate(labels):
            obs_fn[i, obs_index[label]] = 1.0

    belief = np.zeros(n)
    belief[: len(initial)] = 1.0 / len(initial)

    model = Pomdp(
        state_names, ("forward", "turn-left", "turn-right"), observations,
        transition, reward, obs_fn, belief, spec.discount,
        name="hallway-mdp" if observable else "hallway",
    )
    params = {
        "grid": list(spec.grid),
        "tasks": {k: vars(spec.task(k)).copy() for k in kinds},
        "trap_spin": [float(p) for p in spin],
        "discount": spec.discount,
        "observable": observable,
    }
    return _checked(model, "hallway-mdp" if observable else "hallway", params)


BENCHMARKS: Dict[str, Callable[[], GeneratedModel]] = {
    "tiger": gen_tiger,
    "example1": gen_example1,
    "hallway": lambda: gen_hallway(DEFAULT_HALLWAY),
    "hallway-mdp": lambda: gen_hallway(DEFAULT_HALLWAY, observable=True),
}


def get_benchmark(name: str, hallway_map: Optional[Union[str, Path]] = None) -> GeneratedModel:
    """
    Модель по имени.

    Для "hallway" и "hallway-mdp" можно передать путь к JSON-карте.
    """
    if name in ("hallway", "hallway-mdp") and hallway_map is not None:
        return gen_hallway(load_hallway_spec(hallway_map), observable=name == "hallway-mdp")
    try:
        factory = BENCHMARKS[name]
    except KeyError:
        raise ValueError(f"unknown benchmark {name!r}, choose from {sorted(BENCHMARKS)}") from None
    return factory()
