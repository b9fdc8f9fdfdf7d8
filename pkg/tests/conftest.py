import sys
from pathlib import Path

import numpy as np
import pytest

SCRIPTS_DIR = Path(__file__).resolve().parent.parent / "scripts"
if str(SCRIPTS_DIR) not in sys.path:
    sys.path.insert(0, str(SCRIPTS_DIR))

from utils.benchmarks import gen_example1, gen_tiger  # noqa: E402
from utils.explicit_tree import INTERNAL  # noqa: E402
from utils.oracle import HistoryGraph  # noqa: E402
from utils.pomdp_model import Pomdp  # noqa: E402


def make_random_pomdp(
    seed: int,
    n_actions: int = 2,
    n_obs: int = 2,
    noisy: bool = False,
    concentration: float = 1.0,
) -> Pomdp:
    """
    Маленький случайный POMDP с наблюдаемыми наградами.

    Состояния разбиты на классы, награда зависит только от класса, а
    наблюдение всегда сообщает класс. При noisy=True к классу добавляется
    зашумлённый бит с вероятностью, зависящей от состояния, так что belief
    внутри класса обновляется нетривиально. Начальный belief сосредоточен в
    одном классе. concentration — параметр распределения Дирихле для строк
    переходов (больше — ровнее вероятности).
    """
    rng = np.random.default_rng(seed)
    n_states = int(rng.integers(2, 4)) + (1 if noisy else 0)
    class_of = rng.integers(n_obs, size=n_states)
    transition = rng.dirichlet(np.full(n_states, concentration), size=(n_actions, n_states))
    reward_by_class = rng.integers(-2, 3, size=(n_obs, n_actions)).astype(float)

    if noisy:
        noise = rng.uniform(0.1, 0.9, size=n_states)
        obs_fn = np.zeros((n_states, 2 * n_obs))
        obs_fn[np.arange(n_states), 2 * class_of] = noise
        obs_fn[np.arange(n_states), 2 * class_of + 1] = 1.0 - noise
        observations = [f"o{c}{bit}" for c in range(n_obs) for bit in "+-"]
    else:
        obs_fn = np.eye(n_obs)[class_of]
        observations = [f"o{c}" for c in range(n_obs)]

    initial = np.zeros(n_states)
    members = np.flatnonzero(class_of == class_of[0])
    initial[members] = rng.dirichlet(np.ones(members.size))

    return Pomdp(
        states=[f"s{i}" for i in range(n_states)],
        actions=[f"a{i}" for i in range(n_actions)],
        observations=observations,
        transition=transition,
        reward=reward_by_class[class_of],
        obs_fn=obs_fn,
        initial_belief=initial,
        discount=float(rng.uniform(0.5, 0.95)),
        name=f"random-{seed}{'-noisy' if noisy else ''}",
    )


def midpoint_threshold(model: Pomdp, horizon: int) -> float:
    """Порог посередине между минимальной и максимальной достижимой выплатой."""
    graph = HistoryGraph(model, 0.0, horizon)
    last = graph.leaf_depth - 1
    weight = model.discount ** last
    pays = [
        node.pay + weight * r
        for node in graph.nodes
        if node.kind == INTERNAL and node.depth == last
        for r in node.rewards
    ]
    return 0.5 * (min(pays) + max(pays))


def single_state_model(rewards, discount=0.5) -> Pomdp:
    """Одно состояние, по действию на каждую награду."""
    n_actions = len(rewards)
    return Pomdp(
        states=["s"],
        actions=[f"a{i}" for i in range(n_actions)],
        observations=["o"],
        transition=np.ones((n_actions, 1, 1)),
        reward=np.array([rewards], dtype=float),
        obs_fn=np.ones((1, 1)),
        initial_belief=np.ones(1),
        discount=discount,
    )


@pytest.fixture
def tiger():
    return gen_tiger().model


@pytest.fixture
def example1():
    return gen_example1().model


@pytest.fixture
def random_pomdp():
    return make_random_pomdp
