from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Tuple

from utils.pomdp_model import Pomdp
from utils.sampler import RandomSource, sample_state, sample_step


@dataclass
class StepOutcome:
    """
    Результат одного шага в реальной среде.

    Поля:
    - action: сыгранное действие.
    - observation: полученное наблюдение.
    - reward: награда r(s, a) за этот шаг.
    """
    action: int
    observation: int
    reward: float


@dataclass
class SimulatedEnvironment:
    """
    «Реальный» мир для испытания: скрытое состояние разыгрывается из λ и
    дальше эволюционирует по модели. Агент видит только наблюдения и награды.

    Поля:
    - model: модель POMDP.
    - rng: собственный поток случайности среды (не разделяется с агентом).
    - state: текущее скрытое состояние.
    - history: список StepOutcome в порядке шагов.
    """
    model: Pomdp
    rng: RandomSource
    state: int = -1
    history: List[StepOutcome] = field(default_factory=list)

    def __post_init__(self):
        if self.state < 0:
            self.state = sample_state(self.model.initial_belief, self.rng)

    def step(self, action: int) -> Tuple[int, float]:
        """
        Выполняет действие.

        Возвращает:
            (o, R) — наблюдение и награду.
        """
        s_next, o, r = sample_step(self.model, self.state, action, self.rng)
        self.state = s_next
        self.history.append(StepOutcome(action, o, r))
        return o, r

    @property
    def rewards(self) -> List[float]:
        return [h.reward for h in self.history]
