"""
Источники случайности и генеративная модель для симуляций.

RandomSource оборачивает numpy Generator на счётчиковом генераторе Philox.
Дочерние потоки получаются из того же seed через spawn_key
(испытание, шаг, номер вызова), поэтому результат испытания не зависит от
того, в каком процессе и в каком порядке оно выполнялось.
"""

from __future__ import annotations

from typing import Tuple

import numpy as np

from utils.pomdp_model import Belief, Pomdp


class RandomSource:
    """
    Детерминированный поток случайных чисел.

    Атрибуты:
        seed: базовый seed (64-битное целое).
        path: кортеж индексов потока (например (trial, step, call)).
    """

    def __init__(self, seed: int, path: Tuple[int, ...] = ()):
        self.seed = int(seed)
        self.path = tuple(int(p) for p in path)
        seq = np.random.SeedSequence(self.seed, spawn_key=self.path)
        self.generator = np.random.Generator(np.random.Philox(seq))

    def child(self, *indices: int) -> "RandomSource":
        """Независимый поток для (path + indices)."""
        return RandomSource(self.seed, self.path + tuple(indices))

    def random(self) -> float:
        return float(self.generator.random())

    def integers(self, high: int) -> int:
        """Равномерное целое из [0, high)."""
        return int(self.generator.integers(high))

    def categorical(self, cdf: np.ndarray) -> int:
        """
        Индекс по кумулятивному распределению.

        Порог масштабируется на cdf[-1], поэтому накопленная погрешность
        суммирования не приводит к выходу за последний индекс.
        """
        u = self.generator.random() * cdf[-1]
        idx = int(np.searchsorted(cdf, u, side="right"))
        return min(idx, len(cdf) - 1)

    def __repr__(self) -> str:
        return f"RandomSource(seed={self.seed}, path={self.path})"


def sample_state(b: Belief, rng: RandomSource) -> int:
    """Состояние, выбранное с вероятностью b(s)."""
    return rng.categorical(np.cumsum(b))


def sample_step(model: Pomdp, s: int, a: int, rng: RandomSource) -> Tuple[int, int, float]:
    """
    Один шаг генеративной модели.

    Возвращает:
        (s', o, r): s' ~ δ(·|s,a), o ~ O(·|s'), r = r(s,a).
    """
    s_next = rng.categorical(model.transition_cdf[a, s])
    o = rng.categorical(model.obs_cdf[s_next])
    return s_next, o, float(model.reward[s, a])
