"""
Плотный двухфазный симплекс-метод.

Задача:  max c·x  при  A_eq·x = b_eq,  G·x ≥ h,  x ≥ 0.

Фаза I минимизирует сумму искусственных переменных, фаза II оптимизирует
исходную цель на найденном базисе. Входящая переменная выбирается по
правилу Данцига; после 2·(rows + cols) поворотов включается правило Бланда,
исключающее зацикливание.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from enum import Enum
from typing import List, Optional, Sequence, Tuple

import numpy as np

from utils.errors import NumericalFailure

logger = logging.getLogger(__name__)

FEASIBILITY_TOL = 1e-7  # допуск на выполнение ограничений
PIVOT_TOL = 1e-10  # меньшие элементы не используются как ведущие
OPTIMALITY_TOL = 1e-9  # приведённая стоимость выше -tol считается неотрицательной
BLAND_EXTRA_FACTOR = 50  # сколько (rows + cols) поворотов разрешено в режиме Бланда


class LpStatus(Enum):
    OPTIMAL = "optimal"
    INFEASIBLE = "infeasible"
    UNBOUNDED = "unbounded"


def _matrix(values, n: int) -> np.ndarray:
    if values is None:
        return np.zeros((0, n))
    arr = np.asarray(values, dtype=float)
    if arr.size == 0:
        return np.zeros((0, n))
    return arr.reshape(-1, n)


def _vector(values, m: int) -> np.ndarray:
    if values is None:
        return np.zeros(m)
    return np.asarray(values, dtype=float).reshape(-1)


@dataclass
class LpProblem:
    """
    Линейная программа в форме максимизации с неотрицательными переменными.

    Поля:
    - c: коэффициенты цели.
    - a_eq, b_eq: ограничения-равенства A·x = b.
    - g_ge, h_ge: ограничения G·x ≥ h.
    - names: имена переменных (для дампа).
    """
    c: np.ndarray
    a_eq: Optional[np.ndarray] = None
    b_eq: Optional[np.ndarray] = None
    g_ge: Optional[np.ndarray] = None
    h_ge: Optional[np.ndarray] = None
    names: Optional[List[str]] = None

    def __post_init__(self):
        self.c = np.asarray(self.c, dtype=float).reshape(-1)
        n = self.c.size
        self.a_eq = _matrix(self.a_eq, n)
        self.g_ge = _matrix(self.g_ge, n)
        self.b_eq = _vector(self.b_eq, self.a_eq.shape[0])
        self.h_ge = _vector(self.h_ge, self.g_ge.shape[0])
        if self.b_eq.size != self.a_eq.shape[0]:
            raise ValueError(f"b_eq has {self.b_eq.size} entries for {self.a_eq.shape[0]} rows")
        if self.h_ge.size != self.g_ge.shape[0]:
            raise ValueError(f"h_ge has {self.h_ge.size} entries for {self.g_ge.shape[0]} rows")
        for name in ("c", "a_eq", "b_eq", "g_ge", "h_ge"):
            if not np.isfinite(getattr(self, name)).all():
                raise ValueError(f"{name} has non-finite coefficients")
        if self.names is not None and len(self.names) != n:
            raise ValueError("names must match the number of variables")

    @property
    def n_vars(self) -> int:
        return self.c.size

    def violation(self, x: np.ndarray) -> float:
        """Максимальное нарушение ограничений в точке x."""
        worst = float(max(0.0, -x.min())) if x.size else 0.0
        if self.a_eq.shape[0]:
            worst = max(worst, float(np.abs(self.a_eq @ x - self.b_eq).max()))
        if self.g_ge.shape[0]:
            worst = max(worst, float(np.max(self.h_ge - self.g_ge @ x)))
        return worst


@dataclass
class LpOutcome:
    """
    Результат решения.

    Поля:
    - status: OPTIMAL, INFEASIBLE или UNBOUNDED.
    - x: оптимальная базисная точка (только для OPTIMAL).
    - value: значение цели (только для OPTIMAL).
    - pivots: число выполненных поворотов.
    """
    status: LpStatus
    x: Optional[np.ndarray] = None
    value: Optional[float] = None
    pivots: int = 0

    @property
    def optimal(self) -> bool:
        return self.status is LpStatus.OPTIMAL


def _pivot(tableau: np.ndarray, row: int, col: int) -> None:
    tableau[row] /= tableau[row, col]
    factors = tableau[:, col].copy()
    factors[row] = 0.0
    tableau -= np.outer(factors, tableau[row])


def _simplex_core(
    tableau: np.ndarray,
    basis: np.ndarray,
    allowed: np.ndarray,
    pivots: int,
) -> Tuple[LpStatus, int]:
    """
    Итерации симплекс-метода на таблице с последней строкой приведённых
    стоимостей (минимизация) и последним столбцом правых частей.
    """
    m = tableau.shape[0] - 1
    n_cols = tableau.shape[1] - 1
    bland_after = pivots + 2 * (m + n_cols)
    limit = bland_after + BLAND_EXTRA_FACTOR * (m + n_cols)

    while True:
        reduced = tableau[-1, :-1]
        candidates = np.flatnonzero(allowed & (reduced < -OPTIMALITY_TOL))
        if candidates.size == 0:
            return LpStatus.OPTIMAL, pivots

        bland = pivots >= bland_after
        if bland:
            col = int(candidates[0])
        else:
            col = int(candidates[np.argmin(reduced[candidates])])

        column = tableau[:m, col]
        positive = np.flatnonzero(column > PIVOT_TOL)
        if positive.size == 0:
            return LpStatus.UNBOUNDED, pivots

        ratios = tableau[positive, -1] / column[positive]
        best = ratios.min()
        ties = positive[ratios <= best + PIVOT_TOL]
        if bland:
            row = int(ties[np.argmin(basis[ties])])
        else:
            row = int(ties[0])

        _pivot(tableau, row, col)
        basis[row] = col
        pivots += 1
        if pivots > limit:
            raise NumericalFailure(f"simplex did not terminate after {pivots} pivots")


def _drive_out_artificials(tableau: np.ndarray, basis: np.ndarray, n_std: int) -> List[int]:
    """
    Выводит из базиса искусственные переменные, оставшиеся после фазы I.

    Ведущий элемент — наибольший по модулю в строке среди исходных столбцов;
    строки, где все такие элементы не больше 1e-10, вырождены и отбрасываются.

    Возвращает:
        номера оставляемых строк.
    """
    keep_rows = []
    for row in range(basis.size):
        if basis[row] >= n_std:
            row_entries = np.abs(tableau[row, :n_std])
            col = int(np.argmax(row_entries))
            if row_entries[col] <= PIVOT_TOL:
                continue
            _pivot(tableau, row, col)
            basis[row] = col
        keep_rows.append(row)
    return keep_rows


def solve(problem: LpProblem) -> LpOutcome:
    """
    Решает LpProblem двухфазным симплексом.

    Возвращает:
        LpOutcome; оптимальная точка удовлетворяет ограничениям с точностью 1e-7.

    Исключения:
        NumericalFailure — слишком много поворотов (признак ошибки в данных).
    """
    n = problem.n_vars
    m_eq = problem.a_eq.shape[0]
    m_ge = problem.g_ge.shape[0]
    m = m_eq + m_ge

    # Стандартная форма: [A_eq 0; G −I]·[x; s] = [b; h]
    a_std = np.zeros((m, n + m_ge))
    a_std[:m_eq, :n] = problem.a_eq
    a_std[m_eq:, :n] = problem.g_ge
    a_std[m_eq:, n:] = -np.eye(m_ge)
    rhs = np.concatenate([problem.b_eq, problem.h_ge])

    negative = rhs < 0
    a_std[negative] *= -1.0
    rhs[negative] *= -1.0

    n_std = n + m_ge
    n_cols = n_std + m
    tableau = np.zeros((m + 1, n_cols + 1))
    tableau[:m, :n_std] = a_std
    tableau[:m, n_std:n_cols] = np.eye(m)
    tableau[:m, -1] = rhs
    basis = np.arange(n_std, n_cols)

    # Фаза I: min Σ искусственных
    tableau[-1, :n_std] = -a_std.sum(axis=0)
    tableau[-1, -1] = -rhs.sum()
    allowed = np.ones(n_cols, dtype=bool)
    status, pivots = _simplex_core(tableau, basis, allowed, 0)
    phase_one = -tableau[-1, -1]
    if phase_one > FEASIBILITY_TOL:
        logger.debug("LP infeasible: phase I optimum %.3g", phase_one)
        return LpOutcome(LpStatus.INFEASIBLE, pivots=pivots)

    # Выводим искусственные переменные из базиса, вырожденные строки удаляем
    artificial = int(np.count_nonzero(basis >= n_std))
    keep_rows = _drive_out_artificials(tableau, basis, n_std)
    pivots += artificial - (m - len(keep_rows))

    tableau = np.vstack([tableau[keep_rows][:, list(range(n_std)) + [n_cols]], np.zeros((1, n_std + 1))])
    basis = basis[keep_rows]

    # Фаза II: min −c·x
    cost = np.zeros(n_std)
    cost[:n] = -problem.c
    body = tableau[:-1]
    tableau[-1, :-1] = cost - cost[basis] @ body[:, :-1]
    tableau[-1, -1] = -(cost[basis] @ body[:, -1])
    status, pivots = _simplex_core(tableau, basis, np.ones(n_std, dtype=bool), pivots)
    if status is LpStatus.UNBOUNDED:
        return LpOutcome(LpStatus.UNBOUNDED, pivots=pivots)

    solution = np.zeros(n_std)
    solution[basis] = np.maximum(tableau[:-1, -1], 0.0)
    x = solution[:n]
    value = float(problem.c @ x)
    logger.debug("LP solved: %d vars, %d rows, %d pivots, value %.10g", n, m, pivots, value)
    return LpOutcome(LpStatus.OPTIMAL, x=x, value=value, pivots=pivots)


def _term(coef: float, name: str) -> str:
    sign = "-" if coef < 0 else "+"
    return f"{sign} {abs(coef):.6g} {name}"


def format_lp(problem: LpProblem, outcome: Optional[LpOutcome] = None) -> str:
    """Текстовый дамп: цель, ограничения и (если есть) решение."""
    names: Sequence[str] = problem.names or [f"x{j}" for j in range(problem.n_vars)]

    def _row(coefs: np.ndarray) -> str:
        nz = np.flatnonzero(coefs)
        return " ".join(_term(float(coefs[j]), names[j]) for j in nz) or "0"

    lines = ["maximize", f"  {_row(problem.c)}", "subject to"]
    for i in range(problem.a_eq.shape[0]):
        lines.append(f"  {_row(problem.a_eq[i])} = {problem.b_eq[i]:.6g}")
    for i in range(problem.g_ge.shape[0]):
        lines.append(f"  {_row(problem.g_ge[i])} >= {problem.h_ge[i]:.6g}")
    if outcome is not None:
        lines.append(f"status: {outcome.status.value}")
        if outcome.optimal:
            lines.append(f"value: {outcome.value:.10g}")
            for j in np.flatnonzero(outcome.x > FEASIBILITY_TOL):
                lines.append(f"  {names[j]} = {outcome.x[j]:.10g}")
    return "\n".join(lines)
