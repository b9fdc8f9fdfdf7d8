"""
Исключения планировщика.

Все ошибки библиотеки наследуются от RamcpError, чтобы скрипты запуска могли
перехватывать их одним блоком и возвращать корректный код выхода.
"""

from __future__ import annotations

from typing import List, Optional


class RamcpError(Exception):
    """Базовая ошибка планировщика."""


class ModelValidationError(RamcpError):
    """
    Модель POMDP не прошла проверку.

    Атрибуты:
        violations: список человекочитаемых описаний нарушений.
    """

    def __init__(self, violations: List[str], source: Optional[str] = None):
        self.violations = list(violations)
        self.source = source
        where = f" ({source})" if source else ""
        lines = "\n".join(f"  - {v}" for v in self.violations)
        super().__init__(f"model validation failed{where}:\n{lines}")


class ZeroProbabilityObservation(RamcpError):
    """Наблюдение имеет нулевую вероятность при данном belief и действии."""


class InsufficientLength(RamcpError):
    """Последовательность наград короче, чем требует горизонт."""


class BeliefUpdateFailure(RamcpError):
    """Префикс безопасной истории требует обусловливания на невозможное наблюдение."""


class NumericalFailure(RamcpError):
    """Симплекс-метод не сошёлся за допустимое число шагов."""


class InfeasibleConstraint(RamcpError):
    """Ограничение на риск в constrained MDP недостижимо."""


class SizeGuardExceeded(RamcpError):
    """Точный оракул превысил допустимый размер графа историй."""


class BudgetFormatError(RamcpError, ValueError):
    """Строка бюджета не соответствует формату "<N>ms" или "<N>sims"."""
