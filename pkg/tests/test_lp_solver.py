import numpy as np
import pytest
from scipy.optimize import linprog

from utils.lp_solver import LpProblem, LpStatus, _drive_out_artificials, format_lp, solve


def _textbook() -> LpProblem:
    # max 3x + 2y, x + y ≤ 4, x + 3y ≤ 6, x ≤ 3
    return LpProblem(
        c=[3.0, 2.0],
        g_ge=[[-1.0, -1.0], [-1.0, -3.0], [-1.0, 0.0]],
        h_ge=[-4.0, -6.0, -3.0],
        names=["x", "y"],
    )


class TestSolve:
    def test_textbook(self):
        outcome = solve(_textbook())
        assert outcome.status is LpStatus.OPTIMAL
        assert outcome.x == pytest.approx([3.0, 1.0])
        assert outcome.value == pytest.approx(11.0)

    def test_equality_rows(self):
        outcome = solve(LpProblem(c=[1.0, 2.0, 0.0], a_eq=[[1.0, 1.0, 1.0]], b_eq=[1.0]))
        assert outcome.x == pytest.approx([0.0, 1.0, 0.0])

    def test_lower_bound(self):
        outcome = solve(LpProblem(c=[-1.0], g_ge=[[1.0]], h_ge=[2.0]))
        assert outcome.value == pytest.approx(-2.0)

    def test_infeasible(self):
        outcome = solve(LpProblem(c=[1.0], g_ge=[[1.0], [-1.0]], h_ge=[2.0, -1.0]))
        assert outcome.status is LpStatus.INFEASIBLE
        assert outcome.x is None

    def test_unbounded(self):
        outcome = solve(LpProblem(c=[1.0], g_ge=[[1.0]], h_ge=[1.0]))
        assert outcome.status is LpStatus.UNBOUNDED

    def test_cycling_example(self):
        # классический пример, на котором правило Данцига зацикливается
        problem = LpProblem(
            c=[0.75, -150.0, 0.02, -6.0],
            g_ge=[
                [-0.25, 60.0, 0.04, -9.0],
                [-0.5, 90.0, 0.02, -3.0],
                [0.0, 0.0, -1.0, 0.0],
            ],
            h_ge=[0.0, 0.0, -1.0],
        )
        outcome = solve(problem)
        assert outcome.status is LpStatus.OPTIMAL
        assert outcome.value == pytest.approx(0.05)

    def test_redundant_equalities(self):
        problem = LpProblem(c=[1.0, 1.0], a_eq=[[1.0, 1.0], [2.0, 2.0]], b_eq=[1.0, 2.0])
        outcome = solve(problem)
        assert outcome.value == pytest.approx(1.0)
        assert problem.violation(outcome.x) < 1e-9

    def test_degenerate_row_with_tiny_entry(self):
        problem = LpProblem(c=[0.0, 1.0, 1.0], a_eq=[[1.0, 1.0, 1.0], [0.0, -1e-9, -1.0]], b_eq=[1.0, 0.0])
        outcome = solve(problem)
        assert outcome.status is LpStatus.OPTIMAL
        assert outcome.x == pytest.approx([1.0, 0.0, 0.0], abs=1e-9)
        assert problem.violation(outcome.x) < 1e-9

    @pytest.mark.parametrize("seed", range(15))
    def test_agrees_with_scipy(self, seed):
        rng = np.random.default_rng(seed)
        n, m_ge = int(rng.integers(2, 7)), int(rng.integers(1, 5))
        c = rng.normal(size=n)
        g = rng.uniform(0.1, 1.0, size=(m_ge, n))
        a_eq = rng.uniform(0.1, 1.0, size=(1, n))
        x0 = rng.uniform(0.0, 1.0, size=n)
        h = g @ x0 + rng.uniform(0.0, 1.0, size=m_ge)
        b_eq = a_eq @ x0

        outcome = solve(LpProblem(c=c, a_eq=a_eq, b_eq=b_eq, g_ge=-g, h_ge=-h))
        reference = linprog(-c, A_ub=g, b_ub=h, A_eq=a_eq, b_eq=b_eq, bounds=(0, None), method="highs")
        assert reference.status == 0
        assert outcome.optimal
        assert outcome.value == pytest.approx(-reference.fun, abs=1e-7)


class TestDriveOutArtificials:
    def test_pivots_on_largest_entry(self):
        # строка: 0·x0 + 1e-9·x1 − x2 + a = 0, a в базисе
        tableau = np.array([[0.0, 1e-9, -1.0, 1.0, 0.0], [0.0, 0.0, 0.0, 0.0, 0.0]])
        basis = np.array([3])
        assert _drive_out_artificials(tableau, basis, 3) == [0]
        assert basis[0] == 2
        assert tableau[0, :3] == pytest.approx([0.0, -1e-9, 1.0])

    def test_drops_degenerate_row(self):
        tableau = np.array([[1e-11, -1e-11, 1.0, 0.0], [0.0, 0.0, 0.0, 0.0]])
        basis = np.array([2])
        assert _drive_out_artificials(tableau, basis, 2) == []
        assert basis[0] == 2


class TestProblem:
    def test_size_mismatch(self):
        with pytest.raises(ValueError):
            LpProblem(c=[1.0, 1.0], a_eq=[[1.0, 1.0]], b_eq=[1.0, 2.0])

    def test_non_finite(self):
        with pytest.raises(ValueError):
            LpProblem(c=[np.nan, 1.0])

    def test_names_length(self):
        with pytest.raises(ValueError):
            LpProblem(c=[1.0, 1.0], names=["x"])

    def test_format(self):
        problem = _textbook()
        text = format_lp(problem, solve(problem))
        assert text.startswith("maximize\n  + 3 x + 2 y")
        assert "  - 1 x - 3 y >= -6" in text
        assert "status: optimal" in text
        assert "value: 11" in text
        assert "  x = 3" in text and "  y = 1" in text
