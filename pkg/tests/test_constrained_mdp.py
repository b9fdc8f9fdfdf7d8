import time

import numpy as np
import pytest

from conftest import make_random_pomdp, midpoint_threshold, single_state_model
from utils.constrained_mdp import (
    SINK,
    ActionDecision,
    DecisionMode,
    LpEngine,
    build,
    expected_penalty,
    risk_min_fallback,
    solve_decision,
    unconstrained_decision,
)
from utils.errors import InfeasibleConstraint
from utils.explicit_tree import INTERNAL, SAFE, ExplicitTree
from utils.oracle import exact_eopg, exact_min_risk, seeded_trees
from utils.pomcp_search import SearchNode, SearchTree
from utils.ramcp_agent import BudgetLimit, RamcpAgent
from utils.sampler import RandomSource

S, T, U, V, W, X, Y = range(7)
A, B = range(2)


@pytest.fixture
def rooted_at_t(example1):
    """
    Example1 с горизонтом 3 после первого хода (a, t): порог 2, два
    безопасных продолжения, а у x известна точная ценность −150.
    """
    belief = np.eye(7)[T]
    explicit = ExplicitTree.empty(example1, belief, 1, 4)
    search = SearchTree(example1.n_actions)
    explicit.update_trees(((A, V), (A, V), (A, V)), [0.0, 10.0, 10.0], search)
    explicit.update_trees(((B, W), (A, W), (A, W)), [0.0, 10000.0, 10000.0], search)
    search.root.add_child((B, X)).update(A, -150.0)
    return explicit, search


class TestBuild:
    def test_single_decision(self):
        model = single_state_model([1.0, 3.0], discount=0.5)
        explicit = ExplicitTree.empty(model, model.initial_belief, 0, 1)
        explicit.update_trees(((1, 0),), [3.0])
        mdp = build(explicit.closure(), None)
        assert mdp.node_kind == [INTERNAL, SAFE, SINK]
        assert mdp.sink == 2
        assert mdp.leaves() == [1]
        assert mdp.penalty(1) == pytest.approx(2.0)
        assert mdp.penalty(0) == 0.0
        escape = [p for p in mdp.pairs if p.escape_value is not None]
        assert [(p.node, p.action, p.escape_value) for p in escape] == [(0, 0, 0.0)]

        decision = solve_decision(mdp, 0.0)
        assert decision.d_pi == {1: pytest.approx(1.0)}
        assert decision.value == pytest.approx(3.0)

    def test_without_escape(self, rooted_at_t):
        explicit, search = rooted_at_t
        mdp = build(explicit.closure(), search, escape=False)
        assert all(p.escape_value is None for p in mdp.pairs)

    def test_frontier_terminal_value(self, rooted_at_t):
        explicit, search = rooted_at_t
        mdp = build(explicit.closure(), search)
        x_node = mdp.labels.index("b/x")
        assert mdp.terminal[x_node] == pytest.approx(-150.0)
        assert mdp.node_u[x_node] == 1.0
        assert mdp.depth_offset == 1 and mdp.leaf_depth == 4

    def test_penalty_cancels_discount(self, rooted_at_t):
        explicit, search = rooted_at_t
        mdp = build(explicit.closure(), search)
        safe = [i for i, kind in enumerate(mdp.node_kind) if kind == SAFE]
        assert mdp.penalty(safe[0]) == pytest.approx(8.0)
        assert expected_penalty(mdp, {safe[0]: 0.25, safe[1]: 0.5}) == pytest.approx(0.75)


class TestSolveDecision:
    def test_mixes_actions(self, rooted_at_t):
        explicit, search = rooted_at_t
        assert explicit.root.u == 0.0
        decision = solve_decision(build(explicit.closure(), search), 1.0 / 3.0)
        assert decision.mode is DecisionMode.CONSTRAINED
        assert decision.d_pi == {A: pytest.approx(1 / 3), B: pytest.approx(2 / 3)}
        assert decision.risk_for(B, W) == pytest.approx(0.0)
        assert decision.risk_for(B, X) == pytest.approx(1.0)
        assert decision.risk_for(A, V) == pytest.approx(0.0)
        assert decision.value == pytest.approx(7.5 / 3 + 2 * 3712.5 / 3)

    def test_law_of_total_risk(self, rooted_at_t):
        explicit, search = rooted_at_t
        mdp = build(explicit.closure(), search)
        rbound = 0.2
        decision = solve_decision(mdp, rbound)
        total = 0.0
        for pair in mdp.pairs:
            if pair.node != mdp.root or pair.action not in decision.d_pi:
                continue
            for _, o, p in pair.successors:
                total += decision.d_pi[pair.action] * p * decision.risk_for(pair.action, o)
        assert total <= rbound + 1e-9

    def test_no_risk_limit(self, rooted_at_t):
        explicit, search = rooted_at_t
        decision = solve_decision(build(explicit.closure(), search), 1.0)
        assert decision.d_pi == {B: pytest.approx(1.0)}

    def test_infeasible(self, example1):
        explicit, search = seeded_trees(example1, 1.0, 3)
        assert explicit.root.u == pytest.approx(0.5)
        with pytest.raises(InfeasibleConstraint):
            solve_decision(build(explicit.closure(), search), 0.4)

    def test_rbound_range(self, rooted_at_t):
        explicit, search = rooted_at_t
        with pytest.raises(ValueError):
            solve_decision(build(explicit.closure(), search), 1.5)

    def test_seeded_tree_value(self, example1):
        explicit, search = seeded_trees(example1, 1.0, 3)
        decision = solve_decision(build(explicit.closure(), search), 2.0 / 3.0)
        assert decision.value == pytest.approx(610.0)
        assert sum(decision.d_pi.values()) == pytest.approx(1.0)

    @pytest.mark.parametrize("noisy", [False, True])
    @pytest.mark.parametrize("seed", range(20))
    def test_matches_exact_solver(self, seed, noisy):
        model = make_random_pomdp(seed, noisy=noisy)
        horizon = 1 + seed % (3 if noisy else 4)
        tau = midpoint_threshold(model, horizon)
        explicit, search = seeded_trees(model, tau, horizon)
        u = explicit.root.u
        assert u == pytest.approx(exact_min_risk(model, tau, horizon), abs=1e-9)
        assert u < 1.0
        alpha = u + 0.5 * (1.0 - u)
        reference = exact_eopg(model, tau, alpha, horizon)
        assert reference.feasible
        mdp = build(explicit.closure(), search)
        for engine in LpEngine:
            decision = solve_decision(mdp, alpha, engine=engine)
            assert decision.value == pytest.approx(reference.value, rel=1e-6, abs=1e-6)


class TestTreeEngine:
    @pytest.mark.parametrize("rbound", [0.0, 0.2, 1.0 / 3.0, 0.5, 1.0])
    def test_agrees_with_simplex(self, rooted_at_t, rbound):
        explicit, search = rooted_at_t
        mdp = build(explicit.closure(), search)
        tree = solve_decision(mdp, rbound, engine=LpEngine.TREE)
        simplex = solve_decision(mdp, rbound, engine=LpEngine.SIMPLEX)
        assert tree.value == pytest.approx(simplex.value, rel=1e-9, abs=1e-9)
        assert sum(tree.d_pi.values()) == pytest.approx(1.0)

    @pytest.mark.parametrize("seed", range(10))
    def test_respects_risk_bound(self, seed):
        model = make_random_pomdp(seed, noisy=True)
        horizon = 1 + seed % 3
        tau = midpoint_threshold(model, horizon)
        explicit, search = seeded_trees(model, tau, horizon)
        mdp = build(explicit.closure(), search)
        rbound = explicit.root.u + 0.3 * (1.0 - explicit.root.u)
        decision = solve_decision(mdp, rbound)
        total = 0.0
        for pair in mdp.pairs:
            if pair.node != mdp.root or pair.action not in decision.d_pi:
                continue
            for _, o, p in pair.successors:
                total += decision.d_pi[pair.action] * p * decision.risk_for(pair.action, o)
        assert total <= rbound + 1e-9

    def test_unconstrained_optimum_is_deterministic(self, rooted_at_t):
        explicit, search = rooted_at_t
        mdp = build(explicit.closure(), search)
        decision = solve_decision(mdp, 1.0)
        assert len(decision.d_pi) == 1

    def test_infeasible(self, example1):
        explicit, search = seeded_trees(example1, 1.0, 3)
        mdp = build(explicit.closure(), search)
        for engine in LpEngine:
            with pytest.raises(InfeasibleConstraint):
                solve_decision(mdp, 0.4, engine=engine)

    def test_minimal_risk_is_feasible(self, example1):
        explicit, search = seeded_trees(example1, 1.0, 3)
        decision = solve_decision(build(explicit.closure(), search), explicit.root.u)
        assert decision.mode is DecisionMode.CONSTRAINED
        assert decision.value == pytest.approx(-7.5)

    def test_long_horizon_is_fast(self, example1):
        agent = RamcpAgent(example1, 1.0, 2.0 / 3.0, 20)
        agent.explore(BudgetLimit(500), RandomSource(0))
        assert agent.state.root_u == pytest.approx(0.5)
        started = time.perf_counter()
        decision = agent.select_action()
        elapsed = time.perf_counter() - started
        assert decision.mode is DecisionMode.CONSTRAINED
        assert elapsed < 5.0

    @pytest.mark.slow
    def test_large_tree_is_fast(self, example1):
        agent = RamcpAgent(example1, 1.0, 2.0 / 3.0, 20)
        agent.explore(BudgetLimit(20000), RandomSource(1))
        assert agent.state.explicit.size() > 5000
        started = time.perf_counter()
        decision = agent.select_action()
        assert time.perf_counter() - started < 30.0
        assert decision.mode is DecisionMode.CONSTRAINED
        assert sum(decision.d_pi.values()) == pytest.approx(1.0)


class TestFallbacks:
    def test_risk_min(self, rooted_at_t):
        explicit, _ = rooted_at_t
        decision = risk_min_fallback(explicit)
        assert decision.mode is DecisionMode.RISK_MINIMIZING
        assert decision.d_pi == {A: 1.0}
        assert decision.risk_for(A, V) == 0.0
        assert decision.risk_for(B, W) == 0.0

    def test_risk_min_needs_children(self, example1):
        with pytest.raises(ValueError):
            risk_min_fallback(ExplicitTree.empty(example1, example1.initial_belief, 0, 4))

    def test_unconstrained_ties(self):
        node = SearchNode(3)
        node.update(2, 5.0)
        node.update(1, 5.0)
        decision = unconstrained_decision(node)
        assert decision.mode is DecisionMode.UNCONSTRAINED
        assert decision.d_pi == {1: 1.0}
        assert decision.risk_for(1, 0) == 1.0

    def test_unconstrained_fresh_root(self):
        assert unconstrained_decision(SearchNode(2)).d_pi == {0: 1.0}


def test_sample_action_frequencies():
    decision = ActionDecision({0: 0.25, 1: 0.75}, {}, DecisionMode.CONSTRAINED)
    rng = RandomSource(9)
    draws = [decision.sample_action(rng) for _ in range(4000)]
    assert np.mean(draws) == pytest.approx(0.75, abs=0.03)
