import numpy as np
import pytest

from rbsde_lab import (
    AdaptedProcess,
    ContractionViolated,
    GeneratorSpec,
    NonConvergence,
    RuleOrderViolated,
    StoppingRule,
    TerminalCondition,
    TimeGrid,
    TreeMode,
    backward_expectation,
    build_tree,
    conditional_g_expectation,
    g_expectation,
    restrict_generator,
    solve_bsde,
)
from rbsde_lab.generators import Abs, Add, Const, Min, NegPart, Scale, YVar, ZVar


def full_tree(steps, horizon=1.0):
    return build_tree(TimeGrid(horizon, steps), TreeMode.FULL_BINARY)


def zero_driver():
    return GeneratorSpec.constant(0.0)


class TestSolveBsde:
    def test_driverless_solution_is_the_martingale(self):
        tree = full_tree(7)
        rng = np.random.default_rng(0)
        leaves = rng.normal(size=128)
        sol = solve_bsde(tree, zero_driver(), TerminalCondition.from_leaf_values(tree, leaves))
        martingale = backward_expectation(tree, leaves)
        for i in range(8):
            np.testing.assert_array_equal(sol.y.level(i), martingale.level(i))

    def test_constant_driver_closed_form(self):
        # driver 1/3 with terminal 1/3 integrates to 2/3 - t/3 on every node
        tree = build_tree(TimeGrid(1.0, 50), TreeMode.RECOMBINING)
        sol = solve_bsde(
            tree, GeneratorSpec.constant(1 / 3), TerminalCondition.constant(tree, 1 / 3)
        )
        for i in range(51):
            t = tree.grid.time(i)
            np.testing.assert_allclose(sol.y.level(i), 2 / 3 - t / 3, atol=1e-13)
            np.testing.assert_array_equal(sol.z.level(i), 0.0)
        assert sol.y.root() == pytest.approx(2 / 3, abs=1e-13)

    def test_linear_coefficient_driver_shifts_the_walk_mean(self):
        # driver theta * z prices the walk itself at theta * T
        theta = 0.3
        tree = build_tree(TimeGrid(1.0, 1000), TreeMode.RECOMBINING)
        g = GeneratorSpec(Scale(theta, ZVar()), theta)
        xi = TerminalCondition.from_leaf_function(tree, lambda b: b)
        assert g_expectation(tree, g, xi) == pytest.approx(theta, abs=5e-3)

    def test_one_step_residual_within_tolerance(self):
        tree = full_tree(8)
        rng = np.random.default_rng(5)
        g = GeneratorSpec(
            Add((Scale(0.4, Abs(YVar())), Scale(0.5, Abs(ZVar())), Const(0.1))), 0.9
        )
        xi = TerminalCondition.from_leaf_values(tree, rng.uniform(-1, 1, size=256))
        sol = solve_bsde(tree, g, xi)
        assert sol.residual <= 1e-12
        assert sol.iterations <= 200

    def test_terminal_values_returned_exactly(self):
        tree = full_tree(5)
        rng = np.random.default_rng(6)
        leaves = rng.uniform(-3, 3, size=32)
        sol = solve_bsde(tree, GeneratorSpec.constant(0.2), TerminalCondition.from_leaf_values(tree, leaves))
        np.testing.assert_array_equal(sol.y.level(5), leaves)

    def test_contraction_guard(self):
        tree = build_tree(TimeGrid(4.0, 2), TreeMode.FULL_BINARY)  # dt = 2
        g = GeneratorSpec(Scale(0.6, YVar()), 0.6)  # L*dt = 1.2
        with pytest.raises(ContractionViolated):
            solve_bsde(tree, g, TerminalCondition.constant(tree, 1.0))

    def test_underdeclared_constant_hits_iteration_cap(self):
        # declared constant passes the precondition, true slope diverges
        tree = build_tree(TimeGrid(2.0, 2), TreeMode.FULL_BINARY)  # dt = 1
        g = GeneratorSpec(Scale(1.5, Abs(YVar())), 0.1)
        with pytest.raises(NonConvergence):
            solve_bsde(tree, g, TerminalCondition.constant(tree, 1.0))


class TestGExpectation:
    def test_constant_preserving_driver_returns_the_constant(self):
        tree = full_tree(6)
        g = GeneratorSpec(
            Min(Scale(2.0, NegPart(Add((YVar(), Const(-0.5))))), Abs(ZVar())), 2.0
        )
        for c in (-1.0, 0.25, 3.5):
            assert g_expectation(tree, g, TerminalCondition.constant(tree, c)) == c

    def test_driverless_walk_has_zero_expectation(self):
        tree = full_tree(9)
        xi = TerminalCondition.from_leaf_function(tree, lambda b: b)
        assert abs(g_expectation(tree, zero_driver(), xi)) <= 1e-14

    def test_constant_driver_example(self):
        tree = build_tree(TimeGrid(1.0, 40), TreeMode.RECOMBINING)
        value = g_expectation(
            tree, GeneratorSpec.constant(1 / 3), TerminalCondition.constant(tree, 1 / 3)
        )
        assert value == pytest.approx(2 / 3, abs=1e-13)


class TestConditional:
    def test_root_rule_matches_scalar_expectation(self):
        tree = full_tree(6)
        rng = np.random.default_rng(8)
        g = GeneratorSpec(Scale(0.3, ZVar()), 0.3)
        xi = TerminalCondition.from_leaf_values(tree, rng.uniform(0, 1, size=64))
        values = conditional_g_expectation(tree, g, xi, StoppingRule.root(tree))
        assert set(values) == {(0, 0)}
        assert values[(0, 0)] == g_expectation(tree, g, xi)

    def test_terminal_rule_returns_terminal_data(self):
        tree = full_tree(5)
        rng = np.random.default_rng(9)
        leaves = rng.uniform(-1, 1, size=32)
        xi = TerminalCondition.from_leaf_values(tree, leaves)
        values = conditional_g_expectation(
            tree, GeneratorSpec.constant(0.1), xi, StoppingRule.terminal(tree)
        )
        for (level, node), value in values.items():
            assert level == 5
            assert value == leaves[node]

    def test_rule_order_guard(self):
        tree = full_tree(4)
        xi = TerminalCondition.constant(tree, 1.0, rule=StoppingRule.root(tree))
        with pytest.raises(RuleOrderViolated):
            conditional_g_expectation(
                tree, zero_driver(), xi, StoppingRule.terminal(tree)
            )

    def test_tower_identity_for_nested_rules(self):
        # evaluating at an early rule and re-solving reproduces the root value
        tree = full_tree(8)
        rng = np.random.default_rng(10)
        g = GeneratorSpec(
            Add((Scale(-0.25, YVar()), Scale(0.5, ZVar()), Const(0.2))), 0.75
        )
        sigma = StoppingRule.terminal(tree)
        tau = StoppingRule(
            tree, [np.abs(tree.brownian_level(i)) >= 0.8 for i in range(9)]
        )
        xi = TerminalCondition.from_leaf_values(tree, rng.uniform(-1, 1, size=256))
        inner = conditional_g_expectation(tree, g, xi, tau)
        inner_levels = [np.zeros(tree.level_size(i)) for i in range(9)]
        for (level, node), value in inner.items():
            inner_levels[level][node] = value
        restarted = TerminalCondition.at_rule(tree, tau, inner_levels)
        outer = g_expectation(tree, g, restarted)
        direct = g_expectation(tree, g, xi)
        assert abs(outer - direct) <= 1e-12


class TestMonotonicity:
    def test_ordered_data_order_the_solutions(self):
        rng = np.random.default_rng(12)
        tree = full_tree(8)
        for _ in range(25):
            a = rng.uniform(-1, 1)
            b = rng.uniform(-1, 1)
            g_low = GeneratorSpec(
                Add((Scale(a, YVar()), Scale(b, ZVar()))), abs(a) + abs(b)
            )
            g_high = GeneratorSpec(
                Add((g_low.expr, Const(rng.uniform(0, 0.5)))), g_low.lipschitz
            )
            lo = rng.uniform(-1, 1, size=256)
            hi = lo + rng.uniform(0, 1, size=256)
            sol_low = solve_bsde(tree, g_low, TerminalCondition.from_leaf_values(tree, lo))
            sol_high = solve_bsde(tree, g_high, TerminalCondition.from_leaf_values(tree, hi))
            for i in range(9):
                assert np.all(sol_low.y.level(i) <= sol_high.y.level(i) + 1e-10)

    def test_strict_gap_survives_to_the_root(self):
        tree = full_tree(8)
        g = GeneratorSpec(Add((Scale(0.3, YVar()), Scale(-0.4, ZVar()))), 0.7)
        lo = np.zeros(256)
        hi = np.zeros(256)
        hi[100] = 0.5  # one positive-probability leaf
        root_low = g_expectation(tree, g, TerminalCondition.from_leaf_values(tree, lo))
        root_high = g_expectation(tree, g, TerminalCondition.from_leaf_values(tree, hi))
        assert root_high - root_low > 1e-12


class TestRestrictionIdentity:
    def test_gated_driver_reproduces_the_rule_solve(self):
        rng = np.random.default_rng(14)
        tree = full_tree(10)
        for _ in range(5):
            flags = [rng.random(tree.level_size(i)) < 0.25 for i in range(11)]
            rule = StoppingRule(tree, flags)
            g = GeneratorSpec(
                Add(
                    (
                        Scale(rng.uniform(-0.7, 0.7), YVar()),
                        Scale(rng.uniform(-0.7, 0.7), Abs(ZVar())),
                        Const(rng.uniform(-0.3, 0.3)),
                    )
                ),
                1.4,
            )
            data = [rng.uniform(-1, 1, size=tree.level_size(i)) for i in range(11)]
            xi = TerminalCondition.at_rule(tree, rule, data)
            direct = solve_bsde(tree, g, xi)
            gated = solve_bsde(tree, restrict_generator(g, rule), xi.as_full_horizon())
            for i in range(11):
                np.testing.assert_array_equal(direct.y.level(i), gated.y.level(i))

    def test_terminal_gating_is_identity(self):
        tree = full_tree(6)
        rng = np.random.default_rng(15)
        g = GeneratorSpec(Scale(0.5, YVar()), 0.5)
        xi = TerminalCondition.from_leaf_values(tree, rng.uniform(-1, 1, size=64))
        plain = solve_bsde(tree, g, xi)
        gated = solve_bsde(
            tree, restrict_generator(g, StoppingRule.terminal(tree)), xi
        )
        for i in range(7):
            np.testing.assert_array_equal(plain.y.level(i), gated.y.level(i))

    def test_root_gating_gives_plain_expectation(self):
        tree = full_tree(6)
        xi = TerminalCondition.constant(tree, 0.4, rule=StoppingRule.root(tree))
        value = g_expectation(tree, GeneratorSpec.constant(5.0), xi)
        assert value == 0.4
