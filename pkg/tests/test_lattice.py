import numpy as np
import pytest
from hypothesis import given, strategies as st

from rbsde_lab import (
    AdaptedProcess,
    DepthExceeded,
    InvalidGrid,
    ScenarioTree,
    StoppingRule,
    TimeGrid,
    TreeMismatch,
    TreeMode,
    backward_expectation,
    build_tree,
    conditional_expectation,
    event_probability,
    freeze_after,
    hitting_rule,
    lift_deterministic,
    martingale_coefficient,
)


def full_tree(steps, horizon=1.0):
    return build_tree(TimeGrid(horizon, steps), TreeMode.FULL_BINARY)


def recomb_tree(steps, horizon=1.0):
    return build_tree(TimeGrid(horizon, steps), TreeMode.RECOMBINING)


class TestBuildTree:
    def test_one_step_walk(self):
        tree = full_tree(1)
        np.testing.assert_allclose(tree.brownian_level(1), [-1.0, 1.0])
        np.testing.assert_allclose(tree.level_probabilities(1), [0.5, 0.5])

    def test_two_step_recombining(self):
        tree = recomb_tree(2)
        root_half = np.sqrt(0.5)
        np.testing.assert_allclose(
            tree.brownian_level(2), [-2 * root_half, 0.0, 2 * root_half]
        )
        np.testing.assert_allclose(tree.level_probabilities(2), [0.25, 0.5, 0.25])

    def test_full_binary_depth_guard(self):
        with pytest.raises(DepthExceeded):
            full_tree(30)

    def test_invalid_grids(self):
        with pytest.raises(InvalidGrid):
            TimeGrid(1.0, 0)
        with pytest.raises(InvalidGrid):
            TimeGrid(-1.0, 4)
        with pytest.raises(InvalidGrid):
            TimeGrid(0.0, 4)

    @pytest.mark.parametrize("mode", list(TreeMode))
    def test_level_probabilities_sum_to_one(self, mode):
        tree = build_tree(TimeGrid(2.0, 12), mode)
        for i in range(13):
            assert sum(tree.exact_level_probabilities(i)) == 1

    @pytest.mark.parametrize("mode", list(TreeMode))
    def test_variance_law_exact(self, mode):
        # Var[B_t] = t with exact dyadic probabilities
        tree = build_tree(TimeGrid(1.0, 10), mode)
        for i in range(11):
            b = tree.brownian_level(i)
            mean = tree.expectation(b, i, exact=True)
            var = tree.expectation(b * b, i, exact=True)
            assert abs(mean) <= 1e-15
            assert abs(var - tree.grid.time(i)) <= 1e-12


class TestStepFunctions:
    def test_conditional_expectation_values(self):
        assert conditional_expectation(2.0, 0.0) == 1.0
        assert conditional_expectation(5.5, 5.5) == 5.5
        assert conditional_expectation(1 / 3, 1 / 3) == 1 / 3

    def test_martingale_coefficient_values(self):
        assert martingale_coefficient(3.0, 3.0, 0.1) == 0.0
        assert martingale_coefficient(1.0, 0.0, 0.25) == 1.0

    def test_martingale_coefficient_needs_positive_dt(self):
        with pytest.raises(InvalidGrid):
            martingale_coefficient(1.0, 0.0, 0.0)

    @given(
        y=st.floats(-10, 10),
        z=st.floats(-10, 10),
        dt=st.floats(1e-6, 4.0),
    )
    def test_martingale_coefficient_inverts_planted_loading(self, y, z, dt):
        step = np.sqrt(dt)
        recovered = martingale_coefficient(y + z * step, y - z * step, dt)
        assert recovered == pytest.approx(z, abs=1e-9, rel=1e-9)


class TestAdaptedProcess:
    def test_lift_affine(self):
        tree = recomb_tree(2)
        proc = lift_deterministic(lambda t: 1.0 - 2.0 * t, tree)
        assert [proc.level(i)[0] for i in range(3)] == [1.0, 0.0, -1.0]
        assert np.all(proc.level(2) == -1.0)

    def test_lift_zero(self):
        tree = full_tree(3)
        proc = lift_deterministic(lambda t: 0.0, tree)
        assert all(np.all(proc.level(i) == 0.0) for i in range(4))

    def test_lift_identity_times(self):
        tree = recomb_tree(4)
        proc = lift_deterministic(lambda t: t, tree)
        np.testing.assert_allclose(
            [proc.level(i)[0] for i in range(5)], [0.0, 0.25, 0.5, 0.75, 1.0]
        )

    def test_levels_are_immutable(self):
        tree = full_tree(2)
        proc = AdaptedProcess.constant(tree, 1.0)
        with pytest.raises(ValueError):
            proc.level(1)[0] = 2.0

    def test_shape_validation(self):
        tree = full_tree(2)
        with pytest.raises(TreeMismatch):
            AdaptedProcess(tree, [np.zeros(1), np.zeros(3), np.zeros(4)])

    def test_backward_martingale_one_step_identity(self):
        tree = full_tree(6)
        rng = np.random.default_rng(3)
        proc = backward_expectation(tree, rng.normal(size=64))
        for i in range(6):
            up, down = tree.child_values(proc.level(i + 1))
            np.testing.assert_array_equal(
                conditional_expectation(up, down), proc.level(i)
            )

    def test_tower_property(self):
        tree = full_tree(8)
        rng = np.random.default_rng(4)
        proc = backward_expectation(tree, rng.uniform(-2, 2, size=256))
        total = tree.expectation(proc.level(8), 8, exact=True)
        for i in range(8):
            nested = tree.expectation(proc.level(i), i, exact=True)
            assert abs(nested - total) <= 1e-12


class TestStoppingRules:
    def test_hitting_rule_stops_at_first_touch(self):
        tree = full_tree(3)
        a = AdaptedProcess.constant(tree, 1.0)
        b = AdaptedProcess.constant(tree, 0.0)
        rule = hitting_rule(a, b, tol=0.0)
        assert np.all(rule.leaf_stop_levels == 3)

        rule_eq = hitting_rule(a, AdaptedProcess.constant(tree, 1.0), tol=0.0)
        assert np.all(rule_eq.leaf_stop_levels == 0)

    def test_hitting_rule_tree_mismatch(self):
        a = AdaptedProcess.constant(full_tree(3), 1.0)
        b = AdaptedProcess.constant(full_tree(4), 1.0)
        with pytest.raises(TreeMismatch):
            hitting_rule(a, b)

    def test_first_hit_idempotence(self):
        # rebuilding the rule from processes frozen at the rule changes nothing
        tree = full_tree(6)
        rng = np.random.default_rng(11)
        a = AdaptedProcess.from_state_function(tree, lambda t, b: b + 0.3)
        b = AdaptedProcess.from_time_function(tree, lambda t: -0.5 + t)
        rule = hitting_rule(a, b)
        again = hitting_rule(freeze_after(a, rule), freeze_after(b, rule))
        np.testing.assert_array_equal(rule.leaf_stop_levels, again.leaf_stop_levels)

    def test_precedes(self):
        tree = full_tree(4)
        assert StoppingRule.root(tree).precedes(StoppingRule.terminal(tree))
        assert not StoppingRule.terminal(tree).precedes(StoppingRule.root(tree))

    def test_stop_node_masks_partition_paths(self):
        tree = full_tree(5)
        rng = np.random.default_rng(7)
        flags = [rng.random(tree.level_size(i)) < 0.3 for i in range(6)]
        rule = StoppingRule(tree, flags)
        # every leaf has exactly one stopping ancestor
        levels = rule.leaf_stop_levels
        for leaf in range(32):
            level = levels[leaf]
            assert rule.stop_node_masks[level][leaf >> (5 - level)]
            for earlier in range(level):
                assert not rule.flags(earlier)[leaf >> (5 - earlier)]


class TestEventProbability:
    def test_always_true(self):
        tree = full_tree(4)
        rule = StoppingRule.terminal(tree)
        pred = [np.ones(tree.level_size(i), dtype=bool) for i in range(5)]
        assert event_probability(rule, pred) == 1.0

    def test_single_leaf(self):
        tree = full_tree(5)
        rule = StoppingRule.terminal(tree)
        pred = [np.ones(tree.level_size(i), dtype=bool) for i in range(6)]
        pred[5] = np.zeros(32, dtype=bool)
        pred[5][17] = True
        assert event_probability(rule, pred) == 1.0 / 32.0

    def test_always_false(self):
        tree = full_tree(4)
        rule = StoppingRule.terminal(tree)
        pred = [np.zeros(tree.level_size(i), dtype=bool) for i in range(5)]
        assert event_probability(rule, pred) == 0.0

    def test_counts_only_after_stopping(self):
        tree = full_tree(2)
        rule = StoppingRule.at_level(tree, 1)
        # predicate false at the root: irrelevant, since stopping happens later
        pred = [np.ones(tree.level_size(i), dtype=bool) for i in range(3)]
        pred[0][:] = False
        assert event_probability(rule, pred) == 1.0


class TestFreezing:
    def test_freeze_holds_value_constant(self):
        tree = full_tree(4)
        walk = tree.brownian()
        rule = StoppingRule.at_level(tree, 2)
        frozen = freeze_after(walk, rule)
        for i in (0, 1, 2):
            np.testing.assert_array_equal(frozen.level(i), walk.level(i))
        for leaf in range(16):
            stop_node = leaf >> 2
            assert frozen.value(4, leaf) == walk.value(2, stop_node)
