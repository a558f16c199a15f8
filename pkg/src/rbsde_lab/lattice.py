"""Discrete Brownian lattices and the exact calculus of adapted processes.

Everything downstream (solvers, oracles, verification suites) runs on the two
tree layouts built here: a full binary tree whose nodes are path prefixes,
and a recombining tree whose nodes are up-move counts. Steps are the
symmetric +-sqrt(dt) walk with probability 1/2 each, so one-step conditional
expectations are two-point averages, node probabilities are exact dyadic
rationals, and the martingale representation coefficient is a closed-form
difference quotient.

Trees, adapted processes, and stopping rules are immutable after
construction; all operations are pure functions of their inputs and safe for
concurrent reads.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from fractions import Fraction
from functools import cached_property
from typing import Callable, Sequence

import numpy as np

from .errors import (
    DepthExceeded,
    InvalidGrid,
    TreeMismatch,
    UnsupportedTreeMode,
)

# Full-binary trees keep every path in memory; 2**25 leaves is the desk-scale
# bound beyond which builds are refused.
FULL_BINARY_MAX_STEPS = 25


class TreeMode(Enum):
    FULL_BINARY = "full-binary"
    RECOMBINING = "recombining"


@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid of ``steps + 1`` times on ``[0, horizon]``."""

    horizon: float
    steps: int

    def __post_init__(self) -> None:
        if not isinstance(self.steps, int) or self.steps < 1:
            raise InvalidGrid(f"steps must be a positive integer, got {self.steps!r}")
        if not (math.isfinite(self.horizon) and self.horizon > 0.0):
            raise InvalidGrid(f"horizon must be finite and positive, got {self.horizon!r}")

    @property
    def dt(self) -> float:
        return self.horizon / self.steps

    def time(self, level: int) -> float:
        return level * self.dt

    def times(self) -> np.ndarray:
        return np.arange(self.steps + 1) * self.dt


def _popcount(values: np.ndarray) -> np.ndarray:
    return np.bitwise_count(values.astype(np.uint64)).astype(np.int64)


class ScenarioTree:
    """Binary scenario tree over a :class:`TimeGrid`.

    FULL_BINARY indexes the ``2**i`` nodes of level ``i`` by the path
    bitstring (one bit appended per step, up move = 1), so node ``k`` has
    children ``2k`` (down) and ``2k + 1`` (up) and its ancestor at level
    ``j`` is ``k >> (i - j)``.  RECOMBINING indexes the ``i + 1`` nodes by
    the up-move count, so node ``j`` has children ``j`` (down) and ``j + 1``
    (up).  Recombining storage is only sound for processes that are
    functions of the cumulative increment; builders of dependent processes
    must guarantee that themselves.
    """

    def __init__(self, grid: TimeGrid, mode: TreeMode):
        if mode is TreeMode.FULL_BINARY and grid.steps > FULL_BINARY_MAX_STEPS:
            raise DepthExceeded(
                f"full-binary trees support at most {FULL_BINARY_MAX_STEPS} steps, "
                f"got {grid.steps}"
            )
        self.grid = grid
        self.mode = mode

    def __eq__(self, other: object) -> bool:
        return (
            isinstance(other, ScenarioTree)
            and self.grid == other.grid
            and self.mode is other.mode
        )

    def __hash__(self) -> int:
        return hash((self.grid, self.mode))

    def __repr__(self) -> str:
        return f"ScenarioTree(T={self.grid.horizon}, N={self.grid.steps}, {self.mode.value})"

    @property
    def steps(self) -> int:
        return self.grid.steps

    @cached_property
    def sqrt_dt(self) -> float:
        return math.sqrt(self.grid.dt)

    def level_size(self, level: int) -> int:
        if not 0 <= level <= self.steps:
            raise IndexError(f"level {level} outside 0..{self.steps}")
        if self.mode is TreeMode.FULL_BINARY:
            return 1 << level
        return level + 1

    def up_counts(self, level: int) -> np.ndarray:
        """Number of up moves leading to each node of ``level``."""
        if self.mode is TreeMode.FULL_BINARY:
            return _popcount(np.arange(self.level_size(level)))
        return np.arange(level + 1, dtype=np.int64)

    def brownian_level(self, level: int) -> np.ndarray:
        """Cumulative-walk value at every node of ``level``."""
        return (2 * self.up_counts(level) - level) * self.sqrt_dt

    def brownian(self) -> AdaptedProcess:
        levels = [self.brownian_level(i) for i in range(self.steps + 1)]
        return AdaptedProcess(self, levels)

    def exact_level_probabilities(self, level: int) -> list[Fraction]:
        """Node probabilities of ``level`` as exact dyadic rationals."""
        denom = 1 << level
        if self.mode is TreeMode.FULL_BINARY:
            return [Fraction(1, denom)] * self.level_size(level)
        return [Fraction(math.comb(level, j), denom) for j in range(level + 1)]

    def level_probabilities(self, level: int) -> np.ndarray:
        return np.array([float(p) for p in self.exact_level_probabilities(level)])

    def child_values(self, next_level: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Split level ``i + 1`` values into (up, down) arrays aligned with level ``i``."""
        v = np.asarray(next_level)
        if self.mode is TreeMode.FULL_BINARY:
            return v[1::2], v[0::2]
        return v[1:], v[:-1]

    def spread_to_children(self, level_values: np.ndarray) -> np.ndarray:
        """Copy each parent value onto both of its children (path semantics).

        Only full-binary trees keep distinct storage per path, so this is
        undefined for recombining trees.
        """
        if self.mode is not TreeMode.FULL_BINARY:
            raise UnsupportedTreeMode("per-path value propagation needs a full-binary tree")
        return np.repeat(np.asarray(level_values), 2)

    def expectation(self, level_values: np.ndarray, level: int, *, exact: bool = False) -> float:
        """Probability-weighted mean of values at ``level``.

        With ``exact=True`` the accumulation runs in rational arithmetic and
        rounds once at the end.
        """
        values = np.asarray(level_values, dtype=float)
        if values.shape != (self.level_size(level),):
            raise TreeMismatch(f"expected {self.level_size(level)} values at level {level}")
        if exact:
            total = sum(
                p * Fraction(v)
                for p, v in zip(self.exact_level_probabilities(level), values.tolist())
            )
            return float(total)
        return float(np.dot(self.level_probabilities(level), values))


def build_tree(grid: TimeGrid, mode: TreeMode) -> ScenarioTree:
    """Build a scenario tree; rejects full-binary depths beyond the bound."""
    return ScenarioTree(grid, mode)


def conditional_expectation(child_up, child_down):
    """One-step conditional expectation: the plain average of the children."""
    return (child_up + child_down) / 2.0


def martingale_coefficient(child_up, child_down, dt: float):
    """Unique ``z`` with ``child = mean +- z * sqrt(dt)``.

    This is the discrete martingale-representation coefficient: the
    difference quotient of the children over the step spread.
    """
    if dt <= 0.0:
        raise InvalidGrid(f"dt must be positive, got {dt!r}")
    return (child_up - child_down) / (2.0 * math.sqrt(dt))


class AdaptedProcess:
    """One real value per tree node; immutable after construction."""

    __slots__ = ("tree", "_levels")

    def __init__(self, tree: ScenarioTree, levels: Sequence[np.ndarray]):
        if len(levels) != tree.steps + 1:
            raise TreeMismatch(
                f"process needs {tree.steps + 1} levels, got {len(levels)}"
            )
        stored = []
        for i, level in enumerate(levels):
            arr = np.array(level, dtype=float, copy=True)
            if arr.shape != (tree.level_size(i),):
                raise TreeMismatch(
                    f"level {i} must hold {tree.level_size(i)} values, got shape {arr.shape}"
                )
            arr.flags.writeable = False
            stored.append(arr)
        self.tree = tree
        self._levels = tuple(stored)

    def level(self, i: int) -> np.ndarray:
        return self._levels[i]

    def value(self, level: int, node: int) -> float:
        return float(self._levels[level][node])

    def root(self) -> float:
        return float(self._levels[0][0])

    def levels(self) -> tuple[np.ndarray, ...]:
        return self._levels

    @classmethod
    def constant(cls, tree: ScenarioTree, value: float) -> AdaptedProcess:
        return cls(tree, [np.full(tree.level_size(i), float(value)) for i in range(tree.steps + 1)])

    @classmethod
    def from_time_function(cls, tree: ScenarioTree, f: Callable[[float], float]) -> AdaptedProcess:
        """Deterministic lift: every node of level ``i`` carries ``f(t_i)``."""
        return cls(
            tree,
            [
                np.full(tree.level_size(i), float(f(tree.grid.time(i))))
                for i in range(tree.steps + 1)
            ],
        )

    @classmethod
    def from_state_function(
        cls, tree: ScenarioTree, f: Callable[[float, np.ndarray], np.ndarray]
    ) -> AdaptedProcess:
        """Markovian lift ``f(t, walk value)``, legal on both tree layouts."""
        levels = []
        for i in range(tree.steps + 1):
            vals = np.broadcast_to(
                np.asarray(f(tree.grid.time(i), tree.brownian_level(i)), dtype=float),
                (tree.level_size(i),),
            )
            levels.append(vals)
        return cls(tree, levels)


def lift_deterministic(f: Callable[[float], float], tree: ScenarioTree) -> AdaptedProcess:
    """Encode a deterministic time function as an adapted process."""
    return AdaptedProcess.from_time_function(tree, f)


def backward_expectation(tree: ScenarioTree, leaf_values: np.ndarray) -> AdaptedProcess:
    """Martingale closed by the given terminal values (driverless recursion)."""
    values = np.asarray(leaf_values, dtype=float)
    levels: list[np.ndarray] = [None] * (tree.steps + 1)  # type: ignore[list-item]
    levels[tree.steps] = values
    for i in range(tree.steps - 1, -1, -1):
        up, down = tree.child_values(levels[i + 1])
        levels[i] = conditional_expectation(up, down)
    return AdaptedProcess(tree, levels)


class StoppingRule:
    """First-hit stopping rule stored as a flag per node.

    Along every path the rule stops at the first flagged node; the terminal
    level is always flagged so that every path stops by level ``N``.  The
    flag at a node depends only on that node, which makes the rule adapted
    by construction.
    """

    def __init__(self, tree: ScenarioTree, flags: Sequence[np.ndarray]):
        if len(flags) != tree.steps + 1:
            raise TreeMismatch(f"rule needs {tree.steps + 1} flag levels")
        stored = []
        for i, level in enumerate(flags):
            arr = np.array(level, dtype=bool, copy=True)
            if arr.shape != (tree.level_size(i),):
                raise TreeMismatch(f"flag level {i} has wrong shape {arr.shape}")
            stored.append(arr)
        stored[tree.steps] = np.ones(tree.level_size(tree.steps), dtype=bool)
        for arr in stored:
            arr.flags.writeable = False
        self.tree = tree
        self._flags = tuple(stored)

    def flags(self, level: int) -> np.ndarray:
        return self._flags[level]

    @classmethod
    def terminal(cls, tree: ScenarioTree) -> StoppingRule:
        return cls.at_level(tree, tree.steps)

    @classmethod
    def root(cls, tree: ScenarioTree) -> StoppingRule:
        return cls.at_level(tree, 0)

    @classmethod
    def at_level(cls, tree: ScenarioTree, level: int) -> StoppingRule:
        flags = [
            np.full(tree.level_size(i), i >= level, dtype=bool)
            for i in range(tree.steps + 1)
        ]
        return cls(tree, flags)

    @cached_property
    def _deterministic_level(self) -> int | None:
        """Level of an all-or-nothing rule, or None when flags are partial."""
        for i, f in enumerate(self._flags):
            if f.all():
                return i
            if f.any():
                return None
        return self.tree.steps

    @property
    def is_terminal(self) -> bool:
        """True when every path runs to the last level before stopping."""
        return self._deterministic_level == self.tree.steps

    @cached_property
    def stopped_by_level(self) -> tuple[np.ndarray, ...]:
        """Mask per level: has this path stopped at or before the level?

        Needs path-prefix resolution, so partial flags are only supported on
        full-binary trees; on recombining trees only level rules (whole
        levels flagged) resolve.
        """
        tree = self.tree
        if tree.mode is TreeMode.FULL_BINARY:
            masks = [self._flags[0].copy()]
            for i in range(1, tree.steps + 1):
                masks.append(np.repeat(masks[i - 1], 2) | self._flags[i])
            for m in masks:
                m.flags.writeable = False
            return tuple(masks)
        level = self._deterministic_level
        if level is None:
            raise UnsupportedTreeMode(
                "partially flagged stopping rules need a full-binary tree"
            )
        return tuple(
            np.full(tree.level_size(i), i >= level, dtype=bool)
            for i in range(tree.steps + 1)
        )

    @cached_property
    def stop_node_masks(self) -> tuple[np.ndarray, ...]:
        """Mask per level: nodes where some path stops for the first time."""
        tree = self.tree
        stopped = self.stopped_by_level
        masks = [stopped[0].copy()]
        for i in range(1, tree.steps + 1):
            if tree.mode is TreeMode.FULL_BINARY:
                before = np.repeat(stopped[i - 1], 2)
            else:
                before = (
                    np.full(tree.level_size(i), True)
                    if stopped[i - 1].all()
                    else np.full(tree.level_size(i), False)
                )
            masks.append(stopped[i] & ~before)
        for m in masks:
            m.flags.writeable = False
        return tuple(masks)

    @cached_property
    def leaf_stop_levels(self) -> np.ndarray:
        """Stopping level of every terminal path (full-binary trees only)."""
        tree = self.tree
        if tree.mode is not TreeMode.FULL_BINARY:
            level = self._deterministic_level
            if level is None:
                raise UnsupportedTreeMode("per-path stop levels need a full-binary tree")
            return np.full(tree.level_size(tree.steps), level, dtype=np.int64)
        n = tree.steps
        out = np.full(1 << n, -1, dtype=np.int64)
        for i, mask in enumerate(self.stop_node_masks):
            hit = np.repeat(mask, 1 << (n - i))
            out = np.where((out < 0) & hit, i, out)
        return out

    def precedes(self, other: StoppingRule) -> bool:
        """True when this rule stops no later than ``other`` on every path."""
        if self.tree != other.tree:
            raise TreeMismatch("stopping rules live on different trees")
        return bool(np.all(self.leaf_stop_levels <= other.leaf_stop_levels))


def hitting_rule(
    a: AdaptedProcess, b: AdaptedProcess, tol: float = 1e-9
) -> StoppingRule:
    """First hit of the event ``a_t <= b_t + tol``; stops at N when never hit."""
    if a.tree != b.tree:
        raise TreeMismatch("processes live on different trees")
    if tol < 0.0:
        raise ValueError(f"tolerance must be nonnegative, got {tol!r}")
    flags = [a.level(i) <= b.level(i) + tol for i in range(a.tree.steps + 1)]
    return StoppingRule(a.tree, flags)


def event_probability(
    rule: StoppingRule,
    predicate: Sequence[np.ndarray] | Callable[[int], np.ndarray],
) -> float:
    """Exact probability that the predicate holds at and after stopping.

    A path counts when the node predicate is true at its stopping node and
    at every later node along the path.  Computed as an exact dyadic count
    over paths, so it needs the full-binary layout.
    """
    tree = rule.tree
    if tree.mode is not TreeMode.FULL_BINARY:
        raise UnsupportedTreeMode("exact path events need a full-binary tree")
    stopped = rule.stopped_by_level
    good_path: np.ndarray | None = None
    for i in range(tree.steps + 1):
        pred = predicate(i) if callable(predicate) else predicate[i]
        pred = np.asarray(pred, dtype=bool)
        if pred.shape != (tree.level_size(i),):
            raise TreeMismatch(f"predicate level {i} has wrong shape {pred.shape}")
        good = ~stopped[i] | pred
        good_path = good if good_path is None else np.repeat(good_path, 2) & good
    count = int(good_path.sum())
    return float(Fraction(count, 1 << tree.steps))


def freeze_after(process: AdaptedProcess, rule: StoppingRule) -> AdaptedProcess:
    """Process held constant once the rule has stopped: ``s(min(t, tau))``."""
    if process.tree != rule.tree:
        raise TreeMismatch("process and rule live on different trees")
    tree = process.tree
    stopped = rule.stopped_by_level
    levels = [np.array(process.level(0))]
    for i in range(1, tree.steps + 1):
        if tree.mode is TreeMode.FULL_BINARY:
            already = np.repeat(stopped[i - 1], 2)
            carried = np.repeat(levels[i - 1], 2)
        elif stopped[i - 1].all():
            prev = levels[i - 1]
            if not np.all(prev == prev[0]):
                raise UnsupportedTreeMode(
                    "freezing a level-varying process needs a full-binary tree"
                )
            already = np.full(tree.level_size(i), True)
            carried = np.full(tree.level_size(i), prev[0])
        else:
            already = np.full(tree.level_size(i), False)
            carried = process.level(i)
        levels.append(np.where(already, carried, process.level(i)))
    return AdaptedProcess(tree, levels)
