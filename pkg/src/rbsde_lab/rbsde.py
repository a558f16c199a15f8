"""Discretely reflected backward solver with an exact complementarity split.

Each backward step first takes the plain implicit driver step, then clamps
the result to the obstacle; the clamp amount is the reflection increment
applied at that node.  The split keeps three facts exact nodewise: the
solution dominates the obstacle, increments are nonnegative, and an
increment is only ever applied where the clamped value sits on the
obstacle, so ``(value - obstacle) * increment = 0`` without tolerance.

Cumulative reflection is a path functional.  On full-binary trees it is
stored per node (nodes are path prefixes); on recombining trees it is
reconstructed only when every path into a node accumulates the identical
amount, and reported as unavailable otherwise.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .bsde import (
    BsdeSolution,
    TerminalCondition,
    _check_contraction,
    _implicit_level,
    read_at_rule,
)
from .errors import (
    DepthExceeded,
    RuleOrderViolated,
    TerminalBelowObstacle,
    TreeMismatch,
    UnsupportedTreeMode,
)
from .generators import GeneratorSpec
from .lattice import (
    AdaptedProcess,
    ScenarioTree,
    StoppingRule,
    TreeMode,
    conditional_expectation,
    hitting_rule,
    martingale_coefficient,
)

DEFAULT_CONTACT_TOL = 1e-9


@dataclass(frozen=True, eq=False)
class ObstacleSpec:
    """Lower barrier process with an optional declared upper bound."""

    process: AdaptedProcess
    bound: float | None = None

    def __post_init__(self):
        if self.bound is not None:
            top = max(float(np.max(self.process.level(i))) for i in range(self.process.tree.steps + 1))
            if top > self.bound + 1e-12:
                raise ValueError(
                    f"obstacle exceeds its declared bound: max {top!r} > {self.bound!r}"
                )

    @property
    def tree(self) -> ScenarioTree:
        return self.process.tree

    @cached_property
    def modulus_estimate(self) -> float:
        """Largest one-step move scaled by sqrt(dt); recorded, never enforced."""
        tree = self.tree
        worst = 0.0
        for i in range(tree.steps):
            up, down = tree.child_values(self.process.level(i + 1))
            here = self.process.level(i)
            worst = max(
                worst,
                float(np.max(np.abs(up - here))),
                float(np.max(np.abs(down - here))),
            )
        return worst / tree.sqrt_dt


@dataclass(frozen=True)
class ReflectionDiagnostics:
    skorokhod_residual: float
    min_gap: float
    max_increment: float
    iterations: int
    residual: float
    cumulative_available: bool


@dataclass(frozen=True, eq=False)
class RbsdeSolution:
    """Reflected triple: value, coefficient, and the reflection push.

    ``k_increments`` holds the push applied at each node (the increment
    accrued over the following step); ``k`` is its path accumulation with
    ``k = 0`` at the root, or ``None`` when the recombining layout cannot
    represent it.
    """

    y: AdaptedProcess
    z: AdaptedProcess
    k_increments: AdaptedProcess
    k: AdaptedProcess | None
    diagnostics: ReflectionDiagnostics


def _accumulate_increments(
    tree: ScenarioTree, increments: list[np.ndarray]
) -> list[np.ndarray] | None:
    levels = [np.zeros(1)]
    for i in range(tree.steps):
        total = levels[i] + increments[i]
        if tree.mode is TreeMode.FULL_BINARY:
            levels.append(np.repeat(total, 2))
        else:
            if i >= 1 and not np.array_equal(total[:-1], total[1:]):
                return None
            nxt = np.empty(i + 2)
            nxt[0] = total[0]
            nxt[1:] = total
            levels.append(nxt)
    return levels


def solve_rbsde(
    tree: ScenarioTree,
    generator: GeneratorSpec,
    terminal: TerminalCondition,
    obstacle: ObstacleSpec,
) -> RbsdeSolution:
    """Backward reflected recursion from the terminal rule to the root."""
    if terminal.tree != tree or obstacle.tree != tree:
        raise TreeMismatch("terminal condition and obstacle must share the tree")
    _check_contraction(generator, tree)
    dt = tree.grid.dt
    stopped = terminal.rule.stopped_by_level
    stop_nodes = terminal.rule.stop_node_masks
    ext = terminal.extended
    barrier = obstacle.process

    for i, mask in enumerate(stop_nodes):
        if mask.any() and bool(np.any(ext[i][mask] < barrier.level(i)[mask])):
            raise TerminalBelowObstacle(
                f"terminal values fall below the obstacle at level {i}"
            )

    n = tree.steps
    y_levels: list[np.ndarray] = [None] * (n + 1)  # type: ignore[list-item]
    z_levels: list[np.ndarray] = [None] * (n + 1)  # type: ignore[list-item]
    dk_levels: list[np.ndarray] = [None] * (n + 1)  # type: ignore[list-item]
    y_levels[n] = np.array(ext[n])
    z_levels[n] = np.zeros(tree.level_size(n))
    dk_levels[n] = np.zeros(tree.level_size(n))

    max_iter = 0
    max_resid = 0.0
    min_gap = float(np.min((ext[n] - barrier.level(n))[stop_nodes[n]])) if stop_nodes[n].any() else np.inf
    for i in range(n - 1, -1, -1):
        up, down = tree.child_values(y_levels[i + 1])
        mean = conditional_expectation(up, down)
        zco = martingale_coefficient(up, down, dt)
        t = tree.grid.time(i)
        active = ~stopped[i]
        if active.any():
            unreflected, iters = _implicit_level(generator, t, mean, zco, dt, tree, i)
            max_iter = max(max_iter, iters)
        else:
            unreflected = mean
        clamped = np.maximum(unreflected, barrier.level(i))
        y_i = np.where(stopped[i], ext[i], clamped)
        z_i = np.where(stopped[i], 0.0, zco)
        dk_i = np.where(stopped[i], 0.0, clamped - unreflected)
        if active.any():
            # the step identity is y = mean + g(t, pre-clamp value, z) dt + dk,
            # so the replayed defect lives on the pre-clamp value
            g_final = np.broadcast_to(
                np.asarray(
                    generator.evaluate(t, unreflected, zco, level=i, tree=tree),
                    dtype=float,
                ),
                y_i.shape,
            )
            defect = np.abs(unreflected - (mean + g_final * dt))
            max_resid = max(max_resid, float(np.max(defect[active])))
            gaps = (y_i - barrier.level(i))[active]
            min_gap = min(min_gap, float(np.min(gaps)))
        if stop_nodes[i].any():
            gaps = (y_i - barrier.level(i))[stop_nodes[i]]
            min_gap = min(min_gap, float(np.min(gaps)))
        y_levels[i] = y_i
        z_levels[i] = z_i
        dk_levels[i] = dk_i

    skorokhod = max(
        float(np.max(np.abs((y_levels[i] - barrier.level(i)) * dk_levels[i])))
        for i in range(n + 1)
    )
    cumulative = _accumulate_increments(tree, dk_levels)
    diagnostics = ReflectionDiagnostics(
        skorokhod_residual=skorokhod,
        min_gap=min_gap,
        max_increment=max(float(np.max(lvl)) for lvl in dk_levels),
        iterations=max_iter,
        residual=max_resid,
        cumulative_available=cumulative is not None,
    )
    return RbsdeSolution(
        y=AdaptedProcess(tree, y_levels),
        z=AdaptedProcess(tree, z_levels),
        k_increments=AdaptedProcess(tree, dk_levels),
        k=AdaptedProcess(tree, cumulative) if cumulative is not None else None,
        diagnostics=diagnostics,
    )


def reflected_value(
    tree: ScenarioTree,
    generator: GeneratorSpec,
    terminal: TerminalCondition,
    obstacle: ObstacleSpec,
) -> float:
    """Root value of the reflected solution."""
    return solve_rbsde(tree, generator, terminal, obstacle).y.root()


def reflected_conditional(
    tree: ScenarioTree,
    generator: GeneratorSpec,
    terminal: TerminalCondition,
    obstacle: ObstacleSpec,
    at: StoppingRule,
) -> dict[tuple[int, int], float]:
    """Reflected solution values on the stopping nodes of ``at``."""
    if not at.precedes(terminal.rule):
        raise RuleOrderViolated("evaluation rule must precede the terminal rule")
    sol = solve_rbsde(tree, generator, terminal, obstacle)
    return read_at_rule(sol.y, at)


def snell_oracle(
    tree: ScenarioTree, terminal: TerminalCondition, obstacle: ObstacleSpec
) -> AdaptedProcess:
    """Driverless dynamic program: smallest dominating backward recursion.

    Coincides with the reflected solver's value exactly when the driver is
    zero, which makes it an independent check of the reflection step.
    """
    if terminal.tree != tree or obstacle.tree != tree:
        raise TreeMismatch("terminal condition and obstacle must share the tree")
    stopped = terminal.rule.stopped_by_level
    stop_nodes = terminal.rule.stop_node_masks
    ext = terminal.extended
    barrier = obstacle.process
    for i, mask in enumerate(stop_nodes):
        if mask.any() and bool(np.any(ext[i][mask] < barrier.level(i)[mask])):
            raise TerminalBelowObstacle("terminal values fall below the obstacle")
    n = tree.steps
    levels: list[np.ndarray] = [None] * (n + 1)  # type: ignore[list-item]
    levels[n] = np.array(ext[n])
    for i in range(n - 1, -1, -1):
        up, down = tree.child_values(levels[i + 1])
        cont = conditional_expectation(up, down)
        levels[i] = np.where(
            stopped[i], ext[i], np.maximum(barrier.level(i), cont)
        )
    return AdaptedProcess(tree, levels)


ENUMERATION_MAX_STEPS = 4


def enumerate_stopping_oracle(
    tree: ScenarioTree, terminal: TerminalCondition, obstacle: ObstacleSpec
) -> float:
    """Optimal-stopping value by brute force over every first-hit rule.

    Ground truth for the reflected value with zero driver: the supremum over
    all adapted stopping rules of the expected stopped payoff, taking the
    obstacle before the horizon and the terminal values at it.  Flag
    patterns over interior nodes enumerate every adapted rule.
    """
    if tree.mode is not TreeMode.FULL_BINARY:
        raise UnsupportedTreeMode("rule enumeration needs a full-binary tree")
    if tree.steps > ENUMERATION_MAX_STEPS:
        raise DepthExceeded(
            f"rule enumeration supports at most {ENUMERATION_MAX_STEPS} steps"
        )
    if not terminal.rule.is_terminal:
        raise UnsupportedTreeMode("rule enumeration needs plain terminal data")
    n = tree.steps
    xi = terminal.extended[n]
    interior = (1 << n) - 1
    rules = np.arange(1 << interior, dtype=np.uint64)[:, None]
    values = np.broadcast_to(xi, (1 << interior, 1 << n)).copy()
    offset = interior
    for i in range(n - 1, -1, -1):
        offset -= 1 << i
        cont = (values[:, 0::2] + values[:, 1::2]) / 2.0
        bits = (rules >> (offset + np.arange(1 << i, dtype=np.uint64)[None, :])) & 1
        values = np.where(bits.astype(bool), obstacle.process.level(i)[None, :], cont)
    return float(np.max(values[:, 0]))


def exercise_rule(
    solution: RbsdeSolution, obstacle: ObstacleSpec, tol: float = DEFAULT_CONTACT_TOL
) -> StoppingRule:
    """First time the reflected value sits on the obstacle."""
    if solution.y.tree != obstacle.tree:
        raise TreeMismatch("solution and obstacle live on different trees")
    return hitting_rule(solution.y, obstacle.process, tol)
