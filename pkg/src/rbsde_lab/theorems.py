"""Executable checks for the ordering behaviour of reflected solutions.

Each entry point here turns one mathematical statement about reflected
equations into a measurement on the lattice: the comparison of values and
of reflection pushes under ordered data, the failure of global strict
comparison together with the local strict separation witness, the
constructions that force the reflection to stay off (so reflected and plain
solutions coincide), and the converse probes that read driver order off
solution order.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import Callable, Sequence

import numpy as np

from .bsde import TerminalCondition, solve_bsde, read_at_rule
from .errors import (
    ExpressionError,
    NoStrictGap,
    RuleOrderViolated,
    TreeMismatch,
    UnsupportedTreeMode,
    WitnessConstructionFailed,
)
from .generators import (
    Abs,
    Add,
    AtZeroState,
    Const,
    GeneratorSpec,
    Min,
    NegPart,
    PiecewiseTime,
    Scale,
    TimeVar,
    YVar,
    ZVar,
)
from .lattice import (
    AdaptedProcess,
    ScenarioTree,
    StoppingRule,
    TreeMode,
    event_probability,
)
from .rbsde import ObstacleSpec, RbsdeSolution, solve_rbsde

COMPARISON_TOL = 1e-10
EQUALITY_TOL = 1e-9


@dataclass(frozen=True, eq=False)
class RbsdeProblem:
    """One reflected data set: driver, terminal condition, obstacle."""

    generator: GeneratorSpec
    terminal: TerminalCondition
    obstacle: ObstacleSpec

    @property
    def tree(self) -> ScenarioTree:
        return self.terminal.tree


# ---------------------------------------------------------------------------
# Comparison of values and reflection pushes under ordered data

@dataclass(frozen=True)
class OrderingCertificate:
    """How each input ordering was verified, with its worst violation."""

    terminal_gap: float
    obstacle_gap: float
    driver_gap_on_solutions: float
    driver_gap_on_grid: float
    tolerance: float = 1e-12

    @property
    def established(self) -> bool:
        return (
            self.terminal_gap <= self.tolerance
            and self.obstacle_gap <= self.tolerance
            and self.driver_gap_on_solutions <= self.tolerance
            and self.driver_gap_on_grid <= self.tolerance
        )


@dataclass(frozen=True)
class ComparisonReport:
    certificate: OrderingCertificate
    max_value_violation: float
    max_push_violation: float | None
    push_difference_monotone: bool | None
    tolerance: float
    vacuous: bool

    @property
    def passed(self) -> bool:
        if self.vacuous:
            return False
        ok = self.max_value_violation <= self.tolerance
        if self.max_push_violation is not None:
            ok = ok and self.max_push_violation <= self.tolerance
            ok = ok and bool(self.push_difference_monotone)
        return ok


def _driver_gap_on_grid(
    g_low: GeneratorSpec, g_high: GeneratorSpec, tree: ScenarioTree, points: int = 11
) -> float:
    ts = np.linspace(0.0, tree.grid.horizon, points)
    ys = np.linspace(-5.0, 5.0, points)
    zs = np.linspace(-5.0, 5.0, points)
    yy, zz = np.meshgrid(ys, zs, indexing="ij")
    worst = 0.0
    for t in ts:
        low = np.asarray(g_low.evaluate(float(t), yy, zz), dtype=float)
        high = np.asarray(g_high.evaluate(float(t), yy, zz), dtype=float)
        worst = max(worst, float(np.max(low - high)))
    return worst


def _driver_gap_on_solution(
    g_low: GeneratorSpec, g_high: GeneratorSpec, sol: RbsdeSolution
) -> float:
    tree = sol.y.tree
    worst = 0.0
    for i in range(tree.steps + 1):
        t = tree.grid.time(i)
        y, z = sol.y.level(i), sol.z.level(i)
        low = np.asarray(g_low.evaluate(t, y, z, level=i, tree=tree), dtype=float)
        high = np.asarray(g_high.evaluate(t, y, z, level=i, tree=tree), dtype=float)
        gap = float(np.max(low - high)) if low.size else 0.0
        worst = max(worst, gap)
    return worst


def check_comparison(
    low: RbsdeProblem, high: RbsdeProblem, *, tolerance: float = COMPARISON_TOL
) -> ComparisonReport:
    """Solve both problems and measure the ordering of their values.

    The input orderings (terminal, driver, obstacle) are certified by
    sampling; when any of them fails the report is produced anyway but
    marked vacuous.
    """
    if low.tree != high.tree:
        raise TreeMismatch("comparison needs a common tree")
    sol_low = solve_rbsde(low.tree, low.generator, low.terminal, low.obstacle)
    sol_high = solve_rbsde(high.tree, high.generator, high.terminal, high.obstacle)

    # The leaf extension is constant along post-stop paths, so ordering at
    # the last level is ordering of the terminal data themselves.
    last = low.tree.steps
    xi_gap = float(np.max(low.terminal.extended[last] - high.terminal.extended[last]))
    s_gap = max(
        float(np.max(low.obstacle.process.level(i) - high.obstacle.process.level(i)))
        for i in range(low.tree.steps + 1)
    )
    g_sol_gap = max(
        _driver_gap_on_solution(low.generator, high.generator, sol_low),
        _driver_gap_on_solution(low.generator, high.generator, sol_high),
    )
    try:
        g_grid_gap = _driver_gap_on_grid(low.generator, high.generator, low.tree)
    except ExpressionError:
        g_grid_gap = g_sol_gap  # rule-gated drivers cannot be grid-sampled
    certificate = OrderingCertificate(
        terminal_gap=max(xi_gap, 0.0),
        obstacle_gap=max(s_gap, 0.0),
        driver_gap_on_solutions=max(g_sol_gap, 0.0),
        driver_gap_on_grid=max(g_grid_gap, 0.0),
    )

    violation = max(
        float(np.max(sol_low.y.level(i) - sol_high.y.level(i)))
        for i in range(low.tree.steps + 1)
    )
    return ComparisonReport(
        certificate=certificate,
        max_value_violation=max(violation, 0.0),
        max_push_violation=None,
        push_difference_monotone=None,
        tolerance=tolerance,
        vacuous=not certificate.established,
    )


def check_k_comparison(
    low: RbsdeProblem, high: RbsdeProblem, *, tolerance: float = COMPARISON_TOL
) -> ComparisonReport:
    """Comparison of reflection pushes for a shared obstacle.

    Under ordered terminals and drivers the lower data pushes harder:
    cumulative pushes dominate nodewise and their difference grows along
    every path.  The per-node increments certify path monotonicity, since a
    path difference is the running sum of increment differences.
    """
    same_obstacle = all(
        np.array_equal(low.obstacle.process.level(i), high.obstacle.process.level(i))
        for i in range(low.tree.steps + 1)
    )
    if not same_obstacle:
        raise TreeMismatch("push comparison needs a common obstacle")
    base = check_comparison(low, high, tolerance=tolerance)

    sol_low = solve_rbsde(low.tree, low.generator, low.terminal, low.obstacle)
    sol_high = solve_rbsde(high.tree, high.generator, high.terminal, high.obstacle)
    if sol_low.k is None or sol_high.k is None:
        raise UnsupportedTreeMode("cumulative pushes are not representable on this tree")
    push_violation = max(
        float(np.max(sol_high.k.level(i) - sol_low.k.level(i)))
        for i in range(low.tree.steps + 1)
    )
    increment_drop = max(
        float(np.max(sol_high.k_increments.level(i) - sol_low.k_increments.level(i)))
        for i in range(low.tree.steps + 1)
    )
    return ComparisonReport(
        certificate=base.certificate,
        max_value_violation=base.max_value_violation,
        max_push_violation=max(push_violation, 0.0),
        push_difference_monotone=increment_drop <= tolerance,
        tolerance=tolerance,
        vacuous=base.vacuous,
    )


# ---------------------------------------------------------------------------
# Local strict separation witness

@dataclass(frozen=True, eq=False)
class StrictWitness:
    """Stopping rule before the horizon separating the two solutions.

    ``traces`` records, per terminal path, the iterated equality-search
    levels; ``k_index`` is the first iterate that reaches the horizon with
    positive probability; ``stop_levels`` are the per-path levels of the
    returned rule; ``probability`` is the exact probability that the lower
    solution stays strictly below the higher one from the rule onward.
    """

    rule: StoppingRule
    probability: float
    traces: tuple[tuple[int, ...], ...]
    k_index: int
    stop_levels: np.ndarray


def local_strict_witness(
    low: RbsdeProblem, high: RbsdeProblem, *, tol: float = EQUALITY_TOL
) -> StrictWitness:
    """Build the separating rule from the iterated equality search.

    Starting from zero, each iterate jumps half of the remaining time
    forward (rounded up to the grid so it strictly advances) and looks for
    the next equality of the two solutions; reaching the horizon with
    positive probability pins the iterate whose predecessor midpoint
    (rounded down to the grid) is the witness.
    """
    tree = low.tree
    if tree != high.tree:
        raise TreeMismatch("witness construction needs a common tree")
    if tree.mode is not TreeMode.FULL_BINARY:
        raise UnsupportedTreeMode("witness construction walks paths; use a full-binary tree")
    if low.generator.expr != high.generator.expr:
        raise ValueError("witness construction assumes a shared driver")
    for i in range(tree.steps + 1):
        if not np.array_equal(low.obstacle.process.level(i), high.obstacle.process.level(i)):
            raise ValueError("witness construction assumes a shared obstacle")

    n = tree.steps
    xi_low = low.terminal.extended[n]
    xi_high = high.terminal.extended[n]
    if bool(np.any(xi_low > xi_high + 1e-12)):
        raise ValueError("terminal values are not ordered")
    if not bool(np.any(xi_high - xi_low > tol)):
        raise NoStrictGap("terminal values agree everywhere; no strict gap to separate")

    sol_low = solve_rbsde(tree, low.generator, low.terminal, low.obstacle)
    sol_high = solve_rbsde(tree, high.generator, high.terminal, high.obstacle)
    gap_levels = [sol_high.y.level(i) - sol_low.y.level(i) for i in range(n + 1)]
    # per-leaf equality table, leaves x levels
    equal = np.empty((1 << n, n + 1), dtype=bool)
    for i in range(n + 1):
        equal[:, i] = np.repeat(gap_levels[i] <= tol, 1 << (n - i))

    traces: list[tuple[int, ...]] = []
    for leaf in range(1 << n):
        trace = [0]
        current = 0
        while current < n:
            threshold = current + math.ceil((n - current) / 2)
            hits = np.nonzero(equal[leaf, threshold:])[0]
            nxt = threshold + int(hits[0]) if hits.size else n
            trace.append(nxt)
            current = nxt
        traces.append(tuple(trace))

    def iterate_level(trace: tuple[int, ...], k: int) -> int:
        return trace[min(k - 1, len(trace) - 1)]

    k_index = None
    max_len = max(len(t) for t in traces)
    for k in range(1, max_len + 1):
        if any(iterate_level(t, k) == n for t in traces):
            k_index = k
            break
    if k_index is None or k_index < 2:
        raise WitnessConstructionFailed("equality iteration never reached the horizon")

    base_levels = np.array([iterate_level(t, k_index - 1) for t in traces])
    if bool(np.any(base_levels >= n)):
        raise WitnessConstructionFailed("predecessor iterate already sits at the horizon")
    stop_levels = base_levels + (n - base_levels) // 2

    flags = [np.zeros(tree.level_size(i), dtype=bool) for i in range(n + 1)]
    for leaf, level in enumerate(stop_levels):
        flags[level][leaf >> (n - level)] = True
    rule = StoppingRule(tree, flags)
    if not np.array_equal(rule.leaf_stop_levels, stop_levels):
        raise WitnessConstructionFailed("separating rule is not first-hit consistent")

    strict = [gap > tol for gap in gap_levels]
    probability = event_probability(rule, strict)
    if probability <= 0.0:
        raise WitnessConstructionFailed("separation event has zero probability")
    if bool(np.any(stop_levels >= n)):
        raise WitnessConstructionFailed("witness rule must stop strictly before the horizon")
    return StrictWitness(
        rule=rule,
        probability=probability,
        traces=tuple(traces),
        k_index=k_index,
        stop_levels=stop_levels,
    )


# ---------------------------------------------------------------------------
# Closed-form counterexample solutions

class ClosedFormCase(Enum):
    """The four closed-form reflected solutions with affine obstacle 1 - 2t."""

    CONST_DRIVER_LOW_TERMINAL = "const-driver-low"
    CONST_DRIVER_HIGH_TERMINAL = "const-driver-high"
    ZERO_DRIVER_LOW_TERMINAL = "zero-driver-low"
    ZERO_DRIVER_HIGH_TERMINAL = "zero-driver-high"


@dataclass(frozen=True)
class ClosedFormSolution:
    """Piecewise closed form on [0, 1]: value, coefficient, push, contact."""

    driver_value: float
    terminal_value: float
    contact_time: float
    value_slope_after: float
    value_intercept_after: float
    push_rate: float

    def value(self, t):
        t = np.asarray(t, dtype=float)
        return np.where(
            t <= self.contact_time,
            1.0 - 2.0 * t,
            self.value_intercept_after + self.value_slope_after * t,
        )

    def coefficient(self, t):
        return np.zeros_like(np.asarray(t, dtype=float))

    def push(self, t):
        t = np.asarray(t, dtype=float)
        return self.push_rate * np.minimum(t, self.contact_time)

    def obstacle(self, t):
        return 1.0 - 2.0 * np.asarray(t, dtype=float)

    @property
    def push_plateau(self) -> float:
        return self.push_rate * self.contact_time


_CLOSED_FORMS = {
    ClosedFormCase.CONST_DRIVER_LOW_TERMINAL: ClosedFormSolution(
        driver_value=1.0 / 3.0,
        terminal_value=1.0 / 3.0,
        contact_time=1.0 / 5.0,
        value_slope_after=-1.0 / 3.0,
        value_intercept_after=2.0 / 3.0,
        push_rate=5.0 / 3.0,
    ),
    ClosedFormCase.CONST_DRIVER_HIGH_TERMINAL: ClosedFormSolution(
        driver_value=1.0 / 3.0,
        terminal_value=1.0 / 2.0,
        contact_time=1.0 / 10.0,
        value_slope_after=-1.0 / 3.0,
        value_intercept_after=5.0 / 6.0,
        push_rate=5.0 / 3.0,
    ),
    ClosedFormCase.ZERO_DRIVER_LOW_TERMINAL: ClosedFormSolution(
        driver_value=0.0,
        terminal_value=1.0 / 3.0,
        contact_time=1.0 / 3.0,
        value_slope_after=0.0,
        value_intercept_after=1.0 / 3.0,
        push_rate=2.0,
    ),
    ClosedFormCase.ZERO_DRIVER_HIGH_TERMINAL: ClosedFormSolution(
        driver_value=0.0,
        terminal_value=1.0 / 2.0,
        contact_time=1.0 / 4.0,
        value_slope_after=0.0,
        value_intercept_after=1.0 / 2.0,
        push_rate=2.0,
    ),
}


def closed_form_example(case: ClosedFormCase) -> ClosedFormSolution:
    """Exact piecewise solution for one of the four counterexample data sets."""
    return _CLOSED_FORMS[case]


def counterexample_problem(tree: ScenarioTree, case: ClosedFormCase) -> RbsdeProblem:
    """Lattice data matching one closed-form case on the unit horizon."""
    if not math.isclose(tree.grid.horizon, 1.0):
        raise ValueError("counterexample data lives on the unit horizon")
    form = _CLOSED_FORMS[case]
    generator = GeneratorSpec.constant(form.driver_value)
    terminal = TerminalCondition.constant(tree, form.terminal_value)
    obstacle = ObstacleSpec(AdaptedProcess.from_time_function(tree, lambda t: 1.0 - 2.0 * t))
    return RbsdeProblem(generator, terminal, obstacle)


# ---------------------------------------------------------------------------
# Obstacles that keep the reflection off

def dominating_driver(lipschitz: float) -> GeneratorSpec:
    """Driver ``-L|y| - L|z|``, the least value any L-driver vanishing at
    zero coefficient can produce."""
    expr = Add((Scale(-lipschitz, Abs(YVar())), Scale(-lipschitz, Abs(ZVar()))))
    return GeneratorSpec(expr, lipschitz)


def build_dominating_obstacle(
    tree: ScenarioTree, terminal: TerminalCondition, lipschitz: float
) -> ObstacleSpec:
    """Obstacle dominated by every plain solution with an L-bounded driver
    that vanishes at zero coefficient, for the same terminal data.

    Built as the plain solution with driver ``-L|y| - L|z|``.  Reflecting
    any such driver against it leaves the push identically zero, which is
    what reduces reflected comparisons to plain ones.
    """
    aux = solve_bsde(tree, dominating_driver(lipschitz), terminal)
    return ObstacleSpec(aux.y)


def floor_driver(
    g_first: GeneratorSpec, g_second: GeneratorSpec, lipschitz: float
) -> GeneratorSpec:
    """Driver ``min(g1(t,0,0), g2(t,0,0)) - L|y| - L|z|``."""
    expr = Add(
        (
            Min(AtZeroState(g_first.expr), AtZeroState(g_second.expr)),
            Scale(-lipschitz, Abs(YVar())),
            Scale(-lipschitz, Abs(ZVar())),
        )
    )
    return GeneratorSpec(expr, lipschitz)


def build_floor_obstacle(
    tree: ScenarioTree,
    terminal: TerminalCondition,
    rule: StoppingRule,
    g_first: GeneratorSpec,
    g_second: GeneratorSpec,
    lipschitz: float,
) -> ObstacleSpec:
    """Floor obstacle for two integrable drivers up to a stopping rule.

    Equal to the terminal data beyond the rule (frozen along each path) and
    to the plain solution with the floor driver before it; both plain
    solutions dominate it, so reflecting against it adds no push.
    """
    if terminal.rule is not rule and not (
        terminal.rule.precedes(rule) and rule.precedes(terminal.rule)
    ):
        raise RuleOrderViolated("terminal data must be measurable at the freezing rule")
    aux = solve_bsde(tree, floor_driver(g_first, g_second, lipschitz), terminal)
    return ObstacleSpec(aux.y)


# ---------------------------------------------------------------------------
# Boundary examples for the converse theorems

@dataclass(frozen=True)
class DriverOrderingSite:
    t: float
    y: float
    z: float
    gap: float


@dataclass(frozen=True)
class IncomparableDriverReport:
    """Ordered reflected values from drivers that are not pointwise ordered."""

    root_low: float
    root_high: float
    ordering_holds: bool
    sites_low_above_high: tuple[DriverOrderingSite, ...]
    sites_high_above_low: tuple[DriverOrderingSite, ...]

    @property
    def incomparable(self) -> bool:
        return bool(self.sites_low_above_high) and bool(self.sites_high_above_low)


def ramp_plateau_driver(horizon: float) -> GeneratorSpec:
    """Time-only driver: ramps to T/2 over the first half, then holds."""
    half = horizon / 2.0
    return GeneratorSpec(PiecewiseTime((TimeVar(), Const(half)), (half,)), 0.0)


def plateau_ramp_driver(horizon: float) -> GeneratorSpec:
    """Time-only driver: holds T/2 over the first half, then ramps to zero."""
    half = horizon / 2.0
    expr = PiecewiseTime(
        (Const(half), Add((Const(horizon), Scale(-1.0, TimeVar())))), (half,)
    )
    return GeneratorSpec(expr, 0.0)


def incomparable_driver_probe(
    tree: ScenarioTree,
    terminal: TerminalCondition,
    obstacle: ObstacleSpec,
    *,
    tolerance: float = 1e-12,
) -> IncomparableDriverReport:
    """Reflected values stay ordered for the ramp/plateau driver pair even
    though neither driver dominates the other pointwise.

    Time integrals of both drivers agree at the root, and the one-sided
    Riemann sum orders the lattice values, so the root ordering holds with a
    strict margin of order dt.
    """
    g_low = ramp_plateau_driver(tree.grid.horizon)
    g_high = plateau_ramp_driver(tree.grid.horizon)
    root_low = solve_rbsde(tree, g_low, terminal, obstacle).y.root()
    root_high = solve_rbsde(tree, g_high, terminal, obstacle).y.root()

    horizon = tree.grid.horizon
    sites_low: list[DriverOrderingSite] = []
    sites_high: list[DriverOrderingSite] = []
    for t in np.linspace(0.0, horizon, 41):
        lo = float(np.asarray(g_low.evaluate(float(t), 0.0, 0.0)))
        hi = float(np.asarray(g_high.evaluate(float(t), 0.0, 0.0)))
        if lo > hi + tolerance:
            sites_low.append(DriverOrderingSite(float(t), 0.0, 0.0, lo - hi))
        elif hi > lo + tolerance:
            sites_high.append(DriverOrderingSite(float(t), 0.0, 0.0, hi - lo))
    return IncomparableDriverReport(
        root_low=root_low,
        root_high=root_high,
        ordering_holds=root_low <= root_high + tolerance,
        sites_low_above_high=tuple(sites_low),
        sites_high_above_low=tuple(sites_high),
    )


def masked_driver(slope: float, threshold: float) -> GeneratorSpec:
    """Driver ``min(slope * (y - threshold)^-, |z|)``.

    Vanishes once the value stays at or above the threshold, which is what
    an obstacle at the threshold forces; the declared constant is
    ``max(slope, 1)``.
    """
    expr = Min(
        Scale(slope, NegPart(Add((YVar(), Const(-threshold))))),
        Abs(ZVar()),
    )
    return GeneratorSpec(expr, max(slope, 1.0))


@dataclass(frozen=True)
class MaskedDriverReport:
    """Equality of reflected solutions for drivers masked by the obstacle."""

    max_value_gap: float
    equal_above_threshold_gap: float
    disagreement_sites: tuple[DriverOrderingSite, ...]
    tolerance: float

    @property
    def values_agree(self) -> bool:
        return self.max_value_gap <= self.tolerance

    @property
    def drivers_disagree_below(self) -> bool:
        return bool(self.disagreement_sites)


def masked_driver_probe(
    tree: ScenarioTree,
    slope_low_cut: float,
    cut_low: float,
    slope_high_cut: float,
    cut_high: float,
    terminal_family: Sequence[TerminalCondition],
    *,
    tolerance: float = 1e-12,
) -> MaskedDriverReport:
    """With the obstacle pinned at the higher cut, both masked drivers
    vanish along their solutions, so every reflected solution pair agrees at
    every node even though the drivers differ below the cut.
    """
    if not (cut_low < cut_high):
        raise ValueError("the first cut must sit strictly below the second")
    if not (slope_low_cut > slope_high_cut > 0.0):
        raise ValueError("slopes must be positive and strictly ordered")
    g_low_cut = masked_driver(slope_low_cut, cut_low)
    g_high_cut = masked_driver(slope_high_cut, cut_high)
    obstacle = ObstacleSpec(AdaptedProcess.constant(tree, cut_high), bound=cut_high)

    worst = 0.0
    for terminal in terminal_family:
        sol_a = solve_rbsde(tree, g_low_cut, terminal, obstacle)
        sol_b = solve_rbsde(tree, g_high_cut, terminal, obstacle)
        for i in range(tree.steps + 1):
            worst = max(worst, float(np.max(np.abs(sol_a.y.level(i) - sol_b.y.level(i)))))

    above_gap = 0.0
    sites: list[DriverOrderingSite] = []
    ts = np.linspace(0.0, tree.grid.horizon, 5)
    ys = np.linspace(cut_high, cut_high + 4.0, 9)
    ys_below = np.linspace(cut_high - 3.0, cut_high - 1e-3, 9)
    zs = np.linspace(-3.0, 3.0, 9)
    for t in ts:
        for z in zs:
            a = np.asarray(g_low_cut.evaluate(float(t), ys, float(z)), dtype=float)
            b = np.asarray(g_high_cut.evaluate(float(t), ys, float(z)), dtype=float)
            above_gap = max(above_gap, float(np.max(np.abs(a - b))))
            a_b = np.asarray(g_low_cut.evaluate(float(t), ys_below, float(z)), dtype=float)
            b_b = np.asarray(g_high_cut.evaluate(float(t), ys_below, float(z)), dtype=float)
            diff = np.abs(a_b - b_b)
            idx = int(np.argmax(diff))
            if diff[idx] > tolerance:
                sites.append(
                    DriverOrderingSite(float(t), float(ys_below[idx]), float(z), float(diff[idx]))
                )
    return MaskedDriverReport(
        max_value_gap=worst,
        equal_above_threshold_gap=above_gap,
        disagreement_sites=tuple(sites),
        tolerance=tolerance,
    )


# ---------------------------------------------------------------------------
# Converse probe: solution order against driver order

@dataclass(frozen=True, eq=False)
class ProbeFamily:
    """Stopping rules, terminal builders, and the sampling region."""

    rules: tuple[StoppingRule, ...]
    terminal_builders: tuple[Callable[[StoppingRule], TerminalCondition], ...]
    y_low: float
    y_high: float
    z_low: float = -5.0
    z_high: float = 5.0
    samples: int = 11

    @classmethod
    def default(cls, tree: ScenarioTree, bound: float) -> ProbeFamily:
        """Constants above the bound plus walk lifts, at root / mid / horizon rules."""
        mid = StoppingRule(
            tree,
            [np.abs(tree.brownian_level(i)) >= 1.0 for i in range(tree.steps + 1)],
        )
        rules = (StoppingRule.root(tree), mid, StoppingRule.terminal(tree))
        builders: list[Callable[[StoppingRule], TerminalCondition]] = []
        for c in np.arange(bound, bound + 3.0 + 1e-9, 0.5):
            builders.append(
                lambda rule, c=float(c): TerminalCondition.constant(tree, c, rule=rule)
            )
        builders.append(
            lambda rule: TerminalCondition.at_rule(
                tree, rule, lambda i, b: bound + np.abs(b)
            )
        )
        # one lift favouring each walk direction, so coefficient-sensitive
        # drivers cannot slip through with one-sided data
        builders.append(
            lambda rule: TerminalCondition.at_rule(
                tree, rule, lambda i, b: bound + np.maximum(b, 0.0)
            )
        )
        builders.append(
            lambda rule: TerminalCondition.at_rule(
                tree, rule, lambda i, b: bound + np.maximum(-b, 0.0)
            )
        )
        return cls(
            rules=rules,
            terminal_builders=tuple(builders),
            y_low=bound,
            y_high=bound + 5.0,
        )


@dataclass(frozen=True)
class ConverseProbeReport:
    """Verdicts for solution ordering (A) and driver ordering (B).

    The falsification flag is raised only when the solution ordering holds
    across the whole family while the sampled driver ordering fails by more
    than the discretisation allowance; at lattice scale that combination
    indicates a solver defect, not new mathematics.
    """

    value_ordering_holds: bool
    max_value_violation: float
    driver_ordering_holds: bool
    max_driver_gap: float
    violation_sites: tuple[DriverOrderingSite, ...]
    allowance: float
    falsification_flag: bool


def converse_probe(
    tree: ScenarioTree,
    g_upper: GeneratorSpec,
    g_lower: GeneratorSpec,
    obstacle: ObstacleSpec,
    family: ProbeFamily | None = None,
    *,
    tolerance: float = COMPARISON_TOL,
) -> ConverseProbeReport:
    """Check that ordered conditional reflected values imply ordered drivers.

    Verdict A holds when the first driver's conditional values dominate the
    second's for every family member and every ordered rule pair.  Verdict B
    holds when the first driver dominates the second on the sample region:
    values above the obstacle bound, or every value when both drivers
    ignore the value variable.
    """
    if family is None:
        if obstacle.bound is None:
            raise ValueError("default probe family needs an obstacle bound")
        family = ProbeFamily.default(tree, obstacle.bound)

    value_violation = 0.0
    for builder in family.terminal_builders:
        for sigma in family.rules:
            terminal = builder(sigma)
            sol_upper = solve_rbsde(tree, g_upper, terminal, obstacle)
            sol_lower = solve_rbsde(tree, g_lower, terminal, obstacle)
            for tau in family.rules:
                if not tau.precedes(sigma):
                    continue
                upper = read_at_rule(sol_upper.y, tau)
                lower = read_at_rule(sol_lower.y, tau)
                for key, hi in upper.items():
                    value_violation = max(value_violation, lower[key] - hi)

    y_free = g_upper.is_y_free and g_lower.is_y_free
    ys = (
        np.linspace(-5.0, 5.0, family.samples)
        if y_free
        else np.linspace(family.y_low, family.y_high, family.samples)
    )
    zs = np.linspace(family.z_low, family.z_high, family.samples)
    ts = np.linspace(0.0, tree.grid.horizon, family.samples)
    yy, zz = np.meshgrid(ys, zs, indexing="ij")
    driver_gap = 0.0
    sites: list[DriverOrderingSite] = []
    for t in ts:
        hi = np.asarray(g_upper.evaluate(float(t), yy, zz), dtype=float)
        lo = np.asarray(g_lower.evaluate(float(t), yy, zz), dtype=float)
        gap = np.broadcast_to(lo - hi, yy.shape)
        idx = np.unravel_index(int(np.argmax(gap)), yy.shape)
        if float(gap[idx]) > driver_gap:
            driver_gap = float(gap[idx])
            if driver_gap > tolerance:
                sites.append(
                    DriverOrderingSite(
                        float(t), float(yy[idx]), float(zz[idx]), driver_gap
                    )
                )

    allowance = 10.0 * tree.grid.dt * max(g_upper.lipschitz, g_lower.lipschitz)
    a_holds = value_violation <= tolerance
    b_holds = driver_gap <= tolerance
    return ConverseProbeReport(
        value_ordering_holds=a_holds,
        max_value_violation=value_violation,
        driver_ordering_holds=b_holds,
        max_driver_gap=driver_gap,
        violation_sites=tuple(sites),
        allowance=allowance,
        falsification_flag=a_holds and not b_holds and driver_gap > allowance,
    )
