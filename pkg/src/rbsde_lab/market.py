"""American-option model on the lattice and market-risk-premium recovery.

The stock follows the multiplicative Euler step ``X * (1 + mu dt +-
sigma sqrt(dt))`` so it stays Markov in the walk value and recombines.  The
option price is the reflected solution with driver ``-(rate * y +
premium * z)`` against the payoff obstacle; the sign comes from moving the
financing term to the driver side of the backward equation, and getting it
wrong is the classic implementation error, so it is spelled out here once.

An independent check prices the same contract by the classical risk-neutral
dynamic program with one-step weights ``(1 -+ premium sqrt(dt)) / 2``; on a
common tree the implicit affine driver step and the discounted reweighted
average are algebraically the same number, which the pricing tests pin to
1e-10.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import Sequence

import numpy as np
from scipy.optimize import minimize_scalar

from .bsde import TerminalCondition
from .errors import NoBracket, PositivityViolated, ProbabilityOutOfRange
from .generators import Add, GeneratorSpec, Scale, YVar, ZVar
from .lattice import AdaptedProcess, ScenarioTree, StoppingRule
from .rbsde import ObstacleSpec, RbsdeSolution, exercise_rule, solve_rbsde


class PayoffKind(Enum):
    CALL = "call"
    PUT = "put"


@dataclass(frozen=True)
class MarketModel:
    """Stock and contract parameters; the premium is always derived."""

    spot: float
    drift: float
    volatility: float
    rate: float
    strike: float
    kind: PayoffKind = PayoffKind.CALL

    def __post_init__(self):
        if not self.spot > 0.0:
            raise ValueError(f"spot must be positive, got {self.spot!r}")
        if not self.volatility > 0.0:
            raise PositivityViolated(
                f"volatility must be positive, got {self.volatility!r}"
            )
        if self.strike < 0.0:
            raise ValueError(f"strike must be nonnegative, got {self.strike!r}")

    @property
    def premium(self) -> float:
        """Market price of risk: excess drift per unit of volatility."""
        return (self.drift - self.rate) / self.volatility

    def payoff(self, x):
        if self.kind is PayoffKind.CALL:
            return np.maximum(np.asarray(x, dtype=float) - self.strike, 0.0)
        return np.maximum(self.strike - np.asarray(x, dtype=float), 0.0)


def simulate_stock(tree: ScenarioTree, model: MarketModel) -> AdaptedProcess:
    """Multiplicative Euler stock on the tree; rejects non-positive factors."""
    dt = tree.grid.dt
    up = 1.0 + model.drift * dt + model.volatility * tree.sqrt_dt
    down = 1.0 + model.drift * dt - model.volatility * tree.sqrt_dt
    if model.volatility * tree.sqrt_dt >= 1.0 or down <= 0.0 or up <= 0.0:
        raise PositivityViolated(
            f"step factors ({up:.6g}, {down:.6g}) must stay positive; "
            "refine the grid or lower the volatility"
        )
    levels = []
    for i in range(tree.steps + 1):
        ups = tree.up_counts(i)
        levels.append(model.spot * up**ups * down ** (i - ups))
    return AdaptedProcess(tree, levels)


def pricing_driver(model: MarketModel) -> GeneratorSpec:
    """Affine driver ``-(rate * y + premium * z)`` with its natural constant."""
    expr = Add((Scale(-model.rate, YVar()), Scale(-model.premium, ZVar())))
    return GeneratorSpec(expr, abs(model.rate) + abs(model.premium))


@dataclass(frozen=True, eq=False)
class AmericanPrice:
    value: float
    solution: RbsdeSolution
    exercise: StoppingRule
    stock: AdaptedProcess


def price_american_rbsde(
    tree: ScenarioTree, model: MarketModel, stock: AdaptedProcess | None = None
) -> AmericanPrice:
    """Reflected-solver price of the American contract on this tree.

    ``stock`` may carry a pre-simulated path process for exactly this tree
    and model (strike aside); strike families reuse one simulation that way.
    """
    if stock is None:
        stock = simulate_stock(tree, model)
    payoff = AdaptedProcess(
        tree, [model.payoff(stock.level(i)) for i in range(tree.steps + 1)]
    )
    obstacle = ObstacleSpec(payoff)
    terminal = TerminalCondition.from_leaf_values(tree, payoff.level(tree.steps))
    solution = solve_rbsde(tree, pricing_driver(model), terminal, obstacle)
    return AmericanPrice(
        value=solution.y.root(),
        solution=solution,
        exercise=exercise_rule(solution, obstacle),
        stock=stock,
    )


def price_american_riskneutral_dp(tree: ScenarioTree, model: MarketModel) -> float:
    """Classical binomial dynamic program under the reweighted step measure."""
    theta_step = model.premium * tree.sqrt_dt
    if not -1.0 < theta_step < 1.0:
        raise ProbabilityOutOfRange(
            f"premium * sqrt(dt) = {theta_step:.6g} leaves (-1, 1); refine the grid"
        )
    q_up = (1.0 - theta_step) / 2.0
    q_down = (1.0 + theta_step) / 2.0
    discount = 1.0 + model.rate * tree.grid.dt
    stock = simulate_stock(tree, model)
    values = model.payoff(stock.level(tree.steps))
    for i in range(tree.steps - 1, -1, -1):
        up, down = tree.child_values(values)
        continuation = (q_up * up + q_down * down) / discount
        values = np.maximum(model.payoff(stock.level(i)), continuation)
    return float(values[0])


def price_european_dp(tree: ScenarioTree, model: MarketModel) -> float:
    """Same dynamic program without early exercise; used as a floor check."""
    theta_step = model.premium * tree.sqrt_dt
    if not -1.0 < theta_step < 1.0:
        raise ProbabilityOutOfRange(
            f"premium * sqrt(dt) = {theta_step:.6g} leaves (-1, 1); refine the grid"
        )
    q_up = (1.0 - theta_step) / 2.0
    q_down = (1.0 + theta_step) / 2.0
    discount = 1.0 + model.rate * tree.grid.dt
    stock = simulate_stock(tree, model)
    values = model.payoff(stock.level(tree.steps))
    for _ in range(tree.steps):
        up, down = tree.child_values(values)
        values = (q_up * up + q_down * down) / discount
    return float(values[0])


def price_strike_family(
    tree: ScenarioTree, model: MarketModel, strikes: Sequence[float]
) -> list[tuple[float, float]]:
    """Price the contract across strikes, everything else held fixed."""
    stock = simulate_stock(tree, model)
    out = []
    for strike in strikes:
        altered = MarketModel(
            spot=model.spot,
            drift=model.drift,
            volatility=model.volatility,
            rate=model.rate,
            strike=float(strike),
            kind=model.kind,
        )
        out.append((float(strike), price_american_rbsde(tree, altered, stock=stock).value))
    return out


@dataclass(frozen=True)
class ThetaRecovery:
    theta_hat: float
    objective: float
    iterations: int
    evaluations: int


DEFAULT_THETA_BRACKET = (-3.0, 3.0)
_SCAN_SPACING = 0.01
_ZOOM_FACTOR = 10.0
_TARGET_WIDTH = 1e-11


def recover_theta(
    tree: ScenarioTree,
    observed: Sequence[tuple[float, float]],
    *,
    spot: float,
    volatility: float,
    rate: float,
    kind: PayoffKind = PayoffKind.CALL,
    bracket: tuple[float, float] = DEFAULT_THETA_BRACKET,
) -> ThetaRecovery:
    """Recover the market-risk premium from observed (strike, price) pairs.

    A candidate premium maps to the drift ``rate + volatility * premium``;
    the whole strike family is repriced on the same tree and the squared
    pricing error is minimised.  On a lattice the pricing map is nearly
    invariant under the premium (the step reweighting undoes the drift up to
    O(dt)), so the objective is small and rippled by payoff kinks crossing
    nodes; a single coarse bracketing would stall in a ripple.  The search
    therefore scans the bracket finely, zooms deterministically on the best
    point seen, and finishes with a bounded minimiser, keeping the best
    evaluation overall.
    """
    if not observed:
        raise NoBracket("need at least one observed price")
    strikes = [k for k, _ in observed]
    targets = np.array([p for _, p in observed], dtype=float)
    evaluations = 0
    best_theta = 0.0
    best_value = math.inf

    def objective(theta: float) -> float:
        nonlocal evaluations, best_theta, best_value
        evaluations += 1
        model = MarketModel(
            spot=spot,
            drift=rate + volatility * float(theta),
            volatility=volatility,
            rate=rate,
            strike=strikes[0],
            kind=kind,
        )
        prices = np.array([p for _, p in price_strike_family(tree, model, strikes)])
        value = float(np.sum((prices - targets) ** 2))
        if value < best_value:
            best_value = value
            best_theta = float(theta)
        return value

    lo, hi = bracket
    count = max(int(round((hi - lo) / _SCAN_SPACING)) + 1, 3)
    grid = np.linspace(lo, hi, count)
    values = [objective(float(theta)) for theta in grid]
    if int(np.argmin(values)) in (0, count - 1):
        raise NoBracket("objective is smallest at the bracket edge; widen the bracket")

    width = float(grid[1] - grid[0])
    while width > _TARGET_WIDTH:
        center = best_theta
        lo_z = max(lo, center - width)
        hi_z = min(hi, center + width)
        for theta in np.linspace(lo_z, hi_z, 21):
            objective(float(theta))
        width /= _ZOOM_FACTOR

    polish = minimize_scalar(
        objective,
        bounds=(max(lo, best_theta - 1e-8), min(hi, best_theta + 1e-8)),
        method="bounded",
        options={"xatol": 1e-12, "maxiter": 200},
    )
    if float(polish.fun) <= best_value:
        best_value = float(polish.fun)
        best_theta = float(polish.x)
    return ThetaRecovery(
        theta_hat=best_theta,
        objective=best_value,
        iterations=evaluations,
        evaluations=evaluations,
    )
