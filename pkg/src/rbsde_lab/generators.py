"""Driver expressions ``g(t, y, z)`` over a small closed grammar.

The grammar covers constants, the variables ``t``, ``y``, ``z``, negation,
absolute value, the negative part ``max(-x, 0)``, sums, scalar multiples,
binary minima, time-piecewise selection with finitely many breakpoints, and
restriction by a stopping rule.  Expressions have a canonical prefix text
form (s-expressions) used by the CLI; rule-restricted and state-frozen
wrappers are built programmatically only.

Evaluation broadcasts over numpy arrays, which is what the level-vectorised
solvers feed in.  Expressions affine in ``y`` expose their decomposition so
the implicit solver step can be closed in one division instead of iterating.
"""

from __future__ import annotations

import math
import re
from bisect import bisect_right
from dataclasses import dataclass, field, replace
from typing import Iterable

import numpy as np

from .errors import ExpressionError
from .lattice import ScenarioTree, StoppingRule


@dataclass(frozen=True)
class EvalContext:
    """Point(s) at which an expression is evaluated.

    ``level``/``tree`` give node identity and are required only by
    rule-restricted expressions; plain ``(t, y, z)`` sampling leaves them
    unset.  ``b`` carries the walk value for obstacle/terminal expressions.
    """

    t: float
    y: object = 0.0
    z: object = 0.0
    b: object | None = None
    level: int | None = None
    tree: ScenarioTree | None = None


class Expr:
    """Base expression node; subclasses are immutable dataclasses."""

    def eval(self, ctx: EvalContext):
        raise NotImplementedError

    def children(self) -> Iterable["Expr"]:
        return ()

    def y_affine(self, ctx: EvalContext):
        """Return ``(h, a)`` with value ``h + a * y``, or None if not affine."""
        return None

    def to_prefix(self) -> str:
        raise NotImplementedError

    def uses(self, kind: type) -> bool:
        if isinstance(self, kind):
            return True
        return any(c.uses(kind) for c in self.children())


def _fmt(value: float) -> str:
    return repr(float(value))


@dataclass(frozen=True)
class Const(Expr):
    value: float

    def eval(self, ctx):
        return self.value

    def y_affine(self, ctx):
        return self.value, 0.0

    def to_prefix(self):
        return _fmt(self.value)


@dataclass(frozen=True)
class TimeVar(Expr):
    def eval(self, ctx):
        return ctx.t

    def y_affine(self, ctx):
        return ctx.t, 0.0

    def to_prefix(self):
        return "t"


@dataclass(frozen=True)
class YVar(Expr):
    def eval(self, ctx):
        return ctx.y

    def y_affine(self, ctx):
        return 0.0, 1.0

    def to_prefix(self):
        return "y"


@dataclass(frozen=True)
class ZVar(Expr):
    def eval(self, ctx):
        return ctx.z

    def y_affine(self, ctx):
        return ctx.z, 0.0

    def to_prefix(self):
        return "z"


@dataclass(frozen=True)
class BrownianVar(Expr):
    """Walk value; legal in obstacle/terminal expressions only."""

    def eval(self, ctx):
        if ctx.b is None:
            raise ExpressionError("expression uses 'b' outside a state context")
        return ctx.b

    def to_prefix(self):
        return "b"


@dataclass(frozen=True)
class Neg(Expr):
    inner: Expr

    def eval(self, ctx):
        return -self.inner.eval(ctx)

    def children(self):
        return (self.inner,)

    def y_affine(self, ctx):
        parts = self.inner.y_affine(ctx)
        if parts is None:
            return None
        h, a = parts
        return -h, -a

    def to_prefix(self):
        return f"(neg {self.inner.to_prefix()})"


@dataclass(frozen=True)
class Abs(Expr):
    inner: Expr

    def eval(self, ctx):
        return np.abs(self.inner.eval(ctx))

    def children(self):
        return (self.inner,)

    def y_affine(self, ctx):
        if self.inner.uses(YVar):
            return None
        return np.abs(self.inner.eval(ctx)), 0.0

    def to_prefix(self):
        return f"(abs {self.inner.to_prefix()})"


@dataclass(frozen=True)
class NegPart(Expr):
    """Negative part ``max(-x, 0)``."""

    inner: Expr

    def eval(self, ctx):
        return np.maximum(-np.asarray(self.inner.eval(ctx)), 0.0)

    def children(self):
        return (self.inner,)

    def y_affine(self, ctx):
        if self.inner.uses(YVar):
            return None
        return np.maximum(-np.asarray(self.inner.eval(ctx)), 0.0), 0.0

    def to_prefix(self):
        return f"(npart {self.inner.to_prefix()})"


@dataclass(frozen=True)
class Add(Expr):
    terms: tuple[Expr, ...]

    def eval(self, ctx):
        total = self.terms[0].eval(ctx)
        for term in self.terms[1:]:
            total = total + term.eval(ctx)
        return total

    def children(self):
        return self.terms

    def y_affine(self, ctx):
        h_total, a_total = 0.0, 0.0
        for term in self.terms:
            parts = term.y_affine(ctx)
            if parts is None:
                return None
            h_total = h_total + parts[0]
            a_total = a_total + parts[1]
        return h_total, a_total

    def to_prefix(self):
        return "(+ " + " ".join(t.to_prefix() for t in self.terms) + ")"


@dataclass(frozen=True)
class Scale(Expr):
    factor: float
    inner: Expr

    def eval(self, ctx):
        return self.factor * self.inner.eval(ctx)

    def children(self):
        return (self.inner,)

    def y_affine(self, ctx):
        parts = self.inner.y_affine(ctx)
        if parts is None:
            return None
        h, a = parts
        return self.factor * h, self.factor * a

    def to_prefix(self):
        return f"(* {_fmt(self.factor)} {self.inner.to_prefix()})"


@dataclass(frozen=True)
class Min(Expr):
    left: Expr
    right: Expr

    def eval(self, ctx):
        return np.minimum(self.left.eval(ctx), self.right.eval(ctx))

    def children(self):
        return (self.left, self.right)

    def y_affine(self, ctx):
        if self.left.uses(YVar) or self.right.uses(YVar):
            return None
        return np.minimum(self.left.eval(ctx), self.right.eval(ctx)), 0.0

    def to_prefix(self):
        return f"(min {self.left.to_prefix()} {self.right.to_prefix()})"


@dataclass(frozen=True)
class PiecewiseTime(Expr):
    """Piece ``j`` applies on ``[bounds[j-1], bounds[j])``; last piece is open-ended."""

    pieces: tuple[Expr, ...]
    bounds: tuple[float, ...]

    def __post_init__(self):
        if len(self.pieces) != len(self.bounds) + 1:
            raise ExpressionError("piecewise needs one more piece than breakpoints")
        if any(b2 <= b1 for b1, b2 in zip(self.bounds, self.bounds[1:])):
            raise ExpressionError("piecewise breakpoints must increase strictly")

    def _select(self, t: float) -> Expr:
        return self.pieces[bisect_right(self.bounds, t)]

    def eval(self, ctx):
        return self._select(ctx.t).eval(ctx)

    def children(self):
        return self.pieces

    def y_affine(self, ctx):
        return self._select(ctx.t).y_affine(ctx)

    def to_prefix(self):
        parts = [self.pieces[0].to_prefix()]
        for bound, piece in zip(self.bounds, self.pieces[1:]):
            parts.append(_fmt(bound))
            parts.append(piece.to_prefix())
        return "(pw " + " ".join(parts) + ")"


@dataclass(frozen=True)
class AtZeroState(Expr):
    """Inner expression evaluated at ``y = 0, z = 0`` (time flows through)."""

    inner: Expr

    def eval(self, ctx):
        return self.inner.eval(replace(ctx, y=0.0, z=0.0))

    def children(self):
        return (self.inner,)

    def y_affine(self, ctx):
        return self.eval(ctx), 0.0

    def to_prefix(self):
        return f"(at00 {self.inner.to_prefix()})"


@dataclass(frozen=True, eq=False)
class ActiveBefore(Expr):
    """Inner expression gated to paths that have not yet stopped.

    The gate is 1 at a node whose path has not stopped at or before the
    node's level, 0 otherwise; this is the discrete reading of the step
    ``[t_i, t_{i+1})`` lying inside ``[0, tau)``, and it is what makes the
    restriction identities exact on the lattice.
    """

    rule: StoppingRule
    inner: Expr

    def _gate(self, ctx: EvalContext):
        if ctx.level is None or ctx.tree is None:
            raise ExpressionError("rule-restricted expressions need node context")
        if ctx.tree != self.rule.tree:
            raise ExpressionError("restriction rule lives on a different tree")
        return (~self.rule.stopped_by_level[ctx.level]).astype(float)

    def eval(self, ctx):
        return self._gate(ctx) * np.asarray(self.inner.eval(ctx))

    def children(self):
        return (self.inner,)

    def y_affine(self, ctx):
        parts = self.inner.y_affine(ctx)
        if parts is None:
            return None
        gate = self._gate(ctx)
        return gate * np.asarray(parts[0]), gate * np.asarray(parts[1])

    def to_prefix(self):
        raise ExpressionError("rule-restricted expressions have no text form")


def lipschitz_bound(expr: Expr) -> float:
    """Structural upper bound for the Lipschitz constant in ``(y, z)``."""
    if isinstance(expr, (Const, TimeVar, BrownianVar)):
        return 0.0
    if isinstance(expr, (YVar, ZVar)):
        return 1.0
    if isinstance(expr, (Neg, Abs, NegPart)):
        return lipschitz_bound(expr.inner)
    if isinstance(expr, Scale):
        return abs(expr.factor) * lipschitz_bound(expr.inner)
    if isinstance(expr, Add):
        return sum(lipschitz_bound(t) for t in expr.terms)
    if isinstance(expr, Min):
        return max(lipschitz_bound(expr.left), lipschitz_bound(expr.right))
    if isinstance(expr, PiecewiseTime):
        return max(lipschitz_bound(p) for p in expr.pieces)
    if isinstance(expr, AtZeroState):
        return 0.0
    if isinstance(expr, ActiveBefore):
        return lipschitz_bound(expr.inner)
    raise ExpressionError(f"unknown expression node {type(expr).__name__}")


# ---------------------------------------------------------------------------
# Prefix text form

_TOKEN = re.compile(r"[()]|[^\s()]+")


def parse_prefix(text: str, *, variables: frozenset[str] = frozenset({"t", "y", "z"})) -> Expr:
    """Parse the canonical prefix form; inverse of ``Expr.to_prefix``."""
    tokens = _TOKEN.findall(text)
    if not tokens:
        raise ExpressionError("empty expression")
    pos = 0

    def peek() -> str:
        if pos >= len(tokens):
            raise ExpressionError("unexpected end of expression")
        return tokens[pos]

    def take() -> str:
        nonlocal pos
        tok = peek()
        pos += 1
        return tok

    def number(tok: str) -> float:
        try:
            return float(tok)
        except ValueError:
            raise ExpressionError(f"expected a number, got {tok!r}") from None

    def expr() -> Expr:
        tok = take()
        if tok == "(":
            op = take()
            node = form(op)
            if take() != ")":
                raise ExpressionError(f"missing ')' after {op!r} form")
            return node
        if tok == ")":
            raise ExpressionError("unexpected ')'")
        if tok in variables:
            return {"t": TimeVar(), "y": YVar(), "z": ZVar(), "b": BrownianVar()}[tok]
        if tok in {"t", "y", "z", "b"}:
            raise ExpressionError(f"variable {tok!r} is not allowed here")
        return Const(number(tok))

    def form(op: str) -> Expr:
        if op == "neg":
            return Neg(expr())
        if op == "abs":
            return Abs(expr())
        if op == "npart":
            return NegPart(expr())
        if op == "at00":
            return AtZeroState(expr())
        if op == "+":
            terms = []
            while peek() != ")":
                terms.append(expr())
            if len(terms) < 2:
                raise ExpressionError("'+' needs at least two terms")
            return Add(tuple(terms))
        if op == "*":
            factor = number(take())
            return Scale(factor, expr())
        if op == "min":
            return Min(expr(), expr())
        if op == "pw":
            pieces = [expr()]
            bounds = []
            while peek() != ")":
                bounds.append(number(take()))
                pieces.append(expr())
            return PiecewiseTime(tuple(pieces), tuple(bounds))
        raise ExpressionError(f"unknown operator {op!r}")

    result = expr()
    if pos != len(tokens):
        raise ExpressionError(f"trailing tokens after expression: {tokens[pos:]!r}")
    return result


# ---------------------------------------------------------------------------
# Generator specification

@dataclass(frozen=True)
class DriverClaims:
    """Properties the author of a driver claims it satisfies."""

    lipschitz: bool = False
    integrable: bool = False
    constant_preserving: bool = False  # g(t, y, 0) = 0
    time_continuous: bool = False


@dataclass(frozen=True, eq=False)
class GeneratorSpec:
    """Evaluable driver with its declared Lipschitz constant and claims."""

    expr: Expr
    lipschitz: float
    claims: DriverClaims = field(default_factory=DriverClaims)

    def __post_init__(self):
        if not (self.lipschitz >= 0.0 and math.isfinite(self.lipschitz)):
            raise ValueError(f"lipschitz constant must be finite and >= 0, got {self.lipschitz!r}")

    @classmethod
    def constant(cls, value: float, **kwargs) -> GeneratorSpec:
        return cls(Const(float(value)), 0.0, **kwargs)

    @classmethod
    def from_prefix(cls, text: str, lipschitz: float, claims: DriverClaims | None = None) -> GeneratorSpec:
        return cls(parse_prefix(text), lipschitz, claims or DriverClaims())

    def to_prefix(self) -> str:
        return self.expr.to_prefix()

    @property
    def is_y_free(self) -> bool:
        return not self.expr.uses(YVar)

    def evaluate(self, t: float, y, z, *, level: int | None = None, tree: ScenarioTree | None = None):
        return self.expr.eval(EvalContext(t=t, y=y, z=z, level=level, tree=tree))

    def y_affine(self, t: float, z, *, level: int | None = None, tree: ScenarioTree | None = None):
        """Decomposition ``g = h + a * y`` at fixed ``(t, z)``, or None."""
        return self.expr.y_affine(EvalContext(t=t, y=0.0, z=z, level=level, tree=tree))


def restrict_generator(generator: GeneratorSpec, rule: StoppingRule) -> GeneratorSpec:
    """Gate the driver to vanish once the rule has stopped; keeps the constant."""
    return GeneratorSpec(ActiveBefore(rule, generator.expr), generator.lipschitz, generator.claims)


# ---------------------------------------------------------------------------
# Assumption checking

@dataclass(frozen=True)
class SampleSpec:
    """Sampling grid for driver checks: times on [0, t_max], box in (y, z)."""

    t_max: float
    t_count: int = 21
    y_low: float = -5.0
    y_high: float = 5.0
    y_count: int = 21
    z_low: float = -5.0
    z_high: float = 5.0
    z_count: int = 21

    def t_points(self) -> np.ndarray:
        return np.linspace(0.0, self.t_max, self.t_count)

    def y_points(self) -> np.ndarray:
        return np.linspace(self.y_low, self.y_high, self.y_count)

    def z_points(self) -> np.ndarray:
        return np.linspace(self.z_low, self.z_high, self.z_count)


@dataclass(frozen=True)
class AssumptionReport:
    """Sampled evidence for or against the claimed driver properties.

    ``max_time_jump`` is a change detector across adjacent sample times: a
    driver that genuinely varies in t will exceed the threshold even though
    it is continuous, so treat that flag as 'not constant between samples'.
    """

    declared_lipschitz: float
    claims: DriverClaims
    max_lipschitz_quotient: float
    max_abs_at_zero_z: float
    max_time_jump: float
    max_abs_at_origin: float
    lipschitz_exceeded: bool
    zero_z_exceeded: bool
    time_jump_exceeded: bool

    _THRESHOLD = 1e-9

    @property
    def claim_violations(self) -> tuple[str, ...]:
        out = []
        if self.claims.lipschitz and self.lipschitz_exceeded:
            out.append("lipschitz")
        if self.claims.constant_preserving and self.zero_z_exceeded:
            out.append("constant_preserving")
        if self.claims.time_continuous and self.time_jump_exceeded:
            out.append("time_continuous")
        return tuple(out)


def check_assumptions(generator: GeneratorSpec, sample: SampleSpec) -> AssumptionReport:
    """Sample the driver and compare against its declared properties.

    Reports (a) the largest difference quotient against the declared
    Lipschitz constant, (b) the largest ``|g(t, y, 0)|``, and (c) the largest
    jump of ``t -> g`` across adjacent sample times.  A bound counts as
    exceeded beyond 1e-9.
    """
    ts = sample.t_points()
    ys, zs = np.meshgrid(sample.y_points(), sample.z_points(), indexing="ij")
    ys, zs = ys.ravel(), zs.ravel()

    quot_max = 0.0
    zero_z_max = 0.0
    origin_max = 0.0
    dy = np.abs(ys[:, None] - ys[None, :])
    dz = np.abs(zs[:, None] - zs[None, :])
    den = dy + dz
    off_diag = den > 0.0
    values_by_t = []
    for t in ts:
        g = np.broadcast_to(np.asarray(generator.evaluate(float(t), ys, zs), dtype=float), ys.shape)
        values_by_t.append(g)
        num = np.abs(g[:, None] - g[None, :])
        quot_max = max(quot_max, float(np.max(num[off_diag] / den[off_diag])))
        g_zero = np.broadcast_to(
            np.asarray(generator.evaluate(float(t), sample.y_points(), 0.0), dtype=float),
            (sample.y_count,),
        )
        zero_z_max = max(zero_z_max, float(np.max(np.abs(g_zero))))
        origin_max = max(origin_max, abs(float(np.asarray(generator.evaluate(float(t), 0.0, 0.0)))))

    jump_max = 0.0
    for g_prev, g_next in zip(values_by_t, values_by_t[1:]):
        jump_max = max(jump_max, float(np.max(np.abs(g_next - g_prev))))

    thr = AssumptionReport._THRESHOLD
    return AssumptionReport(
        declared_lipschitz=generator.lipschitz,
        claims=generator.claims,
        max_lipschitz_quotient=quot_max,
        max_abs_at_zero_z=zero_z_max,
        max_time_jump=jump_max,
        max_abs_at_origin=origin_max,
        lipschitz_exceeded=quot_max > generator.lipschitz + thr,
        zero_z_exceeded=zero_z_max > thr,
        time_jump_exceeded=jump_max > thr,
    )
