"""Exact bookkeeping for operator classes with Sobolev coefficients.

Orders, regularities and weights are affine forms with rational coefficients in
named symbols (``n``, ``s``, ``s'``, ``m``, ...). Side conditions are decided by
Fourier-Motzkin elimination over the rationals: a condition *holds* when its
negation is infeasible together with the assumptions, *fails* when the condition
itself is, and is *undetermined* otherwise. Positive parts ``(x)_+`` are handled
by splitting on the sign of their argument.
"""

from __future__ import annotations

import ast
import itertools
import json
import re
from dataclasses import dataclass, field, replace
from enum import Enum
from fractions import Fraction
from typing import Iterable, Sequence

from .errors import InadmissibleError, NoCaseError, ParseError

Number = int | Fraction

# ---------------------------------------------------------------------------
# affine forms


def _frac(x) -> Fraction:
    if isinstance(x, Fraction):
        return x
    if isinstance(x, float):
        raise TypeError("floats are not allowed in exact arithmetic")
    return Fraction(x)


def _fmt_frac(c: Fraction) -> str:
    return str(c.numerator) if c.denominator == 1 else f"{c.numerator}/{c.denominator}"


@dataclass(frozen=True)
class Lin:
    """``const + sum coeffs[v] * v``."""

    coeffs: tuple[tuple[str, Fraction], ...] = ()
    const: Fraction = Fraction(0)

    @staticmethod
    def make(coeffs: dict | None = None, const=0) -> "Lin":
        items = tuple(sorted((k, _frac(v)) for k, v in (coeffs or {}).items() if _frac(v) != 0))
        return Lin(items, _frac(const))

    @staticmethod
    def var(name: str) -> "Lin":
        return Lin.make({name: 1})

    @staticmethod
    def num(x) -> "Lin":
        return Lin.make(None, x)

    @property
    def d(self) -> dict[str, Fraction]:
        return dict(self.coeffs)

    @property
    def symbols(self) -> set[str]:
        return {k for k, _ in self.coeffs}

    @property
    def is_const(self) -> bool:
        return not self.coeffs

    def coef(self, name: str) -> Fraction:
        return self.d.get(name, Fraction(0))

    def __add__(self, other) -> "Lin":
        other = as_lin(other)
        d = self.d
        for k, v in other.coeffs:
            d[k] = d.get(k, 0) + v
        return Lin.make(d, self.const + other.const)

    __radd__ = __add__

    def __neg__(self) -> "Lin":
        return Lin.make({k: -v for k, v in self.coeffs}, -self.const)

    def __sub__(self, other) -> "Lin":
        return self + (-as_lin(other))

    def __rsub__(self, other) -> "Lin":
        return as_lin(other) - self

    def __mul__(self, c) -> "Lin":
        c = _frac(c)
        return Lin.make({k: v * c for k, v in self.coeffs}, self.const * c)

    __rmul__ = __mul__

    def __truediv__(self, c) -> "Lin":
        return self * (1 / _frac(c))

    def subs(self, values: dict) -> "Lin":
        out = Lin.num(self.const)
        for k, v in self.coeffs:
            out = out + (as_lin(values[k]) * v if k in values else Lin.make({k: v}))
        return out

    def value(self) -> Fraction:
        if not self.is_const:
            raise ValueError(f"{self} is not a constant")
        return self.const

    def fmt(self, signed_order: bool = True, order: Sequence[str] = ("n",)) -> str:
        names = sorted(self.d, key=lambda v: (v not in order, order.index(v) if v in order else 0, v))
        parts: list[tuple[Fraction, str]] = []
        for v in names:
            c = self.coef(v)
            a = abs(c)
            if a == 1:
                body = v
            elif a.denominator == 1:
                body = f"{a.numerator}*{v}"
            elif a.numerator == 1:
                body = f"{v}/{a.denominator}"
            else:
                body = f"{a.numerator}*{v}/{a.denominator}"
            parts.append((c, body))
        if signed_order:
            # positive symbols, then the constant, then negative symbols
            parts = [p for p in parts if p[0] > 0] + [None] + [p for p in parts if p[0] < 0]
        else:
            parts = parts + [None]
        if self.const != 0 or len(parts) == 1:
            item = (self.const, _fmt_frac(abs(self.const)))
            parts = [item if p is None else p for p in parts]
        else:
            parts = [p for p in parts if p is not None]
        out = ""
        for i, (c, body) in enumerate(parts):
            if i == 0:
                out = ("-" if c < 0 else "") + body
            else:
                out += (" - " if c < 0 else " + ") + body
        return out

    def __str__(self) -> str:
        return self.fmt()

    def to_json(self) -> str:
        return self.fmt()


def as_lin(x) -> Lin:
    if isinstance(x, Lin):
        return x
    if isinstance(x, str):
        return parse_lin(x)
    return Lin.num(x)


_PRIME = "__prime"


def parse_lin(text: str) -> Lin:
    """Parse an affine expression such as ``"s' - 2*k + m/2"``."""
    src = text.strip().replace("'", _PRIME)
    try:
        tree = ast.parse(src, mode="eval")
    except SyntaxError as exc:
        raise ParseError(f"cannot parse expression {text!r}") from exc

    def walk(node) -> Lin:
        if isinstance(node, ast.Expression):
            return walk(node.body)
        if isinstance(node, ast.Constant) and isinstance(node.value, int) and not isinstance(node.value, bool):
            return Lin.num(node.value)
        if isinstance(node, ast.Name):
            return Lin.var(node.id.replace(_PRIME, "'"))
        if isinstance(node, ast.UnaryOp) and isinstance(node.op, (ast.USub, ast.UAdd)):
            v = walk(node.operand)
            return -v if isinstance(node.op, ast.USub) else v
        if isinstance(node, ast.BinOp):
            a, b = walk(node.left), walk(node.right)
            if isinstance(node.op, ast.Add):
                return a + b
            if isinstance(node.op, ast.Sub):
                return a - b
            if isinstance(node.op, ast.Mult):
                if a.is_const:
                    return b * a.const
                if b.is_const:
                    return a * b.const
                raise ParseError(f"non-linear product in {text!r}")
            if isinstance(node.op, ast.Div):
                if not b.is_const or b.const == 0:
                    raise ParseError(f"division by a non-constant or zero in {text!r}")
                return a / b.const
        raise ParseError(f"unsupported syntax in {text!r}")

    return walk(tree)


@dataclass(frozen=True)
class PExpr:
    """``base + sum c_i * (arg_i)_+``."""

    base: Lin
    pos: tuple[tuple[Fraction, Lin], ...] = ()

    @staticmethod
    def of(x) -> "PExpr":
        return x if isinstance(x, PExpr) else PExpr(as_lin(x))

    def __add__(self, other) -> "PExpr":
        o = PExpr.of(other)
        return PExpr(self.base + o.base, self.pos + o.pos)

    def __sub__(self, other) -> "PExpr":
        o = PExpr.of(other)
        return PExpr(self.base - o.base, self.pos + tuple((-c, a) for c, a in o.pos))

    def subs(self, values: dict) -> "PExpr":
        return PExpr(self.base.subs(values), tuple((c, a.subs(values)) for c, a in self.pos)).simplify()

    def simplify(self) -> "PExpr":
        base, pos = self.base, []
        for c, a in self.pos:
            if c == 0:
                continue
            if a.is_const:
                base = base + c * max(a.const, Fraction(0))
            else:
                pos.append((c, a))
        return PExpr(base, tuple(pos))

    def resolve(self, signs: Sequence[bool]) -> Lin:
        out = self.base
        for (c, a), positive in zip(self.pos, signs):
            if positive:
                out = out + a * c
        return out

    @property
    def symbols(self) -> set[str]:
        s = set(self.base.symbols)
        for _, a in self.pos:
            s |= a.symbols
        return s

    def fmt(self) -> str:
        out = self.base.fmt() if (not self.base.is_const or self.base.const != 0 or not self.pos) else ""
        for c, a in self.pos:
            term = f"({a.fmt()})_+"
            if abs(c) != 1:
                term = f"{_fmt_frac(abs(c))}*{term}"
            if not out:
                out = ("-" if c < 0 else "") + term
            else:
                out += (" - " if c < 0 else " + ") + term
        return out

    def __str__(self) -> str:
        return self.fmt()


# ---------------------------------------------------------------------------
# constraints and Fourier-Motzkin


@dataclass(frozen=True)
class Cond:
    """``expr > 0`` (strict) or ``expr >= 0``."""

    expr: PExpr
    strict: bool
    label: str = ""

    @staticmethod
    def gt(a, b, label: str = "") -> "Cond":
        return Cond(PExpr.of(a) - PExpr.of(b), True, label)

    @staticmethod
    def ge(a, b, label: str = "") -> "Cond":
        return Cond(PExpr.of(a) - PExpr.of(b), False, label)

    @staticmethod
    def lt(a, b, label: str = "") -> "Cond":
        return Cond.gt(b, a, label)

    @staticmethod
    def le(a, b, label: str = "") -> "Cond":
        return Cond.ge(b, a, label)

    def negate(self) -> "Cond":
        return Cond(PExpr(Lin.num(0)) - self.expr, not self.strict, f"not({self.label})")

    def subs(self, values: dict) -> "Cond":
        return Cond(self.expr.subs(values), self.strict, self.label)

    def __str__(self) -> str:
        return self.label or f"{self.expr} {'>' if self.strict else '>='} 0"


@dataclass(frozen=True)
class LinCond:
    expr: Lin
    strict: bool


def _fm_feasible(system: list[LinCond]) -> bool:
    """Exact feasibility over the rationals of a system of strict and non-strict inequalities."""
    rows = list(system)
    while True:
        names = set().union(*(r.expr.symbols for r in rows)) if rows else set()
        if not names:
            break
        v = min(names, key=lambda x: sum(1 for r in rows if r.expr.coef(x) != 0))
        pos = [r for r in rows if r.expr.coef(v) > 0]
        neg = [r for r in rows if r.expr.coef(v) < 0]
        rest = [r for r in rows if r.expr.coef(v) == 0]
        for p in pos:
            for q in neg:
                a, b = p.expr.coef(v), -q.expr.coef(v)
                rest.append(LinCond(p.expr * b + q.expr * a, p.strict or q.strict))
        rows = _dedupe(rest)
    for r in rows:
        c = r.expr.const
        if c < 0 or (r.strict and c == 0):
            return False
    return True


def _dedupe(rows: list[LinCond]) -> list[LinCond]:
    seen, out = set(), []
    for r in rows:
        e = r.expr
        if e.is_const:
            key = (("",), e.const > 0 or (e.const == 0 and not r.strict))
            if key in seen:
                continue
            if e.const > 0 or (e.const == 0 and not r.strict):
                seen.add(key)
                continue
            out.append(r)
            continue
        # normalize by the first coefficient's magnitude
        scale = abs(e.coeffs[0][1])
        key = (e / scale, r.strict)
        if key in seen:
            continue
        seen.add(key)
        out.append(r)
    return out


def _cases(conds: Sequence[Cond]):
    """Every sign assignment of the positive-part arguments, as linear systems."""
    args = []
    for c in conds:
        for _, a in c.expr.pos:
            if a not in args:
                args.append(a)
    for signs in itertools.product((True, False), repeat=len(args)):
        sign_of = dict(zip(args, signs))
        system = [LinCond(a, False) if s else LinCond(-a, True) for a, s in sign_of.items()]
        for c in conds:
            lin = c.expr.resolve([sign_of[a] for _, a in c.expr.pos])
            system.append(LinCond(lin, c.strict))
        yield system


def satisfiable(conds: Sequence[Cond]) -> bool:
    return any(_fm_feasible(sys) for sys in _cases([c for c in conds]))


class Status(str, Enum):
    HOLDS = "holds"
    FAILS = "fails"
    UNDETERMINED = "undetermined"


@dataclass
class Context:
    """Assumptions plus numeric values; ``n >= 1`` is always assumed."""

    assumptions: list[Cond] = field(default_factory=list)
    values: dict = field(default_factory=dict)

    def base(self) -> list[Cond]:
        out = [a.subs(self.values) for a in self.assumptions]
        if "n" not in self.values:
            out.append(Cond.ge(Lin.var("n"), 1, "n >= 1"))
        return out

    def implies(self, cond: Cond) -> bool:
        return not satisfiable(self.base() + [cond.subs(self.values).negate()])

    def status(self, cond: Cond) -> Status:
        if self.implies(cond):
            return Status.HOLDS
        if self.implies(cond.negate()):
            return Status.FAILS
        return Status.UNDETERMINED

    def with_values(self, **values) -> "Context":
        return Context(list(self.assumptions), {**self.values, **values})


# ---------------------------------------------------------------------------
# operator classes


class Flavor(str, Enum):
    SMOOTH = "Smooth"          # Psi^m
    COEF_LEFT = "CoefLeft"     # H_b^s Psi^m
    SYMBOL = "SymbolClass"     # Psi^{m;k} H_b^s


INF = None
"""Marker for infinite regularity or symbol index."""


def _fmt_opt(x) -> str:
    return "inf" if x is INF else as_lin(x).fmt()


@dataclass(frozen=True)
class Atom:
    flavor: Flavor
    m: Lin
    k: Lin | None = Lin.num(0)
    s: Lin | None = INF
    b: bool = True
    alpha: Lin = Lin.num(0)
    lam: Lin | None = None
    """Order of a smooth elliptic factor sandwiched with this atom (non-``None`` only for split remainders)."""
    lam_side: str = ""

    def __str__(self) -> str:
        psi = "bPsi" if self.b else "Psi"
        w = "" if self.alpha == Lin.num(0) else f", alpha={self.alpha}"
        if self.flavor is Flavor.SMOOTH:
            core = f"{psi}[m={self.m}]"
        elif self.flavor is Flavor.COEF_LEFT:
            core = f"Hb[{_fmt_opt(self.s)}{w}]{psi}[m={self.m}]"
        else:
            core = f"{psi}[m={self.m};k={_fmt_opt(self.k)}]Hb[{_fmt_opt(self.s)}{w}]"
        if self.lam is not None:
            lam = f"Lambda[{self.lam}]"
            core = f"{core}*{lam}" if self.lam_side == "right" else f"{lam}*{core}"
        return core

    def as_symbol_class(self) -> "Atom":
        """``H_b^s Psi^m`` sits in ``Psi^{m;k}H_b^s`` for every ``k``."""
        if self.flavor is Flavor.COEF_LEFT:
            return replace(self, flavor=Flavor.SYMBOL, k=INF)
        return self

    def subs(self, values: dict) -> "Atom":
        f = lambda x: x if x is INF else x.subs(values)  # noqa: E731
        return replace(self, m=f(self.m), k=f(self.k), s=f(self.s), alpha=f(self.alpha),
                       lam=None if self.lam is None else self.lam.subs(values))


def smooth(m, b: bool = True) -> Atom:
    return Atom(Flavor.SMOOTH, as_lin(m), INF, INF, b)


def symbol_class(m, k, s, b: bool = True, alpha=0) -> Atom:
    return Atom(Flavor.SYMBOL, as_lin(m), INF if k is INF else as_lin(k), INF if s is INF else as_lin(s),
                b, as_lin(alpha))


def coef_left(s, m, b: bool = True, alpha=0) -> Atom:
    return Atom(Flavor.COEF_LEFT, as_lin(m), INF, as_lin(s), b, as_lin(alpha))


@dataclass(frozen=True)
class OperatorClass:
    """A sum of atom classes (``intersections`` is used when several descriptions apply at once)."""

    atoms: tuple[Atom, ...] = ()
    intersections: tuple[tuple[Atom, ...], ...] = ()

    @staticmethod
    def of(*atoms: Atom) -> "OperatorClass":
        return OperatorClass(tuple(atoms))

    @staticmethod
    def meet(*atoms: Atom) -> "OperatorClass":
        return OperatorClass((), (tuple(atoms),))

    def __str__(self) -> str:
        parts = [str(a) for a in self.atoms]
        parts += [" & ".join(str(a) for a in grp) for grp in self.intersections]
        return " + ".join(parts) if parts else "0"

    def to_json(self):
        return str(self)


class Relation(str, Enum):
    SUBSET = "subset"
    SUPERSET = "superset"
    EQUAL = "equal"
    INCOMPARABLE = "incomparable"


def _ge(ctx: Context, a, b) -> Status:
    """Status of ``a >= b`` with ``INF`` treated as plus infinity."""
    if a is INF:
        return Status.HOLDS
    if b is INF:
        return Status.FAILS
    return ctx.status(Cond.ge(a, b))


def _contained(ctx: Context, x: Atom, y: Atom) -> Status:
    """Is ``x`` a subset of ``y`` per the encoded inclusions?"""
    if x.lam is not None or y.lam is not None:
        return Status.HOLDS if x == y else Status.UNDETERMINED
    if x.b is False and y.b is True:
        return Status.FAILS
    if x.flavor is Flavor.SMOOTH or y.flavor is Flavor.SMOOTH:
        if x.flavor is Flavor.SMOOTH and y.flavor is Flavor.SMOOTH:
            return _ge(ctx, y.m, x.m)
        return Status.UNDETERMINED
    if x.flavor is Flavor.SYMBOL and y.flavor is Flavor.COEF_LEFT:
        return Status.UNDETERMINED
    if y.flavor is Flavor.SYMBOL:
        x = x.as_symbol_class()
    checks = [_ge(ctx, y.m, x.m), _ge(ctx, x.s, y.s), _ge(ctx, x.alpha, y.alpha)]
    if y.flavor is Flavor.SYMBOL:
        checks.append(_ge(ctx, x.k, y.k))
    if all(c is Status.HOLDS for c in checks):
        return Status.HOLDS
    return Status.UNDETERMINED


def relation(x: Atom, y: Atom, ctx: Context | None = None) -> Relation:
    ctx = ctx or Context()
    a, b = _contained(ctx, x, y), _contained(ctx, y, x)
    if a is Status.HOLDS and b is Status.HOLDS:
        return Relation.EQUAL
    if a is Status.HOLDS:
        return Relation.SUBSET
    if b is Status.HOLDS:
        return Relation.SUPERSET
    return Relation.INCOMPARABLE


def normalize(c: OperatorClass, ctx: Context | None = None) -> OperatorClass:
    """Drop summands contained in another summand; intersections are kept as given."""
    ctx = ctx or Context()
    atoms = []
    for a in c.atoms:
        if a not in atoms:
            atoms.append(a)
    keep = []
    for i, a in enumerate(atoms):
        dominated = False
        for j, b in enumerate(atoms):
            if i == j:
                continue
            rel = relation(a, b, ctx)
            if rel is Relation.SUBSET or (rel is Relation.EQUAL and j < i):
                dominated = True
                break
        if not dominated:
            keep.append(a)
    groups = []
    for g in c.intersections:
        if g not in groups:
            groups.append(g)
    return OperatorClass(tuple(keep), tuple(groups))


# ---------------------------------------------------------------------------
# mapping


@dataclass(frozen=True)
class SpaceSpec:
    s: Lin
    r: Lin = Lin.num(0)

    @staticmethod
    def of(s, r=0) -> "SpaceSpec":
        return SpaceSpec(as_lin(s), as_lin(r))

    def __str__(self) -> str:
        return f"Hb[{self.s}, r={self.r}]"


@dataclass
class Trace:
    steps: list = field(default_factory=list)

    def add(self, rule: str, **detail) -> None:
        self.steps.append({"rule": rule, **{k: _jsonable(v) for k, v in detail.items()}})


def _jsonable(v):
    if isinstance(v, (Lin, PExpr, Atom, OperatorClass, SpaceSpec, Cond)):
        return str(v)
    if isinstance(v, Fraction):
        return _fmt_frac(v)
    if isinstance(v, Enum):
        return v.value
    if isinstance(v, dict):
        return {str(k): _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    return v


def _require(ctx: Context, cond: Cond, trace: Trace) -> None:
    st = ctx.status(cond)
    trace.add("check", condition=cond, status=st)
    if st is not Status.HOLDS:
        inst = cond.subs(ctx.values)
        raise InadmissibleError(f"needs {cond}; instantiated: {inst.expr.fmt()} "
                                f"{'>' if cond.strict else '>='} 0 ({st.value})")


def _map_atom(a: Atom, src: SpaceSpec, n, ctx: Context, trace: Trace) -> SpaceSpec:
    if a.lam is not None:
        core = replace(a, lam=None, lam_side="")
        lam = smooth(a.lam, b=True)
        chain = [lam, core] if a.lam_side == "right" else [core, lam]
        out = src
        for piece in chain:
            out = _map_atom(piece, out, n, ctx, trace)
        return out
    if a.flavor is Flavor.SMOOTH:
        trace.add("smooth", atom=a, target=SpaceSpec(src.s - a.m, src.r))
        return SpaceSpec(src.s - a.m, src.r)
    a = a.as_symbol_class()
    if a.s is not INF:
        _require(ctx, Cond(PExpr.of(a.s) - PExpr.of(src.s - a.m), False, f"s >= s' - m: {a.s} >= {src.s - a.m}"),
                 trace)
        need = PExpr(as_lin(n) / 2, ((Fraction(1), a.m - src.s),)).simplify()
        _require(ctx, Cond(PExpr.of(a.s) - need, True, f"s > n/2 + (m - s')_+: {a.s} > {need}"), trace)
    if not a.b:
        _require(ctx, Cond(PExpr.of(src.r), False, "r = 0 for a non-b atom"), trace)
        _require(ctx, Cond(PExpr.of(-src.r), False, "r = 0 for a non-b atom"), trace)
    target = SpaceSpec(src.s - a.m, src.r + a.alpha)
    trace.add("mapping", atom=a, target=target)
    return target


def _weakest(ctx: Context, targets: list[SpaceSpec]) -> SpaceSpec:
    best = targets[0]
    for t in targets[1:]:
        s_ok, r_ok = _ge(ctx, best.s, t.s), _ge(ctx, best.r, t.r)
        s_rev, r_rev = _ge(ctx, t.s, best.s), _ge(ctx, t.r, best.r)
        if s_ok is Status.HOLDS and r_ok is Status.HOLDS:
            best = t
        elif s_rev is Status.HOLDS and r_rev is Status.HOLDS:
            continue
        else:
            raise InadmissibleError(f"targets {best} and {t} cannot be ordered")
    return best


def mapping(A: OperatorClass | Atom, src: SpaceSpec, n=None, ctx: Context | None = None,
            trace: Trace | None = None) -> SpaceSpec:
    """Target space of ``A`` acting on ``src``; raises ``InadmissibleError`` naming the failing inequality."""
    ctx = ctx or Context()
    trace = trace if trace is not None else Trace()
    if isinstance(A, Atom):
        A = OperatorClass.of(A)
    if n is not None:
        ctx = ctx.with_values(n=as_lin(n))
    n_lin = ctx.values.get("n", Lin.var("n"))
    targets = [_map_atom(a, src, n_lin, ctx, trace) for a in A.atoms]
    for group in A.intersections:
        options, errors = [], []
        for a in group:
            try:
                options.append(_map_atom(a, src, n_lin, ctx, trace))
            except InadmissibleError as exc:
                errors.append(str(exc))
        if not options:
            raise InadmissibleError("; ".join(errors))
        best = options[0]
        for t in options[1:]:
            if _ge(ctx, t.s, best.s) is Status.HOLDS and _ge(ctx, t.r, best.r) is Status.HOLDS:
                best = t
        targets.append(best)
    if not targets:
        return src
    out = _weakest(ctx, targets)
    trace.add("target", target=out)
    return out


# ---------------------------------------------------------------------------
# composition


@dataclass
class CaseReport:
    case: str
    conditions: list

    @property
    def matched(self) -> bool:
        return all(st is Status.HOLDS for _, st in self.conditions)

    def failing(self) -> list[str]:
        return [f"{c} ({st.value})" for c, st in self.conditions if st is not Status.HOLDS]


@dataclass
class Composition:
    cases: list[str]
    expansion: Atom
    """Template for ``E_j`` in the symbol ``j``."""
    remainder: OperatorClass
    terms: list[Atom]
    reports: list[CaseReport]
    trace: Trace

    def to_dict(self) -> dict:
        return {"cases": self.cases, "E_j": str(self.expansion), "terms": [str(t) for t in self.terms],
                "R": str(self.remainder),
                "reports": [{"case": r.case, "matched": r.matched,
                             "conditions": [[str(c), st.value] for c, st in r.conditions]} for r in self.reports],
                "trace": self.trace.steps}


def compose(P: Atom, Q: Atom, k, k_prime=0, ctx: Context | None = None) -> Composition:
    """Expansion terms and remainder class of ``P Q`` expanded to order ``k``.

    ``k_prime`` trades remainder order against regularity where the rule allows it;
    for a smooth right factor it is the left factor's symbol index.
    """
    ctx = ctx or Context()
    trace = Trace()
    P, Q = P.as_symbol_class(), Q.as_symbol_class()
    k, kp = as_lin(k), as_lin(k_prime)
    j = Lin.var("j")
    b_both = P.b and Q.b
    alpha = P.alpha + Q.alpha
    reports, outputs = [], []

    def cond(a: Cond) -> tuple[Cond, Status]:
        return a, ctx.status(a)

    def kind(a: Atom) -> str:
        if a.flavor is Flavor.SMOOTH:
            return "smooth"
        return "inf" if a.s is INF else "finite"

    def idx_ok(a: Atom, need: Lin) -> tuple[Cond, Status]:
        label = f"symbol index {_fmt_opt(a.k)} >= {need}"
        if a.k is INF:
            return Cond.ge(0, 0, label), Status.HOLDS
        c = Cond.ge(a.k, need, label)
        return c, ctx.status(c)

    m, mq = P.m, Q.m
    head1 = [cond(Cond.ge(k, m + kp, "k >= m + k'")), cond(Cond.ge(k, kp, "k >= k'"))]
    nonneg = [cond(Cond.ge(kp, 0, "k' >= 0")), cond(Cond.ge(k, 0, "k >= 0"))]

    if kind(P) == "finite" and Q.flavor is Flavor.SYMBOL:
        n = ctx.values.get("n", Lin.var("n"))
        s, sq = P.s, Q.s
        common = nonneg + head1 + [idx_ok(P, k), cond(Cond.gt(s, n / 2, "s > n/2"))]
        plain = common + ([cond(Cond.le(s, sq - k, "s <= s' - k"))] if sq is not INF else [])
        brack = common + ([cond(Cond.le(s, sq - 2 * k + m + kp, "s <= s' - 2k + m + k'"))] if sq is not INF else [])
        E = symbol_class(m + mq - j, 0, s, b_both, alpha)
        reports.append(CaseReport("1a", plain))
        if reports[-1].matched:
            outputs.append(("1a", E, [symbol_class(mq - kp, 0, s, b_both, alpha)]))
        reports.append(CaseReport("1a'", brack))
        if reports[-1].matched:
            outputs.append(("1a'", E, [symbol_class(m + mq - k, 0, s, b_both, alpha)]))
    if kind(P) == "inf" and Q.flavor is Flavor.SYMBOL and Q.s is not INF:
        sq = Q.s
        conds = nonneg + head1 + [idx_ok(P, k)]
        reports.append(CaseReport("1b", conds))
        if reports[-1].matched:
            E = symbol_class(m + mq - j, 0, sq - j, b_both, alpha)
            outputs.append(("1b", E, [symbol_class(mq - kp, 0, sq - k, b_both, alpha),
                                      symbol_class(m + mq - k, 0, sq - 2 * k + m + kp, b_both, alpha)]))
    if kind(P) == "smooth" and Q.flavor is Flavor.SYMBOL and Q.s is not INF:
        sq = Q.s
        E = symbol_class(m + mq - j, 0, sq - j, b_both, alpha)
        reports.append(CaseReport("2a", nonneg + head1))
        if reports[-1].matched:
            outputs.append(("2a", E, [symbol_class(mq - kp, 0, sq - k, b_both, alpha),
                                      symbol_class(m + mq - k, 0, sq - 2 * k + m + kp, b_both, alpha)]))
        three = nonneg + [cond(Cond.le(k, m + kp, "k <= m + k'")), cond(Cond.ge(k, kp, "k >= k'"))]
        reports.append(CaseReport("3", three))
        if reports[-1].matched:
            core = symbol_class(mq - kp, 0, sq - k, False, alpha)
            lam = m + kp - k
            outputs.append(("3", E, [replace(core, lam=lam, lam_side="right"),
                                     replace(core, lam=lam, lam_side="left")]))
    if kind(P) == "finite" and Q.flavor is Flavor.SMOOTH:
        kP = P.k
        conds = [cond(Cond.ge(k, 0, "k >= 0"))]
        if kP is INF:
            conds.append((Cond.ge(0, 0, "k <= k' (k' = inf)"), Status.HOLDS))
        else:
            conds += [cond(Cond.le(k, kP, "k <= k'")), cond(Cond.ge(kP, m, "k' >= m"))]
        reports.append(CaseReport("2b", conds))
        if reports[-1].matched:
            E = symbol_class(m + mq - j, 0, P.s, b_both, alpha)
            outputs.append(("2b", E, [symbol_class(m + mq - k, 0, P.s, b_both, alpha)]))

    for r in reports:
        trace.add("case", case=r.case, matched=r.matched,
                  conditions=[[str(c), st.value] for c, st in r.conditions])
    if not outputs:
        detail = "; ".join(f"({r.case}) " + ", ".join(r.failing()) for r in reports) or \
            f"no rule covers {P} composed with {Q}"
        raise NoCaseError(detail)

    # split remainders from case 3 are a sum; the other cases each describe one class
    groups: list[tuple[Atom, ...]] = []
    summands: list[Atom] = []
    for name, _, rem in outputs:
        if name == "3":
            summands.extend(rem)
        else:
            groups.append(tuple(rem))
    flat = [a for g in groups for a in g]
    if summands and not groups:
        R = OperatorClass(tuple(summands))
    elif len(flat) == 1 and not summands:
        R = OperatorClass.of(flat[0])
    else:
        R = OperatorClass(tuple(summands), (tuple(flat),) if flat else ())
    E = outputs[0][1]
    terms = []
    if k.is_const:
        terms = [E.subs({"j": Lin.num(i)}) for i in range(int(k.const))]
    trace.add("result", cases=[o[0] for o in outputs], E_j=E, R=R)
    return Composition([o[0] for o in outputs], E, R, terms, reports, trace)


# ---------------------------------------------------------------------------
# thresholds


def _breakpoints(exprs: Iterable[Lin], param: str) -> set[Fraction]:
    out = set()
    for a in exprs:
        if a.symbols == {param}:
            out.add(-a.const / a.coef(param))
    return out


@dataclass(frozen=True)
class Interval:
    lo: Fraction | None
    hi: Fraction | None

    def conds(self, param: str) -> list[Cond]:
        out = []
        if self.lo is not None:
            out.append(Cond.ge(Lin.var(param), self.lo))
        if self.hi is not None:
            out.append(Cond.le(Lin.var(param), self.hi))
        return out

    def sample(self) -> Fraction:
        if self.lo is None and self.hi is None:
            return Fraction(0)
        if self.lo is None:
            return self.hi - 1
        if self.hi is None:
            return self.lo + 1
        return (self.lo + self.hi) / 2

    def split(self, points: Iterable[Fraction]) -> list["Interval"]:
        pts = sorted(p for p in set(points) if (self.lo is None or p > self.lo) and (self.hi is None or p < self.hi))
        edges = [self.lo] + pts + [self.hi]
        return [Interval(a, b) for a, b in zip(edges[:-1], edges[1:])]

    def __str__(self) -> str:
        lo = "-inf" if self.lo is None else _fmt_frac(self.lo)
        hi = "inf" if self.hi is None else _fmt_frac(self.hi)
        return f"[{lo}, {hi}]"


@dataclass(frozen=True)
class Bound:
    """``var > expr`` (strict) or ``var >= expr``."""

    expr: Lin
    strict: bool
    source: str = ""


def _resolve_in(c: Cond, region: Interval, param: str) -> Lin:
    x = region.sample()
    signs = [a.subs({param: Lin.num(x)}).const >= 0 if a.symbols <= {param} else None for _, a in c.expr.pos]
    if any(s is None for s in signs):
        raise ValueError(f"positive part in {c} depends on more than {param}")
    return c.expr.resolve(signs)


def _eliminate(system: list[tuple[Lin, bool, str]], var: str):
    """One Fourier-Motzkin step on ``var``; returns the reduced system and ``var``'s lower bounds."""
    lower, upper, rest = [], [], []
    for e, strict, src in system:
        c = e.coef(var)
        if c > 0:
            lower.append(Bound(-(e - Lin.make({var: c})) / c, strict, src))
        elif c < 0:
            upper.append(Bound((e - Lin.make({var: c})) / (-c), strict, src))
        else:
            rest.append((e, strict, src))
    for lo in lower:
        for up in upper:
            rest.append((up.expr - lo.expr, lo.strict or up.strict, f"{lo.source} & {up.source}"))
    return rest, lower, upper


def _dominates(ctx_conds: list[Cond], a: Bound, b: Bound) -> bool:
    """Does ``var > a`` (or ``>=``) imply ``var > b`` (or ``>=``) under the conditions?"""
    if a.strict or not b.strict:
        target = Cond.ge(a.expr, b.expr)
    else:
        target = Cond.gt(a.expr, b.expr)
    return not satisfiable(ctx_conds + [target.negate()])


def _max_bounds(bounds: list[Bound], region_conds: list[Cond]) -> list[Bound]:
    keep = []
    for i, b in enumerate(bounds):
        dom = False
        for j, a in enumerate(bounds):
            if i == j:
                continue
            if _dominates(region_conds, a, b) and (not _dominates(region_conds, b, a) or j < i):
                dom = True
                break
        if not dom:
            keep.append(b)
    return keep


def _piecewise_to_pos(pieces: list[tuple[Interval, Lin]], param: str) -> PExpr:
    """Write a continuous piecewise-affine function of ``param`` as ``base + sum c (b - param)_+``."""
    merged: list[tuple[Interval, Lin]] = []
    for iv, e in pieces:
        if merged and merged[-1][1] == e:
            merged[-1] = (Interval(merged[-1][0].lo, iv.hi), e)
        else:
            merged.append((iv, e))
    base = merged[-1][1]
    pos = []
    for (left_iv, left), (_, right) in zip(merged[:-1], merged[1:]):
        b = left_iv.hi
        if (left - right).subs({param: Lin.num(b)}) != Lin.num(0):
            raise ValueError(f"piecewise bound is discontinuous at {param} = {b}")
        c = right.coef(param) - left.coef(param)
        pos.append((c, Lin.make({param: -1}, b)))
    return PExpr(base, tuple(pos))


@dataclass
class ThresholdResult:
    bound: PExpr
    strict: bool
    m0: PExpr
    side_conditions: list[str]
    regions: list[dict]
    trace: Trace

    @property
    def text(self) -> str:
        return f"s {'>' if self.strict else '>='} {self.bound.fmt()}"

    def to_dict(self) -> dict:
        return {"bound": self.text, "m0": f"m0 = {self.m0.fmt()}", "side_conditions": self.side_conditions,
                "regions": self.regions, "trace": self.trace.steps}


def real_principal_constraints() -> list[Cond]:
    """Raw requirements on ``(s, stilde, m0)`` collected for the real principal type estimate."""
    s, st, m0, n = (Lin.var(v) for v in ("s", "stilde", "m0", "n"))
    half = Fraction(1, 2)
    return [
        Cond.ge(st, Fraction(3, 2) - s, "3/2 - s <= stilde"),
        Cond.le(st, s - 1, "stilde <= s - 1"),
        Cond.ge(st, (5 - m0) * half, "stilde >= (5 - m0)/2"),
        Cond(PExpr(s - n * half - 2) - PExpr(Lin.num(0), ((Fraction(1), Fraction(3, 2) - st),)), True,
             "s > n/2 + 2 + (3/2 - stilde)_+"),
        Cond.gt(s, n * half + 3 + m0 * half, "s > n/2 + 3 + m0/2"),
        Cond.ge(m0, 1, "m0 >= 1"),
    ]


def threshold_real_principal(stilde=None, n=None, constraints: list[Cond] | None = None) -> ThresholdResult:
    """Smallest admissible ``s`` after optimizing the auxiliary order ``m0 >= 1``.

    ``stilde`` and ``n`` may be rationals or ``None`` (kept symbolic).
    """
    trace = Trace()
    raw = constraints or real_principal_constraints()
    values = {}
    if stilde is not None:
        values["stilde"] = as_lin(stilde)
    if n is not None:
        values["n"] = as_lin(n)
    main_labels = {c.label for c in raw if "n" in c.expr.symbols}

    def _is_main(b: Bound) -> bool:
        return any(lbl in b.source for lbl in main_labels)

    raw = [c.subs(values) for c in raw]
    trace.add("raw", constraints=[f"{c.label}" for c in raw], values=values)
    base_conds = [] if n is not None else [Cond.ge(Lin.var("n"), 1)]
    param = "stilde"
    pos_args = [a for c in raw for _, a in c.expr.pos]
    work = [Interval(None, None)]
    if stilde is None:
        work = Interval(None, None).split(_breakpoints(pos_args, param))
    final: list[tuple[Interval, list[Bound], list[Bound]]] = []
    while work:
        iv = work.pop(0)
        region = base_conds + (iv.conds(param) if stilde is None else [])
        lin = [(_resolve_in(c, iv, param), c.strict, c.label) for c in raw]
        for e, _, _ in lin:
            if not (e.symbols <= {"s", "stilde", "m0", "n"}):
                raise ValueError(f"unexpected symbols in {e}")
        for e, _, src in lin:
            if e.coef("m0") != 0 and e.coef("s") != 0 and not (e.coef("s") > 0 > e.coef("m0")):
                raise ValueError(f"{src}: the s requirement must increase with m0")
        reduced, m0_lower, _ = _eliminate(lin, "m0")
        s_sys, s_lower, s_upper = _eliminate(reduced, "s")
        if s_upper:
            raise ValueError("unexpected upper bound on s")
        m0_best = _max_bounds(m0_lower, region)
        main_best = _max_bounds([b for b in s_lower if _is_main(b)], region)
        s_best = main_best + [b for b in _max_bounds(s_lower, region)
                              if not _is_main(b) and not any(_dominates(region, a, b) for a in main_best)]
        splits = set()
        if stilde is None:
            for group in (main_best, m0_best):
                for a, b in itertools.combinations(group, 2):
                    splits |= _breakpoints([a.expr - b.expr], param)
        pieces = iv.split(splits)
        if len(pieces) > 1:
            work = pieces + work
            continue
        if s_sys:
            trace.add("region-constraint", region=str(iv), constraints=[f"{e} {'>' if st else '>='} 0"
                                                                        for e, st, _ in s_sys])
        final.append((iv, s_best, m0_best))
        trace.add("region", region=str(iv), s_bounds=[f"{'>' if b.strict else '>='} {b.expr} [{b.source}]"
                                                       for b in s_best],
                  m0_optimum=[str(b.expr) for b in m0_best])
    final.sort(key=lambda t: (t[0].lo is not None, t[0].lo or 0))
    main_pieces, m0_pieces, sides, strict_flags = [], [], [], set()
    for iv, s_best, m0_best in final:
        n_bounds = [b for b in s_best if _is_main(b)]
        if len(n_bounds) != 1 or len(m0_best) != 1:
            raise ValueError(f"no single binding bound on {iv}")
        main_pieces.append((iv, n_bounds[0].expr))
        strict_flags.add(n_bounds[0].strict)
        m0_pieces.append((iv, m0_best[0].expr))
        for b in s_best:
            if b is not n_bounds[0] and b not in sides:
                sides.append(b)
    if len(strict_flags) != 1:
        raise ValueError("strictness differs across regions")
    bound = _piecewise_to_pos(main_pieces, param) if stilde is None else PExpr(main_pieces[0][1])
    m0 = _piecewise_to_pos(m0_pieces, param) if stilde is None else PExpr(m0_pieces[0][1])
    side_txt = []
    for b in sides:
        e = b.expr
        if e.coef(param) == 1:
            rhs = Lin.var("s") - (e - Lin.var(param))
            side_txt.append(f"{param} {'<' if b.strict else '<='} {rhs.fmt(order=('s',))}")
        else:
            side_txt.append(f"s {'>' if b.strict else '>='} {e}")
    # verify the closed form against every region
    for iv, piece in main_pieces:
        region = base_conds + (iv.conds(param) if stilde is None else [])
        diff = Cond(bound - PExpr(piece), False)
        if satisfiable(region + [diff.negate()]) or satisfiable(region + [Cond(PExpr(piece) - bound, False).negate()]):
            raise ValueError("closed form disagrees with the eliminated system")
    trace.add("closed-form", bound=bound, m0=m0, side=side_txt)
    regions = [{"stilde": str(iv), "bound": str(p), "m0": str(q)}
               for (iv, p), (_, q) in zip(main_pieces, m0_pieces)]
    return ThresholdResult(bound, strict_flags.pop(), m0, side_txt, regions, trace)


def regularity_self_consistency(margin=7) -> dict:
    """Check that ``k > n/2 + margin`` gives ``s = k``, ``stilde = k - 1`` inside the closed-form bound."""
    res = threshold_real_principal()
    k, n = Lin.var("k"), Lin.var("n")
    ctx = Context([Cond.gt(k, n / 2 + as_lin(margin), f"k > n/2 + {margin}")])
    sub = {"stilde": k - 1, "s": k}
    need = Cond(PExpr.of(k) - res.bound.subs(sub), res.strict, f"k > {res.bound.subs(sub)}")
    side = Cond.le(k - 1, k - 1, "stilde <= s - 1")
    st_main, st_side = ctx.status(need), ctx.status(side)
    return {"assumption": f"k > n/2 + {margin}", "closed_form": res.text, "substituted": str(need),
            "status": st_main.value, "side": st_side.value,
            "holds": st_main is Status.HOLDS and st_side is Status.HOLDS}


class Direction(str, Enum):
    INTO_BOUNDARY = "IntoBoundary"
    FROM_BOUNDARY = "FromBoundary"
    NEITHER = "Neither"


def threshold_radial(stilde, m, r, beta_hat_inf=0, beta_hat_sup=None, beta_tilde=1) -> Direction:
    """Sign test of the radial-set threshold quantity (strict inequalities; equality gives ``Neither``)."""
    st, m, r = _frac(stilde), _frac(m), _frac(r)
    lo = _frac(beta_hat_inf)
    hi = lo if beta_hat_sup is None else _frac(beta_hat_sup)
    bt = _frac(beta_tilde)
    if st + (m - 1) / 2 - 1 + (lo - r * bt) > 0:
        return Direction.INTO_BOUNDARY
    if st + (m - 1) / 2 + (hi - r * bt) < 0:
        return Direction.FROM_BOUNDARY
    return Direction.NEITHER


def weight_shift_subprincipal(m, m0, r, beta0=4, beta_tilde=1, beta_hat=0) -> Fraction:
    """Subprincipal coefficient after reducing the order from ``m`` to ``m0`` and conjugating by ``x^r``."""
    del beta0  # overall positive factor; does not enter the shifted coefficient
    return _frac(beta_hat) + (_frac(m) - _frac(m0)) / 2 - _frac(r) * _frac(beta_tilde)


def threshold_quantity(stilde, m, r, beta_hat=0, beta_tilde=1) -> Fraction:
    return _frac(stilde) + (_frac(m) - 1) / 2 + _frac(beta_hat) - _frac(r) * _frac(beta_tilde)


def threshold_invariant(stilde, m, m0, r, beta_hat=0, beta_tilde=1) -> bool:
    shifted = weight_shift_subprincipal(m, m0, r, beta_tilde=beta_tilde, beta_hat=beta_hat)
    return _frac(stilde) + (_frac(m0) - 1) / 2 + shifted == threshold_quantity(stilde, m, r, beta_hat, beta_tilde)


# ---------------------------------------------------------------------------
# query language

_CLASS_RE = re.compile(
    r"""\s*(?:
        (?P<coef>Hb\[(?P<cs>[^\]]*)\](?P<cb>b?)Psi\[m=(?P<cm>[^\]]*)\])
      | (?P<sym>(?P<sb>b?)Psi\[m=(?P<sm>[^;\]]*);k=(?P<sk>[^\]]*)\]Hb\[(?P<ss>[^\]]*)\])
      | (?P<smooth>(?P<pb>b?)Psi\[m=(?P<pm>[^;\]]*)\])
    )\s*$""", re.X)


def _split_weight(text: str):
    parts = [p.strip() for p in text.split(",")]
    s = parts[0]
    alpha = "0"
    for p in parts[1:]:
        key, _, val = p.partition("=")
        if key.strip() != "alpha":
            raise ParseError(f"unknown coefficient option {key!r}")
        alpha = val
    return s, alpha


def _s_value(text: str):
    return INF if text.strip() in ("inf", "oo") else as_lin(text)


def parse_class(text: str) -> Atom:
    """``Psi[m=2]``, ``Psi[m=2;k=3]Hb[s]``, ``Hb[s, alpha=1]Psi[m=1]``; prefix ``bPsi`` marks b-classes."""
    mt = _CLASS_RE.match(text)
    if not mt:
        raise ParseError(f"cannot parse operator class {text!r}")
    if mt.group("coef"):
        s, alpha = _split_weight(mt.group("cs"))
        return coef_left(s, mt.group("cm"), b=bool(mt.group("cb")), alpha=alpha)
    if mt.group("sym"):
        s, alpha = _split_weight(mt.group("ss"))
        k = mt.group("sk").strip()
        return symbol_class(mt.group("sm"), INF if k in ("inf", "oo") else k, _s_value(s),
                            b=bool(mt.group("sb")), alpha=alpha)
    return smooth(mt.group("pm"), b=bool(mt.group("pb")))


def parse_condition(text: str) -> Cond:
    for op in (">=", "<=", ">", "<"):
        if op in text:
            a, b = text.split(op, 1)
            return {">=": Cond.ge, "<=": Cond.le, ">": Cond.gt, "<": Cond.lt}[op](
                parse_lin(a), parse_lin(b), text.strip())
    raise ParseError(f"condition needs a comparison: {text!r}")


def _split_args(body: str) -> list[str]:
    out, depth, cur = [], 0, ""
    for ch in body:
        if ch in "([":
            depth += 1
        elif ch in ")]":
            depth -= 1
        if ch == "," and depth == 0:
            out.append(cur)
            cur = ""
        else:
            cur += ch
    if cur.strip():
        out.append(cur)
    return [a.strip() for a in out]


_QUERY_RE = re.compile(r"^\s*(?P<name>[a-z_]+)\s*\((?P<body>.*)\)\s*(?:where\s+(?P<where>.*))?$", re.S)


def run_query(text: str) -> dict:
    """Evaluate one query; returns ``{"query", "result", "trace", ...}``.

    Queries: ``compose(P, Q, k=3, kprime=0)``, ``map(A, s'=3, r=0, n=4)``,
    ``threshold_real_principal(stilde=2)``, ``threshold_radial(stilde=2, m=2, r=0)``,
    ``weight_shift(m=2, m0=4, r=0, beta_hat=0)``, ``contains(A, B)``, ``normalize(A + B)``,
    ``self_consistency()``. A trailing ``where c1, c2`` adds assumptions.
    """
    mt = _QUERY_RE.match(text)
    if not mt:
        raise ParseError(f"cannot parse query {text!r}")
    name = mt.group("name")
    args = _split_args(mt.group("body"))
    pos = [a for a in args if "=" not in a.split("[")[0] or a.startswith(("Psi", "bPsi", "Hb"))]
    kw = {}
    for a in args:
        if a in pos:
            continue
        key, _, val = a.partition("=")
        kw[key.strip()] = val.strip()
    assumptions = [parse_condition(c) for c in _split_args(mt.group("where") or "")]
    ctx = Context(assumptions)
    if "n" in kw and name not in ("threshold_real_principal",):
        ctx = ctx.with_values(n=as_lin(kw.pop("n")))

    def rat(key, default=None):
        v = kw.get(key, default)
        if v is None:
            raise ParseError(f"{name} needs {key}=")
        lin = parse_lin(str(v))
        if not lin.is_const:
            raise ParseError(f"{key} must be a rational number")
        return lin.const

    if name == "compose":
        if len(pos) != 2:
            raise ParseError("compose needs two classes")
        comp = compose(parse_class(pos[0]), parse_class(pos[1]), as_lin(kw.get("k", "0")),
                       as_lin(kw.get("kprime", "0")), ctx)
        out = comp.to_dict()
        result = f"E_j in {out['E_j']}; R in {out['R']}"
        trace = out.pop("trace")
        return {"query": text, "result": result, **out, "trace": trace}
    if name == "map":
        if len(pos) != 1:
            raise ParseError("map needs one class (use '+' inside for sums)")
        A = OperatorClass(tuple(parse_class(p) for p in _split_sum(pos[0])))
        trace = Trace()
        target = mapping(A, SpaceSpec.of(kw.get("s'", kw.get("s", "0")), kw.get("r", "0")), None, ctx, trace)
        return {"query": text, "result": str(target), "trace": trace.steps}
    if name == "threshold_real_principal":
        res = threshold_real_principal(rat("stilde") if "stilde" in kw else None,
                                       rat("n") if "n" in kw else None)
        d = res.to_dict()
        return {"query": text, "result": res.text, **{k: v for k, v in d.items() if k != "trace"},
                "trace": d["trace"]}
    if name == "threshold_radial":
        d = threshold_radial(rat("stilde"), rat("m"), rat("r"), rat("beta_hat_inf", "0"),
                             rat("beta_hat_sup", kw.get("beta_hat_inf", "0")), rat("beta_tilde", "1"))
        return {"query": text, "result": d.value, "trace": []}
    if name == "weight_shift":
        v = weight_shift_subprincipal(rat("m"), rat("m0"), rat("r"), rat("beta0", "4"), rat("beta_tilde", "1"),
                                      rat("beta_hat", "0"))
        inv = threshold_invariant(rat("stilde", "0"), rat("m"), rat("m0"), rat("r"), rat("beta_hat", "0"),
                                  rat("beta_tilde", "1"))
        return {"query": text, "result": _fmt_frac(v), "invariant": inv, "trace": []}
    if name == "contains":
        if len(pos) != 2:
            raise ParseError("contains needs two classes")
        rel = relation(parse_class(pos[0]), parse_class(pos[1]), ctx)
        return {"query": text, "result": rel.value, "trace": []}
    if name == "normalize":
        C = normalize(OperatorClass(tuple(parse_class(p) for p in _split_sum(pos[0]))), ctx)
        return {"query": text, "result": str(C), "trace": []}
    if name == "self_consistency":
        d = regularity_self_consistency(rat("margin", "7"))
        return {"query": text, "result": "holds" if d["holds"] else "fails", **d, "trace": []}
    raise ParseError(f"unknown query {name!r}")


def _split_sum(text: str) -> list[str]:
    out, depth, cur = [], 0, ""
    for ch in text:
        depth += ch == "["
        depth -= ch == "]"
        if ch == "+" and depth == 0:
            out.append(cur)
            cur = ""
        else:
            cur += ch
    out.append(cur)
    return [p.strip() for p in out if p.strip()]


def query_json(text: str) -> str:
    return json.dumps(run_query(text), sort_keys=True, indent=2)
