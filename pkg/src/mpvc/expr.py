"""Scalar expressions: parsing, evaluation, forward-mode gradients, curvature tags.

Expressions are immutable trees. Three evaluation paths share the tree:

* ``eval`` works on one point and raises :class:`DomainError` on bad input,
* ``grad`` carries a dense tangent vector through the tree (forward mode),
* ``eval_batch`` works on an ``(N, n)`` array and returns NaN where the
  expression is undefined, which is what the sampling code wants.
"""

from __future__ import annotations

import enum
import math
import re
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Iterator

import numpy as np

if TYPE_CHECKING:
    from .model import ProblemInstance

Loc = tuple[int, int] | None

FUNCTIONS = ("sin", "cos", "exp", "log", "sqrt")


class ParseError(ValueError):
    """Syntax or name error in a problem file, with 1-based line and column."""

    def __init__(self, message: str, line: int, col: int):
        super().__init__(f"line {line}, column {col}: {message}")
        self.message = message
        self.line = line
        self.col = col


class DomainError(ValueError):
    """An expression is undefined at the requested point."""

    def __init__(self, message: str, node: "Expr"):
        where = ""
        if node.loc is not None:
            where = f" at line {node.loc[0]}, column {node.loc[1]}"
        super().__init__(f"{message} in '{to_text(node)}'{where}")
        self.node = node
        self.loc = node.loc


class CurvatureTag(enum.Enum):
    LINEAR = "Linear"
    DECLARED_CONCAVE = "DeclaredConcave"
    GENERAL = "General"


# --------------------------------------------------------------------------
# nodes


@dataclass(frozen=True)
class Expr:
    loc: Loc = field(default=None, compare=False, kw_only=True)

    def children(self) -> tuple["Expr", ...]:
        return ()

    def walk(self) -> Iterator["Expr"]:
        yield self
        for child in self.children():
            yield from child.walk()

    def max_var(self) -> int:
        return max((v.index for v in self.walk() if isinstance(v, Var)), default=-1)


@dataclass(frozen=True)
class Const(Expr):
    value: float

    def _eval(self, x):
        return self.value

    def _dual(self, x):
        return self.value, np.zeros(len(x))

    def _batch(self, X):
        return np.full(X.shape[0], self.value)


@dataclass(frozen=True)
class Var(Expr):
    index: int
    name: str = ""

    def _eval(self, x):
        return float(x[self.index])

    def _dual(self, x):
        d = np.zeros(len(x))
        d[self.index] = 1.0
        return float(x[self.index]), d

    def _batch(self, X):
        return X[:, self.index].astype(float)


@dataclass(frozen=True)
class Neg(Expr):
    operand: Expr

    def children(self):
        return (self.operand,)

    def _eval(self, x):
        return -self.operand._eval(x)

    def _dual(self, x):
        v, d = self.operand._dual(x)
        return -v, -d

    def _batch(self, X):
        return -self.operand._batch(X)


@dataclass(frozen=True)
class BinOp(Expr):
    op: str
    left: Expr
    right: Expr

    def children(self):
        return (self.left, self.right)

    def _eval(self, x):
        a = self.left._eval(x)
        b = self.right._eval(x)
        if self.op == "+":
            return a + b
        if self.op == "-":
            return a - b
        if self.op == "*":
            return a * b
        if b == 0.0:
            raise DomainError("division by zero", self)
        return a / b

    def _dual(self, x):
        a, da = self.left._dual(x)
        b, db = self.right._dual(x)
        if self.op == "+":
            return a + b, da + db
        if self.op == "-":
            return a - b, da - db
        if self.op == "*":
            return a * b, b * da + a * db
        if b == 0.0:
            raise DomainError("division by zero", self)
        return a / b, (da * b - a * db) / (b * b)

    def _batch(self, X):
        a = self.left._batch(X)
        b = self.right._batch(X)
        if self.op == "+":
            return a + b
        if self.op == "-":
            return a - b
        if self.op == "*":
            return a * b
        out = np.full_like(a, np.nan)
        ok = b != 0.0
        np.divide(a, b, out=out, where=ok)
        return out


@dataclass(frozen=True)
class Pow(Expr):
    base: Expr
    exponent: int

    def children(self):
        return (self.base,)

    def _eval(self, x):
        v = self.base._eval(x)
        try:
            return v**self.exponent if self.exponent else 1.0
        except OverflowError:
            raise DomainError("overflow", self) from None

    def _dual(self, x):
        v, d = self.base._dual(x)
        k = self.exponent
        if k == 0:
            return 1.0, np.zeros(len(x))
        try:
            return v**k, (k * v ** (k - 1)) * d
        except OverflowError:
            raise DomainError("overflow", self) from None

    def _batch(self, X):
        v = self.base._batch(X)
        if self.exponent == 0:
            return np.ones_like(v)
        return v**self.exponent


@dataclass(frozen=True)
class Call(Expr):
    func: str
    arg: Expr

    def children(self):
        return (self.arg,)

    def _check(self, v: float, for_grad: bool = False) -> None:
        if self.func == "log" and v <= 0.0:
            raise DomainError("log of nonpositive value", self)
        if self.func == "sqrt" and (v < 0.0 or (for_grad and v == 0.0)):
            raise DomainError("sqrt outside its domain", self)

    def _eval(self, x):
        v = self.arg._eval(x)
        self._check(v)
        try:
            return getattr(math, self.func)(v)
        except OverflowError:
            raise DomainError("overflow", self) from None

    def _dual(self, x):
        v, d = self.arg._dual(x)
        self._check(v, for_grad=True)
        f = self.func
        try:
            if f == "sin":
                return math.sin(v), math.cos(v) * d
            if f == "cos":
                return math.cos(v), -math.sin(v) * d
            if f == "exp":
                e = math.exp(v)
                return e, e * d
            if f == "log":
                return math.log(v), d / v
            s = math.sqrt(v)
            return s, d / (2.0 * s)
        except OverflowError:
            raise DomainError("overflow", self) from None

    def _batch(self, X):
        v = self.arg._batch(X)
        with np.errstate(all="ignore"):
            if self.func == "log":
                return np.where(v > 0.0, np.log(np.where(v > 0.0, v, 1.0)), np.nan)
            if self.func == "sqrt":
                return np.where(v >= 0.0, np.sqrt(np.abs(v)), np.nan)
            return getattr(np, self.func)(v)


# --------------------------------------------------------------------------
# evaluation entry points


def eval(expr: Expr, x) -> float:  # noqa: A001 - mirrors the module contract
    """Value of ``expr`` at ``x``; raises :class:`DomainError` where undefined."""
    x = np.asarray(x, dtype=float)
    _check_dim(expr, x)
    value = float(expr._eval(x))
    if not math.isfinite(value):
        raise DomainError("non-finite value", expr)
    return value


def grad(expr: Expr, x) -> np.ndarray:
    """Forward-mode gradient of ``expr`` at ``x``."""
    return value_and_grad(expr, x)[1]


def value_and_grad(expr: Expr, x) -> tuple[float, np.ndarray]:
    x = np.asarray(x, dtype=float)
    _check_dim(expr, x)
    v, d = expr._dual(x)
    v = float(v)
    d = np.asarray(d, dtype=float)
    if not (math.isfinite(v) and np.all(np.isfinite(d))):
        raise DomainError("non-finite value", expr)
    return v, d


def eval_batch(expr: Expr, X) -> np.ndarray:
    """Evaluate at every row of ``X``; undefined entries come back as NaN."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    with np.errstate(all="ignore"):
        out = np.asarray(expr._batch(X), dtype=float)
    out = np.broadcast_to(out, (X.shape[0],)).copy()
    out[~np.isfinite(out)] = np.nan
    return out


def _check_dim(expr: Expr, x: np.ndarray) -> None:
    if x.ndim != 1 or expr.max_var() >= x.shape[0]:
        raise ValueError(f"point of shape {x.shape} does not cover the expression variables")


# --------------------------------------------------------------------------
# folding, degree, curvature


def fold(expr: Expr) -> Expr:
    """Constant folding plus the algebraic identities that matter for degree."""
    if isinstance(expr, (Const, Var)):
        return expr
    if isinstance(expr, Neg):
        a = fold(expr.operand)
        if isinstance(a, Const):
            return Const(-a.value)
        return Neg(a, loc=expr.loc)
    if isinstance(expr, Pow):
        b = fold(expr.base)
        if expr.exponent == 0:
            return Const(1.0)
        if expr.exponent == 1:
            return b
        if isinstance(b, Const):
            try:
                return Const(b.value**expr.exponent)
            except OverflowError:
                pass
        return Pow(b, expr.exponent, loc=expr.loc)
    if isinstance(expr, Call):
        a = fold(expr.arg)
        node = Call(expr.func, a, loc=expr.loc)
        if isinstance(a, Const):
            try:
                return Const(node._eval(np.zeros(0)))
            except (DomainError, OverflowError):
                pass
        return node
    assert isinstance(expr, BinOp)
    a, b = fold(expr.left), fold(expr.right)
    op = expr.op
    if isinstance(a, Const) and isinstance(b, Const):
        try:
            return Const(BinOp(op, a, b)._eval(np.zeros(0)))
        except DomainError:
            return BinOp(op, a, b, loc=expr.loc)
    if op == "*" and ((isinstance(a, Const) and a.value == 0.0) or (isinstance(b, Const) and b.value == 0.0)):
        return Const(0.0)
    if op in "+-" and isinstance(b, Const) and b.value == 0.0:
        return a
    if op == "+" and isinstance(a, Const) and a.value == 0.0:
        return b
    if op == "-" and isinstance(a, Const) and a.value == 0.0:
        return fold(Neg(b))
    if op in "*/" and isinstance(b, Const) and b.value == 1.0:
        return a
    if op == "*" and isinstance(a, Const) and a.value == 1.0:
        return b
    return BinOp(op, a, b, loc=expr.loc)


def degree(expr: Expr) -> float:
    """Polynomial degree of the folded tree; ``inf`` for anything non-polynomial."""
    return _degree(fold(expr))


def _degree(e: Expr) -> float:
    if isinstance(e, Const):
        return 0
    if isinstance(e, Var):
        return 1
    if isinstance(e, Neg):
        return _degree(e.operand)
    if isinstance(e, Pow):
        return _degree(e.base) * e.exponent
    if isinstance(e, Call):
        return 0 if _degree(e.arg) == 0 else math.inf
    a, b = _degree(e.left), _degree(e.right)
    if e.op in "+-":
        return max(a, b)
    if e.op == "*":
        return a + b
    return a if b == 0 else math.inf


def classify_curvature(expr: Expr, declared_concave: bool = False) -> CurvatureTag:
    if degree(expr) <= 1:
        return CurvatureTag.LINEAR
    if declared_concave:
        return CurvatureTag.DECLARED_CONCAVE
    return CurvatureTag.GENERAL


# --------------------------------------------------------------------------
# printing

_PREC = {"+": 1, "-": 1, "*": 2, "/": 2}


def _prec(e: Expr) -> int:
    if isinstance(e, BinOp):
        return _PREC[e.op]
    if isinstance(e, Neg):
        return 3
    if isinstance(e, Pow):
        return 4
    if isinstance(e, Const) and (e.value < 0 or math.copysign(1.0, e.value) < 0):
        return 0
    return 5


def to_text(e: Expr) -> str:
    """Source text that parses back to the same tree."""
    if isinstance(e, Const):
        return repr(float(e.value))
    if isinstance(e, Var):
        return e.name or f"x{e.index + 1}"
    if isinstance(e, Call):
        return f"{e.func}({to_text(e.arg)})"
    if isinstance(e, Neg):
        inner = to_text(e.operand)
        return "-" + (inner if _prec(e.operand) >= 3 else f"({inner})")
    if isinstance(e, Pow):
        inner = to_text(e.base)
        return (inner if _prec(e.base) >= 5 else f"({inner})") + f"^{e.exponent}"
    p = _PREC[e.op]
    left = to_text(e.left)
    right = to_text(e.right)
    if _prec(e.left) < p:
        left = f"({left})"
    if _prec(e.right) <= p:
        right = f"({right})"
    return f"{left} {e.op} {right}"


# --------------------------------------------------------------------------
# expression parser

_TOKEN = re.compile(
    r"\s*(?:(?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)|(?P<id>[A-Za-z_][A-Za-z_0-9]*)|(?P<op>[-+*/^()]))"
)


@dataclass
class _Tok:
    kind: str
    text: str
    col: int


class _ExprParser:
    def __init__(self, text: str, names: dict[str, int], line: int, col0: int):
        self.line = line
        self.names = names
        self.toks: list[_Tok] = []
        pos = 0
        text = text.rstrip()
        while pos < len(text):
            m = _TOKEN.match(text, pos)
            if m is None or m.end() == pos:
                bad = len(text[pos:]) - len(text[pos:].lstrip()) + pos
                raise ParseError(f"unexpected character {text[bad]!r}", line, col0 + bad)
            kind = m.lastgroup
            self.toks.append(_Tok(kind, m.group(kind), col0 + m.start(kind)))
            pos = m.end()
        self.end_col = col0 + len(text)
        self.i = 0

    def peek(self) -> _Tok | None:
        return self.toks[self.i] if self.i < len(self.toks) else None

    def take(self) -> _Tok:
        tok = self.peek()
        if tok is None:
            raise ParseError("unexpected end of expression", self.line, self.end_col)
        self.i += 1
        return tok

    def expect(self, text: str) -> _Tok:
        tok = self.peek()
        if tok is None or tok.text != text:
            col = tok.col if tok else self.end_col
            raise ParseError(f"expected {text!r}", self.line, col)
        return self.take()

    def parse(self) -> Expr:
        if not self.toks:
            raise ParseError("empty expression", self.line, self.end_col)
        e = self.sum()
        tok = self.peek()
        if tok is not None:
            raise ParseError(f"unexpected token {tok.text!r}", self.line, tok.col)
        return e

    def sum(self) -> Expr:
        e = self.product()
        while (tok := self.peek()) is not None and tok.text in "+-" and tok.kind == "op":
            self.take()
            e = BinOp(tok.text, e, self.product(), loc=(self.line, tok.col))
        return e

    def product(self) -> Expr:
        e = self.unary()
        while (tok := self.peek()) is not None and tok.kind == "op" and tok.text in "*/":
            self.take()
            e = BinOp(tok.text, e, self.unary(), loc=(self.line, tok.col))
        return e

    def unary(self) -> Expr:
        tok = self.peek()
        if tok is not None and tok.kind == "op" and tok.text == "-":
            self.take()
            return Neg(self.unary(), loc=(self.line, tok.col))
        return self.power()

    def power(self) -> Expr:
        base = self.atom()
        tok = self.peek()
        if tok is None or tok.text != "^":
            return base
        self.take()
        exp_tok = self.take()
        if exp_tok.kind != "num" or not exp_tok.text.isdigit():
            raise ParseError("exponent must be a nonnegative integer literal", self.line, exp_tok.col)
        nxt = self.peek()
        if nxt is not None and nxt.text == "^":
            raise ParseError("chained exponents need parentheses", self.line, nxt.col)
        return Pow(base, int(exp_tok.text), loc=(self.line, tok.col))

    def atom(self) -> Expr:
        tok = self.take()
        if tok.kind == "num":
            value = float(tok.text)
            if not math.isfinite(value):
                raise ParseError("numeric literal out of range", self.line, tok.col)
            return Const(value, loc=(self.line, tok.col))
        if tok.kind == "id":
            if tok.text in FUNCTIONS:
                self.expect("(")
                arg = self.sum()
                self.expect(")")
                return Call(tok.text, arg, loc=(self.line, tok.col))
            if tok.text not in self.names:
                raise ParseError(f"unknown identifier {tok.text!r}", self.line, tok.col)
            return Var(self.names[tok.text], tok.text, loc=(self.line, tok.col))
        if tok.text == "(":
            e = self.sum()
            self.expect(")")
            return e
        raise ParseError(f"unexpected token {tok.text!r}", self.line, tok.col)


def parse_expr(text: str, var_names, line: int = 1, col: int = 1) -> Expr:
    """Parse a single expression over the given variable names."""
    names = {name: i for i, name in enumerate(var_names)}
    return _ExprParser(text, names, line, col).parse()


# --------------------------------------------------------------------------
# problem files

_IDENT = re.compile(r"[A-Za-z_][A-Za-z_0-9]*$")


def parse_problem(text: str) -> "ProblemInstance":
    """Parse a problem file into a :class:`~mpvc.model.ProblemInstance`."""
    from .model import ProblemInstance

    var_names: list[str] | None = None
    objective: Expr | None = None
    g: list[Expr] = []
    concave: list[bool] = []
    h: list[Expr] = []
    vanish: list[tuple[Expr, Expr]] = []

    for lineno, raw in enumerate(text.splitlines(), start=1):
        body = raw.split("#", 1)[0]
        if not body.strip():
            continue
        key, sep, rest = body.partition(":")
        key_col = len(body) - len(body.lstrip()) + 1
        key = key.strip()
        if not sep:
            raise ParseError("expected '<keyword>:'", lineno, key_col)
        col = body.index(":") + 1
        if var_names is None and key != "vars":
            raise ParseError("the first statement must be 'vars:'", lineno, key_col)
        if key == "vars":
            if var_names is not None:
                raise ParseError("'vars:' given twice", lineno, key_col)
            var_names = rest.split()
            if not var_names:
                raise ParseError("'vars:' needs at least one name", lineno, col + 1)
            for name in var_names:
                if not _IDENT.match(name) or name in FUNCTIONS:
                    raise ParseError(f"invalid variable name {name!r}", lineno, col + 1 + rest.index(name))
            if len(set(var_names)) != len(var_names):
                raise ParseError("duplicate variable name", lineno, col + 1)
        elif key == "minimize":
            if objective is not None:
                raise ParseError("'minimize:' given twice", lineno, key_col)
            objective = parse_expr(rest, var_names, lineno, col + 1)
        elif key == "g":
            expr_text, annotated = rest, False
            stripped = rest.rstrip()
            if stripped.endswith("@concave"):
                expr_text, annotated = stripped[: -len("@concave")], True
            if "@" in expr_text:
                raise ParseError("unknown annotation", lineno, col + 1 + expr_text.index("@"))
            g.append(parse_expr(expr_text, var_names, lineno, col + 1))
            concave.append(annotated)
        elif key == "h":
            h.append(parse_expr(rest, var_names, lineno, col + 1))
        elif key == "vanish":
            vanish.append(_parse_pair(rest, var_names, lineno, col + 1))
        else:
            raise ParseError(f"unknown keyword {key!r}", lineno, key_col)

    if var_names is None:
        raise ParseError("missing 'vars:' line", 1, 1)
    if objective is None:
        raise ParseError("missing 'minimize:' line", len(text.splitlines()) or 1, 1)
    return ProblemInstance(
        var_names=tuple(var_names),
        objective=objective,
        g=tuple(g),
        h=tuple(h),
        vanish=tuple(vanish),
        g_concave=tuple(concave),
    )


def _parse_pair(text: str, var_names, line: int, col: int) -> tuple[Expr, Expr]:
    parts: dict[str, Expr] = {}
    offset = 0
    for chunk in text.split(","):
        name, eq, rhs = chunk.partition("=")
        lead = len(name) - len(name.lstrip())
        label = name.strip()
        if not eq or label not in ("H", "G"):
            raise ParseError("expected 'H = <expr>' or 'G = <expr>'", line, col + offset + lead)
        if label in parts:
            raise ParseError(f"{label} given twice in vanishing pair", line, col + offset + lead)
        parts[label] = parse_expr(rhs, var_names, line, col + offset + len(name) + 1)
        offset += len(chunk) + 1
    for label in ("H", "G"):
        if label not in parts:
            raise ParseError(f"vanishing pair missing {label}", line, col)
    return parts["H"], parts["G"]


def format_problem(prob: "ProblemInstance") -> str:
    """Canonical problem-file text; parsing it reproduces the instance."""
    lines = ["vars: " + " ".join(prob.var_names), "minimize: " + to_text(prob.objective)]
    for expr, annotated in zip(prob.g, prob.g_concave):
        lines.append("g: " + to_text(expr) + (" @concave" if annotated else ""))
    lines.extend("h: " + to_text(e) for e in prob.h)
    lines.extend(f"vanish: H = {to_text(H)}, G = {to_text(G)}" for H, G in prob.vanish)
    return "\n".join(lines) + "\n"
