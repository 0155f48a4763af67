"""Closed-form scalar expressions of time.

Matrix entries and perturbation envelopes are written as infix strings such
as ``"1.1*cos(t/2) - 1"``.  The grammar is deliberately small: real literals,
named variables (``t`` and, for explicit perturbation maps, ``x1..xn``),
unary minus, ``+ - * /``, integer powers (``^`` or ``**``) and the functions
``sin cos exp abs sqrt``.  Every tree in that grammar has an exact symbolic
derivative that is again in the grammar.

Evaluation accepts a float or a numpy array for each variable, so a whole
time grid can be evaluated in one call.
"""
from __future__ import annotations

import math
import re
from dataclasses import dataclass
from typing import Mapping, Sequence, Union

import numpy as np

__all__ = [
    "Expression",
    "ExpressionError",
    "ExpressionSyntaxError",
    "UnknownIdentifierError",
    "EvaluationDomainError",
    "parse",
    "evaluate",
    "differentiate",
    "FUNCTIONS",
]

FUNCTIONS = ("sin", "cos", "exp", "abs", "sqrt")

Value = Union[float, np.ndarray]


class ExpressionError(ValueError):
    pass


class ExpressionSyntaxError(ExpressionError):
    """Raised on malformed input; carries the character offset and what was expected."""

    def __init__(self, message: str, source: str, offset: int, expected: Sequence[str] = ()):
        self.source = source
        self.offset = offset
        self.expected = tuple(expected)
        detail = f"{message} at offset {offset}"
        if self.expected:
            detail += f" (expected {', '.join(self.expected)})"
        super().__init__(f"{detail}: {source!r}")


class UnknownIdentifierError(ExpressionSyntaxError):
    pass


class EvaluationDomainError(ExpressionError, ArithmeticError):
    pass


# --------------------------------------------------------------------------
# Tree nodes
# --------------------------------------------------------------------------


class Expression:
    """Immutable expression tree node."""

    __slots__ = ()

    def evaluate(self, env: Mapping[str, Value]) -> Value:
        raise NotImplementedError

    def derivative(self, var: str) -> "Expression":
        raise NotImplementedError

    def variables(self) -> frozenset:
        raise NotImplementedError

    def __call__(self, t: Value, **extra: Value) -> Value:
        return evaluate(self, t, **extra)

    def __str__(self) -> str:
        return _format(self, 0)


@dataclass(frozen=True, eq=True, repr=True)
class Num(Expression):
    value: float

    def evaluate(self, env):
        return self.value

    def derivative(self, var):
        return ZERO

    def variables(self):
        return frozenset()


@dataclass(frozen=True)
class Var(Expression):
    name: str

    def evaluate(self, env):
        try:
            return env[self.name]
        except KeyError:
            raise EvaluationDomainError(f"no value bound for variable {self.name!r}") from None

    def derivative(self, var):
        return ONE if self.name == var else ZERO

    def variables(self):
        return frozenset((self.name,))


@dataclass(frozen=True)
class Neg(Expression):
    operand: Expression

    def evaluate(self, env):
        return -self.operand.evaluate(env)

    def derivative(self, var):
        return _neg(self.operand.derivative(var))

    def variables(self):
        return self.operand.variables()


@dataclass(frozen=True)
class BinOp(Expression):
    op: str
    left: Expression
    right: Expression

    def evaluate(self, env):
        a = self.left.evaluate(env)
        b = self.right.evaluate(env)
        if self.op == "+":
            return a + b
        if self.op == "-":
            return a - b
        if self.op == "*":
            return a * b
        if np.any(np.asarray(b) == 0.0):
            raise EvaluationDomainError(f"division by zero in {self}")
        return a / b

    def derivative(self, var):
        u, v = self.left, self.right
        du, dv = u.derivative(var), v.derivative(var)
        if self.op == "+":
            return _add(du, dv)
        if self.op == "-":
            return _sub(du, dv)
        if self.op == "*":
            return _add(_mul(du, v), _mul(u, dv))
        # quotient rule
        if _is_zero(dv):
            return _div(du, v)
        return _div(_sub(_mul(du, v), _mul(u, dv)), _pow(v, 2))

    def variables(self):
        return self.left.variables() | self.right.variables()


@dataclass(frozen=True)
class Pow(Expression):
    base: Expression
    exponent: int

    def evaluate(self, env):
        b = self.base.evaluate(env)
        if self.exponent < 0 and np.any(np.asarray(b) == 0.0):
            raise EvaluationDomainError(f"zero raised to a negative power in {self}")
        if isinstance(b, np.ndarray):
            return np.power(b, float(self.exponent))
        return float(b) ** self.exponent

    def derivative(self, var):
        n = self.exponent
        db = self.base.derivative(var)
        if n == 0 or _is_zero(db):
            return ZERO
        return _mul(_mul(Num(float(n)), _pow(self.base, n - 1)), db)

    def variables(self):
        return self.base.variables()


_NP_FUNCS = {
    "sin": np.sin,
    "cos": np.cos,
    "exp": np.exp,
    "abs": np.abs,
    "sqrt": np.sqrt,
}
_MATH_FUNCS = {
    "sin": math.sin,
    "cos": math.cos,
    "exp": math.exp,
    "abs": abs,
    "sqrt": math.sqrt,
}


@dataclass(frozen=True)
class Call(Expression):
    func: str
    arg: Expression

    def evaluate(self, env):
        x = self.arg.evaluate(env)
        if self.func == "sqrt" and np.any(np.asarray(x) < 0.0):
            raise EvaluationDomainError(f"sqrt of a negative number in {self}")
        if isinstance(x, np.ndarray):
            return _NP_FUNCS[self.func](x)
        try:
            return _MATH_FUNCS[self.func](x)
        except OverflowError:
            raise EvaluationDomainError(f"overflow in {self}") from None

    def derivative(self, var):
        u = self.arg
        du = u.derivative(var)
        if _is_zero(du):
            return ZERO
        f = self.func
        if f == "sin":
            outer = Call("cos", u)
        elif f == "cos":
            outer = _neg(Call("sin", u))
        elif f == "exp":
            outer = self
        elif f == "sqrt":
            outer = _div(ONE, _mul(TWO, self))
        else:
            # sign(u) written inside the grammar; undefined where u == 0
            outer = _div(u, self)
        return _mul(outer, du)

    def variables(self):
        return self.arg.variables()


ZERO = Num(0.0)
ONE = Num(1.0)
TWO = Num(2.0)


def _is_zero(e: Expression) -> bool:
    return isinstance(e, Num) and e.value == 0.0


def _is_one(e: Expression) -> bool:
    return isinstance(e, Num) and e.value == 1.0


# Constructors with literal-only folding; no reassociation across +/-.
def _neg(a: Expression) -> Expression:
    if isinstance(a, Num):
        return Num(-a.value)
    if isinstance(a, Neg):
        return a.operand
    return Neg(a)


def _add(a: Expression, b: Expression) -> Expression:
    if _is_zero(a):
        return b
    if _is_zero(b):
        return a
    if isinstance(a, Num) and isinstance(b, Num):
        return Num(a.value + b.value)
    return BinOp("+", a, b)


def _sub(a: Expression, b: Expression) -> Expression:
    if _is_zero(b):
        return a
    if _is_zero(a):
        return _neg(b)
    if isinstance(a, Num) and isinstance(b, Num):
        return Num(a.value - b.value)
    return BinOp("-", a, b)


def _mul(a: Expression, b: Expression) -> Expression:
    if _is_zero(a) or _is_zero(b):
        return ZERO
    if _is_one(a):
        return b
    if _is_one(b):
        return a
    if isinstance(a, Num) and isinstance(b, Num):
        return Num(a.value * b.value)
    return BinOp("*", a, b)


def _div(a: Expression, b: Expression) -> Expression:
    if _is_zero(a):
        return ZERO
    if _is_one(b):
        return a
    return BinOp("/", a, b)


def _pow(a: Expression, n: int) -> Expression:
    if n == 1:
        return a
    if n == 0:
        return ONE
    return Pow(a, n)


# --------------------------------------------------------------------------
# Printing
# --------------------------------------------------------------------------

_PREC = {"+": 1, "-": 1, "*": 2, "/": 2}


def _format(e: Expression, parent: int) -> str:
    if isinstance(e, Num):
        s = repr(e.value)
        # keep negative literals atomic so "a - -1.0" never appears
        return f"({s})" if e.value < 0 or s.startswith("-") else s
    if isinstance(e, Var):
        return e.name
    if isinstance(e, Neg):
        s = "-" + _format(e.operand, 3)
        return f"({s})" if parent > 0 else s
    if isinstance(e, BinOp):
        p = _PREC[e.op]
        # right operand of - and / needs parentheses at equal precedence
        s = f"{_format(e.left, p)} {e.op} {_format(e.right, p + 1)}"
        return f"({s})" if p < parent else s
    if isinstance(e, Pow):
        exp_s = str(e.exponent) if e.exponent >= 0 else f"({e.exponent})"
        base = _format(e.base, 4)
        if isinstance(e.base, Pow):
            base = f"({base})"
        return f"{base}^{exp_s}"
    if isinstance(e, Call):
        return f"{e.func}({_format(e.arg, 0)})"
    raise TypeError(type(e))


# --------------------------------------------------------------------------
# Parsing
# --------------------------------------------------------------------------

_TOKEN_RE = re.compile(
    r"\s*(?:"
    r"(?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)"
    r"|(?P<ident>[A-Za-z_][A-Za-z_0-9]*)"
    r"|(?P<op>\*\*|[-+*/^()])"
    r")"
)


@dataclass(frozen=True)
class _Tok:
    kind: str  # num | ident | op | end
    text: str
    offset: int


def _tokenize(source: str) -> list[_Tok]:
    toks: list[_Tok] = []
    pos = 0
    n = len(source)
    while pos < n:
        if source[pos].isspace():
            pos += 1
            continue
        m = _TOKEN_RE.match(source, pos)
        if m is None or m.end() == pos:
            raise ExpressionSyntaxError(f"unexpected character {source[pos]!r}", source, pos)
        kind = m.lastgroup
        text = m.group(kind)
        toks.append(_Tok(kind, "^" if text == "**" else text, m.start(kind)))
        pos = m.end()
    toks.append(_Tok("end", "", n))
    return toks


class _Parser:
    def __init__(self, source: str, variables: Sequence[str]):
        self.source = source
        self.variables = frozenset(variables)
        self.toks = _tokenize(source)
        self.i = 0

    @property
    def cur(self) -> _Tok:
        return self.toks[self.i]

    def fail(self, message: str, expected: Sequence[str] = ()):
        raise ExpressionSyntaxError(message, self.source, self.cur.offset, expected)

    def take(self, text: str) -> bool:
        if self.cur.kind == "op" and self.cur.text == text:
            self.i += 1
            return True
        return False

    def parse(self) -> Expression:
        e = self.expr()
        if self.cur.kind != "end":
            self.fail(f"unexpected token {self.cur.text!r}", ["operator", "end of input"])
        return e

    def expr(self) -> Expression:
        e = self.term()
        while self.cur.kind == "op" and self.cur.text in "+-":
            op = self.cur.text
            self.i += 1
            e = BinOp(op, e, self.term())
        return e

    def term(self) -> Expression:
        e = self.unary()
        while self.cur.kind == "op" and self.cur.text in "*/":
            op = self.cur.text
            self.i += 1
            e = BinOp(op, e, self.unary())
        return e

    def unary(self) -> Expression:
        if self.take("-"):
            operand = self.unary()
            return Num(-operand.value) if isinstance(operand, Num) else Neg(operand)
        if self.take("+"):
            return self.unary()
        return self.power()

    def power(self) -> Expression:
        base = self.atom()
        if self.take("^"):
            return Pow(base, self.int_exponent())
        return base

    def int_exponent(self) -> int:
        paren = self.take("(")
        sign = -1 if self.take("-") else 1
        tok = self.cur
        if tok.kind != "num" or not tok.text.isdigit():
            self.fail("exponent must be an integer literal", ["integer"])
        self.i += 1
        if paren and not self.take(")"):
            self.fail("unbalanced parenthesis", [")"])
        return sign * int(tok.text)

    def atom(self) -> Expression:
        tok = self.cur
        if tok.kind == "num":
            self.i += 1
            return Num(float(tok.text))
        if tok.kind == "ident":
            self.i += 1
            if tok.text in FUNCTIONS:
                if not self.take("("):
                    self.fail(f"function {tok.text!r} needs an argument", ["("])
                arg = self.expr()
                if not self.take(")"):
                    self.fail("unbalanced parenthesis", [")"])
                return Call(tok.text, arg)
            if tok.text in self.variables:
                return Var(tok.text)
            raise UnknownIdentifierError(
                f"unknown identifier {tok.text!r}",
                self.source,
                tok.offset,
                sorted(self.variables) + list(FUNCTIONS),
            )
        if self.take("("):
            e = self.expr()
            if not self.take(")"):
                self.fail("unbalanced parenthesis", [")"])
            return e
        if tok.kind == "end":
            self.fail("unexpected end of input", ["number", "identifier", "("])
        self.fail(f"unexpected token {tok.text!r}", ["number", "identifier", "("])


def parse(source: str, variables: Sequence[str] = ("t",)) -> Expression:
    """Parse ``source`` into an expression tree.

    Only names in ``variables`` and the fixed function set are accepted.
    """
    if not isinstance(source, str) or not source.strip():
        raise ExpressionSyntaxError("empty expression", str(source), 0, ["expression"])
    return _Parser(source, variables).parse()


def evaluate(e: Expression, t: Value, **extra: Value) -> Value:
    """Evaluate ``e`` at time ``t``; raises EvaluationDomainError on non-finite results."""
    env = {"t": t}
    env.update(extra)
    with np.errstate(all="ignore"):
        try:
            out = e.evaluate(env)
        except (ZeroDivisionError, ValueError) as exc:
            if isinstance(exc, ExpressionError):
                raise
            raise EvaluationDomainError(f"{exc} in {e}") from None
    if isinstance(out, np.ndarray):
        if not np.all(np.isfinite(out)):
            raise EvaluationDomainError(f"non-finite value of {e}")
        if out.shape != np.shape(t) and np.ndim(t):
            out = np.broadcast_to(out, np.shape(t)).copy()
        return out
    out = float(out)
    if not math.isfinite(out):
        raise EvaluationDomainError(f"non-finite value of {e}")
    if np.ndim(t):
        return np.full(np.shape(t), out)
    return out


def differentiate(e: Expression, var: str = "t") -> Expression:
    return e.derivative(var)
