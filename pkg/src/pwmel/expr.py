"""Scalar expression language used to describe vector fields and closed forms.

Expressions are parsed into immutable trees and can be evaluated three ways:

* plain floats (``evaluate``),
* first-order forward-mode jets carrying all partials at once (``evaluate_jet``),
* univariate Taylor jets of arbitrary order (``taylor_derivatives``), used for
  Wronskians.

``compile_fields`` generates straight-line Python for a list of expressions and
their exact Jacobian; the integrators call these in their inner loops.
"""
from __future__ import annotations

import math
import re
from dataclasses import dataclass
from typing import Callable, Mapping, Sequence, Union

import numpy as np

__all__ = [
    "ArityError",
    "BinOp",
    "Call",
    "CompiledFields",
    "Const",
    "DomainError",
    "Expression",
    "ExpressionError",
    "ExpressionSyntaxError",
    "FUNCTIONS",
    "Jet",
    "Neg",
    "Power",
    "Taylor",
    "UnknownIdentifierError",
    "Var",
    "compile_fields",
    "evaluate",
    "evaluate_jet",
    "jacobian",
    "parse_expression",
    "taylor_derivatives",
    "unparse",
]


class ExpressionError(ValueError):
    """Base class for parse-time errors."""


class ExpressionSyntaxError(ExpressionError):
    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} at offset {offset}")
        self.offset = offset


class UnknownIdentifierError(ExpressionError):
    def __init__(self, name: str, offset: int):
        super().__init__(f"unknown identifier {name!r} at offset {offset}")
        self.name = name
        self.offset = offset


class ArityError(ExpressionError):
    def __init__(self, name: str, got: int, offset: int):
        super().__init__(f"{name}() takes exactly one argument, got {got} (offset {offset})")
        self.offset = offset


class DomainError(ArithmeticError):
    """Evaluation left the domain of an elementary function."""


FUNCTIONS = (
    "sin", "cos", "tan", "exp", "log", "sqrt", "sinh", "cosh", "tanh",
    "atan", "acos", "asin", "abs",
)

BUILTIN_CONSTANTS = {"pi": math.pi}


# --------------------------------------------------------------------------- nodes


@dataclass(frozen=True)
class Const:
    value: float


@dataclass(frozen=True)
class Var:
    name: str
    index: int


@dataclass(frozen=True)
class Neg:
    arg: "Node"


@dataclass(frozen=True)
class Call:
    func: str
    arg: "Node"


@dataclass(frozen=True)
class BinOp:
    op: str  # one of + - * /
    left: "Node"
    right: "Node"


@dataclass(frozen=True)
class Power:
    base: "Node"
    exponent: float


Node = Union[Const, Var, Neg, Call, BinOp, Power]


@dataclass(frozen=True)
class Expression:
    """A parsed expression together with its ordered variable list."""

    root: Node
    variables: tuple[str, ...]
    source: str = ""

    def __call__(self, *point: float) -> float:
        return evaluate(self, point)

    def __str__(self) -> str:
        return unparse(self)


# --------------------------------------------------------------------------- parsing

_TOKEN = re.compile(
    r"\s*(?:(?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)"
    r"|(?P<ident>[A-Za-z_][A-Za-z0-9_]*)"
    r"|(?P<op>[-+*/^(),]))"
)


def _tokenize(source: str) -> list[tuple[str, str, int]]:
    tokens = []
    pos = 0
    src = source.rstrip()
    while pos < len(src):
        m = _TOKEN.match(src, pos)
        if m is None or m.end() == pos:
            # skip whitespace to report the offending character itself
            bad = pos
            while bad < len(src) and src[bad].isspace():
                bad += 1
            raise ExpressionSyntaxError(f"unexpected character {src[bad]!r}", _byte_offset(source, bad))
        kind = m.lastgroup
        tokens.append((kind, m.group(kind), m.start(kind)))
        pos = m.end()
    tokens.append(("end", "", len(src)))
    return tokens


def _byte_offset(source: str, index: int) -> int:
    return len(source[:index].encode("utf-8"))


def _is_constant(node: Node) -> bool:
    if isinstance(node, Const):
        return True
    if isinstance(node, Var):
        return False
    if isinstance(node, (Neg, Call)):
        return _is_constant(node.arg)
    if isinstance(node, BinOp):
        return _is_constant(node.left) and _is_constant(node.right)
    return _is_constant(node.base)


class _Parser:
    def __init__(self, source: str, variables: Sequence[str], constants: Mapping[str, float]):
        self.source = source
        self.tokens = _tokenize(source)
        self.i = 0
        self.var_index = {name: k for k, name in enumerate(variables)}
        self.constants = {**BUILTIN_CONSTANTS, **constants}

    def peek(self):
        return self.tokens[self.i]

    def take(self):
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def fail(self, message: str, tok=None):
        tok = tok or self.peek()
        raise ExpressionSyntaxError(message, _byte_offset(self.source, tok[2]))

    def expect(self, text: str):
        tok = self.take()
        if tok[1] != text or tok[0] != "op":
            self.i -= 1
            self.fail(f"expected {text!r}")

    def parse(self) -> Node:
        node = self.expr()
        if self.peek()[0] != "end":
            self.fail(f"unexpected token {self.peek()[1]!r}")
        return node

    def expr(self) -> Node:
        node = self.term()
        while self.peek()[1] in ("+", "-") and self.peek()[0] == "op":
            op = self.take()[1]
            node = BinOp(op, node, self.term())
        return node

    def term(self) -> Node:
        node = self.factor()
        while self.peek()[1] in ("*", "/") and self.peek()[0] == "op":
            op = self.take()[1]
            node = BinOp(op, node, self.factor())
        return node

    def factor(self) -> Node:
        if self.peek() == ("op", "-", self.peek()[2]):
            self.take()
            return Neg(self.factor())
        return self.power()

    def power(self) -> Node:
        base = self.atom()
        if self.peek()[0] == "op" and self.peek()[1] == "^":
            tok = self.take()
            exponent = self.factor()
            if not _is_constant(exponent):
                self.fail("exponent must be a constant", tok)
            value = _interpret(exponent, (), _FLOAT_FUNCS)
            return Power(base, float(value))
        return base

    def atom(self) -> Node:
        tok = self.take()
        kind, text, _ = tok
        if kind == "num":
            return Const(float(text))
        if kind == "ident":
            if self.peek()[0] == "op" and self.peek()[1] == "(":
                if text not in FUNCTIONS:
                    raise UnknownIdentifierError(text, _byte_offset(self.source, tok[2]))
                self.take()
                args = [self.expr()]
                while self.peek()[0] == "op" and self.peek()[1] == ",":
                    self.take()
                    args.append(self.expr())
                self.expect(")")
                if len(args) != 1:
                    raise ArityError(text, len(args), _byte_offset(self.source, tok[2]))
                return Call(text, args[0])
            if text in self.var_index:
                return Var(text, self.var_index[text])
            if text in self.constants:
                return Const(float(self.constants[text]))
            raise UnknownIdentifierError(text, _byte_offset(self.source, tok[2]))
        if kind == "op" and text == "(":
            node = self.expr()
            self.expect(")")
            return node
        self.i -= 1
        self.fail("unexpected end of input" if kind == "end" else f"unexpected token {text!r}")


def parse_expression(
    source: str,
    variables: Sequence[str],
    constants: Mapping[str, float] | None = None,
) -> Expression:
    """Parse ``source`` over the ordered ``variables``.

    Identifiers found in ``constants`` are replaced by their values at parse
    time; ``pi`` is always available.
    """
    variables = tuple(variables)
    if len(set(variables)) != len(variables):
        raise ExpressionError(f"duplicate variable names in {variables}")
    root = _Parser(source, variables, constants or {}).parse()
    return Expression(root, variables, source)


def unparse(expr: Expression | Node) -> str:
    """Render a tree back to source text that re-parses to the same tree."""
    node = expr.root if isinstance(expr, Expression) else expr
    if isinstance(node, Const):
        text = repr(node.value)
        return f"({text})" if node.value < 0 else text
    if isinstance(node, Var):
        return node.name
    if isinstance(node, Neg):
        return f"(-{unparse(node.arg)})"
    if isinstance(node, Call):
        return f"{node.func}({unparse(node.arg)})"
    if isinstance(node, BinOp):
        return f"({unparse(node.left)} {node.op} {unparse(node.right)})"
    return f"({unparse(node.base)})^({node.exponent!r})"


# --------------------------------------------------------------------------- interpretation


def _ipow(x, k: int):
    if k == 0:
        return x * 0 + 1
    if k < 0:
        return 1 / _ipow(x, -k)
    result = x
    for _ in range(k - 1):
        result = result * x
    return result


def _interpret(node: Node, point, funcs: Mapping[str, Callable]):
    if isinstance(node, Const):
        return funcs["const"](node.value)
    if isinstance(node, Var):
        return point[node.index]
    if isinstance(node, Neg):
        return -_interpret(node.arg, point, funcs)
    if isinstance(node, Call):
        return funcs[node.func](_interpret(node.arg, point, funcs))
    if isinstance(node, BinOp):
        a = _interpret(node.left, point, funcs)
        b = _interpret(node.right, point, funcs)
        if node.op == "+":
            return a + b
        if node.op == "-":
            return a - b
        if node.op == "*":
            return a * b
        return funcs["div"](a, b)
    base = _interpret(node.base, point, funcs)
    p = node.exponent
    if float(p).is_integer():
        return _ipow(base, int(p))
    return funcs["exp"](p * funcs["log"](base))


def _float_div(a, b):
    if b == 0:
        raise DomainError("division by zero")
    return a / b


def _float_abs_sign(a: float) -> float:
    return 1.0 if a > 0 else (-1.0 if a < 0 else 0.0)


_FLOAT_FUNCS: dict[str, Callable] = {
    "const": float,
    "div": _float_div,
    "sin": math.sin,
    "cos": math.cos,
    "tan": math.tan,
    "exp": math.exp,
    "log": math.log,
    "sqrt": math.sqrt,
    "sinh": math.sinh,
    "cosh": math.cosh,
    "tanh": math.tanh,
    "atan": math.atan,
    "acos": math.acos,
    "asin": math.asin,
    "abs": abs,
}


def _check_point(expr: Expression, point) -> None:
    if len(point) != len(expr.variables):
        raise ValueError(
            f"expected {len(expr.variables)} coordinates {expr.variables}, got {len(point)}"
        )


def evaluate(expr: Expression, point: Sequence[float]) -> float:
    """Evaluate at ``point`` (one value per declared variable)."""
    _check_point(expr, point)
    try:
        value = _interpret(expr.root, [float(v) for v in point], _FLOAT_FUNCS)
    except (ValueError, ZeroDivisionError, OverflowError) as exc:
        raise DomainError(f"{unparse(expr)} at {tuple(point)}: {exc}") from exc
    if not math.isfinite(value):
        raise DomainError(f"{unparse(expr)} is not finite at {tuple(point)}")
    return value


def evaluate_mp(expr: Expression, point, mp=None):
    """Evaluate with mpmath numbers at the context's working precision."""
    import mpmath

    mp = mp or mpmath.mp
    funcs = {
        "const": mp.mpf,
        "div": lambda a, b: a / b,
        **{name: getattr(mp, name) for name in FUNCTIONS if name != "abs"},
        "abs": abs,
    }
    funcs["log"] = mp.log
    return _interpret(expr.root, [mp.mpf(v) for v in point], funcs)


# --------------------------------------------------------------------------- first-order jets


class Jet:
    """Value plus the gradient with respect to every declared variable."""

    __slots__ = ("value", "partials")

    def __init__(self, value: float, partials):
        self.value = float(value)
        self.partials = np.asarray(partials, dtype=float)

    def __repr__(self) -> str:
        return f"Jet({self.value!r}, {self.partials.tolist()!r})"

    def _lift(self, other) -> "Jet":
        if isinstance(other, Jet):
            return other
        return Jet(other, np.zeros_like(self.partials))

    def __add__(self, other):
        o = self._lift(other)
        return Jet(self.value + o.value, self.partials + o.partials)

    __radd__ = __add__

    def __sub__(self, other):
        o = self._lift(other)
        return Jet(self.value - o.value, self.partials - o.partials)

    def __rsub__(self, other):
        return self._lift(other) - self

    def __neg__(self):
        return Jet(-self.value, -self.partials)

    def __mul__(self, other):
        o = self._lift(other)
        return Jet(self.value * o.value, self.partials * o.value + self.value * o.partials)

    __rmul__ = __mul__

    def __truediv__(self, other):
        o = self._lift(other)
        if o.value == 0:
            raise DomainError("division by zero")
        q = self.value / o.value
        return Jet(q, (self.partials - q * o.partials) / o.value)

    def __rtruediv__(self, other):
        return self._lift(other) / self


def _jet_chain(f: Callable[[float], float], df: Callable[[float, float], float]):
    def apply(a: Jet) -> Jet:
        v = f(a.value)
        return Jet(v, df(a.value, v) * a.partials)

    return apply


def _sqrt_dfactor(a: float, v: float) -> float:
    if v == 0:
        raise DomainError("sqrt is not differentiable at 0")
    return 0.5 / v


def _inv_sqrt_one_minus_sq(a: float) -> float:
    d = 1.0 - a * a
    if d <= 0:
        raise DomainError("asin/acos derivative undefined at |x| >= 1")
    return 1.0 / math.sqrt(d)


_JET_FUNCS: dict[str, Callable] = {
    "const": float,
    "div": lambda a, b: a / b,
    "sin": _jet_chain(math.sin, lambda a, v: math.cos(a)),
    "cos": _jet_chain(math.cos, lambda a, v: -math.sin(a)),
    "tan": _jet_chain(math.tan, lambda a, v: 1.0 + v * v),
    "exp": _jet_chain(math.exp, lambda a, v: v),
    "log": _jet_chain(math.log, lambda a, v: 1.0 / a),
    "sqrt": _jet_chain(math.sqrt, _sqrt_dfactor),
    "sinh": _jet_chain(math.sinh, lambda a, v: math.cosh(a)),
    "cosh": _jet_chain(math.cosh, lambda a, v: math.sinh(a)),
    "tanh": _jet_chain(math.tanh, lambda a, v: 1.0 - v * v),
    "atan": _jet_chain(math.atan, lambda a, v: 1.0 / (1.0 + a * a)),
    "acos": _jet_chain(math.acos, lambda a, v: -_inv_sqrt_one_minus_sq(a)),
    "asin": _jet_chain(math.asin, lambda a, v: _inv_sqrt_one_minus_sq(a)),
    "abs": _jet_chain(abs, lambda a, v: _float_abs_sign(a)),
}


def evaluate_jet(expr: Expression, point: Sequence[float]) -> Jet:
    """Value and exact first partials with respect to all declared variables."""
    _check_point(expr, point)
    n = len(point)
    seeds = [Jet(float(v), np.eye(n)[k]) for k, v in enumerate(point)]
    try:
        jet = _interpret(expr.root, seeds, _JET_FUNCS)
    except (ValueError, ZeroDivisionError, OverflowError) as exc:
        raise DomainError(f"{unparse(expr)} at {tuple(point)}: {exc}") from exc
    if not isinstance(jet, Jet):
        jet = Jet(jet, np.zeros(n))
    return jet


def jacobian(fields: Sequence[Expression], point: Sequence[float]) -> np.ndarray:
    """Row ``i`` holds the partials of ``fields[i]``; shape ``(len(fields), len(point))``."""
    if not fields:
        return np.zeros((0, len(point)))
    names = fields[0].variables
    for f in fields:
        if f.variables != names:
            raise ValueError("all fields must share the same variable list")
    return np.array([evaluate_jet(f, point).partials for f in fields]).reshape(len(fields), len(point))


# --------------------------------------------------------------------------- Taylor jets


class Taylor:
    """Truncated univariate power series ``sum c[k] h^k``.

    Arithmetic propagates all coefficients exactly (up to rounding), so
    ``k! * c[k]`` is the k-th derivative of the represented function.
    """

    __slots__ = ("c",)

    def __init__(self, coeffs):
        self.c = np.asarray(coeffs, dtype=float)

    @property
    def order(self) -> int:
        return len(self.c) - 1

    def _lift(self, other) -> "Taylor":
        if isinstance(other, Taylor):
            return other
        c = np.zeros_like(self.c)
        c[0] = other
        return Taylor(c)

    def __add__(self, other):
        return Taylor(self.c + self._lift(other).c)

    __radd__ = __add__

    def __sub__(self, other):
        return Taylor(self.c - self._lift(other).c)

    def __rsub__(self, other):
        return Taylor(self._lift(other).c - self.c)

    def __neg__(self):
        return Taylor(-self.c)

    def __mul__(self, other):
        o = self._lift(other)
        return Taylor(np.convolve(self.c, o.c)[: len(self.c)])

    __rmul__ = __mul__

    def __truediv__(self, other):
        b = self._lift(other).c
        a = self.c
        if b[0] == 0:
            raise DomainError("division by zero")
        q = np.zeros_like(a)
        for k in range(len(a)):
            q[k] = (a[k] - np.dot(b[1 : k + 1], q[k - 1 :: -1][:k])) / b[0]
        return Taylor(q)

    def __rtruediv__(self, other):
        return self._lift(other) / self


def _series_integrate_rule(a: np.ndarray, g0: float, gfun: Callable[[np.ndarray], np.ndarray]):
    """Solve ``b' = g * a'`` coefficientwise where ``g`` may depend on ``b``.

    ``gfun(b_partial)`` must return the series of ``g`` valid through the
    coefficients already known.
    """
    n = len(a)
    b = np.zeros(n)
    b[0] = g0
    for k in range(1, n):
        g = gfun(b)
        j = np.arange(1, k + 1)
        b[k] = np.dot(j * a[1 : k + 1], g[k - j]) / k
    return b


def _t_exp(x: Taylor) -> Taylor:
    a = x.c
    b = np.zeros_like(a)
    b[0] = math.exp(a[0])
    for k in range(1, len(a)):
        j = np.arange(1, k + 1)
        b[k] = np.dot(j * a[1 : k + 1], b[k - j]) / k
    return Taylor(b)


def _t_log(x: Taylor) -> Taylor:
    a = x.c
    if a[0] <= 0:
        raise DomainError("log of non-positive value")
    b = np.zeros_like(a)
    b[0] = math.log(a[0])
    for k in range(1, len(a)):
        j = np.arange(1, k)
        b[k] = (a[k] - np.dot(j * b[1:k], a[k - j]) / k) / a[0]
    return Taylor(b)


def _t_sincos(x: Taylor, hyperbolic: bool) -> tuple[Taylor, Taylor]:
    a = x.c
    s = np.zeros_like(a)
    c = np.zeros_like(a)
    if hyperbolic:
        s[0], c[0] = math.sinh(a[0]), math.cosh(a[0])
    else:
        s[0], c[0] = math.sin(a[0]), math.cos(a[0])
    sign = 1.0 if hyperbolic else -1.0
    for k in range(1, len(a)):
        j = np.arange(1, k + 1)
        s[k] = np.dot(j * a[1 : k + 1], c[k - j]) / k
        c[k] = sign * np.dot(j * a[1 : k + 1], s[k - j]) / k
    return Taylor(s), Taylor(c)


def _t_sqrt(x: Taylor) -> Taylor:
    a = x.c
    if a[0] <= 0:
        raise DomainError("sqrt of non-positive value in Taylor mode")
    b = np.zeros_like(a)
    b[0] = math.sqrt(a[0])
    for k in range(1, len(a)):
        b[k] = (a[k] - np.dot(b[1:k], b[k - 1 : 0 : -1])) / (2 * b[0])
    return Taylor(b)


def _t_tan_like(x: Taylor, f: Callable[[float], float], sign: float) -> Taylor:
    # tan: b' = (1 + b^2) a', tanh: b' = (1 - b^2) a'
    def g(b):
        sq = np.convolve(b, b)[: len(b)]
        out = sign * sq
        out[0] += 1.0
        return out

    return Taylor(_series_integrate_rule(x.c, f(x.c[0]), g))


def _t_atan(x: Taylor) -> Taylor:
    g = (1.0 / (1.0 + x * x)).c
    return Taylor(_series_integrate_rule(x.c, math.atan(x.c[0]), lambda b: g))


def _t_asin_acos(x: Taylor, acos: bool) -> Taylor:
    if abs(x.c[0]) >= 1:
        raise DomainError("asin/acos argument outside (-1, 1) in Taylor mode")
    g = (1.0 / _t_sqrt(1.0 - x * x)).c
    if acos:
        return Taylor(_series_integrate_rule(x.c, math.acos(x.c[0]), lambda b: -g))
    return Taylor(_series_integrate_rule(x.c, math.asin(x.c[0]), lambda b: g))


def _t_abs(x: Taylor) -> Taylor:
    if x.c[0] == 0:
        raise DomainError("abs is not smooth at 0")
    return x if x.c[0] > 0 else -x


_TAYLOR_FUNCS: dict[str, Callable] = {
    "const": float,
    "div": lambda a, b: a / b,
    "sin": lambda x: _t_sincos(x, False)[0],
    "cos": lambda x: _t_sincos(x, False)[1],
    "tan": lambda x: _t_tan_like(x, math.tan, 1.0),
    "exp": _t_exp,
    "log": _t_log,
    "sqrt": _t_sqrt,
    "sinh": lambda x: _t_sincos(x, True)[0],
    "cosh": lambda x: _t_sincos(x, True)[1],
    "tanh": lambda x: _t_tan_like(x, math.tanh, -1.0),
    "atan": _t_atan,
    "acos": lambda x: _t_asin_acos(x, True),
    "asin": lambda x: _t_asin_acos(x, False),
    "abs": _t_abs,
}


def taylor_derivatives(expr: Expression, x: float, order: int) -> np.ndarray:
    """Derivatives ``f(x), f'(x), ..., f^(order)(x)`` of a univariate expression."""
    if len(expr.variables) != 1:
        raise ValueError("taylor_derivatives needs a univariate expression")
    seed = np.zeros(order + 1)
    seed[0] = x
    if order >= 1:
        seed[1] = 1.0
    try:
        series = _interpret(expr.root, [Taylor(seed)], _TAYLOR_FUNCS)
    except (ValueError, ZeroDivisionError, OverflowError) as exc:
        raise DomainError(f"{unparse(expr)} at {x}: {exc}") from exc
    if not isinstance(series, Taylor):
        c = np.zeros(order + 1)
        c[0] = series
        series = Taylor(c)
    return series.c * np.array([math.factorial(k) for k in range(order + 1)], dtype=float)


# --------------------------------------------------------------------------- code generation

_DERIV_FACTOR = {
    # (argument name, value name) -> derivative of func w.r.t. its argument
    "sin": lambda a, v: f"_cos({a})",
    "cos": lambda a, v: f"(-_sin({a}))",
    "tan": lambda a, v: f"(1.0 + {v}*{v})",
    "exp": lambda a, v: v,
    "log": lambda a, v: f"(1.0/{a})",
    "sqrt": lambda a, v: f"(0.5/{v})",
    "sinh": lambda a, v: f"_cosh({a})",
    "cosh": lambda a, v: f"_sinh({a})",
    "tanh": lambda a, v: f"(1.0 - {v}*{v})",
    "atan": lambda a, v: f"(1.0/(1.0 + {a}*{a}))",
    "acos": lambda a, v: f"(-1.0/_sqrt(1.0 - {a}*{a}))",
    "asin": lambda a, v: f"(1.0/_sqrt(1.0 - {a}*{a}))",
    "abs": lambda a, v: f"_sign({a})",
}

_NAMESPACE = {
    "_sin": math.sin, "_cos": math.cos, "_tan": math.tan, "_exp": math.exp,
    "_log": math.log, "_sqrt": math.sqrt, "_sinh": math.sinh, "_cosh": math.cosh,
    "_tanh": math.tanh, "_atan": math.atan, "_acos": math.acos, "_asin": math.asin,
    "_abs": abs, "_sign": _float_abs_sign, "_ipow": _ipow,
}


_TOTAL_FUNCS = {"sin", "cos", "exp", "sinh", "cosh", "tanh", "atan", "abs"}


def _is_total(node: Node) -> bool:
    """True if evaluation can never raise a domain error (given finite inputs)."""
    if isinstance(node, (Const, Var)):
        return True
    if isinstance(node, Neg):
        return _is_total(node.arg)
    if isinstance(node, Call):
        return node.func in _TOTAL_FUNCS and _is_total(node.arg)
    if isinstance(node, BinOp):
        return node.op != "/" and _is_total(node.left) and _is_total(node.right)
    if isinstance(node, Power):
        return float(node.exponent).is_integer() and node.exponent >= 0 and _is_total(node.base)
    return False


def _is_zero_product(zero: Node, other: Node) -> bool:
    # compile-time folding of 0*expr, only where it cannot hide a domain error
    return isinstance(zero, Const) and zero.value == 0.0 and _is_total(other)


class _Emitter:
    def __init__(self, derivs: bool):
        self.lines: list[str] = []
        self.count = 0
        self.derivs = derivs

    def tmp(self, code: str) -> str:
        name = f"_t{self.count}"
        self.count += 1
        self.lines.append(f"    {name} = {code}")
        return name

    def gen(self, node: Node) -> tuple[str, dict[int, str]]:
        if isinstance(node, Const):
            return repr(node.value), {}
        if isinstance(node, Var):
            return f"_a{node.index}", ({node.index: "1.0"} if self.derivs else {})
        if isinstance(node, Neg):
            v, d = self.gen(node.arg)
            return self.tmp(f"-{v}"), {i: self.tmp(f"-{di}") for i, di in d.items()}
        if isinstance(node, Call):
            a, da = self.gen(node.arg)
            v = self.tmp(f"_{node.func}({a})")
            if not da:
                return v, {}
            fac = self.tmp(_DERIV_FACTOR[node.func](a, v))
            return v, {i: self.tmp(f"{fac}*{di}") for i, di in da.items()}
        if isinstance(node, BinOp):
            if node.op == "*" and (_is_zero_product(node.left, node.right) or _is_zero_product(node.right, node.left)):
                return "0.0", {}
            a, da = self.gen(node.left)
            b, db = self.gen(node.right)
            keys = sorted(set(da) | set(db))
            if node.op == "+" and a == "0.0":
                return b, db
            if node.op in "+-" and b == "0.0":
                return a, da
            if node.op in "+-":
                v = self.tmp(f"{a} {node.op} {b}")
                d = {}
                for i in keys:
                    if i in da and i in db:
                        d[i] = self.tmp(f"{da[i]} {node.op} {db[i]}")
                    elif i in da:
                        d[i] = da[i]
                    else:
                        d[i] = db[i] if node.op == "+" else self.tmp(f"-{db[i]}")
                return v, d
            if node.op == "*":
                v = self.tmp(f"{a}*{b}")
                d = {}
                for i in keys:
                    terms = []
                    if i in da:
                        terms.append(f"{da[i]}*{b}")
                    if i in db:
                        terms.append(f"{a}*{db[i]}")
                    d[i] = self.tmp(" + ".join(terms))
                return v, d
            v = self.tmp(f"{a}/{b}")
            d = {}
            for i in keys:
                num = da.get(i, "0.0")
                if i in db:
                    num = f"({num} - {v}*{db[i]})"
                d[i] = self.tmp(f"{num}/{b}")
            return v, d
        base, db_ = self.gen(node.base)
        p = node.exponent
        if float(p).is_integer():
            k = int(p)
            if k == 0:
                return "1.0", {}
            if k == 1:
                return base, db_
            if 1 < k <= 4:
                v = self.tmp("*".join([base] * k))
            else:
                v = self.tmp(f"_ipow({base}, {k})")
            if not db_:
                return v, {}
            if k == 2:
                fac = self.tmp(f"2.0*{base}")
            elif k > 0:
                fac = self.tmp(f"{float(k)!r}*_ipow({base}, {k - 1})")
            else:
                fac = self.tmp(f"{float(k)!r}*{v}/{base}")
            return v, {i: self.tmp(f"{fac}*{di}") for i, di in db_.items()}
        v = self.tmp(f"_exp({p!r}*_log({base}))")
        if not db_:
            return v, {}
        fac = self.tmp(f"{p!r}*{v}/{base}")
        return v, {i: self.tmp(f"{fac}*{di}") for i, di in db_.items()}


class CompiledFields:
    """Fast evaluation of a list of expressions sharing one variable list.

    ``values(p)`` returns a float array of shape ``(k,)``; ``jacobian(p)``
    returns shape ``(k, n)``. Semantics match ``evaluate`` / ``jacobian``.
    """

    def __init__(self, fields: Sequence[Expression], variables: Sequence[str] | None = None):
        fields = tuple(fields)
        if variables is None:
            variables = fields[0].variables if fields else ()
        self.variables = tuple(variables)
        for f in fields:
            if f.variables != self.variables:
                raise ValueError("all fields must share the same variable list")
        self.fields = fields
        self.n = len(self.variables)
        args = ", ".join(f"_a{i}" for i in range(self.n))
        self._values = self._build(args, derivs=False)
        self._jacobian = self._build(args, derivs=True)

    @property
    def size(self) -> int:
        return len(self.fields)

    def _build(self, args: str, derivs: bool):
        em = _Emitter(derivs)
        outs = []
        for f in self.fields:
            v, d = em.gen(f.root)
            if derivs:
                outs.append("[" + ", ".join(d.get(i, "0.0") for i in range(self.n)) + "]")
            else:
                outs.append(v)
        body = "\n".join(em.lines)
        src = f"def _f({args}):\n{body}\n    return [{', '.join(outs)}]\n"
        namespace = dict(_NAMESPACE)
        exec(compile(src, "<pwmel-expr>", "exec"), namespace)
        return namespace["_f"]

    def values(self, point) -> np.ndarray:
        if isinstance(point, np.ndarray):
            point = point.tolist()
        try:
            return np.array(self._values(*point), dtype=float)
        except (ValueError, ZeroDivisionError, OverflowError) as exc:
            raise DomainError(f"field evaluation failed at {tuple(point)}: {exc}") from exc

    def jacobian(self, point) -> np.ndarray:
        if isinstance(point, np.ndarray):
            point = point.tolist()
        try:
            out = np.array(self._jacobian(*point), dtype=float)
        except (ValueError, ZeroDivisionError, OverflowError) as exc:
            raise DomainError(f"jacobian evaluation failed at {tuple(point)}: {exc}") from exc
        return out.reshape(len(self.fields), self.n)


def compile_fields(fields: Sequence[Expression], variables: Sequence[str] | None = None) -> CompiledFields:
    return CompiledFields(fields, variables)
