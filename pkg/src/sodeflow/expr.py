"""Parse, print, and differentiate the scalar chart expressions of the toolkit.

Expressions are written over chart coordinates ``x1..xn``, fiber coordinates
``y1..yn``, the constants ``pi`` and ``e``, and the functions sin, cos, tan,
exp, log, sqrt, abs, atan, tanh.  Grammar (whitespace insignificant)::

    expr   := term (('+'|'-') term)*
    term   := unary (('*'|'/') unary)*
    unary  := '-' unary | power
    power  := atom ('^' power)?          # exponents: no bare unary minus
    atom   := NUMBER | IDENT | IDENT '(' expr ')' | '(' expr ')'

``^`` is right-associative and binds tighter than unary minus, so ``-x1^2``
is ``-(x1^2)`` and ``x1^-1`` is a syntax error (write ``x1^(-1)``).

Derivatives are algorithmic, not symbolic and not finite-difference: every
evaluation runs a compiled instruction tape through a truncated forward-mode
pass (dual numbers for first partials, hyper-duals for mixed seconds).  This
keeps the stacked derivative levels of the geometric formulas exact to
machine precision.  ``abs`` uses subgradient 0 at the origin, so expressions
built on it are differentiable only away from kinks.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import EvalDomainError, ExprSyntaxError

__all__ = [
    "Binding",
    "Expression",
    "parse",
    "evaluate",
    "partial",
    "second_partial",
    "FUNCTIONS",
]

FUNCTIONS = ("sin", "cos", "tan", "exp", "log", "sqrt", "abs", "atan", "tanh")
CONSTANTS = {"pi": math.pi, "e": math.e}


# ---------------------------------------------------------------------------
# AST


class Node:
    __slots__ = ()


@dataclass(frozen=True)
class Num(Node):
    value: float


@dataclass(frozen=True)
class Const(Node):
    name: str  # "pi" | "e"


@dataclass(frozen=True)
class Var(Node):
    axis: str  # "x" | "y"
    k: int  # 1-based coordinate index


@dataclass(frozen=True)
class Neg(Node):
    arg: Node


@dataclass(frozen=True)
class Bin(Node):
    op: str  # + - * / ^
    left: Node
    right: Node


@dataclass(frozen=True)
class Call(Node):
    fn: str
    arg: Node


def num(value: float) -> Node:
    """Literal builder that parses back to the identical tree (no negative Num)."""
    if value < 0:
        return Neg(Num(-value))
    return Num(float(value))


def var(axis: str, k: int) -> Node:
    if axis not in ("x", "y") or k < 1:
        raise ValueError(f"bad variable {axis}{k}")
    return Var(axis, k)


# ---------------------------------------------------------------------------
# Lexer / parser

_TOK_NUM = "num"
_TOK_IDENT = "ident"
_TOK_OP = "op"
_TOK_LPAREN = "("
_TOK_RPAREN = ")"
_TOK_EOF = "eof"


def _tokenize(text: str) -> list[tuple[str, str, int]]:
    toks = []
    i, n = 0, len(text)
    while i < n:
        c = text[i]
        if c.isspace():
            i += 1
            continue
        if c.isdigit() or (c == "." and i + 1 < n and text[i + 1].isdigit()):
            j = i
            while j < n and (text[j].isdigit() or text[j] == "."):
                j += 1
            if j < n and text[j] in "eE":
                k = j + 1
                if k < n and text[k] in "+-":
                    k += 1
                if k < n and text[k].isdigit():
                    j = k
                    while j < n and text[j].isdigit():
                        j += 1
            toks.append((_TOK_NUM, text[i:j], i))
            i = j
        elif c.isalpha() or c == "_":
            j = i
            while j < n and (text[j].isalnum() or text[j] == "_"):
                j += 1
            toks.append((_TOK_IDENT, text[i:j], i))
            i = j
        elif c in "+-*/^":
            toks.append((_TOK_OP, c, i))
            i += 1
        elif c == "(":
            toks.append((_TOK_LPAREN, c, i))
            i += 1
        elif c == ")":
            toks.append((_TOK_RPAREN, c, i))
            i += 1
        else:
            raise ExprSyntaxError(f"unexpected character {c!r}", i)
    toks.append((_TOK_EOF, "", n))
    return toks


class _Parser:
    def __init__(self, text: str):
        self.text = text
        self.toks = _tokenize(text)
        self.pos = 0

    def peek(self):
        return self.toks[self.pos]

    def next(self):
        t = self.toks[self.pos]
        self.pos += 1
        return t

    def expect(self, kind: str):
        t = self.next()
        if t[0] != kind:
            raise ExprSyntaxError(f"expected {kind!r}, found {t[1]!r}", t[2])
        return t

    def parse(self) -> Node:
        node = self.expr()
        t = self.peek()
        if t[0] != _TOK_EOF:
            raise ExprSyntaxError(f"trailing input {t[1]!r}", t[2])
        return node

    def expr(self) -> Node:
        node = self.term()
        while self.peek()[:2] in ((_TOK_OP, "+"), (_TOK_OP, "-")):
            op = self.next()[1]
            node = Bin(op, node, self.term())
        return node

    def term(self) -> Node:
        node = self.unary()
        while self.peek()[:2] in ((_TOK_OP, "*"), (_TOK_OP, "/")):
            op = self.next()[1]
            node = Bin(op, node, self.unary())
        return node

    def unary(self) -> Node:
        if self.peek()[:2] == (_TOK_OP, "-"):
            self.next()
            return Neg(self.unary())
        return self.power()

    def power(self) -> Node:
        base = self.atom()
        if self.peek()[:2] == (_TOK_OP, "^"):
            self.next()
            t = self.peek()
            if t[:2] == (_TOK_OP, "-"):
                raise ExprSyntaxError(
                    "unary minus in an exponent must be parenthesized", t[2]
                )
            return Bin("^", base, self.power())
        return base

    def atom(self) -> Node:
        kind, text, off = self.next()
        if kind == _TOK_NUM:
            return Num(float(text))
        if kind == _TOK_LPAREN:
            node = self.expr()
            self.expect(_TOK_RPAREN)
            return node
        if kind == _TOK_IDENT:
            if self.peek()[0] == _TOK_LPAREN:
                if text not in FUNCTIONS:
                    raise ExprSyntaxError(f"unknown function {text!r}", off)
                self.next()
                arg = self.expr()
                self.expect(_TOK_RPAREN)
                return Call(text, arg)
            if text in CONSTANTS:
                return Const(text)
            if text[0] in ("x", "y") and text[1:].isdigit():
                k = int(text[1:])
                if k < 1:
                    raise ExprSyntaxError("coordinate indices start at 1", off)
                return Var(text[0], k)
            raise ExprSyntaxError(f"unknown identifier {text!r}", off)
        raise ExprSyntaxError(f"expected a value, found {text!r}", off)


# ---------------------------------------------------------------------------
# Printer (minimal parentheses; print -> parse is structurally the identity)

_PREC_ADD, _PREC_MUL, _PREC_NEG, _PREC_POW, _PREC_ATOM = 1, 2, 3, 4, 5


def _prec(node: Node) -> int:
    if isinstance(node, Bin):
        return {"+": _PREC_ADD, "-": _PREC_ADD, "*": _PREC_MUL, "/": _PREC_MUL, "^": _PREC_POW}[node.op]
    if isinstance(node, Neg):
        return _PREC_NEG
    return _PREC_ATOM


def _fmt_num(v: float) -> str:
    if v == int(v) and abs(v) < 1e16:
        return str(int(v))
    return repr(v)


def to_string(node: Node) -> str:
    if isinstance(node, Num):
        return _fmt_num(node.value)
    if isinstance(node, Const):
        return node.name
    if isinstance(node, Var):
        return f"{node.axis}{node.k}"
    if isinstance(node, Neg):
        s = to_string(node.arg)
        if _prec(node.arg) < _PREC_NEG:
            s = f"({s})"
        return f"-{s}"
    if isinstance(node, Call):
        return f"{node.fn}({to_string(node.arg)})"
    if isinstance(node, Bin):
        lp, rp = _prec(node.left), _prec(node.right)
        ls, rs = to_string(node.left), to_string(node.right)
        if node.op in "+-":
            if lp < _PREC_ADD:
                ls = f"({ls})"
            if rp <= _PREC_ADD:
                rs = f"({rs})"
        elif node.op in "*/":
            if lp < _PREC_MUL:
                ls = f"({ls})"
            if rp <= _PREC_MUL:
                rs = f"({rs})"
        else:  # ^: base must be an atom, exponent a power
            if lp < _PREC_ATOM:
                ls = f"({ls})"
            if rp < _PREC_POW:
                rs = f"({rs})"
        return f"{ls}{node.op}{rs}"
    raise TypeError(f"not an expression node: {node!r}")


# ---------------------------------------------------------------------------
# Tape compilation (variable slots: x1..xn -> 0..n-1, y1..yn -> n..2n-1)


@dataclass(frozen=True)
class Tape:
    code: np.ndarray  # (m, 2) int64 rows [opcode, arg]
    consts: np.ndarray  # float64
    stack_size: int
    n: int


def _compile(node: Node, n: int) -> Tape:
    code: list[tuple[int, int]] = []
    consts: list[float] = []

    def const_ix(v: float) -> int:
        consts.append(v)
        return len(consts) - 1

    def emit(nd: Node) -> int:
        """Append instructions for nd; return stack depth it needs."""
        if isinstance(nd, Num):
            code.append((kernels.OP_CONST, const_ix(nd.value)))
            return 1
        if isinstance(nd, Const):
            code.append((kernels.OP_CONST, const_ix(CONSTANTS[nd.name])))
            return 1
        if isinstance(nd, Var):
            if nd.k > n:
                raise EvalDomainError(
                    f"variable {nd.axis}{nd.k} exceeds dimension {n}"
                )
            slot = (nd.k - 1) if nd.axis == "x" else (n + nd.k - 1)
            code.append((kernels.OP_VAR, slot))
            return 1
        if isinstance(nd, Neg):
            d = emit(nd.arg)
            code.append((kernels.OP_NEG, 0))
            return d
        if isinstance(nd, Call):
            d = emit(nd.arg)
            code.append((kernels.FN_OPS[nd.fn], 0))
            return d
        if isinstance(nd, Bin):
            if nd.op == "^" and isinstance(nd.right, Num):
                v = nd.right.value
                if v == int(v) and abs(v) <= 64:
                    d = emit(nd.left)
                    code.append((kernels.OP_POWI, int(v)))
                    return d
            d1 = emit(nd.left)
            d2 = emit(nd.right)
            code.append((kernels.BIN_OPS[nd.op], 0))
            return max(d1, 1 + d2)
        raise TypeError(f"not an expression node: {nd!r}")

    depth = emit(node)
    # +1 slack: the third-order walker needs one scratch slot above the top
    return Tape(
        code=np.array(code, dtype=np.int64).reshape(-1, 2),
        consts=np.array(consts, dtype=np.float64),
        stack_size=depth + 1,
        n=n,
    )


# ---------------------------------------------------------------------------
# Bindings and the public Expression type


@dataclass(frozen=True)
class Binding:
    """Values for the chart and fiber coordinates of a single point of TM."""

    n: int
    x: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        x = np.asarray(self.x, dtype=np.float64)
        y = np.asarray(self.y, dtype=np.float64)
        if x.shape != (self.n,) or y.shape != (self.n,):
            raise ValueError(f"binding arrays must both have length n={self.n}")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", y)

    @classmethod
    def of(cls, x, y) -> "Binding":
        x = np.atleast_1d(np.asarray(x, dtype=np.float64))
        return cls(len(x), x, np.atleast_1d(np.asarray(y, dtype=np.float64)))

    @property
    def flat(self) -> np.ndarray:
        return np.concatenate([self.x, self.y])


def _var_slot(name: str, n: int) -> int:
    if not (name and name[0] in "xy" and name[1:].isdigit()):
        raise ValueError(f"bad variable name {name!r} (expected x<k> or y<k>)")
    k = int(name[1:])
    if not 1 <= k <= n:
        raise ValueError(f"variable {name} outside dimension {n}")
    return k - 1 if name[0] == "x" else n + k - 1


class Expression:
    """An immutable parsed expression with exact forward-mode derivatives."""

    __slots__ = ("node", "_tapes", "max_index")

    def __init__(self, node: Node):
        self.node = node
        self._tapes: dict[int, Tape] = {}
        self.max_index = _max_index(node)

    @property
    def min_dimension(self) -> int:
        return self.max_index

    def tape(self, n: int) -> Tape:
        t = self._tapes.get(n)
        if t is None:
            t = _compile(self.node, n)
            self._tapes[n] = t
        return t

    def __str__(self) -> str:
        return to_string(self.node)

    def __repr__(self) -> str:
        return f"Expression({to_string(self.node)!r})"

    def __eq__(self, other) -> bool:
        return isinstance(other, Expression) and self.node == other.node

    def __hash__(self) -> int:
        return hash(self.node)

    # -- evaluation ---------------------------------------------------------

    def evaluate(self, b: Binding) -> float:
        t = self.tape(b.n)
        v = kernels.eval_value(t.code, t.consts, b.flat, np.empty(t.stack_size))
        if not math.isfinite(v):
            _diagnose(self.node, b)  # raises with the offending subexpression
            raise EvalDomainError(f"non-finite value of '{self}' at {_bstr(b)}")
        return float(v)

    def partial(self, name: str, b: Binding) -> float:
        t = self.tape(b.n)
        seed = np.zeros(2 * b.n)
        seed[_var_slot(name, b.n)] = 1.0
        v, d = kernels.eval_dual(
            t.code, t.consts, b.flat, seed, np.empty((t.stack_size, 2))
        )
        if not math.isfinite(v):
            _diagnose(self.node, b)
            raise EvalDomainError(f"non-finite value of '{self}' at {_bstr(b)}")
        if not math.isfinite(d):
            raise EvalDomainError(
                f"non-finite derivative d/d{name} of '{self}' at {_bstr(b)}"
            )
        return float(d)

    def second_partial(self, name1: str, name2: str, b: Binding) -> float:
        t = self.tape(b.n)
        s1 = np.zeros(2 * b.n)
        s2 = np.zeros(2 * b.n)
        s1[_var_slot(name1, b.n)] = 1.0
        s2[_var_slot(name2, b.n)] = 1.0
        out = kernels.eval_hyper(
            t.code, t.consts, b.flat, s1, s2, np.empty((t.stack_size, 4))
        )
        if not math.isfinite(out[0]):
            _diagnose(self.node, b)
            raise EvalDomainError(f"non-finite value of '{self}' at {_bstr(b)}")
        if not math.isfinite(out[3]):
            raise EvalDomainError(
                f"non-finite d2/d{name1}d{name2} of '{self}' at {_bstr(b)}"
            )
        return float(out[3])

    def third_partial(self, name1: str, name2: str, name3: str, b: Binding) -> float:
        # Internal use only (the Finsler connection stacks three levels);
        # not part of the supported differentiation surface.
        t = self.tape(b.n)
        seeds = np.zeros((3, 2 * b.n))
        for i, name in enumerate((name1, name2, name3)):
            seeds[i, _var_slot(name, b.n)] = 1.0
        out = kernels.eval_triple(
            t.code, t.consts, b.flat, seeds[0], seeds[1], seeds[2],
            np.empty((t.stack_size, 8)),
        )
        if not math.isfinite(out[0]):
            _diagnose(self.node, b)
            raise EvalDomainError(f"non-finite value of '{self}' at {_bstr(b)}")
        if not math.isfinite(out[7]):
            raise EvalDomainError(
                f"non-finite third derivative of '{self}' at {_bstr(b)}"
            )
        return float(out[7])


def _max_index(node: Node) -> int:
    if isinstance(node, Var):
        return node.k
    if isinstance(node, Neg):
        return _max_index(node.arg)
    if isinstance(node, Call):
        return _max_index(node.arg)
    if isinstance(node, Bin):
        return max(_max_index(node.left), _max_index(node.right))
    return 0


# ---------------------------------------------------------------------------
# Domain-error diagnosis (slow recursive walk, only runs on failure)


def _bstr(b: Binding) -> str:
    xs = ", ".join(f"x{i+1}={v:g}" for i, v in enumerate(b.x))
    ys = ", ".join(f"y{i+1}={v:g}" for i, v in enumerate(b.y))
    return f"({xs}; {ys})"


def _diagnose(node: Node, b: Binding) -> float:
    """Re-evaluate recursively, raising at the first domain violation."""

    def fail(nd: Node, why: str):
        raise EvalDomainError(f"{why} in '{to_string(nd)}' at {_bstr(b)}")

    def ev(nd: Node) -> float:
        if isinstance(nd, Num):
            return nd.value
        if isinstance(nd, Const):
            return CONSTANTS[nd.name]
        if isinstance(nd, Var):
            if nd.k > b.n:
                fail(nd, f"variable index exceeds dimension {b.n}")
            return b.x[nd.k - 1] if nd.axis == "x" else b.y[nd.k - 1]
        if isinstance(nd, Neg):
            return -ev(nd.arg)
        if isinstance(nd, Call):
            v = ev(nd.arg)
            if nd.fn == "log" and v <= 0:
                fail(nd, f"log of non-positive value {v:g}")
            if nd.fn == "sqrt" and v < 0:
                fail(nd, f"sqrt of negative value {v:g}")
            try:
                r = getattr(math, nd.fn if nd.fn != "abs" else "fabs")(v)
            except (OverflowError, ValueError):
                fail(nd, "result overflows")
            if not math.isfinite(r):
                fail(nd, f"non-finite result {r}")
            return r
        if isinstance(nd, Bin):
            a, c = ev(nd.left), ev(nd.right)
            if nd.op == "/":
                if c == 0:
                    fail(nd, "division by zero")
                r = a / c
            elif nd.op == "^":
                if a < 0 and c != int(c):
                    fail(nd, f"negative base {a:g} with non-integer exponent {c:g}")
                if a == 0 and c < 0:
                    fail(nd, "zero base with negative exponent")
                try:
                    r = a ** c
                except OverflowError:
                    fail(nd, "result overflows")
            else:
                r = {"+": a + c, "-": a - c, "*": a * c}[nd.op]
            if not math.isfinite(r):
                fail(nd, f"non-finite result {r}")
            return r
        raise TypeError(f"not an expression node: {nd!r}")

    return ev(node)


# ---------------------------------------------------------------------------
# Module-level convenience API


def parse(text: str, dim: int | None = None) -> Expression:
    """Parse ``text`` into an Expression; with ``dim``, reject out-of-range indices."""
    e = Expression(_Parser(text).parse())
    if dim is not None and e.max_index > dim:
        raise ExprSyntaxError(
            f"variable index {e.max_index} exceeds declared dimension {dim}", 0
        )
    return e


def as_expression(obj) -> Expression:
    if isinstance(obj, Expression):
        return obj
    if isinstance(obj, Node):
        return Expression(obj)
    if isinstance(obj, str):
        return parse(obj)
    raise TypeError(f"cannot interpret {obj!r} as an expression")


def evaluate(e: Expression | str, b: Binding) -> float:
    return as_expression(e).evaluate(b)


def partial(e: Expression | str, name: str, b: Binding) -> float:
    return as_expression(e).partial(name, b)


def second_partial(e: Expression | str, name1: str, name2: str, b: Binding) -> float:
    return as_expression(e).second_partial(name1, name2, b)
