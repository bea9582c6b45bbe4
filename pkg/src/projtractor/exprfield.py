"""Analytic scalar fields on a coordinate chart.

Expressions over ``x1..xn`` are parsed into an interned AST (structurally equal
subtrees share one node), differentiated symbolically with light constant
folding, and compiled to vectorised numpy functions.  Every derivative is exact;
finite differences never enter this module.
"""

from __future__ import annotations

import itertools
import math
import re
import threading
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .errors import EvaluationError, ParseError

FUNCTIONS = ("sin", "cos", "exp", "sqrt", "log")


class Node:
    __slots__ = ("op", "value", "args", "__weakref__")

    def __init__(self, op: str, value, args: tuple):
        self.op = op
        self.value = value
        self.args = args

    def __repr__(self) -> str:
        return f"Node({to_text(self)})"


_table: dict[tuple, Node] = {}
_table_lock = threading.Lock()


def _intern(op: str, value, *args: Node) -> Node:
    key = (op, value, tuple(id(a) for a in args))
    node = _table.get(key)
    if node is None:
        with _table_lock:
            node = _table.get(key)
            if node is None:
                node = Node(op, value, args)
                _table[key] = node
    return node


def num(v: float) -> Node:
    return _intern("num", float(v))


def var(i: int) -> Node:
    return _intern("var", int(i))


ZERO = num(0.0)
ONE = num(1.0)


def _isnum(a: Node, v: float | None = None) -> bool:
    return a.op == "num" and (v is None or a.value == v)


def add(a: Node, b: Node) -> Node:
    if _isnum(a, 0.0):
        return b
    if _isnum(b, 0.0):
        return a
    if _isnum(a) and _isnum(b):
        return num(a.value + b.value)
    return _intern("add", None, a, b)


def sub(a: Node, b: Node) -> Node:
    if _isnum(b, 0.0):
        return a
    if _isnum(a, 0.0):
        return neg(b)
    if a is b:
        return ZERO
    if _isnum(a) and _isnum(b):
        return num(a.value - b.value)
    return _intern("sub", None, a, b)


def mul(a: Node, b: Node) -> Node:
    if _isnum(a, 0.0) or _isnum(b, 0.0):
        return ZERO
    if _isnum(a, 1.0):
        return b
    if _isnum(b, 1.0):
        return a
    if _isnum(a) and _isnum(b):
        return num(a.value * b.value)
    if _isnum(a, -1.0):
        return neg(b)
    if _isnum(b, -1.0):
        return neg(a)
    return _intern("mul", None, a, b)


def div(a: Node, b: Node) -> Node:
    if _isnum(b, 1.0):
        return a
    if _isnum(a, 0.0) and not _isnum(b, 0.0):
        return ZERO
    if _isnum(a) and _isnum(b) and b.value != 0.0:
        return num(a.value / b.value)
    return _intern("div", None, a, b)


def neg(a: Node) -> Node:
    if _isnum(a):
        return num(-a.value)
    if a.op == "neg":
        return a.args[0]
    return _intern("neg", None, a)


def power(a: Node, k: int) -> Node:
    k = int(k)
    if k == 0:
        return ONE
    if k == 1:
        return a
    if _isnum(a) and (a.value != 0.0 or k > 0):
        return num(a.value**k)
    return _intern("pow", k, a)


def func(name: str, a: Node) -> Node:
    if name not in FUNCTIONS:
        raise ValueError(f"unknown function {name!r}")
    if _isnum(a):
        v = a.value
        if name in ("sin", "cos", "exp"):
            return num(getattr(math, name)(v))
        if name == "sqrt" and v > 0:
            return num(math.sqrt(v))
        if name == "log" and v > 0:
            return num(math.log(v))
    return _intern(name, None, a)


# ---------------------------------------------------------------- differentiation

_dcache: dict[tuple[int, int], Node] = {}
_dlock = threading.Lock()


def diff(node: Node, i: int) -> Node:
    """Symbolic partial derivative of ``node`` with respect to ``x_{i+1}``."""
    key = (id(node), i)
    hit = _dcache.get(key)
    if hit is not None:
        return hit
    op = node.op
    if op == "num":
        d = ZERO
    elif op == "var":
        d = ONE if node.value == i else ZERO
    elif op == "add":
        d = add(diff(node.args[0], i), diff(node.args[1], i))
    elif op == "sub":
        d = sub(diff(node.args[0], i), diff(node.args[1], i))
    elif op == "neg":
        d = neg(diff(node.args[0], i))
    elif op == "mul":
        a, b = node.args
        d = add(mul(diff(a, i), b), mul(a, diff(b, i)))
    elif op == "div":
        a, b = node.args
        da, db = diff(a, i), diff(b, i)
        d = sub(div(da, b), div(mul(a, db), power(b, 2)))
    elif op == "pow":
        (a,) = node.args
        k = node.value
        d = mul(mul(num(k), power(a, k - 1)), diff(a, i))
    else:
        (a,) = node.args
        da = diff(a, i)
        if _isnum(da, 0.0):
            d = ZERO
        elif op == "sin":
            d = mul(func("cos", a), da)
        elif op == "cos":
            d = neg(mul(func("sin", a), da))
        elif op == "exp":
            d = mul(node, da)
        elif op == "sqrt":
            d = div(da, mul(num(2.0), node))
        elif op == "log":
            d = div(da, a)
        else:  # pragma: no cover
            raise AssertionError(op)
    with _dlock:
        _dcache[key] = d
    return d


# ---------------------------------------------------------------- printing

def to_text(node: Node) -> str:
    op = node.op
    if op == "num":
        v = node.value
        s = repr(v)
        return f"({s})" if v < 0 or s.startswith("-") else s
    if op == "var":
        return f"x{node.value + 1}"
    if op in ("add", "sub", "mul", "div"):
        sym = {"add": "+", "sub": "-", "mul": "*", "div": "/"}[op]
        return f"({to_text(node.args[0])} {sym} {to_text(node.args[1])})"
    if op == "neg":
        return f"(-{to_text(node.args[0])})"
    if op == "pow":
        k = node.value
        return f"({to_text(node.args[0])})^{k}" if k >= 0 else f"({to_text(node.args[0])})^({k})"
    return f"{op}({to_text(node.args[0])})"


# ---------------------------------------------------------------- parsing

_TOKEN = re.compile(
    r"\s*(?:(?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)|(?P<name>[A-Za-z_][A-Za-z_0-9]*)|(?P<op>[-+*/^(),]))"
)
_VAR = re.compile(r"x([1-9]\d*)$")


@dataclass(frozen=True)
class _Tok:
    kind: str
    text: str
    pos: int


def _tokenize(text: str) -> list[_Tok]:
    toks: list[_Tok] = []
    pos = 0
    while pos < len(text):
        if text[pos:].strip() == "":
            break
        m = _TOKEN.match(text, pos)
        if m is None or m.end() == pos:
            bad = text[pos:].lstrip()
            at = len(text) - len(bad)
            raise ParseError(f"unexpected character {bad[0]!r}", at, bad[0])
        kind = m.lastgroup
        toks.append(_Tok(kind, m.group(kind), m.start(kind)))
        pos = m.end()
    toks.append(_Tok("end", "", len(text)))
    return toks


class _Parser:
    def __init__(self, text: str, n: int):
        self.toks = _tokenize(text)
        self.i = 0
        self.n = n

    @property
    def cur(self) -> _Tok:
        return self.toks[self.i]

    def take(self) -> _Tok:
        t = self.toks[self.i]
        self.i += 1
        return t

    def expect(self, text: str) -> _Tok:
        t = self.cur
        if t.text != text or t.kind == "end":
            self.fail(f"expected {text!r}")
        return self.take()

    def fail(self, why: str):
        t = self.cur
        shown = t.text if t.kind != "end" else "end of input"
        raise ParseError(f"syntax error at token {shown!r}: {why}", t.pos, shown)

    def parse(self) -> Node:
        node = self.expr()
        if self.cur.kind != "end":
            self.fail("unexpected trailing input")
        return node

    def expr(self) -> Node:
        node = self.term()
        while self.cur.text in ("+", "-") and self.cur.kind == "op":
            op = self.take().text
            rhs = self.term()
            node = add(node, rhs) if op == "+" else sub(node, rhs)
        return node

    def term(self) -> Node:
        node = self.factor()
        while self.cur.text in ("*", "/") and self.cur.kind == "op":
            op = self.take().text
            rhs = self.factor()
            node = mul(node, rhs) if op == "*" else div(node, rhs)
        return node

    def factor(self) -> Node:
        if self.cur.kind == "op" and self.cur.text in ("-", "+"):
            op = self.take().text
            inner = self.factor()
            return neg(inner) if op == "-" else inner
        return self.power()

    def power(self) -> Node:
        base = self.atom()
        if self.cur.text == "^":
            self.take()
            k = self.exponent()
            if self.cur.text == "^":
                self.fail("chained exponent; use parentheses")
            return power(base, k)
        return base

    def exponent(self) -> int:
        paren = False
        if self.cur.text == "(":
            self.take()
            paren = True
        sign = 1
        if self.cur.text in ("-", "+"):
            sign = -1 if self.take().text == "-" else 1
        t = self.cur
        if t.kind != "num":
            self.fail("exponent must be an integer literal")
        val = float(t.text)
        if val != int(val):
            self.fail("exponent must be an integer literal")
        self.take()
        if paren:
            self.expect(")")
        return sign * int(val)

    def atom(self) -> Node:
        t = self.cur
        if t.kind == "num":
            self.take()
            return num(float(t.text))
        if t.kind == "name":
            self.take()
            if t.text in FUNCTIONS:
                if self.cur.text != "(":
                    raise ParseError(f"function {t.text!r} requires an argument list", t.pos, t.text)
                self.take()
                args = [self.expr()]
                while self.cur.text == ",":
                    self.take()
                    args.append(self.expr())
                self.expect(")")
                if len(args) != 1:
                    raise ParseError(
                        f"wrong arity for {t.text!r}: expected 1 argument, got {len(args)}", t.pos, t.text
                    )
                return func(t.text, args[0])
            m = _VAR.match(t.text)
            if m and 1 <= int(m.group(1)) <= self.n:
                return var(int(m.group(1)) - 1)
            raise ParseError(f"unknown identifier {t.text!r}", t.pos, t.text)
        if t.text == "(":
            self.take()
            node = self.expr()
            self.expect(")")
            return node
        self.fail("expected a number, variable, function or '('")


# ---------------------------------------------------------------- compilation

def _topo(roots: Iterable[Node]) -> list[Node]:
    seen: set[int] = set()
    out: list[Node] = []
    stack = [(r, False) for r in roots]
    while stack:
        node, done = stack.pop()
        if done:
            out.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for a in node.args:
            if id(a) not in seen:
                stack.append((a, False))
    return out


_NS = {"_sin": np.sin, "_cos": np.cos, "_exp": np.exp, "_sqrt": np.sqrt, "_log": np.log, "_np": np}


def compile_nodes(roots: Sequence[Node], n: int):
    """Compile expression nodes into ``f(x) -> array[..., len(roots)]`` over ``x[..., n]``."""
    order = _topo(roots)
    names: dict[int, str] = {}
    lines = ["def _f(x):"]
    for i in range(n):
        lines.append(f"    x{i + 1} = x[..., {i}]")
    k = 0
    for node in order:
        op = node.op
        if op == "num":
            names[id(node)] = repr(node.value) if node.value >= 0 else f"({node.value!r})"
            continue
        if op == "var":
            names[id(node)] = f"x{node.value + 1}"
            continue
        a = [names[id(c)] for c in node.args]
        if op == "add":
            rhs = f"{a[0]} + {a[1]}"
        elif op == "sub":
            rhs = f"{a[0]} - {a[1]}"
        elif op == "mul":
            rhs = f"{a[0]} * {a[1]}"
        elif op == "div":
            rhs = f"{a[0]} / {a[1]}"
        elif op == "neg":
            rhs = f"-{a[0]}"
        elif op == "pow":
            kk = node.value
            rhs = f"{a[0]} ** {kk}" if kk > 0 else f"1.0 / ({a[0]} ** {-kk})"
        else:
            rhs = f"_{op}({a[0]})"
        name = f"t{k}"
        k += 1
        lines.append(f"    {name} = {rhs}")
        names[id(node)] = name
    lines.append(f"    _out = _np.empty(x.shape[:-1] + ({len(roots)},))")
    for i, r in enumerate(roots):
        lines.append(f"    _out[..., {i}] = {names[id(r)]}")
    lines.append("    return _out")
    ns = dict(_NS)
    exec("\n".join(lines), ns)  # noqa: S102 - generated from the interned AST only
    return ns["_f"]


def _multi_indices(n: int, k: int):
    return list(itertools.combinations_with_replacement(range(n), k))


class JetBundle:
    """All partial derivatives up to ``order`` of several fields, evaluated together.

    Calling the bundle on points ``x[..., n]`` returns a list ``[F, dF, d2F, ...]``
    where ``dkF`` has shape ``x.shape[:-1] + (m,) + (n,)*k`` and is fully symmetric
    in its derivative axes.
    """

    def __init__(self, nodes: Sequence[Node], n: int, order: int):
        self.n = n
        self.m = len(nodes)
        self.order = order
        roots: list[Node] = []
        self._layout: list[list[tuple[int, tuple[int, ...]]]] = []
        for k in range(order + 1):
            lay = []
            for j, node in enumerate(nodes):
                for mi in _multi_indices(n, k):
                    d = node
                    for i in mi:
                        d = diff(d, i)
                    lay.append((j, mi))
                    roots.append(d)
            self._layout.append(lay)
        self._fn = compile_nodes(roots, n)
        # index maps from full (symmetric) derivative arrays to the compiled roots
        self._gather = []
        pos = 0
        for k, lay in enumerate(self._layout):
            shape = (self.m,) + (n,) * k
            idx = np.empty(shape, dtype=np.intp)
            for j, mi in lay:
                for perm in set(itertools.permutations(mi)):
                    idx[(j,) + perm] = pos
                pos += 1
            self._gather.append((idx, shape))

    def __call__(self, x, strict: bool = True) -> list[np.ndarray]:
        x = np.asarray(x, dtype=float)
        if x.shape[-1] != self.n:
            raise ValueError(f"expected points with {self.n} coordinates, got shape {x.shape}")
        batch = x.shape[:-1]
        try:
            if strict:
                with np.errstate(divide="raise", invalid="raise", over="raise"):
                    vals = self._fn(x)
            else:
                with np.errstate(all="ignore"):
                    vals = self._fn(x)
        except (FloatingPointError, ZeroDivisionError) as exc:
            raise EvaluationError(f"evaluation singularity: {exc}") from None
        return [vals[..., idx].reshape(batch + shape) for idx, shape in self._gather]


# ---------------------------------------------------------------- public type

@dataclass(frozen=True)
class Jet:
    value: np.ndarray
    gradient: np.ndarray | None = None
    hessian: np.ndarray | None = None
    third: np.ndarray | None = None


class ScalarFieldExpr:
    """Immutable parsed scalar field on an ``n``-dimensional chart."""

    def __init__(self, node: Node, n: int, source: str | None = None):
        self.node = node
        self.n = n
        self.source = source
        self._bundles: dict[int, JetBundle] = {}
        self._lock = threading.Lock()

    def __repr__(self) -> str:
        return f"ScalarFieldExpr({to_text(self.node)!r}, n={self.n})"

    def __str__(self) -> str:
        return to_text(self.node)

    def bundle(self, order: int) -> JetBundle:
        b = self._bundles.get(order)
        if b is None:
            with self._lock:
                b = self._bundles.get(order)
                if b is None:
                    b = JetBundle([self.node], self.n, order)
                    self._bundles[order] = b
        return b

    def __call__(self, x) -> np.ndarray:
        return self.bundle(0)(x)[0][..., 0]

    def derivative(self, i: int) -> "ScalarFieldExpr":
        return ScalarFieldExpr(diff(self.node, i), self.n)

    @property
    def is_zero(self) -> bool:
        return _isnum(self.node, 0.0)


def parse(text: str, n: int) -> ScalarFieldExpr:
    """Parse ``text`` as a field on an ``n``-dimensional chart."""
    if not isinstance(text, str) or not text.strip():
        raise ParseError("empty expression", 0, "")
    return ScalarFieldExpr(_Parser(text, n).parse(), n, source=text)


def constant(value: float, n: int) -> ScalarFieldExpr:
    return ScalarFieldExpr(num(value), n)


def eval_jet(f: ScalarFieldExpr, x, order: int = 3) -> Jet:
    """Exact partial derivatives of ``f`` up to ``order`` (at most 3) at ``x``."""
    if not 0 <= order <= 3:
        raise ValueError("order must be between 0 and 3")
    batch_ndim = np.ndim(x) - 1
    arrs = [np.take(a, 0, axis=batch_ndim) for a in f.bundle(order)(x)]
    arrs += [None] * (4 - len(arrs))
    return Jet(*arrs)
