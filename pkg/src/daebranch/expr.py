"""A small expression language for problem definitions.

Grammar::

    expr   := term (('+'|'-') term)*
    term   := factor (('*'|'/') factor)*
    factor := '-' factor | power
    power  := atom ('^' factor)?
    atom   := NUMBER | IDENT | IDENT '[' '-'? NUMBER ']'
            | IDENT '(' expr (',' expr)* ')' | '(' expr ')'

Identifiers are the state variables ``x1..xk``, ``y1..ys``, the time ``t``
and the functions ``sin cos exp sqrt tanh expdelay``.  ``x1[-0.5]`` is the
value of x1 half a time unit ago and ``expdelay(rho, x1)`` is the
exponentially weighted average ``rho * int_{-inf}^0 exp(rho*s) x1(s) ds``.

Expressions are immutable trees of frozen dataclasses.  :func:`compile_expr`
turns a tree into a closure ``fn(t, z, history)`` for the integrator's inner
loop.
"""
from __future__ import annotations

import math
import re
from dataclasses import dataclass
from typing import Callable, Mapping, Sequence

import numpy as np

from .errors import DaeBranchError, EvalDomainError, ParseError

FUNCTIONS = {"sin": 1, "cos": 1, "exp": 1, "sqrt": 1, "tanh": 1, "expdelay": 2}
_VAR_RE = re.compile(r"^([xy])([1-9][0-9]*)$")
EXPDELAY_CUTOFF = 1e-8


class Expr:
    __slots__ = ()

    def __str__(self):
        return to_source(self)


@dataclass(frozen=True)
class Num(Expr):
    value: float


@dataclass(frozen=True)
class Var(Expr):
    name: str


@dataclass(frozen=True)
class Delayed(Expr):
    name: str
    offset: float


@dataclass(frozen=True)
class Neg(Expr):
    arg: Expr


@dataclass(frozen=True)
class BinOp(Expr):
    op: str
    left: Expr
    right: Expr


@dataclass(frozen=True)
class Call(Expr):
    func: str
    args: tuple


# --------------------------------------------------------------------------
# tokenizer and parser
# --------------------------------------------------------------------------
_TOKEN_RE = re.compile(
    r"\s*(?:(?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)|(?P<ident>[A-Za-z_][A-Za-z_0-9]*)|(?P<op>[-+*/^(),\[\]]))"
)


@dataclass
class _Tok:
    kind: str
    text: str
    pos: int


def _byte_offset(source: str, pos: int) -> int:
    return len(source[:pos].encode("utf-8"))


def _tokenize(source: str) -> list[_Tok]:
    toks = []
    pos = 0
    while pos < len(source):
        if source[pos:].strip() == "":
            break
        m = _TOKEN_RE.match(source, pos)
        if not m:
            start = pos + (len(source[pos:]) - len(source[pos:].lstrip()))
            raise ParseError(f"unexpected character {source[start]!r}", _byte_offset(source, start), source)
        kind = m.lastgroup
        start = m.start(kind)
        text = m.group(kind)
        end = m.end()
        if kind == "num" and end < len(source) and (source[end].isalnum() or source[end] in "._"):
            raise ParseError(f"malformed number {source[start:end + 1]!r}", _byte_offset(source, start), source)
        toks.append(_Tok(kind, text, start))
        pos = end
    toks.append(_Tok("end", "", len(source)))
    return toks


class _Parser:
    def __init__(self, source, variables, tau_max):
        self.source = source
        self.toks = _tokenize(source)
        self.i = 0
        self.variables = variables
        self.tau_max = tau_max

    def error(self, message, tok=None):
        tok = tok or self.toks[self.i]
        return ParseError(message, _byte_offset(self.source, tok.pos), self.source)

    @property
    def tok(self):
        return self.toks[self.i]

    def take(self, text=None):
        tok = self.toks[self.i]
        if text is not None and tok.text != text:
            want = "end of input" if text == "" else repr(text)
            got = "end of input" if tok.kind == "end" else repr(tok.text)
            raise self.error(f"expected {want}, found {got}")
        self.i += 1
        return tok

    def parse(self):
        e = self.expr()
        if self.tok.kind != "end":
            raise self.error(f"unexpected token {self.tok.text!r}")
        return e

    def expr(self):
        e = self.term()
        while self.tok.text in ("+", "-") and self.tok.kind == "op":
            op = self.take().text
            e = BinOp(op, e, self.term())
        return e

    def term(self):
        e = self.factor()
        while self.tok.text in ("*", "/") and self.tok.kind == "op":
            op = self.take().text
            e = BinOp(op, e, self.factor())
        return e

    def factor(self):
        if self.tok.kind == "op" and self.tok.text == "-":
            self.take()
            arg = self.factor()
            if isinstance(arg, Num):
                return Num(-arg.value)
            return Neg(arg)
        return self.power()

    def power(self):
        base = self.atom()
        if self.tok.kind == "op" and self.tok.text == "^":
            self.take()
            return BinOp("^", base, self.factor())
        return base

    def check_var(self, tok):
        name = tok.text
        if name == "t":
            return
        ok = _VAR_RE.match(name) is not None
        if ok and self.variables is not None:
            ok = name in self.variables
        if not ok:
            raise self.error(f"unknown identifier {name!r}", tok)

    def atom(self):
        tok = self.tok
        if tok.kind == "num":
            self.take()
            return Num(float(tok.text))
        if tok.kind == "op" and tok.text == "(":
            self.take()
            e = self.expr()
            self.take(")")
            return e
        if tok.kind == "ident":
            self.take()
            name = tok.text
            nxt = self.tok
            if name in FUNCTIONS:
                if not (nxt.kind == "op" and nxt.text == "("):
                    raise self.error(f"function {name!r} must be called with arguments", tok)
                return self.call(tok)
            self.check_var(tok)
            if nxt.kind == "op" and nxt.text == "(":
                raise self.error(f"unknown function {name!r}", tok)
            if nxt.kind == "op" and nxt.text == "[":
                return self.delayed(tok)
            return Var(name)
        if tok.kind == "end":
            raise self.error("unexpected end of input")
        raise self.error(f"unexpected token {tok.text!r}")

    def delayed(self, tok):
        if tok.text == "t":
            raise self.error("time cannot be delayed", tok)
        self.take("[")
        sign = 1.0
        if self.tok.kind == "op" and self.tok.text == "-":
            self.take()
            sign = -1.0
        num = self.tok
        if num.kind != "num":
            raise self.error("delay offset must be a number")
        self.take()
        self.take("]")
        offset = sign * float(num.text)
        if offset > 0:
            raise self.error("delay offset must be <= 0", num)
        if self.tau_max is not None and -offset > self.tau_max * (1 + 1e-12):
            raise self.error(f"delay offset {offset} reaches beyond tau_max={self.tau_max}", num)
        return Delayed(tok.text, offset + 0.0)

    def call(self, tok):
        name = tok.text
        self.take("(")
        args = [self.expr()]
        while self.tok.kind == "op" and self.tok.text == ",":
            self.take()
            args.append(self.expr())
        self.take(")")
        if len(args) != FUNCTIONS[name]:
            raise self.error(f"{name} takes {FUNCTIONS[name]} argument(s), got {len(args)}", tok)
        if name == "expdelay":
            rho, var = args
            if free_symbols(rho) or has_functional(rho):
                raise self.error("expdelay rate must be a constant", tok)
            rho = Num(evaluate(rho, {}))
            if not rho.value > 0:
                raise self.error("expdelay rate must be positive", tok)
            if not (isinstance(var, Var) and var.name != "t"):
                raise self.error("expdelay averages a single state variable", tok)
            args = [rho, var]
        return Call(name, tuple(args))


def parse(source: str, k: int | None = None, s: int | None = None,
          tau_max: float | None = None, variables: Sequence[str] | None = None) -> Expr:
    """Parse ``source``; with ``k``/``s`` given, only x1..xk, y1..ys are accepted."""
    if variables is None and (k is not None or s is not None):
        variables = [f"x{i + 1}" for i in range(k or 0)] + [f"y{i + 1}" for i in range(s or 0)]
    return _Parser(source, None if variables is None else set(variables), tau_max).parse()


# --------------------------------------------------------------------------
# printing
# --------------------------------------------------------------------------
_PREC = {"+": 1, "-": 1, "*": 2, "/": 2, "^": 4}


def _fmt_num(v: float) -> str:
    if v == int(v) and abs(v) < 1e15:
        return str(int(v))
    return repr(v)


def _prec(e: Expr) -> int:
    if isinstance(e, BinOp):
        return _PREC[e.op]
    if isinstance(e, Neg) or (isinstance(e, Num) and (e.value < 0 or math.copysign(1, e.value) < 0)):
        return 3
    return 5


def to_source(e: Expr) -> str:
    """Render with the fewest parentheses that re-parse to the same tree."""
    if isinstance(e, Num):
        return _fmt_num(e.value)
    if isinstance(e, Var):
        return e.name
    if isinstance(e, Delayed):
        return f"{e.name}[{_fmt_num(e.offset)}]"
    if isinstance(e, Call):
        return f"{e.func}({', '.join(to_source(a) for a in e.args)})"
    if isinstance(e, Neg):
        inner = to_source(e.arg)
        if _prec(e.arg) < 3 or isinstance(e.arg, Num):
            inner = f"({inner})"
        return f"-{inner}"
    if isinstance(e, BinOp):
        p = _PREC[e.op]
        left, right = to_source(e.left), to_source(e.right)
        if e.op == "^":
            if _prec(e.left) <= 4:
                left = f"({left})"
            if _prec(e.right) < 3:
                right = f"({right})"
            return f"{left}^{right}"
        if _prec(e.left) < p:
            left = f"({left})"
        if _prec(e.right) <= p:
            right = f"({right})"
        sep = f" {e.op} " if p == 1 else e.op
        return f"{left}{sep}{right}"
    raise TypeError(f"not an expression: {e!r}")


# --------------------------------------------------------------------------
# inspection
# --------------------------------------------------------------------------
def walk(e: Expr):
    yield e
    if isinstance(e, Neg):
        yield from walk(e.arg)
    elif isinstance(e, BinOp):
        yield from walk(e.left)
        yield from walk(e.right)
    elif isinstance(e, Call):
        for a in e.args:
            yield from walk(a)


def free_symbols(e: Expr) -> set[str]:
    out = set()
    for node in walk(e):
        if isinstance(node, (Var, Delayed)):
            out.add(node.name)
    return out


def has_functional(e: Expr) -> bool:
    return any(isinstance(n, Delayed) or (isinstance(n, Call) and n.func == "expdelay") for n in walk(e))


def delay_offsets(e: Expr) -> set[float]:
    return {n.offset for n in walk(e) if isinstance(n, Delayed)}


def has_distributed(e: Expr) -> bool:
    return any(isinstance(n, Call) and n.func == "expdelay" for n in walk(e))


# --------------------------------------------------------------------------
# simplifying constructors
# --------------------------------------------------------------------------
def _is(e, v):
    return isinstance(e, Num) and e.value == v


def neg(a: Expr) -> Expr:
    if isinstance(a, Num):
        return Num(-a.value + 0.0)
    if isinstance(a, Neg):
        return a.arg
    if isinstance(a, BinOp) and a.op in ("*", "/") and isinstance(a.left, Num):
        return BinOp(a.op, Num(-a.left.value + 0.0), a.right)
    return Neg(a)


def add(a: Expr, b: Expr) -> Expr:
    if isinstance(a, Num) and isinstance(b, Num):
        return Num(a.value + b.value)
    if _is(a, 0):
        return b
    if _is(b, 0):
        return a
    if isinstance(b, Neg):
        return sub(a, b.arg)
    if isinstance(b, Num) and b.value < 0:
        return BinOp("-", a, Num(-b.value))
    return BinOp("+", a, b)


def sub(a: Expr, b: Expr) -> Expr:
    if isinstance(a, Num) and isinstance(b, Num):
        return Num(a.value - b.value)
    if _is(b, 0):
        return a
    if _is(a, 0):
        return neg(b)
    if isinstance(b, Neg):
        return add(a, b.arg)
    return BinOp("-", a, b)


def mul(a: Expr, b: Expr) -> Expr:
    if isinstance(a, Num) and isinstance(b, Num):
        return Num(a.value * b.value)
    if _is(a, 0) or _is(b, 0):
        return Num(0.0)
    if _is(a, 1):
        return b
    if _is(b, 1):
        return a
    if _is(a, -1):
        return neg(b)
    if _is(b, -1):
        return neg(a)
    if isinstance(b, Num):
        a, b = b, a
    if isinstance(a, Num) and isinstance(b, BinOp) and b.op == "*" and isinstance(b.left, Num):
        return mul(Num(a.value * b.left.value), b.right)
    if isinstance(a, Num) and isinstance(b, Neg):
        return mul(Num(-a.value), b.arg)
    return BinOp("*", a, b)


def div(a: Expr, b: Expr) -> Expr:
    if isinstance(a, Num) and isinstance(b, Num) and b.value != 0:
        return Num(a.value / b.value)
    if _is(b, 1):
        return a
    if _is(a, 0) and not _is(b, 0):
        return Num(0.0)
    return BinOp("/", a, b)


def power(a: Expr, b: Expr) -> Expr:
    if _is(b, 1):
        return a
    if _is(b, 0):
        return Num(1.0)
    if isinstance(a, Num) and isinstance(b, Num):
        try:
            return Num(math.pow(a.value, b.value))
        except (ValueError, OverflowError):
            pass
    return BinOp("^", a, b)


def call(func: str, arg: Expr) -> Expr:
    if isinstance(arg, Num):
        try:
            return Num(_SCALAR_FUNCS[func](arg.value))
        except (ValueError, OverflowError, EvalDomainError):
            pass
    return Call(func, (arg,))


# --------------------------------------------------------------------------
# symbolic differentiation
# --------------------------------------------------------------------------
def differentiate(e: Expr, var: str) -> Expr:
    """Partial derivative of a delay-free expression, lightly simplified."""
    if isinstance(e, Num):
        return Num(0.0)
    if isinstance(e, Var):
        return Num(1.0 if e.name == var else 0.0)
    if isinstance(e, Delayed) or (isinstance(e, Call) and e.func == "expdelay"):
        raise DaeBranchError("cannot differentiate functional term")
    if isinstance(e, Neg):
        return neg(differentiate(e.arg, var))
    if isinstance(e, BinOp):
        a, b = e.left, e.right
        da, db = differentiate(a, var), differentiate(b, var)
        if e.op == "+":
            return add(da, db)
        if e.op == "-":
            return sub(da, db)
        if e.op == "*":
            return add(mul(da, b), mul(a, db))
        if e.op == "/":
            return div(sub(mul(da, b), mul(a, db)), power(b, Num(2.0)))
        if e.op == "^":
            if _is(db, 0) and not has_functional(b) and var not in free_symbols(b):
                if isinstance(b, Num):
                    return mul(mul(b, power(a, Num(b.value - 1.0))), da)
                return mul(mul(b, power(a, sub(b, Num(1.0)))), da)
            if isinstance(a, Num) and a.value > 0:
                return mul(mul(e, Num(math.log(a.value))), db)
            raise DaeBranchError("variable base with variable exponent is not differentiable in this language")
    if isinstance(e, Call):
        (u,) = e.args
        du = differentiate(u, var)
        if _is(du, 0):
            return Num(0.0)
        if e.func == "sin":
            return mul(call("cos", u), du)
        if e.func == "cos":
            return mul(neg(call("sin", u)), du)
        if e.func == "exp":
            return mul(e, du)
        if e.func == "sqrt":
            return div(du, mul(Num(2.0), e))
        if e.func == "tanh":
            return mul(sub(Num(1.0), power(e, Num(2.0))), du)
    raise TypeError(f"cannot differentiate {e!r}")


# --------------------------------------------------------------------------
# substitution
# --------------------------------------------------------------------------
def _combination(terms, leaf):
    out = None
    for coef, name in terms:
        if coef == 0:
            continue
        node = leaf(name)
        if out is None:
            out = mul(Num(coef), node)
        elif coef < 0:
            out = sub(out, mul(Num(-coef), node))
        else:
            out = add(out, mul(Num(coef), node))
    return Num(0.0) if out is None else out


def linear_substitute(e: Expr, coeffs: Mapping[str, Sequence[tuple[float, str]]]) -> Expr:
    """Replace each old variable by a linear combination of new ones.

    ``coeffs[old] = [(c, new), ...]``.  Delayed references and exponential
    averages are linear in the state, so they are substituted termwise.
    """
    if isinstance(e, Num):
        return e
    if isinstance(e, Var):
        if e.name in coeffs:
            return _combination(coeffs[e.name], Var)
        return e
    if isinstance(e, Delayed):
        if e.name in coeffs:
            return _combination(coeffs[e.name], lambda nm: Delayed(nm, e.offset))
        return e
    if isinstance(e, Neg):
        return neg(linear_substitute(e.arg, coeffs))
    if isinstance(e, BinOp):
        a = linear_substitute(e.left, coeffs)
        b = linear_substitute(e.right, coeffs)
        return {"+": add, "-": sub, "*": mul, "/": div, "^": power}[e.op](a, b)
    if isinstance(e, Call):
        if e.func == "expdelay":
            rho, var = e.args
            if var.name in coeffs:
                return _combination(coeffs[var.name], lambda nm: Call("expdelay", (rho, Var(nm))))
            return e
        return call(e.func, linear_substitute(e.args[0], coeffs))
    raise TypeError(f"not an expression: {e!r}")


def linear_combination(terms: Sequence[tuple[float, Expr]]) -> Expr:
    """sum c_i * e_i with zero terms dropped."""
    out = None
    for coef, e in terms:
        if coef == 0 or _is(e, 0):
            continue
        if out is None:
            out = mul(Num(coef), e)
        elif coef < 0:
            out = sub(out, mul(Num(-coef), e))
        else:
            out = add(out, mul(Num(coef), e))
    return Num(0.0) if out is None else out


# --------------------------------------------------------------------------
# evaluation
# --------------------------------------------------------------------------
def _sqrt(v):
    if v < 0:
        raise EvalDomainError(f"sqrt of negative number {v}")
    return math.sqrt(v)


def _exp(v):
    try:
        return math.exp(v)
    except OverflowError:
        raise EvalDomainError(f"exp overflow at {v}") from None


_SCALAR_FUNCS = {"sin": math.sin, "cos": math.cos, "exp": _exp, "sqrt": _sqrt, "tanh": math.tanh}


def _pow(a, b):
    try:
        return math.pow(a, b)
    except ValueError:
        raise EvalDomainError(f"{a}^{b} is not real") from None
    except OverflowError:
        raise EvalDomainError(f"{a}^{b} overflows") from None


def _div(a, b):
    if b == 0:
        raise EvalDomainError("division by zero")
    return a / b


def simpson_weights(m: int) -> np.ndarray:
    w = np.ones(m + 1)
    w[1:-1:2] = 4.0
    w[2:-1:2] = 2.0
    return w / 3.0


def expdelay_integral(history, rho: float, index: int) -> float:
    """rho * int_{-inf}^0 exp(rho*s) v(s) ds on a truncated history.

    Composite Simpson on [-tau*, 0], where tau* is the smaller of the history
    horizon and the offset at which the kernel drops below 1e-8, plus the
    exact tail integral of the constant extension.
    """
    if history is None:
        raise EvalDomainError("expdelay needs a history")
    tau = float(history.tau)
    cut = min(tau, math.log(1.0 / EXPDELAY_CUTOFF) / rho)
    left_value = float(history.eval(-tau)[index]) if tau > 0 else float(history.eval(0.0)[index])
    if cut <= 0.0:
        return left_value
    spacing = float(getattr(history, "spacing", np.inf))
    m = max(16, math.ceil(32.0 * rho * cut))
    if np.isfinite(spacing) and spacing > 0:
        m = max(m, math.ceil(cut / spacing))
    m = min(m + (m % 2), 4096)
    thetas = np.linspace(-cut, 0.0, m + 1)
    thetas[-1] = 0.0
    vals = history.eval_many(thetas)[:, index]
    integral = rho * (cut / m) * float(np.dot(simpson_weights(m) * np.exp(rho * thetas), vals))
    if cut < tau:
        left_value = float(history.eval(-cut)[index])
    return integral + left_value * math.exp(-rho * cut)


def compile_expr(e: Expr, names: Sequence[str]) -> Callable:
    """Closure ``fn(t, z, history) -> float``; ``z[i]`` holds variable ``names[i]``."""
    index = {nm: i for i, nm in enumerate(names)}

    def lookup(name):
        if name not in index:
            raise DaeBranchError(f"variable {name!r} is not part of this problem")
        return index[name]

    def build(node):
        if isinstance(node, Num):
            v = node.value
            return lambda t, z, h: v
        if isinstance(node, Var):
            if node.name == "t":
                return lambda t, z, h: t
            i = lookup(node.name)
            return lambda t, z, h: z[i]
        if isinstance(node, Delayed):
            i = lookup(node.name)
            off = node.offset

            def delayed(t, z, h):
                if h is None:
                    raise EvalDomainError("delayed reference evaluated without a history")
                return float(h.eval(off)[i])
            return delayed
        if isinstance(node, Neg):
            a = build(node.arg)
            return lambda t, z, h: -a(t, z, h)
        if isinstance(node, BinOp):
            a, b = build(node.left), build(node.right)
            op = node.op
            if op == "+":
                return lambda t, z, h: a(t, z, h) + b(t, z, h)
            if op == "-":
                return lambda t, z, h: a(t, z, h) - b(t, z, h)
            if op == "*":
                return lambda t, z, h: a(t, z, h) * b(t, z, h)
            if op == "/":
                return lambda t, z, h: _div(a(t, z, h), b(t, z, h))
            if isinstance(node.right, Num) and node.right.value == 2.0:
                return lambda t, z, h: a(t, z, h) ** 2
            return lambda t, z, h: _pow(a(t, z, h), b(t, z, h))
        if isinstance(node, Call):
            if node.func == "expdelay":
                rho = node.args[0].value
                i = lookup(node.args[1].name)
                return lambda t, z, h: expdelay_integral(h, rho, i)
            fn = _SCALAR_FUNCS[node.func]
            a = build(node.args[0])
            return lambda t, z, h: fn(a(t, z, h))
        raise TypeError(f"not an expression: {node!r}")

    return build(e)


def evaluate(e: Expr, env: Mapping) -> float:
    """Evaluate with ``env`` mapping variable names (and ``t``) to numbers.

    A ``history`` entry supplies the segment for delayed references.  Its
    components are named by ``env["names"]`` when given, otherwise
    x1..xk, y1..ys inferred from the symbols in use.  Plain variables missing
    from ``env`` are read from the history head.
    """
    history = env.get("history")
    names = env.get("names")
    if names is None:
        syms = {nm for nm in free_symbols(e) if nm != "t"} | {key for key in env if _VAR_RE.match(str(key))}
        names = sorted(syms, key=_var_order)
        if history is not None and len(names) != history.dims:
            kx = max((int(nm[1:]) for nm in names if nm[0] == "x"), default=0)
            ky = max((int(nm[1:]) for nm in names if nm[0] == "y"), default=0)
            if ky == 0:
                kx = history.dims
            elif kx + ky != history.dims:
                raise EvalDomainError("cannot match variable names to history components; pass env['names']")
            names = [f"x{i + 1}" for i in range(kx)] + [f"y{i + 1}" for i in range(ky)]
    names = list(names)
    head = history.eval(0.0) if history is not None else None
    z = []
    for i, nm in enumerate(names):
        if nm in env:
            z.append(float(env[nm]))
        elif head is not None:
            z.append(float(head[i]))
        else:
            z.append(math.nan)
    for node in walk(e):
        if isinstance(node, Var) and node.name != "t" and (node.name not in names or math.isnan(z[names.index(node.name)])):
            raise EvalDomainError(f"no value for {node.name!r}")
    if "t" in free_symbols(e) and "t" not in env:
        raise EvalDomainError("no value for 't'")
    return float(compile_expr(e, names)(float(env.get("t", 0.0)), z, history))


def _var_order(name):
    m = _VAR_RE.match(name)
    return (0 if m.group(1) == "x" else 1, int(m.group(2))) if m else (2, 0)
