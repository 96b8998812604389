"""JSON problem configurations.

A semi-explicit problem::

    {"kind": "semi_explicit", "name": "logistic",
     "f": ["x1 - y1"], "g": ["y1^3 + y1 - x1^5"], "h": ["cos(t)"],
     "period": 6.283185307179586, "tau_max": 0.0,
     "solver": {...}, "continuation": {...}, "box": {"lower": [...], "upper": [...]}}

An implicit problem ``E x' = F(x) + lam C(t) S(x_t)`` uses ``"kind": "implicit"``
with ``E`` (nested rows), ``F`` and ``S`` (lists of n expressions in x1..xn)
and ``C`` (n x n expressions in t).  An optional ``"alignment": {"P": ..., "Q": ...}``
supplies orthogonal factors of E to check instead of computing an SVD.
"""
from __future__ import annotations

import copy
import json
import math
from pathlib import Path
from typing import Any

import numpy as np

from . import expr as ex
from .errors import ConfigError, DaeBranchError
from .model import ImplicitRFDAE, ProblemDims, SemiExplicitRFDAE

SEMI_KEYS = {"kind", "name", "dims", "f", "g", "h", "period", "tau_max", "solver", "continuation", "box",
             "description"}
IMPLICIT_KEYS = {"kind", "name", "n", "E", "F", "C", "S", "period", "tau_max", "alignment", "solver",
                 "continuation", "box", "sample_times", "description"}


def _as_list(v, what):
    if isinstance(v, (str, int, float)):
        return [str(v)]
    if not isinstance(v, (list, tuple)):
        raise ConfigError(f"{what} must be a list of expressions")
    return [str(item) for item in v]


def _number(cfg, key, default=None):
    v = cfg.get(key, default)
    if v is None:
        raise ConfigError(f"missing {key!r}")
    try:
        v = float(v)
    except (TypeError, ValueError):
        raise ConfigError(f"{key!r} must be a number") from None
    if not math.isfinite(v):
        raise ConfigError(f"{key!r} must be finite")
    return v


def _parse_all(sources, what, **kw):
    out = []
    for i, src in enumerate(sources):
        try:
            out.append(ex.parse(src, **kw))
        except ex.ParseError as err:
            raise ex.ParseError(f"{what}[{i}]: {err.args[0]}", err.offset, src) from None
    return out


def _vector_fn(fns):
    def fn(t, z, hist):
        return np.array([f(t, z, hist) for f in fns], dtype=float)
    return fn


def build_semi_explicit(cfg: dict) -> SemiExplicitRFDAE:
    unknown = set(cfg) - SEMI_KEYS
    if unknown:
        raise ConfigError(f"unknown keys {sorted(unknown)}")
    f_src = _as_list(cfg.get("f"), "f")
    g_src = _as_list(cfg.get("g"), "g")
    k, s = len(f_src), len(g_src)
    dims = cfg.get("dims")
    if dims is not None and (dims.get("k") != k or dims.get("s") != s):
        raise ConfigError(f"dims {dims} do not match {k} f-expressions and {s} g-expressions")
    if k < 1 or s < 1:
        raise ConfigError("need at least one differential and one algebraic equation")
    h_src = _as_list(cfg.get("h", ["0"] * k), "h")
    if len(h_src) != k:
        raise ConfigError(f"h must have {k} components")
    period = _number(cfg, "period")
    tau_max = _number(cfg, "tau_max", 0.0)
    if period <= 0 or tau_max < 0:
        raise ConfigError("period must be positive and tau_max nonnegative")

    f_ast = _parse_all(f_src, "f", k=k, s=s, tau_max=tau_max)
    g_ast = _parse_all(g_src, "g", k=k, s=s, tau_max=tau_max)
    h_ast = _parse_all(h_src, "h", k=k, s=s, tau_max=tau_max)
    for nm, asts in (("f", f_ast), ("g", g_ast)):
        for e in asts:
            if ex.has_functional(e) or "t" in ex.free_symbols(e):
                raise ConfigError(f"{nm} must depend on the current state only (no t, no delays)")
    offsets = set()
    distributed = False
    for e in h_ast:
        offsets |= ex.delay_offsets(e)
        distributed = distributed or ex.has_distributed(e)

    names = [f"x{i + 1}" for i in range(k)] + [f"y{i + 1}" for i in range(s)]
    xs, ys = names[:k], names[k:]
    f_fn = _vector_fn([ex.compile_expr(e, names) for e in f_ast])
    g_fn = _vector_fn([ex.compile_expr(e, names) for e in g_ast])
    h_fns = [ex.compile_expr(e, names) for e in h_ast]
    d1 = [[ex.compile_expr(ex.differentiate(e, v), names) for v in xs] for e in g_ast]
    d2 = [[ex.compile_expr(ex.differentiate(e, v), names) for v in ys] for e in g_ast]
    dfm = [[ex.compile_expr(ex.differentiate(e, v), names) for v in names] for e in f_ast]

    def state(p, q):
        return [float(v) for v in p] + [float(v) for v in q]

    def f(p, q):
        return f_fn(0.0, state(p, q), None)

    def g(p, q):
        return g_fn(0.0, state(p, q), None)

    def d1g(p, q):
        z = state(p, q)
        return np.array([[c(0.0, z, None) for c in row] for row in d1], dtype=float)

    def d2g(p, q):
        z = state(p, q)
        return np.array([[c(0.0, z, None) for c in row] for row in d2], dtype=float)

    def df(p, q):
        z = state(p, q)
        return np.array([[c(0.0, z, None) for c in row] for row in dfm], dtype=float)

    def h(t, history):
        z = [float(v) for v in history.eval(0.0)]
        return np.array([fn(t, z, history) for fn in h_fns], dtype=float)

    source = normalized_semi_explicit(cfg, f_ast, g_ast, h_ast, period, tau_max)
    return SemiExplicitRFDAE(
        dims=ProblemDims(k, s), f=f, g=g, h=h, period=period, tau_max=tau_max,
        d1g=d1g, d2g=d2g, df=df, delays=tuple(sorted(offsets)), distributed=distributed,
        name=str(cfg.get("name", "")), source=source,
    )


def normalized_semi_explicit(cfg, f_ast, g_ast, h_ast, period, tau_max) -> dict:
    out = {
        "kind": "semi_explicit",
        "name": str(cfg.get("name", "")),
        "dims": {"k": len(f_ast), "s": len(g_ast)},
        "f": [ex.to_source(e) for e in f_ast],
        "g": [ex.to_source(e) for e in g_ast],
        "h": [ex.to_source(e) for e in h_ast],
        "period": period,
        "tau_max": tau_max,
    }
    for key in ("solver", "continuation", "box", "description"):
        if key in cfg:
            out[key] = copy.deepcopy(cfg[key])
    return out


def _matrix(v, n, what):
    try:
        m = np.array(v, dtype=float)
    except (TypeError, ValueError):
        raise ConfigError(f"{what} must be a numeric matrix") from None
    if m.shape != (n, n):
        raise ConfigError(f"{what} must be {n}x{n}, got shape {m.shape}")
    return m


def build_implicit(cfg: dict) -> ImplicitRFDAE:
    unknown = set(cfg) - IMPLICIT_KEYS
    if unknown:
        raise ConfigError(f"unknown keys {sorted(unknown)}")
    F_src = _as_list(cfg.get("F"), "F")
    n = int(cfg.get("n", len(F_src)))
    if len(F_src) != n:
        raise ConfigError(f"F must have n={n} components")
    E = _matrix(cfg.get("E"), n, "E")
    S_src = _as_list(cfg.get("S", ["0"] * n), "S")
    if len(S_src) != n:
        raise ConfigError(f"S must have n={n} components")
    C_src = cfg.get("C")
    if C_src is None:
        C_src = [["1" if i == j else "0" for j in range(n)] for i in range(n)]
    if len(C_src) != n or any(len(row) != n for row in C_src):
        raise ConfigError(f"C must be {n}x{n}")
    period = _number(cfg, "period")
    tau_max = _number(cfg, "tau_max", 0.0)
    names = [f"x{i + 1}" for i in range(n)]

    F_ast = _parse_all(F_src, "F", variables=names, tau_max=tau_max)
    S_ast = _parse_all(S_src, "S", variables=names, tau_max=tau_max)
    C_ast = [_parse_all([str(c) for c in row], "C", variables=[], tau_max=tau_max) for row in C_src]
    for e in F_ast:
        if ex.has_functional(e) or "t" in ex.free_symbols(e):
            raise ConfigError("F must depend on the current state only")
    for e in S_ast:
        if "t" in ex.free_symbols(e):
            raise ConfigError("S cannot depend on t; put the time dependence in C")
    F_fns = [ex.compile_expr(e, names) for e in F_ast]
    S_fns = [ex.compile_expr(e, names) for e in S_ast]
    C_fns = [[ex.compile_expr(e, names) for e in row] for row in C_ast]
    dF_fns = [[ex.compile_expr(ex.differentiate(e, v), names) for v in names] for e in F_ast]
    offsets = set()
    distributed = False
    for e in S_ast:
        offsets |= ex.delay_offsets(e)
        distributed = distributed or ex.has_distributed(e)

    def F(z):
        zl = [float(v) for v in z]
        return np.array([fn(0.0, zl, None) for fn in F_fns], dtype=float)

    def dF(z):
        zl = [float(v) for v in z]
        return np.array([[fn(0.0, zl, None) for fn in row] for row in dF_fns], dtype=float)

    def C(t):
        return np.array([[fn(float(t), [], None) for fn in row] for row in C_fns], dtype=float)

    def S(history):
        zl = [float(v) for v in history.eval(0.0)]
        return np.array([fn(0.0, zl, history) for fn in S_fns], dtype=float)

    alignment = None
    if "alignment" in cfg:
        al = cfg["alignment"]
        alignment = {"P": _matrix(al.get("P"), n, "alignment.P"), "Q": _matrix(al.get("Q"), n, "alignment.Q")}
    source = {
        "kind": "implicit", "name": str(cfg.get("name", "")), "n": n,
        "E": E.tolist(), "F": [ex.to_source(e) for e in F_ast], "S": [ex.to_source(e) for e in S_ast],
        "C": [[ex.to_source(e) for e in row] for row in C_ast],
        "period": period, "tau_max": tau_max,
    }
    for key in ("alignment", "solver", "continuation", "box", "sample_times", "description"):
        if key in cfg:
            source[key] = copy.deepcopy(cfg[key])
    try:
        return ImplicitRFDAE(n=n, E=E, F=F, C=C, S=S, period=period, tau_max=tau_max, dF=dF,
                             delays=tuple(sorted(offsets)), distributed=distributed,
                             name=str(cfg.get("name", "")), alignment=alignment, source=source)
    except DaeBranchError as err:
        raise ConfigError(str(err)) from None


def problem_from_config(cfg: dict):
    kind = cfg.get("kind", "semi_explicit")
    if kind == "semi_explicit":
        return build_semi_explicit(cfg)
    if kind == "implicit":
        return build_implicit(cfg)
    raise ConfigError(f"unknown problem kind {kind!r}")


def load_config(spec: str | Path) -> dict:
    """A built-in problem name or a path to a JSON document."""
    from .problems import BUILTIN_NAMES, builtin_config

    path = Path(spec)
    if path.is_file():
        try:
            cfg = json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as err:
            raise ConfigError(f"{path}: invalid JSON: {err}") from None
        if not isinstance(cfg, dict):
            raise ConfigError(f"{path}: top level must be an object")
        return cfg
    if str(spec) in BUILTIN_NAMES:
        return builtin_config(str(spec))
    raise ConfigError(f"no such config file or built-in problem: {spec!r} (built-ins: {', '.join(BUILTIN_NAMES)})")


def dumps(cfg: dict[str, Any]) -> str:
    # float repr is the shortest round-trip-exact form
    return json.dumps(cfg, indent=2, allow_nan=False)


def fmt(x: float) -> str:
    """17 significant digits: exact round trip through text."""
    return format(float(x), ".17g")
