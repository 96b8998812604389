"""Problem definitions and the sampled history type shared by all modules."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Callable, Sequence

import numpy as np
from scipy.interpolate import CubicHermiteSpline, CubicSpline

from .errors import DaeBranchError, PreconditionError

EPS = np.finfo(float).eps
INTERPOLATIONS = ("linear", "cubic-hermite")
DEFAULT_NODES = 33


def scale_of(*arrays) -> float:
    """max(1, largest absolute entry) over the given arrays."""
    m = 1.0
    for a in arrays:
        a = np.asarray(a, dtype=float)
        if a.size:
            m = max(m, float(np.max(np.abs(a))))
    return m


@dataclass(frozen=True)
class ProblemDims:
    k: int
    s: int

    def __post_init__(self):
        if int(self.k) != self.k or int(self.s) != self.s or self.k < 1 or self.s < 1:
            raise PreconditionError(f"dimensions must be positive integers, got k={self.k}, s={self.s}")

    @property
    def n(self) -> int:
        return self.k + self.s


class HistorySegment:
    """A function on (-inf, 0] sampled on nodes in [-tau, 0].

    Values left of the first node are the first node's value (constant
    extension), which keeps the represented function bounded and uniformly
    continuous.  Instances are immutable; shifting returns a new segment.

    ``slopes`` (optional) are node derivatives for cubic Hermite interpolation;
    when omitted they are taken from a not-a-knot cubic spline through the
    nodes, which keeps the interpolation error at O(h^4).
    """

    __slots__ = ("thetas", "values", "interpolation", "slopes", "_spline")

    def __init__(self, thetas, values, interpolation: str = "linear", slopes=None):
        thetas = np.array(thetas, dtype=float).reshape(-1)
        values = np.array(values, dtype=float)
        if values.ndim == 1:
            values = values.reshape(-1, 1) if thetas.size > 1 or values.size == 1 else values.reshape(1, -1)
        if values.shape[0] != thetas.size:
            raise PreconditionError("one value row per node is required")
        if thetas.size == 0:
            raise PreconditionError("a history segment needs at least one node")
        if interpolation not in INTERPOLATIONS:
            raise PreconditionError(f"unknown interpolation {interpolation!r}")
        if np.any(np.diff(thetas) <= 0):
            raise PreconditionError("node offsets must be strictly increasing")
        if thetas[-1] != 0.0:
            raise PreconditionError("the last node must sit at offset 0")
        if not np.all(np.isfinite(values)):
            raise PreconditionError("history values must be finite")
        if slopes is not None:
            slopes = np.array(slopes, dtype=float).reshape(values.shape)
            slopes.setflags(write=False)
        thetas.setflags(write=False)
        values.setflags(write=False)
        object.__setattr__(self, "thetas", thetas)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "interpolation", interpolation)
        object.__setattr__(self, "slopes", slopes)
        object.__setattr__(self, "_spline", None)

    def __setattr__(self, name, value):
        raise AttributeError("HistorySegment is immutable")

    def __repr__(self):
        return (f"HistorySegment(nodes={self.thetas.size}, dims={self.dims}, "
                f"tau={self.tau:g}, interpolation={self.interpolation!r})")

    # -- construction helpers -------------------------------------------------
    @classmethod
    def constant(cls, value, tau: float = 0.0, n_nodes: int = DEFAULT_NODES,
                 interpolation: str = "linear") -> "HistorySegment":
        value = np.atleast_1d(np.asarray(value, dtype=float))
        thetas = uniform_grid(tau, n_nodes)
        return cls(thetas, np.tile(value, (thetas.size, 1)), interpolation)

    @classmethod
    def from_function(cls, fun: Callable[[float], Any], tau: float, n_nodes: int = DEFAULT_NODES,
                      interpolation: str = "linear") -> "HistorySegment":
        thetas = uniform_grid(tau, n_nodes)
        values = np.array([np.atleast_1d(fun(th)) for th in thetas], dtype=float)
        return cls(thetas, values, interpolation)

    # -- properties -----------------------------------------------------------
    @property
    def dims(self) -> int:
        return self.values.shape[1]

    @property
    def tau(self) -> float:
        return -float(self.thetas[0])

    @property
    def head(self) -> np.ndarray:
        return self.values[-1].copy()

    @property
    def spacing(self) -> float:
        if self.thetas.size < 2:
            return np.inf
        return float(np.max(np.diff(self.thetas)))

    # -- evaluation -----------------------------------------------------------
    def _cubic(self):
        if self._spline is None:
            if self.slopes is not None:
                sp = CubicHermiteSpline(self.thetas, self.values, self.slopes, axis=0)
            else:
                sp = CubicSpline(self.thetas, self.values, axis=0, bc_type="not-a-knot")
            object.__setattr__(self, "_spline", sp)
        return self._spline

    def eval(self, theta: float) -> np.ndarray:
        if theta > 0.0:
            raise DaeBranchError(f"future evaluation: offset {theta} > 0")
        th = self.thetas
        if theta <= th[0] or th.size == 1:
            return self.values[0].copy() if theta <= th[0] else self.values[-1].copy()
        i = int(np.searchsorted(th, theta))
        if th[i] == theta:
            return self.values[i].copy()
        if self.interpolation == "linear":
            w = (theta - th[i - 1]) / (th[i] - th[i - 1])
            return (1.0 - w) * self.values[i - 1] + w * self.values[i]
        return np.asarray(self._cubic()(theta), dtype=float)

    def eval_many(self, thetas) -> np.ndarray:
        """Vectorised :meth:`eval`; returns an array of shape (len(thetas), dims)."""
        thetas = np.asarray(thetas, dtype=float)
        if np.any(thetas > 0.0):
            raise DaeBranchError("future evaluation: offset > 0")
        th = self.thetas
        if th.size == 1:
            return np.tile(self.values[0], (thetas.size, 1))
        clipped = np.maximum(thetas, th[0])
        if self.interpolation == "linear":
            out = np.column_stack([np.interp(clipped, th, self.values[:, j]) for j in range(self.dims)])
        else:
            out = np.asarray(self._cubic()(clipped), dtype=float).reshape(thetas.size, self.dims)
        idx = np.searchsorted(th, clipped)
        idx = np.minimum(idx, th.size - 1)
        exact = th[idx] == clipped
        out[exact] = self.values[idx[exact]]
        return out

    def shift_append(self, dt: float, new_tail: Sequence[tuple[float, Any]]) -> "HistorySegment":
        return history_shift_append(self, dt, new_tail)


def uniform_grid(tau: float, n_nodes: int = DEFAULT_NODES) -> np.ndarray:
    """Uniform node offsets over [-tau, 0]; a single node when tau is 0."""
    if tau < 0:
        raise PreconditionError("tau must be nonnegative")
    if tau == 0.0:
        return np.zeros(1)
    if n_nodes < 2:
        raise PreconditionError("need at least two nodes on a nonzero horizon")
    grid = np.linspace(-tau, 0.0, n_nodes)
    grid[-1] = 0.0
    return grid


def history_eval(seg: HistorySegment, theta: float) -> np.ndarray:
    return seg.eval(theta)


def history_shift_append(seg: HistorySegment, dt: float, new_tail) -> HistorySegment:
    """Advance a segment by ``dt``: old nodes move left by dt, the tail fills (-dt, 0].

    Tail nodes win over shifted old nodes at the same offset.  Old nodes that
    fall left of -tau are dropped, with an interpolated node inserted at -tau
    so the result spans the same horizon.
    """
    if dt <= 0:
        raise PreconditionError("dt must be positive")
    tau = seg.tau
    if tau > 0 and dt > tau * (1 + 1e-12):
        raise PreconditionError(f"dt={dt} exceeds the horizon tau={tau}")
    tail = sorted(((float(th), np.atleast_1d(np.asarray(v, dtype=float))) for th, v in new_tail),
                  key=lambda item: item[0])
    if not tail:
        raise DaeBranchError("discontinuous append: empty tail")
    tail_th = np.array([th for th, _ in tail])
    tail_val = np.array([v for _, v in tail])
    if tail_val.shape[1] != seg.dims:
        raise PreconditionError("tail values have the wrong dimension")
    if abs(tail_th[-1]) > 1e-12 * max(1.0, dt):
        raise DaeBranchError("discontinuous append: tail must end at offset 0")
    tail_th[-1] = 0.0
    if tail_th[0] < -dt - 1e-12 * max(1.0, dt):
        raise DaeBranchError("tail reaches left of -dt")
    gaps = [np.diff(tail_th).max() if tail_th.size > 1 else 0.0]
    if seg.thetas.size > 1:
        gaps.append(seg.spacing)
    max_gap = max(max(gaps), 0.0)
    if tail_th[0] + dt > max_gap * (1 + 1e-9) + 1e-12:
        raise DaeBranchError(f"discontinuous append: gap of {tail_th[0] + dt:g} between old head and tail")

    old_th = seg.thetas - dt
    merge_tol = 1e-12 * max(1.0, tau)
    keep = (old_th >= -tau - merge_tol) & (old_th < tail_th[0] - merge_tol)
    th = list(old_th[keep])
    vals = list(seg.values[keep])
    if tau > 0 and (not th or th[0] > -tau + merge_tol) and tail_th[0] > -tau + merge_tol:
        th.insert(0, -tau)
        vals.insert(0, seg.eval(-tau + dt) if -tau + dt <= 0 else seg.head)
    if th and abs(th[0] + tau) <= merge_tol:
        th[0] = -tau
    th.extend(tail_th)
    vals.extend(tail_val)
    return HistorySegment(np.array(th), np.array(vals), seg.interpolation)


def jacobian_fd(fun: Callable[[np.ndarray], Any], point) -> np.ndarray:
    """Central-difference Jacobian with steps eps^(1/3) * max(1, |x_i|)."""
    x = np.atleast_1d(np.asarray(point, dtype=float))
    cols = []
    for i in range(x.size):
        hi = EPS ** (1.0 / 3.0) * max(1.0, abs(x[i]))
        xp = x.copy()
        xm = x.copy()
        xp[i] += hi
        xm[i] -= hi
        fp = np.atleast_1d(np.asarray(fun(xp), dtype=float))
        fm = np.atleast_1d(np.asarray(fun(xm), dtype=float))
        if not (np.all(np.isfinite(fp)) and np.all(np.isfinite(fm))):
            raise DaeBranchError(f"non-finite evaluation while differencing coordinate {i}")
        cols.append((fp - fm) / (xp[i] - xm[i]))
    return np.column_stack(cols)


# Evaluator signatures:
#   f(p, q) -> R^k, g(p, q) -> R^s, d1g(p, q) -> s x k, d2g(p, q) -> s x s,
#   h(t, history) -> R^k where history.eval(theta) -> R^n
@dataclass(frozen=True, eq=False)
class SemiExplicitRFDAE:
    """x' = f(x, y) + lam * h(t, x_t, y_t), 0 = g(x, y).

    ``h`` must be T-periodic in t and is assumed to satisfy a local Lipschitz
    estimate in the history argument; neither property is enforced here.
    ``delays`` lists the discrete delay offsets h looks up (all <= 0) and
    ``distributed`` flags distributed-delay terms; the integrator uses both.
    """

    dims: ProblemDims
    f: Callable
    g: Callable
    h: Callable
    period: float
    tau_max: float = 0.0
    d1g: Callable | None = None
    d2g: Callable | None = None
    df: Callable | None = None
    delays: tuple = ()
    distributed: bool = False
    name: str = ""
    source: dict | None = field(default=None, repr=False)

    def __post_init__(self):
        if not self.period > 0:
            raise PreconditionError("the period T must be positive")
        if self.tau_max < 0:
            raise PreconditionError("tau_max must be nonnegative")

    @property
    def k(self) -> int:
        return self.dims.k

    @property
    def s(self) -> int:
        return self.dims.s

    @property
    def n(self) -> int:
        return self.dims.n

    def split(self, z):
        z = np.asarray(z, dtype=float)
        return z[: self.k], z[self.k:]

    def F(self, z) -> np.ndarray:
        """The map (p, q) -> (f(p, q), g(p, q)) on R^n."""
        p, q = self.split(z)
        return np.concatenate([np.atleast_1d(self.f(p, q)), np.atleast_1d(self.g(p, q))]).astype(float)

    def dF(self, z) -> np.ndarray:
        p, q = self.split(z)
        d1g, d2g = self.constraint_jacobians(p, q)
        return np.vstack([self.f_jacobian(p, q), np.hstack([d1g, d2g])])

    def f_jacobian(self, p, q) -> np.ndarray:
        """k x n Jacobian of f."""
        if self.df is not None:
            return np.asarray(self.df(p, q), dtype=float).reshape(self.k, self.n)
        k = self.k
        return jacobian_fd(lambda z: self.f(z[:k], z[k:]), np.concatenate([p, q]))

    def constraint_jacobians(self, p, q) -> tuple[np.ndarray, np.ndarray]:
        """(d1g, d2g): analytic when supplied, otherwise central differences."""
        p = np.asarray(p, dtype=float)
        q = np.asarray(q, dtype=float)
        if self.d1g is not None:
            d1 = np.asarray(self.d1g(p, q), dtype=float).reshape(self.s, self.k)
        else:
            d1 = jacobian_fd(lambda x: self.g(x, q), p)
        if self.d2g is not None:
            d2 = np.asarray(self.d2g(p, q), dtype=float).reshape(self.s, self.s)
        else:
            d2 = jacobian_fd(lambda y: self.g(p, y), q)
        return d1, d2

    def check_periodic(self, history: HistorySegment, times=None, tol: float = 1e-10) -> bool:
        """Spot-check h(t + T, phi) == h(t, phi) on the given sample times."""
        times = np.linspace(0.0, self.period, 7) if times is None else np.asarray(times, dtype=float)
        for t in times:
            a = np.asarray(self.h(t, history), dtype=float)
            b = np.asarray(self.h(t + self.period, history), dtype=float)
            if np.max(np.abs(a - b)) > tol * scale_of(a, b):
                return False
        return True


@dataclass(frozen=True, eq=False)
class ImplicitRFDAE:
    """E x' = F(x) + lam * C(t) S(x_t) with singular E of rank 0 < r < n."""

    n: int
    E: np.ndarray
    F: Callable
    C: Callable
    S: Callable
    period: float
    tau_max: float = 0.0
    dF: Callable | None = None
    delays: tuple = ()
    distributed: bool = False
    name: str = ""
    alignment: dict | None = None
    source: dict | None = field(default=None, repr=False)

    def __post_init__(self):
        E = np.asarray(self.E, dtype=float)
        if E.shape != (self.n, self.n):
            raise PreconditionError(f"E must be {self.n}x{self.n}")
        object.__setattr__(self, "E", E)
        r = int(np.linalg.matrix_rank(E))
        if not 0 < r < self.n:
            raise PreconditionError(f"rank(E)={r}: need a nontrivial singular part")
        if not self.period > 0:
            raise PreconditionError("the period T must be positive")

    @property
    def rank(self) -> int:
        return int(np.linalg.matrix_rank(self.E))

    def H(self, t: float, history) -> np.ndarray:
        return np.asarray(self.C(t), dtype=float) @ np.asarray(self.S(history), dtype=float)

    def jacobian(self, z) -> np.ndarray:
        if self.dF is not None:
            return np.asarray(self.dF(z), dtype=float)
        return jacobian_fd(self.F, z)


@dataclass(frozen=True)
class PeriodicPair:
    """A T-periodic pair (lam, zeta) sampled on [0, T].

    Norms are max-norms throughout.  ``amplitude`` is max_t |zeta(t) - mean|
    computed on the dense output, so it does not depend on where the step
    grid happens to fall.
    """

    lam: float
    times: np.ndarray
    states: np.ndarray
    residual_periodicity: float
    residual_constraint: float
    amplitude: float = 0.0
    segment: np.ndarray | None = None

    @property
    def is_constant(self) -> bool:
        return self.amplitude < 1e-8

    @property
    def x(self) -> np.ndarray:
        return self.states

    def state_at(self, t: float) -> np.ndarray:
        t = t % self.times[-1] if t > self.times[-1] or t < 0 else t
        return np.array([np.interp(t, self.times, self.states[:, j]) for j in range(self.states.shape[1])])
