"""Fixed-step RK4 for the reduced retarded equation, method of steps.

History lookups go through a dense cubic Hermite record of everything computed
so far.  When a lookup lands inside the step being taken (delays shorter than
the step, distributed delays), the last interval is extrapolated and the step
is then repeated once with the predicted point in place.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .config import fmt
from .errors import ConfigError, ManifoldDriftError, PreconditionError
from .model import INTERPOLATIONS, HistorySegment, SemiExplicitRFDAE, scale_of
from .reduction import field, project_to_manifold


@dataclass(frozen=True)
class SolverConfig:
    step: float = 0.01
    projection_interval: int = 10
    drift_tolerance: float = 1e-8
    interpolation: str = "cubic-hermite"

    def __post_init__(self):
        if not (self.step > 0 and math.isfinite(self.step)):
            raise ConfigError("solver step must be positive")
        if int(self.projection_interval) != self.projection_interval or self.projection_interval < 1:
            raise ConfigError("projection_interval must be a positive integer")
        if not self.drift_tolerance > 0:
            raise ConfigError("drift_tolerance must be positive")
        if self.interpolation not in INTERPOLATIONS:
            raise ConfigError(f"interpolation must be one of {INTERPOLATIONS}")

    @classmethod
    def from_dict(cls, d: dict | None) -> "SolverConfig":
        d = dict(d or {})
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown solver settings {sorted(unknown)}")
        try:
            return cls(**d)
        except TypeError as err:
            raise ConfigError(str(err)) from None

    def to_dict(self) -> dict:
        return asdict(self)


def hermite(t0, t1, z0, z1, d0, d1, t):
    """Cubic Hermite interpolant on [t0, t1]; works on arrays of t."""
    h = t1 - t0
    s = (np.asarray(t) - t0) / h
    s2, s3 = s * s, s * s * s
    h00 = 2 * s3 - 3 * s2 + 1
    h10 = s3 - 2 * s2 + s
    h01 = -2 * s3 + 3 * s2
    h11 = s3 - s2
    return h00 * z0 + h10 * h * d0 + h01 * z1 + h11 * h * d1


class DenseHistory:
    """Initial segment followed by Hermite data at the accepted steps."""

    def __init__(self, initial: HistorySegment, t0: float, capacity: int, n: int):
        self.initial = initial
        self.t0 = t0
        self.ts = np.empty(capacity)
        self.zs = np.empty((capacity, n))
        self.dzs = np.empty((capacity, n))
        self.m = 0

    def push(self, t, z, dz):
        self.ts[self.m], self.zs[self.m], self.dzs[self.m] = t, z, dz
        self.m += 1

    def pop(self):
        self.m -= 1

    def eval(self, t: float) -> np.ndarray:
        if t <= self.t0:
            return self.initial.eval(t - self.t0)
        m = self.m
        if m == 1:
            return self.zs[0] + (t - self.ts[0]) * self.dzs[0]
        i = int(np.searchsorted(self.ts[:m], t, side="right")) - 1
        i = min(max(i, 0), m - 2)
        return hermite(self.ts[i], self.ts[i + 1], self.zs[i], self.zs[i + 1], self.dzs[i], self.dzs[i + 1], t)

    def eval_many(self, ts) -> np.ndarray:
        ts = np.asarray(ts, dtype=float)
        out = np.empty((ts.size, self.zs.shape[1]))
        past = ts <= self.t0
        if np.any(past):
            out[past] = self.initial.eval_many(ts[past] - self.t0)
        fut = ~past
        if np.any(fut):
            tf = ts[fut]
            m = self.m
            if m == 1:
                out[fut] = self.zs[0] + (tf - self.ts[0])[:, None] * self.dzs[0]
            else:
                i = np.clip(np.searchsorted(self.ts[:m], tf, side="right") - 1, 0, m - 2)
                out[fut] = hermite(self.ts[i][:, None], self.ts[i + 1][:, None], self.zs[i], self.zs[i + 1],
                                   self.dzs[i], self.dzs[i + 1], tf[:, None])
        return out


class StageHistory:
    """The segment zeta_t seen from a Runge-Kutta stage at time t."""

    __slots__ = ("dense", "t", "z", "tau", "spacing")

    def __init__(self, dense: DenseHistory, t: float, z: np.ndarray):
        self.dense, self.t, self.z = dense, t, z
        self.tau = dense.initial.tau
        self.spacing = dense.initial.spacing

    def eval(self, theta: float) -> np.ndarray:
        if theta > 0:
            raise PreconditionError("future evaluation")
        if theta == 0:
            return self.z
        return self.dense.eval(self.t + theta)

    def eval_many(self, thetas) -> np.ndarray:
        thetas = np.asarray(thetas, dtype=float)
        out = self.dense.eval_many(self.t + thetas)
        out[thetas == 0] = self.z
        return out


@dataclass
class Trajectory:
    ts: np.ndarray
    zs: np.ndarray
    dzs: np.ndarray
    g_norms: np.ndarray
    max_drift: float
    k: int
    s: int
    initial: HistorySegment

    def _dense(self) -> DenseHistory:
        d = DenseHistory(self.initial, float(self.ts[0]), self.ts.size, self.zs.shape[1])
        d.ts, d.zs, d.dzs, d.m = self.ts, self.zs, self.dzs, self.ts.size
        return d

    def eval(self, t: float) -> np.ndarray:
        return self._dense().eval(float(t))

    def eval_many(self, ts) -> np.ndarray:
        return self._dense().eval_many(ts)

    def segment_at(self, t: float, thetas, interpolation: str = "cubic-hermite") -> HistorySegment:
        thetas = np.asarray(thetas, dtype=float)
        return HistorySegment(thetas, self.eval_many(t + thetas), interpolation)

    @property
    def head(self) -> np.ndarray:
        return self.zs[-1]

    def mean(self) -> np.ndarray:
        """Time average of the dense output (exact for the Hermite pieces)."""
        h = np.diff(self.ts)[:, None]
        z0, z1, d0, d1 = self.zs[:-1], self.zs[1:], self.dzs[:-1], self.dzs[1:]
        integral = np.sum(h / 2 * (z0 + z1) + h * h / 12 * (d0 - d1), axis=0)
        return integral / (self.ts[-1] - self.ts[0])

    def max_deviation(self, center) -> float:
        """max over t and components of |zeta(t) - center| on the dense output."""
        center = np.asarray(center, dtype=float)
        h = np.diff(self.ts)[:, None]
        z0, z1 = self.zs[:-1] - center, self.zs[1:] - center
        d0, d1 = self.dzs[:-1] * h, self.dzs[1:] * h
        # p(s) = z0 + d0 s + c2 s^2 + c3 s^3 on s in [0, 1]
        c2 = -3 * z0 - 2 * d0 + 3 * z1 - d1
        c3 = 2 * z0 + d0 - 2 * z1 + d1
        best = float(np.max(np.abs(self.zs - center)))
        a, b, c = 3 * c3, 2 * c2, d0
        disc = b * b - 4 * a * c
        with np.errstate(divide="ignore", invalid="ignore"):
            sq = np.sqrt(np.where(disc >= 0, disc, np.nan))
            roots = [(-b + sq) / (2 * a), (-b - sq) / (2 * a), -c / b]
        for s in roots:
            ok = np.isfinite(s) & (s > 0) & (s < 1)
            if np.any(ok):
                sv = np.where(ok, s, 0.0)
                p = z0 + d0 * sv + c2 * sv ** 2 + c3 * sv ** 3
                best = max(best, float(np.max(np.abs(p[ok]))))
        return best

    def amplitude(self) -> float:
        return self.max_deviation(self.mean())

    def to_csv(self, target=None) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["t"] + [f"x{i + 1}" for i in range(self.k)] + [f"y{i + 1}" for i in range(self.s)] + ["g_norm"])
        for t, z, gn in zip(self.ts, self.zs, self.g_norms):
            w.writerow([fmt(t)] + [fmt(v) for v in z] + [fmt(gn)])
        text = buf.getvalue()
        if target is not None:
            Path(target).write_text(text, encoding="utf-8")
        return text


def min_discrete_delay(problem: SemiExplicitRFDAE) -> float:
    pos = [-d for d in problem.delays if d < 0]
    return min(pos) if pos else math.inf


def _g_norm(problem, z) -> float:
    p, q = problem.split(z)
    return float(np.max(np.abs(np.atleast_1d(problem.g(p, q)))))


def integrate(problem: SemiExplicitRFDAE, lam: float, initial_history: HistorySegment,
              t_span: tuple[float, float], cfg: SolverConfig | None = None) -> Trajectory:
    """RK4 on x' = psi + lam upsilon with dense output; y is re-projected periodically."""
    cfg = SolverConfig() if cfg is None else cfg
    t0, t1 = float(t_span[0]), float(t_span[1])
    if not t1 > t0:
        raise PreconditionError("need t1 > t0")
    if lam < 0:
        raise PreconditionError("lambda must be nonnegative")
    if initial_history.dims != problem.n:
        raise PreconditionError(f"history has {initial_history.dims} components, problem has n={problem.n}")
    dmin = min_discrete_delay(problem)
    if cfg.step > dmin * (1 + 1e-12):
        raise ConfigError(f"step {cfg.step} exceeds the smallest delay {dmin}")
    nsteps = max(1, math.ceil((t1 - t0) / cfg.step - 1e-9))
    h = (t1 - t0) / nsteps
    n = problem.n
    z = np.array(initial_history.head, dtype=float)
    drift0 = _g_norm(problem, z)
    if drift0 > cfg.drift_tolerance * scale_of(z):
        raise ManifoldDriftError(f"initial head is off the manifold: |g| = {drift0:.3e} at t={t0}",
                                 time=t0, drift=drift0)
    # lookups can reach into the current step only through short or distributed delays
    lookahead = lam != 0 and (problem.distributed or dmin < h * (1 - 1e-12))
    dense = DenseHistory(initial_history, t0, nsteps + 2, n)
    rhs = lambda t, zz: field(problem, lam, t, zz, StageHistory(dense, t, zz))  # noqa: E731
    dz = rhs(t0, z)
    dense.push(t0, z, dz)
    g_norms = np.empty(nsteps + 1)
    g_norms[0] = drift0
    max_drift = drift0
    for i in range(nsteps):
        t = t0 + i * h
        tn = t0 + (i + 1) * h if i + 1 < nsteps else t1
        hh = tn - t
        passes = 2 if lookahead else 1
        for rep in range(passes):
            k1 = dz
            k2 = rhs(t + hh / 2, z + hh / 2 * k1)
            k3 = rhs(t + hh / 2, z + hh / 2 * k2)
            k4 = rhs(tn, z + hh * k3)
            zn = z + hh / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
            if rep + 1 < passes:
                dense.push(tn, zn, rhs(tn, zn))
        if lookahead:
            dense.pop()
        drift = _g_norm(problem, zn)
        max_drift = max(max_drift, drift)
        if not np.all(np.isfinite(zn)) or drift > cfg.drift_tolerance * scale_of(zn):
            raise ManifoldDriftError(f"manifold drift exceeded: |g| = {drift:.3e} at t={tn:.6g}",
                                     time=tn, drift=drift)
        if (i + 1) % cfg.projection_interval == 0:
            p, q = problem.split(zn)
            zn = np.concatenate([p, project_to_manifold(problem, p, q)])
        z = zn
        dz = rhs(tn, z)
        dense.push(tn, z, dz)
        g_norms[i + 1] = _g_norm(problem, z)
    m = dense.m
    return Trajectory(ts=dense.ts[:m].copy(), zs=dense.zs[:m].copy(), dzs=dense.dzs[:m].copy(),
                      g_norms=g_norms, max_drift=max_drift, k=problem.k, s=problem.s, initial=initial_history)


def convergence_order(problem: SemiExplicitRFDAE, lam: float, initial_history: HistorySegment,
                      t_span, steps, reference=None, cfg: SolverConfig | None = None) -> float:
    """Least-squares slope of log(error at t1) against log(step).

    ``reference`` maps t to the exact state; without it a run at an eighth of
    the smallest step stands in.
    """
    steps = [float(s) for s in steps]
    if len(steps) < 3:
        raise PreconditionError("convergence_order needs at least 3 step sizes")
    base = SolverConfig() if cfg is None else cfg
    t1 = float(t_span[1])

    def run(h):
        c = SolverConfig(step=h, projection_interval=base.projection_interval,
                         drift_tolerance=base.drift_tolerance, interpolation=base.interpolation)
        return integrate(problem, lam, initial_history, t_span, c).head

    if reference is None:
        exact = run(min(steps) / 8)
    else:
        exact = np.asarray(reference(t1), dtype=float)
    errs = np.array([np.max(np.abs(run(h) - exact)) for h in steps])
    if np.any(errs <= 0):
        raise PreconditionError("zero error at some step size; order is undefined")
    slope = np.polyfit(np.log(steps), np.log(errs), 1)[0]
    return float(slope)
