"""Periodic solutions by shooting, and branches of them in lambda.

The state of the period map is a history segment sampled on a fixed grid of
offsets over [-tau_max, 0], flattened to a vector.  When tau_max = 0 the grid
is the single node 0 and the state is just the point (x, y).
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .config import fmt
from .degree import Box, degree_sign_sum, hadamard_sign
from .errors import ConfigError, ConvergenceError, DaeBranchError, PreconditionError
from .model import DEFAULT_NODES, HistorySegment, PeriodicPair, SemiExplicitRFDAE, uniform_grid
from .parallel import pmap
from .reduction import project_to_manifold
from .solver import SolverConfig, Trajectory, integrate

FD_REL = math.sqrt(np.finfo(float).eps)

STEP_FAILURE = "step_failure"
LAMBDA_MAX = "lambda_max_reached"
AMPLITUDE_BOUND = "amplitude_bound_reached"
FOLD = "fold_suspected"
MAX_POINTS = "max_points_reached"


@dataclass(frozen=True)
class ContinuationConfig:
    nodes: int = DEFAULT_NODES
    newton_tol: float = 1e-10
    newton_maxiter: int = 30
    corrector_maxiter: int = 12
    ds: float = 0.05
    min_ds_factor: int = 64
    max_points: int = 200
    trivial_amplitude: float = 1e-8
    singular_tol: float = 1e-6

    def __post_init__(self):
        if self.nodes < 2:
            raise ConfigError("need at least two segment nodes")
        if not (self.newton_tol > 0 and self.ds > 0):
            raise ConfigError("newton_tol and ds must be positive")

    @classmethod
    def from_dict(cls, d: dict | None) -> "ContinuationConfig":
        d = dict(d or {})
        known = set(cls.__dataclass_fields__)
        extra = set(d) - known - {"lambda_max", "amplitude_max"}
        if extra:
            raise ConfigError(f"unknown continuation settings {sorted(extra)}")
        try:
            return cls(**{k: v for k, v in d.items() if k in known})
        except TypeError as err:
            raise ConfigError(str(err)) from None

    def to_dict(self) -> dict:
        return asdict(self)


class Shooting:
    """Period map and its finite-difference Jacobian for one problem."""

    def __init__(self, problem: SemiExplicitRFDAE, solver_cfg: SolverConfig | None = None,
                 nodes: int = DEFAULT_NODES):
        self.problem = problem
        self.cfg = SolverConfig() if solver_cfg is None else solver_cfg
        self.thetas = uniform_grid(problem.tau_max, nodes)
        self.n = problem.n

    @property
    def size(self) -> int:
        return self.thetas.size * self.n

    def flatten(self, seg: HistorySegment) -> np.ndarray:
        vals = seg.eval_many(self.thetas)
        return np.asarray(vals, dtype=float).reshape(-1)

    def unflatten(self, vec) -> HistorySegment:
        vals = np.asarray(vec, dtype=float).reshape(self.thetas.size, self.n)
        return HistorySegment(self.thetas, vals, self.cfg.interpolation)

    def constant(self, point) -> np.ndarray:
        return np.tile(np.asarray(point, dtype=float), self.thetas.size)

    def project_head(self, vec) -> np.ndarray:
        vec = np.array(vec, dtype=float)
        head = vec[-self.n:]
        p, q = self.problem.split(head)
        vec[-self.n:] = np.concatenate([p, project_to_manifold(self.problem, p, q)])
        return vec

    def run(self, lam: float, vec) -> tuple[np.ndarray, Trajectory]:
        """Project the head onto M, integrate one period, resample the end segment."""
        vec = self.project_head(vec)
        T = self.problem.period
        traj = integrate(self.problem, lam, self.unflatten(vec), (0.0, T), self.cfg)
        return traj.eval_many(T + self.thetas).reshape(-1), traj

    def period_map(self, lam: float, vec) -> np.ndarray:
        return self.run(lam, vec)[0]

    def residual(self, lam: float, vec) -> tuple[np.ndarray, Trajectory]:
        out, traj = self.run(lam, vec)
        return out - np.asarray(vec, dtype=float), traj

    def jacobian(self, lam: float, vec, R0, with_lambda: bool = False) -> np.ndarray:
        """Forward differences of R(lam, s); the lambda column comes first when requested."""
        vec = np.asarray(vec, dtype=float)
        cols = list(range(vec.size))

        def column(j):
            if j < 0:
                hl = FD_REL * max(1.0, abs(lam))
                # one-sided towards lambda > 0 so the map stays defined at lambda = 0
                return (self.residual(lam + hl, vec)[0] - R0) / hl
            hj = FD_REL * max(1.0, abs(vec[j]))
            v = vec.copy()
            v[j] += hj
            return (self.residual(lam, v)[0] - R0) / hj

        order = ([-1] if with_lambda else []) + cols
        return np.column_stack(pmap(column, order))


def _pair(lam: float, vec, R, traj: Trajectory) -> PeriodicPair:
    head_gap = float(np.max(np.abs(traj.zs[-1] - traj.zs[0])))
    return PeriodicPair(
        lam=float(lam), times=traj.ts, states=traj.zs,
        residual_periodicity=max(float(np.max(np.abs(R))), head_gap),
        residual_constraint=float(traj.max_drift),
        amplitude=traj.amplitude(), segment=np.asarray(vec, dtype=float).copy(),
    )


def _as_vector(shoot: Shooting, guess) -> np.ndarray:
    if isinstance(guess, HistorySegment):
        return shoot.flatten(guess)
    g = np.asarray(guess, dtype=float).reshape(-1)
    if g.size == shoot.n:
        return shoot.constant(g)
    if g.size != shoot.size:
        raise PreconditionError(f"guess has {g.size} entries, expected {shoot.n} or {shoot.size}")
    return g


def find_periodic(problem: SemiExplicitRFDAE, lam: float, guess, tol: float = 1e-10,
                  solver_cfg: SolverConfig | None = None, cont_cfg: ContinuationConfig | None = None,
                  shoot: Shooting | None = None) -> PeriodicPair:
    """Newton on R(s) = P(s) - s, P the period map."""
    cc = ContinuationConfig() if cont_cfg is None else cont_cfg
    shoot = Shooting(problem, solver_cfg, cc.nodes) if shoot is None else shoot
    vec = shoot.project_head(_as_vector(shoot, guess))
    history = []
    R, traj = shoot.residual(lam, vec)
    for _ in range(cc.newton_maxiter):
        res = float(np.max(np.abs(R)))
        history.append(res)
        if res <= tol:
            return _pair(lam, vec, R, traj)
        J = shoot.jacobian(lam, vec, R)
        if np.linalg.svd(J, compute_uv=False)[-1] < cc.singular_tol:
            raise ConvergenceError("non-isolated periodic solution: period map has a multiplier near 1",
                                   last_iterate=vec, residual=history)
        delta = np.linalg.solve(J, -R)
        t = 1.0
        while True:
            cand = shoot.project_head(vec + t * delta)
            try:
                Rc, tc = shoot.residual(lam, cand)
                if np.max(np.abs(Rc)) < res or t < 1 / 64:
                    break
            except DaeBranchError:
                if t < 1 / 64:
                    raise
            t /= 2
        vec, R, traj = cand, Rc, tc
    history.append(float(np.max(np.abs(R))))
    if history[-1] <= tol:
        return _pair(lam, vec, R, traj)
    raise ConvergenceError(f"shooting did not converge in {cc.newton_maxiter} iterations",
                           last_iterate=vec, residual=history)


@dataclass
class BranchPoint:
    lam: float
    pair: PeriodicPair
    arclength: float = 0.0

    @property
    def amplitude(self) -> float:
        return self.pair.amplitude

    @property
    def u(self) -> np.ndarray:
        return np.concatenate([[self.lam], self.pair.segment])


@dataclass
class Branch:
    origin: np.ndarray
    points: list = field(default_factory=list)
    termination: str = ""
    warnings: list = field(default_factory=list)
    local_index: int = 0

    def to_csv(self, target=None) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["index", "lambda", "amplitude", "residual_periodicity", "residual_constraint"])
        for i, pt in enumerate(self.points):
            w.writerow([i, fmt(pt.lam), fmt(pt.amplitude), fmt(pt.pair.residual_periodicity),
                        fmt(pt.pair.residual_constraint)])
        text = buf.getvalue()
        if target is not None:
            Path(target).write_text(text, encoding="utf-8")
        return text

    def summary(self) -> dict:
        return {
            "origin": [float(v) for v in self.origin],
            "local_index": self.local_index,
            "points": len(self.points),
            "lambda_last": float(self.points[-1].lam) if self.points else None,
            "amplitude_max": max((float(p.amplitude) for p in self.points), default=None),
            "termination": self.termination,
            "warnings": list(self.warnings),
        }


class Continuation:
    """Pseudo-arclength stepping on u = (lambda, s)."""

    def __init__(self, problem, solver_cfg=None, cont_cfg=None):
        self.cc = ContinuationConfig() if cont_cfg is None else cont_cfg
        self.shoot = Shooting(problem, solver_cfg, self.cc.nodes)

    def tangent_at(self, u) -> np.ndarray:
        lam, vec = u[0], u[1:]
        R, _ = self.shoot.residual(lam, vec)
        J = self.shoot.jacobian(lam, vec, R, with_lambda=True)
        v = np.linalg.lstsq(J[:, 1:], -J[:, 0], rcond=None)[0]
        tan = np.concatenate([[1.0], v])
        return tan / np.linalg.norm(tan)

    def step(self, u, tangent, ds: float) -> tuple[np.ndarray, PeriodicPair]:
        """Predict along the tangent by ds, then Newton with the arclength condition."""
        tangent = np.asarray(tangent, dtype=float)
        u0 = np.asarray(u, dtype=float)
        w = u0 + ds * tangent
        for _ in range(self.cc.corrector_maxiter):
            lam, vec = w[0], w[1:]
            if lam < -ds:
                raise ConvergenceError("corrector left the half-line lambda >= 0", last_iterate=w)
            R, traj = self.shoot.residual(max(lam, 0.0), vec)
            N = float(tangent @ (w - u0) - ds)
            if np.max(np.abs(R)) <= self.cc.newton_tol and abs(N) <= 1e-10 * max(1.0, ds):
                return w, _pair(lam, vec, R, traj)
            J = self.shoot.jacobian(max(lam, 0.0), vec, R, with_lambda=True)
            A = np.vstack([J, tangent])
            w = w + np.linalg.solve(A, -np.concatenate([R, [N]]))
            w[1:] = self.shoot.project_head(w[1:])
        raise ConvergenceError("corrector did not converge", last_iterate=w)


def scan_trivial_origins(problem: SemiExplicitRFDAE, box: Box, grid_per_axis: int = 15) -> list:
    """Zeros of F in the box with their local indices sign det dF."""
    res = degree_sign_sum(problem.F, problem.dF, box, grid_per_axis)
    return [(p, s) for p, s, _ in res.zeros]


def continue_branch(problem: SemiExplicitRFDAE, origin, lam_max: float, amplitude_max: float,
                    ds: float | None = None, solver_cfg: SolverConfig | None = None,
                    cont_cfg: ContinuationConfig | None = None) -> Branch:
    """Trace T-periodic pairs from the trivial pair at ``origin`` towards lambda > 0."""
    cc = ContinuationConfig() if cont_cfg is None else cont_cfg
    ds = cc.ds if ds is None else float(ds)
    origin = np.asarray(origin, dtype=float)
    Fo = problem.F(origin)
    if not np.max(np.abs(Fo)) < 1e-10:
        raise PreconditionError(f"origin is not a zero of F: |F(origin)| = {np.max(np.abs(Fo)):.3e}")
    index = hadamard_sign(problem.dF(origin))
    if index == 0:
        raise PreconditionError("dF is singular at the origin: local index undefined")
    if not (lam_max > 0 and amplitude_max > 0 and ds > 0):
        raise PreconditionError("lambda_max, amplitude_max and ds must be positive")

    cont = Continuation(problem, solver_cfg, cc)
    branch = Branch(origin=origin, local_index=index)
    first = find_periodic(problem, 0.0, origin, tol=cc.newton_tol, cont_cfg=cc, shoot=cont.shoot)
    branch.points.append(BranchPoint(0.0, first, 0.0))
    u = np.concatenate([[0.0], first.segment])
    tangent = cont.tangent_at(u)
    h = ds
    min_ds = ds / cc.min_ds_factor
    arclength = 0.0
    while True:
        if len(branch.points) >= cc.max_points:
            branch.termination = MAX_POINTS
            break
        try:
            u_new, pair = cont.step(u, tangent, h)
        except DaeBranchError as err:
            h /= 2
            if h < min_ds:
                if len(branch.points) == 1:
                    raise ConvergenceError(f"no branch detected from origin {origin.tolist()}: {err}") from None
                branch.termination = STEP_FAILURE
                branch.warnings.append(f"step failed at ds={2 * h:.3g}: {err}")
                break
            continue
        if u_new[0] < 0:
            branch.termination = FOLD
            branch.warnings.append(f"branch turned back through lambda = 0 near s={arclength:.4g}")
            break
        arclength += float(np.linalg.norm(u_new - u))
        branch.points.append(BranchPoint(float(u_new[0]), pair, arclength))
        secant = u_new - u
        tangent = secant / np.linalg.norm(secant)
        u = u_new
        h = min(ds, 2 * h)
        if u[0] >= lam_max:
            branch.termination = LAMBDA_MAX
            break
        if pair.amplitude >= amplitude_max:
            branch.termination = AMPLITUDE_BOUND
            break
    if all(p.amplitude < cc.trivial_amplitude for p in branch.points):
        branch.warnings.append("trivial branch: every point is a constant solution")
    return branch


def step_back(problem, branch: Branch, solver_cfg=None, cont_cfg=None) -> np.ndarray:
    """From the last point, one step along the reversed secant of the last two points."""
    if len(branch.points) < 2:
        raise PreconditionError("need at least two branch points")
    a, b = branch.points[-2].u, branch.points[-1].u
    d = a - b
    dist = float(np.linalg.norm(d))
    cont = Continuation(problem, solver_cfg, cont_cfg)
    u, _ = cont.step(b, d / dist, dist)
    return u
