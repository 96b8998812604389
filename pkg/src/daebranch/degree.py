"""Brouwer degree on boxes.

Three independent routes:

* ``degree_sign_sum``: enumerate zeros by multistart Newton and add up
  ``sign det dF``; valid when every zero is nondegenerate.
* ``winding_number_2d``: count how often F winds around 0 along the boundary
  of a planar box.  Shares no code with the first route, which is the point.
* ``degree_on_manifold``: degree of the tangent field on M = {g = 0}, computed
  in the graph chart p -> (p, y(p)).  Its magnitude must match the Euclidean
  degree of F = (f, g).
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import ConvergenceError, DegreeError, IndexAssumptionError
from .model import jacobian_fd, scale_of
from .parallel import pmap
from .reduction import _solve_d2g, project_to_manifold

DEGENERACY = 1e-8
MERGE = 1e-6
NEWTON_MAXITER = 100


@dataclass(frozen=True)
class Box:
    lower: np.ndarray
    upper: np.ndarray

    def __init__(self, lower, upper):
        lo = np.atleast_1d(np.asarray(lower, dtype=float))
        hi = np.atleast_1d(np.asarray(upper, dtype=float))
        if lo.shape != hi.shape or lo.ndim != 1:
            raise DegreeError("box bounds must be vectors of equal length")
        if not np.all(lo < hi):
            raise DegreeError("box needs lower < upper in every coordinate")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @classmethod
    def cube(cls, half_width: float, n: int, center=None) -> "Box":
        c = np.zeros(n) if center is None else np.asarray(center, dtype=float)
        return cls(c - half_width, c + half_width)

    @property
    def dim(self) -> int:
        return self.lower.size

    @property
    def diameter(self) -> float:
        return float(np.linalg.norm(self.upper - self.lower))

    def contains(self, p, slack: float = 0.0) -> bool:
        p = np.asarray(p, dtype=float)
        return bool(np.all(p >= self.lower - slack) and np.all(p <= self.upper + slack))

    def boundary_distance(self, p) -> float:
        p = np.asarray(p, dtype=float)
        return float(min(np.min(p - self.lower), np.min(self.upper - p)))

    def grid(self, m: int) -> np.ndarray:
        axes = [np.linspace(lo, hi, m) for lo, hi in zip(self.lower, self.upper)]
        return np.array(list(itertools.product(*axes)))

    def shifted(self, c) -> "Box":
        c = np.asarray(c, dtype=float)
        return Box(self.lower + c, self.upper + c)

    def split(self, k: int) -> tuple["Box", "Box"]:
        return Box(self.lower[:k], self.upper[:k]), Box(self.lower[k:], self.upper[k:])


@dataclass
class DegreeResult:
    value: int
    zeros: list = field(default_factory=list)  # (point, sign, det)
    method: str = "sign-sum"
    warnings: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "value": self.value,
            "method": self.method,
            "zeros": [{"point": [float(v) for v in p], "sign": s, "det": float(d)} for p, s, d in self.zeros],
            "warnings": list(self.warnings),
        }


def _vec(F):
    return lambda x: np.atleast_1d(np.asarray(F(x), dtype=float))


def newton(F, dF, x0, tol: float = 1e-12, maxiter: int = NEWTON_MAXITER):
    """Damped Newton; returns the converged point or None."""
    x = np.array(x0, dtype=float)
    try:
        r = F(x)
    except (ArithmeticError, ValueError, IndexAssumptionError, ConvergenceError):
        return None
    res = np.max(np.abs(r)) if r.size else 0.0
    for _ in range(maxiter):
        if not np.isfinite(res):
            return None
        if res <= tol * scale_of(x):
            return x
        try:
            J = dF(x)
            step = np.linalg.lstsq(J, r, rcond=None)[0]
        except (ArithmeticError, ValueError, np.linalg.LinAlgError, IndexAssumptionError, ConvergenceError):
            return None
        t = 1.0
        while t > 1e-6:
            xn = x - t * step
            try:
                rn = F(xn)
                resn = np.max(np.abs(rn))
            except (ArithmeticError, ValueError, IndexAssumptionError, ConvergenceError):
                resn = np.inf
            if resn < res:
                break
            t *= 0.5
        else:
            return None
        x, r, res = xn, rn, resn
    return x if res <= tol * scale_of(x) else None


def _find_zeros(F, box: Box, grid_per_axis: int, tol: float, dF=None):
    if grid_per_axis < 2:
        raise DegreeError("grid_per_axis must be >= 2")
    F = _vec(F)
    J = (lambda x: np.atleast_2d(np.asarray(dF(x), dtype=float))) if dF is not None else (
        lambda x: jacobian_fd(F, x))
    starts = box.grid(grid_per_axis)
    merge = MERGE * box.diameter
    results = pmap(lambda s: newton(F, J, s, tol=tol), starts)
    failed = sum(r is None for r in results)
    zeros: list[np.ndarray] = []
    for z in results:
        if z is None or not box.contains(z, slack=merge):
            continue
        if all(np.linalg.norm(z - w) >= merge for w in zeros):
            zeros.append(z)
    zeros.sort(key=lambda z: tuple(z))
    return zeros, failed


def find_zeros(F: Callable, box: Box, grid_per_axis: int = 15, tol: float = 1e-12, dF=None) -> list:
    """Zeros of F in the closed box, deduplicated and sorted lexicographically."""
    return _find_zeros(F, box, grid_per_axis, tol, dF)[0]


def _signed_det(J: np.ndarray, where) -> tuple[int, float]:
    det = float(np.linalg.det(J))
    hadamard = float(np.prod(np.linalg.norm(J, axis=1)))
    if not abs(det) > DEGENERACY * hadamard:
        raise DegreeError(f"degenerate zero at {np.round(where, 12).tolist()}: perturb or shrink box")
    return (1 if det > 0 else -1), det


def _assemble(zeros, jac, box: Box, failed: int, method: str) -> DegreeResult:
    merge = MERGE * box.diameter
    # degeneracy first: a map vanishing on a whole set also meets the boundary
    out = [(z, *_signed_det(jac(z), z)) for z in zeros]
    for z in zeros:
        if box.boundary_distance(z) < merge:
            raise DegreeError(f"zero on boundary at {z.tolist()}: degree not admissible")
    warnings = [f"{failed} Newton starts did not converge"] if failed else []
    return DegreeResult(value=int(sum(s for _, s, _ in out)), zeros=out, method=method, warnings=warnings)


def degree_sign_sum(F: Callable, dF: Callable | None, box: Box, grid_per_axis: int = 15,
                    tol: float = 1e-12) -> DegreeResult:
    """deg(F, box, 0) as the sum of sign det dF over the zeros."""
    Fv = _vec(F)
    jac = (lambda x: np.atleast_2d(np.asarray(dF(x), dtype=float))) if dF is not None else (
        lambda x: jacobian_fd(Fv, x))
    zeros, failed = _find_zeros(Fv, box, grid_per_axis, tol, dF=jac)
    return _assemble(zeros, jac, box, failed, "sign-sum")


def _boundary(box: Box, m: int) -> np.ndarray:
    """m points going once around the rectangle, counterclockwise."""
    (x0, y0), (x1, y1) = box.lower, box.upper
    w, h = x1 - x0, y1 - y0
    s = np.arange(m) * (2 * (w + h) / m)
    pts = np.empty((m, 2))
    for i, d in enumerate(s):
        if d < w:
            pts[i] = (x0 + d, y0)
        elif d < w + h:
            pts[i] = (x1, y0 + d - w)
        elif d < 2 * w + h:
            pts[i] = (x1 - (d - w - h), y1)
        else:
            pts[i] = (x0, y1 - (d - 2 * w - h))
    return pts


def winding_number_2d(F: Callable, box: Box, boundary_samples: int = 4096,
                      max_samples: int = 2 ** 20) -> int:
    """Winding number of F around 0 along the boundary of a planar box."""
    if box.dim != 2:
        raise DegreeError("winding number needs a 2-D box")
    Fv = _vec(F)
    m = boundary_samples
    last = None
    while m <= max_samples:
        vals = np.array([Fv(p) for p in _boundary(box, m)])
        if not np.all(np.isfinite(vals)):
            raise DegreeError("F is not finite on the boundary")
        norms = np.linalg.norm(vals, axis=1)
        closed = np.vstack([vals, vals[:1]])
        variation = float(np.max(np.linalg.norm(np.diff(closed, axis=0), axis=1)))
        if norms.min() > 10 * variation:
            ang = np.arctan2(closed[:, 1], closed[:, 0])
            dang = np.diff(ang)
            dang = (dang + np.pi) % (2 * np.pi) - np.pi
            total = float(dang.sum()) / (2 * np.pi)
            gap = abs(total - round(total))
            if gap <= 0.1:
                return int(round(total))
            last = f"under-sampled boundary: winding {total:.3f} is not near an integer"
        else:
            last = f"F nearly vanishes on the boundary: min |F| = {norms.min():.3e}"
        m *= 2
    raise DegreeError(last or "under-sampled boundary")


def chart_map(problem, y_guess):
    """p -> f(p, y(p)) and its derivative through the graph chart of M."""
    y_guess = np.atleast_1d(np.asarray(y_guess, dtype=float))

    def y_of(p):
        return project_to_manifold(problem, p, y_guess)

    def fun(p):
        return np.atleast_1d(np.asarray(problem.f(p, y_of(p)), dtype=float))

    def jac(p):
        q = y_of(p)
        Df = problem.f_jacobian(p, q)
        d1g, d2g = problem.constraint_jacobians(p, q)
        dy = -_solve_d2g(d2g, d1g, (p, q))
        return Df[:, : problem.k] + Df[:, problem.k:] @ dy

    return fun, jac, y_of


def degree_on_manifold(problem, box: Box, grid_per_axis: int = 15, sheets_per_axis: int = 3,
                       tol: float = 1e-12) -> DegreeResult:
    """Degree of the reduced tangent field on M inside the box, via charts.

    Several starting guesses for the algebraic variable are used so that more
    than one sheet of M over the same x is picked up.
    """
    if box.dim != problem.n:
        raise DegreeError(f"box has dimension {box.dim}, problem has n={problem.n}")
    xbox, ybox = box.split(problem.k)
    guesses = ybox.grid(sheets_per_axis) if sheets_per_axis > 1 else [(ybox.lower + ybox.upper) / 2]
    merge = MERGE * box.diameter
    found: list[tuple[np.ndarray, Callable]] = []
    failed = 0
    try:
        for yg in guesses:
            fun, jac, y_of = chart_map(problem, yg)
            zs, nf = _find_zeros(fun, xbox, grid_per_axis, tol, dF=jac)
            failed += nf
            for p in zs:
                full = np.concatenate([p, y_of(p)])
                if not box.contains(full, slack=merge):
                    continue
                if all(np.linalg.norm(full - w) >= merge for w, _ in found):
                    found.append((full, jac))
    except IndexAssumptionError as err:
        raise DegreeError(f"chart breakdown: {err}") from None
    found.sort(key=lambda item: tuple(item[0]))
    out = []
    for full, jac in found:
        try:
            sign, det = _signed_det(np.atleast_2d(jac(full[: problem.k])), full)
        except IndexAssumptionError as err:
            raise DegreeError(f"chart breakdown: {err}") from None
        out.append((full, sign, det))
    for full, _ in found:
        if box.boundary_distance(full) < merge:
            raise DegreeError(f"zero on boundary at {full.tolist()}: degree not admissible")
    warnings = [f"{failed} Newton starts did not converge"] if failed else []
    return DegreeResult(value=int(sum(s for _, s, _ in out)), zeros=out, method="chart-manifold",
                        warnings=warnings)


def problem_degree(problem, box: Box, grid_per_axis: int = 15) -> DegreeResult:
    """deg(F, box) for F = (f, g) of a semi-explicit problem."""
    if box.dim != problem.n:
        raise DegreeError(f"box has dimension {box.dim}, problem has n={problem.n}")
    return degree_sign_sum(problem.F, problem.dF, box, grid_per_axis)


def hadamard_sign(J) -> int:
    """sign det J, or 0 when degenerate by the same test the degree uses."""
    try:
        return _signed_det(np.atleast_2d(J), np.zeros(1))[0]
    except DegreeError:
        return 0


__all__ = ["Box", "DegreeResult", "find_zeros", "degree_sign_sum", "winding_number_2d",
           "degree_on_manifold", "problem_degree", "newton", "chart_map", "hadamard_sign"]
