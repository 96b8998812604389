"""Vector fields on the constraint manifold M = {g = 0}.

Differentiating g(x, y) = 0 along a solution gives
``d1g x' + d2g y' = 0``, hence ``y' = -[d2g]^{-1} d1g x'``.  The minus sign is
what makes the fields below tangent to M, and it is used for both the
unperturbed field ``psi`` and the functional field ``upsilon``.
"""
from __future__ import annotations

import numpy as np

from .errors import ConvergenceError, IndexAssumptionError, ManifoldDriftError
from .model import HistorySegment, SemiExplicitRFDAE, scale_of

COND_LIMIT = 1e12


def _solve_d2g(d2g: np.ndarray, rhs: np.ndarray, where) -> np.ndarray:
    if d2g.shape == (1, 1):
        if d2g[0, 0] == 0.0 or not np.isfinite(d2g[0, 0]):
            raise IndexAssumptionError(f"index assumption violated at {where}: d2g is singular")
        return rhs / d2g[0, 0]
    sv = np.linalg.svd(d2g, compute_uv=False)
    if sv[-1] == 0.0 or sv[0] / sv[-1] > COND_LIMIT:
        raise IndexAssumptionError(f"index assumption violated at {where}: cond(d2g) > {COND_LIMIT:g}")
    return np.linalg.solve(d2g, rhs)


def lift(problem: SemiExplicitRFDAE, p, q, vx) -> np.ndarray:
    """Tangent vector (vx, -[d2g]^{-1} d1g vx) at (p, q)."""
    d1g, d2g = problem.constraint_jacobians(p, q)
    vy = -_solve_d2g(d2g, d1g @ vx, (p, q))
    return np.concatenate([vx, vy])


def psi_eval(problem: SemiExplicitRFDAE, p, q) -> tuple[np.ndarray, np.ndarray]:
    p = np.atleast_1d(np.asarray(p, dtype=float))
    q = np.atleast_1d(np.asarray(q, dtype=float))
    fx = np.atleast_1d(np.asarray(problem.f(p, q), dtype=float))
    v = lift(problem, p, q, fx)
    return v[: problem.k], v[problem.k:]


def upsilon_eval(problem: SemiExplicitRFDAE, t: float, history) -> tuple[np.ndarray, np.ndarray]:
    head = np.asarray(history.eval(0.0), dtype=float)
    p, q = problem.split(head)
    hx = np.atleast_1d(np.asarray(problem.h(t, history), dtype=float))
    v = lift(problem, p, q, hx)
    return v[: problem.k], v[problem.k:]


def field(problem: SemiExplicitRFDAE, lam: float, t: float, z, history) -> np.ndarray:
    """psi(z) + lam * upsilon(t, history) with one linear solve, no drift check."""
    p, q = problem.split(z)
    vx = np.atleast_1d(np.asarray(problem.f(p, q), dtype=float))
    if lam != 0.0:
        vx = vx + lam * np.atleast_1d(np.asarray(problem.h(t, history), dtype=float))
    return lift(problem, p, q, vx)


def reduced_rhs(problem: SemiExplicitRFDAE, lam: float, t: float, history,
                drift_bound: float = 1e-6) -> np.ndarray:
    """Right-hand side of the reduced retarded equation at the history head."""
    head = np.asarray(history.eval(0.0), dtype=float)
    p, q = problem.split(head)
    drift = float(np.max(np.abs(problem.g(p, q))))
    if drift > drift_bound * scale_of(head):
        raise ManifoldDriftError(f"manifold drift exceeded: |g|={drift:.3e} at t={t}", time=t, drift=drift)
    return field(problem, lam, t, head, history)


def project_to_manifold(problem: SemiExplicitRFDAE, x, y_guess, tol: float = 1e-12,
                        maxiter: int = 50) -> np.ndarray:
    """Newton on q -> g(x, q) holding x fixed."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    y = np.atleast_1d(np.array(y_guess, dtype=float))
    history = []
    for _ in range(maxiter + 1):
        r = np.atleast_1d(np.asarray(problem.g(x, y), dtype=float))
        res = float(np.max(np.abs(r)))
        history.append(res)
        if not np.isfinite(res):
            break
        if res <= tol * scale_of(x, y):
            return y
        _, d2g = problem.constraint_jacobians(x, y)
        step = _solve_d2g(d2g, r, (x, y))
        # backtrack only when the full step makes things worse
        lam = 1.0
        for _ in range(30):
            y_new = y - lam * step
            r_new = np.atleast_1d(np.asarray(problem.g(x, y_new), dtype=float))
            if np.all(np.isfinite(r_new)) and np.max(np.abs(r_new)) < res:
                break
            lam *= 0.5
        y = y_new
    raise ConvergenceError(f"projection onto the manifold did not converge at x={x}",
                           last_iterate=y, residual=history)


def tangency_residual(problem: SemiExplicitRFDAE, p, q, v) -> float:
    """|d1g vx + d2g vy| / max(1, |v|), Euclidean norms."""
    v = np.asarray(v, dtype=float).reshape(-1)
    d1g, d2g = problem.constraint_jacobians(np.atleast_1d(p), np.atleast_1d(q))
    r = d1g @ v[: problem.k] + d2g @ v[problem.k:]
    return float(np.linalg.norm(r) / max(1.0, np.linalg.norm(v)))


def head_history(z, tau: float = 0.0) -> HistorySegment:
    """Constant history sitting at ``z``; convenient for evaluating h at a point."""
    return HistorySegment.constant(np.asarray(z, dtype=float), tau, 2 if tau > 0 else 1)
