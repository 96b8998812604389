"""Linear reduction of E x' = F(x) + lam C(t) S(x_t) to semi-explicit form.

Pipeline: find orthogonal bases R, K with R^T E K = [[E11, E12], [0, 0]],
change variables x = K J_E w with J_E = [[E11^-1, -E11^-1 E12], [0, I]], and
multiply on the left by R^T.  The first r rows become x' = f + lam h and the
last n - r rows the constraint g = 0.

``svd_align`` checks the two kernel conditions under which the SVD factors of
E also bring C(t) into block form.  The orientation is E = P S Q^T and
P^T C(t) Q.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from . import expr as ex
from .errors import PreconditionError
from .model import HistorySegment, ImplicitRFDAE, SemiExplicitRFDAE

RANK_RTOL = 1e-10
ORTHO_TOL = 1e-10
ANGLE_TOL = 1e-8


def numerical_rank(A, rtol: float = RANK_RTOL) -> int:
    sv = np.linalg.svd(np.asarray(A, dtype=float), compute_uv=False)
    if sv.size == 0 or sv[0] == 0.0:
        return 0
    return int(np.sum(sv > rtol * sv[0]))


@dataclass(frozen=True, eq=False)
class BlockDecomposition:
    """R^T E K = [[E11, E12], [0, 0]] with R, K orthogonal."""

    r: int
    basis_rows: np.ndarray
    basis_cols: np.ndarray
    E11: np.ndarray
    E12: np.ndarray
    method: str = "identity"

    @property
    def n(self) -> int:
        return self.basis_rows.shape[0]


@dataclass(frozen=True, eq=False)
class JETransform:
    JE: np.ndarray
    JE_inv: np.ndarray


def _perm(order) -> np.ndarray:
    n = len(order)
    P = np.zeros((n, n))
    P[list(order), range(n)] = 1.0
    return P


def _check_blocks(E, R, K, r):
    B = R.T @ E @ K
    scale = max(1.0, float(np.max(np.abs(E))))
    if np.max(np.abs(B[r:, :]), initial=0.0) > 1e-10 * scale:
        return None
    E11 = B[:r, :r]
    if numerical_rank(E11) < r:
        return None
    return B


def block_decompose(E) -> BlockDecomposition:
    """Orthogonal bases putting E into upper block form with E11 invertible.

    Tried in order: identity bases, a permutation of rows (zero rows last) and
    columns (pivoted QR on the nonzero rows), and finally the SVD.
    """
    E = np.asarray(E, dtype=float)
    n = E.shape[0]
    if E.shape != (n, n):
        raise PreconditionError("E must be square")
    r = numerical_rank(E)
    if r == 0:
        raise PreconditionError("no singular part / fully regular: E is zero")
    if r == n:
        raise PreconditionError("no singular part / fully regular: E has full rank")
    I = np.eye(n)
    B = _check_blocks(E, I, I, r)
    if B is not None:
        return BlockDecomposition(r, I, I, B[:r, :r], B[:r, r:], "identity")
    scale = max(1.0, float(np.max(np.abs(E))))
    zero_rows = [i for i in range(n) if np.max(np.abs(E[i])) <= 1e-10 * scale]
    if len(zero_rows) == n - r:
        rows = [i for i in range(n) if i not in zero_rows] + zero_rows
        R = _perm(rows)
        _, _, piv = scipy.linalg.qr(E[rows[:r], :], pivoting=True)
        cols = list(piv[:r]) + sorted(set(range(n)) - set(piv[:r]))
        # keep the original column order when that already works
        for K in (I, _perm(cols)):
            B = _check_blocks(E, R, K, r)
            if B is not None:
                return BlockDecomposition(r, R, K, B[:r, :r], B[:r, r:], "permutation")
    U, s, Vt = np.linalg.svd(E)
    R, K = U, Vt.T
    B = R.T @ E @ K
    B[r:, :] = 0.0
    B[:r, r:] = 0.0
    return BlockDecomposition(r, R, K, B[:r, :r], B[:r, r:], "svd")


def build_JE(dec: BlockDecomposition) -> JETransform:
    """J_E = [[E11^-1, -E11^-1 E12], [0, I]] and its inverse [[E11, E12], [0, I]]."""
    r, n = dec.r, dec.n
    inv11 = np.linalg.inv(dec.E11)
    JE = np.eye(n)
    JE[:r, :r] = inv11
    JE[:r, r:] = -inv11 @ dec.E12
    JE_inv = np.eye(n)
    JE_inv[:r, :r] = dec.E11
    JE_inv[:r, r:] = dec.E12
    Eb = np.zeros((n, n))
    Eb[:r, :r], Eb[:r, r:] = dec.E11, dec.E12
    target = np.zeros((n, n))
    target[:r, :r] = np.eye(r)
    err = np.max(np.abs(Eb @ JE - target))
    if err > 1e-10 * max(1.0, np.max(np.abs(Eb))) * max(1.0, np.max(np.abs(JE))):
        raise PreconditionError(f"E11 is too ill-conditioned: |E J_E - [[I,0],[0,0]]| = {err:.3e}")
    return JETransform(JE, JE_inv)


def _snap(c: float) -> float:
    r = round(c)
    return float(r) if abs(c - r) < 1e-13 * max(1.0, abs(c)) else float(c)


def _probe_histories(n: int, tau: float, count: int = 6):
    rng = np.random.default_rng(20240611)
    out = []
    for i in range(count):
        a = rng.uniform(-1.5, 1.5, n)
        b = rng.uniform(-1.0, 1.0, n)
        w = 1.0 + i
        nodes = 9 if tau > 0 else 1
        out.append(HistorySegment.from_function(lambda th, a=a, b=b, w=w: a + b * np.sin(w * th), tau, nodes))
    return out


def check_H_aligned(impl: ImplicitRFDAE, dec: BlockDecomposition, times=None, tol: float = 1e-10):
    """Raise unless the lower n - r rows of R^T C(t) S(phi) vanish on probe histories."""
    times = np.linspace(0.0, impl.period, 8, endpoint=False) if times is None else times
    r = dec.r
    for hist in _probe_histories(impl.n, impl.tau_max):
        for t in times:
            Hv = dec.basis_rows.T @ impl.H(t, hist)
            lower = np.max(np.abs(Hv[r:]))
            if lower > tol * max(1.0, float(np.max(np.abs(Hv)))):
                raise PreconditionError(
                    f"H not aligned with E: lower component {lower:.3e} at t={t:.6g}")


def semi_explicit_from_implicit(impl: ImplicitRFDAE, dec: BlockDecomposition | None = None,
                                name: str | None = None) -> SemiExplicitRFDAE:
    """Semi-explicit image under x = K J_E (x, y), rows multiplied by R^T."""
    dec = block_decompose(impl.E) if dec is None else dec
    check_H_aligned(impl, dec)
    je = build_JE(dec)
    M = dec.basis_cols @ je.JE
    Rt = dec.basis_rows.T
    r, n = dec.r, impl.n
    name = name if name is not None else (impl.name + "_transformed" if impl.name else "transformed")
    if impl.source is not None:
        from .config import build_semi_explicit

        return build_semi_explicit(transformed_config(impl.source, dec, M, Rt, name))

    def f(p, q):
        return (Rt @ impl.F(M @ np.concatenate([p, q])))[:r]

    def g(p, q):
        return (Rt @ impl.F(M @ np.concatenate([p, q])))[r:]

    def h(t, history):
        return (Rt @ impl.H(t, _MappedHistory(history, M)))[:r]

    from .model import ProblemDims

    return SemiExplicitRFDAE(dims=ProblemDims(r, n - r), f=f, g=g, h=h, period=impl.period,
                             tau_max=impl.tau_max, delays=impl.delays, distributed=impl.distributed,
                             name=name)


class _MappedHistory:
    """A history seen through a fixed linear map."""

    def __init__(self, inner, M):
        self.inner, self.M = inner, M

    @property
    def tau(self):
        return self.inner.tau

    @property
    def spacing(self):
        return self.inner.spacing

    def eval(self, theta):
        return self.M @ self.inner.eval(theta)

    def eval_many(self, thetas):
        return self.inner.eval_many(thetas) @ self.M.T


def transformed_config(source: dict, dec: BlockDecomposition, M, Rt, name: str) -> dict:
    """Symbolic version of the change of variables, as a semi-explicit config."""
    n, r = dec.n, dec.r
    old = [f"x{i + 1}" for i in range(n)]
    new = [f"x{i + 1}" for i in range(r)] + [f"y{i + 1}" for i in range(n - r)]
    coeffs = {old[i]: [(_snap(M[i, j]), new[j]) for j in range(n) if _snap(M[i, j]) != 0.0] for i in range(n)}
    tau = float(source.get("tau_max", 0.0))
    F = [ex.linear_substitute(ex.parse(s, variables=old, tau_max=tau), coeffs) for s in source["F"]]
    S = [ex.linear_substitute(ex.parse(s, variables=old, tau_max=tau), coeffs) for s in source["S"]]
    C = [[ex.parse(str(c), variables=[], tau_max=tau) for c in row] for row in source["C"]]
    rows = []
    for i in range(n):
        rows.append(ex.linear_combination([(_snap(Rt[i, j]), F[j]) for j in range(n)]))
    # (R^T C)_ij S_j, expanded over the entries of C
    h = []
    for i in range(r):
        terms = []
        for l in range(n):
            c = _snap(Rt[i, l])
            if c == 0.0:
                continue
            for j in range(n):
                terms.append((c, ex.mul(C[l][j], S[j])))
        h.append(ex.linear_combination(terms))
    cfg = {
        "kind": "semi_explicit",
        "name": name,
        "dims": {"k": r, "s": n - r},
        "f": [ex.to_source(e) for e in rows[:r]],
        "g": [ex.to_source(e) for e in rows[r:]],
        "h": [ex.to_source(e) for e in h],
        "period": float(source["period"]),
        "tau_max": tau,
    }
    for key in ("solver", "continuation", "description"):
        if key in source:
            cfg[key] = source[key]
    if "box" in source and "transformed_box" in source.get("box", {}):
        cfg["box"] = source["box"]["transformed_box"]
    return cfg


# --------------------------------------------------------------------------
# kernel conditions
# --------------------------------------------------------------------------
def kernel_basis(A, tol: float = RANK_RTOL) -> np.ndarray:
    """Orthonormal basis (columns) of ker A."""
    A = np.asarray(A, dtype=float)
    _, s, Vt = np.linalg.svd(A)
    smax = s[0] if s.size else 0.0
    if smax == 0.0:
        return np.eye(A.shape[1])
    rank = int(np.sum(s > tol * smax))
    return Vt[rank:].T


def kernel_equal(A, B, tol: float = RANK_RTOL) -> bool:
    """ker A == ker B: same dimension and largest principal angle below 1e-8."""
    ka, kb = kernel_basis(A, tol), kernel_basis(B, tol)
    if ka.shape[1] != kb.shape[1]:
        return False
    if ka.shape[1] == 0:
        return True
    return bool(np.max(scipy.linalg.subspace_angles(ka, kb)) < ANGLE_TOL)


@dataclass
class SvdAlignment:
    P: np.ndarray
    Q: np.ndarray
    sigma: np.ndarray
    times: np.ndarray
    blocks: list = field(default_factory=list)  # P^T C(t) Q per sample
    condition_a_holds: bool = False
    condition_b_holds: bool = False
    lower_block_norm: float = 0.0
    c12_norm: float = 0.0
    min_sigma_c11: float = 0.0
    source: str = "svd"

    @property
    def r(self) -> int:
        return self.sigma.size

    @property
    def C11_blocks(self) -> list:
        return [B[: self.r, : self.r] for B in self.blocks]

    @property
    def C12_blocks(self) -> list:
        return [B[: self.r, self.r:] for B in self.blocks]

    @property
    def aligned_E(self) -> np.ndarray:
        n = self.P.shape[0]
        D = np.zeros((n, n))
        D[: self.r, : self.r] = np.diag(self.sigma)
        return D

    def to_dict(self) -> dict:
        return {
            "source": self.source,
            "r": self.r,
            "sigma": self.sigma.tolist(),
            "P": self.P.tolist(),
            "Q": self.Q.tolist(),
            "sample_count": int(self.times.size),
            "condition_a": self.condition_a_holds,
            "condition_b": self.condition_b_holds,
            "lower_block_norm": self.lower_block_norm,
            "c12_norm": self.c12_norm,
            "min_sigma_c11": self.min_sigma_c11,
            "PtCQ_first_sample": self.blocks[0].tolist() if self.blocks else None,
        }


def default_sample_times(period: float, count: int = 32) -> np.ndarray:
    return np.linspace(0.0, period, count, endpoint=False)


def _orthogonal(M, what):
    M = np.asarray(M, dtype=float)
    if np.max(np.abs(M.T @ M - np.eye(M.shape[0]))) > ORTHO_TOL:
        raise PreconditionError(f"{what} is not orthogonal")
    return M


def verify_alignment(E, C, sample_times, P, Q) -> SvdAlignment:
    """Check user-supplied orthogonal P, Q with P^T E Q = diag(sigma, 0)."""
    E = np.asarray(E, dtype=float)
    P, Q = _orthogonal(P, "P"), _orthogonal(Q, "Q")
    D = P.T @ E @ Q
    r = numerical_rank(E)
    sigma = np.diag(D)[:r].copy()
    off = D.copy()
    off[np.arange(r), np.arange(r)] = 0.0
    if np.max(np.abs(off)) > 1e-10 * max(1.0, np.max(np.abs(E))) or np.any(sigma <= 0):
        raise PreconditionError("P^T E Q is not diag(sigma, 0) with positive sigma")
    return _align(E, C, sample_times, P, Q, sigma, "user")


def svd_align(E, C, sample_times) -> SvdAlignment:
    """E = P diag(sigma) Q^T from the SVD; then inspect P^T C(t) Q."""
    E = np.asarray(E, dtype=float)
    r = numerical_rank(E)
    if r == 0:
        raise PreconditionError("rank(E) = 0")
    U, s, Vt = np.linalg.svd(E)
    return _align(E, C, sample_times, U, Vt.T, s[:r].copy(), "svd")


def _align(E, C, sample_times, P, Q, sigma, source) -> SvdAlignment:
    times = np.atleast_1d(np.asarray(sample_times, dtype=float))
    if times.size == 0:
        raise PreconditionError("need at least one sample time")
    r = sigma.size
    rank_E = numerical_rank(E)
    blocks = []
    cond_a = cond_b = True
    lower = c12 = 0.0
    min_c11 = math.inf
    for t in times:
        Ct = np.asarray(C(t), dtype=float)
        if numerical_rank(Ct) != rank_E:
            raise PreconditionError(
                f"kernel condition violated: rank mismatch, rank C({t:.6g}) = {numerical_rank(Ct)} "
                f"but rank E = {rank_E}")
        B = P.T @ Ct @ Q
        blocks.append(B)
        scale = max(1.0, float(np.max(np.abs(Ct))))
        lower = max(lower, float(np.max(np.abs(B[r:, :]), initial=0.0)) / scale)
        c12 = max(c12, float(np.max(np.abs(B[:r, r:]), initial=0.0)) / scale)
        a = kernel_equal(Ct.T, E.T)
        b = a and kernel_equal(Ct, E)
        cond_a &= a
        cond_b &= b
        min_c11 = min(min_c11, float(np.linalg.svd(B[:r, :r], compute_uv=False)[-1]) / scale)
    if cond_b and not min_c11 > 1e-10:
        raise PreconditionError("kernels agree but C11 is singular at some sample")
    return SvdAlignment(P=P, Q=Q, sigma=sigma, times=times, blocks=blocks,
                        condition_a_holds=bool(cond_a), condition_b_holds=bool(cond_b),
                        lower_block_norm=lower, c12_norm=c12, min_sigma_c11=min_c11, source=source)


def alignment_for(impl: ImplicitRFDAE, sample_times=None) -> SvdAlignment:
    """The problem's own P, Q when it carries them, the SVD otherwise."""
    times = default_sample_times(impl.period) if sample_times is None else sample_times
    if impl.alignment is not None:
        return verify_alignment(impl.E, impl.C, times, impl.alignment["P"], impl.alignment["Q"])
    return svd_align(impl.E, impl.C, times)
