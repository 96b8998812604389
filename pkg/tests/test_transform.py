import math

import numpy as np
import pytest

from daebranch.config import build_implicit
from daebranch.errors import ConfigError, PreconditionError
from daebranch.model import ImplicitRFDAE
from daebranch.problems import builtin, builtin_config
from daebranch.reduction import field, head_history, project_to_manifold
from daebranch.transform import (alignment_for, block_decompose, build_JE, kernel_equal,
                                 semi_explicit_from_implicit, transformed_config)


def implicit(E, F, C, S, tau_max=0.0):
    n = len(E)
    return build_implicit({"kind": "implicit", "name": "adhoc", "n": n, "E": E, "F": F, "C": C, "S": S,
                           "period": 2 * math.pi, "tau_max": tau_max})


def test_je_of_a_simple_matrix():
    dec = block_decompose([[2.0, 1.0], [0.0, 0.0]])
    assert dec.method == "identity"
    assert build_JE(dec).JE == pytest.approx(np.array([[0.5, -0.5], [0.0, 1.0]]))


@pytest.mark.parametrize("n", [2, 3, 4, 5, 6])
def test_je_normalises_random_singular_matrices(n, rng):
    for r in range(1, n):
        for _ in range(100 // (n - 1)):
            E = rng.normal(size=(n, r)) @ rng.normal(size=(r, n))
            dec = block_decompose(E)
            je = build_JE(dec)
            B = dec.basis_rows.T @ E @ dec.basis_cols @ je.JE
            target = np.zeros((n, n))
            target[:r, :r] = np.eye(r)
            assert B == pytest.approx(target, abs=1e-8 * np.linalg.cond(dec.E11))
            assert je.JE @ je.JE_inv == pytest.approx(np.eye(n), abs=1e-9 * np.linalg.cond(dec.E11))


@pytest.mark.parametrize("E", [np.eye(3), np.zeros((3, 3))])
def test_regular_or_zero_E_rejected(E):
    with pytest.raises(PreconditionError, match="no singular part"):
        block_decompose(E)


def test_kernel_equal():
    assert kernel_equal([[1, 0], [0, 0]], [[5, 0], [0, 0]])
    assert not kernel_equal([[1, 0], [0, 0]], [[0, 1], [0, 0]])
    assert not kernel_equal([[1, 0], [0, 0]], np.eye(2))
    assert kernel_equal(np.eye(2), 2 * np.eye(2))


def test_simplest_implicit_problem():
    impl = implicit([[1, 0], [0, 0]], ["-x1", "x2 - x1"], [["1", "0"], ["0", "0"]], ["x1", "0"])
    cfg = transformed_config(impl.source, block_decompose(impl.E), np.eye(2), np.eye(2), "t")
    assert cfg["f"] == ["-x1"] and cfg["g"] == ["y1 - x1"] and cfg["h"] == ["x1"]


def test_example52_transformed_sources():
    sp = builtin("example52_transformed")
    assert sp.source["f"] == ["x1 - x2 - y1", "-x2 + (x1 - x2 - y1)^2 + y1"]
    assert sp.source["g"] == ["y1^3 + y1 + x2"]
    assert sp.f(np.array([1.0, 0.0]), np.array([0.0]))[1] == pytest.approx(1.0)


def test_transform_preserves_dynamics(rng):
    """x = M w maps solutions of the semi-explicit problem to the implicit one."""
    impl = builtin("example52")
    dec = block_decompose(impl.E)
    M = dec.basis_cols @ build_JE(dec).JE
    sp = semi_explicit_from_implicit(impl, dec)
    for _ in range(10):
        p = rng.uniform(-1, 1, 2)
        w = np.concatenate([p, project_to_manifold(sp, p, [0.0])])
        t, lam = rng.uniform(0, 6), rng.uniform(-1, 1)
        hist = head_history(w, 1.0)
        dw = field(sp, lam, t, w, hist)
        xhist = head_history(M @ w, 1.0)
        lhs = impl.E @ (M @ dw)
        rhs = impl.F(M @ w) + lam * impl.H(t, xhist)
        assert lhs == pytest.approx(rhs, abs=1e-10)


def test_closure_route_matches_symbolic_route(rng):
    impl = builtin("example52")
    bare = ImplicitRFDAE(n=impl.n, E=impl.E, F=impl.F, C=impl.C, S=impl.S, period=impl.period,
                         tau_max=impl.tau_max, delays=impl.delays, name="bare")
    a = semi_explicit_from_implicit(impl)
    b = semi_explicit_from_implicit(bare)
    for _ in range(10):
        p, q = rng.uniform(-1, 1, 2), rng.uniform(-1, 1, 1)
        assert a.f(p, q) == pytest.approx(b.f(p, q), abs=1e-12)
        assert a.g(p, q) == pytest.approx(b.g(p, q), abs=1e-12)
        hist = head_history(np.concatenate([p, q]), 1.0)
        assert a.h(1.3, hist) == pytest.approx(b.h(1.3, hist), abs=1e-12)


def test_misaligned_forcing_rejected():
    impl = implicit([[1, 0], [0, 0]], ["-x1", "x2 - x1"], [["1", "0"], ["0", "1"]], ["x1", "x2"])
    with pytest.raises(PreconditionError, match="H not aligned"):
        semi_explicit_from_implicit(impl)


def test_example54_alignment_and_rank_chain():
    impl = builtin("example54")
    times = [0.0, math.pi / 2, math.pi, 3 * math.pi / 2]
    for t in times:
        assert np.linalg.matrix_rank(impl.C(t)) == np.linalg.matrix_rank(impl.E) == 3
    al = alignment_for(impl, times)
    assert al.sigma.tolist() == [1.0, 2.0, 1.0]
    assert al.lower_block_norm == 0.0
    assert al.condition_a_holds and al.condition_b_holds
    assert block_decompose(impl.E).method == "permutation"


def test_kernel_conditions_can_fail_separately():
    al = alignment_for(builtin("corrigendum_counterexample"))
    assert al.blocks[0] == pytest.approx(np.array([[0.0, 1.0], [0.0, 0.0]]))
    assert al.condition_a_holds and not al.condition_b_holds


def test_rank_mismatch_is_reported():
    cfg = builtin_config("example52")
    cfg["C"] = [["sin(t)", "0", "0"], ["0", "1", "0"], ["0", "0", "0"]]
    with pytest.raises(PreconditionError, match="rank mismatch"):
        alignment_for(build_implicit(cfg))


def test_state_dependent_C_rejected():
    cfg = builtin_config("example52")
    cfg["C"][0][0] = "x1"
    with pytest.raises(ConfigError):
        build_implicit(cfg)
