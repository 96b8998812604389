import numpy as np
import pytest

from daebranch.errors import IndexAssumptionError, ManifoldDriftError
from daebranch.reduction import (field, head_history, project_to_manifold, psi_eval, reduced_rhs,
                                 tangency_residual, upsilon_eval)
from helpers import semi


def test_psi_on_logistic(logistic):
    vx, vy = psi_eval(logistic, [1.0], [0.0])
    assert vx == pytest.approx([1.0])
    assert vy == pytest.approx([5.0])


def test_projection_solves_the_constraint(logistic):
    y = project_to_manifold(logistic, [1.0], [0.0])
    assert y[0] == pytest.approx(0.6823278038280193, abs=1e-12)
    lin = semi(["-x1"], ["y1 - x1"], ["0"])
    assert project_to_manifold(lin, [7.0], [0.0]) == pytest.approx([7.0])


def test_tangency_residual_detects_non_tangent_vectors(logistic):
    assert tangency_residual(logistic, [0.0], [0.0], [0.0, 1.0]) == pytest.approx(1.0)
    assert tangency_residual(logistic, [0.0], [0.0], [1.0, 0.0]) == pytest.approx(0.0)


def test_fields_are_tangent(logistic, rng):
    for _ in range(20):
        x = rng.uniform(-2, 2, 1)
        y = project_to_manifold(logistic, x, [0.0])
        hist = head_history(np.concatenate([x, y]))
        v = field(logistic, 0.7, rng.uniform(0, 6), np.concatenate([x, y]), hist)
        assert tangency_residual(logistic, x, y, v) < 1e-12
        ux, uy = upsilon_eval(logistic, 0.0, hist)
        assert tangency_residual(logistic, x, y, np.concatenate([ux, uy])) < 1e-12


def test_upsilon_lifts_the_forcing(logistic):
    z = np.array([1.0, 0.6823278038280193])
    ux, uy = upsilon_eval(logistic, 0.0, head_history(z))
    assert ux == pytest.approx([1.0])
    assert uy == pytest.approx([5.0 / (3 * z[1] ** 2 + 1)])


def test_singular_d2g_raises():
    bad = semi(["x1"], ["y1^2 - x1"], ["0"])
    with pytest.raises(IndexAssumptionError, match="index assumption violated"):
        psi_eval(bad, [0.0], [0.0])
    with pytest.raises(IndexAssumptionError):
        project_to_manifold(bad, [1.0], [0.0])


def test_reduced_rhs_checks_drift(logistic):
    with pytest.raises(ManifoldDriftError, match="drift"):
        reduced_rhs(logistic, 0.0, 0.0, head_history([1.0, 0.0]))
