import math

import numpy as np
import pytest

from daebranch.errors import ConfigError, ManifoldDriftError, PreconditionError
from daebranch.model import HistorySegment
from daebranch.problems import builtin_config
from daebranch.reduction import project_to_manifold
from daebranch.solver import SolverConfig, convergence_order, integrate
from helpers import semi

X_STAR = math.sqrt((1 + math.sqrt(5)) / 2)


def delayed():
    # x' = -x(t - 1) on the manifold y = x
    return semi(["0"], ["y1 - x1"], ["-x1[-1]"], tau_max=1.0)


def cos_history(nodes=33):
    return HistorySegment.from_function(lambda th: [math.cos(th)] * 2, 1.0, nodes, "cubic-hermite")


def test_linear_decay_matches_exponential(linear):
    traj = integrate(linear, 0.0, HistorySegment.constant([1.0, 1.0]), (0.0, 1.0))
    assert traj.head == pytest.approx([math.exp(-1)] * 2, abs=1e-10)
    assert traj.ts[0] == 0.0 and traj.ts[-1] == 1.0


def test_method_of_steps_first_interval():
    traj = integrate(delayed(), 1.0, cos_history(257), (0.0, 1.0), SolverConfig(step=0.01))
    exact = 1.0 - (math.sin(0.0) + math.sin(1.0))
    assert traj.head[0] == pytest.approx(exact, abs=1e-9)


@pytest.mark.parametrize("nodes", [33, 257])
def test_delay_convergence_order(nodes):
    order = convergence_order(delayed(), 1.0, cos_history(nodes), (0.0, 2.0), [0.1, 0.05, 0.025, 0.0125])
    assert 3.0 <= order <= 4.3


def test_equilibrium_is_invariant(logistic):
    cfg = SolverConfig.from_dict(builtin_config("logistic")["solver"])
    start = HistorySegment.constant([X_STAR, X_STAR])
    traj = integrate(logistic, 0.0, start, (0.0, 10 * logistic.period), cfg)
    assert np.max(np.abs(traj.zs - X_STAR)) < 1e-10


def test_runs_are_deterministic(logistic):
    hist = HistorySegment.constant([0.1, project_to_manifold(logistic, [0.1], [0.0])[0]])
    a = integrate(logistic, 0.3, hist, (0.0, 5.0))
    b = integrate(logistic, 0.3, hist, (0.0, 5.0))
    assert np.array_equal(a.zs, b.zs) and np.array_equal(a.ts, b.ts)


def test_step_longer_than_delay_is_rejected():
    p = semi(["0"], ["y1 - x1"], ["-x1[-0.01]"], tau_max=0.01)
    hist = HistorySegment.constant([1.0, 1.0], 0.01, 3)
    with pytest.raises(ConfigError, match="exceeds the smallest delay"):
        integrate(p, 1.0, hist, (0.0, 1.0), SolverConfig(step=0.02))


def test_off_manifold_start_is_rejected(linear):
    with pytest.raises(ManifoldDriftError, match="off the manifold"):
        integrate(linear, 0.0, HistorySegment.constant([1.0, 0.0]), (0.0, 1.0))


def test_order_needs_three_steps(linear):
    with pytest.raises(PreconditionError, match="at least 3"):
        convergence_order(linear, 0.0, HistorySegment.constant([1.0, 1.0]), (0.0, 1.0), [0.1, 0.05])


def test_amplitude_and_mean_use_the_dense_output(linear):
    # periodic orbit (cos t + sin t)/2 on both components
    start = HistorySegment.constant([0.5, 0.5])
    traj = integrate(linear, 1.0, start, (0.0, 2 * math.pi), SolverConfig(step=2 * math.pi / 12))
    nodal = float(np.max(np.abs(traj.zs - traj.mean())))
    assert nodal < 0.69
    assert traj.amplitude() == pytest.approx(math.sqrt(2) / 2, abs=1e-3)
    fine = integrate(linear, 1.0, start, (0.0, 2 * math.pi), SolverConfig(step=0.001))
    assert fine.mean() == pytest.approx([0.0, 0.0], abs=1e-9)


def test_csv_header(linear):
    text = integrate(linear, 0.0, HistorySegment.constant([1.0, 1.0]), (0.0, 0.05)).to_csv()
    lines = text.splitlines()
    assert lines[0] == "t,x1,y1,g_norm"
    assert len(lines) == 7


def test_config_validation():
    assert SolverConfig.from_dict({"step": 0.02}).step == 0.02
    with pytest.raises(ConfigError):
        SolverConfig.from_dict({"step": -1})
