import numpy as np
import pytest

from daebranch.errors import DaeBranchError, PreconditionError
from daebranch.model import HistorySegment, ProblemDims, jacobian_fd, uniform_grid


def test_linear_interpolation_and_constant_extension():
    seg = HistorySegment([-2.0, -1.0, 0.0], [[1.0], [3.0], [2.0]])
    assert seg.eval(-0.5) == pytest.approx([2.5])
    assert seg.eval(-7.0) == pytest.approx([1.0])
    assert seg.tau == 2.0 and seg.dims == 1
    with pytest.raises(DaeBranchError, match="future"):
        seg.eval(0.1)


def test_eval_many_matches_eval():
    seg = HistorySegment.from_function(lambda th: [np.sin(th), th ** 2], 1.0, 9, "cubic-hermite")
    thetas = np.linspace(-1.5, 0, 17)
    many = seg.eval_many(thetas)
    for th, row in zip(thetas, many):
        assert row == pytest.approx(seg.eval(th), abs=1e-14)


def test_cubic_interpolation_is_fourth_order():
    errs = []
    for m in (9, 17, 33):
        seg = HistorySegment.from_function(lambda th: [np.exp(th)], 1.0, m, "cubic-hermite")
        th = np.linspace(-1, 0, 401)
        errs.append(np.max(np.abs(seg.eval_many(th)[:, 0] - np.exp(th))))
    rates = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
    assert np.all(rates > 3.5)


def test_segment_is_immutable():
    seg = HistorySegment.constant([1.0, 2.0], 1.0, 5)
    with pytest.raises(AttributeError):
        seg.values = None
    with pytest.raises(ValueError):
        seg.values[0, 0] = 5.0


@pytest.mark.parametrize("thetas, values", [
    ([-1.0, -1.0, 0.0], [[0], [0], [0]]),
    ([-1.0, -0.5], [[0], [0]]),
    ([-1.0, 0.0], [[0], [np.nan]]),
    ([-1.0, 0.0], [[0]]),
])
def test_bad_segments_rejected(thetas, values):
    with pytest.raises(PreconditionError):
        HistorySegment(thetas, values)


def test_shift_append_moves_nodes_and_keeps_horizon():
    seg = HistorySegment([-1.0, -0.5, 0.0], [[0.0], [1.0], [2.0]])
    out = seg.shift_append(0.5, [(-0.25, 2.5), (0.0, 3.0)])
    assert out.tau == pytest.approx(1.0)
    assert out.thetas.tolist() == pytest.approx([-1.0, -0.5, -0.25, 0.0])
    assert out.values[:, 0].tolist() == pytest.approx([1.0, 2.0, 2.5, 3.0])
    # the source segment is untouched
    assert seg.head == pytest.approx([2.0])


def test_shift_append_rejects_gaps_and_open_tails():
    seg = HistorySegment([-1.0, -0.5, 0.0], [[0.0], [1.0], [2.0]])
    with pytest.raises(DaeBranchError, match="discontinuous"):
        seg.shift_append(0.25, [(-0.1, 1.0)])
    with pytest.raises(DaeBranchError, match="discontinuous"):
        seg.shift_append(0.25, [])
    with pytest.raises(PreconditionError):
        seg.shift_append(2.0, [(0.0, 1.0)])


def test_tau_zero_is_a_single_node():
    assert uniform_grid(0.0).tolist() == [0.0]
    seg = HistorySegment.constant([1.0, 2.0])
    assert seg.eval(-3.0) == pytest.approx([1.0, 2.0])


def test_jacobian_fd_is_accurate():
    def fun(x):
        return [x[0] ** 2 * x[1], np.sin(x[1]) + x[0]]

    x = np.array([1.3, -0.4])
    exact = np.array([[2 * x[0] * x[1], x[0] ** 2], [1.0, np.cos(x[1])]])
    assert jacobian_fd(fun, x) == pytest.approx(exact, abs=1e-9)


def test_jacobian_fd_reports_non_finite_values():
    with pytest.raises(DaeBranchError, match="non-finite"):
        jacobian_fd(lambda x: [1.0 / x[0] if x[0] > 0 else np.inf], [0.0])


def test_dims_validated():
    assert ProblemDims(2, 1).n == 3
    with pytest.raises(PreconditionError):
        ProblemDims(0, 1)
