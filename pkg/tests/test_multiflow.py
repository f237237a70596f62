import numpy as np
import pytest

from asdflow.bvp import solve_flow
from asdflow.convex import AbsSum, DomainError, IndicatorBox, NormSquaredScaled, Quadratic
from asdflow.lagrangians import BasicASD, SwapASD, UnsupportedCombination, verify_antiselfdual
from asdflow.multiflow import (
    CoverageError,
    FlowProblem,
    MemoryBudgetError,
    change_of_variables_check,
    compute_p0,
    contraction_violation,
    lambda_regularize,
    resolvent,
    solve_n_param,
    solve_two_param,
    verify_estimates,
)

HALF = NormSquaredScaled(1.0)


def min_oracle(axes, w):
    grids = np.meshgrid(*axes, indexing="ij")
    return w(np.minimum.reduce(grids))


def test_lambda_regularize():
    L = lambda_regularize(BasicASD(HALF), 1.0)
    assert L.value([1.0], [0.0]) == pytest.approx(0.25)
    assert verify_antiselfdual(L, 100) <= 1e-8
    with pytest.raises(UnsupportedCombination):
        lambda_regularize(SwapASD(Quadratic(np.eye(2))), 0.1)


def test_resolvent_examples():
    r = resolvent(HALF, [1.0], 1.0)
    np.testing.assert_allclose(r.point, [0.5])
    np.testing.assert_allclose(r.slope, [0.5])
    r = resolvent(AbsSum([1.0]), [0.3], 1.0)
    np.testing.assert_allclose(r.point, [0.0])
    assert r.residual == 0.0


def test_resolvent_small_lambda_consistency():
    phi = Quadratic([[2.0]])
    p0 = compute_p0(phi, [3.0])
    for lam in (1e-1, 1e-2, 1e-3):
        J = resolvent(phi, [3.0], lam).point
        assert np.linalg.norm(J - 3.0) <= lam * p0.norm + 1e-12


def test_compute_p0_examples():
    np.testing.assert_allclose(compute_p0(HALF, [1.0]).p0, [-1.0], atol=1e-6)
    c = compute_p0(AbsSum([1.0]), [0.0])
    np.testing.assert_array_equal(c.p0, [0.0])
    np.testing.assert_allclose(compute_p0(Quadratic([[2.0]]), [3.0]).p0, [-6.0], atol=1e-5)
    with pytest.raises(DomainError):
        compute_p0(IndicatorBox([0.0], [1.0]), [2.0])


def test_two_param_quadratic_oracle_faces_and_symmetry():
    surf, rep = solve_two_param(FlowProblem(HALF, [1.0], (1.0, 1.0)), (64, 64))
    exact = min_oracle(surf.axes, lambda r: np.exp(-r))
    assert np.max(np.abs(surf.values[..., 0] - exact)) <= 5e-3
    np.testing.assert_array_equal(surf.values[0], 1.0)
    np.testing.assert_array_equal(surf.values[:, 0], 1.0)
    np.testing.assert_array_equal(surf.values, surf.values.transpose(1, 0, 2))
    assert rep.converged and rep.boundary_max_deviation == 0.0


def test_lambda_levels_contract():
    _, rep = solve_two_param(FlowProblem(HALF, [1.0], (1.0, 1.0)), (32, 32))
    d = [row["distance_to_previous"] for row in rep.lambda_levels[1:]]
    assert all(b < a for a, b in zip(d, d[1:]))
    res = [row["max_inclusion_residual"] for row in rep.lambda_levels]
    assert res[-1] <= rep.threshold


def test_first_order_convergence_of_backward_euler():
    errs = []
    for M in (16, 32, 64):
        surf, _ = solve_two_param(FlowProblem(HALF, [1.0], (1.0, 1.0), scheme="backward_euler"), (M, M))
        errs.append(np.max(np.abs(surf.values[..., 0] - np.exp(-np.minimum.outer(*surf.axes)))))
    rates = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
    assert np.all(rates > 0.8)


def test_unequal_spacing_and_axis_order():
    a, _ = solve_two_param(FlowProblem(HALF, [1.0], (1.0, 2.0)), (64, 100))
    b, _ = solve_two_param(FlowProblem(HALF, [1.0], (2.0, 1.0)), (100, 64))
    np.testing.assert_array_equal(a.values, b.values.transpose(1, 0, 2))
    assert np.max(np.abs(a.values[..., 0] - np.exp(-np.minimum.outer(*a.axes)))) <= 1e-3


def test_nonsmooth_two_param_flow():
    prob = FlowProblem(AbsSum([1.0]), [0.5], (1.0, 1.0), scheme="backward_euler")
    surf, rep = solve_two_param(prob, (64, 64))
    exact = np.maximum(0.5 - np.minimum.outer(*surf.axes), 0.0)
    assert np.max(np.abs(surf.values[..., 0] - exact)) <= 1e-3
    assert rep.converged, rep.message


def test_three_param_and_one_param():
    vol, rep = solve_n_param(FlowProblem(HALF, [1.0], (1.0, 1.0, 1.0)), (16, 16, 16))
    assert np.max(np.abs(vol.values[..., 0] - min_oracle(vol.axes, lambda r: np.exp(-r)))) <= 1e-2
    for ax in range(3):
        np.testing.assert_array_equal(np.take(vol.values, 0, axis=ax), 1.0)
    line, _ = solve_n_param(FlowProblem(HALF, [1.0], (1.0,)), (256,))
    path, _ = solve_flow(HALF, [1.0], 1.0, 256)
    assert np.max(np.abs(line.values - path.values)) <= 1e-3


def test_n_param_refusals():
    with pytest.raises(MemoryBudgetError) as e:
        solve_n_param(FlowProblem(HALF, [1.0], (1.0, 1.0, 1.0, 1.0)), (200, 200, 200, 200))
    assert e.value.required > 2**31
    with pytest.raises(ValueError):
        FlowProblem(HALF, [1.0], (1.0,) * 5)
    with pytest.raises(ValueError):
        solve_n_param(FlowProblem(HALF, [1.0], (1.0, 1.0)), (16,))
    with pytest.raises(ValueError):
        FlowProblem(HALF, [1.0], (1.0, 1.0), lambda_schedule=(1e-3, 1e-2))


def test_estimates_quadratic_and_stationary():
    phi = HALF
    prob = FlowProblem(phi, [1.0], (1.0, 1.0))
    surf, _ = solve_two_param(prob, (64, 64))
    cert = compute_p0(phi, [1.0])
    est = verify_estimates(surf, cert, phi, prob.lambda_schedule)
    assert est["all_ok"]
    assert est["energy"] <= 2.0 * 1.1
    assert est["edge_sum"] <= 2.0 * cert.norm * 1.1
    zero, _ = solve_two_param(FlowProblem(phi, [0.0], (1.0, 1.0)), (16, 16))
    est0 = verify_estimates(zero, compute_p0(phi, [0.0]), phi)
    assert est0["energy"] <= 1e-12 and est0["edge_sum"] <= 1e-12 and est0["all_ok"]


def test_partial2_gaps_are_reported_for_both_signs():
    _, rep = solve_two_param(FlowProblem(HALF, [1.0], (1.0, 1.0)), (32, 32))
    assert rep.partial2_gap_minus <= 1e-6
    assert np.isfinite(rep.partial2_gap_plus)


def test_contraction_along_characteristics():
    a, _ = solve_two_param(FlowProblem(AbsSum([1.0]), [0.8], (1.0, 1.0), scheme="backward_euler"), (32, 32))
    b, _ = solve_two_param(FlowProblem(AbsSum([1.0]), [-0.3], (1.0, 1.0), scheme="backward_euler"), (32, 32))
    assert contraction_violation(a.values, b.values) <= 1e-9


def test_change_of_variables():
    path, _ = solve_flow(HALF, [1.0], 1.0, 64)
    assert change_of_variables_check(HALF, path, "sum") <= 5e-3
    surf, rep = solve_two_param(FlowProblem(HALF, [1.0], (1.0, 1.0)), (64, 64))
    ident = change_of_variables_check(HALF, surf, "wedge", C=1.0)
    assert ident == pytest.approx(rep.max_inclusion_residual, rel=1e-12)
    assert change_of_variables_check(HALF, surf, "wedge", C=0.5) <= 1e-2
    vol, _ = solve_n_param(FlowProblem(HALF, [1.0], (1.0, 1.0, 1.0)), (16, 16, 16))
    assert change_of_variables_check(HALF, vol, "average3") <= 1e-2


def test_change_of_variables_coverage_error():
    surf, _ = solve_two_param(FlowProblem(HALF, [1.0], (1.0, 1.0)), (16, 16))
    with pytest.raises(CoverageError):
        change_of_variables_check(HALF, surf, "wedge", C=2.0)
    path, _ = solve_flow(HALF, [1.0], 1.0, 16)
    with pytest.raises(CoverageError):
        change_of_variables_check(HALF, path, "sum", horizons=(3.0, 3.0))
