import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from asdflow.convex import (
    AbsSum,
    ConvexError,
    DimensionError,
    DomainError,
    IndicatorBox,
    LinearMap,
    LinearTilt,
    MoreauEnvelope,
    NormSquaredScaled,
    NumericalError,
    Quadratic,
    SchemaError,
    SeparableSum,
    SumWithQuadratic,
    conj_eval,
    evaluate,
    fenchel_gap,
    function_from_dict,
    moreau_eval,
    prox,
    split_operator,
    subgrad,
)

HALF = NormSquaredScaled(1.0)


def test_evaluate_examples():
    assert evaluate(HALF, [3.0, 4.0]) == pytest.approx(12.5)
    assert evaluate(IndicatorBox([0.0], [1.0]), [2.0]) == math.inf
    assert evaluate(AbsSum([1.0, 1.0]), [1.0, -2.0]) == pytest.approx(3.0)


def test_evaluate_rejects_nan_and_dimension():
    with pytest.raises(NumericalError):
        evaluate(HALF, [math.nan])
    with pytest.raises(DimensionError):
        evaluate(Quadratic(np.eye(2)), [1.0])


def test_prox_examples():
    np.testing.assert_allclose(prox(HALF, [1.0, 1.0], 1.0), [0.5, 0.5])
    np.testing.assert_allclose(prox(AbsSum([1.0]), [2.5], 1.0), [1.5])
    np.testing.assert_allclose(prox(IndicatorBox([0.0], [1.0]), [3.0], 0.7), [1.0])
    with pytest.raises(DomainError):
        prox(HALF, [1.0], 0.0)


def test_conj_examples():
    assert conj_eval(HALF, [1.0, 2.0]) == pytest.approx(2.5)
    assert conj_eval(IndicatorBox([-1.0], [1.0]), [1.0]) == pytest.approx(1.0)
    assert conj_eval(AbsSum([1.0]), [0.5]) == 0.0
    assert conj_eval(AbsSum([1.0]), [2.0]) == math.inf


def test_subgrad_examples():
    np.testing.assert_allclose(subgrad(HALF, [1.0, -2.0]), [1.0, -2.0], atol=1e-6)
    np.testing.assert_allclose(subgrad(AbsSum([1.0]), [0.0]), [0.0], atol=1e-9)
    np.testing.assert_allclose(subgrad(Quadratic([[2.0, 0], [0, 1.0]], [1.0, 0.0]), [1.0, 1.0]), [3.0, 1.0], atol=1e-6)
    with pytest.raises(DomainError):
        subgrad(IndicatorBox([0.0], [1.0]), [2.0])


def test_moreau_examples():
    assert moreau_eval(HALF, [1.0], 1.0) == pytest.approx(0.25)
    assert moreau_eval(AbsSum([1.0]), [1.0], 1.0) == pytest.approx(0.5)
    assert moreau_eval(AbsSum([1.0]), [0.3], 1.0) == pytest.approx(0.045)


def test_fenchel_gap_examples():
    assert fenchel_gap(HALF, [1.0], [1.0]) == 0.0
    assert fenchel_gap(HALF, [1.0], [0.0]) == pytest.approx(0.5)
    assert fenchel_gap(AbsSum([1.0]), [0.0], [0.4]) == 0.0
    with pytest.raises(DomainError):
        fenchel_gap(IndicatorBox([0.0], [1.0]), [2.0], [0.0])


def test_split_operator_reconstructs_exactly():
    A = LinearMap([[1.0, 2.0], [0.0, 3.0]])
    s, a = split_operator(A)
    np.testing.assert_array_equal(s.matrix + a.matrix, A.matrix)
    assert a.is_skew() and np.allclose(s.matrix, s.matrix.T)


def test_linear_map_validation():
    with pytest.raises(DimensionError):
        LinearMap([[1.0, 2.0]])
    with pytest.raises(NumericalError):
        LinearMap([[math.inf]])
    assert LinearMap([[1.0, 5.0], [-5.0, 1.0]]).is_positive()
    assert not LinearMap([[-1.0]]).is_positive()


def test_quadratic_singular_conjugate():
    q = Quadratic([[1.0, 0.0], [0.0, 0.0]])
    assert conj_eval(q, [2.0, 0.0]) == pytest.approx(2.0)
    assert conj_eval(q, [0.0, 1.0]) == math.inf


def test_sum_with_quadratic_conjugate_is_certified():
    f = SumWithQuadratic(AbsSum([1.0, 1.0]), [[2.0, 0.0], [1.0, 1.0]])
    val, gap = conj_eval(f, [3.0, 0.5], return_gap=True)
    assert val == pytest.approx(1.0, abs=1e-6)
    assert gap <= 1e-8


def test_function_from_dict_round_trip_and_errors():
    tree = {"kind": "separable", "blocks": [
        {"f": {"kind": "abs_sum", "weights": [2.0]}, "start": 0, "stop": 1},
        {"f": {"kind": "box", "lo": [None], "hi": [1.0]}, "start": 1, "stop": 2},
    ]}
    f = function_from_dict(tree)
    assert evaluate(f, [-1.0, -5.0]) == pytest.approx(2.0)
    g = function_from_dict(f.to_dict())
    assert evaluate(g, [-1.0, -5.0]) == pytest.approx(2.0)
    with pytest.raises(SchemaError) as e:
        function_from_dict({"kind": "quadratic", "Q": [[1.0]], "bogus": 1}, "phi")
    assert "phi" in str(e.value)
    with pytest.raises(SchemaError):
        function_from_dict({"kind": "nope"})


# ---------------------------------------------------------------------------
# properties

CATALOG = [
    HALF,
    NormSquaredScaled(2.5),
    AbsSum([1.0, 0.5]),
    IndicatorBox([-1.0, -0.5], [1.0, 2.0]),
    Quadratic([[2.0, 0.3], [0.3, 1.0]], [0.5, -1.0], 0.2),
    LinearTilt(AbsSum([1.0, 1.0]), [0.2, -0.1]),
    MoreauEnvelope(AbsSum([1.0, 1.0]), 0.3),
    SeparableSum([(AbsSum([1.0]), (0, 1)), (HALF, (1, 2))]),
]

vec2 = st.lists(st.floats(-5, 5, allow_nan=False), min_size=2, max_size=2).map(np.array)
lam_st = st.floats(1e-2, 10.0)


@settings(max_examples=60, deadline=None)
@given(x=vec2, p=vec2, k=st.integers(0, len(CATALOG) - 1))
def test_fenchel_young_inequality(x, p, k):
    f = CATALOG[k]
    fx = evaluate(f, x)
    fp = conj_eval(f, p)
    if math.isfinite(fx) and math.isfinite(fp):
        assert fx + fp >= float(x @ p) - 1e-9


@settings(max_examples=60, deadline=None)
@given(x=vec2, y=vec2, lam=lam_st, k=st.integers(0, len(CATALOG) - 1))
def test_prox_is_firmly_nonexpansive(x, y, lam, k):
    f = CATALOG[k]
    px, py = prox(f, x, lam), prox(f, y, lam)
    assert np.linalg.norm(px - py) <= np.linalg.norm(x - y) + 1e-9
    assert float((px - py) @ (x - y)) >= float((px - py) @ (px - py)) - 1e-9


@settings(max_examples=60, deadline=None)
@given(x=vec2, lam=lam_st, k=st.integers(0, len(CATALOG) - 1))
def test_prox_optimality_via_fenchel_gap(x, lam, k):
    f = CATALOG[k]
    J = prox(f, x, lam)
    assert fenchel_gap(f, J, (x - J) / lam) <= 1e-7 * (1 + np.abs(x).max())


@settings(max_examples=40, deadline=None)
@given(x=vec2, k=st.integers(0, len(CATALOG) - 1))
def test_envelope_is_monotone_in_lambda(x, k):
    f = CATALOG[k]
    vals = [moreau_eval(f, x, lam) for lam in (0.1, 0.5, 2.0)]
    assert vals[0] >= vals[1] - 1e-12 >= vals[2] - 2e-12


@settings(max_examples=40, deadline=None)
@given(x=vec2)
def test_subgrad_matches_finite_difference_for_smooth_nodes(x):
    f = Quadratic([[2.0, 0.3], [0.3, 1.0]], [0.5, -1.0], 0.2)
    g = subgrad(f, x)
    eps = 1e-6
    fd = [(evaluate(f, x + eps * e) - evaluate(f, x - eps * e)) / (2 * eps) for e in np.eye(2)]
    np.testing.assert_allclose(g, fd, atol=1e-5)


def test_batched_kernels_agree_with_scalar_calls():
    rng = np.random.default_rng(0)
    X = rng.standard_normal((7, 2))
    for f in CATALOG:
        batched = f._value(X)
        single = [evaluate(f, x) for x in X]
        np.testing.assert_allclose(batched, single)


def test_convex_error_hierarchy():
    assert issubclass(DomainError, ConvexError) and issubclass(DomainError, ValueError)
