import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from polytraj.polycore import (
    Basis,
    DegenerateCurveError,
    PolyCurve2D,
    arc_length,
    bernstein_to_monomial_matrix,
    convert_basis,
    curvature,
    derivative_coeffs,
    derivative_operator,
    elevate_degree,
    evaluate,
    evaluate_derivative,
    max_abs_curvature,
    monomial_basis,
    monomial_to_bernstein_matrix,
    rigid_transform,
)

KAPPA = 4.0 / 3.0 * (math.sqrt(2.0) - 1.0)  # quarter-circle handle length factor


def bez(points, interval=(0.0, 1.0)):
    points = np.asarray(points, dtype=float)
    return PolyCurve2D(len(points) - 1, Basis.BERNSTEIN, points, interval)


def quarter_circle(r=20.0):
    return bez([[r, 0], [r, KAPPA * r], [KAPPA * r, r], [0, r]])


def bernstein_sum(points, u):
    d = len(points) - 1
    return sum(math.comb(d, i) * u**i * (1 - u) ** (d - i) * np.asarray(points[i], float) for i in range(d + 1))


def adaptive_simpson(f, a, b, tol=1e-12):
    def simpson(a, b, fa, fm, fb):
        return (b - a) / 6 * (fa + 4 * fm + fb)

    def rec(a, b, fa, fm, fb, whole, tol, depth):
        m = 0.5 * (a + b)
        lm, rm = 0.5 * (a + m), 0.5 * (m + b)
        flm, frm = f(lm), f(rm)
        left = simpson(a, m, fa, flm, fm)
        right = simpson(m, b, fm, frm, fb)
        if depth > 40 or abs(left + right - whole) <= 15 * tol:
            return left + right + (left + right - whole) / 15
        return rec(a, m, fa, flm, fm, left, tol / 2, depth + 1) + rec(m, b, fm, frm, fb, right, tol / 2, depth + 1)

    fa, fm, fb = f(a), f(0.5 * (a + b)), f(b)
    return rec(a, b, fa, fm, fb, simpson(a, b, fa, fm, fb), tol, 0)


random_curves = st.builds(
    lambda d, seed, basis: PolyCurve2D(
        d, basis, np.random.default_rng(seed).normal(0, 10, (d + 1, 2)), (-1.5, 2.5)
    ),
    st.integers(1, 6),
    st.integers(0, 2**32 - 1),
    st.sampled_from(list(Basis)),
)


# evaluate


def test_linear_midpoint():
    assert np.allclose(evaluate(bez([[0, 0], [1, 1]]), 0.5), [0.5, 0.5], atol=0, rtol=0)


def test_partition_of_unity():
    c = bez([[2, 3]] * 6)
    for t in np.linspace(0, 1, 11):
        assert np.allclose(evaluate(c, t), [2, 3], atol=1e-12)


def test_cubic_matches_bernstein_sum():
    pts = [[0, 0], [1, 0], [2, 1], [3, 3]]
    assert np.allclose(evaluate(bez(pts), 0.25), bernstein_sum(pts, 0.25), atol=1e-14)


def test_evaluate_shapes_and_errors():
    c = bez([[0, 0], [1, 1]])
    assert evaluate(c, 0.3).shape == (2,)
    assert evaluate(c, [0.1, 0.2, 0.3]).shape == (3, 2)
    with pytest.raises(ValueError):
        evaluate(c, float("nan"))
    with pytest.raises(ValueError):
        PolyCurve2D(1, Basis.BERNSTEIN, np.zeros((0, 2)))
    with pytest.raises(ValueError):
        PolyCurve2D(3, Basis.BERNSTEIN, np.zeros((3, 2)))
    with pytest.raises(ValueError):
        PolyCurve2D(1, Basis.BERNSTEIN, np.zeros((2, 2)), (1.0, 1.0))


def test_interval_normalization():
    pts = [[0, 0], [1, 2], [4, 1]]
    c = bez(pts, (10.0, 14.0))
    assert np.allclose(evaluate(c, 11.0), bernstein_sum(pts, 0.25), atol=1e-14)


# basis conversion


def test_linear_conversion():
    m = convert_basis(bez([[1, 2], [4, 6]]), Basis.MONOMIAL)
    assert np.allclose(m.coeffs, [[1, 2], [3, 4]])


def test_round_trip_degree5():
    rng = np.random.default_rng(5)
    c = bez(rng.normal(size=(6, 2)))
    back = convert_basis(convert_basis(c, Basis.MONOMIAL), Basis.BERNSTEIN)
    assert np.max(np.abs(back.coeffs - c.coeffs)) < 1e-9


def test_cubic_matrix_rows_match_binomial_expansion():
    # (1-u)^3 = 1 - 3u + 3u^2 - u^3 ; 3u(1-u)^2 = 3u - 6u^2 + 3u^3 ; 3u^2(1-u) = 3u^2 - 3u^3 ; u^3
    expansion = np.array([[1, -3, 3, -1], [0, 3, -6, 3], [0, 0, 3, -3], [0, 0, 0, 1]], dtype=float)
    assert np.array_equal(bernstein_to_monomial_matrix(3), expansion.T)
    assert np.allclose(monomial_to_bernstein_matrix(3) @ bernstein_to_monomial_matrix(3), np.eye(4), atol=1e-15)


@given(random_curves)
def test_conversion_preserves_evaluation(c):
    other = convert_basis(c, Basis.MONOMIAL if c.basis is Basis.BERNSTEIN else Basis.BERNSTEIN)
    t = np.linspace(*c.interval, 100)
    assert np.max(np.abs(evaluate(c, t) - evaluate(other, t))) <= 1e-9


def test_conversion_1000_random_curves():
    rng = np.random.default_rng(0)
    worst = 0.0
    for _ in range(1000):
        d = int(rng.integers(1, 7))
        c = PolyCurve2D(d, Basis.BERNSTEIN, rng.normal(0, 10, (d + 1, 2)), (0.0, rng.uniform(0.5, 8)))
        t = np.linspace(*c.interval, 100)
        worst = max(worst, np.max(np.abs(evaluate(c, t) - evaluate(convert_basis(c, Basis.MONOMIAL), t))))
    assert worst <= 1e-9


@given(random_curves)
def test_endpoint_interpolation(c):
    b = convert_basis(c, Basis.BERNSTEIN)
    assert np.array_equal(evaluate(b, b.interval[0]), b.coeffs[0])
    assert np.allclose(evaluate(b, b.interval[1]), b.coeffs[-1], atol=1e-12, rtol=0)


# derivatives


def test_power_rule_degree6():
    a = np.arange(1.0, 8.0)
    assert np.array_equal(derivative_operator(6) @ a, [2, 6, 12, 20, 30, 42, 0])


def test_second_derivative_degree2():
    d = derivative_operator(2)
    assert np.array_equal(d @ (d @ np.array([0.0, 0.0, 1.0])), [2, 0, 0])


def test_nilpotent():
    d = derivative_operator(6).matrix
    v = np.random.default_rng(1).normal(size=7)
    assert np.array_equal(np.linalg.matrix_power(d, 7) @ v, np.zeros(7))
    assert np.any(np.linalg.matrix_power(d, 6) != 0)


def test_monomial_basis_vector():
    v = monomial_basis(6, 0.5)
    assert v.values[0] == 1.0 and len(v.values) == 7
    assert v.values[3] == 0.125


@given(random_curves)
def test_derivative_matches_finite_differences(c):
    t = np.linspace(*c.interval, 22)[1:-1]
    h = 1e-6 * c.duration
    for order in (1, 2):
        lower = evaluate_derivative(c, t - h, order - 1) if order > 1 else evaluate(c, t - h)
        upper = evaluate_derivative(c, t + h, order - 1) if order > 1 else evaluate(c, t + h)
        fd = (upper - lower) / (2 * h)
        an = evaluate_derivative(c, t, order)
        scale = np.max(np.abs(an)) + np.max(np.abs(evaluate(c, t))) / c.duration**order
        assert np.max(np.abs(fd - an)) <= 1e-6 * scale


def test_derivative_chain_rule():
    c = bez([[0, 0], [5, 0]], (0.0, 2.0))
    assert np.allclose(evaluate_derivative(c, 1.0), [2.5, 0])
    assert np.allclose(derivative_coeffs(c, 1)[0], [2.5, 0])


def test_elevate_degree_keeps_curve():
    c = bez([[0, 0], [1, 3], [4, 1]])
    e = elevate_degree(c, 5)
    t = np.linspace(0, 1, 50)
    assert e.degree == 5 and np.max(np.abs(evaluate(c, t) - evaluate(e, t))) < 1e-12


# curvature


def test_straight_cubic_curvature_zero():
    c = bez([[0, 0], [10 / 3, 0], [20 / 3, 0], [10, 0]])
    assert max_abs_curvature(c) == 0.0


def test_parabola_curvature():
    # (t, t^2) on [-1, 1] as a degree-2 Bezier
    c = bez([[-1, 1], [0, -1], [1, 1]], (-1.0, 1.0))
    assert abs(max_abs_curvature(c, 1001) - 2.0) <= 1e-3
    assert abs(curvature(c, 0.0)[0] - 2.0) < 1e-12


def test_quarter_circle_curvature():
    assert abs(max_abs_curvature(quarter_circle()) - 0.05) <= 0.02 * 0.05


def test_degenerate_curvature():
    with pytest.raises(DegenerateCurveError, match="degenerate curve"):
        max_abs_curvature(bez([[1, 1]] * 4))
    with pytest.raises(ValueError):
        max_abs_curvature(quarter_circle(), samples=1)


@given(st.integers(0, 2**32 - 1), st.integers(1, 6))
def test_straight_line_curvature_property(seed, degree):
    rng = np.random.default_rng(seed)
    p, d = rng.normal(0, 20, 2), rng.normal(size=2)
    # increasing control-point spacing keeps the speed away from zero, where
    # rounding in the cross product is amplified by 1 / speed**2
    s = np.cumsum(rng.uniform(1.0, 5.0, degree + 1))
    c = bez(p + s[:, None] * d)
    k = curvature(c, np.linspace(0, 1, 101))
    assert np.nanmax(np.abs(k)) <= 1e-12


# arc length


def test_segment_length():
    assert abs(arc_length(bez([[0, 0], [1, 4 / 3], [2, 8 / 3], [3, 4]])) - 5.0) < 1e-12


def test_constant_curve_length():
    assert arc_length(bez([[3, 3]] * 6)) == 0.0


def test_quarter_circle_length():
    assert abs(arc_length(quarter_circle()) - 10 * math.pi) <= 1e-3 * 10 * math.pi


@given(random_curves)
def test_arc_length_matches_adaptive_oracle(c):
    def speed(t):
        return float(np.hypot(*evaluate_derivative(c, t)))

    ref = adaptive_simpson(speed, *c.interval)
    assert abs(arc_length(c) - ref) <= 1e-6 * ref


@given(random_curves, st.floats(-math.pi, math.pi), st.floats(-100, 100), st.floats(-100, 100))
def test_arc_length_invariances(c, angle, tx, ty):
    base = arc_length(c)
    other = convert_basis(c, Basis.MONOMIAL if c.basis is Basis.BERNSTEIN else Basis.BERNSTEIN)
    assert abs(arc_length(other) - base) <= 1e-9 * base
    assert abs(arc_length(rigid_transform(c, angle, (tx, ty))) - base) <= 1e-9 * base


def test_rigid_transform_monomial_matches_bernstein():
    c = bez([[0, 0], [1, 2], [3, 1]])
    m = convert_basis(c, Basis.MONOMIAL)
    t = np.linspace(0, 1, 7)
    a = evaluate(rigid_transform(c, 0.7, (2, -1)), t)
    b = evaluate(rigid_transform(m, 0.7, (2, -1)), t)
    assert np.max(np.abs(a - b)) < 1e-12


def test_serialization_round_trip():
    c = quarter_circle()
    d = c.to_dict()
    assert set(d) == {"degree", "basis", "interval", "coeffs"}
    back = PolyCurve2D.from_dict(d)
    assert back.degree == c.degree and back.basis is c.basis and np.array_equal(back.coeffs, c.coeffs)
