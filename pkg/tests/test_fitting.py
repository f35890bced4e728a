import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import arc_points, lane_control_points
from polytraj.fitting import (
    FitResult,
    ObservedTrack,
    Polyline,
    fit_history_wls,
    fit_polyline_fixed,
    fit_polyline_tls,
    split_until_fit,
)
from polytraj.polycore import Basis, PolyCurve2D, arc_length, bernstein_matrix, evaluate, max_abs_curvature


def sample_cubic(ctrl, n=20):
    return bernstein_matrix(3, np.linspace(0, 1, n)) @ ctrl


def dense_distance(curve, points, n=20001):
    """Brute-force point-to-curve distance by dense sampling (refined locally)."""
    u = np.linspace(0, 1, n)
    dense = evaluate(curve, u)
    out = []
    for p in points:
        d = np.linalg.norm(dense - p, axis=1)
        k = int(d.argmin())
        lo, hi = u[max(k - 1, 0)], u[min(k + 1, n - 1)]
        fine = np.linspace(lo, hi, 2001)
        out.append(np.linalg.norm(evaluate(curve, fine) - p, axis=1).min())
    return np.array(out)


# Polyline / track ingestion


def test_polyline_drops_consecutive_duplicates():
    pl = Polyline([[0, 0], [0, 0], [1, 0], [1, 0], [2, 0]])
    assert len(pl) == 3
    with pytest.raises(ValueError):
        Polyline([[1, 1], [1, 1]])


def test_track_requires_increasing_time():
    with pytest.raises(ValueError):
        ObservedTrack([0.0, 0.0, 0.1], np.zeros((3, 2)), np.ones(3, bool))


# TLS


def test_exact_cubic_recovered():
    rng = np.random.default_rng(11)
    for _ in range(5):
        ctrl = lane_control_points(rng)
        fit = fit_polyline_tls(sample_cubic(ctrl))
        assert np.sqrt(np.mean((fit.curve.coeffs - ctrl) ** 2)) <= 1e-6
        assert fit.max_error < 1e-7


def test_collinear_points():
    pts = np.column_stack([np.arange(10.0), np.zeros(10)])
    fit = fit_polyline_tls(pts)
    assert fit.max_error <= 1e-12
    assert np.allclose(fit.curve.coeffs[:, 1], 0.0, atol=1e-12)
    assert max_abs_curvature(fit.curve) <= 1e-12


def test_noisy_arc_beats_fixed_parameters():
    rng = np.random.default_rng(2)
    a = np.linspace(0, math.radians(30), 50)
    pts = 100 * np.column_stack([np.cos(a), np.sin(a)]) + rng.normal(0, 0.01, (50, 2))
    tls = fit_polyline_tls(pts)
    fixed = fit_polyline_fixed(pts)
    assert tls.max_error < 0.05
    assert tls.rms_error <= fixed.rms_error


def test_fit_errors_are_point_to_curve_distances():
    rng = np.random.default_rng(3)
    pts = sample_cubic(lane_control_points(rng), 30) + rng.normal(0, 0.05, (30, 2))
    fit = fit_polyline_tls(pts)
    d = dense_distance(fit.curve, pts)
    # interior foot points are true projections; ends are pinned to u=0 and u=1
    assert abs(d[1:-1].max() - np.max(np.linalg.norm(evaluate(fit.curve, fit.params) - pts, axis=1)[1:-1])) < 1e-6
    assert fit.max_error >= fit.rms_error >= 0


def test_rank_deficient_input_is_flagged():
    fit = fit_polyline_tls(np.array([[0.0, 0.0], [1.0, 1.0]]))
    assert "reduced_degree" in fit.flags and fit.curve.degree == 3
    assert fit.max_error <= 1e-12


def test_monotone_error_in_debug_mode():
    rng = np.random.default_rng(4)
    for _ in range(10):
        pts = sample_cubic(lane_control_points(rng, (0.0, 0.8)), 25) + rng.normal(0, 0.02, (25, 2))
        fit_polyline_tls(pts, debug=True)


@given(st.integers(0, 2**32 - 1), st.floats(-math.pi, math.pi), st.floats(-100, 100), st.floats(-100, 100))
def test_tls_rigid_equivariance(seed, angle, tx, ty):
    rng = np.random.default_rng(seed)
    pts = sample_cubic(lane_control_points(rng))
    c, s = math.cos(angle), math.sin(angle)
    rot = np.array([[c, -s], [s, c]])
    moved = fit_polyline_tls(pts @ rot.T + (tx, ty))
    base = fit_polyline_tls(pts)
    assert np.max(np.abs(moved.curve.coeffs - (base.curve.coeffs @ rot.T + (tx, ty)))) <= 1e-6


# split-until-fit


def oracle_segments(points, threshold=0.1):
    """Same bisection rule, with fit errors from dense brute-force distances."""
    count = 0

    def rec(lo, hi):
        nonlocal count
        seg = points[lo : hi + 1]
        fit = fit_polyline_tls(seg)
        if dense_distance(fit.curve, seg).max() < threshold:
            count += 1
            return
        mid = (lo + hi) // 2
        rec(lo, mid)
        rec(mid, hi)

    rec(0, len(points) - 1)
    return count


def test_straight_lane_single_segment():
    pts = np.column_stack([np.linspace(0, 200, 201), np.zeros(201)])
    segs = split_until_fit(pts)
    assert len(segs) == 1 and segs[0].max_error < 0.1


def test_semicircle_matches_oracle():
    pts = arc_points(50.0, 0.0, math.pi)
    segs = split_until_fit(pts, 3, 0.1)
    assert all(f.max_error < 0.1 for f in segs)
    assert len(segs) == oracle_segments(pts)


def test_s_curve():
    a = arc_points(30.0, -math.pi / 2, math.pi / 2, center=(0.0, 30.0))
    end = a[-1]
    b = arc_points(30.0, math.pi, -math.pi / 2, center=(end[0] + 30.0, end[1]))
    pts = np.vstack([a, b[1:]])
    segs = split_until_fit(pts)
    assert all(f.max_error < 0.1 for f in segs) and len(segs) > 1
    chord = float(np.sum(np.linalg.norm(np.diff(pts, axis=0), axis=1)))
    total = sum(arc_length(f.curve) for f in segs)
    assert abs(total - chord) <= 0.005 * chord


def test_segments_share_boundaries():
    pts = arc_points(20.0, 0.0, 1.5 * math.pi)
    segs = split_until_fit(pts)
    for a, b in zip(segs[:-1], segs[1:]):
        assert np.allclose(a.curve.coeffs[-1], b.curve.coeffs[0], atol=0.2)


def test_irreducible_flag():
    # six zigzag points: halves would have fewer than degree + 1 points
    pts = np.column_stack([np.arange(6.0), [0, 1, -1, 1, -1, 0]])
    segs = split_until_fit(pts, 3, 0.01)
    assert any("irreducible" in f.flags for f in segs)
    for f in segs:
        assert f.max_error < 0.01 or "irreducible" in f.flags


def test_split_threshold_must_be_positive():
    with pytest.raises(ValueError):
        split_until_fit(np.array([[0.0, 0.0], [1.0, 0.0]]), 3, 0.0)


@given(st.integers(0, 2**32 - 1), st.floats(0.02, 0.5))
def test_split_property(seed, threshold):
    rng = np.random.default_rng(seed)
    pts = arc_points(rng.uniform(10, 80), rng.uniform(-3, 3), rng.uniform(0.5, 3.0)) + rng.normal(0, 0.005, (1, 2))
    for f in split_until_fit(pts, 3, threshold):
        assert f.max_error < threshold or "irreducible" in f.flags


# history WLS


def track(t, xy, std=0.15, valid=None):
    return ObservedTrack(t, xy, np.ones(len(t), bool) if valid is None else valid, std)


def test_constant_velocity_history():
    t = np.round(np.arange(-49, 1) * 0.1, 10)
    xy = np.column_stack([3 + 10 * t, -2 + 4 * t])
    fit = fit_history_wls(track(t, xy))
    assert fit.max_error <= 1e-9
    d = np.diff(fit.curve.coeffs, axis=0)
    assert np.max(np.abs(d - d[0])) <= 1e-9


def test_degree5_history_exact():
    rng = np.random.default_rng(8)
    truth = PolyCurve2D(5, Basis.BERNSTEIN, rng.normal(0, 10, (6, 2)), (-5.0, 0.0))
    t = np.round(np.arange(-50, 1) * 0.1, 10)
    fit = fit_history_wls(track(t, evaluate(truth, t)))
    assert np.max(np.abs(fit.curve.coeffs - truth.coeffs)) <= 1e-8


def test_noisy_history_matches_normal_equations():
    rng = np.random.default_rng(9)
    t = np.round(np.arange(-50, 1) * 0.1, 10)
    xy = np.column_stack([2 * t + 0.3 * t**2, -t + 0.1 * t**2]) + rng.normal(0, 0.2, (51, 2))
    valid = rng.random(51) > 0.2
    valid[-1] = True
    std = rng.uniform(0.1, 0.3, 51)
    fit = fit_history_wls(ObservedTrack(t, xy, valid, std))
    # independently coded normal equations with explicit Bernstein sums
    tv, pv, wv = t[valid], xy[valid], 1.0 / std[valid] ** 2
    u = (tv - tv[0]) / (tv[-1] - tv[0])
    basis = np.array([[math.comb(5, i) * x**i * (1 - x) ** (5 - i) for i in range(6)] for x in u])
    lhs = sum(w * np.outer(b, b) for w, b in zip(wv, basis))
    rhs = sum(w * np.outer(b, p) for w, b, p in zip(wv, basis, pv))
    ctrl = np.linalg.solve(lhs, rhs)
    assert np.max(np.abs(fit.curve.coeffs - ctrl)) <= 1e-9
    assert fit.curve.interval == (float(tv[0]), float(tv[-1]))


@given(st.integers(0, 2**32 - 1), st.floats(0.05, 1.0))
def test_uniform_weights_equal_unweighted(seed, std):
    rng = np.random.default_rng(seed)
    t = np.round(np.arange(-50, 1) * 0.1, 10)
    xy = rng.normal(0, 5, (51, 2))
    fit = fit_history_wls(track(t, xy, std))
    u = (t - t[0]) / (t[-1] - t[0])
    ctrl, *_ = np.linalg.lstsq(bernstein_matrix(5, u), xy, rcond=None)
    assert np.array_equal(fit.curve.coeffs, ctrl)


def test_short_history_reduces_degree():
    t = np.array([-0.2, -0.1, 0.0])
    fit = fit_history_wls(track(t, np.array([[0.0, 0], [1, 0], [2, 0.5]])))
    assert fit.curve.degree == 2 and "reduced_degree" in fit.flags
    assert isinstance(fit, FitResult)
