"""Curve fitting for map polylines and agent histories."""
from __future__ import annotations

import enum
import logging
from dataclasses import dataclass, field

import numpy as np

from .polycore import Basis, PolyCurve2D, bernstein_matrix, elevate_degree

log = logging.getLogger(__name__)

MAP_DEGREE = 3
HISTORY_DEGREE = 5
SPLIT_THRESHOLD = 0.1

TLS_MAX_ITER = 50
TLS_TOL = 1e-8
TLS_REL_DECREASE = 1e-6  # an outer iteration gaining less than this (relative) ends the run
NEWTON_STEPS = 10
VARPRO_STEPS = 10
VARPRO_MAX_POINTS = 64  # longer inputs use the alternating iteration only (dense O(n^3) steps)

# per-class observation noise std in meters (configuration, not measured)
DEFAULT_NOISE_STD = {"vehicle": 0.15, "pedestrian": 0.10, "cyclist": 0.12, "ego": 0.15}


class Semantic(str, enum.Enum):
    LANE_CENTER = "lane_center"
    CROSSWALK = "crosswalk"
    OTHER = "other"


@dataclass(frozen=True)
class Polyline:
    points: np.ndarray
    semantic: Semantic = Semantic.LANE_CENTER

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float).reshape(-1, 2)
        keep = np.ones(len(pts), dtype=bool)
        keep[1:] = np.any(np.diff(pts, axis=0) != 0.0, axis=1)
        pts = pts[keep]
        if len(pts) < 2:
            raise ValueError("polyline needs at least 2 distinct points")
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "semantic", Semantic(self.semantic))

    def __len__(self):
        return len(self.points)

    def chord_length(self) -> float:
        return float(np.sum(np.linalg.norm(np.diff(self.points, axis=0), axis=1)))


@dataclass(frozen=True)
class ObservedTrack:
    """Timestamped 2D observations. ``valid`` marks usable samples."""

    t: np.ndarray
    xy: np.ndarray
    valid: np.ndarray
    noise_std: float | np.ndarray = 0.15

    def __post_init__(self):
        t = np.asarray(self.t, dtype=float)
        xy = np.asarray(self.xy, dtype=float).reshape(-1, 2)
        valid = np.asarray(self.valid, dtype=bool)
        if not (len(t) == len(xy) == len(valid)):
            raise ValueError("t, xy and valid must have equal length")
        if np.any(np.diff(t) <= 0):
            raise ValueError("timestamps must be strictly increasing")
        object.__setattr__(self, "t", t)
        object.__setattr__(self, "xy", xy)
        object.__setattr__(self, "valid", valid)


@dataclass(frozen=True)
class FitResult:
    curve: PolyCurve2D
    max_error: float
    rms_error: float
    flags: tuple[str, ...] = field(default=())
    params: np.ndarray | None = field(default=None, repr=False, compare=False)


def chord_parameters(points: np.ndarray, power: float = 1.0) -> np.ndarray:
    """Cumulative chord length to ``power`` (0.5: centripetal), scaled to [0, 1]."""
    seg = np.linalg.norm(np.diff(points, axis=0), axis=1) ** power
    s = np.concatenate([[0.0], np.cumsum(seg)])
    return s / s[-1]


def _solve_control_points(points, u, degree):
    """Least-squares Bernstein control points; lowers the degree when rank-deficient.

    Returns (control points at ``degree``, effective degree).
    """
    for d in range(degree, 0, -1):
        b = bernstein_matrix(d, u)
        if np.linalg.matrix_rank(b) < d + 1:
            continue
        ctrl, *_ = np.linalg.lstsq(b, points, rcond=None)
        if d < degree:
            ctrl = elevate_degree(PolyCurve2D(d, Basis.BERNSTEIN, ctrl), degree).coeffs
        return ctrl, d
    raise ValueError("cannot fit a curve through a single distinct parameter")


def _derivative_points(ctrl: np.ndarray) -> np.ndarray:
    return (len(ctrl) - 1) * np.diff(ctrl, axis=0)


def _bezier(ctrl: np.ndarray, u: np.ndarray) -> np.ndarray:
    if len(ctrl) == 0:
        return np.zeros((len(u), 2))
    return bernstein_matrix(len(ctrl) - 1, u) @ ctrl


def project_points(ctrl: np.ndarray, points: np.ndarray, u: np.ndarray, fixed_ends: bool = True) -> np.ndarray:
    """Newton foot-point projection of ``points`` onto the Bezier curve ``ctrl``.

    Starts from ``u``; each parameter is only replaced when the new foot point
    is at least as close. A bisection on the projection condition backs up
    Newton steps that leave [0, 1] or fail to converge.
    """
    d1 = _derivative_points(ctrl)
    d2 = _derivative_points(d1) if len(d1) > 1 else np.zeros((0, 2))

    def g(v):
        # derivative of 0.5 |C(v) - p|^2
        return np.sum((_bezier(ctrl, v) - points) * _bezier(d1, v), axis=1)

    v = u.copy()
    converged = np.zeros(len(u), dtype=bool)
    for _ in range(NEWTON_STEPS):
        r = _bezier(ctrl, v) - points
        c1 = _bezier(d1, v)
        c2 = _bezier(d2, v)
        num = np.sum(r * c1, axis=1)
        den = np.sum(c1 * c1, axis=1) + np.sum(r * c2, axis=1)
        with np.errstate(divide="ignore", invalid="ignore"):
            step = np.where(den > 0, num / den, 0.0)
        step[converged] = 0.0
        v_new = v - step
        out = (v_new < 0.0) | (v_new > 1.0) | ~np.isfinite(v_new)
        v = np.where(out, np.clip(v_new, 0.0, 1.0), v_new)
        v = np.nan_to_num(v, nan=0.5)
        converged |= np.abs(step) < 1e-14
        if converged.all():
            break

    # bisection fallback where the projection condition still fails
    gv = g(v)
    bad = ~converged & (np.abs(gv) > 1e-10)
    if bad.any():
        lo = np.where(gv[bad] > 0, np.maximum(v[bad] - 0.5 / max(len(u), 2), 0.0), v[bad])
        hi = np.where(gv[bad] > 0, v[bad], np.minimum(v[bad] + 0.5 / max(len(u), 2), 1.0))
        pb = points[bad]
        for _ in range(60):
            mid = 0.5 * (lo + hi)
            gm = np.sum((_bezier(ctrl, mid) - pb) * _bezier(d1, mid), axis=1)
            lo = np.where(gm < 0, mid, lo)
            hi = np.where(gm < 0, hi, mid)
        v[bad] = 0.5 * (lo + hi)

    if fixed_ends:
        v[0], v[-1] = 0.0, 1.0
    old = np.linalg.norm(_bezier(ctrl, u) - points, axis=1)
    new = np.linalg.norm(_bezier(ctrl, v) - points, axis=1)
    return np.where(new <= old, v, u)


def _errors(ctrl, points, u):
    d = np.linalg.norm(_bezier(ctrl, u) - points, axis=1)
    return float(d.max()), float(np.sqrt(np.mean(d**2)))


def _sse(ctrl, points, u) -> float:
    return float(np.sum((_bezier(ctrl, u) - points) ** 2))


def _projection_residual(points, u, degree):
    """Control points, residual and helpers with the control points eliminated."""
    b = bernstein_matrix(degree, u)
    q, rr = np.linalg.qr(b)
    ctrl = np.linalg.solve(rr, q.T @ points)
    resid = points - b @ ctrl
    return ctrl, resid, q, rr


def _varpro_system(points, u, degree):
    """Gauss-Newton system on the interior parameters (variable projection).

    The control points are eliminated by the linear solve, and the Jacobian of
    the projected residual is the full Golub-Pereyra expression. Returns
    (J^T J, J^T r).
    """
    n = len(points)
    ctrl, resid, q, rr = _projection_residual(points, u, degree)
    tangent = _bezier(_derivative_points(ctrl), u)
    db = bernstein_matrix(degree - 1, u) @ (degree * np.diff(np.eye(degree + 1), axis=0))
    pinv_t = q @ np.linalg.inv(rr).T  # (B^+)^T
    proj_perp = np.eye(n) - q @ q.T
    a = pinv_t @ db.T
    # d(B C)/du_k = P_perp e_k t_k^T + (B^+)^T b'_k r_k^T
    jac = proj_perp[:, None, :] * tangent.T[None] + a[:, None, :] * resid.T[None]
    jac = jac[:, :, 1:-1].reshape(2 * n, -1)
    return jac.T @ jac, jac.T @ (-resid.ravel())


def _varpro_step(u, system, damping):
    """Levenberg-Marquardt step with the given damping."""
    jtj, g = system
    diag = np.diag(jtj).copy() + 1e-300
    step = np.linalg.solve(jtj + damping * np.diag(diag), -g)
    u_new = u.copy()
    u_new[1:-1] = np.clip(u[1:-1] + step, 0.0, 1.0)
    return u_new


def fit_polyline_tls(
    polyline: Polyline | np.ndarray,
    degree: int = MAP_DEGREE,
    max_iter: int = TLS_MAX_ITER,
    tol: float = TLS_TOL,
    debug: bool = False,
) -> FitResult:
    """Total-least-squares Bezier fit to ordered samples with parameter correction.

    Parameters start from chord length. Each iteration projects every
    interior sample onto the current curve (Newton foot point), re-solves the
    linear least-squares problem for the control points, and then refines the
    parameters with damped Gauss-Newton steps on the problem with the control
    points eliminated (variable projection). Steps are only kept if they
    lower the squared error. End samples stay at u=0 and u=1 so the curve
    spans the polyline. A run that ends above the rounding floor is repeated
    from centripetal and uniform parameters; the lowest squared error wins.

    With ``debug=True`` the squared error is asserted non-increasing.
    """
    points = polyline.points if isinstance(polyline, Polyline) else np.asarray(polyline, float)
    if len(points) < 2:
        raise ValueError("need at least 2 points")
    floor = (1e-13 * max(float(np.ptp(points, axis=0).max()), 1e-12)) ** 2 * len(points)
    best = _tls_from(points, chord_parameters(points), degree, max_iter, tol, floor, debug)
    if best[2] > floor and "reduced_degree" not in best[3]:
        # the objective has local minima; retry from the other standard parameterizations
        for u0 in (chord_parameters(points, 0.5), np.linspace(0.0, 1.0, len(points))):
            cand = _tls_from(points, u0, degree, max_iter, tol, floor, debug)
            if cand[2] < best[2]:
                best = cand
    ctrl, u, _, flags = best
    u = project_points(ctrl, points, u)
    max_err, rms = _errors(ctrl, points, u)
    curve = PolyCurve2D(degree, Basis.BERNSTEIN, ctrl, (0.0, 1.0))
    return FitResult(curve, max_err, rms, tuple(flags), params=u)


def _tls_from(points, u, degree, max_iter, tol, floor, debug):
    """One TLS run from initial parameters ``u``: (ctrl, u, sse, flags)."""
    flags: list[str] = []
    ctrl, eff = _solve_control_points(points, u, degree)
    if eff < degree:
        flags.append("reduced_degree")
        log.warning("rank-deficient fit, effective degree %d < %d", eff, degree)
    err = _sse(ctrl, points, u)
    damping = 1e-3
    refine = eff == degree and degree + 1 < len(points) <= VARPRO_MAX_POINTS
    for it in range(max_iter):
        u_start = u
        u = project_points(ctrl, points, u)
        ctrl, _ = _solve_control_points(points, u, degree)
        new_err = _sse(ctrl, points, u)
        stalled = not refine
        for _ in range(VARPRO_STEPS if refine else 0):
            system = _varpro_system(points, u, degree)
            for _ in range(12):
                u_try = _varpro_step(u, system, damping)
                ctrl_try, eff_try = _solve_control_points(points, u_try, degree)
                try_err = _sse(ctrl_try, points, u_try)
                if eff_try == degree and try_err < new_err:
                    ctrl, u, new_err = ctrl_try, u_try, try_err
                    damping = max(damping / 10, 1e-15)
                    break
                damping = min(damping * 10, 1e15)
            else:
                stalled = True
                break
            if new_err < floor:
                break
        if debug:
            assert new_err <= err * (1 + 1e-9) + floor, (it, new_err, err)
        slow = it > 0 and err - new_err <= TLS_REL_DECREASE * err
        err = new_err
        if np.max(np.abs(u - u_start)) < tol or err < floor or stalled or slow:
            break
    else:
        flags.append("max_iter")
    return ctrl, u, err, flags


def fit_polyline_fixed(polyline: Polyline | np.ndarray, degree: int = MAP_DEGREE) -> FitResult:
    """Plain least squares at chord-length parameters (no parameter correction)."""
    points = polyline.points if isinstance(polyline, Polyline) else np.asarray(polyline, float)
    u = chord_parameters(points)
    ctrl, _ = _solve_control_points(points, u, degree)
    max_err, rms = _errors(ctrl, points, u)
    return FitResult(PolyCurve2D(degree, Basis.BERNSTEIN, ctrl), max_err, rms, params=u)


def split_until_fit(
    polyline: Polyline | np.ndarray,
    degree: int = MAP_DEGREE,
    threshold: float = SPLIT_THRESHOLD,
) -> list[FitResult]:
    """Fit, and bisect at the middle sample until every piece is under ``threshold``.

    Neighbouring pieces share their boundary sample. A piece that is too short
    to split further is kept and flagged ``irreducible``.
    """
    if threshold <= 0:
        raise ValueError("threshold must be positive")
    points = polyline.points if isinstance(polyline, Polyline) else np.asarray(polyline, float)
    out: list[FitResult] = []

    def recurse(lo: int, hi: int):
        seg = points[lo : hi + 1]
        fit = fit_polyline_tls(seg, degree)
        if fit.max_error < threshold:
            out.append(fit)
            return
        mid = (lo + hi) // 2
        if mid - lo + 1 < degree + 1 or hi - mid + 1 < degree + 1:
            out.append(FitResult(fit.curve, fit.max_error, fit.rms_error, fit.flags + ("irreducible",), fit.params))
            return
        recurse(lo, mid)
        recurse(mid, hi)

    recurse(0, len(points) - 1)
    return out


def fit_history_wls(track: ObservedTrack, degree: int = HISTORY_DEGREE) -> FitResult:
    """Weighted least-squares Bernstein fit over the valid samples of a track.

    Weights are ``1 / noise_std**2``. The interval spans the first to the last
    valid timestamp, so the curve's end point is the tracked current position.
    """
    t = track.t[track.valid]
    xy = track.xy[track.valid]
    if len(t) < 2:
        raise ValueError("need at least 2 valid samples")
    flags: list[str] = []
    if len(t) < degree + 1:
        flags.append("reduced_degree")
        fit_degree = len(t) - 1
    else:
        fit_degree = degree
    std = np.broadcast_to(np.asarray(track.noise_std, dtype=float), track.t.shape)[track.valid]
    w = 1.0 / std**2
    w = w / w.max()  # same solution; uniform weights become exactly 1
    interval = (float(t[0]), float(t[-1]))
    u = (t - interval[0]) / (interval[1] - interval[0])
    b = bernstein_matrix(fit_degree, u)
    sw = np.sqrt(w)[:, None]
    ctrl, *_ = np.linalg.lstsq(b * sw, xy * sw, rcond=None)
    curve = PolyCurve2D(fit_degree, Basis.BERNSTEIN, ctrl, interval)
    res = np.linalg.norm(b @ ctrl - xy, axis=1)
    return FitResult(curve, float(res.max()), float(np.sqrt(np.mean(res**2))), tuple(flags), params=u)
