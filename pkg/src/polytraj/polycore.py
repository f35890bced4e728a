"""Planar polynomial curves in Bernstein or monomial form.

Every curve is parameterized internally by ``u = (t - t_start) / (t_end - t_start)``
so that ``u`` runs over ``[0, 1]``. Monomial coefficients are coefficients of
powers of ``u``; time derivatives pick up a factor ``1 / (t_end - t_start)``
per order.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Any, Sequence

import numpy as np

SPEED_EPS = 1e-6
DEFAULT_QUADRATURE_ORDER = 32


class Basis(str, enum.Enum):
    BERNSTEIN = "bernstein"
    MONOMIAL = "monomial"


class DegenerateCurveError(ValueError):
    pass


@dataclass(frozen=True)
class PolyCurve2D:
    """A 2D polynomial curve over a time interval.

    Attributes:
        degree: polynomial degree (>= 1).
        basis: coefficient basis.
        coeffs: array of shape (degree + 1, 2). Control points for Bernstein,
            coefficients of ``u**n`` for monomial.
        interval: (t_start, t_end) in seconds, t_start < t_end.
    """

    degree: int
    basis: Basis
    coeffs: np.ndarray
    interval: tuple[float, float] = (0.0, 1.0)

    def __post_init__(self):
        coeffs = np.array(self.coeffs, dtype=float)
        if coeffs.ndim != 2 or coeffs.shape[1] != 2 or coeffs.shape[0] == 0:
            raise ValueError(f"coeffs must have shape (n, 2), got {coeffs.shape}")
        if self.degree < 1 or coeffs.shape[0] != self.degree + 1:
            raise ValueError(
                f"degree {self.degree} needs {self.degree + 1} coefficients, got {coeffs.shape[0]}"
            )
        t0, t1 = (float(v) for v in self.interval)
        if not (math.isfinite(t0) and math.isfinite(t1) and t0 < t1):
            raise ValueError(f"invalid interval {self.interval}")
        coeffs.setflags(write=False)
        object.__setattr__(self, "coeffs", coeffs)
        object.__setattr__(self, "basis", Basis(self.basis))
        object.__setattr__(self, "interval", (t0, t1))

    @property
    def duration(self) -> float:
        return self.interval[1] - self.interval[0]

    def normalize(self, t) -> np.ndarray:
        return (np.asarray(t, dtype=float) - self.interval[0]) / self.duration

    def __call__(self, t):
        return evaluate(self, t)

    def to_dict(self) -> dict[str, Any]:
        return {
            "degree": self.degree,
            "basis": self.basis.value,
            "interval": list(self.interval),
            "coeffs": self.coeffs.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> PolyCurve2D:
        return cls(
            degree=int(d["degree"]),
            basis=Basis(d["basis"]),
            coeffs=np.asarray(d["coeffs"], dtype=float),
            interval=tuple(d["interval"]),
        )

    def with_coeffs(self, coeffs) -> PolyCurve2D:
        return PolyCurve2D(self.degree, self.basis, coeffs, self.interval)


@dataclass(frozen=True)
class MonomialBasisVector:
    degree: int
    values: np.ndarray = field(repr=False)


@dataclass(frozen=True)
class DerivativeOperator:
    degree: int
    matrix: np.ndarray = field(repr=False)

    def __matmul__(self, other):
        return self.matrix @ other


def monomial_basis(degree: int, u: float) -> MonomialBasisVector:
    """[1, u, u**2, ..., u**degree] at a normalized parameter."""
    values = np.asarray(u, dtype=float) ** np.arange(degree + 1)
    return MonomialBasisVector(degree, values)


@lru_cache(maxsize=None)
def _derivative_matrix(degree: int) -> np.ndarray:
    d = np.zeros((degree + 1, degree + 1))
    idx = np.arange(degree)
    d[idx, idx + 1] = idx + 1
    d.setflags(write=False)
    return d


def derivative_operator(degree: int) -> DerivativeOperator:
    """Power-rule operator on monomial coefficients in ``u``.

    ``D @ a`` holds the coefficients of ``da/du`` padded with a trailing zero.
    """
    if degree < 1:
        raise ValueError("degree must be >= 1")
    return DerivativeOperator(degree, _derivative_matrix(degree))


def bernstein_matrix(degree: int, u) -> np.ndarray:
    """Bernstein basis values, shape (len(u), degree + 1)."""
    u = np.atleast_1d(np.asarray(u, dtype=float))
    n = np.arange(degree + 1)
    binom = np.array([math.comb(degree, k) for k in n], dtype=float)
    return binom * u[:, None] ** n * (1.0 - u[:, None]) ** (degree - n)


def monomial_matrix(degree: int, u) -> np.ndarray:
    u = np.atleast_1d(np.asarray(u, dtype=float))
    return u[:, None] ** np.arange(degree + 1)


@lru_cache(maxsize=None)
def bernstein_to_monomial_matrix(degree: int) -> np.ndarray:
    """M with ``a = M @ omega``: monomial coefficients from control points.

    B_i(u) = sum_{j>=i} C(d, j) C(j, i) (-1)**(j - i) u**j.
    """
    m = np.zeros((degree + 1, degree + 1))
    for j in range(degree + 1):
        for i in range(j + 1):
            m[j, i] = math.comb(degree, j) * math.comb(j, i) * (-1) ** (j - i)
    m.setflags(write=False)
    return m


@lru_cache(maxsize=None)
def monomial_to_bernstein_matrix(degree: int) -> np.ndarray:
    """Inverse of :func:`bernstein_to_monomial_matrix`, in closed form.

    u**j = sum_{i>=j} C(i, j) / C(d, j) B_i(u).
    """
    m = np.zeros((degree + 1, degree + 1))
    for i in range(degree + 1):
        for j in range(i + 1):
            m[i, j] = math.comb(i, j) / math.comb(degree, j)
    m.setflags(write=False)
    return m


def _check_t(t) -> np.ndarray:
    t = np.asarray(t, dtype=float)
    if not np.all(np.isfinite(t)):
        raise ValueError("evaluation time must be finite")
    return t


def _de_casteljau(points: np.ndarray, u: np.ndarray) -> np.ndarray:
    # points (n, 2), u (m,) -> (m, 2)
    b = np.broadcast_to(points, (u.shape[0],) + points.shape).copy()
    w = u[:, None, None]
    for r in range(1, points.shape[0]):
        b = (1.0 - w) * b[:, :-1] + w * b[:, 1:]
    return b[:, 0]


def _horner(coeffs: np.ndarray, u: np.ndarray) -> np.ndarray:
    out = np.broadcast_to(coeffs[-1], (u.shape[0], 2)).copy()
    for c in coeffs[-2::-1]:
        out = out * u[:, None] + c
    return out


def evaluate(curve: PolyCurve2D, t):
    """Position at time(s) ``t``. Scalar input gives shape (2,), array gives (n, 2).

    Times outside the interval extrapolate.
    """
    t = _check_t(t)
    u = np.atleast_1d(curve.normalize(t))
    if curve.basis is Basis.BERNSTEIN:
        out = _de_casteljau(curve.coeffs, u)
    else:
        out = _horner(curve.coeffs, u)
    return out[0] if t.ndim == 0 else out


def convert_basis(curve: PolyCurve2D, target: Basis) -> PolyCurve2D:
    target = Basis(target)
    if target is curve.basis:
        return curve
    if target is Basis.MONOMIAL:
        coeffs = bernstein_to_monomial_matrix(curve.degree) @ curve.coeffs
    else:
        coeffs = monomial_to_bernstein_matrix(curve.degree) @ curve.coeffs
    return PolyCurve2D(curve.degree, target, coeffs, curve.interval)


def monomial_coeffs(curve: PolyCurve2D) -> np.ndarray:
    return convert_basis(curve, Basis.MONOMIAL).coeffs


def derivative_coeffs(curve: PolyCurve2D, order: int = 1) -> np.ndarray:
    """Monomial coefficients (in ``u``) of the ``order``-th time derivative."""
    a = monomial_coeffs(curve)
    if order == 0:
        return a
    d = derivative_operator(curve.degree).matrix
    a = np.linalg.matrix_power(d, order) @ a
    return a / curve.duration**order


def evaluate_derivative(curve: PolyCurve2D, t, order: int = 1):
    """Time derivative of the given order (m/s, m/s^2, ...) at ``t``."""
    t = _check_t(t)
    u = np.atleast_1d(curve.normalize(t))
    out = _horner(derivative_coeffs(curve, order), u)
    return out[0] if t.ndim == 0 else out


def elevate_degree(curve: PolyCurve2D, degree: int) -> PolyCurve2D:
    """Same curve expressed at a higher degree, keeping its basis."""
    if degree < curve.degree:
        raise ValueError("cannot lower the degree")
    pad = np.zeros((degree - curve.degree, 2))
    mono = np.vstack([monomial_coeffs(curve), pad])
    out = PolyCurve2D(degree, Basis.MONOMIAL, mono, curve.interval)
    return convert_basis(out, curve.basis)


def curvature(curve: PolyCurve2D, t) -> np.ndarray:
    """Signed curvature at ``t``; NaN where the speed is below ``SPEED_EPS``."""
    d1 = np.atleast_2d(evaluate_derivative(curve, t, 1))
    d2 = np.atleast_2d(evaluate_derivative(curve, t, 2))
    speed = np.hypot(d1[:, 0], d1[:, 1])
    cross = d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0]
    with np.errstate(divide="ignore", invalid="ignore"):
        k = np.where(speed >= SPEED_EPS, cross / speed**3, np.nan)
    return k


def max_abs_curvature(curve: PolyCurve2D, samples: int = 1001) -> float:
    """Largest |curvature| over ``samples`` evenly spaced times in the interval."""
    if samples < 2:
        raise ValueError("samples must be >= 2")
    t = np.linspace(curve.interval[0], curve.interval[1], samples)
    k = curvature(curve, t)
    if np.all(np.isnan(k)):
        raise DegenerateCurveError("degenerate curve")
    return float(np.nanmax(np.abs(k)))


@lru_cache(maxsize=None)
def _gauss_legendre(order: int) -> tuple[np.ndarray, np.ndarray]:
    return np.polynomial.legendre.leggauss(order)


def _gl_length(curve: PolyCurve2D, a: float, b: float, order: int) -> float:
    x, w = _gauss_legendre(order)
    t = 0.5 * (b - a) * x + 0.5 * (b + a)
    d1 = evaluate_derivative(curve, t, 1)
    return float(0.5 * (b - a) * np.dot(w, np.hypot(d1[:, 0], d1[:, 1])))


def arc_length(curve: PolyCurve2D, order: int = DEFAULT_QUADRATURE_ORDER, rtol: float = 1e-10) -> float:
    """Length of the curve over its interval by Gauss-Legendre quadrature.

    A panel is bisected while its two halves disagree with it by more than
    ``rtol`` of the running total; smooth curves stop after one check, near
    cusps (where the speed has a kink) get refined.
    """
    t0, t1 = curve.interval
    whole = _gl_length(curve, t0, t1, order)
    scale = max(whole, 1e-300)
    stack = [(t0, t1, whole, 0)]
    total = 0.0
    while stack:
        a, b, est, depth = stack.pop()
        m = 0.5 * (a + b)
        left, right = _gl_length(curve, a, m, order), _gl_length(curve, m, b, order)
        if abs(left + right - est) <= rtol * scale or depth >= 30:
            total += left + right
        else:
            stack += [(a, m, left, depth + 1), (m, b, right, depth + 1)]
    return total


def rigid_transform(curve: PolyCurve2D, rotation: float, translation: Sequence[float]) -> PolyCurve2D:
    """Rotate by ``rotation`` radians about the origin, then translate."""
    c, s = math.cos(rotation), math.sin(rotation)
    rot = np.array([[c, -s], [s, c]])
    coeffs = curve.coeffs @ rot.T
    if curve.basis is Basis.BERNSTEIN:
        coeffs = coeffs + np.asarray(translation, dtype=float)
    else:
        coeffs[0] = coeffs[0] + np.asarray(translation, dtype=float)
    return curve.with_coeffs(coeffs)
