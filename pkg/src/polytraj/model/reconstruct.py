"""Degree-6 trajectory reconstruction from kinematic state vectors.

A state vector holds ``[p(t0), p(t1), v(t1), a(t1), p(t2), v(t2), a(t2)]``,
each a 2D point, 14 numbers in total. The trajectory is a monomial
polynomial in the normalized parameter ``u = (t - t0) / (t2 - t0)``.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from ..polycore import Basis, PolyCurve2D, evaluate, evaluate_derivative, monomial_matrix
from . import autograd as ag

DEGREE = 6
STATE_DIM = 14
DEFAULT_TIMES = (0.0, 3.0, 6.0)


class SingularObservationError(ValueError):
    pass


def _basis_row(u: float, order: int, scale: float) -> np.ndarray:
    """``d^order/dt^order`` of the monomial basis at ``u``."""
    row = np.zeros(DEGREE + 1)
    for n in range(order, DEGREE + 1):
        c = 1.0
        for k in range(order):
            c *= n - k
        row[n] = c * u ** (n - order)
    return row / scale**order


@dataclass(frozen=True)
class ObservationMatrix:
    H: np.ndarray  # (14, 14)
    times: tuple[float, float, float]
    condition: float

    @property
    def scalar(self) -> np.ndarray:
        """The 7x7 matrix before expansion to two dimensions."""
        return self.H[::2, ::2]


def build_observation_matrix(t0: float = 0.0, t30: float = 3.0, t60: float = 6.0) -> ObservationMatrix:
    """14x14 map from stacked monomial coefficients to the state vector.

    Coefficients are ordered ``[c0x, c0y, c1x, c1y, ...]`` and states
    ``[p0x, p0y, p1x, ...]``, so ``H = kron(Phi, I2)``.
    """
    if not (t0 < t30 < t60):
        raise SingularObservationError(f"times must be strictly increasing, got {(t0, t30, t60)}")
    T = t60 - t0
    u1 = (t30 - t0) / T
    phi = np.stack(
        [
            _basis_row(0.0, 0, T),
            _basis_row(u1, 0, T),
            _basis_row(u1, 1, T),
            _basis_row(u1, 2, T),
            _basis_row(1.0, 0, T),
            _basis_row(1.0, 1, T),
            _basis_row(1.0, 2, T),
        ]
    )
    H = np.kron(phi, np.eye(2))
    cond = float(np.linalg.cond(H))
    if not np.isfinite(cond) or cond > 1e14:
        raise SingularObservationError(f"observation matrix is singular (cond={cond:.3g})")
    return ObservationMatrix(H, (float(t0), float(t30), float(t60)), cond)


@lru_cache(maxsize=8)
def _solver(times: tuple[float, float, float]) -> np.ndarray:
    return np.linalg.inv(build_observation_matrix(*times).H)


def solve_coefficients(s, obs: ObservationMatrix | None = None) -> np.ndarray:
    """Monomial coefficients ``omega`` with ``H @ omega = s``; batched over leading dims.

    H is square and invertible, so this is the normal-equation solution.
    """
    obs = obs or build_observation_matrix(*DEFAULT_TIMES)
    s = np.asarray(s, dtype=float)
    if s.shape[-1] != STATE_DIM:
        raise ValueError(f"state vectors must have {STATE_DIM} entries, got {s.shape}")
    if s.ndim == 1:
        return np.linalg.solve(obs.H, s)
    return s @ _solver(obs.times).T


def reconstruct_trajectory(s, obs: ObservationMatrix | None = None) -> PolyCurve2D:
    """The degree-6 curve interpolating the state vector ``s``."""
    obs = obs or build_observation_matrix(*DEFAULT_TIMES)
    omega = solve_coefficients(s, obs)
    if not np.all(np.isfinite(omega)):
        raise ValueError("non-finite state vector")
    return PolyCurve2D(DEGREE, Basis.MONOMIAL, omega.reshape(DEGREE + 1, 2), (obs.times[0], obs.times[2]))


def state_from_curve(curve: PolyCurve2D, times=DEFAULT_TIMES) -> np.ndarray:
    """Analytic state vector of any curve at the three times."""
    t0, t1, t2 = times
    parts = [
        evaluate(curve, t0),
        evaluate(curve, t1),
        evaluate_derivative(curve, t1, 1),
        evaluate_derivative(curve, t1, 2),
        evaluate(curve, t2),
        evaluate_derivative(curve, t2, 1),
        evaluate_derivative(curve, t2, 2),
    ]
    return np.concatenate(parts)


@lru_cache(maxsize=32)
def _sampling_matrix(times: tuple[float, float, float], sample_t: tuple[float, ...]) -> np.ndarray:
    """(2n, 14) matrix taking state vectors to stacked positions at ``sample_t``."""
    t0, _, t2 = times
    u = (np.asarray(sample_t) - t0) / (t2 - t0)
    phi = monomial_matrix(DEGREE, u)  # (n, 7)
    return np.kron(phi, np.eye(2)) @ _solver(times)


def sample_states(s, sample_t, obs: ObservationMatrix | None = None):
    """Positions of the reconstructed curves at ``sample_t``.

    ``s`` is an array or tape tensor of shape (..., 14); the result has shape
    (..., n, 2) and is differentiable with respect to ``s``.
    """
    obs = obs or build_observation_matrix(*DEFAULT_TIMES)
    sample_t = tuple(float(t) for t in np.asarray(sample_t).ravel())
    W = _sampling_matrix(obs.times, sample_t)
    n = len(sample_t)
    if isinstance(s, ag.Tensor):
        out = ag.matmul(s, ag.Tensor(W.T))
        return out.reshape(s.shape[:-1] + (n, 2))
    s = np.asarray(s, dtype=float)
    return (s @ W.T).reshape(s.shape[:-1] + (n, 2))
