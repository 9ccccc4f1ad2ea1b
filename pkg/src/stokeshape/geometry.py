"""The domain map T_q(x, y) = (x, y + (1 - y) q(x)) and its pullback quantities.

Everything is evaluated pointwise and vectorized: ``x`` and ``y`` may be
arrays of any (matching) shape, matrices carry two trailing axes.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


class DegenerateDomainError(ValueError):
    """The map Jacobian 1 - q(x) is not positive."""


@dataclass(frozen=True)
class MapQuantities:
    DT: np.ndarray
    gamma: np.ndarray
    DTinv: np.ndarray
    A: np.ndarray
    cof: np.ndarray


@dataclass(frozen=True)
class MapVariation:
    Vdq: np.ndarray
    gamma_dot: np.ndarray
    A_dot: np.ndarray
    cof_DV: np.ndarray


@dataclass(frozen=True)
class MapSecondVariation:
    gamma_ddot: np.ndarray
    A_ddot: np.ndarray


def _mat(a11, a12, a21, a22) -> np.ndarray:
    a11, a12, a21, a22 = np.broadcast_arrays(a11, a12, a21, a22)
    return np.stack([np.stack([a11, a12], -1), np.stack([a21, a22], -1)], -2)


def map_forward(q, x, y):
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    return x, y + (1.0 - y) * q.eval(x)


def map_inverse(q, x, Y):
    """Reference coordinates of the physical point (x, Y)."""
    qx = q.eval(np.asarray(x, dtype=float))
    return np.asarray(x, dtype=float), (np.asarray(Y, dtype=float) - qx) / (1.0 - qx)


def quantities_from_values(q0, q1, y) -> MapQuantities:
    """Map quantities from q(x), q'(x) and the reference height y."""
    q0 = np.asarray(q0, dtype=float)
    gamma = 1.0 - q0
    if np.any(gamma <= 0.0):
        raise DegenerateDomainError("1 - q(x) must stay positive")
    s = 1.0 - np.asarray(y, dtype=float)
    sq1 = s * q1
    one = np.ones_like(gamma * sq1)
    zero = np.zeros_like(one)
    DT = _mat(one, zero, sq1, gamma * one)
    DTinv = _mat(one, zero, -sq1 / gamma, 1.0 / gamma * one)
    A = _mat(gamma * one, -sq1, -sq1, (1.0 + sq1 ** 2) / gamma)
    cof = _mat(gamma * one, -sq1, zero, one)
    return MapQuantities(DT=DT, gamma=gamma * one, DTinv=DTinv, A=A, cof=cof)


def first_variation_from_values(q0, q1, d0, d1, y) -> MapVariation:
    D = 1.0 - np.asarray(q0, dtype=float)
    s = 1.0 - np.asarray(y, dtype=float)
    N = 1.0 + (s * q1) ** 2
    zero = np.zeros_like(D * s * d0)
    a22 = 2.0 * s ** 2 * q1 * d1 / D + N * d0 / D ** 2
    A_dot = _mat(-d0 + zero, -s * d1 + zero, -s * d1 + zero, a22 + zero)
    cof_DV = _mat(-d0 + zero, -s * d1 + zero, zero, zero)
    Vdq = np.stack([zero, s * d0 + zero], -1)
    return MapVariation(Vdq=Vdq, gamma_dot=-d0 + zero, A_dot=A_dot, cof_DV=cof_DV)


def second_variation_from_values(q0, q1, d0, d1, t0, t1, y) -> MapSecondVariation:
    D = 1.0 - np.asarray(q0, dtype=float)
    s = 1.0 - np.asarray(y, dtype=float)
    N = 1.0 + (s * q1) ** 2
    a22 = (2.0 * s ** 2 * d1 * t1 / D
           + 2.0 * s ** 2 * q1 * (d1 * t0 + t1 * d0) / D ** 2
           + 2.0 * N * d0 * t0 / D ** 3)
    zero = np.zeros_like(a22)
    return MapSecondVariation(gamma_ddot=zero, A_ddot=_mat(zero, zero, zero, a22))


def map_quantities(q, x, y) -> MapQuantities:
    x = np.asarray(x, dtype=float)
    return quantities_from_values(q.eval(x), q.eval(x, 1), y)


def map_first_variation(q, dq, x, y) -> MapVariation:
    x = np.asarray(x, dtype=float)
    q0 = q.eval(x)
    if np.any(q0 >= 1.0):
        raise DegenerateDomainError("1 - q(x) must stay positive")
    return first_variation_from_values(q0, q.eval(x, 1), dq.eval(x), dq.eval(x, 1), y)


def map_second_variation(q, dq, tq, x, y) -> MapSecondVariation:
    x = np.asarray(x, dtype=float)
    q0 = q.eval(x)
    if np.any(q0 >= 1.0):
        raise DegenerateDomainError("1 - q(x) must stay positive")
    return second_variation_from_values(q0, q.eval(x, 1), dq.eval(x), dq.eval(x, 1),
                                        tq.eval(x), tq.eval(x, 1), y)


def physical_variation_field(q, dq, x, Y) -> np.ndarray:
    """Velocity of the physical domain Omega_q -> Omega_{q + t dq} at t = 0."""
    x = np.asarray(x, dtype=float)
    Y = np.asarray(Y, dtype=float)
    vy = (1.0 - Y) / (1.0 - q.eval(x)) * dq.eval(x)
    return np.stack([np.zeros_like(vy), vy], -1)


def eigen_lower_bound(d1: float, d2: float, epsilon: float) -> float:
    """Lower bound on the eigenvalues of A_q given ||q''||_inf <= d1, |q'(0)| <= d2."""
    if not 0.0 < epsilon < 1.0:
        raise ValueError("epsilon must lie in (0, 1)")
    if d1 < 0 or d2 < 0:
        raise ValueError("derivative bounds must be non-negative")
    t = 1.0 + (1.0 + (d1 + d2) ** 2) / epsilon
    return 2.0 / (t + math.sqrt(t * t - 4.0))


def min_eigenvalue(A: np.ndarray) -> np.ndarray:
    """Smallest eigenvalue of symmetric 2x2 matrices (closed form)."""
    a, b, d = A[..., 0, 0], A[..., 0, 1], A[..., 1, 1]
    half_tr = 0.5 * (a + d)
    return half_tr - np.sqrt((0.5 * (a - d)) ** 2 + b * b)
