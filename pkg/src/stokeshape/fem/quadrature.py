"""Quadrature on the reference triangle {(0,0), (1,0), (0,1)} and on [0, 1]."""
from __future__ import annotations

import math
from functools import lru_cache

import numpy as np


@lru_cache(maxsize=None)
def triangle_rule(degree: int = 4) -> tuple[np.ndarray, np.ndarray]:
    """Points (nq, 2) and weights (nq,) exact for polynomials of ``degree``.

    Degree <= 4 uses the symmetric 6-point rule; higher degrees use a
    collapsed (Duffy) tensor Gauss-Legendre rule.
    """
    if degree <= 4:
        a, wa = 0.445948490915965, 0.223381589678011
        b, wb = 0.091576213509771, 0.109951743655322
        bary = np.array([[a, a, 1 - 2 * a], [a, 1 - 2 * a, a], [1 - 2 * a, a, a],
                         [b, b, 1 - 2 * b], [b, 1 - 2 * b, b], [1 - 2 * b, b, b]])
        weights = 0.5 * np.array([wa] * 3 + [wb] * 3)
        return bary[:, 1:].copy(), weights
    m = math.ceil((degree + 2) / 2)
    g, w = np.polynomial.legendre.leggauss(m)
    g = 0.5 * (g + 1.0)
    w = 0.5 * w
    u, v = np.meshgrid(g, g, indexing="ij")
    wu, wv = np.meshgrid(w, w, indexing="ij")
    xi = u.ravel()
    eta = ((1.0 - u) * v).ravel()
    weights = (wu * wv * (1.0 - u)).ravel()
    return np.column_stack([xi, eta]), weights


@lru_cache(maxsize=None)
def line_rule(n_points: int = 3) -> tuple[np.ndarray, np.ndarray]:
    """Gauss-Legendre points and weights on [0, 1]."""
    g, w = np.polynomial.legendre.leggauss(n_points)
    return 0.5 * (g + 1.0), 0.5 * w
