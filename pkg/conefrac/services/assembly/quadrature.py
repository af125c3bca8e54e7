"""Quadrature rules and quadratic shape functions for TRI6 elements and 3-node edges.

Local numbering of a TRI6 element: corners 0, 1, 2 counterclockwise, then midside
3 on edge 0-1, 4 on edge 1-2 and 5 on edge 2-0. Edges are traversed as
(corner, midside, corner) triples in ``TRI6_EDGES``.
"""

from dataclasses import dataclass
from typing import Tuple

import numpy as np
from numpy.polynomial.legendre import leggauss

TRI6_EDGES: Tuple[Tuple[int, int, int], ...] = ((0, 3, 1), (1, 4, 2), (2, 5, 0))


@dataclass(frozen=True)
class TriangleRule:
    """Quadrature on the reference triangle {r, s >= 0, r + s <= 1}."""

    points: np.ndarray  # (n, 2)
    weights: np.ndarray  # (n,), sums to 1/2

    @property
    def size(self) -> int:
        return len(self.weights)


def triangle_rule(n_points: int) -> TriangleRule:
    """Symmetric triangle rule with 3 (degree 2) or 6 (degree 4) points."""
    if n_points == 3:
        points = np.array([[1 / 6, 1 / 6], [2 / 3, 1 / 6], [1 / 6, 2 / 3]])
        weights = np.full(3, 1 / 6)
    elif n_points == 6:
        a, wa = 0.445948490915965, 0.223381589678011
        b, wb = 0.091576213509771, 0.109951743655322
        points = np.array(
            [[a, a], [1 - 2 * a, a], [a, 1 - 2 * a], [b, b], [1 - 2 * b, b], [b, 1 - 2 * b]]
        )
        weights = 0.5 * np.array([wa, wa, wa, wb, wb, wb])
    else:
        raise ValueError(f"no {n_points}-point triangle rule")
    return TriangleRule(points=points, weights=weights)


def tri6_shape(points: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Shape functions and reference gradients of the 6-node triangle.

    Args:
        points: (n, 2) reference coordinates (r, s).

    Returns:
        N of shape (n, 6) and dN/d(r, s) of shape (n, 6, 2).
    """
    r, s = points[:, 0], points[:, 1]
    L = np.stack([1.0 - r - s, r, s], axis=1)
    # dL/dr and dL/ds
    dL = np.array([[-1.0, -1.0], [1.0, 0.0], [0.0, 1.0]])

    N = np.empty((len(points), 6))
    dN = np.empty((len(points), 6, 2))
    for k in range(3):
        N[:, k] = L[:, k] * (2.0 * L[:, k] - 1.0)
        dN[:, k, :] = (4.0 * L[:, k] - 1.0)[:, None] * dL[k]
    for m, (i, j) in enumerate(((0, 1), (1, 2), (2, 0))):
        N[:, 3 + m] = 4.0 * L[:, i] * L[:, j]
        dN[:, 3 + m, :] = 4.0 * (L[:, j][:, None] * dL[i] + L[:, i][:, None] * dL[j])
    return N, dN


def gauss_legendre(n_points: int) -> Tuple[np.ndarray, np.ndarray]:
    """Gauss points and weights on [-1, 1]."""
    eta, w = leggauss(n_points)
    return eta, w


def edge_shape(eta: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Quadratic edge shape functions for (start, mid, end) at eta = -1, 0, 1."""
    N = np.stack([0.5 * eta * (eta - 1.0), 1.0 - eta**2, 0.5 * eta * (eta + 1.0)], axis=1)
    dN = np.stack([eta - 0.5, -2.0 * eta, eta + 0.5], axis=1)
    return N, dN
