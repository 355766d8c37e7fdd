"""One-dimensional quadratic Lagrange pieces shared by the 2D and trace problems."""
import numpy as np

GAUSS_POINTS, GAUSS_WEIGHTS = np.polynomial.legendre.leggauss(3)
GAUSS_POINTS = 0.5 * (GAUSS_POINTS + 1.0)  # mapped to [0, 1]
GAUSS_WEIGHTS = 0.5 * GAUSS_WEIGHTS


def shape(xi):
    xi = np.asarray(xi, dtype=float)
    return np.stack([2 * (xi - 0.5) * (xi - 1), -4 * xi * (xi - 1), 2 * xi * (xi - 0.5)], axis=-1)


def shape_deriv(xi):
    xi = np.asarray(xi, dtype=float)
    return np.stack([4 * xi - 3, 4 - 8 * xi, 4 * xi - 1], axis=-1)


def _moments():
    N = shape(GAUSS_POINTS)
    D = shape_deriv(GAUSS_POINTS)
    w, x = GAUSS_WEIGHTS, GAUSS_POINTS
    q0 = np.einsum("g,ga,gb->ab", w, N, N)
    q1 = np.einsum("g,ga,gb->ab", w * x, N, N)
    s0 = np.einsum("g,ga,gb->ab", w, D, D)
    s1 = np.einsum("g,ga,gb->ab", w * x, D, D)
    return q0, q1, s0, s1


# On the unit interval: q0 = int N N, q1 = int xi N N, s0 = int N' N', s1 = int xi N' N'.
Q0, Q1, S0, S1 = _moments()


def radial_element(h: float, r0: float):
    """r-weighted (stiffness, mass) of one quadratic element on [r0, r0 + h]."""
    return (r0 / h) * S0 + S1, r0 * h * Q0 + h * h * Q1
