"""Reference values from independent computations, frozen.

Each constant records how it was obtained; ``test_oracles_reproduce`` re-derives
them from the generators below, so a typo in a constant cannot go unnoticed.

Robin values on rectangles come from separation of variables: on ``[0, L]`` the
first Robin mode is ``cos(k (x - L/2))`` with ``k tan(k L / 2) = beta``, and on a
rectangle the eigenvalue is the sum of the two one-dimensional values.

A quadratic norm ``F(xi)^2 = xi . A xi`` becomes Euclidean under ``y = A^{-1/2} x``.
Energy, ``L^2`` mass and the weighted boundary term ``int beta u^2 F(nu) ds`` all pick
up the same Jacobian factor, so each quotient is unchanged and ``beta`` is not
rescaled. For ``A = diag(4, 1)`` the unit square maps to ``[0, 1/2] x [0, 1]``.
"""
import math

import numpy as np
import scipy.linalg as la


def robin_wavenumber(beta: float, length: float = 1.0) -> float:
    """Smallest positive ``k`` with ``k tan(k length / 2) = beta``, by bisection to 1e-12 or better."""
    lo, hi = 0.0, math.pi / length
    while hi - lo > 1e-15:
        mid = 0.5 * (lo + hi)
        if mid * math.tan(mid * length / 2.0) > beta:
            hi = mid
        else:
            lo = mid
    return 0.5 * (lo + hi)


def harmonic_ritz_q(beta, degree: int = 16, n_theta: int = 1024) -> float:
    """Ritz value of ``q`` on the unit disk over harmonic polynomials up to ``degree``.

    Trapezoid quadrature in the angle is exact for the trigonometric integrands; the
    interior mass matrix is diagonal with entries ``pi`` and ``pi / (2k + 2)``.
    """
    th = np.linspace(0.0, 2.0 * np.pi, n_theta, endpoint=False)
    rows, mass = [np.ones_like(th)], [np.pi]
    for k in range(1, degree + 1):
        rows += [np.cos(k * th), np.sin(k * th)]
        mass += [np.pi / (2 * k + 2)] * 2
    P = np.array(rows)
    B = (P * beta(np.cos(th), np.sin(th)) * (2.0 * np.pi / n_theta)) @ P.T
    return float(la.eigh(B, np.diag(mass), eigvals_only=True)[0])


KAPPA_BETA_1 = 1.3065423741888065
LAMBDA_ROBIN_SQUARE_BETA_1 = 3.4141059511018463      # 2 kappa^2
KAPPA_BETA_10 = 2.6276754329857965
LAMBDA_ROBIN_SQUARE_BETA_10 = 13.809356362234187     # 2 kappa^2
LAMBDA_DIRICHLET_SQUARE = 2.0 * math.pi ** 2
SIGMA_SQUARE = math.pi ** 2                          # first nonconstant Neumann mode cos(pi x)
MU_RECTANGLE_1x2 = math.pi ** 2 / 4.0
# Quadratic norm diag(4, 1) on the unit square, through the rectangle [0, 1/2] x [0, 1].
MAPPED_ROBIN_DIAG41_BETA_1 = 5.39490366990988
MAPPED_DIRICHLET_DIAG41 = 5.0 * math.pi ** 2
PERIMETER_DIAG41_SQUARE = 6.0                        # 2 F(e1) + 2 F(e2) = 2*2 + 2*1
# Unit disk, Euclidean: constants minimize q, so q = P / |Omega| = 2.
Q_DISK_CONSTANT_BETA = 2.0
# Unit disk, Euclidean, beta = 1 + x / 2: harmonic Ritz value, degree 16 (stable to roundoff from 16 to 32).
Q_DISK_AFFINE_BETA = 1.5233601778393027
