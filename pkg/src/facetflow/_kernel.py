"""Quadratic B-spline mollifier and its exact antiderivatives.

The kernel lives on [-1, 1] with knots at -1, -1/3, 1/3, 1.  Every quantity
built from it (cumulative mass, ramp convolution) is a piecewise polynomial
that is evaluated exactly, so mollified piecewise-linear data never goes
through quadrature.
"""

from __future__ import annotations

import numpy as np
from numpy.polynomial import Polynomial

KNOTS = np.array([-1.0, -1.0 / 3.0, 1.0 / 3.0, 1.0])


class PiecewisePoly:
    """Piecewise polynomial on (-inf, k0], [k0, k1], ..., [k_{n-1}, inf)."""

    def __init__(self, knots, pieces):
        self.knots = np.asarray(knots, dtype=float)
        self.pieces = list(pieces)
        if len(self.pieces) != len(self.knots) + 1:
            raise ValueError("need one piece per knot interval plus two tails")
        deg = max(len(p.coef) for p in self.pieces)
        self._coef = np.zeros((len(self.pieces), deg))
        for i, p in enumerate(self.pieces):
            self._coef[i, : len(p.coef)] = p.coef

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        c = self._coef[np.searchsorted(self.knots, x, side="right")]
        out = c[..., -1]
        for j in range(c.shape[-1] - 2, -1, -1):
            out = out * x + c[..., j]
        return out

    def antiderivative(self) -> "PiecewisePoly":
        """Continuous antiderivative vanishing on the left tail."""
        pieces = []
        value = 0.0
        left = None
        for i, poly in enumerate(self.pieces):
            prim = poly.integ()
            if left is None:
                # left tail is identically zero for every function built here
                prim = prim - prim(self.knots[0]) + value
            else:
                prim = prim - prim(left) + value
            pieces.append(prim)
            if i < len(self.knots):
                left = self.knots[i]
                value = prim(left)
        return PiecewisePoly(self.knots, pieces)

    def derivative(self) -> "PiecewisePoly":
        return PiecewisePoly(self.knots, [p.deriv() for p in self.pieces])


def _density() -> PiecewisePoly:
    # uniform quadratic B-spline on knots 0,1,2,3 mapped to [-1, 1]: t = 1.5 (y + 1)
    t = Polynomial([1.5, 1.5])
    b0 = 0.5 * t**2
    b1 = 0.5 * (-2.0 * t**2 + 6.0 * t - 3.0)
    b2 = 0.5 * (3.0 - t) ** 2
    zero = Polynomial([0.0])
    return PiecewisePoly(KNOTS, [zero, 1.5 * b0, 1.5 * b1, 1.5 * b2, zero])


DENSITY = _density()
CDF = DENSITY.antiderivative()
RAMP = CDF.antiderivative()


def density(z, halfwidth=1.0):
    """Kernel density scaled to support [-halfwidth, halfwidth]."""
    return DENSITY(np.asarray(z, dtype=float) / halfwidth) / halfwidth


def cdf(z, halfwidth=1.0):
    """Mass of the scaled kernel on (-inf, z]; equals (H * rho_h)(z)."""
    return CDF(np.asarray(z, dtype=float) / halfwidth)


def ramp(z, halfwidth=1.0):
    """Convolution of the positive part z+ with the scaled kernel."""
    return halfwidth * RAMP(np.asarray(z, dtype=float) / halfwidth)
