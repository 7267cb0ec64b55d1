"""Solvers for one-dimensional very singular diffusion on the torus.

Exact facet evolution (``crystalline``), an implicit regularized finite
difference scheme (``regularized``), and a viscosity/energy verification
harness (``verify``) sharing the energy and BV representations.
"""

from .bvfunc import BVFunction, energy, l2_distance, lower_approx, mass, total_variation, upper_approx
from .energy import PLEnergy, bi_tv, regularize, tv

__version__ = "0.1.0"

__all__ = [
    "BVFunction",
    "PLEnergy",
    "bi_tv",
    "energy",
    "l2_distance",
    "lower_approx",
    "mass",
    "regularize",
    "total_variation",
    "tv",
    "upper_approx",
]
