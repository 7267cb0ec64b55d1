"""Nonlocal facet curvature: closed form and a discrete obstacle-problem oracle."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
from numba import njit

from .bvfunc import BVFunction
from .energy import PLEnergy, SmoothEnergy, in_P, jump_at

SLOPE_TOL = 1e-12


class CurvatureError(ValueError):
    pass


class ObstacleNotConverged(RuntimeError):
    pass


@dataclass(frozen=True)
class FacetData:
    c_l: float
    c_r: float
    chi_l: int
    chi_r: int
    delta: float
    slope_p: float = 0.0

    def __post_init__(self):
        if not self.c_r - self.c_l > 0:
            raise CurvatureError(f"degenerate facet interval [{self.c_l}, {self.c_r}]")
        if self.chi_l not in (-1, 1) or self.chi_r not in (-1, 1):
            raise CurvatureError("transition numbers must be +1 or -1")
        if self.delta <= 0:
            raise CurvatureError("delta must be positive")

    @property
    def length(self) -> float:
        return self.c_r - self.c_l


def lambda_affine(f: FacetData) -> float:
    """Facet speed (chi_l + chi_r) * delta / (2 * length)."""
    return (f.chi_l + f.chi_r) * f.delta / (2.0 * f.length)


def speed(chi_l: int, chi_r: int, delta: float, length: float) -> float:
    if length <= 0:
        raise CurvatureError("facet length must be positive")
    return (chi_l + chi_r) * delta / (2.0 * length)


@dataclass(frozen=True)
class ObstacleProblem:
    """Minimize the Dirichlet energy of xi over the band |xi - Z| <= delta/2.

    End values are pinned at Z(c_l) - chi_l delta/2 and Z(c_r) + chi_r delta/2.
    ``Z`` is a vectorized callable; None means Z = 0.
    """

    c_l: float
    c_r: float
    delta: float
    chi_l: int
    chi_r: int
    Z: Callable | None = None


@dataclass
class ObstacleSolution:
    x: np.ndarray
    xi: np.ndarray
    dxi: np.ndarray  # slope on each of the n cells
    sweeps: int
    residual: float


@njit(cache=True)
def _projected_sor(xi, lo, hi, omega, tol, max_sweeps, h):
    n = xi.size - 1
    res = np.inf
    for sweep in range(1, max_sweeps + 1):
        for i in range(1, n):
            target = 0.5 * (xi[i - 1] + xi[i + 1])
            v = xi[i] + omega * (target - xi[i])
            if v < lo[i]:
                v = lo[i]
            elif v > hi[i]:
                v = hi[i]
            xi[i] = v
        # projected residual, scaled to a jump in the discrete derivative
        res = 0.0
        for i in range(1, n):
            target = 0.5 * (xi[i - 1] + xi[i + 1])
            if target < lo[i]:
                target = lo[i]
            elif target > hi[i]:
                target = hi[i]
            r = 2.0 * abs(xi[i] - target) / h
            if r > res:
                res = r
        if res < tol:
            return sweep, res
    return max_sweeps, res


def solve_obstacle_discrete(
    prob: ObstacleProblem, n: int = 1024, tol: float = 1e-10, max_sweeps: int = 1_000_000
) -> ObstacleSolution:
    """Projected SOR on n cells; convergence measured on the discrete derivative."""
    if n < 16:
        raise ValueError("grid needs at least 16 cells")
    L = prob.c_r - prob.c_l
    if L <= 0:
        raise CurvatureError("degenerate interval")
    x = np.linspace(prob.c_l, prob.c_r, n + 1)
    Z = np.zeros_like(x) if prob.Z is None else np.asarray(prob.Z(x), dtype=float)
    Z = Z - Z[0]  # the minimizer's derivative ignores additive constants
    half = 0.5 * prob.delta
    a = Z[0] - prob.chi_l * half
    b = Z[-1] + prob.chi_r * half
    # iterate on the deviation from the boundary chord: its discrete Laplacian
    # vanishes, and the unknowns shrink as the iteration converges, which
    # keeps roundoff far below the tolerance even for steep chords
    chord = a + (b - a) * (x - x[0]) / L
    lo, hi = Z - half - chord, Z + half - chord
    psi = np.clip(Z - chord, lo, hi)
    psi[0] = psi[-1] = 0.0
    h = L / n
    omega = 2.0 / (1.0 + np.sin(np.pi / n))
    sweeps, res = _projected_sor(psi, lo, hi, omega, tol, max_sweeps, h)
    if res >= tol:
        raise ObstacleNotConverged(f"no convergence after {sweeps} sweeps (residual {res:.3e})")
    xi = chord + psi
    return ObstacleSolution(x, xi, (b - a) / L + np.diff(psi) / h, sweeps, res)


def facet_at(f: BVFunction, e: PLEnergy, x: float) -> FacetData | None:
    """The facet of piecewise-linear f containing x, or None if f'(x) is off P.

    Transition numbers come from the neighbouring slopes, or from the sign of
    an adjacent jump.
    """
    i, dx = f._locate(x)
    i = int(i)
    m = f.size
    p = f.slopes[i]
    on_node = dx == 0 and abs(f.jumps[i]) <= 1e-12
    if not in_P(e, p):
        if on_node and in_P(e, f.slopes[i - 1]):
            i, p = (i - 1) % m, f.slopes[i - 1]
        else:
            return None
    if m == 1 and abs(f.jumps[0]) <= 1e-12:
        return None  # whole-torus facet
    # grow to the maximal run of equal slope without jumps
    left = i
    while abs(f.jumps[left]) <= 1e-12 and f.slopes[(left - 1) % m] == p and (left - 1) % m != i:
        left = (left - 1) % m
    right = i
    while abs(f.jumps[(right + 1) % m]) <= 1e-12 and f.slopes[(right + 1) % m] == p and (right + 1) % m != left:
        right = (right + 1) % m
    c_l = f.nodes[left]
    c_r = f.nodes[(right + 1) % m]
    if c_r <= c_l:
        c_r += 1.0
    if x < c_l:
        c_l, c_r = c_l - 1.0, c_r - 1.0
    jl = f.jumps[left]
    jr = f.jumps[(right + 1) % m]
    if abs(jl) > 1e-12:
        chi_l = -1 if jl > 0 else 1
    else:
        chi_l = 1 if f.slopes[(left - 1) % m] < p else -1
    if abs(jr) > 1e-12:
        chi_r = 1 if jr > 0 else -1
    else:
        chi_r = 1 if f.slopes[(right + 1) % m] > p else -1
    return FacetData(float(c_l), float(c_r), chi_l, chi_r, jump_at(e, p), float(p))


def curvature(e, f, x: float, h: float = 1e-4) -> float:
    """Nonlocal curvature of f at x.

    With a PLEnergy, ``f`` is a BVFunction (continuous near x) and the result
    is the facet speed on a facet, 0 on pieces with slope off P.  With a
    SmoothEnergy, ``f`` is a callable and the result is W''(f') f'' from
    central differences of step h.
    """
    if isinstance(e, SmoothEnergy):
        fx = f(np.array([x - h, x, x + h]))
        d1 = (fx[2] - fx[0]) / (2 * h)
        d2 = (fx[2] - 2 * fx[1] + fx[0]) / h**2
        return float(e.d2W(d1) * d2)
    i, dx = f._locate(x)
    i = int(i)
    if dx == 0:
        s_left, s_right = f.slopes[i - 1], f.slopes[i]
        if abs(f.jumps[i]) > 1e-12:
            raise CurvatureError(f"f jumps at x={x}")
        if s_left != s_right and not (in_P(e, s_left) or in_P(e, s_right)):
            lo, hi = sorted((s_left, s_right))
            if np.any((e.P > lo) & (e.P < hi)):
                raise CurvatureError(f"slope crosses P at x={x} without a facet")
    facet = facet_at(f, e, x)
    if facet is None:
        p = f.slopes[i]
        near = np.abs(e.P - p)
        if np.any((near > 0) & (near < SLOPE_TOL)):
            raise CurvatureError(f"slope {p} within {SLOPE_TOL} of P but not on it")
        return 0.0
    return lambda_affine(facet)


def write_csv(sol: ObstacleSolution, path) -> None:
    """Dump (x, xi, xi') with the cell slope assigned to each cell's left node."""
    import csv

    slope = np.append(sol.dxi, sol.dxi[-1])
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["x", "xi", "dxi"])
        for row in zip(sol.x, sol.xi, slope):
            w.writerow([f"{v:.17g}" for v in row])
