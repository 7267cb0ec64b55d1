"""Periodic piecewise-linear functions with jumps on the torus [0, 1)."""

from __future__ import annotations

import io
import logging
from dataclasses import dataclass
import numpy as np

from . import _kernel
from .energy import PLEnergy, eval_W

log = logging.getLogger(__name__)

# two traces closer than this are treated as one value
TRACE_TOL = 1e-12


@dataclass(frozen=True, eq=False)
class BVFunction:
    """Piecewise-linear periodic function with jumps.

    ``right_values[i]`` is the trace just right of ``nodes[i]`` and
    ``slopes[i]`` the slope on (nodes[i], nodes[i+1]) with wraparound.  Left
    traces are derived from these, which keeps the representation consistent.
    """

    nodes: np.ndarray
    right_values: np.ndarray
    slopes: np.ndarray

    def __post_init__(self):
        x = np.atleast_1d(np.asarray(self.nodes, dtype=float))
        r = np.atleast_1d(np.asarray(self.right_values, dtype=float))
        s = np.atleast_1d(np.asarray(self.slopes, dtype=float))
        if not (x.shape == r.shape == s.shape) or x.size == 0:
            raise ValueError("nodes, right_values and slopes must be nonempty and equally long")
        if np.any(x < 0) or np.any(x >= 1):
            raise ValueError("nodes must lie in [0, 1)")
        if np.any(np.diff(x) <= 0):
            raise ValueError("nodes must be strictly increasing")
        for name, arr in (("nodes", x), ("right_values", r), ("slopes", s)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    # -- construction -----------------------------------------------------
    @classmethod
    def constant(cls, c: float) -> "BVFunction":
        return cls(np.array([0.0]), np.array([float(c)]), np.array([0.0]))

    @classmethod
    def from_traces(cls, nodes, left_values, right_values) -> "BVFunction":
        """Slopes from consecutive traces: segment i joins right_values[i] to left_values[i+1]."""
        x = np.asarray(nodes, dtype=float)
        l = np.asarray(left_values, dtype=float)
        r = np.asarray(right_values, dtype=float)
        length = np.diff(np.append(x, x[0] + 1.0))
        slopes = (np.roll(l, -1) - r) / length
        return cls(x, r, slopes)

    @classmethod
    def from_points(cls, x, y) -> "BVFunction":
        """Continuous periodic interpolant of samples (x_i, y_i)."""
        x = np.asarray(x, dtype=float) % 1.0
        y = np.asarray(y, dtype=float)
        order = np.argsort(x)
        x, y = x[order], y[order]
        return cls.from_traces(x, y, y)

    @classmethod
    def step(cls, a: float, high: float = 1.0, low: float = 0.0) -> "BVFunction":
        """high on (0, a), low on (a, 1)."""
        return cls(np.array([0.0, a]), np.array([high, low]), np.array([0.0, 0.0]))

    # -- basic geometry -----------------------------------------------------
    @property
    def size(self) -> int:
        return self.nodes.size

    @property
    def lengths(self) -> np.ndarray:
        return np.diff(np.append(self.nodes, self.nodes[0] + 1.0))

    @property
    def left_values(self) -> np.ndarray:
        ends = self.right_values + self.slopes * self.lengths
        return np.roll(ends, 1)

    @property
    def jumps(self) -> np.ndarray:
        """right - left trace at every node."""
        return self.right_values - self.left_values

    def is_continuous(self, tol: float = TRACE_TOL) -> bool:
        return bool(np.all(np.abs(self.jumps) <= tol))

    def _locate(self, x):
        x = np.asarray(x, dtype=float) % 1.0
        i = np.searchsorted(self.nodes, x, side="right") - 1
        dx = np.where(i < 0, x + 1.0 - self.nodes[-1], x - self.nodes[np.maximum(i, 0)])
        i = np.where(i < 0, self.size - 1, i)
        return i, dx

    def __call__(self, x, side: str = "right"):
        """Evaluate; at a node ``side`` picks the trace."""
        x = np.asarray(x, dtype=float)
        i, dx = self._locate(x)
        val = self.right_values[i] + self.slopes[i] * dx
        if side == "left":
            at_node = dx == 0
            if np.any(at_node):
                val = np.where(at_node, self.left_values[i], val)
        elif side != "right":
            raise ValueError("side must be 'left' or 'right'")
        return val if val.ndim else float(val)

    def upper(self, x):
        return np.maximum(self(x, "left"), self(x, "right"))

    def lower(self, x):
        return np.minimum(self(x, "left"), self(x, "right"))

    def __neg__(self) -> "BVFunction":
        return BVFunction(self.nodes, -self.right_values, -self.slopes)

    def __add__(self, c) -> "BVFunction":
        if isinstance(c, BVFunction):
            return add(self, c)
        return BVFunction(self.nodes, self.right_values + float(c), self.slopes)

    def __sub__(self, c) -> "BVFunction":
        if isinstance(c, BVFunction):
            return add(self, -c)
        return self + (-float(c))

    def rotate(self, shift: float) -> "BVFunction":
        """The function x -> u(x - shift)."""
        x = (self.nodes + shift) % 1.0
        order = np.argsort(x, kind="stable")
        return BVFunction(x[order], self.right_values[order], self.slopes[order])

    def simplify(self, tol: float = TRACE_TOL) -> "BVFunction":
        """Drop nodes that are neither jumps nor kinks."""
        if self.size == 1:
            return self
        keep = (np.abs(self.jumps) > tol) | (np.abs(self.slopes - np.roll(self.slopes, 1)) > 1e-12)
        if not np.any(keep):
            keep[0] = True
        return BVFunction(self.nodes[keep], self.right_values[keep], self.slopes[keep])

    # -- serialization ---------------------------------------------------------
    def to_table(self) -> str:
        buf = io.StringIO()
        buf.write("# position left_value right_value slope\n")
        for x, l, r, s in zip(self.nodes, self.left_values, self.right_values, self.slopes):
            buf.write(f"{x:.17g} {l:.17g} {r:.17g} {s:.17g}\n")
        return buf.getvalue()

    @classmethod
    def from_table(cls, text: str) -> "BVFunction":
        rows = []
        for line in text.splitlines():
            line = line.split("#", 1)[0].strip()
            if line:
                rows.append([float(v) for v in line.replace(",", " ").split()])
        if not rows:
            raise ValueError("empty BV table")
        arr = np.array(rows)
        if arr.shape[1] != 4:
            raise ValueError("BV table rows need 4 columns: position left right slope")
        u = cls(arr[:, 0], arr[:, 2], arr[:, 3])
        if not np.allclose(u.left_values, arr[:, 1], atol=1e-9, rtol=0):
            raise ValueError("left values inconsistent with right values and slopes")
        return u


def add(u: BVFunction, v: BVFunction) -> BVFunction:
    x = np.union1d(u.nodes, v.nodes)
    return BVFunction(x, u(x) + v(x), u.slopes[u._locate(x)[0]] + v.slopes[v._locate(x)[0]]).simplify()


def pointwise_max(u: BVFunction, v: BVFunction) -> BVFunction:
    """max(u, v) with crossings inserted as nodes."""
    return _pointwise(u, v, np.maximum)


def pointwise_min(u: BVFunction, v: BVFunction) -> BVFunction:
    return _pointwise(u, v, np.minimum)


def _pointwise(u, v, op):
    x = np.union1d(u.nodes, v.nodes)
    d = add(u, -v)
    cross = []
    ends = np.append(x, x[0] + 1.0)
    for a, b in zip(ends[:-1], ends[1:]):
        da, db = d(a), d(b % 1.0, "left")
        if da * db < 0:
            cross.append(a + (b - a) * da / (da - db))
    x = np.union1d(x, np.asarray(cross, dtype=float) % 1.0)
    mid = x + 0.5 * np.diff(np.append(x, x[0] + 1.0))
    pick_u = op(u(mid), v(mid)) == u(mid)
    r = np.where(pick_u, u(x), v(x))
    s = np.where(pick_u, u.slopes[u._locate(x)[0]], v.slopes[v._locate(x)[0]])
    return BVFunction(x, r, s).simplify()


@dataclass(frozen=True)
class DerivativeMeasure:
    """Du = density * dx on intervals plus atoms."""

    intervals: np.ndarray  # (m, 2) start/end, the last may wrap past 1
    densities: np.ndarray
    atom_points: np.ndarray
    atom_amplitudes: np.ndarray


def derivative(u: BVFunction, tol: float = TRACE_TOL) -> DerivativeMeasure:
    start = u.nodes
    end = start + u.lengths
    j = u.jumps
    mask = np.abs(j) > tol
    return DerivativeMeasure(np.column_stack([start, end]), u.slopes.copy(), u.nodes[mask], j[mask])


def total_variation(u: BVFunction) -> float:
    du = derivative(u)
    return float(np.sum(np.abs(u.slopes) * u.lengths) + np.sum(np.abs(du.atom_amplitudes)))


def energy(u: BVFunction, e: PLEnergy) -> float:
    """E[u] = int W(u') dx + recession contributions of the jumps."""
    du = derivative(u)
    ac = float(np.sum(eval_W(e, u.slopes) * u.lengths))
    a = du.atom_amplitudes
    jumps = float(np.sum(np.where(a > 0, e.recession_plus * a, -e.recession_minus * a)))
    return ac + jumps


def mass(u: BVFunction) -> float:
    L = u.lengths
    return float(np.sum(u.right_values * L + 0.5 * u.slopes * L**2))


def l2_distance(u: BVFunction, v: BVFunction) -> float:
    """Exact L2 norm of u - v (piecewise quadratic integrand)."""
    d = add(u, -v) if u is not v else BVFunction.constant(0.0)
    L, r, s = d.lengths, d.right_values, d.slopes
    sq = r**2 * L + r * s * L**2 + s**2 * L**3 / 3.0
    return float(np.sqrt(max(float(np.sum(sq)), 0.0)))


def sample(u: BVFunction, n: int = 1000, offset: float = 0.5) -> tuple[np.ndarray, np.ndarray]:
    """Values at the midpoints (i + offset)/n, avoiding grid-aligned nodes."""
    x = (np.arange(n) + offset) / n
    return x, u(x)


# -- Jordan decomposition and monotone approximations --------------------------


@dataclass(frozen=True)
class MonotonePair:
    """u = offset + plus - minus on [0, 1) with both parts nondecreasing.

    Both parts start at 0.  ``plus_end``/``minus_end`` are their values at
    x = 1, where the wraparound trace u(0) is taken as the endpoint value.
    """

    plus: BVFunction
    minus: BVFunction
    offset: float
    plus_end: float
    minus_end: float

    @property
    def plus_variation(self) -> float:
        return self.plus_end

    @property
    def minus_variation(self) -> float:
        return self.minus_end


def _variation_parts(u: BVFunction):
    """Nodes, positive and negative parts of jumps and slopes with the cut at 0."""
    if u.nodes[0] != 0.0:
        x = np.concatenate([[0.0], u.nodes])
        r = np.concatenate([[u(0.0)], u.right_values])
        s = np.concatenate([[u.slopes[-1]], u.slopes])
        u = BVFunction(x, r, s)
    j = u.jumps.copy()
    wrap = j[0]
    j[0] = 0.0  # the jump at 0 is counted at x = 1
    return u, j, wrap


def jordan_decompose(u: BVFunction) -> MonotonePair:
    uu, j, wrap = _variation_parts(u)
    L, s = uu.lengths, uu.slopes
    parts = []
    ends = []
    for sign in (1.0, -1.0):
        sp = np.maximum(sign * s, 0.0)
        jp = np.maximum(sign * j, 0.0)
        rise = sp * L
        start = np.concatenate([[0.0], np.cumsum(rise[:-1] + jp[1:])])
        parts.append(BVFunction(uu.nodes, start, sp).simplify())
        ends.append(float(start[-1] + rise[-1] + max(sign * wrap, 0.0)))
    return MonotonePair(parts[0], parts[1], float(uu.right_values[0]), ends[0], ends[1])


class _DriftMonotone:
    """Nondecreasing F on [0, 1) extended to the line by F(x + 1) = F(x) + rise.

    F splits into a continuous nondecreasing part C and a pure-jump part J.
    Shifting C and smearing each jump of J into a linear ramp both keep the
    result piecewise linear, so approximants stay exact BVFunctions.
    """

    def __init__(self, F: BVFunction, end: float):
        self.F = F
        j = F.jumps.copy()
        j[0] = end - F.left_values[0]  # jump at 0 == 1 carries the wraparound
        keep = j > TRACE_TOL
        self.jump_x = F.nodes[keep]
        self.jump_a = j[keep]
        self.cont_rise = float(np.sum(F.slopes * F.lengths))
        self.jump_total = float(np.sum(self.jump_a))

    @staticmethod
    def _split(x):
        n = np.floor(x)
        y = x - n
        wrap = y >= 1.0
        return np.where(wrap, n + 1.0, n), np.where(wrap, 0.0, y)

    def _J(self, x):
        n, y = self._split(x)
        acc = np.sum(self.jump_a * (self.jump_x <= y[..., None]), axis=-1)
        return n * self.jump_total + acc

    def _C(self, x):
        n, y = self._split(x)
        return n * self.cont_rise + self.F(y) - self._J(y)

    def _ramp_defect(self, x, width, side):
        """Difference between smeared jumps and sharp jumps."""
        out = np.zeros_like(x)
        if self.jump_x.size == 0:
            return out
        reps = int(np.ceil(width)) + 3
        for m in range(-reps, reps + 1):
            z = x[..., None] - (self.jump_x + m)
            if side > 0:
                d = np.where((z >= 0) & (z < width), z / width - 1.0, 0.0)
            else:
                d = np.where((z >= -width) & (z < 0), 1.0 + z / width, 0.0)
            out = out + np.sum(self.jump_a * d, axis=-1)
        return out

    def lower(self, x, k: int):
        x = np.asarray(x, dtype=float)
        return self._C(x - 1.0 / k) + self._J(x) + self._ramp_defect(x, 2.0 / k, +1)

    def upper(self, x, k: int):
        x = np.asarray(x, dtype=float)
        return self._C(x + 1.0 / k) + self._J(x) + self._ramp_defect(x, 2.0 / k, -1)

    def kinks(self, k: int, side: int) -> np.ndarray:
        pts = [self.F.nodes + side / k]
        if self.jump_x.size:
            pts += [self.jump_x, self.jump_x + side * 2.0 / k]
        return np.concatenate(pts)


def _approx(u: BVFunction, k: int, lower: bool) -> BVFunction:
    if k < 1:
        raise ValueError("k must be a positive integer")
    pair = jordan_decompose(u)
    P = _DriftMonotone(pair.plus, pair.plus_end)
    N = _DriftMonotone(pair.minus, pair.minus_end)
    if lower:
        nodes = np.concatenate([P.kinks(k, +1), N.kinks(k, -1)])
    else:
        nodes = np.concatenate([P.kinks(k, -1), N.kinks(k, +1)])
    nodes = np.unique(np.round(nodes % 1.0, 15) % 1.0)
    if lower:
        vals = pair.offset + P.lower(nodes, k) - N.upper(nodes, k)
    else:
        vals = pair.offset + P.upper(nodes, k) - N.lower(nodes, k)
    return BVFunction.from_points(nodes, vals).simplify()


def lower_approx(u: BVFunction, k: int) -> BVFunction:
    """Continuous v_k <= u, nondecreasing in k, converging to u off the jump set.

    The plus part of the Jordan decomposition is shifted right by 1/k with its
    jumps smeared over [x_j, x_j + 2/k]; the minus part is shifted left with
    jumps smeared over [x_j - 2/k, x_j].  Extending both parts periodically with
    drift makes the result continuous across x = 0 without an endpoint patch.
    """
    return _approx(u, int(k), lower=True)


def upper_approx(u: BVFunction, k: int) -> BVFunction:
    """Mirror image of lower_approx: upper_approx(u, k) == -lower_approx(-u, k)."""
    return -lower_approx(-u, k)


def mollify(u: BVFunction, halfwidth: float, x) -> np.ndarray:
    """Exact values of u * rho_h at points x (B-spline kernel, h < 1/2)."""
    if not 0 < halfwidth < 0.5:
        raise ValueError("mollifier halfwidth must lie in (0, 1/2)")
    x = np.asarray(x, dtype=float)
    # u on [x0 - 1, x0 + 2) as base line plus steps and ramps at node copies
    x0 = u.nodes[0] - 1.0
    ys, amps, kinks = [], [], []
    ds = u.slopes - np.roll(u.slopes, 1)
    for m in (-1, 0, 1):
        for i in range(u.size):
            if m == -1 and i == 0:
                continue
            ys.append(u.nodes[i] + m)
            amps.append(u.jumps[i])
            kinks.append(ds[i])
    ys, amps, kinks = np.array(ys), np.array(amps), np.array(kinks)
    z = x[..., None] - ys
    out = u.right_values[0] + u.slopes[0] * (x - x0)
    out = out + np.sum(amps * _kernel.cdf(z, halfwidth), axis=-1)
    out = out + np.sum(kinks * _kernel.ramp(z, halfwidth), axis=-1)
    return out
