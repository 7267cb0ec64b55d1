"""Piecewise-linear convex coercive energy densities and their regularization."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import _kernel


class EnergyError(ValueError):
    pass


@dataclass(frozen=True)
class PLEnergy:
    """Convex piecewise-linear W given by its kinks and slopes.

    ``slopes[i]`` is the slope of W on the i-th linearity interval, so
    ``len(slopes) == len(breakpoints) + 1``.  The kinks form the set P of
    facet slopes.
    """

    breakpoints: tuple
    slopes: tuple
    value_at_zero: float = 0.0

    def __post_init__(self):
        b = tuple(float(x) for x in self.breakpoints)
        s = tuple(float(x) for x in self.slopes)
        object.__setattr__(self, "breakpoints", b)
        object.__setattr__(self, "slopes", s)
        object.__setattr__(self, "value_at_zero", float(self.value_at_zero))
        if not b:
            raise EnergyError("W needs at least one kink")
        if len(s) != len(b) + 1:
            raise EnergyError(
                f"expected {len(b) + 1} slopes for {len(b)} breakpoints, got {len(s)}"
            )
        if np.any(np.diff(b) <= 0):
            raise EnergyError("breakpoints must be strictly increasing")
        if np.any(np.diff(s) <= 0):
            raise EnergyError("slopes must be strictly increasing (convexity)")
        if not (s[0] < 0 < s[-1]):
            raise EnergyError("W must be coercive: first slope < 0 < last slope")

    @property
    def jumps(self) -> np.ndarray:
        """Jump of W' at each breakpoint."""
        return np.diff(self.slopes)

    @property
    def P(self) -> np.ndarray:
        return np.asarray(self.breakpoints)

    @property
    def recession_plus(self) -> float:
        return self.slopes[-1]

    @property
    def recession_minus(self) -> float:
        return -self.slopes[0]

    def __call__(self, p):
        return eval_W(self, p)


def tv() -> PLEnergy:
    """W(p) = |p|."""
    return PLEnergy((0.0,), (-1.0, 1.0), 0.0)


def bi_tv() -> PLEnergy:
    """W(p) = |p + 1| + |p - 1|."""
    return PLEnergy((-1.0, 1.0), (-2.0, 0.0, 2.0), 2.0)


BUILTIN = {"tv": tv, "bi-tv": bi_tv}


def builtin(name: str) -> PLEnergy:
    try:
        return BUILTIN[name]()
    except KeyError:
        raise EnergyError(f"unknown energy {name!r}; known: {sorted(BUILTIN)}") from None


def _offset(e: PLEnergy) -> float:
    b = np.asarray(e.breakpoints)
    return e.value_at_zero - float(np.sum(e.jumps * np.maximum(-b, 0.0)))


def eval_W(e: PLEnergy, p):
    """Evaluate W at p (scalar or array)."""
    p = np.asarray(p, dtype=float)
    b = np.asarray(e.breakpoints)
    out = _offset(e) + e.slopes[0] * p
    out = out + np.sum(e.jumps * np.maximum(p[..., None] - b, 0.0), axis=-1)
    return out if out.ndim else float(out)


def eval_dW(e: PLEnergy, p):
    """Midpoint selection of the subdifferential (the right slope off P)."""
    lo, hi = subdifferential(e, p)
    return 0.5 * (np.asarray(lo) + np.asarray(hi))


def subdifferential(e: PLEnergy, p):
    """Return the interval [d-W(p), d+W(p)]."""
    s = np.asarray(e.slopes)
    b = np.asarray(e.breakpoints)
    lo = s[np.searchsorted(b, p, side="left")]
    hi = s[np.searchsorted(b, p, side="right")]
    if np.ndim(lo) == 0:
        return float(lo), float(hi)
    return lo, hi


def jump_at(e: PLEnergy, p: float) -> float:
    lo, hi = subdifferential(e, p)
    return hi - lo


def in_P(e: PLEnergy, p: float) -> bool:
    return bool(np.any(np.asarray(e.breakpoints) == p))


def P_between(e: PLEnergy, lo: float, hi: float) -> np.ndarray:
    """Elements of P strictly between lo and hi (either order), ascending."""
    a, b = min(lo, hi), max(lo, hi)
    P = np.asarray(e.breakpoints)
    return P[(P > a) & (P < b)]


@dataclass(frozen=True)
class AlphaBetaForm:
    """W(p) = sum a+_j (p + b+_j)^+ + sum a-_j (p + b-_j)^- + const."""

    alpha_plus: tuple
    beta_plus: tuple
    alpha_minus: tuple
    beta_minus: tuple

    @property
    def n_plus(self) -> int:
        return len(self.alpha_plus)

    @property
    def n_minus(self) -> int:
        return len(self.alpha_minus)

    def __call__(self, p):
        p = np.asarray(p, dtype=float)[..., None]
        out = np.sum(np.asarray(self.alpha_plus) * np.maximum(p + np.asarray(self.beta_plus), 0.0), axis=-1)
        out = out + np.sum(
            np.asarray(self.alpha_minus) * np.maximum(-(p + np.asarray(self.beta_minus)), 0.0), axis=-1
        )
        return out if out.ndim else float(out)


def to_alpha_beta(e: PLEnergy) -> AlphaBetaForm:
    """Split W into positive-part and negative-part families.

    The kinks right of the leftmost minimizer a0 feed the plus family and those
    at or left of it feed the minus family.  When W is not flat right of a0,
    the kink at a0 is shared: the plus family takes the slope right of a0 and
    the minus family the negated slope left of it.
    """
    s = np.asarray(e.slopes)
    b = np.asarray(e.breakpoints)
    if not (s[0] < 0 < s[-1]):
        raise EnergyError("decomposition requires a coercive W")
    i0 = int(np.argmax(s >= 0))  # first nonnegative slope; a0 = b[i0 - 1]
    a0 = i0 - 1
    jumps = np.diff(s)
    if s[i0] == 0:
        plus_idx = list(range(a0 + 1, len(b)))
        alpha_plus = [jumps[i] for i in plus_idx]
        minus_idx = list(range(a0, -1, -1))
        alpha_minus = [jumps[i] for i in minus_idx]
    else:
        plus_idx = list(range(a0, len(b)))
        alpha_plus = [s[i0]] + [jumps[i] for i in plus_idx[1:]]
        minus_idx = list(range(a0, -1, -1))
        alpha_minus = [-s[i0 - 1]] + [jumps[i] for i in minus_idx[1:]]
    return AlphaBetaForm(
        alpha_plus=tuple(float(a) for a in alpha_plus),
        beta_plus=tuple(float(-b[i]) for i in plus_idx),
        alpha_minus=tuple(float(a) for a in alpha_minus),
        beta_minus=tuple(float(-b[i]) for i in minus_idx),
    )


def from_alpha_beta(ab: AlphaBetaForm, value_at_zero: float | None = None) -> PLEnergy:
    """Rebuild a PLEnergy; the constant defaults to that of the (alpha, beta) sum."""
    kinks: dict[float, float] = {}
    for a, bt in zip(ab.alpha_plus, ab.beta_plus):
        kinks[-bt] = kinks.get(-bt, 0.0) + a
    for a, bt in zip(ab.alpha_minus, ab.beta_minus):
        kinks[-bt] = kinks.get(-bt, 0.0) + a
    bps = sorted(kinks)
    first = -float(sum(ab.alpha_minus))
    slopes = [first]
    for k in bps:
        slopes.append(slopes[-1] + kinks[k])
    v0 = ab(0.0) if value_at_zero is None else value_at_zero
    return PLEnergy(tuple(bps), tuple(slopes), v0)


def growth_constants(e: PLEnergy) -> tuple[float, float, float]:
    """Constants with c1|p| - c2 <= W(p) <= c0(|p| + 1)."""
    pts = np.concatenate([np.asarray(e.breakpoints), [0.0]])
    w = eval_W(e, pts)
    c1 = min(e.recession_plus, e.recession_minus)
    c2 = max(0.0, float(np.max(c1 * np.abs(pts) - w)))
    c0 = max(e.recession_plus, e.recession_minus, float(np.max(w / (np.abs(pts) + 1.0))))
    return c0, c1, c2


@dataclass(frozen=True)
class SmoothEnergy:
    """W^eps = W * rho_h + (eps/2) p^2 with a quadratic B-spline rho of halfwidth h."""

    base: PLEnergy
    epsilon: float
    mollifier_halfwidth: float
    k: float = field(init=False)

    def __post_init__(self):
        if self.epsilon <= 0:
            raise EnergyError("epsilon must be positive")
        if not 0 < self.mollifier_halfwidth <= self.epsilon:
            raise EnergyError("mollifier halfwidth must lie in (0, epsilon]")
        k = len(self.base.breakpoints) * float(np.max(self.base.jumps)) / 2.0
        object.__setattr__(self, "k", k)

    def _z(self, p):
        return np.asarray(p, dtype=float)[..., None] - np.asarray(self.base.breakpoints)

    def W(self, p):
        """Regularized energy density."""
        p = np.asarray(p, dtype=float)
        h = self.mollifier_halfwidth
        smooth = _offset(self.base) + self.base.slopes[0] * p
        smooth = smooth + np.sum(self.base.jumps * _kernel.ramp(self._z(p), h), axis=-1)
        return smooth + 0.5 * self.epsilon * p**2

    def L(self, p):
        """Mollified part of the derivative: (W^eps)' - eps p."""
        h = self.mollifier_halfwidth
        return self.base.slopes[0] + np.sum(self.base.jumps * _kernel.cdf(self._z(p), h), axis=-1)

    def dL(self, p):
        h = self.mollifier_halfwidth
        return np.sum(self.base.jumps * _kernel.density(self._z(p), h), axis=-1)

    def dW(self, p):
        return self.L(p) + self.epsilon * np.asarray(p, dtype=float)

    def d2W(self, p):
        return self.dL(p) + self.epsilon


def regularize(e: PLEnergy, epsilon: float, halfwidth: float | None = None) -> SmoothEnergy:
    if epsilon <= 0:
        raise EnergyError("epsilon must be positive")
    return SmoothEnergy(e, float(epsilon), float(epsilon if halfwidth is None else halfwidth))


def parse_energy(spec) -> PLEnergy:
    """Build an energy from a name, a mapping, or an existing PLEnergy.

    Mappings carry either ``slopes``/``breakpoints`` (plus optional
    ``value_at_zero``) or the four (alpha, beta) lists.
    """
    if isinstance(spec, PLEnergy):
        return spec
    if isinstance(spec, str):
        return builtin(spec.strip())
    if "slopes" in spec:
        return PLEnergy(
            tuple(_floats(spec["breakpoints"])),
            tuple(_floats(spec["slopes"])),
            float(spec.get("value_at_zero", 0.0)),
        )
    keys = ("alpha_plus", "beta_plus", "alpha_minus", "beta_minus")
    if all(k in spec for k in keys):
        ab = AlphaBetaForm(*(tuple(_floats(spec[k])) for k in keys))
        if any(a <= 0 for a in ab.alpha_plus + ab.alpha_minus) or not ab.n_plus or not ab.n_minus:
            raise EnergyError("alpha values must be positive and both families nonempty")
        return from_alpha_beta(ab)
    raise EnergyError("energy needs a name, slopes/breakpoints, or the alpha/beta lists")


def _floats(v: str | Sequence[float]) -> list[float]:
    if isinstance(v, str):
        return [float(x) for x in v.replace(",", " ").split()]
    return [float(x) for x in v]
