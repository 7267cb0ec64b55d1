"""Viscosity touching tests, comparison and stability sweeps, cross-solver validation.

The touching suite is a falsifier: it builds admissible test functions
phi(t, x) = f(x) + g(t), finds where phi touches the semicontinuous envelope
of a solution from above (subsolution branch) or below (supersolution
branch), and evaluates the sign of phi_t - Lambda_W(f).  A touch whose
extremum sits on the left time edge or on the spatial window edge is not a
touch in the viscosity sense and is reported as inconclusive.  Touches at the
right time edge are kept: the inequality extends to the terminal time.
"""

from __future__ import annotations

import json
from concurrent.futures import ProcessPoolExecutor, ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from functools import reduce
from typing import Callable, Sequence

import numpy as np

from .bvfunc import BVFunction, lower_approx, pointwise_max, pointwise_min, upper_approx
from .crystalline import Trajectory, detect_facets, evaluate, evaluate_before, evolve, facet_speeds
from .energy import PLEnergy, jump_at
from .obstacle import FacetData, lambda_affine
from .regularized import layer_width, solve

MARGIN_TOL = 1e-6
ORDER_SLACK = 1e-9
JUMP_TOL = 1e-9


# -- solution surfaces -------------------------------------------------------------


class TrajectorySurface:
    """Crystalline trajectory seen as a function of (t, x)."""

    def __init__(self, traj: Trajectory):
        self.traj = traj
        self.energy = traj.energy
        self.t_end = traj.t_end
        self.event_times = traj.event_times
        self._now: dict = {}
        self._before: dict = {}

    def profile(self, t: float) -> BVFunction:
        t = float(t)
        if t not in self._now:
            self._now[t] = evaluate(self.traj, t)
        return self._now[t]

    def profile_before(self, t: float) -> BVFunction:
        t = float(t)
        if t not in self._before:
            self._before[t] = evaluate_before(self.traj, t)
        return self._before[t]

    def facets(self, t: float) -> list[tuple[FacetData, float]]:
        return facet_speeds(self.traj, t)


class EnvelopeSurface:
    """Pointwise sup (``mode="max"``) or inf of several surfaces."""

    def __init__(self, members: Sequence, mode: str = "max"):
        if not members:
            raise ValueError("envelope of an empty family")
        if mode not in ("max", "min"):
            raise ValueError("mode must be 'max' or 'min'")
        self.members = list(members)
        self.mode = mode
        self.energy = self.members[0].energy
        self.t_end = min(m.t_end for m in self.members)
        self.event_times = sorted({t for m in self.members for t in m.event_times})
        self._op = pointwise_max if mode == "max" else pointwise_min
        self._now: dict = {}
        self._before: dict = {}

    def profile(self, t: float) -> BVFunction:
        t = float(t)
        if t not in self._now:
            self._now[t] = reduce(self._op, [m.profile(t) for m in self.members])
        return self._now[t]

    def profile_before(self, t: float) -> BVFunction:
        t = float(t)
        if t not in self._before:
            self._before[t] = reduce(self._op, [m.profile_before(t) for m in self.members])
        return self._before[t]

    def facets(self, t: float, dt: float = 1e-7) -> list[tuple[FacetData, float]]:
        """Facets of the envelope with speeds from central time differences."""
        out = []
        for f in detect_facets(self.profile(t), self.energy).facets:
            x = 0.5 * (f.c_l + f.c_r) % 1.0
            lo, hi = max(t - dt, 0.0), min(t + dt, self.t_end)
            v = (self.profile(hi)(x) - self.profile(lo)(x)) / (hi - lo)
            out.append((f, float(v)))
        return out


def _surface(obj):
    return TrajectorySurface(obj) if isinstance(obj, Trajectory) else obj


def envelope(surface, t: float, x: np.ndarray, upper: bool) -> np.ndarray:
    """u* (upper) or u_* (lower) at time t, including the limit from earlier times."""
    xs = np.asarray(x) % 1.0
    now, before = surface.profile(t), surface.profile_before(t)
    if upper:
        return np.maximum(now.upper(xs), before.upper(xs))
    return np.minimum(now.lower(xs), before.lower(xs))


# -- admissible test functions -----------------------------------------------------


@dataclass(frozen=True)
class FacetSpec:
    c_l: float
    c_r: float
    slope: float
    chi_l: int
    chi_r: int


@dataclass(frozen=True)
class AdmissibleTest:
    """phi(t, x) = f(x) + g(t) on the window [x_lo, x_hi] x [t_lo, t_hi].

    ``x`` is an unwrapped coordinate; the solution is read at x mod 1.
    """

    f: Callable
    df: Callable
    d2f: Callable
    g: Callable
    dg: Callable
    window: tuple
    t_range: tuple
    facets: tuple = ()
    name: str = ""

    def __post_init__(self):
        if not self.window[1] - self.window[0] < 1.0:
            raise ValueError("spatial window must be shorter than the torus")
        if not self.t_range[0] < self.t_range[1]:
            raise ValueError("empty time window")

    def facet_at(self, x: float) -> FacetSpec | None:
        for fc in self.facets:
            if fc.c_l <= x <= fc.c_r:
                return fc
        return None

    def validate(self, e: PLEnergy, n: int = 4001) -> None:
        """Check C2_P membership on a sample of the window."""
        P = np.asarray(e.breakpoints)
        for fc in self.facets:
            if not np.any(P == fc.slope):
                raise ValueError(f"facet slope {fc.slope} is not in P")
        x = np.linspace(*self.window, n)
        off = np.array([self.facet_at(xi) is None for xi in x])
        d = np.abs(np.asarray(self.df(x))[off][:, None] - P)
        if d.size and d.min() < 1e-12:
            raise ValueError("f' meets P outside the recorded facets")


def facet_test(
    c_l: float,
    c_r: float,
    level: float,
    slope: float,
    chi_l: int,
    chi_r: int,
    speed: float,
    t_range: tuple,
    margin: float = 0.1,
    curvature: float = 1.0,
    name: str = "",
) -> AdmissibleTest:
    """Flat facet of the given slope on [c_l, c_r] with quadratic arcs.

    The arcs bend away from the facet slope as the transition numbers
    prescribe: chi = +1 means f' < slope on the left and f' > slope on the
    right.  g is linear with the given speed, anchored at the window end.
    """
    K = float(curvature)
    t1 = t_range[1]

    def f(x):
        x = np.asarray(x, dtype=float)
        base = level + slope * (x - c_l)
        left = chi_l * K * np.minimum(x - c_l, 0.0) ** 2
        right = chi_r * K * np.maximum(x - c_r, 0.0) ** 2
        return base + left + right

    def df(x):
        x = np.asarray(x, dtype=float)
        return slope + 2 * chi_l * K * np.minimum(x - c_l, 0.0) + 2 * chi_r * K * np.maximum(x - c_r, 0.0)

    def d2f(x):
        x = np.asarray(x, dtype=float)
        return np.where(x < c_l, 2 * chi_l * K, np.where(x > c_r, 2 * chi_r * K, 0.0))

    return AdmissibleTest(
        f, df, d2f,
        lambda t: speed * (np.asarray(t) - t1),
        lambda t: speed,
        (c_l - margin, c_r + margin),
        tuple(t_range),
        (FacetSpec(c_l, c_r, slope, chi_l, chi_r),),
        name,
    )


def smooth_test(
    x0: float,
    level: float,
    slope: float,
    curvature: float,
    speed: float,
    t_range: tuple,
    half_width: float,
    name: str = "",
) -> AdmissibleTest:
    """Quadratic f = level + slope (x - x0) + curvature/2 (x - x0)^2 near x0."""
    t1 = t_range[1]
    return AdmissibleTest(
        lambda x: level + slope * (np.asarray(x) - x0) + 0.5 * curvature * (np.asarray(x) - x0) ** 2,
        lambda x: slope + curvature * (np.asarray(x) - x0),
        lambda x: np.full(np.shape(x), float(curvature)),
        lambda t: speed * (np.asarray(t) - t1),
        lambda t: speed,
        (x0 - half_width, x0 + half_width),
        tuple(t_range),
        (),
        name,
    )


def touch_curvature(test: AdmissibleTest, e: PLEnergy, x: float) -> float:
    """Lambda_W(f)(x): facet speed on a facet, W''(f') f'' = 0 elsewhere."""
    fc = test.facet_at(x)
    if fc is None:
        return 0.0  # piecewise-linear W has W'' = 0 off P
    return lambda_affine(FacetData(fc.c_l, fc.c_r, fc.chi_l, fc.chi_r, jump_at(e, fc.slope), fc.slope))


# -- touching --------------------------------------------------------------------------


@dataclass
class TouchReport:
    name: str
    side: str  # "sub" or "super"
    t: float
    x: float
    phi_t: float
    curvature: float
    margin: float
    status: str  # "pass", "fail" or "inconclusive"
    shift: float = 0.0  # vertical normalization of g

    def to_dict(self) -> dict:
        return asdict(self)


def _gap(surface, test: AdmissibleTest, ts, xs, upper: bool) -> np.ndarray:
    fx = test.f(xs)
    rows = [envelope(surface, t, xs, upper) - fx - test.g(t) for t in ts]
    d = np.array(rows)
    return d if upper else -d


def _argmax(d: np.ndarray, ts, xs):
    """Lattice maximizer; ties go to the latest time, then the median position."""
    top = d.max()
    tie = d >= top - 1e-12 * (1.0 + abs(top))
    i = np.flatnonzero(tie.any(axis=1))[-1]
    js = np.flatnonzero(tie[i])
    return ts[i], xs[js[len(js) // 2]], top


def locate_touch(
    surface, test: AdmissibleTest, upper: bool, nt: int = 33, nx: int = 257, tol: float = 1e-6, n_zoom: int = 9
):
    """Maximize u* - phi (or phi - u_*) on a lattice refined around the maximizer.

    After the coarse pass, an n_zoom x n_zoom lattice is centred on the
    current maximizer and halved in extent until the maximizer moves less
    than tol.
    """
    t_lo, t_hi = test.t_range
    x_lo, x_hi = test.window
    ts, xs = np.linspace(t_lo, t_hi, nt), np.linspace(x_lo, x_hi, nx)
    t_hat, x_hat, top = _argmax(_gap(surface, test, ts, xs, upper), ts, xs)
    span_t, span_x = 2 * (t_hi - t_lo) / (nt - 1), 2 * (x_hi - x_lo) / (nx - 1)
    for _ in range(60):
        ts = np.linspace(max(t_lo, t_hat - span_t), min(t_hi, t_hat + span_t), n_zoom)
        xs = np.linspace(max(x_lo, x_hat - span_x), min(x_hi, x_hat + span_x), n_zoom)
        t_new, x_new, top_new = _argmax(_gap(surface, test, ts, xs, upper), ts, xs)
        moved = max(abs(t_new - t_hat), abs(x_new - x_hat))
        if top_new >= top - 1e-12 * (1.0 + abs(top)):
            t_hat, x_hat, top = t_new, x_new, max(top, top_new)
        span_t, span_x = span_t / 2, span_x / 2
        if moved < tol and max(span_t, span_x) < tol:
            break
    return float(t_hat), float(x_hat), float(top)


def _check(surface, test: AdmissibleTest, upper: bool) -> TouchReport:
    e = surface.energy
    t, x, top = locate_touch(surface, test, upper)
    lam = touch_curvature(test, e, x)
    phi_t = float(test.dg(t))
    margin = lam - phi_t if upper else phi_t - lam
    t_lo = test.t_range[0]
    x_lo, x_hi = test.window
    edge = t - t_lo <= 1e-9 * max(1.0, abs(t_lo)) or min(x - x_lo, x_hi - x) <= 1e-9
    if edge:
        status = "inconclusive"
    else:
        status = "pass" if margin >= -MARGIN_TOL else "fail"
    return TouchReport(test.name, "sub" if upper else "super", t, x, phi_t, lam, margin, status,
                       top if upper else -top)


def _run(surface, tests, upper: bool, jobs: int) -> list[TouchReport]:
    surface = _surface(surface)
    if jobs > 1:
        with ThreadPoolExecutor(jobs) as ex:
            reports = list(ex.map(lambda tst: _check(surface, tst, upper), tests))
    else:
        reports = [_check(surface, tst, upper) for tst in tests]
    return sorted(reports, key=lambda r: (r.t, r.x, r.name))


def check_subsolution(traj, tests: Sequence[AdmissibleTest], jobs: int = 1) -> list[TouchReport]:
    """Touch u* from above; pass when phi_t - Lambda_W <= 0 (margin = Lambda_W - phi_t)."""
    return _run(traj, tests, True, jobs)


def check_supersolution(traj, tests: Sequence[AdmissibleTest], jobs: int = 1) -> list[TouchReport]:
    """Touch u_* from below; pass when phi_t - Lambda_W >= 0."""
    return _run(traj, tests, False, jobs)


def snapshot_times(surface, n: int = 4) -> list[float]:
    """n times in (0, t_end) kept away from events."""
    surface = _surface(surface)
    out = []
    for k in range(n):
        t = surface.t_end * (k + 0.5) / n
        if any(abs(t - s) < 1e-6 * surface.t_end for s in surface.event_times):
            t += 0.1 * surface.t_end / n
        out.append(t)
    return out


def _time_window(surface, t: float) -> tuple[float, float]:
    near = [abs(t - s) for s in surface.event_times] + [t, surface.t_end - t]
    d = 0.5 * min(x for x in near if x > 0)
    return (t - d, t + d)


def standard_battery(surface, upper: bool, times=None) -> list[AdmissibleTest]:
    """Facet-aligned tests (matched, longer, shorter) at three speeds per facet,
    plus quadratic tests at the midpoints of non-facet segments."""
    surface = _surface(surface)
    e = surface.energy
    P = np.asarray(e.breakpoints)
    tests = []
    for ts in snapshot_times(surface) if times is None else times:
        window = _time_window(surface, ts)
        prof = surface.profile(ts)
        for fd, v in surface.facets(ts):
            L = fd.length
            if L >= 0.9:
                continue  # no room for a window shorter than the torus
            mid = 0.5 * (fd.c_l + fd.c_r)
            level = prof(mid % 1.0) - fd.slope_p * (mid - fd.c_l)
            pad = min(0.1, 0.3 * (1.0 - L))  # window L + 3 pad stays inside the torus
            for label, cl, cr in (
                ("matched", fd.c_l, fd.c_r),
                ("longer", fd.c_l - pad / 2, fd.c_r + pad / 2),
                ("shorter", fd.c_l + L / 4, fd.c_r - L / 4),
            ):
                lev = level + fd.slope_p * (cl - fd.c_l)
                others = P[P != fd.slope_p]
                gap = np.min(np.abs(others - fd.slope_p)) if others.size else np.inf
                K = min(1.0, 0.45 * gap / (pad / 2 + pad))
                for dv in (0.0, 1.0, -1.0):
                    tests.append(facet_test(
                        cl, cr, lev, fd.slope_p, fd.chi_l, fd.chi_r, v + dv, window,
                        margin=pad, curvature=K,
                        name=f"facet {label} t={ts:.6g} x={mid % 1.0:.6g} dv={dv:+g}",
                    ))
        # quadratic tests on continuous non-facet segments
        ends = np.append(prof.nodes, prof.nodes[0] + 1.0)
        for i in range(prof.size):
            s = prof.slopes[i]
            dist = np.min(np.abs(P - s))
            if dist == 0.0:
                continue
            x0 = 0.5 * (ends[i] + ends[i + 1])
            hw = 0.25 * (ends[i + 1] - ends[i])
            K = 0.5 * dist / hw
            sign = 1.0 if upper else -1.0
            for dv in (0.0, 1.0, -1.0):
                tests.append(smooth_test(
                    x0, float(prof(x0 % 1.0)), s, sign * K, dv, window, hw,
                    name=f"smooth t={ts:.6g} x={x0 % 1.0:.6g} dv={dv:+g}",
                ))
    return tests


@dataclass
class ViscosityReport:
    reports: list
    side: str

    @property
    def min_margin(self) -> float:
        conclusive = [r.margin for r in self.reports if r.status != "inconclusive"]
        return min(conclusive) if conclusive else float("inf")

    @property
    def passed(self) -> bool:
        return all(r.status != "fail" for r in self.reports)

    def counts(self) -> dict:
        out = {"pass": 0, "fail": 0, "inconclusive": 0}
        for r in self.reports:
            out[r.status] += 1
        return out

    def to_dict(self) -> dict:
        return {"side": self.side, "passed": self.passed, "min_margin": self.min_margin,
                "counts": self.counts(), "reports": [r.to_dict() for r in self.reports]}


def viscosity_suite(traj, jobs: int = 1) -> tuple[ViscosityReport, ViscosityReport]:
    """Standard battery on both branches."""
    s = _surface(traj)
    sub = check_subsolution(s, standard_battery(s, True), jobs)
    sup = check_supersolution(s, standard_battery(s, False), jobs)
    return ViscosityReport(sub, "sub"), ViscosityReport(sup, "super")


# -- stability under extremum ------------------------------------------------------


def sup_stability_check(e: PLEnergy, family: Sequence[BVFunction], t_end: float, jobs: int = 1) -> ViscosityReport:
    """Evolve each member; the pointwise sup must pass the subsolution battery."""
    members = [TrajectorySurface(evolve(u0, e, t_end)) for u0 in family]
    env = members[0] if len(members) == 1 else EnvelopeSurface(members, "max")
    return ViscosityReport(check_subsolution(env, standard_battery(env, True), jobs), "sub")


def inf_stability_check(e: PLEnergy, family: Sequence[BVFunction], t_end: float, jobs: int = 1) -> ViscosityReport:
    members = [TrajectorySurface(evolve(u0, e, t_end)) for u0 in family]
    env = members[0] if len(members) == 1 else EnvelopeSurface(members, "min")
    return ViscosityReport(check_supersolution(env, standard_battery(env, False), jobs), "super")


# -- comparison ------------------------------------------------------------------------


def _lattice(t_end: float, nt: int, nx: int):
    return np.linspace(0.0, t_end, nt), (np.arange(nx) + 0.5) / nx


def is_ordered(u0: BVFunction, v0: BVFunction, nx: int = 2048) -> bool:
    x = np.union1d((np.arange(nx) + 0.5) / nx, np.union1d(u0.nodes, v0.nodes))
    return bool(np.all(u0.upper(x) <= v0.lower(x) + ORDER_SLACK) or np.all(u0(x) <= v0(x) + ORDER_SLACK))


@dataclass
class ComparisonReport:
    n_pairs: int
    rejected: list  # indices failing the ordering pre-check
    violations: list  # (pair, t, x, excess)
    max_excess: float

    @property
    def passed(self) -> bool:
        return not self.violations

    def to_dict(self) -> dict:
        d = asdict(self)
        d["passed"] = self.passed
        return d


def comparison_sweep(e: PLEnergy, pairs, t_end: float = 0.25, nt: int = 65, nx: int = 1024) -> ComparisonReport:
    """Evolve ordered pairs and check u <= v on a space-time lattice (slack 1e-9)."""
    ts, xs = _lattice(t_end, nt, nx)
    rejected, violations, worst = [], [], -np.inf
    for k, (u0, v0) in enumerate(pairs):
        if not is_ordered(u0, v0):
            rejected.append(k)
            continue
        tu, tv = evolve(u0, e, t_end), evolve(v0, e, t_end)
        for t in ts:
            excess = evaluate(tu, t)(xs) - evaluate(tv, t)(xs)
            worst = max(worst, float(excess.max()))
            j = int(np.argmax(excess))
            if excess[j] > ORDER_SLACK:
                violations.append((k, float(t), float(xs[j]), float(excess[j])))
    return ComparisonReport(len(pairs), rejected, violations, worst)


# -- approximation witness -------------------------------------------------------------


@dataclass
class WitnessReport:
    ks: list
    times: list
    l1_gap: list  # per k, per time: int (upper_k - lower_k) evolved
    envelope_gap: list  # per time: int (inf upper - sup lower)
    tolerance: float  # L1 gap of the finest pair at t = 0
    order_violation: float  # max of (sup lower - u) and (u - inf upper)

    @property
    def passed(self) -> bool:
        gaps = np.array(self.l1_gap)
        monotone = bool(np.all(np.diff(gaps, axis=0) <= ORDER_SLACK))
        return (
            self.order_violation <= ORDER_SLACK
            and max(self.envelope_gap) <= 2.0 * self.tolerance
            and monotone
        )

    def to_dict(self) -> dict:
        d = asdict(self)
        d["passed"] = self.passed
        return d


def approximation_witness(
    u0: BVFunction, e: PLEnergy, ks=(4, 16, 64), t_end: float = 0.25, nt: int = 17, nx: int = 2048
) -> WitnessReport:
    """Sup of evolved lower approximants against inf of evolved upper ones.

    Both sandwich the evolved datum, and their L1 gap stays within twice the
    L1 gap of the finest pair at t = 0, shrinking along the k ladder.
    """
    ts, xs = _lattice(t_end, nt, nx)
    main = evolve(u0, e, t_end)
    lows = [evolve(lower_approx(u0, k), e, t_end) for k in ks]
    ups = [evolve(upper_approx(u0, k), e, t_end) for k in ks]
    l1 = [[float(np.mean(evaluate(b, t)(xs) - evaluate(a, t)(xs))) for t in ts] for a, b in zip(lows, ups)]
    env_gap, worst = [], -np.inf
    for t in ts:
        v = np.max([evaluate(a, t)(xs) for a in lows], axis=0)
        w = np.min([evaluate(b, t)(xs) for b in ups], axis=0)
        u = evaluate(main, t)(xs)
        env_gap.append(float(np.mean(w - v)))
        worst = max(worst, float(np.max(v - u)), float(np.max(u - w)))
    return WitnessReport(list(ks), ts.tolist(), l1, env_gap, l1[-1][0], worst)


# -- cross-solver validation -----------------------------------------------------------


@dataclass
class CrossRow:
    epsilon: float
    n: int
    t: float
    sup: float  # off the smoothed layers around crystalline jumps
    l2: float
    band: float


@dataclass
class CrossValidation:
    rows: list = field(default_factory=list)

    def distances(self, kind: str = "sup") -> dict:
        """Largest distance over the sampled times, per (epsilon, n)."""
        out: dict = {}
        for r in self.rows:
            key = (r.epsilon, r.n)
            out[key] = max(out.get(key, 0.0), getattr(r, kind))
        return out

    def monotone(self, kind: str = "sup") -> bool:
        d = list(self.distances(kind).values())
        return all(b <= a for a, b in zip(d, d[1:]))

    def to_dict(self) -> dict:
        return {"rows": [asdict(r) for r in self.rows], "monotone_sup": self.monotone("sup"),
                "monotone_l2": self.monotone("l2")}


def _regularized_run(args):
    u0, e, eps, n, t_samples, tau = args
    sol, _ = solve(u0, e, eps, n, max(t_samples), tau=tau, snapshot_times=t_samples)
    return [sol.at(t) for t in t_samples]


def jump_distance(u: BVFunction, x: np.ndarray) -> np.ndarray:
    """Torus distance from each x to the jump set of u (inf if u is continuous)."""
    J = u.nodes[np.abs(u.jumps) > JUMP_TOL]
    if J.size == 0:
        return np.full(np.shape(x), np.inf)
    d = np.abs(np.asarray(x)[:, None] - J) % 1.0
    return np.min(np.minimum(d, 1.0 - d), axis=1)


def cross_validate(u0: BVFunction, e: PLEnergy, ladder, t_samples, jobs: int = 1, tau_fraction: float | None = None) -> CrossValidation:
    """Regularized solves over the (epsilon, n) ladder against the crystalline solve.

    Sup distances skip nodes within ``layer_width`` of a crystalline jump;
    L2 distances use every node.
    """
    t_samples = sorted(float(t) for t in t_samples)
    traj = evolve(u0, e, max(t_samples))
    jobs_args = [(u0, e, eps, n, t_samples, None if tau_fraction is None else tau_fraction / n) for eps, n in ladder]
    if jobs > 1:
        with ProcessPoolExecutor(jobs) as ex:
            results = list(ex.map(_regularized_run, jobs_args))
    else:
        results = [_regularized_run(a) for a in jobs_args]
    table = CrossValidation()
    for (eps, n), snaps in zip(ladder, results):
        x = np.arange(n) / n
        for t, ur in zip(t_samples, snaps):
            uc = evaluate(traj, t)
            exact = 0.5 * (uc(x, "left") + uc(x))
            band = float(layer_width(eps, n, t))
            keep = jump_distance(uc, x) >= band
            diff = np.abs(ur - exact)
            table.rows.append(CrossRow(eps, n, t, float(diff[keep].max()) if keep.any() else 0.0,
                                       float(np.sqrt(np.mean(diff**2))), band))
    return table


def write_json(report, path) -> None:
    with open(path, "w") as fh:
        json.dump(report.to_dict(), fh, indent=2, sort_keys=True)
