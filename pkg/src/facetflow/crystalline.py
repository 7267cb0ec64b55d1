"""Exact event-driven facet evolution for piecewise-linear W.

The profile is a cyclic chain of straight segments.  Segment i carries the
line ``y = levels[i] + slopes[i] * x`` in unwrapped coordinates and spans
``[X_i, X_{i+1}]`` with ``X_m = X_0 + 1``.  Node i (left end of segment i)
is either a jump, with a fixed position, or continuous, in which case its
position is the intersection of the two adjacent lines whenever one of them
can move.

Only facets (segments whose slope lies in P) move: vertically at speed
kappa / length with kappa = (chi_l + chi_r) * delta / 2.  A moving facet
whose neighbours are stationary has a closed-form law (length squared is
affine in time); adjacent moving facets are integrated numerically.
"""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import solve_ivp
from scipy.optimize import brentq, least_squares

from .bvfunc import BVFunction
from .energy import PLEnergy, jump_at
from .obstacle import FacetData

log = logging.getLogger(__name__)

SNAP_TOL = 1e-12  # slopes this close to P are snapped onto it
EVENT_TOL = 1e-11  # lengths and jump heights below this are removed
DROP_LENGTH = 1e-14  # segments shorter than this are dropped on output
SEED_LENGTH = 1e-10  # newborn coupled facets start at least this long
MAX_EVENTS = 1_000_000
N_SCAN = 1024


class ZenoError(RuntimeError):
    pass


class EvolutionError(RuntimeError):
    pass


# -- configuration -------------------------------------------------------------


@dataclass
class _Config:
    time: float
    slopes: np.ndarray
    levels: np.ndarray
    is_jump: np.ndarray  # node i sits at the left end of segment i
    node_x: np.ndarray  # authoritative for jumps and frozen continuous nodes
    ids: np.ndarray
    facet: np.ndarray = field(init=False)

    def __post_init__(self):
        self.slopes = np.asarray(self.slopes, dtype=float)
        self.levels = np.asarray(self.levels, dtype=float)
        self.is_jump = np.asarray(self.is_jump, dtype=bool)
        self.node_x = np.asarray(self.node_x, dtype=float)
        self.ids = np.asarray(self.ids, dtype=int)
        self.facet = np.zeros(self.m, dtype=bool)

    @property
    def m(self) -> int:
        return self.slopes.size

    def copy(self) -> "_Config":
        c = _Config(self.time, self.slopes.copy(), self.levels.copy(), self.is_jump.copy(), self.node_x.copy(), self.ids.copy())
        c.facet = self.facet.copy()
        return c

    def _prev(self) -> np.ndarray:
        return np.arange(-1, self.m - 1) % self.m

    def _next(self) -> np.ndarray:
        return np.arange(1, self.m + 1) % self.m

    def dynamic_nodes(self) -> np.ndarray:
        """Continuous nodes whose position follows a facet line."""
        if self.m == 1:
            return np.zeros(1, dtype=bool)
        prev = self._prev()
        kink = self.slopes[prev] != self.slopes
        return ~self.is_jump & kink & (self.facet | self.facet[prev])

    def _left_levels(self, c):
        prev = c[self._prev()]
        prev[0] = prev[0] + self.slopes[-1]
        return prev

    def positions(self, levels=None) -> np.ndarray:
        """Node positions; ``levels`` may carry trailing time axes."""
        c = self.levels if levels is None else levels
        shape = (-1,) + (1,) * (np.ndim(c) - 1)
        X = np.broadcast_to(self.node_x.reshape(shape), np.shape(c)).copy()
        dyn = self.dynamic_nodes()
        if np.any(dyn):
            prev = self._left_levels(c)
            ds = (self.slopes[self._prev()] - self.slopes)[dyn]
            X[dyn] = (c[dyn] - prev[dyn]) / ds.reshape(shape)
        return X

    def lengths(self, levels=None, X=None) -> np.ndarray:
        X = self.positions(levels) if X is None else X
        nxt = X[self._next()]
        nxt[-1] = nxt[-1] + 1.0
        return nxt - X

    def jumps(self, levels=None, X=None) -> np.ndarray:
        """right trace - left trace at every node."""
        c = self.levels if levels is None else levels
        X = self.positions(levels) if X is None else X
        shape = (-1,) + (1,) * (np.ndim(c) - 1)
        right = c + self.slopes.reshape(shape) * X
        left = self._left_levels(c) + self.slopes[self._prev()].reshape(shape) * X
        return right - left

    def chi(self):
        """Transition numbers for every segment (meaningful on facets)."""
        J = self.jumps()
        sprev, snext = np.roll(self.slopes, 1), np.roll(self.slopes, -1)
        Jnext = np.roll(J, -1)
        jl, jr = self.is_jump, np.roll(self.is_jump, -1)
        chi_l = np.where(jl, np.where(J > 0, -1, 1), np.where(sprev < self.slopes, 1, -1))
        chi_r = np.where(jr, np.where(Jnext > 0, 1, -1), np.where(snext > self.slopes, 1, -1))
        return chi_l.astype(int), chi_r.astype(int)


def _mark_facets(cfg: _Config, e: PLEnergy) -> None:
    cfg.facet = np.isin(cfg.slopes, e.P)


def _from_bv(u: BVFunction, e: PLEnergy) -> _Config:
    u = u.simplify()
    slopes = u.slopes.copy()
    P = e.P
    for i, s in enumerate(slopes):
        d = np.abs(P - s)
        j = int(np.argmin(d))
        if 0 < d[j] <= SNAP_TOL:
            log.warning("slope %.17g snapped to facet slope %.17g", s, P[j])
            slopes[i] = P[j]
    X = u.nodes.copy()
    levels = u.right_values - slopes * X
    m = X.size
    cfg = _Config(0.0, slopes, levels, np.zeros(m, bool), X, np.arange(m))
    cfg.is_jump = np.abs(cfg.jumps(X=X)) > EVENT_TOL
    if m == 1 and slopes[0] != 0.0:
        cfg.is_jump[0] = True
    _mark_facets(cfg, e)
    return cfg


def _to_bv(cfg: _Config, levels=None) -> BVFunction:
    c = cfg.levels if levels is None else levels
    X = cfg.positions(c)
    L = cfg.lengths(c, X)
    keep = L > DROP_LENGTH
    if not np.any(keep):
        keep[int(np.argmax(L))] = True
    X, s, c = X[keep], cfg.slopes[keep], c[keep]
    right = c + s * X
    x = X % 1.0
    x[x >= 1.0] = 0.0
    order = np.argsort(x, kind="stable")
    return BVFunction(x[order], right[order], s[order])


def _facet_data(cfg: _Config, e: PLEnergy) -> list[FacetData]:
    out = []
    X = cfg.positions()
    L = cfg.lengths(X=X)
    chi_l, chi_r = cfg.chi()
    for i in np.flatnonzero(cfg.facet):
        if L[i] <= DROP_LENGTH:
            continue
        p = cfg.slopes[i]
        if cfg.m == 1 and not cfg.is_jump[0]:
            out.append(FacetData(float(X[0]), float(X[0]) + 1.0, 1, -1, jump_at(e, p), p))
        else:
            out.append(FacetData(float(X[i]), float(X[i] + L[i]), int(chi_l[i]), int(chi_r[i]), jump_at(e, p), p))
    return out


# -- public state types ----------------------------------------------------------


@dataclass(frozen=True)
class CrystallineState:
    time: float
    profile: BVFunction
    facets: list
    _cfg: _Config = field(repr=False, compare=False, default=None)
    _energy: PLEnergy = field(repr=False, compare=False, default=None)


@dataclass(frozen=True)
class Piece:
    """Evolution between two consecutive events.

    ``mode`` is ``"closed"`` (per-facet kappa, alpha, L0, c0 with
    L(t)^2 = L0^2 + 2 alpha kappa (t - t0)), ``"ode"`` (dense output),
    or ``"static"``.
    """

    t0: float
    t1: float
    cfg: _Config = field(repr=False)
    mode: str
    moving: np.ndarray
    kappa: np.ndarray
    alpha: np.ndarray = None
    L0: np.ndarray = None
    c0: np.ndarray = None
    ode: object = field(default=None, repr=False)

    def levels(self, t):
        """Segment levels at time(s) t; shape (m,) or (m, len(t))."""
        t = np.asarray(t, dtype=float)
        c = np.repeat(self.cfg.levels[:, None], t.size, axis=1)
        if self.moving.size and self.mode == "closed":
            tau = np.maximum(t.ravel() - self.t0, 0.0)[None, :]
            a, k, L0 = self.alpha[:, None], self.kappa[:, None], self.L0[:, None]
            L = np.sqrt(np.maximum(L0**2 + 2.0 * a * k * tau, 0.0))
            denom = L + L0
            step = np.where(denom > 0, 2.0 * k * tau / np.where(denom > 0, denom, 1.0), 0.0)
            c[self.moving] = self.c0[:, None] + step
        elif self.moving.size and self.mode == "ode":
            c[self.moving] = self.ode(np.clip(t.ravel(), self.t0, self.t1))
        return c[:, 0] if t.ndim == 0 else c

    def facet_speeds(self, t: float) -> np.ndarray:
        """Vertical speeds of the moving facets at time t."""
        c = self.levels(t)
        L = self.cfg.lengths(c)
        return self.kappa / L[self.moving]


@dataclass(frozen=True)
class Trajectory:
    energy: PLEnergy
    pieces: tuple
    events: tuple  # dicts: time, kind, ids
    t_end: float
    speed_factor: float = 1.0

    @property
    def event_times(self) -> list[float]:
        return sorted({ev["time"] for ev in self.events if ev["kind"] != "birth" or ev["time"] > 0})

    @property
    def initial(self) -> BVFunction:
        return _to_bv(self.pieces[0].cfg)

    @property
    def final(self) -> BVFunction:
        return evaluate(self, self.t_end)


# -- dynamics of one piece -------------------------------------------------------------


def _kappa(cfg: _Config, e: PLEnergy, speed_factor: float) -> np.ndarray:
    chi_l, chi_r = cfg.chi()
    delta = np.array([jump_at(e, s) if f else 0.0 for s, f in zip(cfg.slopes, cfg.facet)])
    k = speed_factor * 0.5 * (chi_l + chi_r) * delta
    if cfg.m == 1:
        k[:] = 0.0  # a facet covering the whole torus has zero net transition
    return np.where(cfg.facet, k, 0.0)


def _coupled(cfg: _Config, moving: np.ndarray) -> bool:
    mv = np.zeros(cfg.m, bool)
    mv[moving] = True
    return bool(np.any(mv & np.roll(mv, 1) & ~cfg.is_jump)) if cfg.m > 1 else False


def _alpha(cfg: _Config, i: int) -> float:
    m = cfg.m
    a = 0.0
    if not cfg.is_jump[i]:
        a -= 1.0 / (cfg.slopes[(i - 1) % m] - cfg.slopes[i])
    if not cfg.is_jump[(i + 1) % m]:
        a += 1.0 / (cfg.slopes[(i + 1) % m] - cfg.slopes[i])
    return a


def _event_functions(cfg: _Config, moving: np.ndarray, coupled: bool):
    """Indices of watched lengths and jumps with their orientation signs."""
    m = cfg.m
    mv = np.zeros(m, bool)
    mv[moving] = True
    touched = mv | np.roll(mv, 1) | np.roll(mv, -1)
    seg = touched.copy() if coupled else touched & ~mv
    near = mv | np.roll(mv, 1)
    jmp = cfg.is_jump & near
    J0 = cfg.jumps()
    return np.flatnonzero(seg), np.flatnonzero(jmp), np.sign(J0[jmp])


def _similarity_seed(cfg: _Config, kappa: np.ndarray, newborn: np.ndarray) -> tuple[np.ndarray, float]:
    """Offsets eta (c = c0 + eta sqrt(dt)) for newborn facet chains and the seed dt."""
    m = cfg.m
    eta = np.zeros(m)
    ell_min = np.inf
    nb = np.zeros(m, bool)
    nb[newborn] = True
    visited = np.zeros(m, bool)
    for start in newborn:
        if visited[start]:
            continue
        first = start
        while m > 1 and nb[(first - 1) % m] and not cfg.is_jump[first] and (first - 1) % m != start:
            first = (first - 1) % m
        chain = [first]
        j = first
        while nb[(j + 1) % m] and not cfg.is_jump[(j + 1) % m] and (j + 1) % m != first:
            j = (j + 1) % m
            chain.append(j)
        visited[chain] = True
        p = cfg.slopes[chain]
        k = kappa[chain]
        left_line = not cfg.is_jump[chain[0]]
        right_line = not cfg.is_jump[(chain[-1] + 1) % m]
        sL = cfg.slopes[(chain[0] - 1) % m]
        sR = cfg.slopes[(chain[-1] + 1) % m]

        def ells(d):
            x = np.empty(len(chain) + 1)
            x[0] = d[0] / (sL - p[0]) if left_line else 0.0
            x[1:-1] = (d[1:] - d[:-1]) / (p[:-1] - p[1:])
            x[-1] = d[-1] / (sR - p[-1]) if right_line else 0.0
            return np.diff(x)

        nbrs = np.concatenate([[sL], p, [sR]])
        a0 = np.array(
            [
                (1.0 / (nbrs[q + 2] - p[q]) if (q < len(chain) - 1 or right_line) else 0.0)
                - (1.0 / (nbrs[q] - p[q]) if (q > 0 or left_line) else 0.0)
                for q in range(len(chain))
            ]
        )
        # unknowns: log lengths; eta = 2 kappa / ell keeps every length positive
        resid = lambda z: np.log(ells(2.0 * k / np.exp(z))) - z if np.all(ells(2.0 * k / np.exp(z)) > 0) else np.full(z.size, 1e3)
        base = np.log(np.sqrt(np.abs(2.0 * a0 * k)) + 1e-3)
        sol = None
        for scale in (1.0, 3.0, 10.0, 0.3, 30.0, 0.1):
            z0 = base + np.log(scale)
            r = least_squares(resid, z0, xtol=1e-15, ftol=1e-15, gtol=1e-15)
            if r.cost < 1e-24:
                sol = 2.0 * k / np.exp(r.x)
                break
        if sol is None:
            raise EvolutionError(f"no similarity profile for newborn facets {chain}")
        ell = ells(sol)
        eta[chain] = sol
        ell_min = min(ell_min, float(np.min(ell)))
    dt = (SEED_LENGTH / ell_min) ** 2 if np.isfinite(ell_min) else 0.0
    return eta, dt


def _next_piece(cfg: _Config, e: PLEnergy, t_end: float, speed_factor: float):
    """Build the piece starting at cfg.time; returns (piece, trigger) where
    trigger is None when t_end is reached, else ("length"|"jump", index)."""
    t0 = cfg.time
    kappa = _kappa(cfg, e, speed_factor)
    moving = np.flatnonzero(kappa != 0.0)
    if moving.size == 0 or t0 >= t_end:
        return Piece(t0, t_end, cfg, "static", moving, kappa[moving]), None
    coupled = _coupled(cfg, moving)
    seg_idx, jump_idx, jump_sign = _event_functions(cfg, moving, coupled)

    def g_all(c):
        X = cfg.positions(c)
        parts = [cfg.lengths(c, X)[seg_idx]]
        if jump_idx.size:
            J = cfg.jumps(c, X)[jump_idx]
            parts.append(J * jump_sign.reshape((-1,) + (1,) * (np.ndim(c) - 1)))
        return np.concatenate(parts, axis=0)

    if not coupled:
        alpha = np.array([_alpha(cfg, i) for i in moving])
        L0 = cfg.lengths()[moving]
        piece = Piece(t0, t_end, cfg, "closed", moving, kappa[moving], alpha, L0, cfg.levels[moving].copy())
        return _first_root(piece, g_all, seg_idx.size, t0, t_end)

    # coupled facets: seed zero-length newborns, then integrate
    L = cfg.lengths()
    newborn = moving[L[moving] <= EVENT_TOL]
    if newborn.size:
        eta, dt = _similarity_seed(cfg, kappa, newborn)
        cfg = cfg.copy()
        cfg.levels = cfg.levels + eta * math.sqrt(dt)
        cfg.time = t0 + dt
        return _next_piece(cfg, e, t_end, speed_factor)

    def rhs(t, y):
        c = cfg.levels.copy()
        c[moving] = y
        return kappa[moving] / cfg.lengths(c)[moving]

    n_watch = seg_idx.size + jump_idx.size
    cache = {}

    def watched(t, y):
        key = (t, y.tobytes())
        if key not in cache:
            cache.clear()
            c = cfg.levels.copy()
            c[moving] = y
            cache[key] = g_all(c)
        return cache[key]

    events = []
    for q in range(n_watch):

        def ev(t, y, q=q):
            return watched(t, y)[q]

        ev.terminal = True
        ev.direction = -1
        events.append(ev)
    sol = solve_ivp(rhs, (t0, t_end), cfg.levels[moving], method="DOP853", rtol=1e-12, atol=1e-14, events=events, dense_output=True)
    if sol.status == -1:
        raise EvolutionError(sol.message)
    t1, trig = t_end, None
    for q, te in enumerate(sol.t_events):
        if te.size and te[0] < t1:
            t1 = float(te[0])
            trig = ("length", int(seg_idx[q])) if q < seg_idx.size else ("jump", int(jump_idx[q - seg_idx.size]))
    piece = Piece(t0, t1, cfg, "ode", moving, kappa[moving], ode=sol.sol)
    return piece, trig


def _first_root(piece: Piece, g_all, n_seg: int, t0: float, t_end: float):
    span = t_end - t0
    ts = t0 + span * (np.arange(N_SCAN + 1) / N_SCAN) ** 2
    g = g_all(piece.levels(ts))
    if g.shape[0] == 0:
        return piece, None
    neg = g <= 0.0
    neg[:, 0] = False
    hits = np.flatnonzero(np.any(neg, axis=0))
    if hits.size == 0:
        return piece, None
    j = int(hits[0])
    a, b = ts[j - 1], ts[j]
    best, trig = b, None
    for q in np.flatnonzero(neg[:, j]):
        f = lambda t, q=q: float(g_all(piece.levels(np.array([t])))[q, 0])
        fa = f(a)
        r = a if fa <= 0 else brentq(f, a, b, xtol=1e-15, rtol=4 * np.finfo(float).eps)
        if r < best or trig is None:
            best = r
            trig = ("length", q) if q < n_seg else ("jump", q - n_seg)
    kind, q = trig
    seg_idx_all = _watch_index(piece, kind, q, n_seg)
    return (
        Piece(piece.t0, float(best), piece.cfg, piece.mode, piece.moving, piece.kappa, piece.alpha, piece.L0, piece.c0),
        (kind, seg_idx_all),
    )


def _watch_index(piece: Piece, kind: str, q: int, n_seg: int) -> int:
    seg_idx, jump_idx, _ = _event_functions(piece.cfg, piece.moving, piece.mode == "ode")
    return int(seg_idx[q]) if kind == "length" else int(jump_idx[q])


# -- restructuring -------------------------------------------------------------------


def _normalize(cfg: _Config, e: PLEnergy, events: list, next_id: list, trigger=None) -> _Config:
    """Remove vanished segments, close vanished jumps, merge equal slopes, seed births."""
    forced_len = {trigger[1]} if trigger and trigger[0] == "length" else set()
    forced_jump = {trigger[1]} if trigger and trigger[0] == "jump" else set()
    t = cfg.time
    # freeze current positions so restructuring is purely combinatorial
    X = cfg.positions()
    segs = [
        dict(s=float(cfg.slopes[i]), c=float(cfg.levels[i]), x=float(X[i]), jump=bool(cfg.is_jump[i]), id=int(cfg.ids[i]))
        for i in range(cfg.m)
    ]
    L = cfg.lengths(X=X)
    J = cfg.jumps(X=X)
    for i in range(cfg.m):
        if segs[i]["jump"] and (abs(J[i]) <= EVENT_TOL or i in forced_jump):
            segs[i]["jump"] = False
            events.append(dict(time=t, kind="jump_closure", ids=[segs[i - 1]["id"], segs[i]["id"]], x=segs[i]["x"] % 1.0))
    # vanished segments, processed left to right
    gone = [i for i in range(cfg.m) if (L[i] <= EVENT_TOL or i in forced_len)]
    if len(gone) == cfg.m:
        gone = gone[1:]
    for i in gone:
        events.append(dict(time=t, kind="vanish", ids=[segs[i]["id"]], x=segs[i]["x"] % 1.0))
    keep_flags = [i not in gone for i in range(cfg.m)]
    out = []
    m = cfg.m
    for i in range(m):
        if not keep_flags[i]:
            continue
        seg = dict(segs[i])
        # walk left through removed segments; any jump among their nodes survives
        j = i
        while not keep_flags[(j - 1) % m] and (j - 1) % m != i:
            j = (j - 1) % m
            if segs[j]["jump"]:
                seg["jump"] = True
                seg["x"] = segs[j]["x"] - (1.0 if j > i else 0.0)
        if j != i and not seg["jump"]:
            seg["x"] = segs[j]["x"] - (1.0 if j > i else 0.0)
        out.append(seg)
    # unwrapped positions must stay increasing; wrap the anchor back into range
    out = _rebuild(out)
    cfg = _assemble(out, t, e)
    # jumps that are now negligible become continuous nodes
    J = cfg.jumps()
    cfg.is_jump &= np.abs(J) > EVENT_TOL
    if cfg.m == 1 and cfg.slopes[0] != 0.0 and not cfg.is_jump[0]:
        cfg.is_jump[0] = True
    cfg = _merge_equal(cfg, e, events)
    cfg = _births(cfg, e, events, next_id)
    return cfg


def _rebuild(segs: list) -> list:
    """Shift so the first node lies in [0, 1) and keep positions increasing."""
    n = math.floor(segs[0]["x"])
    for s in segs:
        s["c"] = s["c"] + s["s"] * n
        s["x"] = s["x"] - n
    for a, b in zip(segs, segs[1:]):
        while b["x"] < a["x"] - 0.5:
            b["c"] = b["c"] - b["s"]
            b["x"] = b["x"] + 1.0
    return segs


def _assemble(segs: list, t: float, e: PLEnergy) -> _Config:
    cfg = _Config(
        t,
        [s["s"] for s in segs],
        [s["c"] for s in segs],
        [s["jump"] for s in segs],
        [s["x"] for s in segs],
        [s["id"] for s in segs],
    )
    _mark_facets(cfg, e)
    # frozen continuous nodes keep the geometric intersection when it is well defined
    X = cfg.positions()
    cfg.node_x = np.where(cfg.is_jump, cfg.node_x, _frozen_positions(cfg, X))
    return cfg


def _frozen_positions(cfg: _Config, X: np.ndarray) -> np.ndarray:
    sprev = np.roll(cfg.slopes, 1)
    prev = np.roll(cfg.levels, 1)
    if cfg.m > 1:
        prev[0] += cfg.slopes[-1]
    ds = sprev - cfg.slopes
    with np.errstate(divide="ignore", invalid="ignore"):
        inter = (cfg.levels - prev) / ds
    ok = (np.abs(ds) > 1e-9) & (np.abs(inter - cfg.node_x) < 1e-6)
    return np.where(ok, inter, cfg.node_x)


def _merge_equal(cfg: _Config, e: PLEnergy, events: list) -> _Config:
    while cfg.m > 1:
        same = (cfg.slopes == np.roll(cfg.slopes, 1)) & ~cfg.is_jump
        if not np.any(same):
            break
        i = int(np.flatnonzero(same)[0])  # merge segment i into i-1
        k = (i - 1) % cfg.m
        L = cfg.lengths()
        wk, wi = L[k], L[i]
        ci = cfg.levels[i] - (cfg.slopes[i] if i == 0 else 0.0)  # express in segment k's frame
        level = (wk * cfg.levels[k] + wi * ci) / (wk + wi) if wk + wi > 0 else cfg.levels[k]
        keep_id, drop_id = sorted((int(cfg.ids[k]), int(cfg.ids[i])))
        events.append(dict(time=cfg.time, kind="merge", ids=[keep_id, drop_id], x=float(cfg.positions()[i] % 1.0)))
        segs = [
            dict(s=float(cfg.slopes[j]), c=float(cfg.levels[j]), x=float(cfg.node_x[j]), jump=bool(cfg.is_jump[j]), id=int(cfg.ids[j]))
            for j in range(cfg.m)
        ]
        X = cfg.positions()
        for j, s in enumerate(segs):
            s["x"] = float(X[j])
        segs[k]["c"] = float(level)
        segs[k]["id"] = keep_id
        if i == 0:
            # the merged segment now starts at node k; re-anchor there
            segs[k]["c"] += segs[k]["s"]
            segs[k]["x"] -= 1.0
            segs = [segs[k]] + segs[1:k]
        else:
            del segs[i]
        if len(segs) == 1 and segs[0]["s"] == 0.0:
            segs[0]["jump"] = False
        cfg = _assemble(_rebuild(segs), cfg.time, e)
    return cfg


def _births(cfg: _Config, e: PLEnergy, events: list, next_id: list) -> _Config:
    """Insert zero-length facets wherever adjacent slopes straddle P.

    A jump counts as an infinite slope, so both of its traces can sprout
    facets.  Several elements of P between the two slopes give a chain.
    """
    if cfg.m == 1 and not cfg.is_jump[0]:
        return cfg
    P = e.P
    J = cfg.jumps()
    X = cfg.positions()
    segs = []
    born = 0

    def newborn(p, y, x, jump):
        nonlocal born
        fid = next_id[0]
        next_id[0] += 1
        born += 1
        events.append(dict(time=cfg.time, kind="birth", ids=[fid], x=x % 1.0, slope=float(p)))
        return dict(s=float(p), c=float(y - p * x), x=x, jump=jump, id=fid)

    for i in range(cfg.m):
        s_prev, s_cur = cfg.slopes[i - 1], cfg.slopes[i]
        x = float(X[i])
        y_left = cfg.levels[i - 1] + (cfg.slopes[-1] if i == 0 else 0.0) + s_prev * x
        y_right = cfg.levels[i] + s_cur * x
        cur = dict(s=float(s_cur), c=float(cfg.levels[i]), x=x, jump=bool(cfg.is_jump[i]), id=int(cfg.ids[i]))
        if not cfg.is_jump[i]:
            ps = P[(P > min(s_prev, s_cur)) & (P < max(s_prev, s_cur))]
            ps = np.sort(ps) if s_cur > s_prev else np.sort(ps)[::-1]
            segs += [newborn(p, y_right, x, False) for p in ps]
            segs.append(cur)
            continue
        up = J[i] > 0
        # left trace: slope runs from s_prev towards +inf (up) or -inf (down)
        ps = P[P > s_prev] if up else P[P < s_prev]
        ps = np.sort(ps) if up else np.sort(ps)[::-1]
        segs += [newborn(p, y_left, x, False) for p in ps]
        # right trace: slope comes back from +-inf to s_cur
        ps = P[P > s_cur] if up else P[P < s_cur]
        ps = np.sort(ps)[::-1] if up else np.sort(ps)
        right = [newborn(p, y_right, x, False) for p in ps]
        (right[0] if right else cur)["jump"] = True
        if right:
            cur["jump"] = False
        segs += right + [cur]
    if not born:
        return cfg
    return _assemble(_rebuild(segs), cfg.time, e)


# -- public operations ---------------------------------------------------------------


def detect_facets(u: BVFunction, e: PLEnergy) -> CrystallineState:
    """Facet structure of u: maximal intervals with slope in P and their transition numbers."""
    cfg = _from_bv(u, e)
    return CrystallineState(0.0, _to_bv(cfg), _facet_data(cfg, e), cfg, e)


def _prepare(u0: BVFunction, e: PLEnergy, events: list, next_id: list) -> _Config:
    cfg = _from_bv(u0, e)
    next_id[0] = cfg.m
    return _normalize(cfg, e, events, next_id)


def step_to_next_event(state: CrystallineState, t_end: float = np.inf, speed_factor: float = 1.0):
    """Advance to the next structural event (or t_end).

    Returns the piece covering [state.time, t_event] and the post-event state.
    """
    e = state._energy
    cfg = state._cfg
    events: list = []
    next_id = [int(cfg.ids.max()) + 1]
    horizon = t_end if np.isfinite(t_end) else 1e6
    piece, trig = _next_piece(cfg, e, horizon, speed_factor)
    new = _advance(piece, trig, e, events, next_id)
    return piece, CrystallineState(new.time, _to_bv(new), _facet_data(new, e), new, e)


def _advance(piece: Piece, trig, e, events, next_id) -> _Config:
    cfg = piece.cfg.copy()
    cfg.levels = piece.levels(piece.t1)
    cfg.time = piece.t1
    if trig is None:
        return cfg
    return _normalize(cfg, e, events, next_id, trig)


def evolve(u0: BVFunction, e: PLEnergy, t_end: float, speed_factor: float = 1.0) -> Trajectory:
    """Evolve u0 until t_end through all facet events."""
    if not t_end > 0:
        raise ValueError("t_end must be positive")
    events: list = []
    next_id = [0]
    cfg = _prepare(u0, e, events, next_id)
    pieces = []
    n_events = 0
    while True:
        piece, trig = _next_piece(cfg, e, t_end, speed_factor)
        if piece.t0 > cfg.time:
            # a seeding step for newborn facets: record the frozen interval
            pieces.append(Piece(cfg.time, piece.t0, cfg, "static", np.array([], int), np.array([])))
        pieces.append(piece)
        if trig is None:
            break
        cfg = _advance(piece, trig, e, events, next_id)
        n_events += 1
        if n_events > MAX_EVENTS:
            raise ZenoError(f"more than {MAX_EVENTS} events before t={cfg.time}")
    return Trajectory(e, tuple(pieces), tuple(events), float(t_end), float(speed_factor))


def _piece_at(traj: Trajectory, t: float) -> Piece:
    if not 0.0 <= t <= traj.t_end:
        raise ValueError(f"t={t} outside [0, {traj.t_end}]")
    starts = [p.t0 for p in traj.pieces]
    k = int(np.searchsorted(starts, t, side="right")) - 1
    return traj.pieces[max(k, 0)]


def evaluate(traj: Trajectory, t: float) -> BVFunction:
    """Profile at time t; at event times the post-event profile."""
    piece = _piece_at(traj, float(t))
    if piece.t1 < t:  # t beyond the last event of a finished evolution
        t = piece.t1
    return _to_bv(piece.cfg, piece.levels(float(t)))


def evaluate_before(traj: Trajectory, t: float) -> BVFunction:
    """Limit of the profile from earlier times; differs from evaluate only at events."""
    t = float(t)
    if t <= 0.0:
        return evaluate(traj, 0.0)
    for piece in traj.pieces:
        if piece.t0 < t <= piece.t1:
            return _to_bv(piece.cfg, piece.levels(t))
    return evaluate(traj, t)


def state_at(traj: Trajectory, t: float) -> CrystallineState:
    piece = _piece_at(traj, float(t))
    cfg = piece.cfg.copy()
    cfg.levels = piece.levels(float(min(t, piece.t1)))
    cfg.time = float(t)
    return CrystallineState(float(t), _to_bv(cfg), _facet_data(cfg, traj.energy), cfg, traj.energy)


def facet_speeds(traj: Trajectory, t: float) -> list[tuple[FacetData, float]]:
    """(facet, vertical speed) for every facet present at time t."""
    piece = _piece_at(traj, float(t))
    cfg = piece.cfg
    c = piece.levels(float(t))
    X = cfg.positions(c)
    L = cfg.lengths(c, X)
    chi_l, chi_r = cfg.chi()
    kappa = _kappa(cfg, traj.energy, traj.speed_factor)
    out = []
    for i in np.flatnonzero(cfg.facet):
        if L[i] <= DROP_LENGTH:
            continue
        p = cfg.slopes[i]
        delta = jump_at(traj.energy, p)
        if cfg.m == 1:
            fd = FacetData(float(X[0]), float(X[0]) + 1.0, 1, -1, delta, p)
        else:
            fd = FacetData(float(X[i]), float(X[i] + L[i]), int(chi_l[i]), int(chi_r[i]), delta, p)
        out.append((fd, float(kappa[i] / L[i])))
    return out


# -- export ------------------------------------------------------------------------------


def summary(traj: Trajectory) -> dict:
    return {
        "t_end": traj.t_end,
        "speed_factor": traj.speed_factor,
        "event_times": traj.event_times,
        "events": [{k: v for k, v in ev.items()} for ev in traj.events],
        "pieces": [{"t0": p.t0, "t1": p.t1, "mode": p.mode, "moving_facets": int(p.moving.size)} for p in traj.pieces],
    }


def export(traj: Trajectory, json_path, csv_path, times, n: int = 512) -> None:
    """Write the event summary as JSON and sampled profiles (t, x, u) as CSV."""
    with open(json_path, "w") as fh:
        json.dump(summary(traj), fh, indent=2, sort_keys=True)
    x = (np.arange(n) + 0.5) / n
    with open(csv_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "x", "u"])
        for t in times:
            u = evaluate(traj, t)(x)
            for xi, ui in zip(x, u):
                w.writerow([f"{t:.17g}", f"{xi:.17g}", f"{ui:.17g}"])
