"""Command-line runner: ``facetflow {solve,check,approx,compare} --config run.ini``.

Config grammar (INI, ``#`` or ``;`` comments, unknown keys are errors)::

    [energy]
    name = tv                    # or bi-tv; or breakpoints/slopes[/value_at_zero]

    [datum]
    name = example-step          # example-step (a, high, low), constant (value),
    a = 0.5                      # sawtooth (height, peak)
    # expr = max(step(0.25), 0.5 * sawtooth())     -- or an expression
    # file = datum.txt           -- or a BV table (position left right slope)

    [run]
    solver = crystalline         # crystalline, regularized or both
    t_end = 0.25
    snapshots = 0, 1/32, 1/16, 1/8
    samples = 512                # x samples per crystalline snapshot
    seed = 0
    out = results

    [regularized]
    epsilons = 1e-2, 4e-3, 2e-3, 1e-3
    grids = 128, 256, 512, 1024
    tau_fraction = 1             # tau = tau_fraction * h

    [check]
    suites = viscosity, comparison, witness, cross, energy
    artifacts = results          # optional: a solve output to re-verify
    pairs = 20                   # random ordered pairs for the comparison sweep
    cross_tol = 0.05
    energy_tol = 1e-3

    [approx]
    ks = 4, 16, 64

Exit codes: 0 success, 1 a check failed, 2 invalid config, 3 missing artifacts.
"""

from __future__ import annotations

import argparse
import ast
import configparser
import csv
import hashlib
import json
import logging
import os
import platform
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from fractions import Fraction
from pathlib import Path

import numpy as np
import scipy

from . import __version__, plotting
from . import verify as V
from .bvfunc import BVFunction, energy, lower_approx, mass, pointwise_max, pointwise_min, upper_approx
from .crystalline import EvolutionError, ZenoError, evaluate, evolve, summary
from .energy import EnergyError, PLEnergy, parse_energy
from .regularized import NewtonError
from .regularized import solve as solve_regularized

log = logging.getLogger("facetflow.cli")

EXIT_OK, EXIT_FAIL, EXIT_CONFIG, EXIT_MISSING = 0, 1, 2, 3
CSV_VERSION = 1
COLUMNS = {
    "crystalline": ["t", "x", "u"],
    "crystalline_energy": ["t", "energy", "mass"],
    "regularized": ["t", "x", "u", "flux"],
    "regularized_energy": ["t", "energy", "dissipation", "identity_residual"],
    "compare": ["epsilon", "n", "t", "sup", "l2", "band"],
}
ENERGY_TAU_FRACTION = 1 / 8  # default tau = h/8 for the energy identity
SUITES = ("viscosity", "stability", "comparison", "witness", "cross", "energy")
SCHEMA = {
    "energy": {"name", "breakpoints", "slopes", "value_at_zero"},
    "datum": {"name", "expr", "file", "a", "high", "low", "value", "height", "peak"},
    "run": {"solver", "t_end", "snapshots", "samples", "seed", "out"},
    "regularized": {"epsilons", "grids", "tau_fraction"},
    "check": {"suites", "artifacts", "pairs", "cross_tol", "energy_tol"},
    "approx": {"ks"},
}


class ConfigError(ValueError):
    def __init__(self, msg: str, source: str = "<config>", line: int | None = None, where: str = ""):
        self.msg, self.source, self.line, self.where = msg, source, line, where
        loc = f"{source}:{line}" if line else source
        super().__init__(f"{loc}: {where + ': ' if where else ''}{msg}")


class MissingArtifact(FileNotFoundError):
    pass


# -- datum construction ----------------------------------------------------------------


def scale(u: BVFunction, c: float) -> BVFunction:
    return BVFunction(u.nodes, c * u.right_values, c * u.slopes)


def sawtooth(height: float = 1.0, peak: float = 0.5) -> BVFunction:
    """Continuous tent: 0 at x = 0, ``height`` at x = peak."""
    return BVFunction.from_points([0.0, peak], [0.0, height])


def example(name: str, params: dict) -> BVFunction:
    if name == "example-step":
        return BVFunction.step(params.get("a", 0.5), params.get("high", 1.0), params.get("low", 0.0))
    if name == "constant":
        return BVFunction.constant(params.get("value", 0.0))
    if name == "sawtooth":
        return sawtooth(params.get("height", 1.0), params.get("peak", 0.5))
    raise ValueError(f"unknown datum {name!r} (example-step, constant, sawtooth)")


_CALLS = {
    "step": BVFunction.step,
    "constant": BVFunction.constant,
    "sawtooth": sawtooth,
    "points": BVFunction.from_points,
    "max": pointwise_max,
    "min": pointwise_min,
    "rotate": lambda u, s: u.rotate(s),
    "lower": lower_approx,
    "upper": upper_approx,
}


def parse_datum_expr(text: str) -> BVFunction:
    """Evaluate an expression over the built-in data.

    Allowed: numbers, lists, the calls in ``_CALLS``, ``+``/``-`` between
    functions or with a constant, ``*`` by a constant, unary minus.
    """

    def ev(node):
        if isinstance(node, ast.Expression):
            return ev(node.body)
        if isinstance(node, ast.Constant) and isinstance(node.value, (int, float)):
            return float(node.value)
        if isinstance(node, ast.List):
            return [ev(x) for x in node.elts]
        if isinstance(node, ast.UnaryOp) and isinstance(node.op, (ast.USub, ast.UAdd)):
            v = ev(node.operand)
            return -v if isinstance(node.op, ast.USub) else v
        if isinstance(node, ast.BinOp):
            a, b = ev(node.left), ev(node.right)
            if isinstance(node.op, ast.Add):
                return b + a if isinstance(b, BVFunction) and not isinstance(a, BVFunction) else a + b
            if isinstance(node.op, ast.Sub):
                if isinstance(b, BVFunction) and not isinstance(a, BVFunction):
                    return -b + a
                return a - b
            if isinstance(node.op, ast.Mult):
                if isinstance(a, BVFunction) and isinstance(b, BVFunction):
                    raise ValueError("product of two functions is not supported")
                if isinstance(a, BVFunction):
                    return scale(a, b)
                return scale(b, a) if isinstance(b, BVFunction) else a * b
            if isinstance(node.op, ast.Div) and not isinstance(b, BVFunction):
                return scale(a, 1.0 / b) if isinstance(a, BVFunction) else a / b
        if isinstance(node, ast.Call) and isinstance(node.func, ast.Name) and node.func.id in _CALLS:
            args = [ev(a) for a in node.args]
            kw = {k.arg: ev(k.value) for k in node.keywords}
            if node.func.id in ("lower", "upper"):
                args[1] = int(args[1])
            return _CALLS[node.func.id](*args, **kw)
        raise ValueError(f"unsupported expression element: {ast.dump(node)[:60]}")

    try:
        out = ev(ast.parse(text.strip(), mode="eval"))
    except SyntaxError as err:
        raise ValueError(f"syntax error in expression: {err.msg}") from None
    if not isinstance(out, BVFunction):
        out = BVFunction.constant(float(out))
    return out


def random_datum(rng: np.random.Generator, max_nodes: int = 7) -> BVFunction:
    """Random periodic piecewise-linear function, each node a jump with probability 1/2."""
    m = int(rng.integers(2, max_nodes + 1))
    nodes = np.sort(rng.uniform(0, 1, m))
    while np.any(np.diff(nodes) < 1e-3):
        nodes = np.sort(rng.uniform(0, 1, m))
    left = rng.normal(0, 1, m)
    right = np.where(rng.uniform(size=m) < 0.5, rng.normal(0, 1, m), left)
    return BVFunction.from_traces(nodes, left, right)


# -- configuration -----------------------------------------------------------------------


@dataclass(frozen=True)
class RunConfig:
    energy: PLEnergy
    datum: BVFunction
    solver: str = "crystalline"
    t_end: float = 0.25
    snapshots: tuple = ()
    samples: int = 512
    seed: int = 0
    epsilons: tuple = (1e-2, 4e-3, 2e-3, 1e-3)
    grids: tuple = (128, 256, 512, 1024)
    tau_fraction: float | None = None
    suites: tuple = ()
    artifacts: str | None = None
    pairs: int = 20
    cross_tol: float = 0.05
    energy_tol: float = 1e-3
    ks: tuple = (4, 16, 64)
    out: str = "facetflow-out"
    source: str = field(default="<config>", compare=False)

    @property
    def ladder(self) -> list:
        return list(zip(self.epsilons, self.grids))

    def semantic(self) -> dict:
        """Every field that changes results, in a canonical JSON form.

        The datum and energy enter by value, so equivalent spellings hash
        alike and an edited datum file changes the hash.
        """
        d = {k: v for k, v in asdict(self).items() if k not in ("energy", "datum", "out", "source")}
        d["energy"] = {"breakpoints": list(self.energy.breakpoints), "slopes": list(self.energy.slopes),
                       "value_at_zero": self.energy.value_at_zero}
        d["datum"] = self.datum.to_table()
        return json.loads(json.dumps(d))

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(self.semantic(), sort_keys=True).encode()).hexdigest()

    @classmethod
    def from_semantic(cls, d: dict, out: str = "facetflow-out") -> "RunConfig":
        d = dict(d)
        d["energy"] = PLEnergy(tuple(d["energy"]["breakpoints"]), tuple(d["energy"]["slopes"]),
                               d["energy"]["value_at_zero"])
        d["datum"] = BVFunction.from_table(d["datum"])
        for k in ("snapshots", "epsilons", "grids", "suites", "ks"):
            d[k] = tuple(d[k])
        return cls(out=out, **d)


def _line_of(text: str, section: str, key: str | None = None) -> int | None:
    current = None
    for no, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if line.startswith("[") and line.endswith("]"):
            current = line[1:-1].strip()
            if key is None and current == section:
                return no
        elif current == section and key is not None:
            name = line.split("=", 1)[0].split(":", 1)[0].strip().lower()
            if name == key:
                return no
    return None


def _number(v: str) -> float:
    return float(Fraction(v.strip())) if "/" in v else float(v)


def _list(v: str, conv=_number) -> tuple:
    items = [s for s in v.replace(",", " ").split() if s]
    return tuple(conv(s) for s in items)


def _integer(v: str) -> int:
    f = _number(v)
    if f != int(f):
        raise ValueError(f"{v!r} is not an integer")
    return int(f)


def load_config(path) -> RunConfig:
    """Parse and validate an INI run config; errors carry file, line and field."""
    path = Path(path)
    src = str(path)
    if not path.is_file():
        raise ConfigError("config file not found", src)
    text = path.read_text()
    cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"), interpolation=None)
    try:
        cp.read_string(text, source=src)
    except configparser.Error as err:
        raise ConfigError(str(err).splitlines()[0], src, getattr(err, "lineno", None)) from None

    def fail(msg, section, key=None):
        raise ConfigError(msg, src, _line_of(text, section, key), f"[{section}]" + (f" {key}" if key else ""))

    for section in cp.sections():
        if section not in SCHEMA:
            fail(f"unknown section (expected one of {', '.join(SCHEMA)})", section)
        for key in cp[section]:
            if key not in SCHEMA[section]:
                fail("unknown key", section, key)

    def get(section, key, conv, default):
        if not cp.has_option(section, key):
            return default
        raw = cp.get(section, key)
        try:
            return conv(raw)
        except (ValueError, ZeroDivisionError) as err:
            fail(f"bad value {raw!r}: {err}", section, key)

    # energy
    if not cp.has_section("energy"):
        raise ConfigError("missing [energy] section", src)
    sec = dict(cp["energy"])
    try:
        e = parse_energy(sec["name"]) if "name" in sec else parse_energy(sec)
    except (EnergyError, KeyError, ValueError) as err:
        fail(str(err), "energy", "name" if "name" in sec else None)

    # datum
    if not cp.has_section("datum"):
        raise ConfigError("missing [datum] section", src)
    sec = cp["datum"]
    kinds = [k for k in ("name", "expr", "file") if k in sec]
    if len(kinds) != 1:
        fail("give exactly one of name, expr, file", "datum")
    kind = kinds[0]
    try:
        if kind == "name":
            params = {k: get("datum", k, _number, None) for k in ("a", "high", "low", "value", "height", "peak")}
            u0 = example(sec["name"].strip(), {k: v for k, v in params.items() if v is not None})
        elif kind == "expr":
            u0 = parse_datum_expr(sec["expr"])
        else:
            f = (path.parent / sec["file"].strip()).resolve()
            if not f.is_file():
                fail(f"datum file {f} does not exist", "datum", "file")
            u0 = BVFunction.from_table(f.read_text())
    except (ValueError, TypeError) as err:
        if isinstance(err, ConfigError):
            raise
        fail(str(err), "datum", kind)

    solver = get("run", "solver", str.strip, "crystalline")
    if solver not in ("crystalline", "regularized", "both"):
        fail("solver must be crystalline, regularized or both", "run", "solver")
    t_end = get("run", "t_end", _number, 0.25)
    if not t_end > 0:
        fail("t_end must be positive", "run", "t_end")
    snaps = get("run", "snapshots", _list, None)
    if snaps is None:
        snaps = tuple(t_end * k / 4 for k in range(5))
    if not snaps or any(t < 0 or t > t_end for t in snaps):
        fail("snapshot times must lie in [0, t_end]", "run", "snapshots")
    snaps = tuple(sorted(set(snaps)))
    samples = get("run", "samples", _integer, 512)
    if samples < 2:
        fail("samples must be at least 2", "run", "samples")

    eps = get("regularized", "epsilons", _list, RunConfig.epsilons)
    grids = get("regularized", "grids", lambda v: _list(v, _integer), RunConfig.grids)
    if not eps or not grids:
        fail("ladders must be nonempty", "regularized", "epsilons" if not eps else "grids")
    if len(eps) != len(grids):
        fail("epsilons and grids must have the same length", "regularized", "grids")
    if any(x <= 0 for x in eps):
        fail("epsilons must be positive", "regularized", "epsilons")
    if any(n < 8 for n in grids):
        fail("grids need at least 8 cells", "regularized", "grids")
    tau_fraction = get("regularized", "tau_fraction", _number, None)
    if tau_fraction is not None and tau_fraction <= 0:
        fail("tau_fraction must be positive", "regularized", "tau_fraction")

    suites = get("check", "suites", lambda v: _list(v, str.strip), ())
    bad = [s for s in suites if s not in SUITES]
    if bad:
        fail(f"unknown suites {bad} (choose from {', '.join(SUITES)})", "check", "suites")
    artifacts = get("check", "artifacts", str.strip, None)
    if artifacts is not None:
        artifacts = str((path.parent / artifacts).resolve())
    ks = get("approx", "ks", lambda v: _list(v, _integer), (4, 16, 64))
    if not ks or any(k < 1 for k in ks):
        fail("ks must be positive integers", "approx", "ks")

    return RunConfig(
        energy=e, datum=u0, solver=solver, t_end=float(t_end), snapshots=snaps, samples=samples,
        seed=get("run", "seed", _integer, 0), epsilons=tuple(eps), grids=tuple(grids),
        tau_fraction=tau_fraction, suites=tuple(suites), artifacts=artifacts,
        pairs=get("check", "pairs", _integer, 20), cross_tol=get("check", "cross_tol", _number, 0.05),
        energy_tol=get("check", "energy_tol", _number, 1e-3), ks=tuple(sorted(set(ks))),
        out=get("run", "out", str.strip, "facetflow-out"), source=src,
    )


# -- output helpers ----------------------------------------------------------------------


def _fmt(v) -> str:
    return f"{v:.17g}" if isinstance(v, (float, np.floating)) else str(v)


def write_rows(path: Path, header: list, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def write_json(path: Path, obj) -> None:
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True, default=_jsonable)
        fh.write("\n")


def _jsonable(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"cannot serialize {type(o).__name__}")


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def write_manifest(out: Path, cfg: RunConfig, command: str, files: dict, extra: dict | None = None) -> dict:
    """Manifest with config hash, versions, CSV schemas and artifact digests."""
    man = {
        "command": command,
        "config_hash": cfg.digest(),
        "config": cfg.semantic(),
        "versions": {"facetflow": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
                     "python": platform.python_version()},
        "csv_version": CSV_VERSION,
        "columns": {name: COLUMNS[kind] for name, kind in files.items() if kind in COLUMNS},
        "artifacts": {name: _sha256(out / name) for name in sorted(files)},
    }
    man.update(extra or {})
    write_json(out / "manifest.json", man)
    return man


def _xgrid(n: int) -> np.ndarray:
    return (np.arange(n) + 0.5) / n


# -- solve -------------------------------------------------------------------------------


def _regularized_job(args):
    u0, e, eps, n, t_end, snaps, tau_fraction = args
    tau = None if tau_fraction is None else tau_fraction / n
    sol, rep = solve_regularized(u0, e, eps, n, t_end, tau=tau, snapshot_times=snaps)
    return sol, rep


def run_crystalline(cfg: RunConfig, out: Path, speed_factor: float = 1.0) -> tuple[dict, dict]:
    traj = evolve(cfg.datum, cfg.energy, cfg.t_end, speed_factor=speed_factor)
    info = summary(traj)
    # a stationary trajectory is one snapshot
    stationary = not traj.events and all(p.mode == "static" for p in traj.pieces)
    times = [cfg.snapshots[0]] if stationary else list(cfg.snapshots)
    x = _xgrid(cfg.samples)
    profiles = [evaluate(traj, t)(x) for t in times]
    write_rows(out / "crystalline.csv", COLUMNS["crystalline"],
               ((t, xi, ui) for t, u in zip(times, profiles) for xi, ui in zip(x, u)))
    e_times = sorted(set(cfg.snapshots) | set(traj.event_times))
    e_rows = [(t, energy(evaluate(traj, t), cfg.energy), mass(evaluate(traj, t))) for t in e_times]
    write_rows(out / "crystalline_energy.csv", COLUMNS["crystalline_energy"], e_rows)
    write_json(out / "crystalline.json", info)
    plotting.plot_profiles(x, times, profiles, out / "crystalline_profiles.png", "crystalline")
    plotting.plot_energy([r[0] for r in e_rows], [r[1] for r in e_rows], out / "crystalline_energy.png")
    files = {"crystalline.csv": "crystalline", "crystalline_energy.csv": "crystalline_energy",
             "crystalline.json": "json"}
    extra = {"events": info["events"], "event_times": info["event_times"], "stationary": stationary,
             "snapshots_written": times}
    return files, extra


def run_regularized(cfg: RunConfig, out: Path, jobs: int = 1) -> tuple[dict, dict]:
    args = [(cfg.datum, cfg.energy, eps, n, cfg.t_end, cfg.snapshots, cfg.tau_fraction) for eps, n in cfg.ladder]
    if jobs > 1 and len(args) > 1:
        with ProcessPoolExecutor(min(jobs, len(args))) as ex:
            results = list(ex.map(_regularized_job, args))
    else:
        results = [_regularized_job(a) for a in args]
    files, extra = {}, {"regularized": []}
    for (eps, n), (sol, rep) in zip(cfg.ladder, results):
        stem = f"regularized_eps{eps:g}_n{n}"
        write_rows(out / f"{stem}.csv", COLUMNS["regularized"],
                   ((t, x, u, q) for t in cfg.snapshots for x, u, q in zip(sol.grid.x, sol.at(t), _flux_at(sol, t))))
        write_rows(out / f"{stem}_energy.csv", COLUMNS["regularized_energy"],
                   zip(rep.times, rep.energy, rep.dissipation, rep.residual))
        files[f"{stem}.csv"] = "regularized"
        files[f"{stem}_energy.csv"] = "regularized_energy"
        d = rep.to_dict()
        extra["regularized"].append({"epsilon": eps, "n": n, "steps": int(sol.times.size - 1),
                                     "max_relative_residual": d["max_relative_residual"],
                                     "flux_h1": float(rep.flux_h1)})
        plotting.plot_profiles(sol.grid.x, list(cfg.snapshots), [sol.at(t) for t in cfg.snapshots],
                               out / f"{stem}_profiles.png", f"epsilon = {eps:g}, n = {n}")
        plotting.plot_energy(rep.times, rep.energy, out / f"{stem}_energy.png", rep.dissipation)
    return files, extra


def _flux_at(sol, t: float) -> np.ndarray:
    k = int(np.argmin(np.abs(sol.times - t)))
    return sol.flux[k]


def cmd_solve(cfg: RunConfig, out: Path, jobs: int = 1, speed_factor: float = 1.0) -> int:
    out.mkdir(parents=True, exist_ok=True)
    files, extra = {}, {}
    if cfg.solver in ("crystalline", "both"):
        f, x = run_crystalline(cfg, out, speed_factor)
        files.update(f)
        extra.update(x)
    if cfg.solver in ("regularized", "both"):
        f, x = run_regularized(cfg, out, jobs)
        files.update(f)
        extra.update(x)
    if speed_factor != 1.0:
        extra["corrupt_speed"] = speed_factor
    write_manifest(out, cfg, "solve", files, extra)
    log.info("solve wrote %d artifacts to %s", len(files), out)
    return EXIT_OK


# -- check -------------------------------------------------------------------------------


def _load_artifacts(directory: str) -> dict:
    d = Path(directory)
    man_path = d / "manifest.json"
    if not man_path.is_file():
        raise MissingArtifact(f"no manifest.json in {d}")
    man = json.loads(man_path.read_text())
    missing = [name for name in man.get("artifacts", {}) if not (d / name).is_file()]
    if missing:
        raise MissingArtifact(f"artifacts listed in {man_path} are missing: {', '.join(missing)}")
    return man


def _ordered_pairs(cfg: RunConfig) -> list:
    u0 = cfg.datum
    pairs = [(lower_approx(u0, k), upper_approx(u0, k)) for k in cfg.ks]
    pairs += [(lower_approx(u0, k), u0) for k in cfg.ks] + [(u0, upper_approx(u0, k)) for k in cfg.ks]
    rng = np.random.default_rng(cfg.seed)
    for _ in range(cfg.pairs):
        a, b = random_datum(rng), random_datum(rng)
        pairs.append((a, pointwise_max(a, b)))
    return pairs


def _suite(name: str, cfg: RunConfig, out: Path, jobs: int, speed_factor: float) -> dict:
    e, u0 = cfg.energy, cfg.datum
    if name == "viscosity":
        traj = evolve(u0, e, cfg.t_end, speed_factor=speed_factor)
        sub, sup = V.viscosity_suite(traj, jobs)
        plotting.plot_margins(sub.reports + sup.reports, out / "viscosity_margins.png")
        write_json(out / "viscosity.json", {"sub": sub.to_dict(), "super": sup.to_dict()})
        return {"passed": sub.passed and sup.passed, "min_margin": min(sub.min_margin, sup.min_margin),
                "sub": sub.counts(), "super": sup.counts()}
    if name == "stability":
        sub = V.sup_stability_check(e, [lower_approx(u0, k) for k in cfg.ks], cfg.t_end, jobs)
        sup = V.inf_stability_check(e, [upper_approx(u0, k) for k in cfg.ks], cfg.t_end, jobs)
        return {"passed": sub.passed and sup.passed, "min_margin": min(sub.min_margin, sup.min_margin)}
    if name == "comparison":
        rep = V.comparison_sweep(e, _ordered_pairs(cfg), cfg.t_end)
        V.write_json(rep, out / "comparison.json")
        return {"passed": rep.passed, "pairs": rep.n_pairs, "rejected": len(rep.rejected),
                "violations": len(rep.violations), "max_excess": rep.max_excess}
    if name == "witness":
        rep = V.approximation_witness(u0, e, cfg.ks, cfg.t_end)
        V.write_json(rep, out / "witness.json")
        return {"passed": rep.passed, "max_envelope_gap": max(rep.envelope_gap), "tolerance": rep.tolerance,
                "order_violation": rep.order_violation}
    if name == "cross":
        cv = _cross(cfg, out, jobs)
        worst = cv.distances("sup")[cfg.ladder[-1]]
        return {"passed": cv.monotone("sup") and worst <= cfg.cross_tol, "finest_sup": worst,
                "monotone": cv.monotone("sup")}
    if name == "energy":
        eps, n = cfg.ladder[-1]
        # backward Euler's O(tau) energy defect needs a finer step than h here
        tau = (ENERGY_TAU_FRACTION if cfg.tau_fraction is None else cfg.tau_fraction) / n
        sol, rep = solve_regularized(u0, e, eps, n, cfg.t_end, tau=tau)
        rel = float(rep.residual.max() / rep.energy[0]) if rep.energy[0] else 0.0
        monotone = bool(np.all(np.diff(rep.energy) <= 1e-12 * max(1.0, rep.energy[0])))
        traj = evolve(u0, e, cfg.t_end)
        ts = sorted(set(cfg.snapshots) | set(traj.event_times))
        ce = [energy(evaluate(traj, t), e) for t in ts]
        monotone_c = bool(np.all(np.diff(ce) <= 1e-12 * max(1.0, ce[0])))
        return {"passed": rel <= cfg.energy_tol and monotone and monotone_c, "epsilon": eps, "n": n,
                "max_relative_residual": rel, "regularized_monotone": monotone, "crystalline_monotone": monotone_c}
    raise ValueError(f"unknown suite {name}")


def cmd_check(cfg: RunConfig, out: Path, jobs: int = 1, speed_factor: float = 1.0) -> int:
    results = {}
    if cfg.artifacts is not None:
        man = _load_artifacts(cfg.artifacts)
        if man.get("command") != "solve":
            raise MissingArtifact(f"{cfg.artifacts} does not hold solve output")
        produced = RunConfig.from_semantic(man["config"], out=str(out))
        # fresh crystalline output must match the stored bytes
        if "crystalline.csv" in man["artifacts"]:
            tmp = out / "_reproduce"
            tmp.mkdir(parents=True, exist_ok=True)
            run_crystalline(produced, tmp, man.get("corrupt_speed", 1.0))
            same = _sha256(tmp / "crystalline.csv") == man["artifacts"]["crystalline.csv"]
            results["reproducible"] = {"passed": same}
        cfg = replace(produced, suites=cfg.suites)
    if not cfg.suites:
        log.warning("no checks selected; nothing to do")
        return EXIT_OK
    out.mkdir(parents=True, exist_ok=True)
    for name in cfg.suites:
        log.info("running %s", name)
        results[name] = _suite(name, cfg, out, jobs, speed_factor)
        log.info("%s: %s", name, "pass" if results[name]["passed"] else "FAIL")
    passed = all(r["passed"] for r in results.values())
    report = {"passed": passed, "suites": results, "config_hash": cfg.digest(), "corrupt_speed": speed_factor}
    write_json(out / "check.json", report)
    for name, r in results.items():
        print(f"{name:12s} {'PASS' if r['passed'] else 'FAIL'}")
    return EXIT_OK if passed else EXIT_FAIL


# -- approx and compare ----------------------------------------------------------------


def cmd_approx(cfg: RunConfig, out: Path, n_samples: int = 4096) -> int:
    out.mkdir(parents=True, exist_ok=True)
    u0 = cfg.datum
    x = np.union1d(_xgrid(n_samples), u0.nodes)
    lo_u, up_u = u0.lower(x), u0.upper(x)
    files, stats, lows, ups = {}, [], {}, {}
    prev_lo = prev_up = None
    for k in cfg.ks:
        lo, up = lower_approx(u0, k), upper_approx(u0, k)
        for tag, f in (("lower", lo), ("upper", up)):
            name = f"{tag}_k{k}.txt"
            (out / name).write_text(f.to_table())
            files[name] = "table"
        lv, uv = lo(x), up(x)
        lows[k], ups[k] = lv, uv
        stats.append({
            "k": k,
            "lower_violations": int(np.sum(lv > lo_u + V.ORDER_SLACK)),
            "upper_violations": int(np.sum(uv < up_u - V.ORDER_SLACK)),
            "monotone_in_k": bool(prev_lo is None or (np.all(lv >= prev_lo - V.ORDER_SLACK)
                                                      and np.all(uv <= prev_up + V.ORDER_SLACK))),
            "l1_gap": float(np.mean(uv - lv)),
        })
        prev_lo, prev_up = lv, uv
    violations = sum(s["lower_violations"] + s["upper_violations"] for s in stats)
    write_json(out / "approx.json", {"samples": int(x.size), "violations": violations, "per_k": stats})
    xs = _xgrid(1024)
    plotting.plot_approximants(xs, u0(xs), {k: lower_approx(u0, k)(xs) for k in cfg.ks},
                               {k: upper_approx(u0, k)(xs) for k in cfg.ks}, out / "approximants.png")
    files["approx.json"] = "json"
    write_manifest(out, cfg, "approx", files, {"violations": violations})
    return EXIT_OK


def _cross(cfg: RunConfig, out: Path, jobs: int) -> V.CrossValidation:
    times = [t for t in cfg.snapshots if t > 0]
    cv = V.cross_validate(cfg.datum, cfg.energy, cfg.ladder, times, jobs, cfg.tau_fraction)
    write_rows(out / "compare.csv", COLUMNS["compare"],
               ((r.epsilon, r.n, r.t, r.sup, r.l2, r.band) for r in cv.rows))
    V.write_json(cv, out / "compare.json")
    plotting.plot_cross({"sup (off layers)": cv.distances("sup"), "L2": cv.distances("l2")},
                        out / "compare.png")
    return cv


def cmd_compare(cfg: RunConfig, out: Path, jobs: int = 1) -> int:
    out.mkdir(parents=True, exist_ok=True)
    cv = _cross(cfg, out, jobs)
    d = cv.distances("sup")
    write_manifest(out, cfg, "compare", {"compare.csv": "compare", "compare.json": "json"},
                   {"monotone_sup": cv.monotone("sup"), "finest_sup": d[cfg.ladder[-1]]})
    for (eps, n), v in d.items():
        print(f"epsilon={eps:<8g} n={n:<6d} sup={v:.3e}")
    return EXIT_OK


# -- entry point -------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="facetflow", description="Very singular diffusion solvers and checks.")
    p.add_argument("command", choices=("solve", "check", "approx", "compare"))
    p.add_argument("--config", required=True, type=Path, help="INI run config")
    p.add_argument("--out", type=Path, default=None, help="output directory (overrides [run] out)")
    p.add_argument("--jobs", type=int, default=1, help="parallel workers for sweeps")
    p.add_argument("--corrupt-speed", type=float, default=1.0, metavar="FACTOR",
                   help="scale every facet speed (negative control for the checks)")
    return p


def _setup_logging() -> None:
    level = os.environ.get("FACETFLOW_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)


def main(argv=None) -> int:
    _setup_logging()
    args = build_parser().parse_args(argv)
    if args.jobs < 1:
        print("error: --jobs must be at least 1", file=sys.stderr)
        return EXIT_CONFIG
    if not args.corrupt_speed > 0:
        print("error: --corrupt-speed must be positive", file=sys.stderr)
        return EXIT_CONFIG
    try:
        cfg = load_config(args.config)
    except ConfigError as err:
        print(f"config error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    out = args.out if args.out is not None else Path(args.config).parent / cfg.out
    try:
        if args.command == "solve":
            return cmd_solve(cfg, out, args.jobs, args.corrupt_speed)
        if args.command == "check":
            return cmd_check(cfg, out, args.jobs, args.corrupt_speed)
        if args.command == "approx":
            return cmd_approx(cfg, out)
        return cmd_compare(cfg, out, args.jobs)
    except MissingArtifact as err:
        print(f"missing artifact: {err}", file=sys.stderr)
        return EXIT_MISSING
    except (ZenoError, EvolutionError, NewtonError) as err:
        print(f"solver failure: {err}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
