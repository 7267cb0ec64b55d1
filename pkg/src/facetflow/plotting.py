"""Static figures for the CLI report path.

Figures are built with the object API on the Agg canvas (no pyplot state),
so they can be rendered from worker threads and repeat byte for byte.
"""

from __future__ import annotations

import numpy as np
from matplotlib.backends.backend_agg import FigureCanvasAgg
from matplotlib.figure import Figure

STYLE = {"figsize": (6.0, 3.8), "dpi": 120}


def _new(nrows: int = 1, ncols: int = 1, **kw):
    fig = Figure(figsize=kw.pop("figsize", STYLE["figsize"]), dpi=STYLE["dpi"])
    FigureCanvasAgg(fig)
    axes = fig.subplots(nrows, ncols, squeeze=False)
    return fig, axes


def _save(fig: Figure, path) -> None:
    fig.tight_layout()
    fig.savefig(path, metadata={"Software": None})


def _shade(n: int):
    return [(0.1 + 0.8 * k / max(n - 1, 1), 0.3, 0.9 - 0.8 * k / max(n - 1, 1)) for k in range(n)]


def plot_profiles(x: np.ndarray, times, profiles, path, title: str = "") -> None:
    """One curve per snapshot, colored from early (blue) to late (red)."""
    fig, ax = _new()
    ax = ax[0, 0]
    for t, u, c in zip(times, profiles, _shade(len(times))):
        ax.plot(x, u, color=c, lw=1.2, label=f"t = {t:.4g}")
    ax.set_xlabel("x")
    ax.set_ylabel("u")
    ax.set_xlim(0.0, 1.0)
    if title:
        ax.set_title(title)
    ax.legend(fontsize=7, frameon=False)
    _save(fig, path)


def plot_energy(times, energy, path, dissipation=None, title: str = "") -> None:
    """Energy against time; with ``dissipation``, also E(t) + dissipated energy."""
    fig, ax = _new()
    ax = ax[0, 0]
    ax.plot(times, energy, "k-", lw=1.2, label="E(t)")
    if dissipation is not None:
        ax.plot(times, np.asarray(energy) + np.asarray(dissipation), "r--", lw=1.0, label="E(t) + dissipation")
        ax.legend(fontsize=7, frameon=False)
    ax.set_xlabel("t")
    ax.set_ylabel("energy")
    if title:
        ax.set_title(title)
    _save(fig, path)


def plot_cross(distances: dict, path, title: str = "") -> None:
    """Cross-solver distance against epsilon on log-log axes.

    ``distances`` maps a label to {(epsilon, n): value}.
    """
    fig, ax = _new()
    ax = ax[0, 0]
    for (label, d), marker in zip(sorted(distances.items()), "osd^v"):
        keys = sorted(d)
        eps = [k[0] for k in keys]
        ax.loglog(eps, [max(d[k], 1e-16) for k in keys], marker=marker, lw=1.0, label=label)
    ax.set_xlabel("epsilon")
    ax.set_ylabel("distance to crystalline")
    ax.invert_xaxis()
    ax.legend(fontsize=7, frameon=False)
    if title:
        ax.set_title(title)
    _save(fig, path)


def plot_approximants(x: np.ndarray, u: np.ndarray, lower: dict, upper: dict, path) -> None:
    """The datum with its lower (dashed) and upper (dotted) approximants per k."""
    fig, ax = _new()
    ax = ax[0, 0]
    ax.plot(x, u, "k-", lw=1.5, label="datum")
    ks = sorted(lower)
    for k, c in zip(ks, _shade(len(ks))):
        ax.plot(x, lower[k], "--", color=c, lw=1.0, label=f"k = {k}")
        ax.plot(x, upper[k], ":", color=c, lw=1.0)
    ax.set_xlabel("x")
    ax.set_xlim(0.0, 1.0)
    ax.legend(fontsize=7, frameon=False)
    _save(fig, path)


def plot_margins(reports, path) -> None:
    """Touch margins per test, inconclusive touches greyed out."""
    fig, ax = _new()
    ax = ax[0, 0]
    for side, marker in (("sub", "^"), ("super", "v")):
        rs = [r for r in reports if r.side == side]
        ok = [(r.t, r.margin) for r in rs if r.status != "inconclusive"]
        grey = [(r.t, r.margin) for r in rs if r.status == "inconclusive"]
        if ok:
            ax.scatter(*zip(*ok), marker=marker, s=14, label=f"{side}solution")
        if grey:
            ax.scatter(*zip(*grey), marker=marker, s=8, color="0.75")
    ax.axhline(0.0, color="k", lw=0.6)
    ax.set_xlabel("touch time")
    ax.set_ylabel("margin")
    ax.legend(fontsize=7, frameon=False)
    _save(fig, path)
