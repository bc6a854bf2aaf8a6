"""Static SVG plots with byte-stable output (fixed hash salt, no date metadata)."""

from __future__ import annotations

import os

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

PLOT_NAMES = ("u_lambda_plus", "u_lambda_minus", "u0", "barrier_diagonal", "mather_projected")

_RC = {
    "svg.hashsalt": "weakkam",
    "svg.fonttype": "path",
    "figure.figsize": (6.0, 4.0),
    "figure.dpi": 72,
    "axes.grid": True,
    "font.size": 10,
    "path.simplify": False,
}


class PlotError(ValueError):
    pass


def _save(fig, path):
    fig.savefig(path, format="svg", metadata={"Date": None, "Creator": "weakkam"})
    plt.close(fig)
    return path


def _line(path, x, series, title, ylabel):
    with plt.rc_context(_RC):
        fig, ax = plt.subplots()
        for label, y in series:
            ax.plot(x, y, label=label, linewidth=1.2)
        ax.set_xlim(0.0, 1.0)
        ax.set_xlabel("x")
        ax.set_ylabel(ylabel)
        ax.set_title(title)
        if len(series) > 1:
            ax.legend(loc="best", fontsize=8)
        fig.tight_layout()
        return _save(fig, path)


def _heat(path, grid, values, title):
    with plt.rc_context(_RC):
        fig, ax = plt.subplots()
        img = ax.imshow(np.asarray(values).reshape(grid.n, grid.n).T, origin="lower", extent=(0, 1, 0, 1),
                        cmap="viridis", interpolation="nearest")
        fig.colorbar(img, ax=ax)
        ax.set_xlabel("x1")
        ax.set_ylabel("x2")
        ax.set_title(title)
        fig.tight_layout()
        return _save(fig, path)


def emit_plots(bundle, directory) -> list:
    """Write the SVG plots available in ``bundle``; returns the file paths.

    1-D problems give line plots (whole lambda families where present), 2-D
    problems heatmaps of the last family member.
    """
    items = {}
    fam = bundle.families
    for key, name in (("forward", "u_lambda_plus"), ("backward", "u_lambda_minus")):
        if key in fam:
            items[name] = [(f"lambda={l:g}", fam[key].per_lambda[l]) for l in fam[key].lambdas]
        elif name in bundle.fields:
            items[name] = [(name, bundle.fields[name])]
    u0 = [(n, bundle.fields[n]) for n in ("u0_plus", "u0_minus") if n in bundle.fields]
    if u0:
        items["u0"] = u0
    if bundle.barrier is not None:
        items["barrier_diagonal"] = bundle.barrier.diagonal
    if bundle.mather is not None:
        items["mather_projected"] = bundle.mather.projected
    if not items:
        raise PlotError("nothing to plot")
    if not os.path.isdir(directory) or not os.access(directory, os.W_OK):
        raise PlotError(f"cannot write plots to {directory!r}")
    grid = bundle.barrier.grid if bundle.barrier is not None else None
    if grid is None:
        for v in items.values():
            if isinstance(v, list):
                grid = v[0][1].grid
                break
    if grid is None and bundle.mather is not None:
        grid = bundle.mather.measure.xgrid
    out = []
    for name in PLOT_NAMES:
        if name not in items:
            continue
        path = os.path.join(directory, f"{name}.svg")
        data = items[name]
        if grid.dim == 1:
            x = grid.axis
            if isinstance(data, list):
                series = [(label, f.values) for label, f in data]
            else:
                series = [(name, data)]
            out.append(_line(path, x, series, name.replace("_", " "), "value"))
        else:
            values = data[-1][1].values if isinstance(data, list) else data
            out.append(_heat(path, grid, values, name.replace("_", " ")))
    return out
