"""Visualization utilities."""

import matplotlib.pyplot as plt
import numpy as np
import pandas as pd
from matplotlib.patches import Rectangle

from dmimo_sim.config import CAPACITY_MAP_COLUMNS
from dmimo_sim.metrics import DistributionTable


def plot_distributions(tables, ccdf=False, ax=None, step_kwargs={}):
    """Plot empirical distributions as step curves.

    Parameters
    ----------
    tables : dict
        :class:`~dmimo_sim.metrics.DistributionTable` objects keyed by the
        label of their curve.
    ccdf : bool
        Plot the complementary CDF instead of the CDF.
    ax : matplotlib.axes.Axes | None
        Axes to draw into. A new figure is created if None.
    step_kwargs : dict
        Optional keyword arguments to be passed to
        :meth:`matplotlib.axes.Axes.step`.

    Returns
    -------
    fig : matplotlib.figure.Figure
        The Figure object.
    ax : matplotlib.axes.Axes
        The Axes object.

    """
    # input check
    if not isinstance(tables, dict) or len(tables) == 0:
        raise ValueError("`tables` must be a non-empty dict.")
    for label, table in tables.items():
        if not isinstance(table, DistributionTable):
            raise ValueError(f"`tables[{label!r}]` is not a DistributionTable.")

    if ax is None:
        fig, ax = plt.subplots()
    else:
        fig = ax.figure

    step_settings = dict(where="post")
    step_settings.update(step_kwargs)
    for label, table in tables.items():
        # start the curve at probability 0 (or 1 for the CCDF)
        x = np.concatenate([table.points[:1], table.points])
        y = table.ccdf if ccdf else table.cdf
        y = np.concatenate([[1.0 if ccdf else 0.0], y])
        ax.step(x, y, label=str(label), **step_settings)

    ax.set_ylim((0, 1))
    ax.set_ylabel("CCDF" if ccdf else "CDF")
    ax.grid(True, alpha=0.3)
    ax.legend()
    return fig, ax


def plot_capacity_map(capacity_map, scene=None, ax=None, scatter_kwargs={}):
    """Plot a capacity map over the floor plan.

    Parameters
    ----------
    capacity_map : pandas.DataFrame
        With the columns ``"x_m"``, ``"y_m"`` and ``"bits_per_s_per_hz"``,
        as exported by :func:`dmimo_sim.harness.export_results`.
    scene : Scene | None
        If given, the footprints of its obstacles are drawn and the axes
        limited to the scene bounds.
    ax : matplotlib.axes.Axes | None
        Axes to draw into. A new figure is created if None.
    scatter_kwargs : dict
        Optional keyword arguments to be passed to
        :meth:`matplotlib.axes.Axes.scatter`.

    Returns
    -------
    fig : matplotlib.figure.Figure
        The Figure object.
    ax : matplotlib.axes.Axes
        The Axes object.

    """
    # input check
    if not isinstance(capacity_map, pd.DataFrame):
        raise ValueError("`capacity_map` must be a pandas DataFrame object.")
    else:
        for colname in CAPACITY_MAP_COLUMNS:
            if colname not in capacity_map.columns:
                raise ValueError(
                    f"`capacity_map` does not have a required column {colname}."
                )

    if ax is None:
        fig, ax = plt.subplots()
    else:
        fig = ax.figure

    scatter_settings = dict(marker="s", cmap="viridis")
    scatter_settings.update(scatter_kwargs)
    points = ax.scatter(
        capacity_map["x_m"],
        capacity_map["y_m"],
        c=capacity_map["bits_per_s_per_hz"],
        zorder=2,
        **scatter_settings,
    )
    fig.colorbar(points, ax=ax, label="Capacity [bits/s/Hz]")

    if scene is not None:
        for box in scene.obstacles:
            ax.add_patch(
                Rectangle(
                    box.lower[:2],
                    box.upper[0] - box.lower[0],
                    box.upper[1] - box.lower[1],
                    facecolor="0.6",
                    edgecolor="k",
                    zorder=3,
                )
            )
        ax.set_xlim((scene.lower[0], scene.upper[0]))
        ax.set_ylim((scene.lower[1], scene.upper[1]))

    ax.set_xlabel("x [m]")
    ax.set_ylabel("y [m]")
    ax.set_aspect("equal")
    return fig, ax
