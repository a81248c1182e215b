"""Test the visualization functions."""

import matplotlib
import matplotlib.pyplot as plt
import numpy as np
import pandas as pd
import pytest

from dmimo_sim.metrics import aggregate
from dmimo_sim.scene import build_scene
from dmimo_sim.viz import plot_capacity_map, plot_distributions

# No-display backend for tests
matplotlib.use("agg")


def test_plot_distributions():
    """Test plot_distributions."""
    with pytest.raises(ValueError, match="`tables` must be a non-empty dict."):
        plot_distributions([aggregate([1, 2])])
    with pytest.raises(ValueError, match="`tables` must be a non-empty dict."):
        plot_distributions({})
    with pytest.raises(ValueError, match="is not a DistributionTable"):
        plot_distributions({"rt": [1, 2, 3]})

    tables = {"rt": aggregate([3, 1, 2]), "rayleigh": aggregate([2, 2, 4, 5])}
    fig, ax = plot_distributions(tables)
    assert len(ax.lines) == 2
    assert ax.get_ylabel() == "CDF"
    x, y = ax.lines[0].get_data()
    assert y[0] == 0.0
    assert y[-1] == 1.0
    plt.close(fig)

    fig, ax = plt.subplots()
    fig2, ax2 = plot_distributions(
        tables, ccdf=True, ax=ax, step_kwargs=dict(color="k")
    )
    assert fig2 is fig
    assert ax2.get_ylabel() == "CCDF"
    assert ax2.lines[1].get_data()[1][0] == 1.0
    plt.close(fig)


def test_plot_capacity_map():
    """Test plot_capacity_map."""
    with pytest.raises(
        ValueError, match="`capacity_map` must be a pandas DataFrame object."
    ):
        plot_capacity_map([1, 2, 3])

    with pytest.raises(
        ValueError,
        match="`capacity_map` does not have a required column bits_per_s_per_hz.",
    ):
        plot_capacity_map(pd.DataFrame({"x_m": [1.0], "y_m": [1.0]}))

    cmap = pd.DataFrame(
        {
            "x_m": np.repeat([1.0, 3.0, 5.0], 2),
            "y_m": np.tile([1.0, 3.0], 3),
            "bits_per_s_per_hz": np.arange(6.0),
        }
    )
    fig, ax = plot_capacity_map(cmap)
    assert ax.get_xlabel() == "x [m]"
    plt.close(fig)

    scene = build_scene(
        {
            "size": [6.0, 4.0, 3.0],
            "obstacles": [{"min": [2.0, 1.5, 0.0], "max": [2.5, 2.5, 1.0]}],
        }
    )
    fig, ax = plot_capacity_map(cmap, scene=scene, scatter_kwargs=dict(cmap="magma"))
    assert len(ax.patches) == 1
    assert ax.get_xlim() == (0.0, 6.0)
    assert ax.get_ylim() == (0.0, 4.0)
    plt.close(fig)
