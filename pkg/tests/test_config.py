"""Test the constants and table layouts."""

from dmimo_sim.config import (
    CAPACITY_MAP_COLUMNS,
    DEFAULT_BANDWIDTH_HZ,
    DEFAULT_DEPLOYMENTS,
    DEFAULT_RB_COUNT,
    DEFAULT_SUBCARRIER_SPACING_HZ,
    DEFAULT_SUBCARRIERS_PER_RB,
    DISTRIBUTION_METRICS,
    METRIC_COLUMNS,
    WALL_NAMES,
    XPR_TARGET_RANGE_DB,
)


def test_radio_grid_fits_bandwidth():
    """52 RBs of 12 subcarriers at 30 kHz fit into 20 MHz."""
    occupied = (
        DEFAULT_RB_COUNT * DEFAULT_SUBCARRIERS_PER_RB * DEFAULT_SUBCARRIER_SPACING_HZ
    )
    assert occupied <= DEFAULT_BANDWIDTH_HZ


def test_metric_columns():
    """The exported metric table has a fixed header."""
    assert METRIC_COLUMNS[:3] == ["ue_id", "x", "y"]
    assert len(set(METRIC_COLUMNS)) == len(METRIC_COLUMNS)
    assert set(DISTRIBUTION_METRICS) <= set(METRIC_COLUMNS)
    assert "ue_id" not in DISTRIBUTION_METRICS
    assert CAPACITY_MAP_COLUMNS == ["x_m", "y_m", "bits_per_s_per_hz"]


def test_default_deployments_nested():
    """The 1, 5 and 8 AP sets are nested."""
    assert set(DEFAULT_DEPLOYMENTS["1ap"]) <= set(DEFAULT_DEPLOYMENTS["5ap"])
    assert set(DEFAULT_DEPLOYMENTS["5ap"]) <= set(DEFAULT_DEPLOYMENTS["8ap"])
    for ids in DEFAULT_DEPLOYMENTS.values():
        assert len(set(ids)) == len(ids)


def test_walls_and_xpr_range():
    """Six shell facets and a sensible XPR target range."""
    assert len(WALL_NAMES) == 6
    lo, hi = XPR_TARGET_RANGE_DB
    assert lo < hi
