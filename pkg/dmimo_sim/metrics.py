"""Per-UE coverage metrics and their distributions.

RSRP values are in dBm. A zero channel has an RSRP of minus infinity, which
is kept in memory and only replaced by ``dmimo_sim.config.FLOOR_DB`` when
rows are exported (see :meth:`UeMetricsRow.to_record`).
"""

from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from dmimo_sim.config import METRIC_COLUMNS, PERCENTILES
from dmimo_sim.exceptions import EmptyInput
from dmimo_sim.scene import los_blocked
from dmimo_sim.utils import floor_db, linear_to_db

RSRP_METHODS = ("mean", "best_pair")


@dataclass(frozen=True)
class UeMetricsRow:
    """All metrics of one UE.

    Parameters
    ----------
    ue_id : int
        The UE.
    x, y : float
        Horizontal UE position in meters.
    best_ap : int
        Id of the best-serving AP (highest RSRP, ties by lower id).
    rsrp_best_dbm : float
        RSRP of `best_ap`.
    los_count : int
        Number of active APs in line of sight.
    detected_count : int
        Number of APs with an RSRP at or above the detection threshold.
    rel2_db, rel3_db : float
        RSRP of the 2nd and 3rd best AP relative to the best one, in dB;
        minus infinity if there are fewer APs.
    rank : int
        Stream rank of the best-server link (lower median over RBs).
    cap_dl_zf, cap_dl_svd, cap_ul : float
        Mean capacity over RBs in bits/s/Hz.
    rsrp_dbm : dict
        RSRP of every candidate AP, keyed by AP id.

    """

    ue_id: int
    x: float
    y: float
    best_ap: int
    rsrp_best_dbm: float
    los_count: int
    detected_count: int
    rel2_db: float
    rel3_db: float
    rank: int
    cap_dl_zf: float
    cap_dl_svd: float
    cap_ul: float
    rsrp_dbm: dict = field(default_factory=dict, compare=False)

    def to_record(self):
        """Get the exported columns, with minus infinity replaced by the floor."""
        record = {name: getattr(self, name) for name in METRIC_COLUMNS}
        for name in ("rsrp_best_dbm", "rel2_db", "rel3_db"):
            record[name] = floor_db(record[name])
        return record


@dataclass(frozen=True, eq=False)
class DistributionTable:
    """Empirical distribution of one metric.

    Parameters
    ----------
    values : numpy.ndarray
        All samples, sorted ascending.
    points : numpy.ndarray
        The distinct sample values.
    cdf : numpy.ndarray
        Fraction of samples at or below each point.
    ccdf : numpy.ndarray
        ``1 - cdf``.
    median : float
        The 50th percentile.
    percentiles : dict
        Percentiles in ``dmimo_sim.config.PERCENTILES``.

    Notes
    -----
    Percentiles, the median included, use the ``"lower"`` rule: the result
    is always one of the samples and is never an average of two of them.

    """

    values: np.ndarray
    points: np.ndarray
    cdf: np.ndarray
    ccdf: np.ndarray
    median: float
    percentiles: dict

    def cdf_at(self, x):
        """Get the fraction of samples at or below `x`."""
        return float(np.searchsorted(self.values, x, side="right") / len(self.values))

    def to_frame(self):
        """Get the table as a DataFrame with ``value``, ``cdf`` and ``ccdf``."""
        return pd.DataFrame({"value": self.points, "cdf": self.cdf, "ccdf": self.ccdf})


def rsrp(link, tx, n_active=None, method="mean"):
    """Compute the reference signal received power of each AP of a link.

    Parameters
    ----------
    link : LinkChannel
        A single-AP or stacked link.
    tx : TxPowerModel
        Decides the total power of each AP.
    n_active : int | None
        Number of active APs the power model shares the power among.
        Defaults to the number of APs in `link`.
    method : "mean" | "best_pair"
        ``"mean"`` averages ``|H|^2`` over RBs and all antenna pairs of the
        AP. ``"best_pair"`` averages over RBs only and takes the strongest
        antenna pair.

    Returns
    -------
    rsrp : dict
        RSRP in dBm keyed by AP id. The per-antenna reference power is the
        AP power divided by its antenna count. A zero channel gives minus
        infinity.

    Examples
    --------
    A flat channel of -80 dB and 23 dBm over 4 antennas gives
    ``17 - 80 = -63`` dBm.

    """
    if method not in RSRP_METHODS:
        raise ValueError(f"`method` must be one of {RSRP_METHODS}, got {method!r}")
    n_active = len(link.ap_ids) if n_active is None else n_active
    ap_power = tx.ap_power_dbm(n_active)
    out = {}
    for ap_id, n_ant in zip(link.ap_ids, link.antennas_per_ap):
        block = np.abs(link.per_rb[:, link.ap_rows(ap_id), :]) ** 2
        if method == "mean":
            gain = np.mean(block)
        else:
            gain = np.max(np.mean(block, axis=0))
        out[ap_id] = float(ap_power - 10.0 * np.log10(n_ant) + linear_to_db(gain))
    return out


def _ranked(rsrp_dbm):
    """Sort AP ids by descending RSRP, ties by lower id."""
    return sorted(rsrp_dbm, key=lambda ap_id: (-rsrp_dbm[ap_id], ap_id))


def detection_stats(rsrp_dbm, threshold_dbm):
    """Summarize which APs a UE can detect.

    Parameters
    ----------
    rsrp_dbm : dict
        RSRP in dBm keyed by AP id.
    threshold_dbm : float
        Detection threshold.

    Returns
    -------
    best_ap : int
        The strongest AP; ties go to the lower id.
    detected_count : int
        Number of APs at or above `threshold_dbm`.
    rel2_db, rel3_db : float
        RSRP of the 2nd and 3rd strongest AP minus the best RSRP. Minus
        infinity when that AP does not exist or when the best RSRP is
        itself minus infinity.

    Examples
    --------
    >>> detection_stats({1: -90.0, 2: -95.0, 3: -105.0}, -100.0)
    (1, 2, -5.0, -15.0)

    """
    if len(rsrp_dbm) == 0:
        raise ValueError("`rsrp_dbm` must hold at least one AP.")
    order = _ranked(rsrp_dbm)
    best = rsrp_dbm[order[0]]
    detected = sum(value >= threshold_dbm for value in rsrp_dbm.values())
    rel = []
    for rank in (1, 2):
        if rank < len(order) and np.isfinite(best):
            rel.append(float(rsrp_dbm[order[rank]] - best))
        else:
            rel.append(-np.inf)
    return order[0], int(detected), rel[0], rel[1]


def los_count(scene, deployment, ue):
    """Count the active APs of `deployment` with an unobstructed path to `ue`."""
    return sum(
        not los_blocked(scene, ap.position, ue.position) for ap in deployment.active_aps
    )


def select_aps(rsrp_dbm, b):
    """Select the `b` strongest APs.

    Parameters
    ----------
    rsrp_dbm : dict
        RSRP in dBm of every candidate AP, keyed by AP id.
    b : int
        Number of APs to select.

    Returns
    -------
    ap_ids : list of int
        Strongest first; equal RSRPs in ascending id order.

    """
    if not 1 <= b <= len(rsrp_dbm):
        raise ValueError(f"`b` must be between 1 and {len(rsrp_dbm)}, got {b}")
    return _ranked(rsrp_dbm)[:b]


def aggregate(values):
    """Compute the empirical distribution of `values`.

    Parameters
    ----------
    values : array_like of float
        Samples. Minus infinity is allowed, NaN is not.

    Returns
    -------
    table : DistributionTable
        The distribution.

    Raises
    ------
    EmptyInput
        If `values` is empty.

    Examples
    --------
    >>> table = aggregate([4, 1, 3, 2])
    >>> table.median, table.cdf_at(2.5)
    (2.0, 0.5)

    """
    values = np.sort(np.asarray(values, dtype=float).ravel())
    if len(values) == 0:
        raise EmptyInput("Cannot aggregate an empty list of values.")
    if np.any(np.isnan(values)):
        raise ValueError("`values` must not contain NaN.")
    points, counts = np.unique(values, return_counts=True)
    cdf = np.cumsum(counts) / len(values)
    percentiles = {p: _lower_percentile(values, p) for p in PERCENTILES}
    return DistributionTable(
        values=values,
        points=points,
        cdf=cdf,
        ccdf=1.0 - cdf,
        median=_lower_percentile(values, 50),
        percentiles=percentiles,
    )


def _lower_percentile(sorted_values, q):
    idx = int(np.floor(q / 100.0 * (len(sorted_values) - 1)))
    return float(sorted_values[idx])
