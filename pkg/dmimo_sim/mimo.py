"""Single-user MIMO processing: precoding, water-filling and capacity.

Downlink processing works on ``G_k = H_k.T`` (UE antennas x AP antennas),
uplink on ``H_k`` itself (AP antennas x UE antennas). Powers are in mW and
capacities in bits/s/Hz; every RB is treated as flat.
"""

import logging
from dataclasses import dataclass

import numpy as np

from dmimo_sim.exceptions import SingularChannel, SingularGram
from dmimo_sim.numerics import gram_inverse_diagonal, matrix_rank, pinv, svd
from dmimo_sim.utils import floor_db, linear_to_db

logger = logging.getLogger(__name__)

PRECODERS = ("zf", "svd")


@dataclass(frozen=True, eq=False)
class PrecodingSolution:
    """Downlink precoding of every RB.

    Parameters
    ----------
    precoders : numpy.ndarray, shape (rb_count, M, L)
        Unit-norm precoder columns ``F_k``.
    combiners : numpy.ndarray, shape (rb_count, L, N)
        Receive combiners ``W_k``.
    layer_powers : numpy.ndarray, shape (rb_count, L)
        Water-filled layer powers ``Q_k`` in mW.
    antenna_powers : numpy.ndarray, shape (rb_count, M)
        Power radiated by each AP antenna, ``sum_l |F_ml|^2 Q_l``.
    effective_gains : numpy.ndarray, shape (rb_count, L)
        Power gain of every layer after precoding and combining.

    """

    precoders: np.ndarray
    combiners: np.ndarray
    layer_powers: np.ndarray
    antenna_powers: np.ndarray
    effective_gains: np.ndarray


@dataclass(frozen=True, eq=False)
class CapacityResult:
    """Capacity per RB and per-layer SINR."""

    per_rb_bits_per_hz: np.ndarray
    per_layer_sinr_db: np.ndarray

    @property
    def mean_bits_per_hz(self):
        """Arithmetic mean of the per-RB capacities."""
        return float(np.mean(self.per_rb_bits_per_hz))


def waterfill(gains, n0, total_power):
    """Allocate power over parallel channels by water-filling.

    Parameters
    ----------
    gains : array_like of float
        Positive channel power gains.
    n0 : float
        Noise power in mW.
    total_power : float
        Power budget in mW.

    Returns
    -------
    powers : numpy.ndarray
        Powers in mW, summing to `total_power`. Active channels share the
        water level ``p_i + n0 / g_i``; inactive channels have
        ``n0 / g_i`` at or above it.

    Examples
    --------
    >>> waterfill([1.0, 0.5], n0=1.0, total_power=3.0).tolist()
    [2.0, 1.0]

    """
    gains = np.asarray(gains, dtype=float)
    if gains.ndim != 1 or len(gains) == 0 or not np.all(gains > 0):
        raise ValueError("`gains` must be a non-empty list of positive values.")
    if not n0 > 0:
        raise ValueError(f"`n0` must be > 0, got {n0}")
    if not total_power > 0:
        raise ValueError(f"`total_power` must be > 0, got {total_power}")

    floors = n0 / gains
    order = np.argsort(floors, kind="stable")
    sorted_floors = floors[order]
    for active in range(len(gains), 0, -1):
        level = (total_power + np.sum(sorted_floors[:active])) / active
        if level > sorted_floors[active - 1]:
            break
    powers = np.zeros_like(gains)
    powers[order[:active]] = level - sorted_floors[:active]
    return powers


def capacity(powers, gains, n0):
    """Compute ``sum_i log2(1 + p_i g_i / n0)`` in bits/s/Hz."""
    powers = np.asarray(powers, dtype=float)
    gains = np.asarray(gains, dtype=float)
    return float(np.sum(np.log2(1.0 + powers * gains / n0)))


def precode_svd(G, layers):
    """Precode on the dominant singular modes.

    Parameters
    ----------
    G : array_like, shape (N, M)
        Downlink channel, receive antennas by transmit antennas.
    layers : int
        Number of layers L, at most ``min(N, M)``.

    Returns
    -------
    F : numpy.ndarray, shape (M, L)
        Top-L right singular vectors.
    W : numpy.ndarray, shape (L, N)
        Conjugate-transposed top-L left singular vectors.
    gains : numpy.ndarray, shape (L,)
        Squared singular values.

    """
    left, s, right = svd(G)
    _check_layers(layers, len(s))
    F = right[:, :layers]
    W = left[:, :layers].conj().T
    return F, W, s[:layers] ** 2


def precode_zf(G, layers):
    """Zero-force the first `layers` receive antennas.

    Parameters
    ----------
    G : array_like, shape (N, M)
        Downlink channel, receive antennas by transmit antennas.
    layers : int
        Number of layers L; layer ``i`` is received on antenna ``i``.

    Returns
    -------
    F : numpy.ndarray, shape (M, L)
        Right pseudo-inverse of the first L rows, columns scaled to unit
        norm.
    gains : numpy.ndarray, shape (L,)
        ``1 / |f_i|^2`` of the unscaled columns.

    Raises
    ------
    SingularChannel
        If the first L rows have rank below L.

    """
    G = np.asarray(G, dtype=complex)
    _check_layers(layers, min(G.shape))
    rows = G[:layers]
    if matrix_rank(rows) < layers:
        raise SingularChannel(
            f"Channel of rank {matrix_rank(rows)} cannot carry {layers} ZF layers"
        )
    F = pinv(rows)
    norms = np.linalg.norm(F, axis=0)
    return F / norms, 1.0 / norms**2


def dl_precoding(link, precoder, layers, tx, noise, on_singular="raise"):
    """Precode and water-fill every RB of a downlink.

    Parameters
    ----------
    link : LinkChannel
        The (stacked) link.
    precoder : "zf" | "svd"
        The precoding technique.
    layers : int
        Number of layers L.
    tx : TxPowerModel
        Its network power for the link's AP count is the budget, split
        equally over the RBs.
    noise : NoiseModel
        Noise per RB.
    on_singular : "raise" | "zero"
        What to do when ZF meets a rank-deficient RB: raise
        :class:`SingularChannel` or give the RB zero power with a warning.

    Returns
    -------
    solution : PrecodingSolution
        The per-RB precoding. Zero channels get zero power.

    """
    if precoder not in PRECODERS:
        raise ValueError(f"`precoder` must be one of {PRECODERS}, got {precoder!r}")
    if on_singular not in ("raise", "zero"):
        raise ValueError(
            f"`on_singular` must be 'raise' or 'zero', got {on_singular!r}"
        )
    _check_layers(layers, min(link.network_antennas, link.ue_antennas))
    budget = tx.network_power_mw(len(link.ap_ids)) / link.rb_count
    n0 = noise.n0_mw
    K, M, N = link.per_rb.shape

    precoders = np.zeros((K, M, layers), dtype=complex)
    combiners = np.zeros((K, layers, N), dtype=complex)
    powers = np.zeros((K, layers))
    gains = np.zeros((K, layers))
    singular = []
    for k in range(K):
        G = link.per_rb[k].T
        if not np.any(G):
            continue
        if precoder == "svd":
            F, W, g = precode_svd(G, layers)
        else:
            try:
                F, g = precode_zf(G, layers)
            except SingularChannel:
                if on_singular == "raise":
                    raise
                singular.append(k)
                continue
            W = np.eye(layers, N, dtype=complex)
        precoders[k] = F
        combiners[k] = W
        gains[k] = g
        usable = g > 0
        if np.any(usable):
            powers[k, usable] = waterfill(g[usable], n0, budget)
    if singular:
        logger.warning(
            "UE %s: %d of %d RBs cannot carry %d ZF layers, their capacity is 0",
            link.ue_id, len(singular), K, layers,
        )

    antenna_powers = np.einsum("kml,kl->km", np.abs(precoders) ** 2, powers)
    return PrecodingSolution(
        precoders=precoders,
        combiners=combiners,
        layer_powers=powers,
        antenna_powers=antenna_powers,
        effective_gains=gains,
    )


def dl_capacity(link, precoder, layers, tx, noise, on_singular="raise"):
    """Compute the single-user downlink capacity of a link.

    Each RB is precoded, water-filled over the per-RB share of the network
    power (see :func:`dl_precoding`) and contributes
    ``sum_i log2(1 + p_i g_i / n0)``.

    Returns
    -------
    result : CapacityResult
        Zero capacity for zero channels.

    """
    solution = dl_precoding(link, precoder, layers, tx, noise, on_singular)
    n0 = noise.n0_mw
    snr = solution.layer_powers * solution.effective_gains / n0
    per_rb = np.sum(np.log2(1.0 + snr), axis=1)
    return CapacityResult(
        per_rb_bits_per_hz=per_rb, per_layer_sinr_db=floor_db(linear_to_db(snr))
    )


def ul_zf_capacity(link, per_antenna_power_mw, noise, waterfilling=False):
    """Compute the uplink capacity with a centralized ZF detector.

    Parameters
    ----------
    link : LinkChannel
        The (stacked) link with at least as many AP antennas as UE antennas.
    per_antenna_power_mw : float
        Power of every UE antenna in mW.
    noise : NoiseModel
        Noise per RB.
    waterfilling : bool
        If True, the UE's total power is water-filled over the post-detection
        gains instead of being split uniformly.

    Returns
    -------
    result : CapacityResult
        Per RB, ``SINR_i = p_i / (n0 [(H^H H)^-1]_ii)``. RBs with a singular
        Gram matrix contribute zero, with a warning.

    """
    if link.network_antennas < link.ue_antennas:
        raise ValueError(
            f"ZF detection needs at least {link.ue_antennas} AP antennas, "
            f"got {link.network_antennas}"
        )
    if not per_antenna_power_mw > 0:
        raise ValueError(
            f"`per_antenna_power_mw` must be > 0, got {per_antenna_power_mw}"
        )
    n0 = noise.n0_mw
    K, _, N = link.per_rb.shape
    sinr = np.zeros((K, N))
    singular = 0
    for k in range(K):
        H = link.per_rb[k]
        if not np.any(H):
            continue
        try:
            noise_gain = gram_inverse_diagonal(H)
        except SingularGram:
            singular += 1
            continue
        if waterfilling:
            p = waterfill(1.0 / noise_gain, n0, N * per_antenna_power_mw)
        else:
            p = np.full(N, per_antenna_power_mw)
        sinr[k] = p / (n0 * noise_gain)
    if singular:
        logger.warning(
            "UE %s: singular Gram matrix on %d of %d RBs, their capacity is 0",
            link.ue_id, singular, K,
        )
    return CapacityResult(
        per_rb_bits_per_hz=np.sum(np.log2(1.0 + sinr), axis=1),
        per_layer_sinr_db=floor_db(linear_to_db(sinr)),
    )


def stream_rank(H, per_antenna_power_dbm, threshold_dbm_per_rb, normalization=1.0):
    """Count the significant streams of a single-RB channel.

    Every stream gets the uniform per-antenna power, so the received power
    of stream ``i`` is ``P_ant * sigma_i^2 / normalization``. `normalization`
    can, for instance, spread the power over the transmit antennas.

    Parameters
    ----------
    H : array_like, shape (M, N)
        The channel of one RB.
    per_antenna_power_dbm : float
        Power per antenna in dBm.
    threshold_dbm_per_rb : float
        Minimum received stream power in dBm per RB.
    normalization : float
        Positive divisor of the stream power.

    Returns
    -------
    rank : int
        Number of streams at or above the threshold; 0 for a zero channel.

    """
    if not normalization > 0:
        raise ValueError(f"`normalization` must be > 0, got {normalization}")
    H = np.asarray(H, dtype=complex)
    if not np.any(H):
        return 0
    _, s, _ = svd(H)
    received = per_antenna_power_dbm + linear_to_db(s**2 / normalization)
    return int(np.sum(received >= threshold_dbm_per_rb))


def _check_layers(layers, limit):
    if not 1 <= layers <= limit:
        raise ValueError(f"`layers` must be between 1 and {limit}, got {layers}")
