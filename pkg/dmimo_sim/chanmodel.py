"""Per-RB MIMO channels, Rayleigh synthesis and the channel database.

A channel matrix ``H_k`` has one row per network (AP) antenna and one column
per UE antenna, so the uplink reads ``y = H_k x`` and the downlink uses
``H_k.T``. Entries are dimensionless complex amplitude gains.
"""

import logging
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import pandas as pd
from scipy.optimize import brentq
from tqdm.auto import tqdm

from dmimo_sim.config import (
    COHERENCE_COLUMNS,
    COHERENCE_REFERENCE_HZ,
    COHERENCE_THRESHOLD,
    DB_MAGIC,
    DB_MODELS,
    DB_VERSION,
    PATHLOSS_PRUNE_DB,
    SPEED_OF_LIGHT,
)
from dmimo_sim.exceptions import (
    DegenerateChannel,
    DigestMismatch,
    FormatError,
    MissingEntry,
)
from dmimo_sim.scene import RbGrid, array_elements, scene_digest
from dmimo_sim.tracer import trace_link
from dmimo_sim.utils import get_worker_count, linear_to_db, rng_stream

logger = logging.getLogger(__name__)

# magic, version, M, N, rb_count, model, seed, digest, carrier, rb_bandwidth,
# AP count, UE count
_HEADER = struct.Struct("<4sHIIIBQ32sddII")

# complex entries evaluated at once when scanning a delay profile
_PROFILE_CHUNK = 1 << 20


@dataclass(frozen=True, eq=False)
class LinkChannel:
    """Per-RB channel between a set of APs and one UE.

    Parameters
    ----------
    ap_ids : tuple of int
        APs in row-block order.
    ue_id : int
        The UE.
    model : "rt" | "rayleigh"
        The channel model that produced the matrices.
    per_rb : numpy.ndarray, shape (rb_count, M, N)
        One matrix per RB.
    rb_center_frequencies : numpy.ndarray, shape (rb_count,)
        RB centre frequencies in Hz.
    antennas_per_ap : tuple of int
        Row count of each AP block; sums to M.
    empty : bool
        True if no ray path reached the UE; the matrices are then zero.
    delay_profile : tuple of numpy.ndarray | None
        ``(delays, powers)`` of the paths, powers summed over antenna pairs.
        Only kept in memory for freshly traced links.

    """

    ap_ids: tuple
    ue_id: int
    model: str
    per_rb: np.ndarray
    rb_center_frequencies: np.ndarray
    antennas_per_ap: tuple
    empty: bool = False
    delay_profile: tuple = None

    def __post_init__(self):
        if self.model not in DB_MODELS:
            raise ValueError(
                f"`model` must be one of {list(DB_MODELS)}, got {self.model!r}"
            )
        if self.per_rb.ndim != 3:
            raise ValueError(f"`per_rb` must be 3D, got shape {self.per_rb.shape}")
        if len(self.rb_center_frequencies) != self.per_rb.shape[0]:
            raise ValueError("`per_rb` needs one matrix per RB centre frequency.")
        if sum(self.antennas_per_ap) != self.per_rb.shape[1]:
            raise ValueError("`antennas_per_ap` must sum to the row count of `per_rb`.")
        if len(self.antennas_per_ap) != len(self.ap_ids):
            raise ValueError("`antennas_per_ap` needs one entry per AP.")
        if not np.all(np.isfinite(self.per_rb)):
            raise ValueError("`per_rb` must have finite entries.")

    @property
    def rb_count(self):
        """Number of RBs."""
        return self.per_rb.shape[0]

    @property
    def network_antennas(self):
        """Total number of AP antennas M."""
        return self.per_rb.shape[1]

    @property
    def ue_antennas(self):
        """Number of UE antennas N."""
        return self.per_rb.shape[2]

    def ap_rows(self, ap_id):
        """Get the row slice of `ap_id` in the stacked matrices."""
        if ap_id not in self.ap_ids:
            raise MissingEntry(f"AP {ap_id} is not part of this link")
        idx = self.ap_ids.index(ap_id)
        start = sum(self.antennas_per_ap[:idx])
        return slice(start, start + self.antennas_per_ap[idx])

    def ap_link(self, ap_id):
        """Extract the single-AP link of `ap_id`."""
        rows = self.ap_rows(ap_id)
        block = self.per_rb[:, rows, :]
        return LinkChannel(
            ap_ids=(ap_id,),
            ue_id=self.ue_id,
            model=self.model,
            per_rb=block,
            rb_center_frequencies=self.rb_center_frequencies,
            antennas_per_ap=(block.shape[1],),
            empty=not np.any(block),
        )

    def with_ue_antennas(self, count):
        """Keep only the first `count` UE antennas."""
        if not 1 <= count <= self.ue_antennas:
            raise ValueError(
                f"`count` must be between 1 and {self.ue_antennas}, got {count}"
            )
        return LinkChannel(
            ap_ids=self.ap_ids,
            ue_id=self.ue_id,
            model=self.model,
            per_rb=self.per_rb[:, :, :count],
            rb_center_frequencies=self.rb_center_frequencies,
            antennas_per_ap=self.antennas_per_ap,
            empty=self.empty,
        )


@dataclass(frozen=True, eq=False)
class ChannelDatabase:
    """Single-AP links for every (AP, UE) pair of a deployment.

    ``entries`` maps ``(ap_id, ue_id)`` to a :class:`LinkChannel`.
    """

    scene_digest: str
    seed: int
    model: str
    carrier: float
    rb_bandwidth: float
    rb_count: int
    ap_ids: tuple
    ue_ids: tuple
    entries: dict

    @property
    def rb_grid(self):
        """The :class:`~dmimo_sim.scene.RbGrid` of all links."""
        return RbGrid(self.carrier, self.rb_count, self.rb_bandwidth)

    def link(self, ap_id, ue_id):
        """Get the single-AP link of (`ap_id`, `ue_id`)."""
        try:
            return self.entries[(ap_id, ue_id)]
        except KeyError:
            raise MissingEntry(f"No channel for AP {ap_id} and UE {ue_id}") from None

    def equals(self, other):
        """Check that two databases hold bit-identical data."""
        if (
            self.scene_digest != other.scene_digest
            or self.seed != other.seed
            or self.model != other.model
            or self.carrier != other.carrier
            or self.rb_bandwidth != other.rb_bandwidth
            or self.rb_count != other.rb_count
            or tuple(self.ap_ids) != tuple(other.ap_ids)
            or tuple(self.ue_ids) != tuple(other.ue_ids)
            or set(self.entries) != set(other.entries)
        ):
            return False
        return all(
            np.array_equal(link.per_rb, other.entries[key].per_rb)
            for key, link in self.entries.items()
        )


def assemble_rt_channel(paths, tx_array, rx_array, rb_grid, ap_id=0, ue_id=0):
    """Sum ray paths into per-RB MIMO matrices.

    Parameters
    ----------
    paths : list of RayPath
        Paths from the AP (transmitter) to the UE (receiver).
    tx_array, rx_array : ArrayConfig
        AP and UE arrays.
    rb_grid : RbGrid
        The RB grid; one matrix is computed at each RB centre.
    ap_id, ue_id : int
        Ids recorded on the link.

    Returns
    -------
    link : LinkChannel
        ``per_rb[k, m, n]`` couples AP element ``m`` and UE element ``n``.
        Each element's Jones vector passes through the fixed XPD leakage
        matrix of its array; element offsets add the plane-wave phase of the
        departure and arrival directions. Without paths the link is flagged
        ``empty`` and all matrices are zero.

    """
    freqs = rb_grid.centers
    tx_elems = array_elements(tx_array, rb_grid.carrier)
    rx_elems = array_elements(rx_array, rb_grid.carrier)
    n_tx = len(tx_elems)
    n_rx = len(rx_elems)

    if len(paths) == 0:
        logger.debug("AP %s -> UE %s: no path survived, empty link", ap_id, ue_id)
        return LinkChannel(
            ap_ids=(ap_id,),
            ue_id=ue_id,
            model="rt",
            per_rb=np.zeros((len(freqs), n_tx, n_rx), dtype=complex),
            rb_center_frequencies=freqs,
            antennas_per_ap=(n_tx,),
            empty=True,
            delay_profile=(np.zeros(0), np.zeros(0)),
        )

    tx_pol = np.array([jones for _, jones in tx_elems]) @ tx_array.leakage_matrix().T
    rx_pol = np.array([jones for _, jones in rx_elems]) @ rx_array.leakage_matrix().T
    tx_off = np.array([off for off, _ in tx_elems])
    rx_off = np.array([off for off, _ in rx_elems])

    lengths = np.array([p.length for p in paths])
    delays = np.array([p.delay for p in paths])
    gains = np.array([p.pol_gain for p in paths])
    dep = np.array([p.departure for p in paths])
    arr = np.array([p.arrival for p in paths])

    # (P, K) spreading and delay phase, then the (P, K, 2, 2) field
    spreading = SPEED_OF_LIGHT / freqs[None, :] / (4.0 * np.pi * lengths[:, None])
    scalar = spreading * np.exp(-2j * np.pi * freqs[None, :] * delays[:, None])
    field = gains[:, None, :, :] * scalar[:, :, None, None]

    wavenumber = 2.0 * np.pi * freqs / SPEED_OF_LIGHT
    tx_phase = np.exp(1j * wavenumber[None, :, None] * (dep @ tx_off.T)[:, None, :])
    rx_phase = np.exp(-1j * wavenumber[None, :, None] * (arr @ rx_off.T)[:, None, :])

    per_rb = np.einsum(
        "ni,pkij,mj,pkm,pkn->kmn", rx_pol, field, tx_pol, tx_phase, rx_phase,
        optimize=True,
    )

    # power of each path over all antenna pairs at the carrier
    coupling = np.einsum("ni,pij,mj->pnm", rx_pol, gains, tx_pol, optimize=True)
    carrier_spreading = SPEED_OF_LIGHT / rb_grid.carrier / (4.0 * np.pi * lengths)
    powers = np.sum(np.abs(coupling) ** 2, axis=(1, 2)) * carrier_spreading**2

    return LinkChannel(
        ap_ids=(ap_id,),
        ue_id=ue_id,
        model="rt",
        per_rb=per_rb,
        rb_center_frequencies=freqs,
        antennas_per_ap=(n_tx,),
        delay_profile=(delays, powers),
    )


def synthesize_rayleigh(rt, seed):
    """Draw a Rayleigh channel with the per-entry magnitudes of `rt`.

    Every entry becomes ``|H_rt| * s`` with ``s`` circularly symmetric
    complex normal of unit variance, independent across RB, row and column.
    The draws of each AP block come from the stream ``(seed, ap_id, ue_id)``,
    so a stacked link and its single-AP parts synthesize identically.

    Parameters
    ----------
    rt : LinkChannel
        A ray-traced link.
    seed : int
        Global seed.

    Returns
    -------
    link : LinkChannel
        The Rayleigh link, same shape and ids.

    """
    if rt.model != "rt":
        raise ValueError(f"`rt` must be a ray-traced link, got model {rt.model!r}")
    blocks = []
    for ap_id in rt.ap_ids:
        magnitude = np.abs(rt.per_rb[:, rt.ap_rows(ap_id), :])
        rng = rng_stream(seed, ap_id, rt.ue_id)
        normals = rng.standard_normal(magnitude.shape + (2,))
        s = (normals[..., 0] + 1j * normals[..., 1]) / np.sqrt(2.0)
        blocks.append(magnitude * s)
    return LinkChannel(
        ap_ids=rt.ap_ids,
        ue_id=rt.ue_id,
        model="rayleigh",
        per_rb=np.concatenate(blocks, axis=1),
        rb_center_frequencies=rt.rb_center_frequencies,
        antennas_per_ap=rt.antennas_per_ap,
        empty=rt.empty,
    )


def coherence_bandwidth(link, correlation_threshold=COHERENCE_THRESHOLD):
    """Estimate the coherence bandwidth of a link.

    The frequency correlation ``R(df)`` of the transfer function of every
    antenna pair is averaged over the pairs and normalized to ``R(0) = 1``.
    The coherence bandwidth is the largest ``df`` with ``|R| >= threshold``
    for all smaller lags, capped at the occupied bandwidth.

    Parameters
    ----------
    link : LinkChannel
        The link, with at least two RBs.
    correlation_threshold : float
        Threshold within (0, 1).

    Returns
    -------
    bandwidth : float
        Coherence bandwidth in Hz.

    Raises
    ------
    DegenerateChannel
        If the link carries no energy.

    Notes
    -----
    Freshly traced links keep their power delay profile and use the exact
    correlation ``sum_p P_p exp(j 2 pi df tau_p) / sum_p P_p``. Other links
    fall back to the sample correlation over the RB grid with linear
    interpolation between lags, which cannot resolve less than one RB.

    """
    if link.rb_count < 2:
        raise ValueError(f"`link` needs at least 2 RBs, got {link.rb_count}")
    if not 0 < correlation_threshold < 1:
        raise ValueError(
            "`correlation_threshold` must be within (0, 1), "
            f"got {correlation_threshold}"
        )
    freqs = link.rb_center_frequencies
    rb_bw = freqs[1] - freqs[0]
    span = rb_bw * link.rb_count
    if not np.any(link.per_rb):
        raise DegenerateChannel(f"Link to UE {link.ue_id} carries no energy")

    if link.delay_profile is not None and np.sum(link.delay_profile[1]) > 0:
        return _profile_coherence(*link.delay_profile, correlation_threshold, span)

    H = link.per_rb.reshape(link.rb_count, -1)
    corr = np.empty(link.rb_count)
    for lag in range(link.rb_count):
        a = H[: link.rb_count - lag]
        b = H[lag:]
        num = np.sum(a * b.conj())
        den = np.sqrt(np.sum(np.abs(a) ** 2) * np.sum(np.abs(b) ** 2))
        corr[lag] = np.abs(num) / den if den > 0 else 0.0
    below = np.flatnonzero(corr < correlation_threshold)
    if len(below) == 0:
        return float(span)
    lag = below[0]
    frac = (corr[lag - 1] - correlation_threshold) / (corr[lag - 1] - corr[lag])
    return float(rb_bw * (lag - 1 + frac))


def _profile_coherence(delays, powers, threshold, span):
    """Coherence bandwidth from a power delay profile."""
    weights = powers / np.sum(powers)
    relative = delays - delays[np.argmax(powers)]

    def _corr(df):
        return np.abs(np.sum(weights * np.exp(2j * np.pi * df * relative)))

    spread = np.max(np.abs(relative))
    n_grid = int(min(max(4096, np.ceil(20 * span * spread)), 1_000_000))
    grid = np.linspace(0.0, span, n_grid + 1)
    chunk = max(1, _PROFILE_CHUNK // len(relative))
    for start in range(0, len(grid), chunk):
        part = grid[start : start + chunk]
        values = np.abs(np.exp(2j * np.pi * np.outer(part, relative)) @ weights)
        below = np.flatnonzero(values < threshold)
        if len(below) > 0:
            # R(0) = 1, so the first crossing is never at index 0
            idx = start + below[0]
            lo, hi = grid[idx - 1], grid[idx]
            return float(brentq(lambda df: _corr(df) - threshold, lo, hi, xtol=1e-6))
    return float(span)


def pathloss_db(link):
    """Get the wideband SISO-equivalent path loss of a link in dB.

    ``-10 log10`` of the mean ``|H|^2`` over RBs and antenna pairs;
    ``inf`` for an empty link.
    """
    return float(-linear_to_db(np.mean(np.abs(link.per_rb) ** 2)))


def stack_links(links):
    """Row-stack links of the same UE in the given order.

    Raises
    ------
    ValueError
        If the links differ in UE, model, RB grid or UE antenna count.

    """
    links = list(links)
    if len(links) == 0:
        raise ValueError("`links` must not be empty.")
    first = links[0]
    for link in links[1:]:
        if (
            link.ue_id != first.ue_id
            or link.model != first.model
            or link.ue_antennas != first.ue_antennas
            or not np.array_equal(
                link.rb_center_frequencies, first.rb_center_frequencies
            )
        ):
            raise ValueError("Links must share UE, model, RB grid and UE antennas.")
    ap_ids = sum((tuple(link.ap_ids) for link in links), ())
    if len(set(ap_ids)) != len(ap_ids):
        raise ValueError(f"Each AP may appear once, got {ap_ids}")
    profile = None
    if all(link.delay_profile is not None for link in links):
        profile = (
            np.concatenate([link.delay_profile[0] for link in links]),
            np.concatenate([link.delay_profile[1] for link in links]),
        )
    return LinkChannel(
        ap_ids=ap_ids,
        ue_id=first.ue_id,
        model=first.model,
        per_rb=np.concatenate([link.per_rb for link in links], axis=1),
        rb_center_frequencies=first.rb_center_frequencies,
        antennas_per_ap=sum((tuple(link.antennas_per_ap) for link in links), ()),
        empty=all(link.empty for link in links),
        delay_profile=profile,
    )


def stack_channels(db, ap_ids, ue_id):
    """Stack the single-AP links of `ap_ids` to `ue_id`, in that order.

    Raises
    ------
    MissingEntry
        If a pair is not in the database.

    """
    return stack_links([db.link(ap_id, ue_id) for ap_id in ap_ids])


def build_database(
    scene, deployment, seed=0, budget=None, cal=None, n_jobs=None, progress=False
):
    """Trace every (AP, UE) link of a deployment.

    Parameters
    ----------
    scene : Scene
        The scene.
    deployment : Deployment
        All APs of the deployment are traced, active or not.
    seed : int
        Global seed.
    budget : InteractionBudget | None
        Interaction limits of the tracer.
    cal : XprCalibration | None
        XPR statistics.
    n_jobs : int | None
        Number of worker threads, see :func:`dmimo_sim.utils.get_worker_count`.
    progress : bool
        Show a progress bar.

    Returns
    -------
    db : ChannelDatabase
        Ray-traced single-AP links. The result does not depend on `n_jobs`.

    """
    grid = scene.rb_grid
    pairs = [(ap, ue) for ap in deployment.aps for ue in deployment.ues]

    def _link(pair):
        ap, ue = pair
        paths = trace_link(
            scene, ap.position, ue.position, budget=budget, seed=seed, cal=cal,
            link_key=(ap.id, ue.id),
        )
        return assemble_rt_channel(paths, ap.array, ue.array, grid, ap.id, ue.id)

    workers = get_worker_count(n_jobs)
    logger.info(
        "Tracing %d links (%d APs x %d UEs) with %d workers",
        len(pairs), len(deployment.aps), len(deployment.ues), workers,
    )
    with ThreadPoolExecutor(max_workers=workers) as pool:
        links = list(
            tqdm(pool.map(_link, pairs), total=len(pairs), disable=not progress)
        )
    entries = {(link.ap_ids[0], link.ue_id): link for link in links}
    n_empty = sum(link.empty for link in links)
    if n_empty:
        logger.info("%d of %d links have no path", n_empty, len(links))
    return ChannelDatabase(
        scene_digest=scene_digest(scene, deployment),
        seed=int(seed),
        model="rt",
        carrier=grid.carrier,
        rb_bandwidth=grid.rb_bandwidth,
        rb_count=grid.rb_count,
        ap_ids=deployment.ap_ids,
        ue_ids=tuple(ue.id for ue in deployment.ues),
        entries=entries,
    )


def synthesize_database(db, seed):
    """Synthesize a Rayleigh database from a ray-traced one."""
    if db.model != "rt":
        raise ValueError(f"`db` must hold ray-traced links, got model {db.model!r}")
    entries = {key: synthesize_rayleigh(link, seed) for key, link in db.entries.items()}
    return ChannelDatabase(
        scene_digest=db.scene_digest,
        seed=int(seed),
        model="rayleigh",
        carrier=db.carrier,
        rb_bandwidth=db.rb_bandwidth,
        rb_count=db.rb_count,
        ap_ids=db.ap_ids,
        ue_ids=db.ue_ids,
        entries=entries,
    )


def coherence_report(
    db, threshold=COHERENCE_THRESHOLD, max_pathloss_db=PATHLOSS_PRUNE_DB
):
    """Tabulate the coherence bandwidth of the links of a database.

    Only links with a path loss below `max_pathloss_db` are reported.

    Returns
    -------
    report : pandas.DataFrame
        Columns ``ap_id``, ``ue_id``, ``coherence_hz``, ``pathloss_db``,
        sorted by AP then UE.

    """
    rows = []
    for (ap_id, ue_id), link in sorted(db.entries.items()):
        loss = pathloss_db(link)
        if link.empty or not loss < max_pathloss_db:
            continue
        rows.append([ap_id, ue_id, coherence_bandwidth(link, threshold), loss])
    return pd.DataFrame(rows, columns=COHERENCE_COLUMNS)


def coherence_summary(report, reference_hz=COHERENCE_REFERENCE_HZ):
    """Summarize a coherence report.

    Returns
    -------
    summary : dict
        ``links``, ``p10_hz`` (10th percentile), ``median_hz`` and
        ``fraction_above_reference``.

    """
    values = report["coherence_hz"].to_numpy()
    if len(values) == 0:
        return dict(
            links=0, p10_hz=np.nan, median_hz=np.nan, fraction_above_reference=np.nan
        )
    return dict(
        links=len(values),
        p10_hz=float(np.percentile(values, 10)),
        median_hz=float(np.median(values)),
        fraction_above_reference=float(np.mean(values > reference_hz)),
    )


def save_database(db, fname):
    """Write a channel database to a binary file.

    The little-endian layout is a fixed header (magic ``DMCH``, version,
    M, N, rb_count, model tag, seed, SHA-256 scene digest, carrier,
    rb_bandwidth, AP and UE counts), the AP and UE ids as ``uint32``, then
    all entries as ``complex128`` in (ap, ue, rb, row, column) order.

    The header holds a single M, so every AP must have the same number of
    antennas and every link the same RB count.

    Raises
    ------
    ValueError
        If the links do not all share one ``(rb_count, M, N)`` shape. Nothing
        is written in that case.

    """
    shapes = {link.per_rb.shape for link in db.entries.values()}
    if len(shapes) != 1:
        raise ValueError(f"All links must share one shape, got {sorted(shapes)}")
    rb_count, M, N = shapes.pop()
    data = np.empty((len(db.ap_ids), len(db.ue_ids), rb_count, M, N), dtype="<c16")
    for i, ap_id in enumerate(db.ap_ids):
        for j, ue_id in enumerate(db.ue_ids):
            data[i, j] = db.link(ap_id, ue_id).per_rb
    header = _HEADER.pack(
        DB_MAGIC,
        DB_VERSION,
        M,
        N,
        rb_count,
        DB_MODELS[db.model],
        db.seed,
        bytes.fromhex(db.scene_digest),
        db.carrier,
        db.rb_bandwidth,
        len(db.ap_ids),
        len(db.ue_ids),
    )
    with open(fname, "wb") as fout:
        fout.write(header)
        fout.write(np.asarray(db.ap_ids, dtype="<u4").tobytes())
        fout.write(np.asarray(db.ue_ids, dtype="<u4").tobytes())
        fout.write(data.tobytes())
    logger.info("Saved %d links to %s", len(db.entries), fname)


def load_database(fname, scene_digest=None):
    """Read a channel database written by :func:`save_database`.

    Parameters
    ----------
    fname : str | pathlib.Path
        The file.
    scene_digest : str | None
        If given, the digest the database must have been built for.

    Raises
    ------
    FormatError
        If the file is not a channel database, has another version or is
        truncated.
    DigestMismatch
        If `scene_digest` differs from the stored digest.

    """
    raw = Path(fname).read_bytes()
    if len(raw) < _HEADER.size:
        raise FormatError(f"{fname} is too short to be a channel database")
    (
        magic, version, M, N, rb_count, model_tag, seed, digest, carrier,
        rb_bandwidth, n_aps, n_ues,
    ) = _HEADER.unpack_from(raw)
    if magic != DB_MAGIC:
        raise FormatError(f"{fname} is not a channel database (magic {magic!r})")
    if version != DB_VERSION:
        raise FormatError(f"{fname} has version {version}, expected {DB_VERSION}")
    models = {tag: name for name, tag in DB_MODELS.items()}
    if model_tag not in models:
        raise FormatError(f"{fname} has an unknown model tag {model_tag}")
    offset = _HEADER.size
    ids_size = 4 * (n_aps + n_ues)
    payload = n_aps * n_ues * rb_count * M * N * 16
    if len(raw) != offset + ids_size + payload:
        raise FormatError(
            f"{fname} holds {len(raw)} bytes, expected {offset + ids_size + payload}"
        )
    ids = np.frombuffer(raw, dtype="<u4", count=n_aps + n_ues, offset=offset)
    ap_ids = tuple(int(i) for i in ids[:n_aps])
    ue_ids = tuple(int(i) for i in ids[n_aps:])
    data = np.frombuffer(raw, dtype="<c16", offset=offset + ids_size).reshape(
        n_aps, n_ues, rb_count, M, N
    )
    stored = digest.hex()
    if scene_digest is not None and scene_digest != stored:
        raise DigestMismatch(
            f"{fname} was built for scene {stored[:12]}..., not {scene_digest[:12]}..."
        )

    grid = RbGrid(carrier, rb_count, rb_bandwidth)
    freqs = grid.centers
    model = models[model_tag]
    entries = {}
    for i, ap_id in enumerate(ap_ids):
        for j, ue_id in enumerate(ue_ids):
            per_rb = data[i, j].astype(complex)
            entries[(ap_id, ue_id)] = LinkChannel(
                ap_ids=(ap_id,),
                ue_id=ue_id,
                model=model,
                per_rb=per_rb,
                rb_center_frequencies=freqs,
                antennas_per_ap=(M,),
                empty=not np.any(per_rb),
            )
    logger.info("Loaded %d links from %s", len(entries), fname)
    return ChannelDatabase(
        scene_digest=stored,
        seed=int(seed),
        model=model,
        carrier=carrier,
        rb_bandwidth=rb_bandwidth,
        rb_count=rb_count,
        ap_ids=ap_ids,
        ue_ids=ue_ids,
        entries=entries,
    )
