"""Scenario orchestration: configuration, evaluation, export and sweeps."""

import hashlib
import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np
import pandas as pd
from numpy.linalg import LinAlgError
from tqdm.auto import tqdm

from dmimo_sim.chanmodel import (
    build_database,
    load_database,
    save_database,
    stack_channels,
    synthesize_database,
)
from dmimo_sim.config import (
    AP_POWER_DBM,
    CAPACITY_MAP_COLUMNS,
    DEFAULT_DEPLOYMENTS,
    DETECTION_THRESHOLD_DBM,
    DISTRIBUTION_METRICS,
    DL_NETWORK_POWER_DBM,
    MAX_DIFFRACTIONS,
    MAX_REFLECTIONS,
    METRIC_COLUMNS,
    NOISE_DBM_PER_RB,
    RANK_ANTENNA_POWER_DBM,
    RANK_THRESHOLD_DBM,
    UE_POWER_DBM,
)
from dmimo_sim.exceptions import (
    ConfigError,
    DigestMismatch,
    EmptyInput,
    FormatError,
    ScenarioError,
)
from dmimo_sim.metrics import (
    RSRP_METHODS,
    UeMetricsRow,
    aggregate,
    detection_stats,
    los_count,
    rsrp,
    select_aps,
)
from dmimo_sim.mimo import PRECODERS, dl_capacity, stream_rank, ul_zf_capacity
from dmimo_sim.scene import NoiseModel, TxPowerModel, read_scene, scene_digest
from dmimo_sim.tracer import (
    InteractionBudget,
    XprCalibration,
    calibrate_xpr,
    trace_link,
)
from dmimo_sim.utils import (
    dbm_to_mw,
    digest_of,
    floor_db,
    get_worker_count,
    read_yaml,
    to_jsonable,
)

logger = logging.getLogger(__name__)

CHANNEL_MODELS = ("rt", "rayleigh")
LINKS = ("dl", "ul")

# nested sections of a scenario file -> ScenarioConfig fields
_SECTIONS = {
    "tx": {"model": "tx_model", "power_dbm": "tx_power_dbm"},
    "budget": {"reflections": "reflections", "diffractions": "diffractions"},
    "xpr": {
        "factor": "xpr_factor",
        "offset": "xpr_offset",
        "calibrate": "calibrate_xpr",
    },
    "rank": {
        "antenna_power_dbm": "rank_antenna_power_dbm",
        "threshold_dbm": "rank_threshold_dbm",
        "normalization": "rank_normalization",
    },
    "dl": {"power_dbm": "dl_power_dbm"},
    "ul": {"power_dbm": "ul_power_dbm", "waterfilling": "ul_waterfilling"},
}

# fields that do not change results and stay out of the digest
_RUNTIME_FIELDS = ("cache_dir", "n_jobs")


@dataclass(frozen=True)
class ScenarioConfig:
    """Everything that defines one evaluation run.

    Parameters
    ----------
    scene_file : pathlib.Path
        The scene file, see :func:`dmimo_sim.scene.read_scene`.
    deployment : str
        Name of the candidate AP set in `deployments`.
    deployments : dict
        Named lists of AP ids.
    tx_model : "per-ap" | "network"
        How `tx_power_dbm` is shared among the candidate APs. It sets the
        reference power of the RSRP.
    tx_power_dbm : float
        Power level of the Tx model.
    noise_dbm_per_rb : float
        Noise power per RB.
    channel : "rt" | "rayleigh"
        Channel model of the capacity and rank evaluation.
    link : "dl" | "ul"
        Direction shown in the capacity map.
    precoder : "zf" | "svd"
        Downlink precoder shown in the capacity map.
    layers : int
        Number of layers, which is also the number of UE antennas used.
    coop : tuple of int | None
        ``(a, b)``: `b` APs are active among the `a` candidates. `a` must be
        the size of the candidate set. ``None`` activates all candidates.
    seed : int
        Global seed.
    reflections, diffractions : int
        Interaction budget of the tracer.
    xpr_factor, xpr_offset : float
        XPR correction, used unless `calibrate_xpr` is set.
    calibrate_xpr : bool
        Fit the XPR correction to the traced rays before building channels.
    rsrp_method : "mean" | "best_pair"
        See :func:`dmimo_sim.metrics.rsrp`.
    detection_threshold_dbm : float
        RSRP an AP needs to count as detected.
    rank_antenna_power_dbm, rank_threshold_dbm, rank_normalization : float
        Parameters of :func:`dmimo_sim.mimo.stream_rank`.
    dl_power_dbm : float
        Downlink power of the cooperating APs together.
    ul_power_dbm : float
        Total UE power, split evenly over the layers.
    ul_waterfilling : bool
        Water-fill the UE power instead of splitting it evenly.
    cache_dir : pathlib.Path | None
        Directory of cached channel databases.
    n_jobs : int | None
        Worker threads, see :func:`dmimo_sim.utils.get_worker_count`.

    """

    scene_file: Path
    deployment: str = "8ap"
    deployments: dict = field(
        default_factory=lambda: {k: tuple(v) for k, v in DEFAULT_DEPLOYMENTS.items()}
    )
    tx_model: str = "per-ap"
    tx_power_dbm: float = AP_POWER_DBM
    noise_dbm_per_rb: float = NOISE_DBM_PER_RB
    channel: str = "rt"
    link: str = "dl"
    precoder: str = "zf"
    layers: int = 4
    coop: tuple = None
    seed: int = 0
    reflections: int = MAX_REFLECTIONS
    diffractions: int = MAX_DIFFRACTIONS
    xpr_factor: float = 1.0
    xpr_offset: float = 0.0
    calibrate_xpr: bool = False
    rsrp_method: str = "mean"
    detection_threshold_dbm: float = DETECTION_THRESHOLD_DBM
    rank_antenna_power_dbm: float = RANK_ANTENNA_POWER_DBM
    rank_threshold_dbm: float = RANK_THRESHOLD_DBM
    rank_normalization: float = 1.0
    dl_power_dbm: float = DL_NETWORK_POWER_DBM
    ul_power_dbm: float = UE_POWER_DBM
    ul_waterfilling: bool = False
    cache_dir: Path = None
    n_jobs: int = None

    def __post_init__(self):
        object.__setattr__(self, "scene_file", Path(self.scene_file))
        if self.cache_dir is not None:
            object.__setattr__(self, "cache_dir", Path(self.cache_dir))
        object.__setattr__(
            self,
            "deployments",
            {str(k): tuple(int(i) for i in v) for k, v in self.deployments.items()},
        )
        for name, choices in (
            ("channel", CHANNEL_MODELS),
            ("link", LINKS),
            ("precoder", PRECODERS),
            ("tx_model", ("per-ap", "network")),
            ("rsrp_method", RSRP_METHODS),
        ):
            if getattr(self, name) not in choices:
                raise ConfigError(
                    f"`{name}` must be one of {list(choices)}, "
                    f"got {getattr(self, name)!r}"
                )
        if self.deployment not in self.deployments:
            raise ConfigError(
                f"Unknown deployment `{self.deployment}`, "
                f"choose from {sorted(self.deployments)}"
            )
        for name, ids in self.deployments.items():
            if len(ids) == 0 or len(set(ids)) != len(ids):
                raise ConfigError(
                    f"Deployment `{name}` must list distinct AP ids, got {list(ids)}"
                )
        if int(self.layers) < 1:
            raise ConfigError(f"`layers` must be >= 1, got {self.layers}")
        if int(self.seed) < 0:
            raise ConfigError(f"`seed` must be >= 0, got {self.seed}")
        if not self.rank_normalization > 0:
            raise ConfigError(
                f"`rank_normalization` must be > 0, got {self.rank_normalization}"
            )
        if self.coop is not None:
            coop = tuple(int(v) for v in self.coop)
            if len(coop) != 2:
                raise ConfigError(f"`coop` must be a pair (a, b), got {self.coop}")
            a, b = coop
            if not 1 <= b <= a:
                raise ConfigError(f"`coop` needs 1 <= b <= a, got a={a}, b={b}")
            if a != len(self.candidate_ids):
                raise ConfigError(
                    f"`coop` a={a} does not match deployment `{self.deployment}` "
                    f"with {len(self.candidate_ids)} APs"
                )
            object.__setattr__(self, "coop", coop)
        # raises ConfigError on bad values
        self.budget
        self.xpr_calibration
        self.tx
        self.noise

    @property
    def candidate_ids(self):
        """AP ids of the selected deployment."""
        return self.deployments[self.deployment]

    @property
    def active_count(self):
        """Number of cooperating APs b."""
        return len(self.candidate_ids) if self.coop is None else self.coop[1]

    @property
    def budget(self):
        """The :class:`~dmimo_sim.tracer.InteractionBudget`."""
        return InteractionBudget(int(self.reflections), int(self.diffractions))

    @property
    def xpr_calibration(self):
        """The configured :class:`~dmimo_sim.tracer.XprCalibration`."""
        return XprCalibration(
            factor=float(self.xpr_factor), offset=float(self.xpr_offset)
        )

    @property
    def tx(self):
        """The :class:`~dmimo_sim.scene.TxPowerModel` of the RSRP."""
        return TxPowerModel(self.tx_model, float(self.tx_power_dbm))

    @property
    def noise(self):
        """The :class:`~dmimo_sim.scene.NoiseModel`."""
        return NoiseModel(float(self.noise_dbm_per_rb))

    def to_dict(self):
        """Describe the configuration with plain containers."""
        out = asdict(self)
        out["scene_file"] = self.scene_file.as_posix()
        out["cache_dir"] = None if self.cache_dir is None else self.cache_dir.as_posix()
        out["deployments"] = {k: list(v) for k, v in self.deployments.items()}
        out["coop"] = None if self.coop is None else list(self.coop)
        return out

    @property
    def digest(self):
        """SHA-256 digest of every setting that affects results."""
        data = self.to_dict()
        for name in _RUNTIME_FIELDS:
            data.pop(name)
        return digest_of(data)


@dataclass(frozen=True, eq=False)
class ScenarioResult:
    """Per-UE rows, their distributions and the capacity map of one run."""

    config: ScenarioConfig
    config_digest: str
    scene_digest: str
    rows: tuple
    distributions: dict
    capacity_map: pd.DataFrame

    def metrics_frame(self):
        """Get the metric rows as a DataFrame in export layout."""
        return pd.DataFrame(
            [row.to_record() for row in self.rows], columns=METRIC_COLUMNS
        )


def read_config(fname, **overrides):
    """Read a scenario file.

    Parameters
    ----------
    fname : str | pathlib.Path
        A YAML scenario file. ``scene_file`` and ``cache_dir`` are resolved
        relative to the directory of `fname`.
    **overrides
        :class:`ScenarioConfig` fields replacing values of the file. ``None``
        values are ignored.

    Returns
    -------
    cfg : ScenarioConfig
        The validated configuration.

    Raises
    ------
    ConfigError
        On unknown keys or invalid values.

    """
    fname = Path(fname)
    data = read_yaml(fname)
    names = {f.name for f in fields(ScenarioConfig)}
    sectioned = {name for section in _SECTIONS.values() for name in section.values()}

    kwargs = {}
    for key, value in data.items():
        if key in _SECTIONS:
            if not isinstance(value, dict):
                raise ConfigError(f"`{key}` must be a mapping in {fname}")
            for sub, sub_value in value.items():
                if sub not in _SECTIONS[key]:
                    raise ConfigError(f"Unknown key `{key}.{sub}` in {fname}")
                kwargs[_SECTIONS[key][sub]] = sub_value
        elif key in names and key not in sectioned:
            kwargs[key] = value
        else:
            raise ConfigError(f"Unknown key `{key}` in {fname}")
    if "scene_file" not in kwargs:
        raise ConfigError(f"{fname} has no `scene_file`.")
    for key in ("scene_file", "cache_dir"):
        if kwargs.get(key) is not None:
            kwargs[key] = fname.parent / kwargs[key]

    for key, value in overrides.items():
        if key not in names:
            raise ConfigError(f"Unknown setting `{key}`")
        if value is not None:
            kwargs[key] = value
    try:
        return ScenarioConfig(**kwargs)
    except (TypeError, ValueError) as err:
        if isinstance(err, ConfigError):
            raise
        raise ConfigError(f"Invalid scenario in {fname}: {err}") from err


def calibrate_scene(scene, deployment, cfg, progress=False):
    """Fit the XPR correction to the rays of every (AP, UE) link.

    Returns the configured calibration unchanged when the scene has no
    reflected or diffracted ray.
    """
    cal = cfg.xpr_calibration
    pairs = [(ap, ue) for ap in deployment.aps for ue in deployment.ues]

    def _trace(pair):
        ap, ue = pair
        return trace_link(
            scene, ap.position, ue.position, budget=cfg.budget, seed=cfg.seed,
            cal=cal, link_key=(ap.id, ue.id),
        )

    with ThreadPoolExecutor(max_workers=get_worker_count(cfg.n_jobs)) as pool:
        traced = list(
            tqdm(pool.map(_trace, pairs), total=len(pairs), disable=not progress)
        )
    paths = [path for link_paths in traced for path in link_paths]
    try:
        fitted = calibrate_xpr(paths, scene.carrier_frequency, cal=cal, seed=cfg.seed)
    except ValueError as err:
        logger.warning("XPR calibration skipped: %s", err)
        return cal
    logger.info(
        "XPR calibration over %d paths: factor %.4f, offset %.4f dB",
        len(paths), fitted.factor, fitted.offset,
    )
    return fitted


def load_or_build_database(scene, deployment, cfg, progress=False):
    """Get the ray-traced channel database of a scenario.

    With a `cache_dir`, databases are stored under a name derived from the
    scene digest, the seed, the interaction budget and the XPR calibration,
    and reused when present. Unreadable or mismatching cache files are
    rebuilt. Deployments mixing AP array sizes cannot be stored and are
    not cached.
    """
    if cfg.calibrate_xpr:
        cal = calibrate_scene(scene, deployment, cfg, progress)
    else:
        cal = cfg.xpr_calibration
    digest = scene_digest(scene, deployment)
    fname = None
    if cfg.cache_dir is not None:
        key = digest_of(
            dict(
                scene=digest,
                seed=int(cfg.seed),
                budget=asdict(cfg.budget),
                cal=asdict(cal),
            )
        )
        fname = cfg.cache_dir / f"rt_{key[:16]}.dmch"
        if fname.exists():
            try:
                db = load_database(fname, scene_digest=digest)
            except (FormatError, DigestMismatch) as err:
                logger.warning("Rebuilding channel cache %s: %s", fname, err)
            else:
                if db.seed == int(cfg.seed) and db.model == "rt":
                    logger.info("Loaded channel database from cache %s", fname)
                    return db
                logger.warning(
                    "Rebuilding channel cache %s: seed or model differs", fname
                )

    db = build_database(
        scene, deployment, seed=int(cfg.seed), budget=cfg.budget, cal=cal,
        n_jobs=cfg.n_jobs, progress=progress,
    )
    if fname is not None:
        fname.parent.mkdir(parents=True, exist_ok=True)
        try:
            save_database(db, fname)
        except ValueError as err:
            logger.warning("Not caching channel database: %s", err)
    return db


def run_scenario(cfg, scene=None, deployment=None, db=None, progress=False):
    """Evaluate every UE of a scenario.

    For each UE, the RSRP of every candidate AP is computed on the
    ray-traced links, the `b` strongest APs are selected and stacked, and
    rank and capacities are evaluated on the configured channel model.

    Parameters
    ----------
    cfg : ScenarioConfig
        The scenario.
    scene, deployment : Scene, Deployment | None
        Pre-loaded scene; read from ``cfg.scene_file`` if omitted.
    db : ChannelDatabase | None
        Pre-built ray-traced database; see :func:`load_or_build_database`.
    progress : bool
        Show progress bars.

    Returns
    -------
    result : ScenarioResult
        Rows sorted by UE id. The result does not depend on the number of
        worker threads.

    Raises
    ------
    ConfigError
        If the deployment does not resolve or `layers` exceeds the UE array.
    EmptyInput
        If the deployment has no UEs.
    ScenarioError
        If evaluating a UE fails; the original error is chained.

    """
    if scene is None:
        scene, deployment = read_scene(cfg.scene_file)
    elif deployment is None:
        raise ValueError("`deployment` is required together with `scene`.")
    candidates = cfg.candidate_ids
    candidate_dep = deployment.with_active(candidates)
    if len(deployment.ues) == 0:
        raise EmptyInput("The deployment has no UEs.")
    n_ue_ant = min(ue.array.element_count for ue in deployment.ues)
    if cfg.layers > n_ue_ant:
        raise ConfigError(
            f"`layers` must be <= {n_ue_ant} UE antennas, got {cfg.layers}"
        )

    rt_db = db
    if rt_db is None:
        rt_db = load_or_build_database(scene, deployment, cfg, progress)
    if rt_db.model != "rt":
        raise ValueError(f"`db` must hold ray-traced links, got model {rt_db.model!r}")
    missing = set(candidates) - set(rt_db.ap_ids)
    if missing:
        raise ConfigError(f"APs {sorted(missing)} are not in the channel database")
    chan_db = rt_db if cfg.channel == "rt" else synthesize_database(rt_db, cfg.seed)

    a, b = len(candidates), cfg.active_count
    tx, noise = cfg.tx, cfg.noise
    dl_tx = TxPowerModel("network", float(cfg.dl_power_dbm))
    ul_power = float(dbm_to_mw(cfg.ul_power_dbm)) / cfg.layers

    def _evaluate(ue):
        rsrp_dbm = {}
        for ap_id in candidates:
            rsrp_dbm.update(
                rsrp(rt_db.link(ap_id, ue.id), tx, n_active=a, method=cfg.rsrp_method)
            )
        best, detected, rel2, rel3 = detection_stats(
            rsrp_dbm, cfg.detection_threshold_dbm
        )
        selected = select_aps(rsrp_dbm, b)
        link = stack_channels(chan_db, selected, ue.id).with_ue_antennas(cfg.layers)
        ranks = np.sort([
            stream_rank(
                H, cfg.rank_antenna_power_dbm, cfg.rank_threshold_dbm,
                cfg.rank_normalization,
            )
            for H in chan_db.link(best, ue.id).per_rb
        ])
        caps = {
            precoder: dl_capacity(
                link, precoder, cfg.layers, dl_tx, noise, on_singular="zero"
            ).mean_bits_per_hz
            for precoder in PRECODERS
        }
        cap_ul = ul_zf_capacity(link, ul_power, noise, cfg.ul_waterfilling)
        return UeMetricsRow(
            ue_id=ue.id,
            x=float(ue.position[0]),
            y=float(ue.position[1]),
            best_ap=best,
            rsrp_best_dbm=rsrp_dbm[best],
            los_count=los_count(scene, candidate_dep, ue),
            detected_count=detected,
            rel2_db=rel2,
            rel3_db=rel3,
            # lower median
            rank=int(ranks[(len(ranks) - 1) // 2]),
            cap_dl_zf=caps["zf"],
            cap_dl_svd=caps["svd"],
            cap_ul=cap_ul.mean_bits_per_hz,
            rsrp_dbm=rsrp_dbm,
        )

    def _safe_evaluate(ue):
        try:
            return _evaluate(ue)
        except (ValueError, KeyError, LinAlgError) as err:
            raise ScenarioError(f"UE {ue.id}: {err}") from err

    logger.info(
        "Evaluating %d UEs: %s channel, (a, b) = (%d, %d), %d layers",
        len(deployment.ues), cfg.channel, a, b, cfg.layers,
    )
    with ThreadPoolExecutor(max_workers=get_worker_count(cfg.n_jobs)) as pool:
        rows = list(
            tqdm(
                pool.map(_safe_evaluate, deployment.ues),
                total=len(deployment.ues),
                disable=not progress,
            )
        )
    rows = tuple(sorted(rows, key=lambda row: row.ue_id))

    distributions = {
        name: aggregate([getattr(row, name) for row in rows])
        for name in DISTRIBUTION_METRICS
    }
    shown = "cap_ul" if cfg.link == "ul" else f"cap_dl_{cfg.precoder}"
    capacity_map = pd.DataFrame(
        {
            "x_m": [row.x for row in rows],
            "y_m": [row.y for row in rows],
            "bits_per_s_per_hz": [getattr(row, shown) for row in rows],
        },
        columns=CAPACITY_MAP_COLUMNS,
    )
    return ScenarioResult(
        config=cfg,
        config_digest=cfg.digest,
        scene_digest=rt_db.scene_digest,
        rows=rows,
        distributions=distributions,
        capacity_map=capacity_map,
    )


def export_results(result, out_dir):
    """Write the tables of a result to `out_dir`.

    Files are ``metrics.csv``, ``dist_<metric>.csv`` (``value``, ``cdf``,
    ``ccdf``), ``capacity_map.csv`` and ``manifest.json`` with the
    configuration, its digest, the scene digest and the SHA-256 of every
    written table. Minus infinity is written as
    ``dmimo_sim.config.FLOOR_DB``.

    Returns
    -------
    files : list of pathlib.Path
        The written files, manifest last.

    Raises
    ------
    EmptyInput
        If the result has no rows. Nothing is written.

    """
    if len(result.rows) == 0:
        raise EmptyInput("The result has no UE rows to export.")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    tables = {"metrics.csv": result.metrics_frame()}
    for name, table in result.distributions.items():
        frame = table.to_frame()
        frame["value"] = floor_db(frame["value"].to_numpy())
        tables[f"dist_{name}.csv"] = frame
    tables["capacity_map.csv"] = result.capacity_map

    files = []
    checksums = {}
    for name, frame in tables.items():
        fname = out_dir / name
        frame.to_csv(fname, index=False)
        checksums[name] = hashlib.sha256(fname.read_bytes()).hexdigest()
        files.append(fname)

    manifest = dict(
        config=result.config.to_dict(),
        config_digest=result.config_digest,
        scene_digest=result.scene_digest,
        ue_count=len(result.rows),
        files=checksums,
    )
    fname = out_dir / "manifest.json"
    with open(fname, "w", encoding="utf-8") as fout:
        json.dump(manifest, fout, indent=2, sort_keys=True, default=to_jsonable)
        fout.write("\n")
    files.append(fname)
    logger.info("Wrote %d files to %s", len(files), out_dir)
    return files


def report(fname):
    """Compute distribution tables from an exported ``metrics.csv``.

    Returns
    -------
    distributions : dict
        :class:`~dmimo_sim.metrics.DistributionTable` per metric column.

    Raises
    ------
    FormatError
        If the file lacks a metric column.
    EmptyInput
        If the file has no rows.

    """
    rows = pd.read_csv(fname)
    missing = [c for c in METRIC_COLUMNS if c not in rows.columns]
    if missing:
        raise FormatError(f"{fname} is not a metrics table, missing {missing}")
    if len(rows) == 0:
        raise EmptyInput(f"{fname} has no rows.")
    return {name: aggregate(rows[name].to_numpy()) for name in DISTRIBUTION_METRICS}


def sweep_cooperation(
    cfg, b_values, channels=CHANNEL_MODELS, scene=None, deployment=None, progress=False
):
    """Compare median capacities over cooperation levels and channel models.

    The ray-traced database is built (or loaded) once and shared by all
    runs.

    Returns
    -------
    table : pandas.DataFrame
        One row per (channel, b) with the columns ``channel``, ``a``, ``b``,
        ``median_cap_dl_zf``, ``median_cap_dl_svd``, ``median_cap_ul`` and
        ``median_rank``.

    """
    if scene is None:
        scene, deployment = read_scene(cfg.scene_file)
    db = load_or_build_database(scene, deployment, cfg, progress)
    a = len(cfg.candidate_ids)
    rows = []
    for channel in channels:
        for b in b_values:
            run_cfg = replace(cfg, channel=channel, coop=(a, int(b)))
            result = run_scenario(run_cfg, scene, deployment, db)
            rows.append(
                dict(
                    channel=channel,
                    a=a,
                    b=int(b),
                    median_cap_dl_zf=result.distributions["cap_dl_zf"].median,
                    median_cap_dl_svd=result.distributions["cap_dl_svd"].median,
                    median_cap_ul=result.distributions["cap_ul"].median,
                    median_rank=result.distributions["rank"].median,
                )
            )
    return pd.DataFrame(rows)
