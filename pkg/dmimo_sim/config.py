"""Constants, default materials, deployment sets and table layouts."""

from scipy.constants import epsilon_0, speed_of_light

SPEED_OF_LIGHT = speed_of_light
VACUUM_PERMITTIVITY = epsilon_0

# Default materials. Racks are metal, the shell of the hall is concrete
# (ITU-style values at a few GHz).
DEFAULT_MATERIALS = {
    "concrete": dict(relative_permittivity=5.31, conductivity=0.0326),
    "metal": dict(relative_permittivity=1.0, conductivity=0.0, perfect_conductor=True),
}
DEFAULT_WALL_MATERIAL = "concrete"
DEFAULT_OBSTACLE_MATERIAL = "metal"

# Names of the six facets that close the scene bounds, in the order in which
# they are listed in a Scene.
WALL_NAMES = ["x_min", "x_max", "y_min", "y_max", "floor", "ceiling"]

# Radio grid (3.7 GHz, numerology 1, 52 RBs in 20 MHz)
DEFAULT_CARRIER_HZ = 3.7e9
DEFAULT_BANDWIDTH_HZ = 20.0e6
DEFAULT_RB_COUNT = 52
DEFAULT_SUBCARRIERS_PER_RB = 12
DEFAULT_SUBCARRIER_SPACING_HZ = 30.0e3

# Antennas
POLARIZATIONS = ("V", "H")
DEFAULT_XPD_DB = 20.0

# Interaction budget of the tracer and the link-inclusion rule
MAX_REFLECTIONS = 2
MAX_DIFFRACTIONS = 1
PATHLOSS_PRUNE_DB = 170.0

# Per-ray XPR statistics (LoS mean, NLoS mean, standard deviation) and the
# range the calibrated rays should land in.
XPR_MEAN_LOS_DB = 12.0
XPR_MEAN_NLOS_DB = 11.0
XPR_STD_DB = 6.0
XPR_TARGET_RANGE_DB = (10.0, 12.0)

# Coherence bandwidth
COHERENCE_THRESHOLD = 0.9
COHERENCE_REFERENCE_HZ = 371.0e3

# Power and noise (dBm)
AP_POWER_DBM = 23.0
NETWORK_POWER_DBM = 27.8
DL_NETWORK_POWER_DBM = 23.0
UE_POWER_DBM = 23.0
NOISE_DBM_PER_RB = -118.0
DETECTION_THRESHOLD_DBM = -100.0
RANK_ANTENNA_POWER_DBM = 17.0
RANK_THRESHOLD_DBM = -100.0

# Sentinel written instead of minus infinity (dBm or dB)
FLOOR_DB = -400.0

# Relative rank tolerance (singular values below sigma_max * RANK_TOLERANCE
# are treated as zero)
RANK_TOLERANCE = 1e-12

# Channel database file layout
DB_MAGIC = b"DMCH"
DB_VERSION = 1
DB_MODELS = {"rt": 0, "rayleigh": 1}

# Environment variable capping the worker pool
THREADS_ENV = "DMIMO_THREADS"

# Named AP sets of the desk scene. 1ap, 5ap and 8ap are nested.
DEFAULT_DEPLOYMENTS = {
    "1ap": [1],
    "3ap": [2, 3, 4],
    "5ap": [1, 4, 5, 6, 7],
    "8ap": [1, 2, 3, 4, 5, 6, 7, 8],
}

# Per-UE metric table, in column order
METRIC_COLUMNS = [
    "ue_id",
    "x",
    "y",
    "best_ap",
    "rsrp_best_dbm",
    "los_count",
    "detected_count",
    "rel2_db",
    "rel3_db",
    "rank",
    "cap_dl_zf",
    "cap_dl_svd",
    "cap_ul",
]

# Columns of the metric table for which distribution tables are exported
DISTRIBUTION_METRICS = METRIC_COLUMNS[4:]

PERCENTILES = [5, 10, 25, 50, 75, 90, 95]

CAPACITY_MAP_COLUMNS = ["x_m", "y_m", "bits_per_s_per_hz"]
COHERENCE_COLUMNS = ["ap_id", "ue_id", "coherence_hz", "pathloss_db"]
