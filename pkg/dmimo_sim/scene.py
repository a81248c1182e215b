"""Indoor scene geometry, antenna arrays and AP/UE deployments.

Coordinates are in meters, frequencies in Hz and powers in dBm. The scene is
an axis-aligned hall closed by six planar facets (four walls, floor and
ceiling) and furnished with axis-aligned box obstacles such as metal racks.
"""

import logging
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from dmimo_sim.config import (
    DEFAULT_BANDWIDTH_HZ,
    DEFAULT_CARRIER_HZ,
    DEFAULT_MATERIALS,
    DEFAULT_OBSTACLE_MATERIAL,
    DEFAULT_RB_COUNT,
    DEFAULT_SUBCARRIER_SPACING_HZ,
    DEFAULT_SUBCARRIERS_PER_RB,
    DEFAULT_WALL_MATERIAL,
    DEFAULT_XPD_DB,
    POLARIZATIONS,
    SPEED_OF_LIGHT,
    VACUUM_PERMITTIVITY,
    WALL_NAMES,
)
from dmimo_sim.exceptions import ConfigError, OverlapError
from dmimo_sim.utils import db_to_linear, dbm_to_mw, digest_of, read_yaml

logger = logging.getLogger(__name__)

# Parametric tolerance of the segment/box intersection test
_SEGMENT_EPS = 1e-9


@dataclass(frozen=True)
class Material:
    """Electromagnetic properties of a reflecting surface.

    Parameters
    ----------
    name : str
        Name of the material.
    relative_permittivity : float
        Real relative permittivity (dimensionless), at least 1.
    conductivity : float
        Conductivity in S/m, non-negative.
    is_perfect_conductor : bool
        If True, the permittivity and conductivity are ignored.

    """

    name: str
    relative_permittivity: float = 1.0
    conductivity: float = 0.0
    is_perfect_conductor: bool = False

    def __post_init__(self):
        if not self.is_perfect_conductor and self.relative_permittivity < 1.0:
            raise ConfigError(
                f"Material `{self.name}`: relative_permittivity must be >= 1, "
                f"got {self.relative_permittivity}"
            )
        if self.conductivity < 0.0:
            raise ConfigError(
                f"Material `{self.name}`: conductivity must be >= 0, "
                f"got {self.conductivity}"
            )

    def complex_permittivity(self, frequency):
        """Get the complex relative permittivity at `frequency` (Hz)."""
        omega = 2.0 * np.pi * frequency
        return complex(
            self.relative_permittivity,
            -self.conductivity / (omega * VACUUM_PERMITTIVITY),
        )


@dataclass(frozen=True)
class Box:
    """An axis-aligned box obstacle."""

    name: str
    lower: tuple
    upper: tuple
    material: Material

    def contains(self, point, closed=False):
        """Check whether `point` lies inside the box.

        With ``closed=False`` only the open interior counts, so points on the
        surface are outside.
        """
        p = np.asarray(point, dtype=float)
        lo = np.asarray(self.lower)
        hi = np.asarray(self.upper)
        if closed:
            return bool(np.all(p >= lo) and np.all(p <= hi))
        return bool(np.all(p > lo) and np.all(p < hi))


@dataclass(frozen=True)
class Facet:
    """A planar axis-aligned rectangle that can reflect rays.

    The facet lies in the plane ``point[axis] == offset`` and spans
    ``lower``..``upper`` in the two other coordinates.
    """

    name: str
    axis: int
    offset: float
    lower: tuple
    upper: tuple
    material: Material

    @property
    def normal(self):
        """Unit normal of the facet plane."""
        n = np.zeros(3)
        n[self.axis] = 1.0
        return n

    @property
    def is_vertical(self):
        """Whether the facet is a wall-like (vertical) surface."""
        return self.axis != 2

    def contains(self, point, tol=1e-9):
        """Check whether `point` lies on the facet within `tol` meters."""
        p = np.asarray(point, dtype=float)
        lo = np.asarray(self.lower)
        hi = np.asarray(self.upper)
        return bool(np.all(p >= lo - tol) and np.all(p <= hi + tol))


@dataclass(frozen=True)
class Edge:
    """A straight obstacle edge parallel to one coordinate axis.

    The edge runs along `axis` from `lower` to `upper` through `point`
    (whose `axis` coordinate is irrelevant). `box` indexes the obstacle the
    edge belongs to.
    """

    name: str
    axis: int
    point: tuple
    lower: float
    upper: float
    box: int


@dataclass(frozen=True)
class RbGrid:
    """Resource block grid of the OFDM carrier.

    RB centre frequencies are spaced by `rb_bandwidth` and symmetric about
    the carrier.
    """

    carrier: float
    rb_count: int
    rb_bandwidth: float

    @property
    def centers(self):
        """Centre frequency of every RB in Hz."""
        k = np.arange(self.rb_count, dtype=float)
        return self.carrier + (k - (self.rb_count - 1) / 2.0) * self.rb_bandwidth

    @property
    def span(self):
        """Total occupied bandwidth in Hz."""
        return self.rb_count * self.rb_bandwidth


@dataclass(frozen=True, eq=False)
class Scene:
    """The indoor environment and its radio grid.

    Use :func:`build_scene` to create a validated scene from a description.
    The derived facet, edge and box arrays are computed once at construction;
    a scene is immutable afterwards.
    """

    name: str
    lower: tuple
    upper: tuple
    walls: tuple
    obstacles: tuple
    carrier_frequency: float = DEFAULT_CARRIER_HZ
    bandwidth: float = DEFAULT_BANDWIDTH_HZ
    rb_count: int = DEFAULT_RB_COUNT
    subcarriers_per_rb: int = DEFAULT_SUBCARRIERS_PER_RB
    subcarrier_spacing: float = DEFAULT_SUBCARRIER_SPACING_HZ
    rooftop_edges: bool = False
    facets: tuple = field(init=False, repr=False)
    edges: tuple = field(init=False, repr=False)

    def __post_init__(self):
        facets = list(self.walls)
        for box in self.obstacles:
            facets.extend(_box_faces(box, self.lower, self.upper))
        edges = []
        for idx, box in enumerate(self.obstacles):
            edges.extend(
                _box_edges(box, idx, self.lower, self.upper, self.rooftop_edges)
            )
        object.__setattr__(self, "facets", tuple(facets))
        object.__setattr__(self, "edges", tuple(edges))

        # arrays for vectorized geometry
        object.__setattr__(
            self, "_box_lo", np.array([b.lower for b in self.obstacles]).reshape(-1, 3)
        )
        object.__setattr__(
            self, "_box_hi", np.array([b.upper for b in self.obstacles]).reshape(-1, 3)
        )

    @property
    def wavelength(self):
        """Wavelength at the carrier frequency in meters."""
        return SPEED_OF_LIGHT / self.carrier_frequency

    @property
    def rb_grid(self):
        """The :class:`RbGrid` of the scene."""
        return RbGrid(
            carrier=self.carrier_frequency,
            rb_count=self.rb_count,
            rb_bandwidth=self.subcarriers_per_rb * self.subcarrier_spacing,
        )

    @property
    def digest(self):
        """SHA-256 digest of :meth:`to_dict`."""
        return digest_of(self.to_dict())

    def to_dict(self):
        """Describe the scene with plain containers (used for digests)."""
        return dict(
            name=self.name,
            lower=list(self.lower),
            upper=list(self.upper),
            walls=[_facet_dict(f) for f in self.walls],
            obstacles=[
                dict(
                    name=b.name,
                    lower=list(b.lower),
                    upper=list(b.upper),
                    material=_material_dict(b.material),
                )
                for b in self.obstacles
            ],
            carrier_frequency=self.carrier_frequency,
            bandwidth=self.bandwidth,
            rb_count=self.rb_count,
            subcarriers_per_rb=self.subcarriers_per_rb,
            subcarrier_spacing=self.subcarrier_spacing,
            rooftop_edges=self.rooftop_edges,
        )


@dataclass(frozen=True)
class ArrayConfig:
    """A dual-polarized uniform linear array.

    Parameters
    ----------
    polarizations : tuple of {"V", "H"}
        Polarization of every element, in element order.
    co_pol_spacing : float
        Distance between consecutive co-polarized elements, in wavelengths.
    xpd_db : float
        Cross-polar discrimination of every element in dB. ``inf`` disables
        the leakage.
    orientation : tuple of float
        Direction of the array axis (normalized on use).
    name : str
        Name of the configuration.

    """

    polarizations: tuple
    co_pol_spacing: float = 0.5
    xpd_db: float = DEFAULT_XPD_DB
    orientation: tuple = (1.0, 0.0, 0.0)
    name: str = "array"

    def __post_init__(self):
        if len(self.polarizations) < 1:
            raise ConfigError(f"Array `{self.name}` needs at least one element.")
        bad = set(self.polarizations) - set(POLARIZATIONS)
        if bad:
            raise ConfigError(
                f"Array `{self.name}`: polarizations must be in {POLARIZATIONS}, "
                f"got {sorted(bad)}"
            )
        if not self.co_pol_spacing > 0:
            raise ConfigError(
                f"Array `{self.name}`: co_pol_spacing must be > 0, "
                f"got {self.co_pol_spacing}"
            )
        if np.linalg.norm(self.orientation) <= 0:
            raise ConfigError(f"Array `{self.name}`: orientation must be non-zero.")

    @property
    def element_count(self):
        """Number of antenna elements."""
        return len(self.polarizations)

    def leakage_matrix(self):
        """Get the fixed 2x2 antenna cross-polar leakage matrix.

        ``[[1, k], [k, 1]]`` normalized row-wise, with ``k`` the XPD as an
        amplitude ratio.
        """
        kappa = np.sqrt(1.0 / db_to_linear(self.xpd_db))
        return np.array([[1.0, kappa], [kappa, 1.0]]) / np.sqrt(1.0 + kappa**2)

    def subset(self, count):
        """Get the configuration made of the first `count` elements."""
        if not 1 <= count <= self.element_count:
            raise ConfigError(
                f"`count` must be between 1 and {self.element_count}, got {count}"
            )
        return replace(self, polarizations=tuple(self.polarizations[:count]))


@dataclass(frozen=True)
class AccessPoint:
    """A network-side radio node."""

    id: int
    position: tuple
    array: ArrayConfig


@dataclass(frozen=True)
class UserEquipment:
    """A terminal position of the UE grid."""

    id: int
    position: tuple
    array: ArrayConfig


@dataclass(frozen=True, eq=False)
class Deployment:
    """APs, the UE grid and the ordered list of active AP ids."""

    aps: tuple
    ues: tuple
    active_ap_ids: tuple

    def ap(self, ap_id):
        """Get the :class:`AccessPoint` with id `ap_id`."""
        for ap in self.aps:
            if ap.id == ap_id:
                return ap
        raise KeyError(f"No AP with id {ap_id}")

    @property
    def ap_ids(self):
        """Ids of all APs in the deployment."""
        return tuple(ap.id for ap in self.aps)

    @property
    def active_aps(self):
        """The active APs, in the order of `active_ap_ids`."""
        return tuple(self.ap(i) for i in self.active_ap_ids)

    def with_active(self, ap_ids):
        """Get a copy of the deployment with other active APs."""
        ap_ids = tuple(int(i) for i in ap_ids)
        missing = set(ap_ids) - set(self.ap_ids)
        if missing:
            raise ConfigError(f"Unknown AP ids: {sorted(missing)}")
        return Deployment(aps=self.aps, ues=self.ues, active_ap_ids=ap_ids)

    @property
    def digest(self):
        """SHA-256 digest of :meth:`to_dict`."""
        return digest_of(self.to_dict())

    def to_dict(self):
        """Describe the deployment with plain containers (used for digests)."""
        return dict(
            aps=[
                dict(id=a.id, position=list(a.position), array=_array_dict(a.array))
                for a in self.aps
            ],
            ues=[
                dict(id=u.id, position=list(u.position), array=_array_dict(u.array))
                for u in self.ues
            ],
        )


@dataclass(frozen=True)
class TxPowerModel:
    """How transmit power is shared among active APs.

    Parameters
    ----------
    kind : "per-ap" | "network"
        ``"per-ap"``: every active AP radiates `level_dbm`.
        ``"network"``: `level_dbm` is split equally over the active APs.
    level_dbm : float
        The power level in dBm.

    """

    kind: str
    level_dbm: float

    def __post_init__(self):
        if self.kind not in ("per-ap", "network"):
            raise ConfigError(
                f"`kind` must be 'per-ap' or 'network', got {self.kind!r}"
            )
        if not np.isfinite(self.level_dbm):
            raise ConfigError(f"`level_dbm` must be finite, got {self.level_dbm}")

    def ap_power_dbm(self, n_active):
        """Total power radiated by one AP when `n_active` APs are active."""
        if n_active < 1:
            raise ValueError(f"`n_active` must be >= 1, got {n_active}")
        if self.kind == "per-ap":
            return self.level_dbm
        return self.level_dbm - 10.0 * np.log10(n_active)

    def network_power_dbm(self, n_active):
        """Total power radiated by the `n_active` active APs together."""
        return self.ap_power_dbm(n_active) + 10.0 * np.log10(n_active)

    def network_power_mw(self, n_active):
        """Same as :meth:`network_power_dbm`, in milliwatts."""
        return float(dbm_to_mw(self.network_power_dbm(n_active)))


@dataclass(frozen=True)
class NoiseModel:
    """Thermal noise power per resource block."""

    n0_dbm_per_rb: float

    def __post_init__(self):
        if not np.isfinite(self.n0_dbm_per_rb):
            raise ConfigError(
                f"`n0_dbm_per_rb` must be finite, got {self.n0_dbm_per_rb}"
            )

    @property
    def n0_mw(self):
        """Noise power per RB in milliwatts."""
        return float(dbm_to_mw(self.n0_dbm_per_rb))


def build_scene(spec):
    """Build a validated :class:`Scene` from a description.

    Parameters
    ----------
    spec : dict
        Scene description with the keys ``bounds`` (``{"min": [x, y, z],
        "max": [x, y, z]}``) or ``size`` (``[x, y, z]``, origin at zero),
        and optionally ``name``, ``radio``, ``materials``, ``walls``,
        ``obstacles``, ``rack_rows`` and ``rooftop_edges``. See
        ``data/README.md`` for the full schema.

    Returns
    -------
    scene : Scene
        The validated scene.

    Raises
    ------
    ConfigError
        If a dimension is not positive, a material is unknown, or the radio
        grid does not fit into the bandwidth.
    OverlapError
        If an obstacle extends past the scene bounds.

    Examples
    --------
    >>> scene = build_scene({"size": [10, 10, 5]})
    >>> len(scene.facets), len(scene.obstacles)
    (6, 0)

    """
    if not isinstance(spec, dict):
        raise ConfigError("`spec` must be a dict.")

    # bounds
    if "bounds" in spec:
        lower = _vector(spec["bounds"].get("min"), "bounds.min")
        upper = _vector(spec["bounds"].get("max"), "bounds.max")
    elif "size" in spec:
        upper = _vector(spec["size"], "size")
        lower = (0.0, 0.0, 0.0)
    else:
        raise ConfigError("Scene needs `bounds` or `size`.")
    if np.any(np.asarray(upper) - np.asarray(lower) <= 0):
        raise ConfigError(f"Scene dimensions must be positive, got {lower} -> {upper}")

    # materials
    materials = {}
    for name, props in {**DEFAULT_MATERIALS, **spec.get("materials", {})}.items():
        props = dict(props)
        materials[name] = Material(
            name=name,
            relative_permittivity=float(props.get("relative_permittivity", 1.0)),
            conductivity=float(props.get("conductivity", 0.0)),
            is_perfect_conductor=bool(props.get("perfect_conductor", False)),
        )

    def _material(name):
        if name not in materials:
            raise ConfigError(f"Unknown material `{name}`")
        return materials[name]

    # walls, floor, ceiling
    wall_spec = dict(spec.get("walls", {}))
    default_wall = wall_spec.pop("default", DEFAULT_WALL_MATERIAL)
    unknown = set(wall_spec) - set(WALL_NAMES)
    if unknown:
        raise ConfigError(f"Unknown wall names {sorted(unknown)}; use {WALL_NAMES}")
    walls = []
    for name, axis, side in zip(WALL_NAMES, (0, 0, 1, 1, 2, 2), (0, 1, 0, 1, 0, 1)):
        offset = (lower, upper)[side][axis]
        lo = list(lower)
        hi = list(upper)
        lo[axis] = hi[axis] = offset
        walls.append(
            Facet(
                name=name,
                axis=axis,
                offset=offset,
                lower=tuple(lo),
                upper=tuple(hi),
                material=_material(wall_spec.get(name, default_wall)),
            )
        )

    # obstacles
    obstacles = []
    for entry in spec.get("obstacles", []):
        obstacles.append(
            _make_box(
                entry.get("name", f"obstacle_{len(obstacles) + 1}"),
                _vector(entry.get("min"), "obstacles.min"),
                _vector(entry.get("max"), "obstacles.max"),
                _material(entry.get("material", DEFAULT_OBSTACLE_MATERIAL)),
            )
        )
    for row in spec.get("rack_rows", []):
        origin = np.asarray(_vector(row.get("origin"), "rack_rows.origin"))
        size = np.asarray(_vector(row.get("size"), "rack_rows.size"))
        pitch = np.asarray(_vector(row.get("pitch", [0, 0, 0]), "rack_rows.pitch"))
        count = int(row.get("count", 1))
        if count < 1:
            raise ConfigError(f"`rack_rows.count` must be >= 1, got {count}")
        name = row.get("name", "rack")
        for i in range(count):
            lo = origin + i * pitch
            obstacles.append(
                _make_box(
                    f"{name}_{i + 1}",
                    tuple(lo.tolist()),
                    tuple((lo + size).tolist()),
                    _material(row.get("material", DEFAULT_OBSTACLE_MATERIAL)),
                )
            )
    for box in obstacles:
        if np.any(np.asarray(box.lower) < np.asarray(lower)) or np.any(
            np.asarray(box.upper) > np.asarray(upper)
        ):
            raise OverlapError(
                f"Obstacle `{box.name}` ({box.lower} -> {box.upper}) extends past "
                f"the scene bounds ({lower} -> {upper})"
            )

    # radio grid
    radio = spec.get("radio", {})
    carrier = float(radio.get("carrier_frequency", DEFAULT_CARRIER_HZ))
    bandwidth = float(radio.get("bandwidth", DEFAULT_BANDWIDTH_HZ))
    rb_count = int(radio.get("rb_count", DEFAULT_RB_COUNT))
    n_sc = int(radio.get("subcarriers_per_rb", DEFAULT_SUBCARRIERS_PER_RB))
    scs = float(radio.get("subcarrier_spacing", DEFAULT_SUBCARRIER_SPACING_HZ))
    if carrier <= 0 or bandwidth <= 0 or scs <= 0:
        raise ConfigError("`carrier_frequency`, `bandwidth` and spacing must be > 0.")
    if rb_count < 1 or n_sc < 1:
        raise ConfigError("`rb_count` and `subcarriers_per_rb` must be >= 1.")
    if rb_count * n_sc * scs > bandwidth * (1 + 1e-12):
        raise ConfigError(
            f"{rb_count} RBs x {n_sc} subcarriers x {scs} Hz exceed the "
            f"bandwidth of {bandwidth} Hz"
        )

    scene = Scene(
        name=str(spec.get("name", "scene")),
        lower=tuple(lower),
        upper=tuple(upper),
        walls=tuple(walls),
        obstacles=tuple(obstacles),
        carrier_frequency=carrier,
        bandwidth=bandwidth,
        rb_count=rb_count,
        subcarriers_per_rb=n_sc,
        subcarrier_spacing=scs,
        rooftop_edges=bool(spec.get("rooftop_edges", False)),
    )
    logger.debug(
        "Built scene %s with %d obstacles, %d facets, %d edges",
        scene.name,
        len(scene.obstacles),
        len(scene.facets),
        len(scene.edges),
    )
    return scene


def build_deployment(spec, scene):
    """Build a validated :class:`Deployment` in `scene`.

    Parameters
    ----------
    spec : dict
        With the keys ``arrays`` (named array configurations), ``aps`` (list
        of ``{"id", "position", "array"}``), ``ue_grid`` (``{"resolution",
        "height", "margin", "array"}``) and optionally ``active_ap_ids``.
    scene : Scene
        The scene the deployment lives in.

    Returns
    -------
    deployment : Deployment
        APs sorted by id, UEs numbered from 1 in grid order.

    Raises
    ------
    ConfigError
        On unknown arrays, duplicate ids, positions outside the scene, or
        unknown active AP ids.
    OverlapError
        If an AP lies inside an obstacle.

    """
    arrays = {}
    for name, props in spec.get("arrays", {}).items():
        props = dict(props)
        arrays[name] = ArrayConfig(
            polarizations=tuple(props.get("polarizations", ("V", "H", "V", "H"))),
            co_pol_spacing=float(props.get("co_pol_spacing", 0.5)),
            xpd_db=float(props.get("xpd_db", DEFAULT_XPD_DB)),
            orientation=tuple(float(v) for v in props.get("orientation", (1, 0, 0))),
            name=name,
        )

    def _array(name):
        if name not in arrays:
            raise ConfigError(f"Unknown array `{name}`")
        return arrays[name]

    aps = []
    for entry in spec.get("aps", []):
        pos = _vector(entry.get("position"), "aps.position")
        _check_position(scene, pos, f"AP {entry.get('id')}")
        aps.append(
            AccessPoint(id=int(entry["id"]), position=pos, array=_array(entry["array"]))
        )
    ids = [ap.id for ap in aps]
    if len(set(ids)) != len(ids):
        raise ConfigError(f"AP ids must be unique, got {ids}")
    if len(aps) == 0:
        raise ConfigError("A deployment needs at least one AP.")
    aps = sorted(aps, key=lambda ap: ap.id)

    grid = spec.get("ue_grid")
    if grid is None:
        raise ConfigError("Deployment needs a `ue_grid`.")
    positions = place_ue_grid(
        scene,
        resolution=float(grid["resolution"]),
        height=float(grid["height"]),
        margin=grid.get("margin"),
    )
    ue_array = _array(grid["array"])
    ues = tuple(
        UserEquipment(id=i + 1, position=tuple(p.tolist()), array=ue_array)
        for i, p in enumerate(positions)
    )

    active = tuple(int(i) for i in spec.get("active_ap_ids", sorted(ids)))
    missing = set(active) - set(ids)
    if missing:
        raise ConfigError(f"Active AP ids {sorted(missing)} are not deployed.")

    return Deployment(aps=tuple(aps), ues=ues, active_ap_ids=active)


def read_scene(fname):
    """Read a scene file.

    Parameters
    ----------
    fname : str | pathlib.Path
        A YAML file with a ``scene`` section and the deployment keys
        understood by :func:`build_deployment`.

    Returns
    -------
    scene : Scene
        The scene.
    deployment : Deployment
        The AP/UE deployment in that scene.

    """
    data = read_yaml(Path(fname))
    if "scene" not in data:
        raise ConfigError(f"{fname} has no `scene` section.")
    scene = build_scene(data["scene"])
    deployment = build_deployment(data, scene)
    logger.info(
        "Read scene %s: %d APs, %d UEs", scene.name, len(deployment.aps),
        len(deployment.ues),
    )
    return scene, deployment


def scene_digest(scene, deployment=None):
    """Get the SHA-256 digest identifying a scene (and deployment)."""
    obj = {"scene": scene.to_dict()}
    if deployment is not None:
        obj["deployment"] = deployment.to_dict()
    return digest_of(obj)


def place_ue_grid(scene, resolution, height, margin=None):
    """Place UEs on a uniform horizontal grid.

    The grid starts at the lower corner of the scene plus `margin` on both
    horizontal axes and advances by `resolution`. Grid points inside or on
    the surface of an obstacle are discarded.

    Parameters
    ----------
    scene : Scene
        The scene.
    resolution : float
        Grid step in meters.
    height : float
        Height of all UEs in meters.
    margin : float | None
        Distance of the first grid line from the walls. Defaults to
        ``resolution / 2``. If an axis is shorter than twice the margin, a
        single grid line is placed at its centre.

    Returns
    -------
    positions : numpy.ndarray, shape (n, 3)
        UE positions in row-major order (x varies fastest).

    Raises
    ------
    ConfigError
        If `resolution` is not positive or `height` is outside the scene.

    """
    if not resolution > 0:
        raise ConfigError(f"`resolution` must be > 0, got {resolution}")
    if not scene.lower[2] <= height <= scene.upper[2]:
        raise ConfigError(
            f"`height` must be within {scene.lower[2]}..{scene.upper[2]}, got {height}"
        )
    margin = resolution / 2.0 if margin is None else float(margin)
    if margin < 0:
        raise ConfigError(f"`margin` must be >= 0, got {margin}")

    axes = []
    for axis in (0, 1):
        lo = scene.lower[axis]
        length = scene.upper[axis] - lo
        usable = length - 2.0 * margin
        if usable < 0:
            axes.append(np.array([lo + length / 2.0]))
            continue
        count = int(np.floor(usable / resolution + 1e-9)) + 1
        axes.append(lo + margin + resolution * np.arange(count))

    xs, ys = axes
    yy, xx = np.meshgrid(ys, xs, indexing="ij")
    points = np.column_stack([xx.ravel(), yy.ravel(), np.full(xx.size, height)])
    keep = np.array(
        [not point_in_obstacle(scene, p, closed=True) for p in points], dtype=bool
    )
    return points[keep]


def array_elements(config, carrier):
    """Get element offsets and polarizations of an antenna array.

    Parameters
    ----------
    config : ArrayConfig
        The array.
    carrier : float
        Carrier frequency in Hz, fixing the wavelength.

    Returns
    -------
    elements : list of tuple
        One ``(offset, jones)`` pair per element, in configuration order.
        ``offset`` is a 3D vector in meters along the array orientation; the
        n-th element of a given polarization sits at ``n * co_pol_spacing``
        wavelengths. ``jones`` is the unit Jones vector over the (V, H) basis.

    Examples
    --------
    >>> cfg = ArrayConfig(polarizations=("V", "H", "V", "H"))
    >>> [round(o[0] * 1e3, 1) for o, _ in array_elements(cfg, 3.7e9)]
    [0.0, 0.0, 40.5, 40.5]

    """
    if not carrier > 0:
        raise ValueError(f"`carrier` must be > 0, got {carrier}")
    wavelength = SPEED_OF_LIGHT / carrier
    direction = np.asarray(config.orientation, dtype=float)
    direction = direction / np.linalg.norm(direction)
    seen = {pol: 0 for pol in POLARIZATIONS}
    elements = []
    for pol in config.polarizations:
        offset = seen[pol] * config.co_pol_spacing * wavelength * direction
        jones = np.array([1.0, 0.0]) if pol == "V" else np.array([0.0, 1.0])
        elements.append((offset, jones))
        seen[pol] += 1
    return elements


def point_in_obstacle(scene, point, closed=False):
    """Check whether `point` lies inside any obstacle of `scene`."""
    return any(box.contains(point, closed=closed) for box in scene.obstacles)


def los_blocked(scene, a, b):
    """Check whether the straight segment from `a` to `b` is obstructed.

    Parameters
    ----------
    scene : Scene
        The scene.
    a, b : array_like, shape (3,)
        End points of the segment, inside the scene bounds.

    Returns
    -------
    blocked : bool
        True if the segment passes through the open interior of an obstacle.
        Segments that only touch an obstacle surface, edge or corner are not
        blocked. The result is symmetric in `a` and `b`.

    Notes
    -----
    Segments between two points inside the bounds never cross the walls,
    floor or ceiling of the scene; interior walls are modeled as obstacles.

    """
    a = np.asarray(a, dtype=float).reshape(1, 3)
    b = np.asarray(b, dtype=float).reshape(1, 3)
    return bool(segments_blocked(scene, a, b)[0])


def segments_blocked(scene, starts, ends):
    """Test many segments against all obstacles with the slab method.

    Parameters
    ----------
    scene : Scene
        The scene providing the obstacles.
    starts, ends : numpy.ndarray, shape (n, 3)
        Segment end points.

    Returns
    -------
    blocked : numpy.ndarray of bool, shape (n,)
        Whether each segment enters the open interior of any obstacle.

    """
    starts = np.asarray(starts, dtype=float).reshape(-1, 3)
    ends = np.asarray(ends, dtype=float).reshape(-1, 3)
    lo = scene._box_lo
    hi = scene._box_hi
    if len(starts) == 0 or len(lo) == 0:
        return np.zeros(len(starts), dtype=bool)
    overlap = _slab_overlap(
        starts[:, None, :], ends[:, None, :], lo[None, :, :], hi[None, :, :]
    )
    return overlap.any(axis=1)


def segment_box_overlap(starts, ends, lo, hi):
    """Test segment ``i`` against box ``i`` for every row.

    Returns a boolean array of shape (n,), True where the segment enters the
    open interior of its box.
    """
    return _slab_overlap(
        np.asarray(starts, dtype=float).reshape(-1, 3),
        np.asarray(ends, dtype=float).reshape(-1, 3),
        np.asarray(lo, dtype=float).reshape(-1, 3),
        np.asarray(hi, dtype=float).reshape(-1, 3),
    )


def _slab_overlap(a, b, lo, hi):
    """Compute the segment/box interior overlap over broadcast arrays."""
    d = b - a
    parallel = d == 0.0
    with np.errstate(divide="ignore", invalid="ignore"):
        t1 = (lo - a) / d
        t2 = (hi - a) / d
    t_near = np.minimum(t1, t2)
    t_far = np.maximum(t1, t2)
    # a segment parallel to a slab is inside it for all t or never
    inside = (a > lo) & (a < hi)
    t_near = np.where(parallel, np.where(inside, -np.inf, np.inf), t_near)
    t_far = np.where(parallel, np.where(inside, np.inf, -np.inf), t_far)
    t_enter = np.maximum(t_near.max(axis=-1), 0.0)
    t_exit = np.minimum(t_far.min(axis=-1), 1.0)
    return (t_exit - t_enter) > _SEGMENT_EPS


def _make_box(name, lower, upper, material):
    """Create a box, checking that it has a positive volume."""
    if np.any(np.asarray(upper) - np.asarray(lower) <= 0):
        raise ConfigError(f"Obstacle `{name}` must have positive dimensions.")
    return Box(name=name, lower=tuple(lower), upper=tuple(upper), material=material)


def _box_faces(box, scene_lower, scene_upper):
    """Get the faces of `box` that are exposed inside the scene."""
    faces = []
    for axis in range(3):
        for side, sign in ((0, "-"), (1, "+")):
            offset = (box.lower, box.upper)[side][axis]
            # faces flush with the shell of the scene are not exposed
            if offset in (scene_lower[axis], scene_upper[axis]):
                continue
            lo = list(box.lower)
            hi = list(box.upper)
            lo[axis] = hi[axis] = offset
            faces.append(
                Facet(
                    name=f"{box.name}:{sign}{'xyz'[axis]}",
                    axis=axis,
                    offset=offset,
                    lower=tuple(lo),
                    upper=tuple(hi),
                    material=box.material,
                )
            )
    return faces


def _box_edges(box, index, scene_lower, scene_upper, rooftop):
    """Get the diffracting edges of `box`.

    Vertical edges always; horizontal top edges only if `rooftop`. Edges lying
    on a wall, the floor or the ceiling are skipped.
    """

    def _on_shell(axis, value):
        return value in (scene_lower[axis], scene_upper[axis])

    edges = []
    for x in (box.lower[0], box.upper[0]):
        for y in (box.lower[1], box.upper[1]):
            if _on_shell(0, x) or _on_shell(1, y):
                continue
            edges.append(
                Edge(
                    name=f"{box.name}:z@({x:g},{y:g})",
                    axis=2,
                    point=(x, y, 0.0),
                    lower=box.lower[2],
                    upper=box.upper[2],
                    box=index,
                )
            )
    if rooftop and not _on_shell(2, box.upper[2]):
        z = box.upper[2]
        for axis, other in ((0, 1), (1, 0)):
            for value in (box.lower[other], box.upper[other]):
                if _on_shell(other, value):
                    continue
                point = [0.0, 0.0, z]
                point[other] = value
                edges.append(
                    Edge(
                        name=f"{box.name}:{'xyz'[axis]}@{value:g}",
                        axis=axis,
                        point=tuple(point),
                        lower=box.lower[axis],
                        upper=box.upper[axis],
                        box=index,
                    )
                )
    return edges


def _check_position(scene, position, label):
    """Validate that a node position is inside the scene and outside obstacles."""
    p = np.asarray(position)
    if np.any(p <= np.asarray(scene.lower)) or np.any(p >= np.asarray(scene.upper)):
        raise ConfigError(f"{label} at {tuple(position)} is outside the scene bounds.")
    if point_in_obstacle(scene, p, closed=True):
        raise OverlapError(f"{label} at {tuple(position)} lies inside an obstacle.")


def _vector(value, label):
    """Parse a 3D vector."""
    if value is None:
        raise ConfigError(f"`{label}` is missing.")
    try:
        vec = tuple(float(v) for v in value)
    except (TypeError, ValueError):
        raise ConfigError(f"`{label}` must be three numbers, got {value!r}") from None
    if len(vec) != 3:
        raise ConfigError(f"`{label}` must be three numbers, got {value!r}")
    return vec


def _material_dict(material):
    return dict(
        name=material.name,
        relative_permittivity=material.relative_permittivity,
        conductivity=material.conductivity,
        is_perfect_conductor=material.is_perfect_conductor,
    )


def _facet_dict(facet):
    return dict(
        name=facet.name,
        axis=facet.axis,
        offset=facet.offset,
        material=_material_dict(facet.material),
    )


def _array_dict(array):
    return dict(
        name=array.name,
        polarizations=list(array.polarizations),
        co_pol_spacing=array.co_pol_spacing,
        xpd_db=array.xpd_db,
        orientation=list(array.orientation),
    )
