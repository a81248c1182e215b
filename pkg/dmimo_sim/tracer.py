"""Polarimetric ray tracing between an AP and a UE.

Paths are found with the image method for specular reflections on the scene
facets and with a knife-edge model for diffraction on obstacle edges. Every
path carries a 2x2 complex polarization gain over the (V, H) basis, built
from Fresnel reflection coefficients, knife-edge coefficients and a random
cross-polar leakage per interaction.
"""

import logging
from dataclasses import dataclass, replace
from functools import lru_cache
from itertools import permutations

import numpy as np
import pandas as pd
from scipy.optimize import brentq
from scipy.special import fresnel

from dmimo_sim.config import (
    MAX_DIFFRACTIONS,
    MAX_REFLECTIONS,
    PATHLOSS_PRUNE_DB,
    SPEED_OF_LIGHT,
    XPR_MEAN_LOS_DB,
    XPR_MEAN_NLOS_DB,
    XPR_STD_DB,
)
from dmimo_sim.exceptions import ConfigError
from dmimo_sim.scene import los_blocked, segment_box_overlap, segments_blocked
from dmimo_sim.utils import linear_to_db, rng_stream

logger = logging.getLogger(__name__)

REFLECTION = "R"
DIFFRACTION = "D"

# Geometric tolerances in meters and in segment parameter units
_POINT_TOL = 1e-9
_PARAM_TOL = 1e-12

_DUMP_COLUMNS = [
    "path_id",
    "kinds",
    "length_m",
    "delay_s",
    "vv_re",
    "vv_im",
    "vh_re",
    "vh_im",
    "hv_re",
    "hv_im",
    "hh_re",
    "hh_im",
]


@dataclass(frozen=True)
class Interaction:
    """One reflection or diffraction along a ray path.

    Parameters
    ----------
    kind : "R" | "D"
        Reflection or diffraction.
    ref : str
        Name of the facet or edge.
    point : tuple
        Interaction point in meters.
    angle : float
        Incidence angle to the facet normal in radians (reflections only).
    material : Material | None
        Material of the reflecting facet.
    vertical : bool
        Whether the reflecting facet is vertical.
    nu : float
        Fresnel diffraction parameter (diffractions only).

    """

    kind: str
    ref: str
    point: tuple
    angle: float = 0.0
    material: object = None
    vertical: bool = True
    nu: float = float("nan")


@dataclass(frozen=True, eq=False)
class RayPath:
    """A ray from the AP to the UE.

    ``delay`` is ``length / c``. ``departure`` and ``arrival`` are the unit
    propagation directions at the AP and at the UE. ``link_los`` tells
    whether the link this path belongs to has an unobstructed direct path,
    which selects the XPR class. ``stream_key`` names the random stream the
    polarization gain was drawn from.
    """

    interactions: tuple
    length: float
    delay: float
    pol_gain: np.ndarray
    departure: tuple
    arrival: tuple
    link_los: bool = False
    stream_key: tuple = ()

    @property
    def is_los(self):
        """Whether this is the direct path."""
        return len(self.interactions) == 0

    @property
    def kinds(self):
        """Interaction kinds in path order, e.g. ``"RD"``; empty for LoS."""
        return "".join(i.kind for i in self.interactions)

    @property
    def refs(self):
        """Names of the facets and edges hit, in path order."""
        return tuple(i.ref for i in self.interactions)

    def loss_db(self, frequency):
        """Path loss in dB: spreading loss plus polarization-averaged gain."""
        spreading = SPEED_OF_LIGHT / frequency / (4.0 * np.pi * self.length)
        power = np.sum(np.abs(self.pol_gain) ** 2) / 2.0 * spreading**2
        return float(-linear_to_db(power))


@dataclass(frozen=True)
class InteractionBudget:
    """Maximum number of reflections and diffractions along a path."""

    reflections: int = MAX_REFLECTIONS
    diffractions: int = MAX_DIFFRACTIONS

    def __post_init__(self):
        if not 0 <= self.reflections <= MAX_REFLECTIONS:
            raise ConfigError(
                f"`reflections` must be between 0 and {MAX_REFLECTIONS}, "
                f"got {self.reflections}"
            )
        if not 0 <= self.diffractions <= MAX_DIFFRACTIONS:
            raise ConfigError(
                f"`diffractions` must be between 0 and {MAX_DIFFRACTIONS}, "
                f"got {self.diffractions}"
            )

    def patterns(self):
        """List the interaction sequences allowed by the budget.

        Examples
        --------
        >>> InteractionBudget(2, 1).patterns()
        ['D', 'R', 'DR', 'RD', 'RR', 'DRR', 'RDR', 'RRD']

        """
        out = set()
        for n_r in range(self.reflections + 1):
            for n_d in range(self.diffractions + 1):
                if n_r + n_d == 0:
                    continue
                out.update(
                    "".join(p)
                    for p in permutations(REFLECTION * n_r + DIFFRACTION * n_d)
                )
        return sorted(out, key=lambda p: (len(p), p))


@dataclass(frozen=True)
class XprCalibration:
    """Per-interaction XPR statistics and the linear correction on top.

    A raw XPR is drawn in dB from a normal distribution with the class mean
    (LoS or NLoS link) and `target_std_db`, then corrected to
    ``factor * raw + offset``.
    """

    factor: float = 1.0
    offset: float = 0.0
    target_mean_los_db: float = XPR_MEAN_LOS_DB
    target_mean_nlos_db: float = XPR_MEAN_NLOS_DB
    target_std_db: float = XPR_STD_DB

    def __post_init__(self):
        for name in ("target_mean_los_db", "target_mean_nlos_db", "target_std_db"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"`{name}` must be > 0, got {getattr(self, name)}")
        if not (np.isfinite(self.factor) and np.isfinite(self.offset)):
            raise ConfigError("`factor` and `offset` must be finite.")

    def class_mean(self, los):
        """Mean raw XPR in dB for a LoS (True) or NLoS (False) link."""
        return self.target_mean_los_db if los else self.target_mean_nlos_db

    def corrected(self, raw_db):
        """Apply the linear correction to raw XPR values in dB."""
        return self.factor * np.asarray(raw_db, dtype=float) + self.offset


@dataclass(frozen=True)
class KnifeEdge:
    """Geometry of a single knife-edge diffraction.

    `obstructed` tells whether the edge blocks the straight line from
    `source` to `target`.
    """

    source: tuple
    edge_point: tuple
    target: tuple
    obstructed: bool


@dataclass(frozen=True)
class _SceneArrays:
    facet_axis: np.ndarray
    facet_offset: np.ndarray
    facet_lo: np.ndarray
    facet_hi: np.ndarray
    edge_axis: np.ndarray
    edge_point: np.ndarray
    edge_lo: np.ndarray
    edge_hi: np.ndarray
    edge_box: np.ndarray
    box_lo: np.ndarray
    box_hi: np.ndarray


def image_reflect(facet, point):
    """Mirror `point` across the plane of `facet`.

    Examples
    --------
    >>> from dmimo_sim.scene import Facet, Material
    >>> plane = Facet("x5", 0, 5.0, (5, 0, 0), (5, 9, 9), Material("pec"))
    >>> image_reflect(plane, (0.0, 0.0, 2.0))
    (10.0, 0.0, 2.0)

    """
    out = [float(v) for v in point]
    out[facet.axis] = 2.0 * facet.offset - out[facet.axis]
    return tuple(out)


def fresnel_coefficients(material, incidence, carrier):
    """Compute the Fresnel reflection coefficients of a half-space.

    Parameters
    ----------
    material : Material
        The reflecting material.
    incidence : float
        Angle between the incoming ray and the surface normal, in radians,
        within ``[0, pi/2)``.
    carrier : float
        Frequency in Hz, used for the conductive part of the permittivity.

    Returns
    -------
    gamma_par : complex
        Coefficient for the electric field parallel to the plane of
        incidence.
    gamma_perp : complex
        Coefficient for the electric field perpendicular to the plane of
        incidence.

    Notes
    -----
    Both coefficients use the same sign convention, so they coincide at
    normal incidence and a perfect conductor returns -1 for both.

    Examples
    --------
    >>> from dmimo_sim.scene import Material
    >>> g_par, g_perp = fresnel_coefficients(Material("glass", 4.0), 0.0, 1e9)
    >>> round(g_par.real, 4), round(g_perp.real, 4)
    (-0.3333, -0.3333)

    """
    if not 0.0 <= incidence < np.pi / 2:
        raise ValueError(f"`incidence` must be within [0, pi/2), got {incidence}")
    if material.is_perfect_conductor:
        return complex(-1.0), complex(-1.0)
    eps = material.complex_permittivity(carrier)
    cos_t = np.cos(incidence)
    root = np.sqrt(eps - np.sin(incidence) ** 2 + 0j)
    gamma_par = (root - eps * cos_t) / (root + eps * cos_t)
    gamma_perp = (cos_t - root) / (cos_t + root)
    return complex(gamma_par), complex(gamma_perp)


def fresnel_parameter(edge, wavelength):
    """Compute the Fresnel diffraction parameter of a knife edge.

    Parameters
    ----------
    edge : KnifeEdge
        The diffraction geometry.
    wavelength : float
        Wavelength in meters.

    Returns
    -------
    nu : float
        ``2 * sqrt(excess / wavelength)`` where ``excess`` is the extra path
        length over the edge compared with the straight line. Positive when
        the edge obstructs the straight line, negative otherwise.

    """
    s = np.asarray(edge.source, dtype=float)
    e = np.asarray(edge.edge_point, dtype=float)
    t = np.asarray(edge.target, dtype=float)
    excess = np.linalg.norm(e - s) + np.linalg.norm(t - e) - np.linalg.norm(t - s)
    nu = 2.0 * np.sqrt(max(excess, 0.0) / wavelength)
    return float(nu if edge.obstructed else -nu)


def knife_edge_coefficient(nu):
    """Compute the complex knife-edge diffraction coefficient.

    Parameters
    ----------
    nu : float
        Fresnel diffraction parameter.

    Returns
    -------
    coefficient : complex
        ``(1 + j)/2 * integral from nu to inf of exp(-j pi t^2 / 2) dt``.
        For clearances beyond the point where the amplitude first reaches
        one, the amplitude is held at one, so the amplitude never exceeds one
        and decreases monotonically with obstruction.

    Examples
    --------
    >>> round(abs(knife_edge_coefficient(0.0)), 6)
    0.5

    """
    if nu < _unit_amplitude_nu():
        value = _fresnel_kernel(nu)
        return value / abs(value)
    return _fresnel_kernel(nu)


def knife_edge_diffraction(edge, carrier):
    """Get the knife-edge coefficient of a diffraction geometry at `carrier`."""
    return knife_edge_coefficient(fresnel_parameter(edge, SPEED_OF_LIGHT / carrier))


def _fresnel_kernel(nu):
    s_nu, c_nu = fresnel(nu)
    return complex((1 + 1j) / 2 * ((0.5 - c_nu) - 1j * (0.5 - s_nu)))


@lru_cache(maxsize=None)
def _unit_amplitude_nu():
    """Find the largest negative nu where the kernel amplitude equals one."""
    return brentq(lambda v: abs(_fresnel_kernel(v)) - 1.0, -1.0, 0.0, xtol=1e-14)


def ray_xpr_db(pol_gain):
    """Compute the effective cross-polarization ratio of a ray in dB.

    The ratio of co-polar power (``|g_vv|^2 + |g_hh|^2``) to cross-polar
    power (``|g_vh|^2 + |g_hv|^2``). Works on stacks of 2x2 matrices; an
    ideal ray without leakage gives ``inf``.
    """
    g = np.asarray(pol_gain)
    co = np.abs(g[..., 0, 0]) ** 2 + np.abs(g[..., 1, 1]) ** 2
    cross = np.abs(g[..., 0, 1]) ** 2 + np.abs(g[..., 1, 0]) ** 2
    with np.errstate(divide="ignore"):
        out = 10.0 * np.log10(co / cross)
    return float(out) if out.ndim == 0 else out


def path_polarization(path, cal, rng, carrier, link_los=None):
    """Compute the 2x2 polarization gain of a path.

    Parameters
    ----------
    path : RayPath
        A path with resolved interactions.
    cal : XprCalibration
        XPR statistics and correction.
    rng : numpy.random.Generator
        Random stream dedicated to this path.
    carrier : float
        Frequency in Hz for the Fresnel coefficients.
    link_los : bool | None
        XPR class of the link. Defaults to ``path.link_los``.

    Returns
    -------
    pol_gain : numpy.ndarray, shape (2, 2)
        Product over interactions, in path order, of the leakage matrix
        times the diagonal reflection or diffraction coefficients. The
        identity for the direct path.

    """
    if path.is_los:
        return np.eye(2, dtype=complex)
    los = path.link_los if link_los is None else link_los
    mean = cal.class_mean(los)
    normals, phases = _draw_xpr_variates(rng, len(path.interactions))
    xpr = cal.corrected(mean + cal.target_std_db * normals)
    gain = np.eye(2, dtype=complex)
    for inter, x, ph in zip(path.interactions, xpr, phases):
        coeffs = _interaction_coefficients(inter, carrier)
        gain = (_leakage(x, ph) * coeffs[None, :]) @ gain
    return gain


def path_field(path, frequency):
    """Get the 2x2 complex field gain of a path at `frequency`.

    ``pol_gain * lambda / (4 pi length) * exp(-j 2 pi frequency delay)``
    """
    spreading = SPEED_OF_LIGHT / frequency / (4.0 * np.pi * path.length)
    return path.pol_gain * spreading * np.exp(-2j * np.pi * frequency * path.delay)


def trace_link(
    scene, ap_pos, ue_pos, budget=None, seed=0, cal=None, link_key=(0, 0)
):
    """Find all ray paths between two points of a scene.

    Parameters
    ----------
    scene : Scene
        The scene.
    ap_pos, ue_pos : array_like, shape (3,)
        Transmitter and receiver positions.
    budget : InteractionBudget | None
        Interaction limits. Defaults to two reflections and one diffraction.
    seed : int
        Global seed of the run.
    cal : XprCalibration | None
        XPR statistics. Defaults to the uncalibrated statistics.
    link_key : tuple of int
        Ids naming the link, usually ``(ap_id, ue_id)``. Together with
        `seed` and the path index they key the random streams.

    Returns
    -------
    paths : list of RayPath
        Sorted by interaction count, then length. The direct path is present
        exactly when the straight segment is unobstructed. Paths with a loss
        above ``PATHLOSS_PRUNE_DB`` are dropped.

    Notes
    -----
    A diffraction is only traced when its obstacle shadows the straight
    line between the neighbouring path points; in lit geometry the direct
    or reflected ray already carries the field.

    """
    budget = InteractionBudget() if budget is None else budget
    cal = XprCalibration() if cal is None else cal
    source = np.asarray(ap_pos, dtype=float)
    target = np.asarray(ue_pos, dtype=float)
    carrier = scene.carrier_frequency
    arrays = _scene_arrays(scene)

    link_los = not los_blocked(scene, source, target)
    drafts = []
    if link_los:
        drafts.append(_draft(scene, np.stack([source, target]), "", (), carrier))
    for pattern in budget.patterns():
        combos, points = _pattern_paths(scene, arrays, source, target, pattern)
        for idx, pts in zip(combos, points):
            drafts.append(_draft(scene, pts, pattern, idx, carrier))

    drafts.sort(key=lambda d: (len(d.interactions), d.length, d.kinds, d.refs))
    unique = []
    seen = set()
    for draft in drafts:
        key = (draft.kinds, round(draft.length, 7)) + tuple(
            tuple(np.round(i.point, 7).tolist()) for i in draft.interactions
        )
        if key in seen:
            continue
        seen.add(key)
        unique.append(draft)

    paths = []
    n_pruned = 0
    for i, draft in enumerate(unique):
        draft = replace(draft, link_los=link_los, stream_key=(*link_key, i))
        gain = path_polarization(draft, cal, rng_stream(seed, *link_key, i), carrier)
        path = replace(draft, pol_gain=gain)
        if path.loss_db(carrier) > PATHLOSS_PRUNE_DB:
            n_pruned += 1
            continue
        paths.append(path)
    logger.debug(
        "Link %s: %d paths (%d pruned), LoS=%s", link_key, len(paths), n_pruned,
        link_los,
    )
    return paths


def calibrate_xpr(
    paths,
    carrier,
    cal=None,
    seed=0,
    target_mean_db=None,
    target_std_db=None,
    max_iter=100,
    tol=1e-3,
):
    """Fit the XPR correction to the traced rays.

    The factor and offset of `cal` are refit iteratively so that the
    effective per-ray XPR (see :func:`ray_xpr_db`) of all non-direct paths
    reaches the target mean and standard deviation. Every iteration reuses
    the random numbers each path draws in :func:`trace_link`.

    Parameters
    ----------
    paths : list of RayPath
        Traced paths, typically pooled over many links.
    carrier : float
        Frequency in Hz.
    cal : XprCalibration | None
        Starting point. Defaults to the uncalibrated statistics.
    seed : int
        The seed the paths were traced with.
    target_mean_db : float | None
        Target mean effective XPR. Defaults to the NLoS class mean.
    target_std_db : float | None
        Target standard deviation. Defaults to ``cal.target_std_db``.
    max_iter : int
        Iteration cap.
    tol : float
        Convergence tolerance on mean and standard deviation, in dB.

    Returns
    -------
    cal : XprCalibration
        A copy of `cal` with the fitted factor and offset.

    Raises
    ------
    ValueError
        If `paths` holds no reflected or diffracted ray.

    """
    cal = XprCalibration() if cal is None else cal
    target_mean = cal.target_mean_nlos_db if target_mean_db is None else target_mean_db
    target_std = cal.target_std_db if target_std_db is None else target_std_db
    rays = [p for p in paths if not p.is_los]
    if len(rays) == 0:
        raise ValueError(
            "`paths` must contain at least one reflected or diffracted ray"
        )

    # group by interaction count for batched products
    groups = {}
    raw_all = []
    for idx, path in enumerate(rays):
        key = path.stream_key if path.stream_key else (idx,)
        normals, phases = _draw_xpr_variates(
            rng_stream(seed, *key), len(path.interactions)
        )
        raw = cal.class_mean(path.link_los) + cal.target_std_db * normals
        coeffs = np.array(
            [_interaction_coefficients(i, carrier) for i in path.interactions]
        )
        group = groups.setdefault(len(path.interactions), ([], [], []))
        group[0].append(raw)
        group[1].append(phases)
        group[2].append(coeffs)
        raw_all.append(raw)
    groups = {k: tuple(np.array(v) for v in g) for k, g in groups.items()}
    raw_mean = float(np.mean(np.concatenate(raw_all)))

    def _effective(factor, offset):
        out = []
        for raw, phases, coeffs in groups.values():
            xpr = factor * raw + offset
            mats = _leakage(xpr, phases) * coeffs[..., None, :]
            gain = np.broadcast_to(np.eye(2, dtype=complex), mats.shape[:1] + (2, 2))
            for i in range(mats.shape[1]):
                gain = mats[:, i] @ gain
            out.append(ray_xpr_db(gain))
        return np.concatenate(out)

    factor, offset = cal.factor, cal.offset
    for it in range(max_iter):
        eff = _effective(factor, offset)
        mean, std = float(np.mean(eff)), float(np.std(eff))
        logger.debug(
            "XPR calibration %d: factor=%.4f offset=%.4f mean=%.3f std=%.3f",
            it, factor, offset, mean, std,
        )
        if abs(mean - target_mean) < tol and abs(std - target_std) < tol:
            break
        new_factor = factor * target_std / std
        offset = offset + (target_mean - mean) - (new_factor - factor) * raw_mean
        factor = new_factor
    else:
        logger.warning(
            "XPR calibration did not converge in %d iterations "
            "(mean %.3f dB, std %.3f dB)", max_iter, mean, std,
        )
    logger.info(
        "Calibrated XPR over %d rays: factor=%.4f offset=%.4f dB",
        len(rays), factor, offset,
    )
    return replace(cal, factor=float(factor), offset=float(offset))


def write_path_dump(paths, fname):
    """Write paths to a tab-separated dump file.

    Columns: ``path_id``, ``kinds`` (``LOS`` for the direct path),
    ``length_m``, ``delay_s`` and the real and imaginary parts of the four
    polarization gain entries (``vv``, ``vh``, ``hv``, ``hh``).
    """
    rows = []
    for i, path in enumerate(paths):
        g = path.pol_gain
        row = [i, path.kinds or "LOS", path.length, path.delay]
        for entry in (g[0, 0], g[0, 1], g[1, 0], g[1, 1]):
            row.extend([entry.real, entry.imag])
        rows.append(row)
    pd.DataFrame(rows, columns=_DUMP_COLUMNS).to_csv(fname, sep="\t", index=False)


def read_path_dump(fname):
    """Read a path dump written by :func:`write_path_dump`.

    Returns
    -------
    dump : pandas.DataFrame
        Columns ``path_id``, ``kinds``, ``length_m``, ``delay_s`` and the
        complex gains ``g_vv``, ``g_vh``, ``g_hv``, ``g_hh``.

    """
    df = pd.read_csv(fname, sep="\t", dtype={"kinds": str})
    missing = set(_DUMP_COLUMNS) - set(df.columns)
    if missing:
        raise ValueError(f"{fname} is not a path dump, missing {sorted(missing)}")
    out = df[["path_id", "kinds", "length_m", "delay_s"]].copy()
    for name in ("vv", "vh", "hv", "hh"):
        re, im = df[f"{name}_re"].to_numpy(), df[f"{name}_im"].to_numpy()
        out[f"g_{name}"] = re + 1j * im
    return out


def _draw_xpr_variates(rng, count):
    """Draw, per interaction, one standard normal and two leakage phases."""
    normals = np.empty(count)
    phases = np.empty((count, 2))
    for i in range(count):
        normals[i] = rng.standard_normal()
        phases[i] = rng.uniform(0.0, 2.0 * np.pi, size=2)
    return normals, phases


def _leakage(xpr_db, phases):
    """Build cross-polar leakage matrices, shape (..., 2, 2)."""
    xpr_db = np.asarray(xpr_db, dtype=float)
    phases = np.asarray(phases, dtype=float)
    rho = 10.0 ** (-xpr_db / 20.0)
    mats = np.empty(xpr_db.shape + (2, 2), dtype=complex)
    mats[..., 0, 0] = 1.0
    mats[..., 1, 1] = 1.0
    mats[..., 0, 1] = rho * np.exp(1j * phases[..., 0])
    mats[..., 1, 0] = rho * np.exp(1j * phases[..., 1])
    return mats / np.sqrt(1.0 + rho**2)[..., None, None]


def _interaction_coefficients(inter, carrier):
    """Diagonal (V, H) coefficients of one interaction."""
    if inter.kind == DIFFRACTION:
        coeff = knife_edge_coefficient(inter.nu)
        return np.array([coeff, coeff])
    gamma_par, gamma_perp = fresnel_coefficients(inter.material, inter.angle, carrier)
    # V lies in the plane of incidence for floor and ceiling, across it for walls
    if inter.vertical:
        return np.array([gamma_perp, gamma_par])
    return np.array([gamma_par, gamma_perp])


@lru_cache(maxsize=16)
def _scene_arrays(scene):
    """Stack facet, edge and box geometry of `scene` into arrays."""
    facets = scene.facets
    edges = scene.edges
    return _SceneArrays(
        facet_axis=np.array([f.axis for f in facets], dtype=int),
        facet_offset=np.array([f.offset for f in facets], dtype=float),
        facet_lo=np.array([f.lower for f in facets], dtype=float).reshape(-1, 3),
        facet_hi=np.array([f.upper for f in facets], dtype=float).reshape(-1, 3),
        edge_axis=np.array([e.axis for e in edges], dtype=int),
        edge_point=np.array([e.point for e in edges], dtype=float).reshape(-1, 3),
        edge_lo=np.array([e.lower for e in edges], dtype=float),
        edge_hi=np.array([e.upper for e in edges], dtype=float),
        edge_box=np.array([e.box for e in edges], dtype=int),
        box_lo=np.array([b.lower for b in scene.obstacles], dtype=float).reshape(-1, 3),
        box_hi=np.array([b.upper for b in scene.obstacles], dtype=float).reshape(-1, 3),
    )


def _mirror(points, axis, offset):
    """Mirror every row of `points` across its own axis-aligned plane."""
    out = points.copy()
    rows = np.arange(len(points))
    out[rows, axis] = 2.0 * offset - points[rows, axis]
    return out


def _reflection_chain(start, end, facet_idx, arrays):
    """Resolve reflection points from `start` to `end` over facet sequences.

    Returns the points, shape (n, r, 3), and a validity mask, shape (n,).
    """
    n, r = facet_idx.shape
    rows = np.arange(n)
    images = [start]
    for i in range(r):
        f = facet_idx[:, i]
        images.append(_mirror(images[-1], arrays.facet_axis[f], arrays.facet_offset[f]))

    points = np.empty((n, r, 3))
    valid = np.ones(n, dtype=bool)
    current = end
    for i in reversed(range(r)):
        f = facet_idx[:, i]
        axis = arrays.facet_axis[f]
        image = images[i + 1]
        denom = image[rows, axis] - current[rows, axis]
        with np.errstate(divide="ignore", invalid="ignore"):
            t = (arrays.facet_offset[f] - current[rows, axis]) / denom
        ok = np.isfinite(t) & (t > _PARAM_TOL) & (t < 1.0 - _PARAM_TOL)
        t = np.where(ok, t, 0.5)
        p = current + t[:, None] * (image - current)
        p[rows, axis] = arrays.facet_offset[f]
        on_facet = np.all(
            (p >= arrays.facet_lo[f] - _POINT_TOL)
            & (p <= arrays.facet_hi[f] + _POINT_TOL),
            axis=1,
        )
        valid &= ok & on_facet
        points[:, i] = p
        current = p
    return points, valid


def _edge_point(a, b, edge_idx, arrays):
    """Find the point on each edge minimizing the distance a -> edge -> b."""
    n = len(a)
    rows = np.arange(n)
    axis = arrays.edge_axis[edge_idx]
    base = arrays.edge_point[edge_idx]
    across = np.ones((n, 3), dtype=bool)
    across[rows, axis] = False
    dist_a = np.linalg.norm(np.where(across, a - base, 0.0), axis=1)
    dist_b = np.linalg.norm(np.where(across, b - base, 0.0), axis=1)
    s_a = a[rows, axis]
    s_b = b[rows, axis]
    total = dist_a + dist_b
    with np.errstate(divide="ignore", invalid="ignore"):
        s = s_a + (s_b - s_a) * dist_a / total
    valid = (
        (total > 0)
        & (s > arrays.edge_lo[edge_idx] + _POINT_TOL)
        & (s < arrays.edge_hi[edge_idx] - _POINT_TOL)
    )
    point = base.copy()
    point[rows, axis] = np.where(valid, s, 0.0)
    return point, valid


def _pattern_paths(scene, arrays, source, target, pattern):
    """Enumerate the unobstructed paths following one interaction pattern.

    Returns the facet/edge index combinations, shape (n, len(pattern)), and
    the path points including both ends, shape (n, len(pattern) + 2, 3).
    """
    k = len(pattern)
    pools = [
        len(arrays.facet_axis) if c == REFLECTION else len(arrays.edge_axis)
        for c in pattern
    ]
    empty = (np.empty((0, k), dtype=int), np.empty((0, k + 2, 3)))
    if min(pools) == 0:
        return empty
    grids = np.meshgrid(*[np.arange(p) for p in pools], indexing="ij")
    combos = np.stack([g.ravel() for g in grids], axis=1)
    for i in range(k - 1):
        if pattern[i] == pattern[i + 1] == REFLECTION:
            combos = combos[combos[:, i] != combos[:, i + 1]]
    n = len(combos)
    if n == 0:
        return empty
    src = np.broadcast_to(source, (n, 3)).copy()
    dst = np.broadcast_to(target, (n, 3)).copy()

    if DIFFRACTION not in pattern:
        pts, valid = _reflection_chain(src, dst, combos, arrays)
        points = np.concatenate([src[:, None], pts, dst[:, None]], axis=1)
    else:
        d = pattern.index(DIFFRACTION)
        pre = combos[:, :d]
        post = combos[:, d + 1 :]
        edge = combos[:, d]
        virtual_src = src
        for i in range(pre.shape[1]):
            f = pre[:, i]
            virtual_src = _mirror(
                virtual_src, arrays.facet_axis[f], arrays.facet_offset[f]
            )
        virtual_dst = dst
        for i in reversed(range(post.shape[1])):
            f = post[:, i]
            virtual_dst = _mirror(
                virtual_dst, arrays.facet_axis[f], arrays.facet_offset[f]
            )
        corner, valid = _edge_point(virtual_src, virtual_dst, edge, arrays)
        pre_pts, valid_pre = _reflection_chain(src, corner, pre, arrays)
        post_pts, valid_post = _reflection_chain(corner, dst, post, arrays)
        valid &= valid_pre & valid_post
        points = np.concatenate(
            [src[:, None], pre_pts, corner[:, None], post_pts, dst[:, None]], axis=1
        )

    combos = combos[valid]
    points = points[valid]
    if len(combos) == 0:
        return empty

    starts = points[:, :-1].reshape(-1, 3)
    ends = points[:, 1:].reshape(-1, 3)
    seg_len = np.linalg.norm(ends - starts, axis=1).reshape(len(combos), k + 1)
    blocked = segments_blocked(scene, starts, ends).reshape(len(combos), k + 1)
    keep = np.all(seg_len > _POINT_TOL, axis=1) & ~np.any(blocked, axis=1)

    if DIFFRACTION in pattern:
        # diffraction only in the shadow of the edge's own obstacle
        d = pattern.index(DIFFRACTION)
        box = arrays.edge_box[combos[:, d]]
        keep &= segment_box_overlap(
            points[:, d], points[:, d + 2], arrays.box_lo[box], arrays.box_hi[box]
        )
    return combos[keep], points[keep]


def _draft(scene, points, pattern, idx, carrier):
    """Build a RayPath (identity polarization) from resolved points."""
    segments = np.diff(points, axis=0)
    lengths = np.linalg.norm(segments, axis=1)
    directions = segments / lengths[:, None]
    wavelength = SPEED_OF_LIGHT / carrier
    interactions = []
    for j, (kind, ref) in enumerate(zip(pattern, idx)):
        point = tuple(points[j + 1].tolist())
        if kind == REFLECTION:
            facet = scene.facets[ref]
            cos_t = min(abs(directions[j][facet.axis]), 1.0)
            angle = min(float(np.arccos(cos_t)), np.pi / 2 - 1e-12)
            interactions.append(
                Interaction(
                    kind=REFLECTION,
                    ref=facet.name,
                    point=point,
                    angle=angle,
                    material=facet.material,
                    vertical=facet.is_vertical,
                )
            )
        else:
            edge = scene.edges[ref]
            knife = KnifeEdge(
                source=tuple(points[j].tolist()),
                edge_point=point,
                target=tuple(points[j + 2].tolist()),
                obstructed=True,
            )
            interactions.append(
                Interaction(
                    kind=DIFFRACTION,
                    ref=edge.name,
                    point=point,
                    nu=fresnel_parameter(knife, wavelength),
                )
            )
    length = float(lengths.sum())
    return RayPath(
        interactions=tuple(interactions),
        length=length,
        delay=length / SPEED_OF_LIGHT,
        pol_gain=np.eye(2, dtype=complex),
        departure=tuple(directions[0].tolist()),
        arrival=tuple(directions[-1].tolist()),
    )
