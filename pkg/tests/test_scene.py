"""Test scene geometry, arrays and deployments."""

from pathlib import Path

import numpy as np
import pytest
from numpy.testing import assert_allclose

from dmimo_sim.config import SPEED_OF_LIGHT
from dmimo_sim.exceptions import ConfigError, OverlapError
from dmimo_sim.scene import (
    ArrayConfig,
    Material,
    NoiseModel,
    TxPowerModel,
    array_elements,
    build_deployment,
    build_scene,
    los_blocked,
    place_ue_grid,
    point_in_obstacle,
    read_scene,
    scene_digest,
    segments_blocked,
)

DESK_SCENE = Path(__file__).parents[1] / "data" / "desk_scene.yaml"

ROOM = {
    "size": [10.0, 10.0, 5.0],
    "obstacles": [{"name": "rack", "min": [4.0, 4.0, 0.0], "max": [6.0, 6.0, 2.0]}],
}


def _deployment_spec(**changes):
    spec = {
        "arrays": {"ula": {"polarizations": ["V", "H", "V", "H"]}},
        "aps": [
            {"id": 2, "position": [9.0, 9.0, 4.0], "array": "ula"},
            {"id": 1, "position": [1.0, 1.0, 4.0], "array": "ula"},
        ],
        "ue_grid": {"resolution": 2.0, "height": 1.5, "margin": 1.0, "array": "ula"},
    }
    spec.update(changes)
    return spec


def test_build_scene():
    """Walls, box faces and edges of a simple room."""
    scene = build_scene(ROOM)
    assert len(scene.walls) == 6
    assert len(scene.obstacles) == 1
    # the bottom face is flush with the floor
    assert len(scene.facets) == 6 + 5
    assert len(scene.edges) == 4
    assert all(edge.axis == 2 for edge in scene.edges)
    assert scene.obstacles[0].material.is_perfect_conductor
    assert scene.walls[0].material.name == "concrete"
    assert_allclose(scene.wavelength, SPEED_OF_LIGHT / 3.7e9)

    rooftop = build_scene({**ROOM, "rooftop_edges": True})
    assert len(rooftop.edges) == 8


def test_build_scene_io():
    """Bad scene descriptions raise."""
    with pytest.raises(ConfigError, match="`bounds` or `size`"):
        build_scene({})
    with pytest.raises(ConfigError, match="must be positive"):
        build_scene({"size": [10, 0, 5]})
    with pytest.raises(ConfigError, match="Unknown material"):
        build_scene({"size": [10, 10, 5], "walls": {"default": "wood"}})
    with pytest.raises(ConfigError, match="Unknown wall names"):
        build_scene({"size": [10, 10, 5], "walls": {"roof": "concrete"}})
    with pytest.raises(OverlapError, match="extends past"):
        build_scene(
            {"size": [10, 10, 5], "obstacles": [{"min": [8, 8, 0], "max": [11, 9, 2]}]}
        )
    with pytest.raises(ConfigError, match="positive dimensions"):
        build_scene(
            {"size": [10, 10, 5], "obstacles": [{"min": [2, 2, 0], "max": [2, 3, 2]}]}
        )
    with pytest.raises(ConfigError, match="exceed the bandwidth"):
        build_scene({"size": [10, 10, 5], "radio": {"rb_count": 100}})
    with pytest.raises(ConfigError, match="three numbers"):
        build_scene({"size": [10, 10]})


def test_rack_rows():
    """A rack row expands into equally spaced boxes."""
    scene = build_scene(
        {
            "size": [20.0, 20.0, 5.0],
            "rack_rows": [
                {
                    "name": "row",
                    "origin": [2.0, 2.0, 0.0],
                    "size": [6.0, 1.0, 4.0],
                    "count": 3,
                    "pitch": [0.0, 4.0, 0.0],
                }
            ],
        }
    )
    assert [box.name for box in scene.obstacles] == ["row_1", "row_2", "row_3"]
    assert scene.obstacles[2].lower == (2.0, 10.0, 0.0)
    assert scene.obstacles[2].upper == (8.0, 11.0, 4.0)


def test_material():
    """Permittivity and conductivity checks."""
    concrete = Material("concrete", 5.31, 0.0326)
    eps = concrete.complex_permittivity(3.7e9)
    assert eps.real == 5.31
    assert eps.imag < 0
    with pytest.raises(ConfigError, match="relative_permittivity"):
        Material("air", 0.5)
    with pytest.raises(ConfigError, match="conductivity"):
        Material("odd", 2.0, -1.0)
    # the permittivity of a perfect conductor is irrelevant
    Material("pec", 0.0, is_perfect_conductor=True)


def test_rb_grid():
    """RB centres are symmetric about the carrier."""
    grid = build_scene({"size": [10, 10, 5]}).rb_grid
    centers = grid.centers
    assert len(centers) == 52
    assert_allclose(np.mean(centers), 3.7e9)
    assert_allclose(np.diff(centers), 360e3)
    assert_allclose(grid.span, 52 * 360e3)


def test_place_ue_grid():
    """Grid order, margins and obstacle removal."""
    empty = build_scene({"size": [10.0, 10.0, 5.0]})
    points = place_ue_grid(empty, resolution=2.0, height=1.5, margin=1.0)
    assert len(points) == 25
    assert_allclose(points[0], [1.0, 1.0, 1.5])
    # x varies fastest
    assert_allclose(points[1], [3.0, 1.0, 1.5])
    assert_allclose(points[5], [1.0, 3.0, 1.5])

    scene = build_scene(
        {
            "size": [10.0, 10.0, 5.0],
            "obstacles": [{"min": [2.5, 2.5, 0], "max": [5, 5, 3]}],
        }
    )
    points = place_ue_grid(scene, resolution=2.0, height=1.5, margin=1.0)
    assert len(points) == 21
    assert not any(point_in_obstacle(scene, p, closed=True) for p in points)

    # a margin wider than half the room leaves the centre line
    points = place_ue_grid(empty, resolution=2.0, height=1.5, margin=6.0)
    assert_allclose(points, [[5.0, 5.0, 1.5]])

    with pytest.raises(ConfigError, match="`resolution`"):
        place_ue_grid(empty, resolution=0.0, height=1.5)
    with pytest.raises(ConfigError, match="`height`"):
        place_ue_grid(empty, resolution=1.0, height=6.0)


def test_los_blocked():
    """Open-interior segment tests."""
    scene = build_scene(ROOM)
    assert los_blocked(scene, (1, 5, 1), (9, 5, 1))
    assert los_blocked(scene, (9, 5, 1), (1, 5, 1))
    # above the box
    assert not los_blocked(scene, (1, 5, 3), (9, 5, 3))
    # grazing the top face
    assert not los_blocked(scene, (1, 5, 2), (9, 5, 2))
    # along a side face
    assert not los_blocked(scene, (4, 1, 1), (4, 9, 1))
    assert not los_blocked(build_scene({"size": [10, 10, 5]}), (1, 1, 1), (9, 9, 4))

    starts = np.array([[1, 5, 1], [1, 5, 3], [4, 1, 1]], dtype=float)
    ends = np.array([[9, 5, 1], [9, 5, 3], [4, 9, 1]], dtype=float)
    assert segments_blocked(scene, starts, ends).tolist() == [True, False, False]


def test_point_in_obstacle():
    """Surface points are inside only for the closed test."""
    scene = build_scene(ROOM)
    assert point_in_obstacle(scene, (5, 5, 1))
    assert not point_in_obstacle(scene, (4, 5, 1))
    assert point_in_obstacle(scene, (4, 5, 1), closed=True)
    assert not point_in_obstacle(scene, (1, 1, 1), closed=True)


def test_array_config():
    """Element layout and antenna leakage."""
    cfg = ArrayConfig(polarizations=("V", "H", "V", "H"))
    assert cfg.element_count == 4
    elements = array_elements(cfg, 3.7e9)
    wavelength = SPEED_OF_LIGHT / 3.7e9
    assert_allclose(elements[2][0], [wavelength / 2, 0, 0])
    assert_allclose(elements[1][1], [0, 1])

    leak = cfg.leakage_matrix()
    assert_allclose(np.sum(leak**2, axis=1), 1.0)
    assert_allclose(leak[0, 1] / leak[0, 0], 0.1)
    ideal = ArrayConfig(polarizations=("V",), xpd_db=np.inf).leakage_matrix()
    assert_allclose(ideal, np.eye(2))

    assert cfg.subset(2).polarizations == ("V", "H")
    with pytest.raises(ConfigError, match="polarizations"):
        ArrayConfig(polarizations=("V", "X"))
    with pytest.raises(ConfigError, match="co_pol_spacing"):
        ArrayConfig(polarizations=("V",), co_pol_spacing=0.0)
    with pytest.raises(ConfigError, match="at least one"):
        ArrayConfig(polarizations=())


def test_build_deployment():
    """APs sorted by id, UEs numbered in grid order."""
    scene = build_scene(ROOM)
    dep = build_deployment(_deployment_spec(), scene)
    assert dep.ap_ids == (1, 2)
    assert dep.active_ap_ids == (1, 2)
    assert dep.ues[0].id == 1
    assert [ue.id for ue in dep.ues] == list(range(1, len(dep.ues) + 1))
    # (5, 5) lies inside the rack
    assert len(dep.ues) == 24
    assert dep.ap(2).position == (9.0, 9.0, 4.0)
    assert dep.with_active([2]).active_aps[0].id == 2
    assert dep.digest == build_deployment(_deployment_spec(), scene).digest

    with pytest.raises(ConfigError, match="Unknown AP ids"):
        dep.with_active([3])
    with pytest.raises(KeyError, match="No AP"):
        dep.ap(7)


def test_build_deployment_io():
    """Invalid deployments raise."""
    scene = build_scene(ROOM)
    ula = "ula"
    with pytest.raises(ConfigError, match="unique"):
        build_deployment(
            _deployment_spec(
                aps=[
                    {"id": 1, "position": [1, 1, 4], "array": ula},
                    {"id": 1, "position": [2, 1, 4], "array": ula},
                ]
            ),
            scene,
        )
    with pytest.raises(OverlapError, match="inside an obstacle"):
        build_deployment(
            _deployment_spec(aps=[{"id": 1, "position": [5, 5, 1], "array": ula}]),
            scene,
        )
    with pytest.raises(ConfigError, match="outside the scene"):
        build_deployment(
            _deployment_spec(aps=[{"id": 1, "position": [11, 5, 1], "array": ula}]),
            scene,
        )
    with pytest.raises(ConfigError, match="Unknown array"):
        build_deployment(
            _deployment_spec(aps=[{"id": 1, "position": [1, 5, 1], "array": "x"}]),
            scene,
        )
    with pytest.raises(ConfigError, match="not deployed"):
        build_deployment(_deployment_spec(active_ap_ids=[1, 5]), scene)
    with pytest.raises(ConfigError, match="ue_grid"):
        spec = _deployment_spec()
        del spec["ue_grid"]
        build_deployment(spec, scene)


def test_read_desk_scene():
    """The shipped desk scene."""
    scene, dep = read_scene(DESK_SCENE)
    assert scene.name == "desk"
    assert scene.upper == (40.0, 20.0, 5.0)
    assert len(scene.obstacles) == 8
    assert dep.ap_ids == tuple(range(1, 9))
    assert len(dep.ues) == 160
    assert all(ue.array.element_count == 4 for ue in dep.ues)


def test_scene_digest():
    """Digests change with the geometry only."""
    a = build_scene(ROOM)
    b = build_scene(ROOM)
    assert a.digest == b.digest
    assert scene_digest(a) == scene_digest(b)
    moved = {**ROOM, "obstacles": [{"min": [4, 4, 0], "max": [6, 7, 2]}]}
    assert build_scene(moved).digest != a.digest
    dep = build_deployment(_deployment_spec(), a)
    assert scene_digest(a, dep) != scene_digest(a)


def test_power_models():
    """Per-AP and network Tx models."""
    per_ap = TxPowerModel("per-ap", 23.0)
    assert per_ap.ap_power_dbm(1) == 23.0
    assert per_ap.ap_power_dbm(8) == 23.0
    assert_allclose(per_ap.network_power_dbm(3), 23.0 + 10 * np.log10(3))

    network = TxPowerModel("network", 27.8)
    assert_allclose(network.ap_power_dbm(3), 23.03, atol=0.01)
    assert_allclose(network.network_power_dbm(3), 27.8)
    assert_allclose(network.network_power_mw(1), 10 ** 2.78)

    with pytest.raises(ConfigError, match="`kind`"):
        TxPowerModel("total", 23.0)
    with pytest.raises(ValueError, match="`n_active`"):
        per_ap.ap_power_dbm(0)

    assert_allclose(NoiseModel(-118.0).n0_mw, 10 ** -11.8)
    with pytest.raises(ConfigError, match="finite"):
        NoiseModel(np.inf)
