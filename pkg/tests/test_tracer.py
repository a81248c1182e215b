"""Test the ray tracer, Fresnel coefficients and XPR calibration."""

import numpy as np
import pytest
from numpy.testing import assert_allclose

from dmimo_sim.config import PATHLOSS_PRUNE_DB
from dmimo_sim.exceptions import ConfigError
from dmimo_sim.scene import Material, build_scene
from dmimo_sim.tracer import (
    InteractionBudget,
    KnifeEdge,
    XprCalibration,
    calibrate_xpr,
    fresnel_coefficients,
    fresnel_parameter,
    knife_edge_coefficient,
    knife_edge_diffraction,
    path_field,
    ray_xpr_db,
    read_path_dump,
    trace_link,
    write_path_dump,
)

# a hall around the AP and UE of the reflection tests
ROOM = {"bounds": {"min": [-1.0, -1.0, 0.0], "max": [5.0, 5.0, 4.0]}}

# a full-height wall from the south wall up to y = 6
WALL = {
    "size": [10.0, 10.0, 3.0],
    "obstacles": [{"name": "wall", "min": [4.9, 0.0, 0.0], "max": [5.1, 6.0, 3.0]}],
}


def test_interaction_budget():
    """Patterns allowed by the budget."""
    expected = ["D", "R", "DR", "RD", "RR", "DRR", "RDR", "RRD"]
    assert InteractionBudget(2, 1).patterns() == expected
    assert InteractionBudget(1, 0).patterns() == ["R"]
    assert InteractionBudget(0, 0).patterns() == []
    with pytest.raises(ConfigError, match="`reflections`"):
        InteractionBudget(3, 0)
    with pytest.raises(ConfigError, match="`diffractions`"):
        InteractionBudget(0, 2)


def test_single_reflections():
    """The direct path and one reflection per facet."""
    scene = build_scene(ROOM)
    paths = trace_link(scene, (0, 0, 2), (0, 4, 2), budget=InteractionBudget(1, 0))
    assert len(paths) == 7
    assert paths[0].is_los
    assert_allclose(paths[0].length, 4.0)
    assert_allclose(paths[0].pol_gain, np.eye(2))
    assert all(not p.is_los for p in paths[1:])

    lengths = {p.refs[0]: p.length for p in paths[1:]}
    assert_allclose(lengths["x_max"], np.sqrt(116.0))
    assert_allclose(lengths["x_min"], np.sqrt(20.0))
    assert_allclose(lengths["floor"], np.sqrt(32.0))
    assert_allclose(lengths["y_max"], 6.0)
    # sorted by length within the same interaction count
    assert [p.length for p in paths[1:]] == sorted(p.length for p in paths[1:])
    for path in paths:
        assert_allclose(path.delay, path.length / 299792458.0)
        assert path.loss_db(scene.carrier_frequency) <= PATHLOSS_PRUNE_DB


def test_reflection_geometry():
    """Reflection points lie on their facet and the incidence angle matches."""
    scene = build_scene(ROOM)
    paths = trace_link(scene, (0, 0, 2), (0, 4, 2), budget=InteractionBudget(1, 0))
    floor = next(p for p in paths if p.refs == ("floor",))
    inter = floor.interactions[0]
    assert_allclose(inter.point, (0.0, 2.0, 0.0), atol=1e-9)
    assert_allclose(inter.angle, np.pi / 4)
    assert not inter.vertical
    assert_allclose(floor.departure, np.array([0, 1, -1]) / np.sqrt(2), atol=1e-12)
    assert_allclose(floor.arrival, np.array([0, 1, 1]) / np.sqrt(2), atol=1e-12)


def test_double_reflections():
    """Two-bounce paths never reuse a facet back to back."""
    scene = build_scene(ROOM)
    paths = trace_link(scene, (0, 0, 2), (0, 4, 2), budget=InteractionBudget(2, 0))
    doubles = [p for p in paths if p.kinds == "RR"]
    assert len(doubles) > 0
    assert all(p.refs[0] != p.refs[1] for p in doubles)
    # floor then ceiling: image distance sqrt(4^2 + 8^2)
    fc = next(p for p in doubles if p.refs == ("floor", "ceiling"))
    assert_allclose(fc.length, np.sqrt(80.0))


def test_diffraction_around_wall():
    """A blocked link keeps the single diffraction around the free edge."""
    scene = build_scene(WALL)
    ap, ue = (2.0, 2.0, 1.5), (8.0, 8.0, 1.5)
    paths = trace_link(scene, ap, ue, budget=InteractionBudget(0, 1))
    assert len(paths) == 1
    path = paths[0]
    assert path.kinds == "D"
    assert path.refs == ("wall:z@(4.9,6)",)
    assert_allclose(path.interactions[0].point, (4.9, 6.0, 1.5))
    assert_allclose(path.length, np.hypot(2.9, 4.0) + np.hypot(3.1, 2.0))
    assert path.interactions[0].nu > 0
    assert not path.link_los

    full = trace_link(scene, ap, ue)
    assert len(full) > 1
    assert not any(p.is_los for p in full)


def test_trace_link_seeding():
    """Polarization gains depend on the seed and link key only."""
    scene = build_scene(ROOM)
    a = trace_link(scene, (0, 0, 2), (0, 4, 2), seed=1, link_key=(1, 2))
    b = trace_link(scene, (0, 0, 2), (0, 4, 2), seed=1, link_key=(1, 2))
    c = trace_link(scene, (0, 0, 2), (0, 4, 2), seed=2, link_key=(1, 2))
    assert len(a) == len(b) == len(c)
    for pa, pb in zip(a, b):
        assert np.array_equal(pa.pol_gain, pb.pol_gain)
        assert pa.stream_key[:2] == (1, 2)
    assert not np.array_equal(a[1].pol_gain, c[1].pol_gain)
    assert all(p.link_los for p in a)


def test_fresnel_coefficients():
    """Normal incidence, perfect conductors and passivity."""
    g_par, g_perp = fresnel_coefficients(Material("glass", 4.0), 0.0, 1e9)
    assert_allclose([g_par, g_perp], [-1 / 3, -1 / 3])
    pec = Material("metal", is_perfect_conductor=True)
    assert fresnel_coefficients(pec, 0.7, 3.7e9) == (-1.0, -1.0)

    concrete = Material("concrete", 5.31, 0.0326)
    for angle in np.linspace(0.0, 1.5, 16):
        g_par, g_perp = fresnel_coefficients(concrete, angle, 3.7e9)
        assert abs(g_par) <= 1.0
        assert abs(g_perp) <= 1.0
    # grazing incidence reflects almost everything
    _, g_perp = fresnel_coefficients(concrete, 1.55, 3.7e9)
    assert abs(g_perp) > 0.9

    with pytest.raises(ValueError, match="`incidence`"):
        fresnel_coefficients(concrete, np.pi / 2, 3.7e9)


def test_knife_edge():
    """Amplitude bounded by one and decreasing with obstruction."""
    assert_allclose(abs(knife_edge_coefficient(0.0)), 0.5)
    nus = np.linspace(-3.0, 5.0, 161)
    amps = np.array([abs(knife_edge_coefficient(nu)) for nu in nus])
    assert np.all(amps <= 1.0 + 1e-12)
    assert np.all(np.diff(amps) <= 1e-12)
    assert_allclose(amps[0], 1.0)
    assert amps[-1] < 0.1

    lit = KnifeEdge((0, 0, 0), (5, 1, 0), (10, 0, 0), obstructed=False)
    shadow = KnifeEdge((0, 0, 0), (5, 1, 0), (10, 0, 0), obstructed=True)
    assert fresnel_parameter(lit, 0.1) == -fresnel_parameter(shadow, 0.1)
    excess = 2 * np.hypot(5, 1) - 10
    assert_allclose(fresnel_parameter(shadow, 0.1), 2 * np.sqrt(excess / 0.1))

    carrier = 299792458.0 / 0.1
    assert_allclose(
        knife_edge_diffraction(shadow, carrier),
        knife_edge_coefficient(fresnel_parameter(shadow, 0.1)),
    )
    grazing = KnifeEdge((0, 0, 0), (5, 0, 0), (10, 0, 0), obstructed=True)
    loss_db = -20 * np.log10(abs(knife_edge_diffraction(grazing, 3.7e9)))
    assert_allclose(loss_db, 6.02, atol=1e-2)


def test_xpr_helpers():
    """Effective XPR and the calibration parameters."""
    assert ray_xpr_db(np.eye(2)) == np.inf
    assert_allclose(ray_xpr_db([[1, 0.1], [0.1, 1]]), 20.0)
    stack = np.array([np.eye(2), [[1, 0.1], [0.1, 1]]])
    assert ray_xpr_db(stack).shape == (2,)

    cal = XprCalibration(factor=2.0, offset=-1.0)
    assert_allclose(cal.corrected([1.0, 2.0]), [1.0, 3.0])
    assert cal.class_mean(True) > cal.class_mean(False)
    with pytest.raises(ConfigError, match="`target_std_db`"):
        XprCalibration(target_std_db=0.0)
    with pytest.raises(ConfigError, match="finite"):
        XprCalibration(factor=np.nan)


def test_calibrate_xpr():
    """Single-bounce rays land on the target statistics."""
    scene = build_scene(ROOM)
    budget = InteractionBudget(1, 0)
    ues = [(0.0, 4.0, 2.0), (3.0, 3.0, 1.0), (4.0, 1.0, 1.5)]
    paths = []
    for i, ue in enumerate(ues):
        paths += trace_link(scene, (0, 0, 2), ue, budget=budget, link_key=(1, i))

    cal = calibrate_xpr(
        paths, scene.carrier_frequency, target_mean_db=11.0, target_std_db=6.0
    )
    retraced = []
    for i, ue in enumerate(ues):
        retraced += trace_link(
            scene, (0, 0, 2), ue, budget=budget, cal=cal, link_key=(1, i)
        )
    xpr = ray_xpr_db(np.array([p.pol_gain for p in retraced if not p.is_los]))
    assert_allclose(np.mean(xpr), 11.0, atol=1e-2)
    assert_allclose(np.std(xpr), 6.0, atol=1e-2)

    direct = [p for p in paths if p.is_los]
    with pytest.raises(ValueError, match="at least one reflected"):
        calibrate_xpr(direct, scene.carrier_frequency)


def test_path_field():
    """Free-space amplitude of the direct path."""
    scene = build_scene(ROOM)
    los = trace_link(scene, (0, 0, 2), (0, 4, 2), budget=InteractionBudget(0, 0))[0]
    f = scene.carrier_frequency
    field = path_field(los, f)
    assert_allclose(np.abs(field), np.eye(2) * scene.wavelength / (16 * np.pi))


def test_path_dump(tmp_path):
    """Dumped paths keep kinds, lengths and gains."""
    scene = build_scene(ROOM)
    paths = trace_link(scene, (0, 0, 2), (0, 4, 2), budget=InteractionBudget(1, 0))
    fname = tmp_path / "paths.tsv"
    write_path_dump(paths, fname)
    dump = read_path_dump(fname)
    assert dump["kinds"].tolist() == ["LOS"] + ["R"] * 6
    assert_allclose(dump["length_m"], [p.length for p in paths])
    assert_allclose(dump["g_vh"], [p.pol_gain[0, 1] for p in paths])

    bad = tmp_path / "bad.tsv"
    bad.write_text("a\tb\n1\t2\n")
    with pytest.raises(ValueError, match="not a path dump"):
        read_path_dump(bad)
