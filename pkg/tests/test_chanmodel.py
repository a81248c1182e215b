"""Test channel assembly, Rayleigh synthesis and the channel database."""

from dataclasses import replace

import numpy as np
import pytest
from numpy.testing import assert_allclose
from scipy.stats import kstest

from dmimo_sim.chanmodel import (
    ChannelDatabase,
    LinkChannel,
    assemble_rt_channel,
    build_database,
    coherence_bandwidth,
    coherence_report,
    coherence_summary,
    load_database,
    pathloss_db,
    save_database,
    stack_channels,
    stack_links,
    synthesize_database,
    synthesize_rayleigh,
)
from dmimo_sim.config import COHERENCE_COLUMNS, SPEED_OF_LIGHT
from dmimo_sim.exceptions import (
    DegenerateChannel,
    DigestMismatch,
    FormatError,
    MissingEntry,
)
from dmimo_sim.scene import ArrayConfig, build_deployment, build_scene
from dmimo_sim.tracer import InteractionBudget, trace_link

ROOM = {"bounds": {"min": [-1.0, -1.0, 0.0], "max": [5.0, 5.0, 4.0]}}
SISO = ArrayConfig(polarizations=("V",), xpd_db=np.inf)
DUAL = ArrayConfig(polarizations=("V", "H"))
FREQS = 3.7e9 + 360e3 * (np.arange(52) - 25.5)


def _link(per_rb, ap_ids=(1,), ue_id=1, model="rt", antennas=None, profile=None):
    per_rb = np.asarray(per_rb, dtype=complex)
    return LinkChannel(
        ap_ids=tuple(ap_ids),
        ue_id=ue_id,
        model=model,
        per_rb=per_rb,
        rb_center_frequencies=FREQS[: per_rb.shape[0]],
        antennas_per_ap=antennas or (per_rb.shape[1],),
        delay_profile=profile,
    )


def _small_deployment(scene):
    spec = {
        "arrays": {"dual": {"polarizations": ["V", "H"]}},
        "aps": [
            {"id": 1, "position": [0.0, 0.0, 3.0], "array": "dual"},
            {"id": 2, "position": [4.0, 4.0, 3.0], "array": "dual"},
        ],
        "ue_grid": {
            "resolution": 3.0,
            "height": 1.5,
            "margin": 0.5,
            "array": "dual",
        },
    }
    return build_deployment(spec, scene)


def test_assemble_direct_path():
    """A single direct path gives the free-space transfer function."""
    scene = build_scene(ROOM)
    paths = trace_link(scene, (0, 0, 2), (0, 4, 2), budget=InteractionBudget(0, 0))
    link = assemble_rt_channel(paths, SISO, SISO, scene.rb_grid, ap_id=3, ue_id=7)
    assert link.per_rb.shape == (52, 1, 1)
    assert (link.ap_ids, link.ue_id, link.model) == ((3,), 7, "rt")
    assert not link.empty
    freqs = scene.rb_grid.centers
    expected = SPEED_OF_LIGHT / freqs / (16 * np.pi)
    expected = expected * np.exp(-2j * np.pi * freqs * 4.0 / SPEED_OF_LIGHT)
    assert_allclose(link.per_rb[:, 0, 0], expected)
    delays, powers = link.delay_profile
    assert_allclose(delays, [4.0 / SPEED_OF_LIGHT])
    assert_allclose(powers, [(scene.wavelength / (16 * np.pi)) ** 2])


def test_assemble_polarization():
    """Co-polar elements couple, cross-polar elements leak by the XPD."""
    scene = build_scene(ROOM)
    paths = trace_link(scene, (0, 0, 2), (0, 4, 2), budget=InteractionBudget(0, 0))
    link = assemble_rt_channel(paths, DUAL, DUAL, scene.rb_grid)
    power = np.mean(np.abs(link.per_rb) ** 2, axis=0)
    # 20 dB XPD at both ends couples V and H with 2 k / (1 + k^2)
    kappa = 0.1
    assert_allclose(power[0, 1] / power[0, 0], (2 * kappa / (1 + kappa**2)) ** 2)
    assert_allclose(power[0, 0], power[1, 1])


def test_assemble_empty():
    """No paths give an empty zero link."""
    grid = build_scene(ROOM).rb_grid
    link = assemble_rt_channel([], DUAL, SISO, grid)
    assert link.empty
    assert link.per_rb.shape == (52, 2, 1)
    assert not np.any(link.per_rb)
    assert len(link.delay_profile[0]) == 0
    assert pathloss_db(link) == np.inf


def test_link_channel():
    """Validation, AP blocks and UE antenna subsets."""
    H = np.ones((4, 6, 2))
    link = _link(H, ap_ids=(2, 5), antennas=(4, 2))
    assert (link.rb_count, link.network_antennas, link.ue_antennas) == (4, 6, 2)
    assert link.ap_rows(5) == slice(4, 6)
    assert link.ap_link(5).per_rb.shape == (4, 2, 2)
    assert link.ap_link(2).ap_ids == (2,)
    with pytest.raises(MissingEntry):
        link.ap_rows(3)

    subset = _link(H, profile=(np.zeros(1), np.ones(1))).with_ue_antennas(1)
    assert subset.ue_antennas == 1
    assert subset.delay_profile is None
    with pytest.raises(ValueError, match="`count`"):
        link.with_ue_antennas(3)

    with pytest.raises(ValueError, match="`model`"):
        _link(H, model="awgn")
    with pytest.raises(ValueError, match="3D"):
        _link(np.ones((4, 6)))
    with pytest.raises(ValueError, match="`antennas_per_ap`"):
        _link(H, antennas=(4, 4), ap_ids=(1, 2))
    with pytest.raises(ValueError, match="finite"):
        _link(np.full((2, 1, 1), np.nan))


def test_pathloss_db():
    """Mean power gain over RBs and antenna pairs."""
    assert_allclose(pathloss_db(_link(np.full((3, 2, 2), 1e-4))), 80.0)


def test_stack_links():
    """Row stacking keeps AP order and rejects mismatches."""
    a = _link(np.ones((3, 2, 2)), ap_ids=(4,))
    b = _link(2 * np.ones((3, 2, 2)), ap_ids=(1,))
    stacked = stack_links([a, b])
    assert stacked.ap_ids == (4, 1)
    assert stacked.antennas_per_ap == (2, 2)
    assert_allclose(stacked.per_rb[:, 2:], 2.0)

    with pytest.raises(ValueError, match="once"):
        stack_links([a, a])
    with pytest.raises(ValueError, match="share UE"):
        stack_links([a, _link(np.ones((3, 2, 2)), ap_ids=(2,), ue_id=9)])
    with pytest.raises(ValueError, match="empty"):
        stack_links([])


def test_synthesize_rayleigh():
    """Per-entry magnitudes with unit-power complex normal draws."""
    rt = _link(np.ones((52, 4, 4)), ap_ids=(1, 2), antennas=(2, 2))
    ray = synthesize_rayleigh(rt, seed=3)
    assert ray.model == "rayleigh"
    assert ray.per_rb.shape == rt.per_rb.shape
    assert_allclose(np.mean(np.abs(ray.per_rb) ** 2), 1.0, atol=0.2)
    assert np.array_equal(ray.per_rb, synthesize_rayleigh(rt, seed=3).per_rb)
    assert not np.array_equal(ray.per_rb, synthesize_rayleigh(rt, seed=4).per_rb)

    # a stacked link synthesizes like its parts
    part = synthesize_rayleigh(rt.ap_link(2), seed=3)
    assert np.array_equal(ray.per_rb[:, 2:], part.per_rb)

    zeros = synthesize_rayleigh(_link(np.zeros((4, 2, 2))), seed=0)
    assert not np.any(zeros.per_rb)
    with pytest.raises(ValueError, match="ray-traced"):
        synthesize_rayleigh(ray, seed=0)


def test_synthesize_rayleigh_statistics():
    """Draws are unit-power, uniform in phase and uncorrelated."""
    rt = _link(np.ones((52, 44, 44)))
    h = synthesize_rayleigh(rt, seed=11).per_rb
    n = h.size
    assert n >= 100_000

    # |h|^2 is exponential with unit mean and unit standard deviation
    assert abs(np.mean(np.abs(h) ** 2) - 1.0) < 3.0 / np.sqrt(n)
    result = kstest(np.angle(h).ravel(), "uniform", args=(-np.pi, 2 * np.pi))
    assert result.pvalue > 0.01

    for axis in range(3):
        a = np.moveaxis(h, axis, 0)
        corr = np.corrcoef(a[:-1].ravel(), a[1:].ravel())[0, 1]
        assert abs(corr) < 0.05


def test_coherence_bandwidth_profile():
    """Two equal paths 100 ns apart decorrelate to 0.9 at 1.436 MHz."""
    profile = (np.array([20e-9, 120e-9]), np.array([1.0, 1.0]))
    link = _link(np.ones((52, 1, 1)), profile=profile)
    expected = np.arccos(0.9) / (np.pi * 100e-9)
    assert_allclose(coherence_bandwidth(link), expected, rtol=1e-5)
    assert_allclose(expected, 1.4357e6, rtol=1e-4)

    single = _link(np.ones((52, 1, 1)), profile=(np.zeros(1), np.ones(1)))
    assert_allclose(coherence_bandwidth(single), 52 * 360e3)


def test_coherence_bandwidth_many_paths():
    """Long delay profiles give the same answer as their two-path equivalent."""
    delays = np.repeat([20e-9, 120e-9], 2500)
    profile = (delays, np.ones(len(delays)))
    link = _link(np.ones((52, 1, 1)), profile=profile)
    expected = np.arccos(0.9) / (np.pi * 100e-9)
    assert_allclose(coherence_bandwidth(link), expected, rtol=1e-5)


def test_coherence_bandwidth_samples():
    """Sample correlation over RBs when no delay profile is known."""
    flat = _link(np.ones((52, 2, 2)))
    assert_allclose(coherence_bandwidth(flat), 52 * 360e3)

    rt = _link(np.ones((52, 2, 2)))
    ray = synthesize_rayleigh(rt, seed=0)
    assert coherence_bandwidth(ray) < 360e3

    with pytest.raises(DegenerateChannel, match="no energy"):
        coherence_bandwidth(_link(np.zeros((4, 1, 1))))
    with pytest.raises(ValueError, match="at least 2 RBs"):
        coherence_bandwidth(_link(np.ones((1, 1, 1))))
    with pytest.raises(ValueError, match="`correlation_threshold`"):
        coherence_bandwidth(flat, correlation_threshold=1.0)


def test_build_database():
    """Every AP/UE pair is traced, independently of the worker count."""
    scene = build_scene(ROOM)
    dep = _small_deployment(scene)
    budget = InteractionBudget(1, 0)
    db = build_database(scene, dep, seed=5, budget=budget, n_jobs=1)
    assert db.model == "rt"
    assert db.seed == 5
    assert db.ap_ids == (1, 2)
    assert len(db.entries) == 2 * len(dep.ues)
    assert db.link(2, 1).per_rb.shape == (52, 2, 2)
    assert_allclose(db.rb_grid.centers, scene.rb_grid.centers)
    with pytest.raises(MissingEntry):
        db.link(3, 1)

    threaded = build_database(scene, dep, seed=5, budget=budget, n_jobs=3)
    assert db.equals(threaded)
    other = build_database(scene, dep, seed=6, budget=budget, n_jobs=2)
    assert not db.equals(other)

    stacked = stack_channels(db, [2, 1], 1)
    assert stacked.ap_ids == (2, 1)
    assert stacked.per_rb.shape == (52, 4, 2)


def test_database_file(tmp_path):
    """Saved databases load bit-identically and are checked on load."""
    scene = build_scene(ROOM)
    dep = _small_deployment(scene)
    db = build_database(scene, dep, budget=InteractionBudget(1, 0), n_jobs=2)
    fname = tmp_path / "rt.dmch"
    save_database(db, fname)
    loaded = load_database(fname, scene_digest=db.scene_digest)
    assert isinstance(loaded, ChannelDatabase)
    assert loaded.equals(db)

    ray = synthesize_database(db, seed=2)
    assert ray.model == "rayleigh"
    save_database(ray, tmp_path / "ray.dmch")
    assert load_database(tmp_path / "ray.dmch").equals(ray)
    with pytest.raises(ValueError, match="ray-traced"):
        synthesize_database(ray, seed=2)

    with pytest.raises(DigestMismatch, match="was built for scene"):
        load_database(fname, scene_digest="0" * 64)

    raw = fname.read_bytes()
    truncated = tmp_path / "truncated.dmch"
    truncated.write_bytes(raw[:-16])
    with pytest.raises(FormatError, match="expected"):
        load_database(truncated)
    foreign = tmp_path / "foreign.dmch"
    foreign.write_bytes(b"XXXX" + raw[4:])
    with pytest.raises(FormatError, match="magic"):
        load_database(foreign)
    short = tmp_path / "short.dmch"
    short.write_bytes(b"DMCH")
    with pytest.raises(FormatError, match="too short"):
        load_database(short)


def test_database_file_mixed_arrays(tmp_path):
    """Databases mixing AP array sizes cannot be written."""
    scene = build_scene(ROOM)
    dep = _small_deployment(scene)
    db = build_database(scene, dep, budget=InteractionBudget(1, 0), n_jobs=1)
    key = (2, db.ue_ids[0])
    link = db.link(*key)
    wide = replace(
        link,
        per_rb=np.ones((db.rb_count, 4, link.per_rb.shape[2]), dtype=complex),
        antennas_per_ap=(4,),
        delay_profile=None,
    )
    mixed = replace(db, entries={**db.entries, key: wide})
    fname = tmp_path / "mixed.dmch"
    with pytest.raises(ValueError, match="share one shape"):
        save_database(mixed, fname)
    assert not fname.exists()


def test_coherence_report():
    """One row per non-empty link and a summary."""
    scene = build_scene(ROOM)
    dep = _small_deployment(scene)
    db = build_database(scene, dep, budget=InteractionBudget(1, 0), n_jobs=1)
    report = coherence_report(db)
    assert list(report.columns) == COHERENCE_COLUMNS
    assert len(report) == len(db.entries)
    assert report["ap_id"].is_monotonic_increasing
    assert np.all(report["coherence_hz"] > 0)
    assert np.all(report["coherence_hz"] <= 52 * 360e3 + 1e-6)

    summary = coherence_summary(report)
    assert summary["links"] == len(report)
    assert 0.0 <= summary["fraction_above_reference"] <= 1.0
    assert np.isnan(coherence_summary(report.iloc[:0])["median_hz"])
