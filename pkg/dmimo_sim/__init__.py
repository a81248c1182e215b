"""Simulate distributed MIMO coverage and capacity in indoor factories."""

from dmimo_sim.chanmodel import (
    ChannelDatabase,
    LinkChannel,
    build_database,
    load_database,
    save_database,
    synthesize_database,
)
from dmimo_sim.harness import (
    ScenarioConfig,
    export_results,
    read_config,
    run_scenario,
    sweep_cooperation,
)
from dmimo_sim.metrics import aggregate, detection_stats, rsrp, select_aps
from dmimo_sim.mimo import dl_capacity, ul_zf_capacity, waterfill
from dmimo_sim.scene import build_scene, read_scene
from dmimo_sim.tracer import calibrate_xpr, trace_link
from dmimo_sim.viz import plot_capacity_map, plot_distributions

__all__ = (
    "ChannelDatabase",
    "LinkChannel",
    "ScenarioConfig",
    "aggregate",
    "build_database",
    "build_scene",
    "calibrate_xpr",
    "detection_stats",
    "dl_capacity",
    "export_results",
    "load_database",
    "plot_capacity_map",
    "plot_distributions",
    "read_config",
    "read_scene",
    "rsrp",
    "run_scenario",
    "save_database",
    "select_aps",
    "sweep_cooperation",
    "synthesize_database",
    "trace_link",
    "ul_zf_capacity",
    "waterfill",
)

try:
    from importlib.metadata import version

    __version__ = version("dmimo_sim")
except Exception:  # pragma: no cover
    __version__ = "0.0.0"
