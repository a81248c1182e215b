"""Command line interface of dmimo_sim.

Exit codes: 0 on success, 1 for configuration and usage errors, 2 for
errors raised while running.
"""

import argparse
import logging
import sys
from pathlib import Path

import pandas as pd
from numpy.linalg import LinAlgError

from dmimo_sim.chanmodel import (
    coherence_report,
    coherence_summary,
    load_database,
    save_database,
    synthesize_database,
)
from dmimo_sim.config import PERCENTILES
from dmimo_sim.exceptions import ConfigError
from dmimo_sim.harness import (
    CHANNEL_MODELS,
    LINKS,
    export_results,
    load_or_build_database,
    read_config,
    report,
    run_scenario,
    sweep_cooperation,
)
from dmimo_sim.mimo import PRECODERS
from dmimo_sim.scene import read_scene, scene_digest

logger = logging.getLogger(__name__)


class _Parser(argparse.ArgumentParser):
    """Argument parser that reports usage errors as ConfigError."""

    def error(self, message):
        self.print_usage(sys.stderr)
        raise ConfigError(f"{self.prog}: {message}")


def _int_list(text):
    try:
        return [int(v) for v in text.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(
            f"expected comma-separated integers, got {text!r}"
        ) from None


def _pair(text):
    values = _int_list(text)
    if len(values) != 2:
        raise argparse.ArgumentTypeError(f"expected a,b, got {text!r}")
    return tuple(values)


def _scenario_args(parser):
    parser.add_argument("--config", type=Path, required=True, help="Scenario file.")
    parser.add_argument("--seed", type=int, help="Global seed.")
    parser.add_argument("--deployment", help="Name of the candidate AP set.")
    parser.add_argument(
        "--tx-model", choices=["per-ap", "network"], help="Transmit power model."
    )
    parser.add_argument("--channel", choices=CHANNEL_MODELS, help="Channel model.")
    parser.add_argument("--link", choices=LINKS, help="Link of the capacity map.")
    parser.add_argument("--precoder", choices=PRECODERS, help="Downlink precoder.")
    parser.add_argument("--layers", type=int, help="Number of layers.")
    parser.add_argument(
        "--coop", type=_pair, metavar="A,B", help="b APs active among a candidates."
    )
    parser.add_argument("--cache", type=Path, help="Channel cache directory.")


def _load_config(args):
    return read_config(
        args.config,
        seed=args.seed,
        deployment=args.deployment,
        tx_model=args.tx_model,
        channel=args.channel,
        link=args.link,
        precoder=args.precoder,
        layers=args.layers,
        coop=args.coop,
        cache_dir=args.cache,
        n_jobs=args.threads,
    )


def _cmd_scene_validate(args):
    scene, deployment = read_scene(args.scene)
    print(f"scene:      {scene.name}")
    print(f"bounds:     {scene.lower} -> {scene.upper}")
    print(f"obstacles:  {len(scene.obstacles)}")
    print(f"facets:     {len(scene.facets)}")
    print(f"edges:      {len(scene.edges)}")
    print(f"APs:        {list(deployment.ap_ids)}")
    print(f"UEs:        {len(deployment.ues)}")
    print(f"RBs:        {scene.rb_count} x {scene.rb_grid.rb_bandwidth:g} Hz")
    print(f"digest:     {scene.digest}")


def _cmd_trace(args):
    cfg = _load_config(args)
    scene, deployment = read_scene(cfg.scene_file)
    db = load_or_build_database(scene, deployment, cfg, progress=args.progress)
    save_database(db, args.out)
    if args.coherence is not None:
        table = coherence_report(db)
        table.to_csv(args.coherence, index=False)
        summary = coherence_summary(table)
        logger.info(
            "Coherence bandwidth over %d links: p10 %.0f Hz, median %.0f Hz, "
            "%.1f%% above reference",
            summary["links"], summary["p10_hz"], summary["median_hz"],
            100 * summary["fraction_above_reference"],
        )


def _cmd_synth(args):
    db = load_database(args.db)
    seed = args.seed
    if seed is None and args.config is not None:
        seed = read_config(args.config).seed
    if seed is None:
        seed = db.seed
    save_database(synthesize_database(db, seed), args.out)


def _cmd_eval(args):
    cfg = _load_config(args)
    db = None
    if args.db is not None:
        scene, deployment = read_scene(cfg.scene_file)
        db = load_database(args.db, scene_digest=scene_digest(scene, deployment))
    else:
        scene, deployment = None, None
    result = run_scenario(cfg, scene, deployment, db, progress=args.progress)
    for fname in export_results(result, args.out):
        print(fname)


def _cmd_report(args):
    tables = report(args.metrics)
    rows = []
    for name, table in tables.items():
        row = {"metric": name, "median": table.median}
        row.update({f"p{p}": v for p, v in table.percentiles.items()})
        rows.append(row)
    columns = ["metric", "median"] + [f"p{p}" for p in PERCENTILES]
    frame = pd.DataFrame(rows, columns=columns)
    if args.out is None:
        print(frame.to_string(index=False))
    else:
        frame.to_csv(args.out, index=False)


def _cmd_sweep(args):
    cfg = _load_config(args)
    table = sweep_cooperation(
        cfg, args.b, channels=args.channels, progress=args.progress
    )
    if args.out is None:
        print(table.to_string(index=False))
    else:
        table.to_csv(args.out, index=False)


def _build_parser():
    parser = _Parser(prog="dmimo", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="Debug output.")
    parser.add_argument("-q", "--quiet", action="store_true", help="Warnings only.")
    parser.add_argument("--threads", type=int, help="Worker threads.")
    parser.add_argument("--progress", action="store_true", help="Show progress bars.")
    commands = parser.add_subparsers(dest="command", required=True)

    scene = commands.add_parser("scene", help="Scene tools.")
    scene_commands = scene.add_subparsers(dest="scene_command", required=True)
    validate = scene_commands.add_parser("validate", help="Check a scene file.")
    validate.add_argument("scene", type=Path)
    validate.set_defaults(func=_cmd_scene_validate)

    trace = commands.add_parser("trace", help="Build the ray-traced channel DB.")
    _scenario_args(trace)
    trace.add_argument("--out", type=Path, required=True, help="Database file.")
    trace.add_argument("--coherence", type=Path, help="Coherence report CSV.")
    trace.set_defaults(func=_cmd_trace)

    synth = commands.add_parser("synth", help="Rayleigh database from an RT one.")
    synth.add_argument("--db", type=Path, required=True, help="RT database file.")
    synth.add_argument(
        "--seed", type=int, help="Global seed, default from --config or the database."
    )
    synth.add_argument("--config", type=Path, help="Scenario file giving the seed.")
    synth.add_argument("--out", type=Path, required=True, help="Database file.")
    synth.set_defaults(func=_cmd_synth)

    evaluate = commands.add_parser("eval", help="Run a scenario.")
    _scenario_args(evaluate)
    evaluate.add_argument("--db", type=Path, help="Pre-built RT database file.")
    evaluate.add_argument("--out", type=Path, required=True, help="Output directory.")
    evaluate.set_defaults(func=_cmd_eval)

    rep = commands.add_parser("report", help="Summarize a metrics table.")
    rep.add_argument("metrics", type=Path, help="metrics.csv of an eval run.")
    rep.add_argument("--out", type=Path, help="CSV file instead of standard output.")
    rep.set_defaults(func=_cmd_report)

    sweep = commands.add_parser("sweep", help="Median capacity over cooperation.")
    _scenario_args(sweep)
    sweep.add_argument(
        "--b", type=_int_list, required=True, metavar="B1,B2,...",
        help="Cooperation levels.",
    )
    sweep.add_argument(
        "--channels", type=lambda s: s.split(","), default=list(CHANNEL_MODELS),
        help="Comma-separated channel models.",
    )
    sweep.add_argument("--out", type=Path, help="CSV file instead of standard output.")
    sweep.set_defaults(func=_cmd_sweep)
    return parser


def main(argv=None):
    """Run the command line interface.

    Parameters
    ----------
    argv : list of str | None
        Arguments without the program name. Defaults to ``sys.argv[1:]``.

    Returns
    -------
    code : int
        The exit code.

    """
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except ConfigError as err:
        print(f"error: {err}", file=sys.stderr)
        return 1

    level = logging.INFO
    if args.verbose:
        level = logging.DEBUG
    elif args.quiet:
        level = logging.WARNING
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")

    try:
        args.func(args)
    except ConfigError as err:
        print(f"error: {err}", file=sys.stderr)
        return 1
    except (ValueError, KeyError, LinAlgError, RuntimeError, OSError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 2
    return 0
