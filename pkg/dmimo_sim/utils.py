"""Unit conversions, random streams and other shared helpers.

All decibel conversions of the package go through this module.
Power quantities use ``10 * log10``, amplitude quantities ``20 * log10``,
and powers in dBm convert to milliwatts.
"""

import hashlib
import json
import os
from pathlib import Path

import numpy as np
from ruamel.yaml import YAML

from dmimo_sim.config import FLOOR_DB, THREADS_ENV
from dmimo_sim.exceptions import ConfigError


def db_to_linear(value_db):
    """Convert a power ratio from dB to linear scale."""
    return 10.0 ** (np.asarray(value_db, dtype=float) / 10.0)


def linear_to_db(value):
    """Convert a linear power ratio to dB.

    Zero maps to minus infinity without a warning.
    """
    value = np.asarray(value, dtype=float)
    with np.errstate(divide="ignore"):
        return 10.0 * np.log10(value)


def amplitude_to_db(amplitude):
    """Convert an amplitude ratio (possibly complex) to dB."""
    amplitude = np.abs(np.asarray(amplitude))
    with np.errstate(divide="ignore"):
        return 20.0 * np.log10(amplitude)


def dbm_to_mw(value_dbm):
    """Convert a power from dBm to milliwatts."""
    return db_to_linear(value_dbm)


def mw_to_dbm(value_mw):
    """Convert a power from milliwatts to dBm."""
    return linear_to_db(value_mw)


def floor_db(value, floor=FLOOR_DB):
    """Replace minus infinity (and anything below `floor`) with `floor`.

    Parameters
    ----------
    value : float | array_like
        Values in dB or dBm.
    floor : float
        The sentinel. Defaults to ``dmimo_sim.config.FLOOR_DB``.

    Returns
    -------
    value : float | numpy.ndarray
        Same shape as the input, finite.

    """
    out = np.maximum(np.nan_to_num(np.asarray(value, dtype=float), neginf=floor), floor)
    if out.ndim == 0:
        return float(out)
    return out


def rng_stream(seed, *keys):
    """Get a counter-based random generator for one unit of work.

    The stream depends only on `seed` and `keys`, never on the order in which
    streams are requested, so parallel and sequential runs draw the same
    numbers.

    Parameters
    ----------
    seed : int
        The global seed of a run.
    *keys : int
        Non-negative integers naming the unit of work, for example
        ``(ap_id, ue_id, path_index)``.

    Returns
    -------
    rng : numpy.random.Generator
        A generator driven by a Philox bit generator.

    Examples
    --------
    >>> a = rng_stream(7, 1, 2).standard_normal()
    >>> b = rng_stream(7, 1, 2).standard_normal()
    >>> a == b
    True

    """
    if int(seed) < 0 or any(int(k) < 0 for k in keys):
        raise ValueError("`seed` and `keys` must be non-negative integers.")
    seq = np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in keys))
    return np.random.Generator(np.random.Philox(seq))


def get_worker_count(n_jobs=None):
    """Get the number of workers to use.

    Parameters
    ----------
    n_jobs : int | None
        Explicit worker count. If ``None``, read the ``DMIMO_THREADS``
        environment variable, falling back to the CPU count.

    Returns
    -------
    n_jobs : int
        At least 1.

    """
    if n_jobs is None:
        env = os.environ.get(THREADS_ENV)
        if env is not None and env.strip():
            try:
                n_jobs = int(env)
            except ValueError:
                raise ConfigError(f"{THREADS_ENV} must be an integer, got {env!r}")
        else:
            n_jobs = os.cpu_count() or 1
    return max(int(n_jobs), 1)


def digest_of(obj):
    """Compute a SHA-256 hex digest of a JSON-serializable object.

    Keys are sorted and floats written with ``repr`` precision, so equal
    objects always give equal digests.
    """
    text = json.dumps(obj, sort_keys=True, separators=(",", ":"), default=to_jsonable)
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def to_jsonable(obj):
    """Convert numpy scalars, arrays and paths for JSON output."""
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, Path):
        return obj.as_posix()
    if isinstance(obj, (set, frozenset)):
        return sorted(obj)
    raise TypeError(f"Object of type {type(obj).__name__} is not JSON serializable")


def read_yaml(fname):
    """Read a YAML file into plain Python containers.

    Parameters
    ----------
    fname : str | pathlib.Path
        The file to read.

    Returns
    -------
    data : dict
        The parsed mapping.

    """
    fname = Path(fname)
    if not fname.exists():
        raise ConfigError(f"Configuration file not found: {fname}")
    yaml = YAML(typ="safe", pure=True)
    with open(fname, encoding="utf-8") as fin:
        data = yaml.load(fin)
    if not isinstance(data, dict):
        raise ConfigError(f"{fname} must contain a mapping at the top level.")
    return data
