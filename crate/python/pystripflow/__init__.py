"""Characteristic solver for quasilinear transport on a strip."""

import json

from . import _native

__version__ = _native.__version__


def load_scenario(path):
    """Validate a scenario file and return its canonical TOML text."""
    return _native.load_scenario(str(path))


def run(path, out_dir=None):
    """Solve a scenario, run its checks and return the report as a dict."""
    return json.loads(_native.run(str(path), None if out_dir is None else str(out_dir)))


def trace(path, t0, x0):
    """Backward characteristics through (t0, x0) for every equation."""
    return json.loads(_native.trace(str(path), float(t0), [float(v) for v in x0]))


def oracle_compare(path, levels=3):
    """Upwind comparison and its sign-flipped negative control."""
    return json.loads(_native.oracle_compare(str(path), int(levels)))


def verify(suite, seed=1, trials=None):
    """Run a randomized invariant suite."""
    return json.loads(_native.verify(suite, int(seed), trials))


def entry_time_constant(b, t0, x0, t1=1.0):
    """Entry time and point for a constant velocity on the unit strip."""
    return _native.entry_time_constant([float(v) for v in b], float(t0), [float(v) for v in x0], float(t1))
