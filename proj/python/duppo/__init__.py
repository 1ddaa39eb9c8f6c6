"""Python bindings for the duppo C++ core."""

import json as _json

from ._duppo import *  # noqa: F401,F403
from ._duppo import __version__, evaluate as _evaluate, insertion_experiment as _insertion


def evaluate(params, queries, **kwargs):
    """Returns (trajectories, summary dict)."""
    trajectories, summary = _evaluate(params, queries, **kwargs)
    return trajectories, _json.loads(summary)


def insertion_experiment(params, queries, responses, **kwargs):
    return _json.loads(_insertion(params, queries, responses, **kwargs))
