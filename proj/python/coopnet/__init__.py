"""Depth-adaptive residual networks trained by cooperative distillation."""

import json

from ._coopnet import *  # noqa: F401,F403
from ._coopnet import __doc__  # noqa: F401
from . import _coopnet


def train_config(config: dict, metrics_path: str = "", checkpoint_path: str = ""):
    """Train from a config dict; returns the per-epoch records as dicts."""
    records = _coopnet.train(json.dumps(config), metrics_path, checkpoint_path)
    return [json.loads(r) for r in records]
