"""Python bindings for the species-aware MoE genomic profile model."""

import json as _json

from . import _core
from ._core import (
    CheckpointError,
    ConfigError,
    DomainError,
    IoError,
    ShapeError,
    export_routing,
    generate_data,
    gradcheck,
    lr_at,
    mcc_binary,
    mcc_multiclass,
    mutual_information,
    pearson,
    poisson_nll,
    topk_softmax,
)


def load_config(path):
    """Parsed and validated run config as a dict."""
    return _json.loads(_core.load_config(str(path)))


def train(config, data, checkpoint, alpha=None, seed=None, steps=None):
    """Train from scratch; returns the run summary dict."""
    return _json.loads(_core.train(str(config), str(data), str(checkpoint), alpha, seed, steps))


def evaluate(checkpoint, data, baseline=False):
    """Per-track Pearson report as a dict."""
    return _json.loads(_core.evaluate(str(checkpoint), str(data), baseline))


__all__ = [
    "CheckpointError",
    "ConfigError",
    "DomainError",
    "IoError",
    "ShapeError",
    "evaluate",
    "export_routing",
    "generate_data",
    "gradcheck",
    "load_config",
    "lr_at",
    "mcc_binary",
    "mcc_multiclass",
    "mutual_information",
    "pearson",
    "poisson_nll",
    "topk_softmax",
    "train",
]
