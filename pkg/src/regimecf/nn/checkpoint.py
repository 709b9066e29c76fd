"""Versioned JSON checkpoints for model and optimizer state.

A checkpoint records every tensor, the optimizer moments, the seed, and a
config hash; loading rejects architecture-dimension mismatches. Writes are
atomic (temp file then rename).
"""

from __future__ import annotations

import json
import os
import tempfile

import numpy as np

from ..errors import ConfigError

FORMAT_VERSION = 1


def save_checkpoint(path, models: dict, optimizers=None, seed=None,
                    config_hash=None, extra=None):
    """models: name -> object exposing params(); optimizers: name -> Adam."""
    blob = {
        "format_version": FORMAT_VERSION,
        "seed": seed,
        "config_hash": config_hash,
        "models": {},
        "optimizers": {},
        "extra": extra or {},
    }
    for name, model in models.items():
        blob["models"][name] = {
            "params": {k: t.data.tolist() for k, t in model.params().items()},
            "shapes": {k: list(t.data.shape)
                       for k, t in model.params().items()},
        }
    for name, opt in (optimizers or {}).items():
        blob["optimizers"][name] = opt.state_dict()
    _atomic_write_json(path, blob)


def load_checkpoint(path, models: dict, optimizers=None):
    """Restore tensors in place; raises ConfigError on shape mismatch."""
    with open(path, encoding="utf-8") as fh:
        blob = json.load(fh)
    if blob.get("format_version") != FORMAT_VERSION:
        raise ConfigError(
            f"unsupported checkpoint version {blob.get('format_version')!r}")
    for name, model in models.items():
        if name not in blob["models"]:
            raise ConfigError(f"checkpoint lacks model {name!r}")
        stored = blob["models"][name]
        params = model.params()
        if set(stored["params"]) != set(params):
            raise ConfigError(
                f"checkpoint parameter set mismatch for model {name!r}")
        for key, t in params.items():
            arr = np.array(stored["params"][key], dtype=float)
            if list(arr.shape) != list(t.data.shape):
                raise ConfigError(
                    f"dimension mismatch for {name}.{key}: checkpoint "
                    f"{list(arr.shape)} vs model {list(t.data.shape)}")
            t.data = arr
    for name, opt in (optimizers or {}).items():
        if name in blob.get("optimizers", {}):
            opt.load_state_dict(blob["optimizers"][name])
    return blob


def _atomic_write_json(path, blob):
    directory = os.path.dirname(os.path.abspath(path)) or "."
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            json.dump(blob, fh, sort_keys=True)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
