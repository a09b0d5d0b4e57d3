"""Shared test utilities: checkpoint caching for trained-model tests.

Training a desk-scale model takes ~25 minutes, so checkpoints are cached on
disk keyed by a hash of the full run configuration.  Re-running the suite
with an existing cache loads instead of retraining.
"""

from __future__ import annotations

import hashlib
import json
import os

from symslice.network import load_params, save_params
from symslice.training import RunConfig, run_config_to_dict, train

CACHE_DIR = os.environ.get(
    "SYMSLICE_CACHE_DIR",
    os.path.join(os.path.dirname(os.path.dirname(os.path.abspath(__file__))), "runs"),
)


def rc_hash(rc: RunConfig) -> str:
    blob = json.dumps(run_config_to_dict(rc), sort_keys=True)
    return hashlib.sha256(blob.encode()).hexdigest()[:12]


def ckpt_path(rc: RunConfig) -> str:
    return os.path.join(CACHE_DIR, f"ckpt_{rc_hash(rc)}.symw")


def cached_train(rc: RunConfig):
    """Train (or load a cached checkpoint for) the given run config."""
    path = ckpt_path(rc)
    if os.path.exists(path):
        return load_params(path, cfg=rc.model), path
    os.makedirs(CACHE_DIR, exist_ok=True)
    params, _ = train(rc, log_path=path + ".log.csv")
    save_params(params, path, cfg=rc.model)
    return params, path
