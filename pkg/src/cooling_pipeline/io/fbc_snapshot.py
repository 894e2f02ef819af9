"""
Field snapshot cache: a .npy array plus a JSON sidecar describing it.
"""

import json
import os

import numpy as np

from cooling_pipeline.io.fbc_config import canonical_json, to_jsonable
from cooling_pipeline.io.fbc_output import write_json_atomic
from cooling_pipeline.utils.utils_log import getLogger

log = getLogger("snapshot")


def sidecar_path(path):
    root, _ = os.path.splitext(path)
    return root + ".json"


def save_snapshot(path, psi, metadata):
    """Write psi to ``path`` (.npy) and the metadata next to it."""
    if not path.endswith(".npy"):
        path = path + ".npy"
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    np.save(path, np.asarray(psi))
    meta = dict(to_jsonable(metadata))
    meta["shape"] = list(np.shape(psi))
    write_json_atomic(sidecar_path(path), meta)
    log.info("snapshot saved: %s %s", path, tuple(np.shape(psi)))
    return path


def load_snapshot(path, expected=None):
    """The cached array, or None when missing or when the sidecar differs from ``expected``."""
    if not path.endswith(".npy"):
        path = path + ".npy"
    side = sidecar_path(path)
    if not (os.path.isfile(path) and os.path.isfile(side)):
        return None
    with open(side, encoding="utf-8") as handle:
        meta = json.load(handle)
    meta.pop("shape", None)
    if expected is not None and canonical_json(meta) != canonical_json(to_jsonable(expected)):
        log.info("snapshot %s does not match the requested state; ignoring it", path)
        return None
    return np.load(path)
