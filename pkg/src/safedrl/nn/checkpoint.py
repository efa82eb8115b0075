"""Parameter checkpoints as .npz archives.

Layout: one array per parameter name (shape and row-major float64 values as
stored by numpy), plus ``__format_version__`` (int) and ``__meta__`` (a JSON
string with the network configuration and any caller metadata).
"""
from __future__ import annotations

import json

import numpy as np

from ..errors import ConfigurationError

FORMAT_VERSION = 1


def save_checkpoint(path, params: dict, meta: dict | None = None) -> None:
    arrays = {k: np.ascontiguousarray(v, dtype=np.float64) for k, v in params.items()}
    arrays["__format_version__"] = np.array(FORMAT_VERSION)
    arrays["__meta__"] = np.array(json.dumps(meta or {}, sort_keys=True))
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)


def load_checkpoint(path) -> tuple[dict, dict]:
    with np.load(path, allow_pickle=False) as data:
        if "__format_version__" not in data:
            raise ConfigurationError(f"{path}: not a checkpoint (missing format version)")
        version = int(data["__format_version__"])
        if version != FORMAT_VERSION:
            raise ConfigurationError(f"{path}: unsupported checkpoint version {version}")
        meta = json.loads(str(data["__meta__"]))
        params = {k: data[k].copy() for k in data.files if not k.startswith("__")}
    return params, meta
