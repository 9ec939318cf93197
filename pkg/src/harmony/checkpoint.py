"""Checkpoint archive: JSON header plus named little-endian tensor payloads."""

from __future__ import annotations

import json
import zipfile
from pathlib import Path
from typing import Any

import numpy as np

FORMAT_VERSION = 1
_DTYPES = {"f4": "<f4", "f8": "<f8", "i8": "<i8", "u1": "<u1"}


class CheckpointError(ValueError):
    """Raised for version mismatches or truncated/corrupt archives."""


def _dtype_code(arr: np.ndarray) -> str:
    for code, np_dtype in _DTYPES.items():
        if arr.dtype == np.dtype(np_dtype):
            return code
    raise CheckpointError(f"unsupported tensor dtype {arr.dtype}")


def save_checkpoint(path: str | Path, header: dict[str, Any],
                    tensors: dict[str, np.ndarray]) -> None:
    meta = {
        "format_version": FORMAT_VERSION,
        "header": header,
        "tensors": {
            name: {"shape": list(arr.shape), "dtype": _dtype_code(np.ascontiguousarray(arr))}
            for name, arr in tensors.items()
        },
    }
    with zipfile.ZipFile(path, "w", compression=zipfile.ZIP_STORED) as zf:
        zf.writestr("header.json", json.dumps(meta))
        for name, arr in tensors.items():
            arr = np.ascontiguousarray(arr)
            code = _dtype_code(arr)
            zf.writestr(f"tensors/{name}", arr.astype(_DTYPES[code], copy=False).tobytes())


def load_checkpoint(path: str | Path) -> tuple[dict[str, Any], dict[str, np.ndarray]]:
    try:
        with zipfile.ZipFile(path, "r") as zf:
            try:
                meta = json.loads(zf.read("header.json"))
            except (KeyError, json.JSONDecodeError) as exc:
                raise CheckpointError(f"corrupt checkpoint header in {path}: {exc}") from exc
            if meta.get("format_version") != FORMAT_VERSION:
                raise CheckpointError(
                    f"checkpoint format version mismatch in {path}: "
                    f"{meta.get('format_version')} != {FORMAT_VERSION}")
            tensors: dict[str, np.ndarray] = {}
            for name, info in meta["tensors"].items():
                raw = zf.read(f"tensors/{name}")
                dtype = np.dtype(_DTYPES[info["dtype"]])
                expected = int(np.prod(info["shape"], dtype=np.int64)) * dtype.itemsize
                if len(raw) != expected:
                    raise CheckpointError(f"truncated tensor {name!r} in {path}")
                tensors[name] = np.frombuffer(raw, dtype=dtype).reshape(info["shape"]).copy()
            return meta["header"], tensors
    except zipfile.BadZipFile as exc:
        raise CheckpointError(f"not a checkpoint archive: {path}") from exc
