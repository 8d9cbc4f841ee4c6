"""Versioned checkpoint container (numpy ``.npz``).

Entries: ``param/<name>`` tensors, ``opt/<key>`` optimizer state and a JSON
``meta`` record holding the format version and the config fingerprint.
"""

from __future__ import annotations

import json

import numpy as np

from ..errors import CheckpointMismatch

FORMAT_VERSION = 1


def save_checkpoint(path, params: dict, fingerprint: str, optimizer_state=None, extra=None) -> None:
    arrays = {f"param/{k}": np.asarray(v) for k, v in params.items()}
    for k, v in (optimizer_state or {}).items():
        arrays[f"opt/{k}"] = np.asarray(v)
    meta = {"format_version": FORMAT_VERSION, "fingerprint": fingerprint, "extra": extra or {}}
    arrays["meta"] = np.frombuffer(json.dumps(meta, sort_keys=True).encode(), dtype=np.uint8)
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)


def load_checkpoint(path, expected_fingerprint=None):
    """Return ``(params, optimizer_state, meta)``; rejects fingerprint mismatches."""
    with np.load(path, allow_pickle=False) as data:
        meta = json.loads(bytes(data["meta"]).decode())
        if meta.get("format_version") != FORMAT_VERSION:
            raise CheckpointMismatch(f"{path}: unsupported checkpoint version {meta.get('format_version')}")
        if expected_fingerprint is not None and meta["fingerprint"] != expected_fingerprint:
            raise CheckpointMismatch(
                f"{path}: checkpoint config {meta['fingerprint'][:12]} does not match "
                f"current config {expected_fingerprint[:12]}"
            )
        params = {k[len("param/"):]: data[k] for k in data.files if k.startswith("param/")}
        opt = {k[len("opt/"):]: data[k] for k in data.files if k.startswith("opt/")}
    return params, opt, meta
