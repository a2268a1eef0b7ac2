"""Checkpoint file format.

Layout::

    TFDNET1\\n
    <header byte length as ASCII decimal>\\n
    <UTF-8 JSON header>
    <float64 little-endian tensor data, concatenated in header order>

The header holds ``format_version``, the model ``config``, an ``extra`` dict
(standardization statistics, training metadata) and a ``tensors`` list of
``{"name", "shape", "offset"}`` where offset counts float64 values.
"""

from __future__ import annotations

import json

import numpy as np

from .blocks import ModelConfig, TFDNet

MAGIC = b"TFDNET1\n"
FORMAT_VERSION = 1


class CheckpointError(ValueError):
    pass


def save_checkpoint(path, model: TFDNet, extra: dict | None = None):
    entries, blobs, offset = [], [], 0
    for name, t in model.named_parameters():
        arr = np.ascontiguousarray(t.data, dtype="<f8")
        entries.append({"name": name, "shape": list(arr.shape), "offset": offset})
        blobs.append(arr.tobytes())
        offset += arr.size
    header = json.dumps({
        "format_version": FORMAT_VERSION,
        "config": model.config.to_dict(),
        "extra": extra or {},
        "tensors": entries,
    }, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(b"%d\n" % len(header))
        fh.write(header)
        for blob in blobs:
            fh.write(blob)


def read_checkpoint(path) -> tuple[dict, dict[str, np.ndarray], dict]:
    """Return (config dict, name -> array, extra)."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if not raw.startswith(MAGIC):
        raise CheckpointError(f"{path}: bad magic, not a TFDNET1 checkpoint")
    rest = raw[len(MAGIC):]
    nl = rest.find(b"\n")
    try:
        size = int(rest[:nl])
        header = json.loads(rest[nl + 1:nl + 1 + size].decode("utf-8"))
    except (ValueError, UnicodeDecodeError) as exc:
        raise CheckpointError(f"{path}: corrupted header ({exc})") from None
    if header.get("format_version") != FORMAT_VERSION:
        raise CheckpointError(f"{path}: unsupported format version {header.get('format_version')}")
    body = np.frombuffer(rest[nl + 1 + size:], dtype="<f8")
    state = {}
    for e in header["tensors"]:
        n = int(np.prod(e["shape"])) if e["shape"] else 1
        if e["offset"] + n > body.size:
            raise CheckpointError(f"{path}: truncated tensor data for {e['name']}")
        state[e["name"]] = body[e["offset"]:e["offset"] + n].reshape(e["shape"]).astype(np.float64)
    return header["config"], state, header.get("extra", {})


def load_checkpoint(path) -> tuple[TFDNet, dict]:
    config, state, extra = read_checkpoint(path)
    model = TFDNet(ModelConfig(**config))
    model.load_state_dict(state)
    return model, extra
