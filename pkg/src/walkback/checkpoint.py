"""Checkpoint container.

A checkpoint is an uncompressed ``.npz`` archive.  Named float arrays hold
parameters and optimizer moments; the entry ``__meta__`` holds a UTF-8 JSON
document with ``format`` (always ``"walkback-checkpoint"``), ``version``
(currently 1) and free-form metadata (layer shapes, operator settings,
prior moments, RNG state, training progress).
"""
import io
import json
import os
import tempfile

import numpy as np

from .errors import ConfigError

FORMAT = "walkback-checkpoint"
VERSION = 1


def atomic_write_bytes(path, data):
    path = os.fspath(path)
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path, text):
    atomic_write_bytes(path, text.encode("utf-8"))


def write_checkpoint(path, arrays, meta):
    doc = {"format": FORMAT, "version": VERSION, "meta": meta}
    blob = np.frombuffer(json.dumps(doc, sort_keys=True).encode("utf-8"), dtype=np.uint8)
    buf = io.BytesIO()
    np.savez(buf, __meta__=blob, **{k: np.asarray(v) for k, v in arrays.items()})
    atomic_write_bytes(path, buf.getvalue())


def read_checkpoint(path):
    """Return ``(arrays, meta)``; raises :class:`ConfigError` on a foreign file."""
    try:
        with np.load(path, allow_pickle=False) as npz:
            arrays = {k: npz[k] for k in npz.files}
    except (OSError, ValueError) as exc:
        raise ConfigError(f"cannot read checkpoint {path}: {exc}") from exc
    if "__meta__" not in arrays:
        raise ConfigError(f"{path} is not a walkback checkpoint")
    doc = json.loads(arrays.pop("__meta__").tobytes().decode("utf-8"))
    if doc.get("format") != FORMAT:
        raise ConfigError(f"{path} is not a walkback checkpoint")
    if doc.get("version") != VERSION:
        raise ConfigError(f"unsupported checkpoint version {doc.get('version')}")
    return arrays, doc["meta"]


def rng_state(rng):
    return rng.bit_generator.state


def rng_from_state(state):
    bitgen = getattr(np.random, state["bit_generator"])()
    bitgen.state = state
    return np.random.Generator(bitgen)
