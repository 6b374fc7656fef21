"""Atomic file writes and the dense-array binary format shared by histograms and fields.

Array file layout: magic ``KLARRAY1``, uint32 header length, JSON header
(``shape``, ``dtype`` = "<f8", free-form ``meta``), then the little-endian
values in C order.
"""
from __future__ import annotations

import hashlib
import json
import os
import tempfile
from pathlib import Path

import numpy as np

MAGIC = b"KLARRAY1"


def atomic_write_bytes(path, data: bytes) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path, text: str) -> None:
    atomic_write_bytes(path, text.encode())


def array_bytes(arr: np.ndarray, meta: dict | None = None) -> bytes:
    arr = np.ascontiguousarray(arr, dtype="<f8")
    head = json.dumps({"shape": list(arr.shape), "dtype": "<f8", "meta": meta or {}}, sort_keys=True).encode()
    return MAGIC + np.uint32(len(head)).astype("<u4").tobytes() + head + arr.tobytes()


def save_array(path, arr: np.ndarray, meta: dict | None = None) -> None:
    atomic_write_bytes(path, array_bytes(arr, meta))


def parse_array(raw: bytes):
    if raw[:8] != MAGIC:
        raise ValueError("not a dense-array file (bad magic)")
    n = int(np.frombuffer(raw[8:12], "<u4")[0])
    head = json.loads(raw[12:12 + n])
    shape = tuple(head["shape"])
    count = int(np.prod(shape)) if shape else 1
    arr = np.frombuffer(raw, "<f8", count, 12 + n).reshape(shape).copy()
    return arr, head.get("meta", {})


def load_array(path):
    """(array, meta) from a file written by save_array."""
    with open(path, "rb") as fh:
        return parse_array(fh.read())


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()
