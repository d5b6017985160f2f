"""On-disk formats shared by every pipeline stage.

Checkpoint container (``.ckpt``)::

    TRIGMARK-CKPT 1\\n
    <one line of JSON: {"meta": {...}, "arrays": [{"name", "shape", "offset", "count"}, ...]}>\\n
    <raw little-endian float64 payload, arrays concatenated in header order>

Offsets and counts are in float64 elements. The header is written with sorted
keys and no timestamps, so identical parameters always give identical bytes.

Embedding files are text, one record per line: ``id<TAB>v1,v2,...,vd``.
Images are binary PPM (P6, maxval 255); masks are binary PGM (P5, 0/255).
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

MAGIC = b"TRIGMARK-CKPT 1\n"


class FormatError(ValueError):
    """Raised when an artifact file is malformed."""


def save_checkpoint(path, arrays, meta):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    entries = []
    offset = 0
    for name, arr in arrays.items():
        arr = np.asarray(arr, dtype=np.float64)
        entries.append({"name": name, "shape": list(arr.shape), "offset": offset, "count": int(arr.size)})
        offset += arr.size
    header = json.dumps({"meta": meta, "arrays": entries}, sort_keys=True, separators=(",", ":"))
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(header.encode("utf-8") + b"\n")
        for arr in arrays.values():
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def load_checkpoint(path):
    """Return ``(arrays, meta)`` from a checkpoint written by :func:`save_checkpoint`."""
    with open(path, "rb") as fh:
        if fh.readline() != MAGIC:
            raise FormatError(f"{path}: not a checkpoint file")
        try:
            header = json.loads(fh.readline().decode("utf-8"))
        except json.JSONDecodeError as exc:
            raise FormatError(f"{path}: bad checkpoint header") from exc
        payload = np.frombuffer(fh.read(), dtype="<f8")
    arrays = {}
    for entry in header["arrays"]:
        start, count = entry["offset"], entry["count"]
        if start + count > payload.size:
            raise FormatError(f"{path}: truncated payload for {entry['name']}")
        arrays[entry["name"]] = payload[start:start + count].reshape(entry["shape"]).astype(np.float64)
    return arrays, header["meta"]


def to_uint8(pixels):
    return np.clip(np.rint(np.asarray(pixels) * 255.0), 0, 255).astype(np.uint8)


def write_ppm(path, pixels):
    """Write an H x W x 3 array in [0, 1] as 8-bit binary PPM."""
    data = to_uint8(pixels)
    if data.ndim != 3 or data.shape[2] != 3:
        raise ValueError("PPM needs an H x W x 3 array")
    h, w, _ = data.shape
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        fh.write(data.tobytes())


def write_pgm(path, values):
    data = to_uint8(values)
    h, w = data.shape
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(data.tobytes())


def _read_netpbm(path, magic, channels):
    raw = Path(path).read_bytes()
    fields = []
    pos = 0
    while len(fields) < 4:
        while pos < len(raw) and raw[pos:pos + 1].isspace():
            pos += 1
        if raw[pos:pos + 1] == b"#":
            while raw[pos:pos + 1] not in (b"\n", b""):
                pos += 1
            continue
        start = pos
        while pos < len(raw) and not raw[pos:pos + 1].isspace():
            pos += 1
        fields.append(raw[start:pos])
    if fields[0] != magic:
        raise FormatError(f"{path}: expected {magic.decode()} file")
    w, h, maxval = (int(f) for f in fields[1:])
    if maxval != 255:
        raise FormatError(f"{path}: only maxval 255 is supported")
    body = raw[pos + 1:]
    expected = w * h * channels
    if len(body) < expected:
        raise FormatError(f"{path}: truncated pixel data")
    arr = np.frombuffer(body[:expected], dtype=np.uint8).astype(np.float64) / 255.0
    return arr.reshape((h, w, channels) if channels > 1 else (h, w))


def read_ppm(path):
    return _read_netpbm(path, b"P6", 3)


def read_pgm(path):
    return _read_netpbm(path, b"P5", 1)


def write_embeddings(path, rows):
    """Write ``(id, vector)`` pairs in the tab/comma embedding format."""
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        for sample_id, vec in rows:
            if "\t" in sample_id or "\n" in sample_id:
                raise ValueError(f"id {sample_id!r} contains a tab or newline")
            fh.write(sample_id + "\t" + ",".join(repr(float(v)) for v in vec) + "\n")


def read_embeddings(path):
    """Parse an embedding file into ``{id: vector}``; all rows must share one dimension."""
    table = {}
    dim = None
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if not line.strip():
                continue
            try:
                sample_id, values = line.split("\t")
                vec = np.array([float(v) for v in values.split(",")])
            except ValueError as exc:
                raise FormatError(f"{path}:{lineno}: expected 'id<TAB>comma-separated floats'") from exc
            if dim is None:
                dim = vec.size
            elif vec.size != dim:
                raise FormatError(f"{path}:{lineno}: dimension {vec.size} != {dim}")
            if sample_id in table:
                raise FormatError(f"{path}:{lineno}: duplicate id {sample_id!r}")
            table[sample_id] = vec
    if not table:
        raise FormatError(f"{path}: no embeddings")
    return table
