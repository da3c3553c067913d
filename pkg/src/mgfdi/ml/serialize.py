"""Versioned binary model files and a CSV dump for inspection.

Layout (all integers unsigned little-endian, all values float64 LE)::

    8 bytes   magic b"MGFDIML1"
    u32       format version
    u32       model kind (1 = LSTM, 2 = logistic regression, 3 = bundle metadata)
    u32       number of arrays
    per array:
      u16 name length, name (utf-8)
      u8 ndim, u32 * ndim shape
      float64 * prod(shape) data, C order
"""
from __future__ import annotations

import csv
import io
import struct
from pathlib import Path

import numpy as np

from ..errors import ConfigError
from .logreg import LogRegParams
from .lstm import LstmLayer, LstmParams

MAGIC = b"MGFDIML1"
VERSION = 1
KIND_LSTM = 1
KIND_LOGREG = 2
KIND_ARRAYS = 3


class ModelFormatError(ConfigError):
    """File is not a readable model file."""


def pack_arrays(kind: int, arrays: dict) -> bytes:
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<III", VERSION, kind, len(arrays)))
    for name, arr in arrays.items():
        a = np.ascontiguousarray(np.asarray(arr, dtype="<f8"))
        raw = name.encode("utf-8")
        buf.write(struct.pack("<H", len(raw)))
        buf.write(raw)
        buf.write(struct.pack("<B", a.ndim))
        buf.write(struct.pack(f"<{a.ndim}I", *a.shape))
        buf.write(a.tobytes())
    return buf.getvalue()


def unpack_arrays(data: bytes, expect_kind: int | None = None):
    """Inverse of :func:`pack_arrays`; returns ``(kind, {name: array})``."""
    if len(data) < 20 or data[:8] != MAGIC:
        raise ModelFormatError("missing MGFDIML1 header")
    version, kind, count = struct.unpack_from("<III", data, 8)
    if version != VERSION:
        raise ModelFormatError(f"unsupported model format version {version}")
    if expect_kind is not None and kind != expect_kind:
        raise ModelFormatError(f"model kind {kind}, expected {expect_kind}")
    pos = 20
    out = {}
    try:
        for _ in range(count):
            (n,) = struct.unpack_from("<H", data, pos)
            pos += 2
            name = data[pos:pos + n].decode("utf-8")
            pos += n
            (ndim,) = struct.unpack_from("<B", data, pos)
            pos += 1
            shape = struct.unpack_from(f"<{ndim}I", data, pos)
            pos += 4 * ndim
            size = int(np.prod(shape)) if ndim else 1
            if pos + 8 * size > len(data):
                raise ModelFormatError(f"array {name!r} truncated")
            out[name] = np.frombuffer(data, dtype="<f8", count=size, offset=pos).reshape(shape).astype(float)
            pos += 8 * size
    except struct.error as exc:
        raise ModelFormatError(f"truncated model file: {exc}") from None
    if pos != len(data):
        raise ModelFormatError("trailing bytes after last array")
    return kind, out


def lstm_to_arrays(params: LstmParams) -> dict:
    d = {}
    for n, layer in enumerate(params.layers):
        d[f"layer{n}.w"] = layer.w
        d[f"layer{n}.b"] = layer.b
    d["w_y"] = params.w_y
    d["b_y"] = params.b_y
    return d


def lstm_from_arrays(d: dict) -> LstmParams:
    layers = []
    n = 0
    while f"layer{n}.w" in d:
        layers.append(LstmLayer(d[f"layer{n}.w"].copy(), d[f"layer{n}.b"].copy()))
        n += 1
    if not layers:
        raise ModelFormatError("no LSTM layers in file")
    return LstmParams(layers, d["w_y"].copy(), d["b_y"].copy())


def logreg_to_arrays(params: LogRegParams) -> dict:
    return {"w": params.w, "b": np.array(params.b), "threshold": np.array(params.threshold)}


def logreg_from_arrays(d: dict) -> LogRegParams:
    return LogRegParams(d["w"].copy(), float(d["b"].item()), float(d["threshold"].item()))


def save_lstm(path, params: LstmParams, extra: dict | None = None):
    arrays = lstm_to_arrays(params)
    arrays.update(extra or {})
    Path(path).write_bytes(pack_arrays(KIND_LSTM, arrays))


def load_lstm(path):
    """Returns ``(params, extra arrays)``."""
    _, d = unpack_arrays(Path(path).read_bytes(), KIND_LSTM)
    params = lstm_from_arrays(d)
    extra = {k: v for k, v in d.items() if not (k.startswith("layer") or k in ("w_y", "b_y"))}
    return params, extra


def save_logreg(path, params: LogRegParams, extra: dict | None = None):
    arrays = logreg_to_arrays(params)
    arrays.update(extra or {})
    Path(path).write_bytes(pack_arrays(KIND_LOGREG, arrays))


def load_logreg(path):
    _, d = unpack_arrays(Path(path).read_bytes(), KIND_LOGREG)
    extra = {k: v for k, v in d.items() if k not in ("w", "b", "threshold")}
    return logreg_from_arrays(d), extra


def arrays_to_csv(arrays: dict) -> str:
    """One row per scalar: ``name,index,value`` with 17 significant digits."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["name", "index", "value"])
    for name, arr in arrays.items():
        a = np.asarray(arr, dtype=float)
        for idx in np.ndindex(a.shape):
            w.writerow([name, ":".join(map(str, idx)), f"{a[idx]:.17g}"])
    return buf.getvalue()


def export_csv(model_path, csv_path):
    _, d = unpack_arrays(Path(model_path).read_bytes())
    Path(csv_path).write_text(arrays_to_csv(d))
