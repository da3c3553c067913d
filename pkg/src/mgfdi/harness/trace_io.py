"""Trace CSV (fixed column order, 9 significant digits) and metrics JSON."""
from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

from ..errors import ConfigError

_PER_CONVERTER = ("i_l", "i_out", "v_c", "i_meas", "v_meas", "i_use", "v_use", "i_est", "v_est",
                  "duty", "v_ref", "i_avg")
_PER_LINK = (("comm_raw", "comm_raw"), ("comm_use", "comm_use"), ("comm_include", "comm_inc"))
_PER_CHANNEL = (("s_r", "sr"), ("s_l", "sl"), ("s_t", "st"), ("latched", "latch"), ("labels", "label"))


def channel_names(senders_row) -> list:
    return ["c", "v"] + [f"l{int(s) + 1}" for s in senders_row]


def trace_columns(trace) -> list:
    cols = ["t", "v_bus"]
    k, deg = trace.k, trace.degree
    for j in range(k):
        cols += [f"{name}_{j + 1}" for name in _PER_CONVERTER]
        for _, short in _PER_LINK:
            cols += [f"{short}_{j + 1}_from_{int(s) + 1}" for s in trace.senders[j]]
        for _, short in _PER_CHANNEL:
            cols += [f"{short}_{j + 1}_{ch}" for ch in channel_names(trace.senders[j])]
    return cols


def trace_matrix(trace) -> np.ndarray:
    n, k = len(trace), trace.k
    blocks = [trace.t[:, None], trace.v_bus[:, None]]
    for j in range(k):
        blocks += [getattr(trace, name)[:, j, None] for name in _PER_CONVERTER]
        for attr, _ in _PER_LINK:
            blocks.append(getattr(trace, attr)[:, j, :].astype(float))
        for attr, _ in _PER_CHANNEL:
            blocks.append(getattr(trace, attr)[:, j, :].astype(float))
    return np.concatenate(blocks, axis=1).reshape(n, -1)


def write_trace_csv(trace, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="\n") as fh:
        fh.write(",".join(trace_columns(trace)) + "\n")
        np.savetxt(fh, trace_matrix(trace), fmt="%.9g", delimiter=",")


def read_trace_csv(path) -> dict:
    """Column name -> float array. Raises ConfigError on empty or ragged files."""
    path = Path(path)
    try:
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            try:
                header = next(reader)
            except StopIteration:
                raise ConfigError(f"trace {path} is empty") from None
            rows = list(reader)
    except FileNotFoundError:
        raise ConfigError(f"trace not found: {path}") from None
    except UnicodeDecodeError:
        raise ConfigError(f"trace {path} is not text") from None
    if not rows:
        raise ConfigError(f"trace {path} has no samples")
    if "t" not in header or len(set(header)) != len(header):
        raise ConfigError(f"trace {path} has a malformed header")
    try:
        data = np.array(rows, dtype=float)
    except ValueError:
        raise ConfigError(f"trace {path} has malformed rows") from None
    if data.ndim != 2 or data.shape[1] != len(header):
        raise ConfigError(f"trace {path} has ragged rows")
    return {name: data[:, i] for i, name in enumerate(header)}


def write_metrics_json(metrics, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(metrics.to_json())


def trace_from_columns(cols: dict):
    """Rebuild a :class:`Trace` from CSV columns (inverse of :func:`write_trace_csv`)."""
    from .sim import Trace

    k = 0
    while f"i_out_{k + 1}" in cols:
        k += 1
    if k == 0 or "t" not in cols or "v_bus" not in cols:
        raise ConfigError("trace lacks per-converter columns")
    senders = []
    for j in range(k):
        prefix = f"comm_raw_{j + 1}_from_"
        senders.append([int(name[len(prefix):]) - 1 for name in cols if name.startswith(prefix)])
    deg = len(senders[0])
    if any(len(s) != deg for s in senders):
        raise ConfigError("trace has converters with different link counts")
    senders = np.array(senders, dtype=int).reshape(k, deg)
    n = cols["t"].size

    def col(name):
        if name not in cols:
            raise ConfigError(f"trace lacks column {name}")
        return cols[name]

    kw = {"t": col("t"), "senders": senders, "v_bus": col("v_bus")}
    for name in _PER_CONVERTER:
        kw[name] = np.stack([col(f"{name}_{j + 1}") for j in range(k)], axis=1)
    for attr, short in _PER_LINK:
        arr = np.stack([np.stack([col(f"{short}_{j + 1}_from_{s + 1}") for s in senders[j]], axis=1)
                        if deg else np.zeros((n, 0)) for j in range(k)], axis=1)
        kw[attr] = arr.astype(bool) if attr == "comm_include" else arr
    for attr, short in _PER_CHANNEL:
        kw[attr] = np.stack([np.stack([col(f"{short}_{j + 1}_{ch}") for ch in channel_names(senders[j])],
                                      axis=1) for j in range(k)], axis=1).astype(bool)
    return Trace(**kw)
