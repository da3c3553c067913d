"""SVG panels from a trace CSV, byte-stable for identical input."""
from __future__ import annotations

import re
from pathlib import Path

import numpy as np

from .errors import ConfigError


def _mpl():
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    matplotlib.rcParams["svg.hashsalt"] = "mgfdi"
    matplotlib.rcParams["svg.fonttype"] = "none"
    return plt


def _series(cols: dict, pattern: str):
    rx = re.compile(pattern)
    found = sorted(((int(m.group(1)), name) for name in cols if (m := rx.fullmatch(name))))
    return [(idx, cols[name]) for idx, name in found]


def _save(fig, path):
    fig.savefig(path, format="svg", metadata={"Date": None, "Creator": None})


def plot_trace(cols: dict, out_dir) -> list:
    """Write currents, converter voltages, bus voltage and (if any) flag panels."""
    plt = _mpl()
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    t = cols["t"]
    currents = _series(cols, r"i_out_(\d+)")
    voltages = _series(cols, r"v_c_(\d+)")
    if not currents or not voltages or "v_bus" not in cols:
        raise ConfigError("trace lacks current/voltage columns")
    written = []

    def panel(name, series, ylabel, label_fmt):
        fig, ax = plt.subplots(figsize=(8, 3.2))
        for idx, y in series:
            ax.plot(t, y, lw=0.8, label=label_fmt.format(idx))
        ax.set_xlabel("time [s]")
        ax.set_ylabel(ylabel)
        ax.grid(True, lw=0.3)
        if len(series) > 1:
            ax.legend(loc="best", fontsize=7, ncol=min(4, len(series)))
        fig.tight_layout()
        path = out / f"{name}.svg"
        _save(fig, path)
        plt.close(fig)
        written.append(path)

    panel("currents", currents, "output current [A]", "I_o{}")
    panel("voltages", voltages, "converter voltage [V]", "V_{}")
    panel("bus", [(0, cols["v_bus"])], "bus voltage [V]", "V_bus")

    latch = sorted(name for name in cols if name.startswith("latch_"))
    if latch:
        fig, ax = plt.subplots(figsize=(8, 0.35 * len(latch) + 1.2))
        for row, name in enumerate(latch):
            ax.fill_between(t, row, row + 0.8 * np.asarray(cols[name]), step="post", lw=0)
        ax.set_yticks(np.arange(len(latch)) + 0.4)
        ax.set_yticklabels([n[len("latch_"):] for n in latch], fontsize=7)
        ax.set_xlabel("time [s]")
        ax.set_ylabel("latched S_t [0/1]")
        fig.tight_layout()
        path = out / "flags.svg"
        _save(fig, path)
        plt.close(fig)
        written.append(path)
    return written
