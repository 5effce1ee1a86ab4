"""Deterministic SVG line charts of centroids, WSS curves and savings."""
from __future__ import annotations

from pathlib import Path
from typing import Mapping, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

# Fixed id salt and no timestamp keep the SVG bytes identical across runs.
_RC = {"svg.hashsalt": "setback", "svg.fonttype": "none", "font.size": 9}
_META = {"Date": None}


def _save(fig, path: Path) -> Path:
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata=_META)
    plt.close(fig)
    return path


def plot_centroids(centroids: Sequence[Sequence[float]], names: Sequence[str], title: str, path: Path) -> Path:
    with plt.rc_context(_RC):
        fig, ax = plt.subplots(figsize=(6, 3.5))
        for c, name in zip(centroids, names):
            ax.plot(range(24), c, marker="o", ms=2.5, lw=1.2, label=name)
        ax.set_xlim(0, 23)
        ax.set_ylim(-0.02, 1.02)
        ax.set_xticks(range(0, 24, 3))
        ax.set_xlabel("hour of day")
        ax.set_ylabel("normalized value")
        ax.set_title(title)
        ax.grid(alpha=0.3)
        ax.legend(fontsize=7, ncol=2)
        return _save(fig, path)


def plot_wss_curves(curves: Mapping[str, Mapping[int, float]], chosen: Mapping[str, int], path: Path) -> Path:
    with plt.rc_context(_RC):
        fig, ax = plt.subplots(figsize=(6, 3.5))
        for ds, curve in sorted(curves.items()):
            ks = sorted(curve)
            line, = ax.plot(ks, [curve[k] for k in ks], marker="o", ms=3, lw=1.2, label=ds)
            k = chosen.get(ds)
            if k in curve:
                ax.plot([k], [curve[k]], marker="s", ms=7, mfc="none", color=line.get_color())
        ax.set_xlabel("k")
        ax.set_ylabel("WSS")
        ax.set_title("within-cluster sum of squares (square = chosen k)")
        ax.grid(alpha=0.3)
        ax.legend(fontsize=7)
        return _save(fig, path)


def plot_hour_of_week(series: Mapping[str, Sequence[float]], title: str, path: Path) -> Path:
    with plt.rc_context(_RC):
        fig, ax = plt.subplots(figsize=(7, 3.2))
        for name, values in sorted(series.items()):
            ax.plot(range(len(values)), values, lw=1.0, label=name)
        ax.set_xticks(range(0, 169, 24))
        ax.set_xticklabels(["Mon", "Tue", "Wed", "Thu", "Fri", "Sat", "Sun", ""])
        ax.set_xlim(0, 168)
        ax.set_ylabel("savings (kWh)")
        ax.set_title(title)
        ax.grid(alpha=0.3)
        ax.legend(fontsize=7, ncol=3)
        return _save(fig, path)


def plot_sweep(grid: Mapping[tuple[int, int], float], path: Path) -> Path:
    """Average savings vs morning shift, one line per evening shift."""
    with plt.rc_context(_RC):
        fig, ax = plt.subplots(figsize=(5, 3.2))
        mornings = sorted({a for a, _ in grid})
        for b in sorted({b for _, b in grid}, reverse=True):
            ax.plot(mornings, [grid.get((a, b), float("nan")) for a in mornings], marker="o", ms=3, label=f"evening {b:+d} h")
        ax.set_xticks(mornings)
        ax.set_xlabel("morning shift (h)")
        ax.set_ylabel("average savings (%)")
        ax.set_title("static-window shift sweep")
        ax.grid(alpha=0.3)
        ax.legend(fontsize=7)
        return _save(fig, path)
