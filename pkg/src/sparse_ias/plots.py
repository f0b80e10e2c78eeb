"""Figure rendering for run reports.

Matplotlib figures written as SVG 1.1 files.  Output is deterministic
for identical input: the SVG id hash salt is pinned and the creation
date metadata is dropped, so repeated runs produce byte-identical
artifacts (a property the CLI tests rely on).
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .fileio import atomic_write_bytes

_RC = {
    "svg.hashsalt": "sparse-ias",
    "svg.fonttype": "path",
    "figure.figsize": (6.0, 3.6),
    "figure.dpi": 100,
    "font.size": 9,
    "axes.grid": True,
    "grid.alpha": 0.3,
}

PLOT_KINDS = ("line", "stem", "histogram-log")


def render_figure(fig, path) -> None:
    """Save a figure as deterministic SVG via a temp-then-rename write."""
    import io

    buf = io.BytesIO()
    fig.savefig(buf, format="svg", metadata={"Date": None})
    plt.close(fig)
    atomic_write_bytes(Path(path), buf.getvalue())


def emit_plot(series, kind: str, path, *, title: str = "", xlabel: str = "", ylabel: str = "", labels=None) -> None:
    """Render one or more 1-D series to an SVG file.

    ``series`` is a single array or a list of arrays.  Kinds: ``line``,
    ``stem`` (markers on vertical hairlines), ``histogram-log`` (value
    histogram with a logarithmic count axis).  Empty input produces an
    axes-only file.
    """
    if kind not in PLOT_KINDS:
        raise ValueError(f"unknown plot kind {kind!r}; expected one of {PLOT_KINDS}")
    many = isinstance(series, (list, tuple))
    groups = [np.asarray(s, dtype=float) for s in (series if many else [series])]
    names = labels if labels is not None else [None] * len(groups)

    with plt.rc_context(_RC):
        fig, ax = plt.subplots()
        for values, name in zip(groups, names):
            if values.size == 0:
                continue
            if kind == "line":
                ax.plot(np.arange(values.size), values, lw=1.1, label=name)
            elif kind == "stem":
                markers, stems, base = ax.stem(np.arange(values.size), values, label=name)
                plt.setp(markers, markersize=2.5)
                plt.setp(stems, linewidth=0.8)
                plt.setp(base, linewidth=0.8)
            else:
                finite = values[np.isfinite(values)]
                if finite.size:
                    ax.hist(finite, bins=min(60, max(10, finite.size // 8)), alpha=0.6, label=name)
                    ax.set_yscale("log")
        if title:
            ax.set_title(title)
        if xlabel:
            ax.set_xlabel(xlabel)
        if ylabel:
            ax.set_ylabel(ylabel)
        if any(n for n in names):
            ax.legend(loc="best", fontsize=8)
        render_figure(fig, path)


def signal_overlay(path, curves: dict[str, np.ndarray], *, title: str = "", x=None) -> None:
    """Overlayed line plot of named signals on a shared axis."""
    with plt.rc_context(_RC):
        fig, ax = plt.subplots()
        for name, values in curves.items():
            values = np.asarray(values, dtype=float)
            xs = np.asarray(x) if x is not None else np.arange(values.size)
            ax.plot(xs, values, lw=1.1, label=name)
        if title:
            ax.set_title(title)
        if curves:
            ax.legend(loc="best", fontsize=8)
        render_figure(fig, path)
