"""Figure output for benchmark and instability reports.

Figures are written as standalone SVG (text converted to paths, no linked
resources). Hash salt and date metadata are pinned so reruns produce
identical files.
"""

import itertools
from collections import defaultdict

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

STYLE = {
    "font.family": "DejaVu Sans",
    "font.size": 9,
    "axes.labelsize": 10,
    "axes.titlesize": 10,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "lines.linewidth": 1.5,
    "lines.markersize": 4,
    "svg.fonttype": "path",
    "svg.hashsalt": "dpsis",
    "figure.figsize": (5.5, 3.6),
}

LINESTYLES = ["-", "--", "-.", ":"]
MARKERS = ["o", "s", "^", "D", "v", "P"]


def _save(fig, path):
    fig.savefig(path, format="svg", metadata={"Date": None}, bbox_inches="tight")
    plt.close(fig)


def accuracy_curves(rows):
    """Mean accuracy per ``(method, k)`` and epsilon.

    Returns ``{(method, k): [(epsilon, mean), ...]}`` sorted by epsilon;
    deterministic methods map to a single ``(None, mean)`` point.
    """
    acc = defaultdict(list)
    for row in rows:
        acc[(row.method, row.k, row.epsilon)].append(row.accuracy)
    curves = defaultdict(list)
    for (method, k, eps), values in acc.items():
        curves[(method, k)].append((eps, float(np.mean(values))))
    return {key: sorted(points, key=lambda p: -1.0 if p[0] is None else p[0])
            for key, points in sorted(curves.items())}


def emit_accuracy_plot(rows, path, title=None):
    """Mean top-k accuracy against epsilon (log axis), one line per (method, k).

    Methods without an epsilon are drawn as flat lines across the epsilon
    range of the private methods.
    """
    rows = list(rows)
    if not rows:
        raise ValueError("no result rows to plot")
    curves = accuracy_curves(rows)
    eps_values = sorted({r.epsilon for r in rows if r.epsilon is not None})
    span = (eps_values[0], eps_values[-1]) if eps_values else (0.1, 20.0)

    styles = itertools.cycle(itertools.product(LINESTYLES, MARKERS))
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        for (method, k), points in curves.items():
            ls, marker = next(styles)
            if points[0][0] is None:
                xs, ys = list(span), [points[0][1]] * 2
                marker = None
            else:
                xs, ys = zip(*points)
            ax.plot(xs, ys, linestyle=ls, marker=marker, label=f"{method}, k={k}")
        ax.set_xscale("log")
        ax.set_ylim(-0.02, 1.02)
        ax.set_xlabel(r"privacy budget $\epsilon$")
        ax.set_ylabel("mean top-k accuracy")
        if title:
            ax.set_title(title)
        ax.legend(frameon=False)
        _save(fig, path)


def emit_instability_plot(counts, reps, path):
    """Per-feature selection counts, one panel per experiment."""
    experiments = list(counts)
    with plt.rc_context(STYLE):
        fig, axes = plt.subplots(len(experiments), 1, sharex=True, squeeze=False,
                                 figsize=(6.0, 2.4 * len(experiments)))
        for ax, name in zip(axes[:, 0], experiments):
            for (method, values), ls in zip(counts[name].items(), LINESTYLES):
                features = np.arange(1, len(values) + 1)
                ax.step(features, values, where="mid", linestyle=ls, label=method)
            ax.axhline(reps, color="0.6", linewidth=0.8)
            ax.set_ylabel("times selected")
            ax.set_title(name)
            ax.legend(frameon=False, loc="upper right")
        axes[-1, 0].set_xlabel("feature")
        _save(fig, path)
