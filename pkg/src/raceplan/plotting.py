"""Optional SVG rendering of benchmark reports.

Data stays CSV-first; these helpers turn already-written report rows into
self-contained SVG box plots.  matplotlib is imported lazily so the core
package works without it.
"""

from __future__ import annotations

import numpy as np

from .errors import SpecError

_ORDER = ("hierarchical", "parallel", "left", "right")


def _pyplot():
    try:
        import matplotlib
    except ImportError as exc:    # pragma: no cover - depends on extras
        raise SpecError(
            "plotting needs matplotlib (install the 'plot' extra)") from exc
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    return plt


def _strategies_in(rows, key="strategy"):
    present = {r[key] for r in rows}
    return [s for s in _ORDER if s in present] + sorted(present - set(_ORDER))


def plot_overtake_distribution(rows, path) -> None:
    """Box plot of overtake times per strategy.

    ``rows`` are dicts with ``strategy``, ``overtake_time``, ``completed``;
    runs that never completed are drawn as a separate DNF count note.
    """
    plt = _pyplot()
    strategies = _strategies_in(rows)
    data, labels = [], []
    for strat in strategies:
        mine = [r for r in rows if r["strategy"] == strat]
        done = [float(r["overtake_time"]) for r in mine
                if str(r["completed"]) in ("1", "True", "true")]
        dnf = len(mine) - len(done)
        data.append(done if done else [np.nan])
        labels.append(f"{strat}\n({dnf} DNF)" if dnf else strat)

    fig, ax = plt.subplots(figsize=(6.4, 4.2))
    ax.boxplot(data, tick_labels=labels, showfliers=True)
    ax.set_ylabel("overtake time [s]")
    ax.set_title("overtake time by strategy")
    ax.grid(True, axis="y", alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, format="svg")
    plt.close(fig)


def plot_step_times(rows, path) -> None:
    """Per-step planning time grouped by visible-opponent count.

    ``rows`` are dicts with ``strategy``, ``n_visible``, ``plan_time``.
    """
    plt = _pyplot()
    strategies = _strategies_in(rows)
    counts = sorted({int(r["n_visible"]) for r in rows})
    fig, ax = plt.subplots(figsize=(7.2, 4.2))
    width = 0.8 / max(len(strategies), 1)
    for j, strat in enumerate(strategies):
        data, positions = [], []
        for i, n in enumerate(counts):
            vals = [1e3 * float(r["plan_time"]) for r in rows
                    if r["strategy"] == strat and int(r["n_visible"]) == n]
            if vals:
                data.append(vals)
                positions.append(i + (j - 0.5 * (len(strategies) - 1)) * width)
        if data:
            box = ax.boxplot(data, positions=positions, widths=0.9 * width,
                             showfliers=False, patch_artist=True)
            color = plt.cm.tab10(j % 10)
            for patch in box["boxes"]:
                patch.set_facecolor(color)
            ax.plot([], [], color=color, label=strat, linewidth=6)
    ax.set_xticks(range(len(counts)))
    ax.set_xticklabels([str(n) for n in counts])
    ax.set_xlabel("visible opponents")
    ax.set_ylabel("per-step planning time [ms]")
    ax.set_title("planning time by strategy and opponent count")
    ax.legend()
    ax.grid(True, axis="y", alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, format="svg")
    plt.close(fig)
