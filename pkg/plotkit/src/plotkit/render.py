"""Figure rendering for the three plot kinds.

Output depends only on the input file contents: fixed figure geometry, no
timestamps, deterministic colors from the sorted file order.
"""

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .records import read_runrecord, read_trajectory
from .spec import PlotSpec


def _save(fig, out):
    out = Path(out)
    out.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(out, dpi=120, metadata={"Software": "plotkit"})
    plt.close(fig)
    return out


def _loss_curves(spec, files):
    fig, ax = plt.subplots(figsize=(6.4, 4.0))
    for f in files:
        rec = read_runrecord(f)
        mask = rec["converged"]
        ax.plot(rec["iter"][mask], rec["loss"][mask], label=Path(f).stem)
    ax.set_xlabel("iteration")
    ax.set_ylabel("loss")
    if spec.logx:
        ax.set_xscale("log")
    if spec.logy:
        ax.set_yscale("log")
    ax.legend(fontsize=8)
    return fig


def _scaling(spec, files):
    horizons = np.asarray(spec.horizons, dtype=float)
    times = []
    for f in files:
        rec = read_runrecord(f)
        mask = rec["converged"]
        wall = rec["wall_ms_forward"][mask] + rec["wall_ms_backward"][mask]
        times.append(float(np.mean(wall)))
    times = np.asarray(times)
    slope = float(np.polyfit(np.log(horizons), np.log(times), 1)[0])
    print(f"fitted log-log slope: {slope:.3f}")
    fig, ax = plt.subplots(figsize=(6.4, 4.0))
    ax.plot(horizons, times, "o-", label="measured")
    anchor = times[0] / horizons[0]
    ax.plot(horizons, anchor * horizons, "--", label="linear reference")
    ax.set_xscale("log")
    ax.set_yscale("log")
    ax.set_xlabel("horizon T")
    ax.set_ylabel("mean wall time per iteration [ms]")
    ax.legend(fontsize=8)
    ax.set_title(spec.title or f"log-log slope {slope:.3f}")
    return fig


def _trajectory_compare(spec, files):
    ref = None
    if spec.reference:
        ref = read_trajectory(spec.reference)
    fig, ax = plt.subplots(figsize=(6.4, 4.0))
    n = None
    for f in files:
        ts, states, _ = read_trajectory(f)
        n = states.shape[1]
        for i in range(n):
            ax.plot(ts, states[:, i], label=f"{Path(f).stem} x{i}", lw=1.2)
    if ref is not None:
        ts, states, _ = ref
        for i in range(states.shape[1]):
            ax.plot(ts, states[:, i], "k--", lw=1.0,
                    label=f"reference x{i}" if i == 0 else None)
    ax.set_xlabel("t")
    ax.set_ylabel("state")
    if spec.logy:
        ax.set_yscale("log")
    ax.legend(fontsize=7)
    return fig


def render(spec: PlotSpec):
    """Render one figure per the spec; returns the output path."""
    files = spec.matched_files()
    if spec.kind == "loss_curves":
        fig = _loss_curves(spec, files)
    elif spec.kind == "scaling":
        fig = _scaling(spec, files)
    else:
        fig = _trajectory_compare(spec, files)
    if spec.title and spec.kind != "scaling":
        fig.axes[0].set_title(spec.title)
    return _save(fig, spec.out)
