"""Figure rendering for run and compare reports.

Figures are written next to the delimited trace output. Rendering is fully
data-driven with fixed size, dpi, and metadata, so equal-seed runs produce
byte-identical image files.
"""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

from .trace import SamplerRunTrace, divergence_profile

__all__ = ["render_divergence_figure", "render_comparison_figure"]

_SAVEFIG = dict(dpi=150, metadata={"Software": "syncos"})


def render_divergence_figure(
    trace: SamplerRunTrace, path: str | Path, title: str = ""
) -> Path:
    """Chunk spread over the sampling trajectory, shared vs local coordinates."""
    path = Path(path)
    if trace.scenario is None:
        raise ValueError("divergence figure needs the trace's scenario")
    shared = divergence_profile(trace, trace.scenario.shared_coords)
    local = divergence_profile(trace, trace.scenario.local_coords)

    fig, ax = plt.subplots(figsize=(6.0, 3.6), constrained_layout=True)
    xs = range(len(shared))
    ax.plot(xs, [s for _, s in shared], label="shared coords", color="tab:blue")
    ax.plot(xs, [s for _, s in local], label="local coords", color="tab:orange")
    ax.set_xlabel("snapshot index (time runs left to right)")
    ax.set_ylabel("mean pairwise chunk spread")
    if title:
        ax.set_title(title)
    ax.grid(True, alpha=0.3)
    ax.legend(loc="best", fontsize=8)
    fig.savefig(path, **_SAVEFIG)
    plt.close(fig)
    return path


def render_comparison_figure(
    traces: Sequence[tuple[str, SamplerRunTrace]], path: str | Path
) -> Path:
    """Shared-coordinate divergence profiles of several samplers, overlaid."""
    path = Path(path)
    fig, ax = plt.subplots(figsize=(6.0, 3.6), constrained_layout=True)
    for label, trace in traces:
        if trace.scenario is None:
            raise ValueError(f"trace for {label!r} has no scenario")
        profile = divergence_profile(trace, trace.scenario.shared_coords)
        ax.plot(range(len(profile)), [s for _, s in profile], label=label)
    ax.set_xlabel("snapshot index (time runs left to right)")
    ax.set_ylabel("shared-coordinate chunk spread")
    ax.grid(True, alpha=0.3)
    ax.legend(loc="best", fontsize=8)
    fig.savefig(path, **_SAVEFIG)
    plt.close(fig)
    return path
