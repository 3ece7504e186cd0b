"""Trajectory instrumentation: per-stage events, divergence metrics over
time, and trace export.

Chunk spread is measured directly in latent coordinates, restricted to the
scenario's shared or local coordinate set: per-chunk snapshots are reduced to
mean frames and compared pairwise. The exported CSV carries one row per
(event, chunk) with mean-frame coordinates printed at 17 significant digits,
so equal-seed runs produce byte-identical files.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .chunking import ChunkLayout, take_chunk
from .conditioning import Scenario

__all__ = [
    "StageEvent",
    "SamplerRunTrace",
    "chunk_spread",
    "local_fidelity_error",
    "divergence_profile",
    "export_trace",
]


@dataclass(frozen=True)
class StageEvent:
    """One recorded stage execution.

    ``chunk_x0`` is the (N, f, D) per-chunk clean-sample snapshot after the
    stage ran; ``prediction_timestep`` is the timestep handed to the denoiser
    (None for stages that made no predictions); ``noise_fingerprint`` hashes
    the noise tensor the stage consumed or produced.
    """

    step_index: int
    timestep: int
    stage: int
    iteration: int
    chunk_x0: np.ndarray
    prediction_timestep: int | None = None
    noise_fingerprint: str | None = None

    def __post_init__(self):
        if self.stage not in (1, 2, 3):
            raise ValueError(f"stage must be 1, 2, or 3, got {self.stage}")

    def chunk_means(self) -> np.ndarray:
        """Per-chunk mean frame, shape (N, D)."""
        return self.chunk_x0.mean(axis=1)


@dataclass
class SamplerRunTrace:
    """Ordered stage events plus the config and scenario that produced them."""

    dim: int
    layout: ChunkLayout
    config: dict
    scenario: Scenario | None = None
    grid: list[int] = field(default_factory=list)
    events: list[StageEvent] = field(default_factory=list)

    def add(self, event: StageEvent) -> None:
        if self.events:
            prev = self.events[-1]
            key = (event.step_index, event.stage, event.iteration)
            prev_key = (prev.step_index, prev.stage, prev.iteration)
            if key <= prev_key:
                raise ValueError(f"events out of order: {prev_key} then {key}")
        self.events.append(event)

    def events_at(self, t: int, stage: int | None = None) -> list[StageEvent]:
        return [
            e
            for e in self.events
            if e.timestep == t and (stage is None or e.stage == stage)
        ]

    def profile_events(self) -> list[StageEvent]:
        """Events forming the per-step snapshot sequence.

        Grid samplers contribute their stage-1 events (one per grid step);
        purely iterative samplers have no stage-1 events, so every recorded
        snapshot forms the profile.
        """
        stage1 = [e for e in self.events if e.stage == 1]
        return stage1 if stage1 else list(self.events)


def _pairwise_spread(means: np.ndarray, coords: np.ndarray) -> float:
    n = means.shape[0]
    if n < 2:
        return 0.0
    sub = means[:, coords]
    total = 0.0
    pairs = 0
    for i in range(n):
        for j in range(i + 1, n):
            total += float(np.linalg.norm(sub[i] - sub[j]))
            pairs += 1
    return total / pairs


def chunk_spread(trace: SamplerRunTrace, t: int, coordinate_set: Sequence[int]) -> float:
    """Mean pairwise distance between per-chunk mean frames at timestep t,
    restricted to the given coordinates.
    """
    coords = np.asarray(coordinate_set, dtype=np.int64)
    candidates = [e for e in trace.profile_events() if e.timestep == t]
    if not candidates:
        raise ValueError(f"no snapshot recorded at timestep {t}")
    return _pairwise_spread(candidates[-1].chunk_means(), coords)


def local_fidelity_error(
    final: np.ndarray, layout: ChunkLayout, scenario: Scenario
) -> list[float]:
    """Per-chunk distance between the chunk's mean frame and its target,
    restricted to the local coordinates and normalized by the target's norm
    there.
    """
    if final.shape[0] != layout.num_frames:
        raise ValueError(
            f"sequence has {final.shape[0]} frames, layout expects {layout.num_frames}"
        )
    coords = scenario.local_coords
    errs = []
    for i in range(layout.num_chunks):
        mean_frame = take_chunk(final, layout, i).mean(axis=0)
        mu = scenario.mu(i)
        errs.append(
            float(np.linalg.norm((mean_frame - mu)[coords]) / np.linalg.norm(mu[coords]))
        )
    return errs


def divergence_profile(
    trace: SamplerRunTrace, coordinate_set: Sequence[int]
) -> list[tuple[int, float]]:
    """(timestep, spread) at every recorded snapshot, in trace order."""
    coords = np.asarray(coordinate_set, dtype=np.int64)
    events = trace.profile_events()
    if not events:
        raise ValueError("trace has no snapshot events")
    return [(e.timestep, _pairwise_spread(e.chunk_means(), coords)) for e in events]


def terminal_spread(trace: SamplerRunTrace, coordinate_set: Sequence[int]) -> float:
    """Spread at the last recorded snapshot."""
    coords = np.asarray(coordinate_set, dtype=np.int64)
    events = trace.profile_events()
    if not events:
        raise ValueError("trace has no snapshot events")
    return _pairwise_spread(events[-1].chunk_means(), coords)


def _fmt(x: float) -> str:
    return f"{x:.17g}"


def export_trace(trace: SamplerRunTrace, path: str | Path) -> Path:
    """Write the trace as CSV with a JSON sidecar; byte-stable per seed.

    CSV columns: step_index, timestep, stage, iteration, chunk_id, one
    mean-frame column per latent coordinate, noise_fingerprint. The sidecar
    (same stem, .json) captures config, scenario, layout, and grid.
    """
    path = Path(path)
    header = ["step_index", "timestep", "stage", "iteration", "chunk_id"]
    header += [f"mean_{d}" for d in range(trace.dim)]
    header += ["noise_fingerprint"]
    lines = [",".join(header)]
    for e in trace.events:
        means = e.chunk_means()
        for chunk_id in range(means.shape[0]):
            row = [
                str(e.step_index),
                str(e.timestep),
                str(e.stage),
                str(e.iteration),
                str(chunk_id),
            ]
            row += [_fmt(v) for v in means[chunk_id]]
            row.append(e.noise_fingerprint or "")
            lines.append(",".join(row))
    try:
        path.write_text("\n".join(lines) + "\n", encoding="utf-8", newline="\n")
        sidecar = path.with_suffix(".json")
        meta = {
            "config": trace.config,
            "scenario": trace.scenario.to_dict() if trace.scenario else None,
            "layout": {
                "num_frames": trace.layout.num_frames,
                "chunk_len": trace.layout.chunk_len,
                "stride": trace.layout.stride,
                "starts": [int(s) for s in trace.layout.starts],
            },
            "grid": trace.grid,
            "dim": trace.dim,
        }
        sidecar.write_text(
            json.dumps(meta, indent=2, sort_keys=True) + "\n",
            encoding="utf-8",
            newline="\n",
        )
    except OSError as exc:
        raise OSError(f"failed to export trace to {path}: {exc}") from exc
    return path
