"""Overlapping-window decomposition of a long sequence and the fusion
operator that averages overlapped regions.

Fusion applies identically to sample values, predicted noises, and gradients;
overlaps are averaged uniformly, normalized by the number of contributing
chunks. The last window is clamped to end at the final frame when the stride
does not divide (F - f), the standard sliding-window convention.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

__all__ = [
    "ChunkLayout",
    "make_layout",
    "take_chunk",
    "contribution_counts",
    "fuse",
]


@dataclass(frozen=True)
class ChunkLayout:
    """F total frames covered by N windows of length f at stride s.

    ``starts`` is strictly increasing, begins at 0, steps by s except for a
    possibly clamped last entry at F - f, and covers every frame.
    """

    num_frames: int
    chunk_len: int
    stride: int
    starts: np.ndarray

    @property
    def num_chunks(self) -> int:
        return len(self.starts)

    def __post_init__(self):
        F, f, s = self.num_frames, self.chunk_len, self.stride
        if not (1 <= f <= F):
            raise ValueError(f"need 1 <= f <= F, got f={f}, F={F}")
        if not (1 <= s <= f):
            raise ValueError(f"need 1 <= s <= f, got s={s}, f={f}")
        starts = self.starts
        if starts[0] != 0:
            raise ValueError("first chunk must start at frame 0")
        gaps = np.diff(starts)
        if np.any(gaps <= 0):
            raise ValueError("starts must be strictly increasing")
        if np.any(gaps[:-1] != s) or (len(gaps) > 0 and gaps[-1] > s):
            raise ValueError("interior starts must step by the stride")
        if starts[-1] != F - f:
            raise ValueError("last chunk must end at the final frame")


def make_layout(F: int, f: int, s: int) -> ChunkLayout:
    """Minimal covering layout: stride-s starts plus a clamped final start."""
    if not (1 <= f <= F):
        raise ValueError(f"chunk length must satisfy 1 <= f <= F, got f={f}, F={F}")
    if not (1 <= s <= f):
        raise ValueError(f"stride must satisfy 1 <= s <= f, got s={s}, f={f}")
    starts = list(range(0, F - f + 1, s))
    if starts[-1] != F - f:
        starts.append(F - f)
    return ChunkLayout(
        num_frames=F,
        chunk_len=f,
        stride=s,
        starts=np.asarray(starts, dtype=np.int64),
    )


def take_chunk(seq: np.ndarray, layout: ChunkLayout, i: int) -> np.ndarray:
    """Copy of the contiguous sub-sequence [starts[i], starts[i] + f)."""
    if not (0 <= i < layout.num_chunks):
        raise IndexError(f"chunk index {i} out of range [0, {layout.num_chunks})")
    if seq.shape[0] != layout.num_frames:
        raise ValueError(
            f"sequence has {seq.shape[0]} frames, layout expects {layout.num_frames}"
        )
    start = int(layout.starts[i])
    return seq[start : start + layout.chunk_len].copy()


def contribution_counts(layout: ChunkLayout) -> np.ndarray:
    """Per-frame count of covering chunks; coverage makes every entry >= 1."""
    counts = np.zeros(layout.num_frames, dtype=np.int64)
    for start in layout.starts:
        counts[start : start + layout.chunk_len] += 1
    return counts


def fuse(
    chunks: Sequence[np.ndarray],
    layout: ChunkLayout,
    indices: Sequence[int] | None = None,
) -> np.ndarray:
    """Average chunk values back onto the full sequence, frame by frame.

    With ``indices`` given, only those chunks contribute: overlaps among them
    are averaged by their own contribution counts, and frames covered by none
    of them come back zero. Without ``indices`` all N chunks are required and
    full coverage makes every frame an arithmetic mean.
    """
    if indices is None:
        indices = range(layout.num_chunks)
    indices = list(indices)
    if len(chunks) != len(indices):
        raise ValueError(f"expected {len(indices)} chunks, got {len(chunks)}")
    chunk_shape = None
    for c in chunks:
        if c.shape[0] != layout.chunk_len:
            raise ValueError(
                f"chunk has {c.shape[0]} frames, layout expects {layout.chunk_len}"
            )
        if chunk_shape is None:
            chunk_shape = c.shape
        elif c.shape != chunk_shape:
            raise ValueError(f"inconsistent chunk shapes: {c.shape} vs {chunk_shape}")

    out_shape = (layout.num_frames,) + chunk_shape[1:]
    acc = np.zeros(out_shape)
    count = np.zeros(layout.num_frames, dtype=np.int64)
    for idx, chunk in zip(indices, chunks):
        if not (0 <= idx < layout.num_chunks):
            raise IndexError(f"chunk index {idx} out of range [0, {layout.num_chunks})")
        start = int(layout.starts[idx])
        acc[start : start + layout.chunk_len] += chunk
        count[start : start + layout.chunk_len] += 1
    safe = np.maximum(count, 1)
    out = acc / safe.reshape((-1,) + (1,) * (acc.ndim - 1))
    return out
