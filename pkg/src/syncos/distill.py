"""Score-distillation gradients: SDS, kernel-coupled CSD, and the flow variant.

The CSD gradient couples N chunks through an RBF kernel over their flattened
noised states: each chunk's residual is scaled by its total kernel affinity
and a repulsion term pushes the noised states apart. The sample itself is the
optimized parameter (g = identity), so no Jacobian appears anywhere.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .denoiser import EPSILON, VELOCITY, Prediction

__all__ = [
    "KernelParams",
    "rbf_kernel",
    "median_bandwidth",
    "sds_gradient",
    "csd_gradients",
    "flow_sds_gradient",
]

BANDWIDTH_FLOOR = 1e-8


@dataclass(frozen=True)
class KernelParams:
    """RBF bandwidth selection: the SVGD median heuristic or a fixed h > 0."""

    bandwidth_rule: str = "median_heuristic"
    fixed_h: float | None = None

    def __post_init__(self):
        if self.bandwidth_rule not in ("median_heuristic", "fixed"):
            raise ValueError(f"unknown bandwidth rule {self.bandwidth_rule!r}")
        if self.bandwidth_rule == "fixed":
            if self.fixed_h is None or not self.fixed_h > 0.0:
                raise ValueError("fixed bandwidth must be strictly positive")

    @classmethod
    def fixed(cls, h: float) -> "KernelParams":
        return cls(bandwidth_rule="fixed", fixed_h=h)


def rbf_kernel(a: np.ndarray, b: np.ndarray, h: float) -> tuple[float, np.ndarray]:
    """k = exp(-||a-b||^2 / (2 h^2)) and its gradient in a, -(a-b)/h^2 * k."""
    if a.shape != b.shape:
        raise ValueError(f"kernel inputs must match, got {a.shape} vs {b.shape}")
    if not h > 0.0:
        raise ValueError(f"bandwidth must be positive, got {h}")
    diff = a - b
    k = float(np.exp(-np.dot(diff, diff) / (2.0 * h * h)))
    return k, -(diff / (h * h)) * k


def median_bandwidth(pairwise_sq_dists: np.ndarray) -> float:
    """SVGD median heuristic: sqrt(median(d^2) / (2 ln(N+1))), floored at 1e-8.

    ``pairwise_sq_dists`` is the symmetric N x N matrix of squared distances;
    only off-diagonal entries enter the median. Fewer than two points return
    the floor.
    """
    d2 = np.asarray(pairwise_sq_dists, dtype=np.float64)
    if d2.ndim != 2 or d2.shape[0] != d2.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {d2.shape}")
    if np.any(d2 < 0.0):
        raise ValueError("squared distances must be nonnegative")
    n = d2.shape[0]
    if n < 2:
        return BANDWIDTH_FLOOR
    off_diag = d2[~np.eye(n, dtype=bool)]
    h = math.sqrt(float(np.median(off_diag)) / (2.0 * math.log(n + 1)))
    return max(h, BANDWIDTH_FLOOR)


def sds_gradient(eps_pred: Prediction, eps: np.ndarray, w: float) -> np.ndarray:
    """Single-sample distillation gradient w * (eps_pred - eps)."""
    if eps_pred.kind != EPSILON:
        raise ValueError(f"expected an epsilon prediction, got {eps_pred.kind!r}")
    if eps_pred.value.shape != eps.shape:
        raise ValueError(
            f"shape mismatch: {eps_pred.value.shape} vs {eps.shape}"
        )
    return w * (eps_pred.value - eps)


def csd_gradients(
    x_t_chunks: Sequence[np.ndarray],
    eps_preds: Sequence[np.ndarray],
    eps_bases: Sequence[np.ndarray],
    w: float,
    kernel: KernelParams,
) -> list[np.ndarray]:
    """Kernel-coupled distillation gradients for N chunks.

    For each i, grad_i = (w/N) * sum_j [ k(x^(j), x^(i)) * (pred_i - base_i)
    + grad_{x^(j)} k(x^(j), x^(i)) ], with the kernel evaluated on flattened
    chunks. At N = 1 the kernel is 1 and its gradient 0, so this reduces
    bitwise to ``sds_gradient``.
    """
    n = len(x_t_chunks)
    if n == 0:
        raise ValueError("need at least one chunk")
    if len(eps_preds) != n or len(eps_bases) != n:
        raise ValueError("chunk, prediction, and base lists must have equal length")
    chunk_shape = x_t_chunks[0].shape
    for arrs in (x_t_chunks, eps_preds, eps_bases):
        for a in arrs:
            if a.shape != chunk_shape:
                raise ValueError(f"inconsistent shapes: {a.shape} vs {chunk_shape}")

    flat = np.stack([np.ravel(c) for c in x_t_chunks])
    diffs = flat[:, None, :] - flat[None, :, :]
    sq = np.sum(diffs * diffs, axis=-1)
    if kernel.bandwidth_rule == "fixed":
        h = kernel.fixed_h
    else:
        h = median_bandwidth(sq)
    K = np.exp(-sq / (2.0 * h * h))

    grads = []
    for i in range(n):
        # sum_j grad_{x_j} k(x_j, x_i) = sum_j -(x_j - x_i)/h^2 * K[j, i]
        repulsion = -(K[:, i, None] * diffs[:, i, :]).sum(axis=0) / (h * h)
        attraction = K[:, i].sum() * (eps_preds[i] - eps_bases[i])
        grads.append((w / n) * (attraction + repulsion.reshape(chunk_shape)))
    return grads


def flow_sds_gradient(
    v_pred: Prediction, eps: np.ndarray, x: np.ndarray, w: float
) -> np.ndarray:
    """Flow-model distillation gradient w * (v_pred - (eps - x))."""
    if v_pred.kind != VELOCITY:
        raise ValueError(f"expected a velocity prediction, got {v_pred.kind!r}")
    if v_pred.value.shape != eps.shape or eps.shape != x.shape:
        raise ValueError("prediction, noise, and sample shapes must match")
    return w * (v_pred.value - (eps - x))
