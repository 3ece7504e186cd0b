"""Structured conditions: a shared global vector plus per-chunk local vectors,
composed into per-chunk mixture targets.

A scenario splits the D latent coordinates into a shared set and a local set.
Every chunk's target mu_i agrees with every other chunk's on the shared
coordinates and is distinct on the local ones, so scenario-wide coherence and
per-chunk fidelity are separately measurable.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

__all__ = [
    "StructuredCondition",
    "Scenario",
    "build_scenario",
    "condition_for_chunk",
    "null_condition",
]


@dataclass(frozen=True)
class StructuredCondition:
    """Condition carried by a chunk: global part, local part, or the null flag.

    ``component_id`` names the mixture component the condition resolves to
    (the chunk index); null conditions keep the id of the chunk they were
    derived from so position-aware denoisers can still locate the chunk.
    """

    global_vec: np.ndarray
    local_vec: np.ndarray
    is_null: bool = False
    component_id: int | None = None

    def __post_init__(self):
        if self.is_null:
            if np.any(self.global_vec != 0.0) or np.any(self.local_vec != 0.0):
                raise ValueError("null conditions must carry zero vectors")
        else:
            if not (np.all(np.isfinite(self.global_vec)) and np.all(np.isfinite(self.local_vec))):
                raise ValueError("condition vectors must be finite")


@dataclass(frozen=True)
class Scenario:
    """Shared target g, per-chunk local targets l_i, and the coordinate split.

    ``shared_coords`` and ``local_coords`` partition range(dim). The mixture
    target for chunk i is g on the shared coordinates and l_i on the local
    ones. ``local_floor`` is the smallest pairwise distance between targets
    restricted to the local coordinates, recorded at build time (inf if there
    is only one chunk).
    """

    num_chunks: int
    dim: int
    shared_fraction: float
    seed: int
    shared_coords: np.ndarray
    local_coords: np.ndarray
    shared_target: np.ndarray
    local_targets: np.ndarray
    local_floor: float

    def mu(self, i: int) -> np.ndarray:
        """Mixture target for chunk i."""
        if not (0 <= i < self.num_chunks):
            raise IndexError(f"chunk index {i} out of range [0, {self.num_chunks})")
        out = np.zeros(self.dim)
        out[self.shared_coords] = self.shared_target[self.shared_coords]
        out[self.local_coords] = self.local_targets[i][self.local_coords]
        return out

    def all_mu(self) -> np.ndarray:
        return np.stack([self.mu(i) for i in range(self.num_chunks)])

    def to_dict(self) -> dict:
        return {
            "num_chunks": self.num_chunks,
            "dim": self.dim,
            "shared_fraction": self.shared_fraction,
            "seed": self.seed,
            "shared_coords": [int(c) for c in self.shared_coords],
            "local_coords": [int(c) for c in self.local_coords],
            "shared_target": [float(v) for v in self.shared_target],
            "local_targets": [[float(v) for v in row] for row in self.local_targets],
            "local_floor": self.local_floor,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Scenario":
        return cls(
            num_chunks=int(d["num_chunks"]),
            dim=int(d["dim"]),
            shared_fraction=float(d["shared_fraction"]),
            seed=int(d["seed"]),
            shared_coords=np.asarray(d["shared_coords"], dtype=np.int64),
            local_coords=np.asarray(d["local_coords"], dtype=np.int64),
            shared_target=np.asarray(d["shared_target"], dtype=np.float64),
            local_targets=np.asarray(d["local_targets"], dtype=np.float64),
            local_floor=float(d["local_floor"]),
        )


def build_scenario(
    num_chunks: int, D: int, shared_fraction: float, rng_seed: int
) -> Scenario:
    """Deterministically build a scenario from a seed.

    Targets are drawn from a seeded standard normal and scaled to unit norm;
    the coordinate split is a seeded permutation so both sets are generic.
    Both coordinate sets are always nonempty.
    """
    if num_chunks < 1:
        raise ValueError(f"num_chunks must be >= 1, got {num_chunks}")
    if not (0.0 < shared_fraction < 1.0):
        raise ValueError(f"shared_fraction must be in (0, 1), got {shared_fraction}")
    if D < 2:
        raise ValueError(f"D must be >= 2 to split into shared and local sets, got {D}")
    n_shared = int(round(D * shared_fraction))
    n_shared = min(max(n_shared, 1), D - 1)

    rng = np.random.default_rng(rng_seed)
    perm = rng.permutation(D)
    shared_coords = np.sort(perm[:n_shared])
    local_coords = np.sort(perm[n_shared:])

    def unit(v: np.ndarray) -> np.ndarray:
        return v / np.linalg.norm(v)

    shared_target = unit(rng.standard_normal(D))
    local_targets = np.stack([unit(rng.standard_normal(D)) for _ in range(num_chunks)])

    if num_chunks < 2:
        floor = math.inf
    else:
        local = local_targets[:, local_coords]
        dists = [
            float(np.linalg.norm(local[i] - local[j]))
            for i in range(num_chunks)
            for j in range(i + 1, num_chunks)
        ]
        floor = min(dists)
        if floor == 0.0:
            raise ValueError("degenerate scenario: local targets collide")

    return Scenario(
        num_chunks=num_chunks,
        dim=D,
        shared_fraction=shared_fraction,
        seed=rng_seed,
        shared_coords=shared_coords,
        local_coords=local_coords,
        shared_target=shared_target,
        local_targets=local_targets,
        local_floor=floor,
    )


def condition_for_chunk(scenario: Scenario, i: int) -> StructuredCondition:
    """Condition whose mixture target is mu_i."""
    if not (0 <= i < scenario.num_chunks):
        raise IndexError(f"chunk index {i} out of range [0, {scenario.num_chunks})")
    return StructuredCondition(
        global_vec=scenario.shared_target[scenario.shared_coords].copy(),
        local_vec=scenario.local_targets[i][scenario.local_coords].copy(),
        is_null=False,
        component_id=i,
    )


def null_condition(like: StructuredCondition | None = None) -> StructuredCondition:
    """The null condition (zero vectors, is_null set).

    With ``like`` given, the null condition keeps that condition's vector
    shapes and component id, which is what samplers use for the unguided
    branch of classifier-free guidance.
    """
    if like is None:
        return StructuredCondition(
            global_vec=np.zeros(0), local_vec=np.zeros(0), is_null=True
        )
    return replace(
        like,
        global_vec=np.zeros_like(like.global_vec),
        local_vec=np.zeros_like(like.local_vec),
        is_null=True,
    )
