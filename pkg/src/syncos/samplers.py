"""Complete sampling algorithms: three-stage synchronized coupled sampling
and the baselines it is measured against.

All samplers share one contract: every random draw comes from a single seeded
generator consumed in a fixed, documented order (initial state, then per-step
noises, then per-iteration selections), never from worker threads, so chunk
parallelism cannot change results.

Draw orders:
  per-chunk DDIM   x_T; then per chunk, per step: eps_rand (eta > 0 only)
  posterior fusion x_T; then per step: eps_rand (eta > 0 only)
  loss fusion      x_0; then per iteration: timestep, per-chunk noises
  coupled sampling x_T; then per step: baseline noise and per-iteration
                   minibatch picks (refinement steps only), then eps_rand
                   (eta > 0 only)
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .chunking import ChunkLayout, fuse, take_chunk
from .conditioning import Scenario, StructuredCondition, null_condition
from .denoiser import Prediction, cfg_combine
from .diffusion import (
    NoiseSchedule,
    ddim_step,
    effective_noise,
    flow_effective_noise,
    flow_forward,
    flow_step,
    forward_diffuse,
    timestep_grid,
    tweedie_x0,
)
from .distill import KernelParams, csd_gradients
from .parallel import ordered_map
from .trace import SamplerRunTrace, StageEvent

__all__ = [
    "SamplerConfig",
    "sample_per_chunk_ddim",
    "sample_gen_l_video",
    "sample_csd_only",
    "syncos_stage1",
    "syncos_stage2",
    "syncos_stage3",
    "syncos_sample",
]

OBJECTIVES = ("epsilon", "flow")


@dataclass(frozen=True)
class SamplerConfig:
    """Knobs shared by every sampler.

    ``t_min`` gates the refinement stage: it only runs at grid timesteps
    strictly above the cutoff. ``minibatch_b`` of None resolves to min(N, 4)
    once the layout is known. ``weight`` is the constant timestep weighting
    applied to every distillation gradient.
    """

    num_steps: int = 50
    eta: float = 0.0
    gamma: float = 6.0
    t_min: int = 850
    iters: int = 20
    lr: float = 0.75
    minibatch_b: int | None = None
    stride: int = 4
    seed: int = 0
    objective: str = "epsilon"
    weight: float = 1.0
    use_cfg_in_refine: bool = True
    optimizer: str = "sgd"
    kernel: KernelParams = field(default_factory=KernelParams)

    def __post_init__(self):
        if self.num_steps < 1:
            raise ValueError(f"num_steps must be >= 1, got {self.num_steps}")
        if not (0.0 <= self.eta <= 1.0):
            raise ValueError(f"eta must be in [0, 1], got {self.eta}")
        if self.t_min < 0:
            raise ValueError(f"t_min must be >= 0, got {self.t_min}")
        if self.iters < 0:
            raise ValueError(f"iters must be >= 0, got {self.iters}")
        if not self.lr > 0.0:
            raise ValueError(f"lr must be positive, got {self.lr}")
        if self.minibatch_b is not None and self.minibatch_b < 1:
            raise ValueError(f"minibatch_b must be >= 1, got {self.minibatch_b}")
        if self.stride < 1:
            raise ValueError(f"stride must be >= 1, got {self.stride}")
        if self.objective not in OBJECTIVES:
            raise ValueError(f"objective must be one of {OBJECTIVES}, got {self.objective!r}")
        if not self.weight > 0.0:
            raise ValueError(f"weight must be positive, got {self.weight}")
        if self.optimizer not in ("sgd", "adamw"):
            raise ValueError(f"optimizer must be 'sgd' or 'adamw', got {self.optimizer!r}")

    def resolve_minibatch(self, num_chunks: int) -> int:
        b = self.minibatch_b if self.minibatch_b is not None else min(num_chunks, 4)
        if not (1 <= b <= num_chunks):
            raise ValueError(
                f"minibatch size {b} out of range [1, {num_chunks}]"
            )
        return b

    def to_dict(self) -> dict:
        return {
            "num_steps": self.num_steps,
            "eta": self.eta,
            "gamma": self.gamma,
            "t_min": self.t_min,
            "iters": self.iters,
            "lr": self.lr,
            "minibatch_b": self.minibatch_b,
            "stride": self.stride,
            "seed": self.seed,
            "objective": self.objective,
            "weight": self.weight,
            "use_cfg_in_refine": self.use_cfg_in_refine,
            "optimizer": self.optimizer,
            "kernel": {
                "bandwidth_rule": self.kernel.bandwidth_rule,
                "fixed_h": self.kernel.fixed_h,
            },
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SamplerConfig":
        d = dict(d)
        kernel = d.pop("kernel", None)
        if kernel is not None:
            d["kernel"] = KernelParams(**kernel)
        return cls(**d)


def _fingerprint(arr: np.ndarray) -> str:
    return hashlib.sha256(arr.tobytes()).hexdigest()[:16]


def _cfg_predict(denoiser, chunk, condition, t, gamma) -> Prediction:
    cond = denoiser.predict(chunk, condition, t)
    null = denoiser.predict(chunk, null_condition(like=condition), t)
    return cfg_combine(cond, null, gamma)


def _to_x0(chunk: np.ndarray, pred: Prediction, t: int, schedule: NoiseSchedule, objective: str) -> np.ndarray:
    if objective == "epsilon":
        return tweedie_x0(chunk, pred.value, t, schedule)
    return flow_step(chunk, pred.value, t / schedule.T, 0.0)


def _renoise(x0: np.ndarray, eps: np.ndarray, t: int, schedule: NoiseSchedule, objective: str) -> np.ndarray:
    if objective == "epsilon":
        return forward_diffuse(x0, eps, t, schedule)
    return flow_forward(x0, eps, t / schedule.T)


def _implied_noise(x_t: np.ndarray, x0: np.ndarray, t: int, schedule: NoiseSchedule, objective: str) -> np.ndarray:
    if objective == "epsilon":
        return effective_noise(x_t, x0, t, schedule)
    return flow_effective_noise(x_t, x0, t / schedule.T)


def _residual_base(eps_chunk: np.ndarray, x0_chunk: np.ndarray, objective: str) -> np.ndarray:
    # distillation residual is pred - base: base is eps for epsilon models,
    # (eps - x0) for velocity models
    if objective == "epsilon":
        return eps_chunk
    return eps_chunk - x0_chunk


class _Descent:
    """Gradient-descent update on the full sequence; plain step or AdamW."""

    def __init__(self, config: SamplerConfig, shape: tuple):
        self.lr = config.lr
        self.adamw = config.optimizer == "adamw"
        if self.adamw:
            self.beta1, self.beta2 = 0.9, 0.999
            self.eps = 1e-8
            self.weight_decay = 0.0
            self.m = np.zeros(shape)
            self.v = np.zeros(shape)
            self.step_count = 0

    def step(self, x: np.ndarray, grad: np.ndarray) -> np.ndarray:
        if not self.adamw:
            return x - self.lr * grad
        self.step_count += 1
        self.m = self.beta1 * self.m + (1.0 - self.beta1) * grad
        self.v = self.beta2 * self.v + (1.0 - self.beta2) * grad * grad
        m_hat = self.m / (1.0 - self.beta1**self.step_count)
        v_hat = self.v / (1.0 - self.beta2**self.step_count)
        return x - self.lr * (m_hat / (np.sqrt(v_hat) + self.eps) + self.weight_decay * x)


def _validate_run(
    schedule: NoiseSchedule,
    layout: ChunkLayout,
    conditions: Sequence[StructuredCondition],
    config: SamplerConfig,
) -> None:
    if len(conditions) != layout.num_chunks:
        raise ValueError(
            f"need one condition per chunk: {len(conditions)} vs {layout.num_chunks}"
        )
    if config.t_min > schedule.T:
        raise ValueError(f"t_min {config.t_min} exceeds schedule length {schedule.T}")
    if config.objective == "flow" and config.eta != 0.0:
        raise ValueError("the flow objective integrates a deterministic ODE; eta must be 0")


def sample_per_chunk_ddim(
    denoiser,
    schedule: NoiseSchedule,
    layout: ChunkLayout,
    conditions: Sequence[StructuredCondition],
    config: SamplerConfig,
    dim: int,
) -> np.ndarray:
    """Denoise every chunk in isolation: the no-coupling control.

    Chunks are written back in ascending index order, so overlapped frames
    keep the last writer's values.
    """
    _validate_run(schedule, layout, conditions, config)
    grid = timestep_grid(schedule, config.num_steps)
    rng = np.random.default_rng(config.seed)
    x_init = rng.standard_normal((layout.num_frames, dim))

    out = np.empty_like(x_init)
    for i in range(layout.num_chunks):
        chunk = take_chunk(x_init, layout, i)
        for t, t_prev in grid.transitions():
            pred = _cfg_predict(denoiser, chunk, conditions[i], t, config.gamma)
            if config.objective == "epsilon":
                x0_hat = tweedie_x0(chunk, pred.value, t, schedule)
                eps_rand = (
                    rng.standard_normal(chunk.shape)
                    if config.eta > 0.0 and t_prev > 0
                    else None
                )
                chunk = ddim_step(x0_hat, pred.value, t, t_prev, config.eta, eps_rand, schedule)
            else:
                chunk = flow_step(chunk, pred.value, t / schedule.T, t_prev / schedule.T)
        start = int(layout.starts[i])
        out[start : start + layout.chunk_len] = chunk
    return out


def sample_gen_l_video(
    denoiser,
    schedule: NoiseSchedule,
    layout: ChunkLayout,
    conditions: Sequence[StructuredCondition],
    config: SamplerConfig,
    dim: int,
    scenario: Scenario | None = None,
) -> tuple[np.ndarray, SamplerRunTrace]:
    """Posterior-fusion baseline: per-chunk DDIM steps, overlaps averaged
    every step.
    """
    _validate_run(schedule, layout, conditions, config)
    grid = timestep_grid(schedule, config.num_steps)
    rng = np.random.default_rng(config.seed)
    x = rng.standard_normal((layout.num_frames, dim))
    trace = SamplerRunTrace(
        dim=dim,
        layout=layout,
        config=config.to_dict(),
        scenario=scenario,
        grid=[int(t) for t in grid.steps],
    )

    n = layout.num_chunks
    for k, (t, t_prev) in enumerate(grid.transitions()):
        chunks = [take_chunk(x, layout, i) for i in range(n)]
        preds = ordered_map(
            lambda i: _cfg_predict(denoiser, chunks[i], conditions[i], t, config.gamma),
            range(n),
        )
        x0_hats = [_to_x0(chunks[i], preds[i], t, schedule, config.objective) for i in range(n)]
        eps_rand = (
            rng.standard_normal(x.shape)
            if config.objective == "epsilon" and config.eta > 0.0 and t_prev > 0
            else None
        )
        stepped = []
        for i in range(n):
            if config.objective == "epsilon":
                er = take_chunk(eps_rand, layout, i) if eps_rand is not None else None
                stepped.append(
                    ddim_step(x0_hats[i], preds[i].value, t, t_prev, config.eta, er, schedule)
                )
            else:
                stepped.append(
                    flow_step(chunks[i], preds[i].value, t / schedule.T, t_prev / schedule.T)
                )
        trace.add(
            StageEvent(
                step_index=k,
                timestep=int(t),
                stage=1,
                iteration=0,
                chunk_x0=np.stack(x0_hats),
                prediction_timestep=int(t),
            )
        )
        x = fuse(stepped, layout)
    return x, trace


def sample_csd_only(
    denoiser,
    schedule: NoiseSchedule,
    layout: ChunkLayout,
    conditions: Sequence[StructuredCondition],
    config: SamplerConfig,
    total_iters: int,
    dim: int,
    scenario: Scenario | None = None,
) -> tuple[np.ndarray, SamplerRunTrace]:
    """Loss-fusion baseline: optimize the clean sequence directly.

    Every iteration draws a fresh uniform timestep in [1, T] and fresh
    per-chunk noise, computes kernel-coupled gradients over all chunks, fuses
    them, and descends. No reverse-process steps are taken.
    """
    _validate_run(schedule, layout, conditions, config)
    if total_iters < 0:
        raise ValueError(f"total_iters must be >= 0, got {total_iters}")
    rng = np.random.default_rng(config.seed)
    n = layout.num_chunks
    x0 = rng.standard_normal((layout.num_frames, dim))
    trace = SamplerRunTrace(
        dim=dim, layout=layout, config=config.to_dict(), scenario=scenario
    )
    descent = _Descent(config, x0.shape)

    for it in range(total_iters):
        t = int(rng.integers(1, schedule.T + 1))
        eps = rng.standard_normal((n, layout.chunk_len, dim))
        x0_chunks = [take_chunk(x0, layout, i) for i in range(n)]
        x_t_chunks = [
            _renoise(x0_chunks[i], eps[i], t, schedule, config.objective) for i in range(n)
        ]
        if config.use_cfg_in_refine:
            preds = ordered_map(
                lambda i: _cfg_predict(denoiser, x_t_chunks[i], conditions[i], t, config.gamma),
                range(n),
            )
        else:
            preds = ordered_map(
                lambda i: denoiser.predict(x_t_chunks[i], conditions[i], t), range(n)
            )
        bases = [_residual_base(eps[i], x0_chunks[i], config.objective) for i in range(n)]
        grads = csd_gradients(
            x_t_chunks, [p.value for p in preds], bases, config.weight, config.kernel
        )
        fused_grad = fuse(grads, layout)
        x0 = descent.step(x0, fused_grad)
        trace.add(
            StageEvent(
                step_index=it,
                timestep=t,
                stage=2,
                iteration=it + 1,
                chunk_x0=np.stack([take_chunk(x0, layout, i) for i in range(n)]),
                prediction_timestep=t,
                noise_fingerprint=_fingerprint(eps),
            )
        )
    return x0, trace


def syncos_stage1(
    x_t: np.ndarray,
    layout: ChunkLayout,
    conditions: Sequence[StructuredCondition],
    t: int,
    denoiser,
    config: SamplerConfig,
    schedule: NoiseSchedule,
    trace: SamplerRunTrace | None = None,
    step_index: int = 0,
) -> tuple[np.ndarray, list[Prediction]]:
    """Local co-denoising: per-chunk guided prediction, clean-sample
    estimation, and fusion of the estimates (not of posteriors).
    """
    n = layout.num_chunks
    chunks = [take_chunk(x_t, layout, i) for i in range(n)]
    preds = ordered_map(
        lambda i: _cfg_predict(denoiser, chunks[i], conditions[i], t, config.gamma),
        range(n),
    )
    x0_hats = [_to_x0(chunks[i], preds[i], t, schedule, config.objective) for i in range(n)]
    x0_fused = fuse(x0_hats, layout)
    if trace is not None:
        trace.add(
            StageEvent(
                step_index=step_index,
                timestep=int(t),
                stage=1,
                iteration=0,
                chunk_x0=np.stack(x0_hats),
                prediction_timestep=int(t),
            )
        )
    return x0_fused, preds


def syncos_stage2(
    x0_fused: np.ndarray,
    layout: ChunkLayout,
    conditions: Sequence[StructuredCondition],
    t: int,
    denoiser,
    config: SamplerConfig,
    rng: np.random.Generator,
    schedule: NoiseSchedule,
    trace: SamplerRunTrace | None = None,
    step_index: int = 0,
) -> tuple[np.ndarray, np.ndarray]:
    """Global refinement of the fused estimate.

    One baseline noise tensor is sampled up front and reused by every
    iteration (and later by the reversion). Each iteration picks a minibatch
    of chunks without replacement, re-noises them with their baseline slices
    at the enclosing grid timestep, couples their distillation gradients
    through the kernel, fuses over the minibatch's own coverage, and descends.
    Frames the minibatch does not cover receive zero gradient that iteration.
    """
    n = layout.num_chunks
    b = config.resolve_minibatch(n)
    eps_base = rng.standard_normal(x0_fused.shape)
    fp = _fingerprint(eps_base)
    x0 = x0_fused.copy()
    descent = _Descent(config, x0.shape)

    for it in range(config.iters):
        sel = np.sort(rng.choice(n, size=b, replace=False))
        x0_chunks = [take_chunk(x0, layout, int(i)) for i in sel]
        eps_chunks = [take_chunk(eps_base, layout, int(i)) for i in sel]
        x_t_chunks = [
            _renoise(x0_chunks[j], eps_chunks[j], t, schedule, config.objective)
            for j in range(b)
        ]
        if config.use_cfg_in_refine:
            preds = ordered_map(
                lambda j: _cfg_predict(
                    denoiser, x_t_chunks[j], conditions[int(sel[j])], t, config.gamma
                ),
                range(b),
            )
        else:
            preds = ordered_map(
                lambda j: denoiser.predict(x_t_chunks[j], conditions[int(sel[j])], t),
                range(b),
            )
        bases = [
            _residual_base(eps_chunks[j], x0_chunks[j], config.objective) for j in range(b)
        ]
        grads = csd_gradients(
            x_t_chunks, [p.value for p in preds], bases, config.weight, config.kernel
        )
        fused_grad = fuse(grads, layout, indices=[int(i) for i in sel])
        x0 = descent.step(x0, fused_grad)
        if trace is not None:
            trace.add(
                StageEvent(
                    step_index=step_index,
                    timestep=int(t),
                    stage=2,
                    iteration=it + 1,
                    chunk_x0=np.stack([take_chunk(x0, layout, i) for i in range(n)]),
                    prediction_timestep=int(t),
                    noise_fingerprint=fp,
                )
            )
    return x0, eps_base


def syncos_stage3(
    x0_refined: np.ndarray,
    noise_for_reversion: np.ndarray,
    t: int,
    t_prev: int,
    config: SamplerConfig,
    schedule: NoiseSchedule,
    eps_rand: np.ndarray | None = None,
) -> np.ndarray:
    """Revert the refined estimate to the previous timestep with the carried
    noise as the direction term.
    """
    if config.objective == "epsilon":
        return ddim_step(
            x0_refined, noise_for_reversion, t, t_prev, config.eta, eps_rand, schedule
        )
    s, s_prev = t / schedule.T, t_prev / schedule.T
    x_t = flow_forward(x0_refined, noise_for_reversion, s)
    return flow_step(x_t, noise_for_reversion - x0_refined, s, s_prev)


def syncos_sample(
    denoiser,
    schedule: NoiseSchedule,
    layout: ChunkLayout,
    conditions: Sequence[StructuredCondition],
    config: SamplerConfig,
    dim: int,
    scenario: Scenario | None = None,
) -> tuple[np.ndarray, SamplerRunTrace]:
    """Three-stage coupled sampling down the grid.

    Per step: fuse per-chunk clean estimates (stage 1); above the cutoff,
    refine them with kernel-coupled gradients anchored to this step's
    timestep and one fixed baseline noise (stage 2); revert with that same
    noise (stage 3). Below the cutoff the reversion reuses the noise implied
    by the current state, keeping the trajectory continuous.
    """
    _validate_run(schedule, layout, conditions, config)
    grid = timestep_grid(schedule, config.num_steps)
    rng = np.random.default_rng(config.seed)
    x = rng.standard_normal((layout.num_frames, dim))
    trace = SamplerRunTrace(
        dim=dim,
        layout=layout,
        config=config.to_dict(),
        scenario=scenario,
        grid=[int(t) for t in grid.steps],
    )

    for k, (t, t_prev) in enumerate(grid.transitions()):
        x0_fused, _ = syncos_stage1(
            x, layout, conditions, t, denoiser, config, schedule, trace, k
        )
        if t > config.t_min:
            x0_refined, eps_base = syncos_stage2(
                x0_fused, layout, conditions, t, denoiser, config, rng, schedule, trace, k
            )
            reversion_noise = eps_base
        else:
            x0_refined = x0_fused
            reversion_noise = _implied_noise(x, x0_fused, t, schedule, config.objective)
        eps_rand = (
            rng.standard_normal(x.shape)
            if config.objective == "epsilon" and config.eta > 0.0 and t_prev > 0
            else None
        )
        x = syncos_stage3(
            x0_refined, reversion_noise, t, t_prev, config, schedule, eps_rand
        )
        trace.add(
            StageEvent(
                step_index=k,
                timestep=int(t),
                stage=3,
                iteration=0,
                chunk_x0=np.stack(
                    [take_chunk(x0_refined, layout, i) for i in range(layout.num_chunks)]
                ),
                noise_fingerprint=_fingerprint(reversion_noise),
            )
        )
    return x, trace
