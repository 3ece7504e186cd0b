"""Noise schedules, forward diffusion, Tweedie estimation, DDIM stepping,
and their rectified-flow counterparts.

Sequences are plain float64 arrays of shape (F, D): F frames, each a
D-dimensional latent vector. Noise tensors share the shape of whatever they
pair with. All functions here are pure.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "NoiseSchedule",
    "TimestepGrid",
    "build_schedule",
    "timestep_grid",
    "forward_diffuse",
    "tweedie_x0",
    "ddim_step",
    "effective_noise",
    "flow_forward",
    "flow_step",
    "flow_effective_noise",
]


@dataclass(frozen=True)
class NoiseSchedule:
    """Discrete variance schedule.

    ``betas`` has length T (per-step variances, all in (0, 1)); ``alpha_bars``
    has length T+1 with ``alpha_bars[0] == 1`` and
    ``alpha_bars[t] == prod_{k<=t} (1 - beta_k)``, strictly decreasing in t.
    """

    T: int
    betas: np.ndarray
    alpha_bars: np.ndarray

    def __post_init__(self):
        if self.T < 1:
            raise ValueError(f"T must be >= 1, got {self.T}")
        if self.betas.shape != (self.T,):
            raise ValueError("betas must have length T")
        if self.alpha_bars.shape != (self.T + 1,):
            raise ValueError("alpha_bars must have length T+1")
        if not np.all(np.isfinite(self.betas)):
            raise ValueError("betas must be finite")
        if np.any(self.betas <= 0.0) or np.any(self.betas >= 1.0):
            raise ValueError("every beta must lie in (0, 1)")
        if self.alpha_bars[0] != 1.0:
            raise ValueError("alpha_bars[0] must equal 1 exactly")
        if np.any(np.diff(self.alpha_bars) >= 0.0):
            raise ValueError("alpha_bars must be strictly decreasing")
        if self.alpha_bars[-1] <= 0.0:
            raise ValueError("alpha_bars[T] must stay positive")


@dataclass(frozen=True)
class TimestepGrid:
    """Strictly decreasing integer timesteps t_K > ... > t_1, with t_K = T.

    The terminal transition (smallest entry to t=0) is taken by the sampler,
    not stored here.
    """

    steps: np.ndarray

    def __post_init__(self):
        if self.steps.ndim != 1 or len(self.steps) == 0:
            raise ValueError("grid must be a nonempty 1-D integer array")
        if np.any(np.diff(self.steps) >= 0):
            raise ValueError("grid timesteps must be strictly decreasing")

    def __len__(self) -> int:
        return len(self.steps)

    def transitions(self) -> list[tuple[int, int]]:
        """(t, t_prev) pairs down the grid, ending with a transition to 0."""
        ts = [int(t) for t in self.steps]
        return list(zip(ts, ts[1:] + [0]))


def build_schedule(T: int, beta_min: float, beta_max: float) -> NoiseSchedule:
    """Linear beta schedule with the running alpha-bar product.

    betas interpolate from ``beta_min`` to ``beta_max`` over T steps;
    ``alpha_bars[0] = 1`` is the empty product.
    """
    if not isinstance(T, (int, np.integer)) or T < 1:
        raise ValueError(f"T must be a positive integer, got {T!r}")
    if not (math.isfinite(beta_min) and math.isfinite(beta_max)):
        raise ValueError("beta bounds must be finite")
    if not (0.0 < beta_min <= beta_max < 1.0):
        raise ValueError(
            f"need 0 < beta_min <= beta_max < 1, got ({beta_min}, {beta_max})"
        )
    betas = np.linspace(beta_min, beta_max, T)
    alpha_bars = np.concatenate(([1.0], np.cumprod(1.0 - betas)))
    return NoiseSchedule(T=int(T), betas=betas, alpha_bars=alpha_bars)


def timestep_grid(schedule: NoiseSchedule, num_steps: int) -> TimestepGrid:
    """Uniformly spaced descending timesteps over (0, T], first entry T.

    Entry k (counting up from the small end) is ``ceil(T * k / num_steps)``,
    computed in integer arithmetic so the grid is exact.
    """
    T = schedule.T
    if not (1 <= num_steps <= T):
        raise ValueError(f"num_steps must be in [1, {T}], got {num_steps}")
    steps = [-(-T * k // num_steps) for k in range(num_steps, 0, -1)]
    return TimestepGrid(steps=np.asarray(steps, dtype=np.int64))


def _check_shapes(a: np.ndarray, b: np.ndarray) -> None:
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")


def _check_t(t: int, schedule: NoiseSchedule, min_t: int = 0) -> None:
    if not (min_t <= t <= schedule.T):
        raise ValueError(f"t must be in [{min_t}, {schedule.T}], got {t}")


def forward_diffuse(
    x0: np.ndarray, eps: np.ndarray, t: int, schedule: NoiseSchedule
) -> np.ndarray:
    """sqrt(abar_t) * x0 + sqrt(1 - abar_t) * eps."""
    _check_shapes(x0, eps)
    _check_t(t, schedule)
    ab = schedule.alpha_bars[t]
    return np.sqrt(ab) * x0 + np.sqrt(1.0 - ab) * eps


def tweedie_x0(
    x_t: np.ndarray, eps_pred: np.ndarray, t: int, schedule: NoiseSchedule
) -> np.ndarray:
    """Denoiser-implied clean sample (x_t - sqrt(1-abar_t) * eps_pred) / sqrt(abar_t)."""
    _check_shapes(x_t, eps_pred)
    _check_t(t, schedule, min_t=1)
    ab = schedule.alpha_bars[t]
    return (x_t - np.sqrt(1.0 - ab) * eps_pred) / np.sqrt(ab)


def ddim_step(
    x0_hat: np.ndarray,
    eps_dir: np.ndarray,
    t: int,
    t_prev: int,
    eta: float,
    eps_rand: np.ndarray | None,
    schedule: NoiseSchedule,
) -> np.ndarray:
    """One DDIM transition from t to t_prev.

    Returns ``sqrt(abar_prev) * x0_hat + sqrt(1 - abar_prev - sigma^2) * eps_dir
    + sigma * eps_rand`` with the standard
    ``sigma = eta * sqrt((1-abar_prev)/(1-abar_t)) * sqrt(1 - abar_t/abar_prev)``.
    With eta=0 the stochastic term is dropped entirely, so the step is
    bitwise deterministic and ``eps_rand`` may be None.
    """
    _check_shapes(x0_hat, eps_dir)
    _check_t(t, schedule, min_t=1)
    if not (0 <= t_prev < t):
        raise ValueError(f"need t > t_prev >= 0, got t={t}, t_prev={t_prev}")
    if not (0.0 <= eta <= 1.0):
        raise ValueError(f"eta must be in [0, 1], got {eta}")
    ab_t = schedule.alpha_bars[t]
    ab_prev = schedule.alpha_bars[t_prev]
    sigma_sq = eta * eta * (1.0 - ab_prev) / (1.0 - ab_t) * (1.0 - ab_t / ab_prev)
    if not (0.0 <= sigma_sq <= (1.0 - ab_prev) + 1e-12):
        raise ValueError(
            f"sigma^2 = {sigma_sq} outside [0, 1 - abar_prev = {1.0 - ab_prev}]; "
            "schedule is corrupt"
        )
    sigma = np.sqrt(sigma_sq)
    dir_coef = np.sqrt(max(1.0 - ab_prev - sigma_sq, 0.0))
    out = np.sqrt(ab_prev) * x0_hat
    if dir_coef > 0.0:
        out = out + dir_coef * eps_dir
    if eta == 0.0 or sigma == 0.0:
        return out
    if eps_rand is None:
        raise ValueError("eps_rand is required when eta > 0 and t_prev > 0")
    _check_shapes(x0_hat, eps_rand)
    return out + sigma * eps_rand


def effective_noise(
    x_t: np.ndarray, x0: np.ndarray, t: int, schedule: NoiseSchedule
) -> np.ndarray:
    """Noise implied by (x_t, x0): (x_t - sqrt(abar_t) * x0) / sqrt(1 - abar_t).

    Inverse of forward_diffuse on the noise argument.
    """
    _check_shapes(x_t, x0)
    _check_t(t, schedule, min_t=1)
    ab = schedule.alpha_bars[t]
    return (x_t - np.sqrt(ab) * x0) / np.sqrt(1.0 - ab)


def _check_flow_t(t: float, lo: float = 0.0) -> None:
    if not (lo <= t <= 1.0):
        raise ValueError(f"flow time must be in [{lo}, 1], got {t}")


def flow_forward(x0: np.ndarray, eps: np.ndarray, t: float) -> np.ndarray:
    """Straight-path interpolation t * eps + (1 - t) * x0, t in [0, 1]."""
    _check_shapes(x0, eps)
    _check_flow_t(t)
    return t * eps + (1.0 - t) * x0


def flow_step(x_t: np.ndarray, v_pred: np.ndarray, t: float, t_prev: float) -> np.ndarray:
    """Explicit Euler step of the reverse flow ODE: x_t + (t_prev - t) * v_pred."""
    _check_shapes(x_t, v_pred)
    _check_flow_t(t)
    if not (0.0 <= t_prev < t):
        raise ValueError(f"need 0 <= t_prev < t, got t={t}, t_prev={t_prev}")
    return x_t + (t_prev - t) * v_pred


def flow_effective_noise(x_t: np.ndarray, x0: np.ndarray, t: float) -> np.ndarray:
    """Noise implied by (x_t, x0) on the straight path: (x_t - (1-t) * x0) / t."""
    _check_shapes(x_t, x0)
    _check_flow_t(t)
    if t == 0.0:
        raise ValueError("t = 0 leaves the implied noise undefined")
    return (x_t - (1.0 - t) * x0) / t
