"""Pluggable noise-/velocity-prediction interface plus analytic ground-truth
denoisers.

The analytic world is an isotropic Gaussian mixture: each condition id maps to
a component mean, all components share standard deviation ``sigma0``, and the
null condition resolves to the full mixture marginal. Every prediction is the
exact posterior quantity in closed form, so sampler behavior is verifiable
without a learned model. v-prediction is not implemented; an adapter would
slot in beside the epsilon and velocity objectives.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .chunking import ChunkLayout
from .conditioning import Scenario, StructuredCondition
from .diffusion import NoiseSchedule, effective_noise

__all__ = [
    "Prediction",
    "GaussianMixtureWorld",
    "analytic_epsilon",
    "analytic_velocity",
    "cfg_combine",
    "oracle_epsilon",
    "MixtureDenoiser",
    "OracleDenoiser",
]

EPSILON = "epsilon"
VELOCITY = "velocity"


@dataclass(frozen=True)
class Prediction:
    """Denoiser output: an epsilon- or velocity-kind tensor shaped like its input."""

    kind: str
    value: np.ndarray

    def __post_init__(self):
        if self.kind not in (EPSILON, VELOCITY):
            raise ValueError(f"unknown prediction kind {self.kind!r}")
        if not np.all(np.isfinite(self.value)):
            raise ValueError("prediction value must be finite")


@dataclass(frozen=True)
class GaussianMixtureWorld:
    """Isotropic Gaussian mixture standing in for a pretrained model.

    ``means`` maps condition ids to component means; ``weights`` (aligned with
    sorted ids) are the mixture weights used by the null branch.
    """

    means: dict
    sigma0: float
    weights: np.ndarray

    def __post_init__(self):
        if self.sigma0 < 0.0:
            raise ValueError(f"sigma0 must be >= 0, got {self.sigma0}")
        if len(self.means) == 0:
            raise ValueError("world needs at least one component")
        for mu in self.means.values():
            if not np.all(np.isfinite(mu)):
                raise ValueError("component means must be finite")
        if len(self.weights) != len(self.means):
            raise ValueError("one weight per component required")
        if np.any(self.weights < 0.0):
            raise ValueError("weights must be nonnegative")
        if abs(float(np.sum(self.weights)) - 1.0) > 1e-12:
            raise ValueError("weights must sum to 1")

    @classmethod
    def from_scenario(
        cls, scenario: Scenario, sigma0: float, weights: np.ndarray | None = None
    ) -> "GaussianMixtureWorld":
        means = {i: scenario.mu(i) for i in range(scenario.num_chunks)}
        if weights is None:
            weights = np.full(scenario.num_chunks, 1.0 / scenario.num_chunks)
        return cls(means=means, sigma0=sigma0, weights=np.asarray(weights, dtype=np.float64))

    def mean_for(self, condition: StructuredCondition) -> np.ndarray:
        if condition.is_null:
            raise ValueError("the null condition does not resolve to a single component")
        if condition.component_id not in self.means:
            raise KeyError(f"unknown condition id {condition.component_id!r}")
        return self.means[condition.component_id]

    def mean_matrix(self) -> np.ndarray:
        """Component means stacked in sorted-id order, matching ``weights``."""
        ids = sorted(self.means)
        return np.stack([self.means[i] for i in ids])


def _mixture_posterior_mean(
    x: np.ndarray, means: np.ndarray, log_weights: np.ndarray, var: float
) -> np.ndarray:
    """Responsibility-weighted component mean per frame.

    ``x`` is (f, D), ``means`` is (N, D); all components share variance ``var``.
    """
    diff = x[:, None, :] - means[None, :, :]
    logits = log_weights[None, :] - np.sum(diff * diff, axis=-1) / (2.0 * var)
    logits -= logits.max(axis=1, keepdims=True)
    resp = np.exp(logits)
    resp /= resp.sum(axis=1, keepdims=True)
    return resp @ means


def analytic_epsilon(
    world: GaussianMixtureWorld,
    x_t: np.ndarray,
    c: StructuredCondition,
    t: int,
    schedule: NoiseSchedule,
) -> Prediction:
    """Exact noise prediction -sqrt(1 - abar_t) * grad log p_t(x_t | c).

    Conditionally, p_t is Normal(sqrt(abar_t) * mu_c, (abar_t * sigma0^2 +
    1 - abar_t) I) per frame. The null condition uses the score of the full
    mixture marginal via softmax-weighted component responsibilities.
    """
    if t < 1:
        raise ValueError(f"t must be >= 1, got {t}")
    ab = schedule.alpha_bars[t]
    var = ab * world.sigma0**2 + (1.0 - ab)
    scale = np.sqrt(ab)
    if c.is_null:
        means = scale * world.mean_matrix()
        log_w = np.log(world.weights)
        center = _mixture_posterior_mean(x_t, means, log_w, var)
    else:
        center = scale * world.mean_for(c)
    score = -(x_t - center) / var
    return Prediction(kind=EPSILON, value=-np.sqrt(1.0 - ab) * score)


def analytic_velocity(
    world: GaussianMixtureWorld,
    x_t: np.ndarray,
    c: StructuredCondition,
    t: float,
) -> Prediction:
    """Exact flow velocity E[eps - x0 | x_t, c] on the straight path.

    Under x_t = t*eps + (1-t)*x0 with x0 ~ Normal(mu_c, sigma0^2 I), the
    conditional expectation is ((t - (1-t)*sigma0^2) / (t^2 + (1-t)^2*sigma0^2))
    * (x_t - (1-t)*mu_c) - mu_c; for sigma0 = 0 this reduces to (x_t - mu_c)/t.
    The null condition mixes the per-component fields by responsibility.
    """
    if not (0.0 < t <= 1.0):
        raise ValueError(f"flow time must be in (0, 1], got {t}")
    a = 1.0 - t
    s2 = t * t + a * a * world.sigma0**2
    coef = (t - a * world.sigma0**2) / s2
    if c.is_null:
        means = world.mean_matrix()
        log_w = np.log(world.weights)
        if a > 0.0:
            # responsibilities over components with means a*mu_c, shared var s2
            mu_post = _mixture_posterior_mean(x_t, a * means, log_w, s2) / a
        else:
            # t = 1: x_t carries no component information, posterior = prior
            mu_post = np.broadcast_to(world.weights @ means, x_t.shape)
        # per-component field is coef*(x - a*mu_c) - mu_c, mixed by responsibility
        value = coef * (x_t - a * mu_post) - mu_post
    else:
        mu = world.mean_for(c)
        value = coef * (x_t - a * mu) - mu
    return Prediction(kind=VELOCITY, value=value)


def cfg_combine(eps_cond: Prediction, eps_null: Prediction, gamma: float) -> Prediction:
    """Classifier-free guidance: eps_null + gamma * (eps_cond - eps_null).

    gamma = 1 and gamma = 0 must return their branch exactly, so they bypass
    the arithmetic.
    """
    if eps_cond.kind != eps_null.kind:
        raise ValueError(f"prediction kinds differ: {eps_cond.kind} vs {eps_null.kind}")
    if eps_cond.value.shape != eps_null.value.shape:
        raise ValueError("prediction shapes differ")
    if gamma == 1.0:
        return eps_cond
    if gamma == 0.0:
        return eps_null
    return Prediction(
        kind=eps_cond.kind,
        value=eps_null.value + gamma * (eps_cond.value - eps_null.value),
    )


def oracle_epsilon(
    x_t: np.ndarray, x0_true: np.ndarray, t: int, schedule: NoiseSchedule
) -> Prediction:
    """Perfect denoiser: the noise implied by the true clean sample."""
    return Prediction(kind=EPSILON, value=effective_noise(x_t, x0_true, t, schedule))


class MixtureDenoiser:
    """Analytic denoiser over a Gaussian-mixture world.

    ``predict`` is pure and deterministic. In flow mode the integer grid
    timestep is mapped to the fraction t / T before evaluating the velocity
    field.
    """

    def __init__(
        self,
        world: GaussianMixtureWorld,
        schedule: NoiseSchedule,
        objective: str = EPSILON,
    ):
        if objective not in (EPSILON, "flow"):
            raise ValueError(f"objective must be 'epsilon' or 'flow', got {objective!r}")
        self.world = world
        self.schedule = schedule
        self.objective = objective

    def predict(self, chunk: np.ndarray, condition: StructuredCondition, t: int) -> Prediction:
        if self.objective == EPSILON:
            return analytic_epsilon(self.world, chunk, condition, t, self.schedule)
        return analytic_velocity(self.world, chunk, condition, t / self.schedule.T)


class OracleDenoiser:
    """Denoiser that knows the true clean sequence, for exact-inversion tests.

    Chunks are located through the condition's component id, so predictions
    work for conditional and null branches alike.
    """

    def __init__(
        self,
        x0_true: np.ndarray,
        layout: ChunkLayout,
        schedule: NoiseSchedule,
        objective: str = EPSILON,
    ):
        if objective not in (EPSILON, "flow"):
            raise ValueError(f"objective must be 'epsilon' or 'flow', got {objective!r}")
        self.x0_true = x0_true
        self.layout = layout
        self.schedule = schedule
        self.objective = objective

    def _true_chunk(self, condition: StructuredCondition) -> np.ndarray:
        i = condition.component_id
        if i is None:
            raise ValueError("oracle denoiser needs a condition with a component id")
        start = int(self.layout.starts[i])
        return self.x0_true[start : start + self.layout.chunk_len]

    def predict(self, chunk: np.ndarray, condition: StructuredCondition, t: int) -> Prediction:
        x0_chunk = self._true_chunk(condition)
        if self.objective == EPSILON:
            return oracle_epsilon(chunk, x0_chunk, t, self.schedule)
        s = t / self.schedule.T
        return Prediction(kind=VELOCITY, value=(chunk - x0_chunk) / s)
