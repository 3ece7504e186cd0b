"""Synchronized coupled sampling for long-sequence diffusion.

A desk-scale, fully verifiable implementation of three-stage chunked
co-denoising and the samplers it improves on, driven by analytic
Gaussian-mixture denoisers whose correct behavior is known in closed form.
"""

from .chunking import ChunkLayout, contribution_counts, fuse, make_layout, take_chunk
from .conditioning import (
    Scenario,
    StructuredCondition,
    build_scenario,
    condition_for_chunk,
    null_condition,
)
from .denoiser import (
    GaussianMixtureWorld,
    MixtureDenoiser,
    OracleDenoiser,
    Prediction,
    analytic_epsilon,
    analytic_velocity,
    cfg_combine,
    oracle_epsilon,
)
from .diffusion import (
    NoiseSchedule,
    TimestepGrid,
    build_schedule,
    ddim_step,
    effective_noise,
    flow_forward,
    flow_step,
    forward_diffuse,
    timestep_grid,
    tweedie_x0,
)
from .distill import (
    KernelParams,
    csd_gradients,
    flow_sds_gradient,
    median_bandwidth,
    rbf_kernel,
    sds_gradient,
)
from .samplers import (
    SamplerConfig,
    sample_csd_only,
    sample_gen_l_video,
    sample_per_chunk_ddim,
    syncos_sample,
    syncos_stage1,
    syncos_stage2,
    syncos_stage3,
)
from .trace import (
    SamplerRunTrace,
    StageEvent,
    chunk_spread,
    divergence_profile,
    export_trace,
    local_fidelity_error,
)

__version__ = "0.1.0"
