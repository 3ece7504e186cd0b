from pathlib import Path

import numpy as np
import pytest

from syncos.chunking import make_layout
from syncos.conditioning import build_scenario, condition_for_chunk
from syncos.denoiser import GaussianMixtureWorld, MixtureDenoiser
from syncos.diffusion import build_schedule

REPO_ROOT = Path(__file__).resolve().parents[1]
DEFAULT_CONFIG = REPO_ROOT / "configs" / "default.json"


@pytest.fixture(scope="session")
def schedule():
    return build_schedule(1000, 1e-4, 2e-2)


@pytest.fixture(scope="session")
def gentle_schedule():
    # the shipped default: keeps signal in the early-timestep window
    return build_schedule(1000, 1e-4, 7.5e-4)


@pytest.fixture()
def rng():
    return np.random.default_rng(1234)


def make_world(num_chunks=3, dim=8, sigma0=0.25, seed=42):
    scenario = build_scenario(num_chunks, dim, 0.5, seed)
    world = GaussianMixtureWorld.from_scenario(scenario, sigma0)
    return scenario, world


def make_stack(schedule, F=16, f=8, s=4, dim=8, sigma0=0.25, seed=42):
    """Layout, scenario, world, denoiser, and per-chunk conditions in one go."""
    layout = make_layout(F, f, s)
    scenario = build_scenario(layout.num_chunks, dim, 0.5, seed)
    world = GaussianMixtureWorld.from_scenario(scenario, sigma0)
    denoiser = MixtureDenoiser(world, schedule)
    conditions = [condition_for_chunk(scenario, i) for i in range(layout.num_chunks)]
    return layout, scenario, world, denoiser, conditions
