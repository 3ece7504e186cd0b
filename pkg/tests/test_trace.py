import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from syncos.chunking import make_layout, take_chunk
from syncos.conditioning import build_scenario
from syncos.samplers import SamplerConfig, sample_gen_l_video, syncos_sample
from syncos.trace import (
    SamplerRunTrace,
    StageEvent,
    chunk_spread,
    divergence_profile,
    export_trace,
    local_fidelity_error,
    terminal_spread,
)

from conftest import make_stack

DIM = 4


def make_trace(chunk_snapshots, layout, timesteps=None):
    """Trace with one stage-1 event per snapshot."""
    trace = SamplerRunTrace(dim=chunk_snapshots[0].shape[-1], layout=layout, config={})
    timesteps = timesteps or list(range(len(chunk_snapshots) * 10, 0, -10))
    for k, (snap, t) in enumerate(zip(chunk_snapshots, timesteps)):
        trace.add(
            StageEvent(step_index=k, timestep=t, stage=1, iteration=0, chunk_x0=snap)
        )
    return trace


class TestChunkSpread:
    def test_identical_chunks_spread_zero(self):
        layout = make_layout(6, 2, 2)
        snap = np.tile(np.arange(DIM, dtype=float), (3, 2, 1))
        trace = make_trace([snap], layout, [100])
        assert chunk_spread(trace, 100, range(DIM)) == 0.0

    def test_two_chunks_single_pair_norm(self):
        layout = make_layout(4, 2, 2)
        base = np.zeros((2, DIM))
        offset = np.array([3.0, 4.0, 0.0, 0.0])
        snap = np.stack([base, base + offset])
        trace = make_trace([snap], layout, [100])
        assert chunk_spread(trace, 100, [0, 1]) == pytest.approx(5.0)
        assert chunk_spread(trace, 100, [2, 3]) == 0.0

    def test_matches_brute_force_pairwise_oracle(self, rng):
        layout = make_layout(8, 2, 2)
        snap = rng.standard_normal((4, 2, DIM))
        trace = make_trace([snap], layout, [100])
        coords = [0, 2]
        means = snap.mean(axis=1)
        total, pairs = 0.0, 0
        for i in range(4):
            for j in range(i + 1, 4):
                diff = means[i][coords] - means[j][coords]
                total += float(np.sqrt(np.sum(diff * diff)))
                pairs += 1
        assert chunk_spread(trace, 100, coords) == pytest.approx(total / pairs, rel=1e-12)

    def test_single_chunk_spread_zero_by_convention(self, rng):
        layout = make_layout(2, 2, 2)
        trace = make_trace([rng.standard_normal((1, 2, DIM))], layout, [100])
        assert chunk_spread(trace, 100, range(DIM)) == 0.0

    def test_missing_timestep_rejected(self, rng):
        layout = make_layout(4, 2, 2)
        trace = make_trace([rng.standard_normal((2, 2, DIM))], layout, [100])
        with pytest.raises(ValueError):
            chunk_spread(trace, 55, range(DIM))

    def test_permutation_and_translation_invariance(self, rng):
        layout = make_layout(8, 2, 2)
        snap = rng.standard_normal((4, 2, DIM))
        shift = rng.standard_normal(DIM)
        perm = snap[[2, 0, 3, 1]]
        shifted = snap + shift
        coords = range(DIM)
        base = chunk_spread(make_trace([snap], layout, [9]), 9, coords)
        assert chunk_spread(make_trace([perm], layout, [9]), 9, coords) == pytest.approx(base)
        assert chunk_spread(make_trace([shifted], layout, [9]), 9, coords) == pytest.approx(base)


class TestLocalFidelityError:
    def test_exact_targets_give_zero(self):
        scenario = build_scenario(3, DIM, 0.5, 9)
        layout = make_layout(16, 8, 4)
        final = np.zeros((16, DIM))
        for i in range(3):
            lo = int(layout.starts[i])
            final[lo : lo + 8] = scenario.mu(i)
        # overlapped frames get the later chunk's target; rebuild per chunk
        errs = []
        for i in range(3):
            seq = final.copy()
            lo = int(layout.starts[i])
            seq[lo : lo + 8] = scenario.mu(i)
            errs.append(local_fidelity_error(seq, layout, scenario)[i])
        assert np.abs(errs).max() < 1e-15

    def test_displacement_scales_by_target_norm(self):
        scenario = build_scenario(2, DIM, 0.5, 9)
        layout = make_layout(8, 4, 4)
        final = np.zeros((8, DIM))
        for i in range(2):
            lo = int(layout.starts[i])
            final[lo : lo + 4] = scenario.mu(i)
        delta = np.zeros(DIM)
        delta[scenario.local_coords[0]] = 0.3
        final[:4] += delta
        errs = local_fidelity_error(final, layout, scenario)
        norm = np.linalg.norm(scenario.mu(0)[scenario.local_coords])
        assert errs[0] == pytest.approx(0.3 / norm, rel=1e-12)
        assert errs[1] == 0.0

    def test_shape_mismatch_rejected(self):
        scenario = build_scenario(2, DIM, 0.5, 9)
        layout = make_layout(8, 4, 4)
        with pytest.raises(ValueError):
            local_fidelity_error(np.zeros((7, DIM)), layout, scenario)


class TestDivergenceProfile:
    def test_single_chunk_profile_all_zero(self, rng):
        layout = make_layout(2, 2, 2)
        snaps = [rng.standard_normal((1, 2, DIM)) for _ in range(5)]
        trace = make_trace(snaps, layout)
        profile = divergence_profile(trace, range(DIM))
        assert [s for _, s in profile] == [0.0] * 5

    def test_profile_matches_pointwise_chunk_spread(self, gentle_schedule):
        layout, scenario, world, denoiser, conditions = make_stack(gentle_schedule)
        cfg = SamplerConfig(seed=3, num_steps=10)
        _, trace = sample_gen_l_video(
            denoiser, gentle_schedule, layout, conditions, cfg, 8, scenario
        )
        profile = divergence_profile(trace, scenario.shared_coords)
        assert len(profile) == len(trace.grid)
        for t, spread in profile:
            assert spread == chunk_spread(trace, t, scenario.shared_coords)

    def test_terminal_spread_is_last_profile_point(self, gentle_schedule):
        layout, scenario, world, denoiser, conditions = make_stack(gentle_schedule)
        cfg = SamplerConfig(seed=3, num_steps=10)
        _, trace = syncos_sample(
            denoiser, gentle_schedule, layout, conditions, cfg, 8, scenario
        )
        profile = divergence_profile(trace, scenario.local_coords)
        assert terminal_spread(trace, scenario.local_coords) == profile[-1][1]


class TestExportTrace:
    def test_empty_trace_writes_header_only(self, tmp_path):
        layout = make_layout(4, 2, 2)
        trace = SamplerRunTrace(dim=3, layout=layout, config={"a": 1})
        path = export_trace(trace, tmp_path / "trace.csv")
        lines = path.read_text().splitlines()
        assert len(lines) == 1
        assert lines[0].startswith("step_index,timestep,stage,iteration,chunk_id,mean_0")
        assert (tmp_path / "trace.json").exists()

    def test_round_trip_recovers_chunk_means_exactly(self, tmp_path, rng):
        layout = make_layout(8, 2, 2)
        snaps = [rng.standard_normal((4, 2, 3)) for _ in range(3)]
        trace = SamplerRunTrace(dim=3, layout=layout, config={})
        for k, snap in enumerate(snaps):
            trace.add(
                StageEvent(step_index=k, timestep=30 - k, stage=1, iteration=0, chunk_x0=snap)
            )
        path = export_trace(trace, tmp_path / "trace.csv")
        rows = path.read_text().splitlines()[1:]
        assert len(rows) == 3 * 4
        for row, (k, chunk_id) in zip(rows, [(k, c) for k in range(3) for c in range(4)]):
            cells = row.split(",")
            means = np.array([float(v) for v in cells[5:8]])
            assert_array_equal(means, snaps[k][chunk_id].mean(axis=0))

    def test_equal_seed_runs_export_identical_bytes(self, tmp_path, gentle_schedule):
        layout, scenario, world, denoiser, conditions = make_stack(gentle_schedule)
        cfg = SamplerConfig(seed=12, num_steps=8, iters=2)
        for name in ("a", "b"):
            _, trace = syncos_sample(
                denoiser, gentle_schedule, layout, conditions, cfg, 8, scenario
            )
            export_trace(trace, tmp_path / f"{name}.csv")
        assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
        assert (tmp_path / "a.json").read_bytes() == (tmp_path / "b.json").read_bytes()

    def test_unwritable_path_reports_context(self, tmp_path, rng):
        layout = make_layout(4, 2, 2)
        trace = SamplerRunTrace(dim=3, layout=layout, config={})
        missing = tmp_path / "no_such_dir" / "trace.csv"
        with pytest.raises(OSError, match="no_such_dir"):
            export_trace(trace, missing)


class TestTraceOrdering:
    def test_out_of_order_events_rejected(self, rng):
        layout = make_layout(4, 2, 2)
        trace = SamplerRunTrace(dim=3, layout=layout, config={})
        snap = rng.standard_normal((2, 2, 3))
        trace.add(StageEvent(step_index=1, timestep=10, stage=1, iteration=0, chunk_x0=snap))
        with pytest.raises(ValueError):
            trace.add(
                StageEvent(step_index=0, timestep=20, stage=1, iteration=0, chunk_x0=snap)
            )

    def test_stage_values_validated(self, rng):
        with pytest.raises(ValueError):
            StageEvent(
                step_index=0,
                timestep=10,
                stage=4,
                iteration=0,
                chunk_x0=rng.standard_normal((1, 2, 3)),
            )
