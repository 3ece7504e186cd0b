"""Config-driven experiment runner.

``syncos run`` executes one sampler from a JSON config and writes the trace
(CSV plus JSON sidecar), a metrics summary, the resolved config, and a
divergence figure into the output directory. ``syncos compare`` runs several
samplers on the identical scenario and seed and adds a joint summary table
and comparison figure. Config violations and I/O failures exit nonzero with
a one-line machine-readable error JSON on stdout.

The top-level ``seed`` drives everything: two child seeds are derived from
it, one for scenario construction and one for the sampler, so targets and
sampling noise come from decorrelated streams. Wall-clock time is the only
non-reproducible output; it is confined to the metrics of ``run`` so that
``compare`` artifacts are byte-identical across equal-seed invocations.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .chunking import ChunkLayout, make_layout, take_chunk
from .conditioning import Scenario, build_scenario, condition_for_chunk
from .denoiser import GaussianMixtureWorld, MixtureDenoiser
from .diffusion import NoiseSchedule, build_schedule, timestep_grid
from .report import render_comparison_figure, render_divergence_figure
from .samplers import (
    SamplerConfig,
    sample_csd_only,
    sample_gen_l_video,
    sample_per_chunk_ddim,
    syncos_sample,
)
from .trace import (
    SamplerRunTrace,
    StageEvent,
    export_trace,
    local_fidelity_error,
    terminal_spread,
)

__all__ = ["RunConfig", "run", "compare", "main"]

SAMPLERS = ("syncos", "gen_l_video", "csd_only", "per_chunk_ddim")


class ConfigError(ValueError):
    """A config file violated a constraint; named in the error JSON."""


@dataclass(frozen=True)
class RunConfig:
    """Fully validated run description.

    ``scenario_seed`` and ``sampler_seed`` are derived from ``seed``;
    ``total_iters`` applies to the loss-fusion sampler only and defaults to
    num_steps * iters.
    """

    sampler: str
    sampler_config: SamplerConfig
    frames: int
    chunk_len: int
    dim: int
    shared_fraction: float
    sigma0: float
    T: int
    beta_min: float
    beta_max: float
    seed: int
    out_dir: str
    total_iters: int
    scenario_seed: int
    sampler_seed: int

    def layout(self) -> ChunkLayout:
        return make_layout(self.frames, self.chunk_len, self.sampler_config.stride)

    def schedule(self) -> NoiseSchedule:
        return build_schedule(self.T, self.beta_min, self.beta_max)

    def scenario(self) -> Scenario:
        return build_scenario(
            self.layout().num_chunks, self.dim, self.shared_fraction, self.scenario_seed
        )

    def to_dict(self) -> dict:
        # the echoed config is itself a valid input: the derived sampler seed
        # is documented under derived_seeds, not inside sampler_config
        sampler_config = self.sampler_config.to_dict()
        sampler_config.pop("seed")
        d = {
            "sampler": self.sampler,
            "seed": self.seed,
            "out_dir": self.out_dir,
            "sampler_config": sampler_config,
            "scenario": {
                "frames": self.frames,
                "chunk_len": self.chunk_len,
                "dim": self.dim,
                "shared_fraction": self.shared_fraction,
                "sigma0": self.sigma0,
                "num_chunks": self.layout().num_chunks,
            },
            "schedule": {"T": self.T, "beta_min": self.beta_min, "beta_max": self.beta_max},
            "total_iters": self.total_iters,
            "derived_seeds": {"scenario": self.scenario_seed, "sampler": self.sampler_seed},
        }
        return d


def _require(condition: bool, message: str) -> None:
    if not condition:
        raise ConfigError(message)


def load_config(
    path: str | Path, out_override: str | None = None, seed_override: int | None = None
) -> RunConfig:
    """Parse and validate a config file, applying CLI overrides."""
    path = Path(path)
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc

    _require(isinstance(raw, dict), "config root must be a JSON object")
    known = {"sampler", "seed", "out_dir", "sampler_config", "scenario", "schedule", "total_iters"}
    # echoed resolved configs are valid inputs; their bookkeeping keys are inert
    ignored = {"derived_seeds", "compare_samplers"}
    unknown = set(raw) - known - ignored
    _require(not unknown, f"unknown config keys: {sorted(unknown)}")

    sampler = raw.get("sampler", "syncos")
    _require(sampler in SAMPLERS, f"sampler must be one of {SAMPLERS}, got {sampler!r}")

    sc_raw = dict(raw.get("sampler_config", {}))
    _require(
        "seed" not in sc_raw,
        "seed belongs at the top level of the config, not in sampler_config",
    )
    seed = seed_override if seed_override is not None else raw.get("seed", 0)
    _require(isinstance(seed, int) and seed >= 0, f"seed must be a nonnegative integer, got {seed!r}")

    # derive decorrelated child seeds for scenario targets and sampler noise
    seeder = np.random.default_rng(seed)
    scenario_seed = int(seeder.integers(2**63))
    sampler_seed = int(seeder.integers(2**63))
    sc_raw["seed"] = sampler_seed
    try:
        sampler_config = SamplerConfig.from_dict(sc_raw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid sampler_config: {exc}") from exc

    scen = raw.get("scenario", {})
    frames = scen.get("frames", 16)
    chunk_len = scen.get("chunk_len", 8)
    dim = scen.get("dim", 8)
    shared_fraction = scen.get("shared_fraction", 0.5)
    sigma0 = scen.get("sigma0", 0.25)

    sched = raw.get("schedule", {})
    T = sched.get("T", 1000)
    beta_min = sched.get("beta_min", 1e-4)
    beta_max = sched.get("beta_max", 2e-2)

    out_dir = out_override if out_override is not None else raw.get("out_dir", "runs/out")

    # cross-field validation before any compute
    _require(1 <= chunk_len <= frames, f"need 1 <= chunk_len <= frames, got f={chunk_len}, F={frames}")
    _require(
        sampler_config.stride <= chunk_len,
        f"stride {sampler_config.stride} exceeds chunk length {chunk_len} (coverage gap)",
    )
    _require(dim >= 2, f"dim must be >= 2, got {dim}")
    _require(0.0 < shared_fraction < 1.0, f"shared_fraction must be in (0, 1), got {shared_fraction}")
    _require(sigma0 >= 0.0, f"sigma0 must be >= 0, got {sigma0}")
    _require(T >= 1, f"schedule T must be >= 1, got {T}")
    _require(sampler_config.t_min <= T, f"t_min {sampler_config.t_min} exceeds T {T}")
    _require(
        sampler_config.num_steps <= T,
        f"num_steps {sampler_config.num_steps} exceeds T {T}",
    )

    layout = make_layout(frames, chunk_len, sampler_config.stride)
    n = layout.num_chunks
    if "num_chunks" in scen:
        _require(
            scen["num_chunks"] == n,
            f"scenario num_chunks {scen['num_chunks']} does not match the layout's {n}",
        )
    if sampler_config.minibatch_b is not None:
        _require(
            sampler_config.minibatch_b <= n,
            f"minibatch_b {sampler_config.minibatch_b} exceeds chunk count {n}",
        )

    total_iters = raw.get("total_iters", sampler_config.num_steps * sampler_config.iters)
    _require(
        isinstance(total_iters, int) and total_iters >= 0,
        f"total_iters must be a nonnegative integer, got {total_iters!r}",
    )

    return RunConfig(
        sampler=sampler,
        sampler_config=sampler_config,
        frames=frames,
        chunk_len=chunk_len,
        dim=dim,
        shared_fraction=shared_fraction,
        sigma0=sigma0,
        T=T,
        beta_min=beta_min,
        beta_max=beta_max,
        seed=seed,
        out_dir=out_dir,
        total_iters=total_iters,
        scenario_seed=scenario_seed,
        sampler_seed=sampler_seed,
    )


def _execute(config: RunConfig, sampler: str) -> tuple[np.ndarray, SamplerRunTrace]:
    """Run one sampler; always returns a trace (synthesized for the control)."""
    schedule = config.schedule()
    layout = config.layout()
    scenario = config.scenario()
    world = GaussianMixtureWorld.from_scenario(scenario, config.sigma0)
    denoiser = MixtureDenoiser(world, schedule, objective=config.sampler_config.objective)
    conditions = [condition_for_chunk(scenario, i) for i in range(layout.num_chunks)]
    cfg = config.sampler_config

    if sampler == "syncos":
        return syncos_sample(denoiser, schedule, layout, conditions, cfg, config.dim, scenario)
    if sampler == "gen_l_video":
        return sample_gen_l_video(denoiser, schedule, layout, conditions, cfg, config.dim, scenario)
    if sampler == "csd_only":
        return sample_csd_only(
            denoiser, schedule, layout, conditions, cfg, config.total_iters, config.dim, scenario
        )
    if sampler == "per_chunk_ddim":
        final = sample_per_chunk_ddim(denoiser, schedule, layout, conditions, cfg, config.dim)
        # the control has no stage structure; record its terminal state only
        grid = timestep_grid(schedule, cfg.num_steps)
        trace = SamplerRunTrace(
            dim=config.dim,
            layout=layout,
            config=cfg.to_dict(),
            scenario=scenario,
            grid=[int(t) for t in grid.steps],
        )
        trace.add(
            StageEvent(
                step_index=len(grid) - 1,
                timestep=int(grid.steps[-1]),
                stage=3,
                iteration=0,
                chunk_x0=np.stack(
                    [take_chunk(final, layout, i) for i in range(layout.num_chunks)]
                ),
            )
        )
        return final, trace
    raise ConfigError(f"unknown sampler {sampler!r}")


def _metrics(sampler: str, final: np.ndarray, trace: SamplerRunTrace) -> dict:
    scenario = trace.scenario
    return {
        "sampler": sampler,
        "terminal_spread_shared": terminal_spread(trace, scenario.shared_coords),
        "terminal_spread_local": terminal_spread(trace, scenario.local_coords),
        "local_fidelity_error": local_fidelity_error(final, trace.layout, scenario),
    }


def _write_json(path: Path, obj: dict) -> None:
    path.write_text(
        json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8", newline="\n"
    )


def run(config_path: str | Path, out_dir: str | None = None, seed: int | None = None) -> Path:
    """Execute one configured run; returns the output directory."""
    config = load_config(config_path, out_override=out_dir, seed_override=seed)
    out = Path(config.out_dir)
    out.mkdir(parents=True, exist_ok=True)

    resolved = config.to_dict()
    _write_json(out / "resolved_config.json", resolved)
    print(json.dumps(resolved, sort_keys=True))

    start = time.perf_counter()
    final, trace = _execute(config, config.sampler)
    elapsed = time.perf_counter() - start

    export_trace(trace, out / "trace.csv")
    metrics = _metrics(config.sampler, final, trace)
    metrics["wall_clock_seconds"] = elapsed
    _write_json(out / "metrics.json", metrics)
    np.savetxt(out / "final_sequence.csv", final, delimiter=",", fmt="%.17g")
    render_divergence_figure(trace, out / "divergence.png", title=config.sampler)
    return out


def compare(
    config_path: str | Path,
    samplers: list[str],
    out_dir: str | None = None,
    seed: int | None = None,
) -> Path:
    """Run several samplers on the identical scenario and seed.

    Writes per-sampler traces plus a joint summary table (JSON and CSV) and a
    comparison figure. All artifacts are deterministic functions of config
    and seed.
    """
    if len(samplers) < 2:
        raise ConfigError(f"compare needs at least two samplers, got {samplers}")
    for name in samplers:
        _require(name in SAMPLERS, f"unknown sampler {name!r}; choose from {SAMPLERS}")
    config = load_config(config_path, out_override=out_dir, seed_override=seed)
    out = Path(config.out_dir)
    out.mkdir(parents=True, exist_ok=True)

    resolved = config.to_dict()
    resolved["compare_samplers"] = list(samplers)
    _write_json(out / "resolved_config.json", resolved)
    print(json.dumps(resolved, sort_keys=True))

    rows = []
    labeled_traces = []
    for idx, name in enumerate(samplers):
        sub = out / f"{idx:02d}_{name}"
        sub.mkdir(parents=True, exist_ok=True)
        final, trace = _execute(config, name)
        export_trace(trace, sub / "trace.csv")
        metrics = _metrics(name, final, trace)
        _write_json(sub / "metrics.json", metrics)
        render_divergence_figure(trace, sub / "divergence.png", title=name)
        labeled_traces.append((name, trace))
        rows.append(
            {
                "sampler": name,
                "terminal_spread_shared": metrics["terminal_spread_shared"],
                "terminal_spread_local": metrics["terminal_spread_local"],
                "local_fidelity_error_mean": float(
                    np.mean(metrics["local_fidelity_error"])
                ),
            }
        )

    _write_json(out / "summary.json", {"rows": rows})
    header = [
        "sampler",
        "terminal_spread_shared",
        "terminal_spread_local",
        "local_fidelity_error_mean",
    ]
    lines = [",".join(header)]
    for row in rows:
        lines.append(
            ",".join(
                [
                    row["sampler"],
                    f"{row['terminal_spread_shared']:.17g}",
                    f"{row['terminal_spread_local']:.17g}",
                    f"{row['local_fidelity_error_mean']:.17g}",
                ]
            )
        )
    (out / "summary.csv").write_text("\n".join(lines) + "\n", encoding="utf-8", newline="\n")
    render_comparison_figure(labeled_traces, out / "comparison.png")
    return out


def _error_json(exc: Exception) -> str:
    return json.dumps(
        {"error": {"type": type(exc).__name__, "message": str(exc)}}, sort_keys=True
    )


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(prog="syncos", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run one sampler from a config file")
    p_run.add_argument("--config", required=True)
    p_run.add_argument("--out", default=None, help="override the config's out_dir")
    p_run.add_argument("--seed", type=int, default=None, help="override the config's seed")

    p_cmp = sub.add_parser("compare", help="run several samplers on one scenario")
    p_cmp.add_argument("--config", required=True)
    p_cmp.add_argument("--samplers", required=True, help="comma-separated sampler names")
    p_cmp.add_argument("--out", default=None)
    p_cmp.add_argument("--seed", type=int, default=None)

    args = parser.parse_args(argv)
    try:
        if args.command == "run":
            run(args.config, out_dir=args.out, seed=args.seed)
        else:
            names = [s.strip() for s in args.samplers.split(",") if s.strip()]
            compare(args.config, names, out_dir=args.out, seed=args.seed)
    except ConfigError as exc:
        print(_error_json(exc))
        return 2
    except (ValueError, OSError) as exc:
        print(_error_json(exc))
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
