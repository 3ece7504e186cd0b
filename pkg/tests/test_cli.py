import json

import numpy as np
import pytest

from syncos.cli import ConfigError, compare, load_config, main, run

from conftest import DEFAULT_CONFIG


def write_config(path, **overrides):
    cfg = json.loads(DEFAULT_CONFIG.read_text())
    for key, value in overrides.items():
        section, _, field = key.partition(".")
        if field:
            cfg.setdefault(section, {})[field] = value
        else:
            cfg[section] = value
    path.write_text(json.dumps(cfg))
    return path


class TestLoadConfig:
    def test_default_config_parses(self):
        cfg = load_config(DEFAULT_CONFIG)
        assert cfg.sampler == "syncos"
        assert cfg.sampler_config.num_steps == 50
        assert cfg.layout().num_chunks == 3

    def test_overrides_applied(self, tmp_path):
        path = write_config(tmp_path / "c.json")
        cfg = load_config(path, out_override=str(tmp_path / "out"), seed_override=9)
        assert cfg.seed == 9
        assert cfg.out_dir == str(tmp_path / "out")

    def test_seed_must_live_at_top_level(self, tmp_path):
        path = write_config(tmp_path / "c.json", **{"sampler_config.seed": 3})
        with pytest.raises(ConfigError, match="top level"):
            load_config(path)

    def test_stride_exceeding_chunk_rejected(self, tmp_path):
        path = write_config(tmp_path / "c.json", **{"sampler_config.stride": 9})
        with pytest.raises(ConfigError, match="stride"):
            load_config(path)

    def test_unknown_keys_rejected(self, tmp_path):
        path = write_config(tmp_path / "c.json", extra_section=1)
        with pytest.raises(ConfigError, match="unknown config keys"):
            load_config(path)

    def test_unknown_sampler_rejected(self, tmp_path):
        path = write_config(tmp_path / "c.json", sampler="magic")
        with pytest.raises(ConfigError, match="sampler"):
            load_config(path)

    def test_num_chunks_cross_check(self, tmp_path):
        path = write_config(tmp_path / "c.json", **{"scenario.num_chunks": 5})
        with pytest.raises(ConfigError, match="num_chunks"):
            load_config(path)

    def test_minibatch_must_fit_layout(self, tmp_path):
        path = write_config(tmp_path / "c.json", **{"sampler_config.minibatch_b": 7})
        with pytest.raises(ConfigError, match="minibatch"):
            load_config(path)


class TestRun:
    def test_minimal_single_chunk_run(self, tmp_path):
        path = write_config(
            tmp_path / "c.json",
            out_dir=str(tmp_path / "out"),
            **{
                "scenario.frames": 8,
                "scenario.chunk_len": 8,
                "sampler_config.num_steps": 5,
                "sampler_config.iters": 2,
            },
        )
        out = run(path)
        metrics = json.loads((out / "metrics.json").read_text())
        assert metrics["terminal_spread_shared"] == 0.0  # single chunk
        assert np.isfinite(metrics["wall_clock_seconds"])
        assert all(np.isfinite(v) for v in metrics["local_fidelity_error"])
        for name in ("trace.csv", "trace.json", "resolved_config.json", "divergence.png", "final_sequence.csv"):
            assert (out / name).exists()

    def test_each_sampler_runs(self, tmp_path):
        for sampler in ("per_chunk_ddim", "gen_l_video", "csd_only", "syncos"):
            path = write_config(
                tmp_path / f"{sampler}.json",
                sampler=sampler,
                out_dir=str(tmp_path / sampler),
                total_iters=20,
                **{"sampler_config.num_steps": 8, "sampler_config.iters": 2},
            )
            out = run(path)
            assert (out / "metrics.json").exists()

    def test_resolved_config_regenerates_the_run(self, tmp_path):
        path = write_config(
            tmp_path / "c.json",
            out_dir=str(tmp_path / "out_a"),
            **{"sampler_config.num_steps": 6, "sampler_config.iters": 2},
        )
        out_a = run(path)
        out_b = run(out_a / "resolved_config.json", out_dir=str(tmp_path / "out_b"))
        assert (out_a / "trace.csv").read_bytes() == (out_b / "trace.csv").read_bytes()

    def test_resolved_config_echoed(self, tmp_path, capsys):
        path = write_config(
            tmp_path / "c.json",
            out_dir=str(tmp_path / "out"),
            **{"sampler_config.num_steps": 5, "sampler_config.iters": 0},
        )
        run(path, seed=123)
        echoed = json.loads(capsys.readouterr().out.strip().splitlines()[0])
        assert echoed["seed"] == 123
        written = json.loads((tmp_path / "out" / "resolved_config.json").read_text())
        assert written == echoed


class TestMainExitCodes:
    def test_invalid_constraint_exits_2_with_error_json(self, tmp_path, capsys):
        path = write_config(tmp_path / "c.json", **{"sampler_config.stride": 9})
        code = main(["run", "--config", str(path)])
        assert code == 2
        err = json.loads(capsys.readouterr().out.strip())
        assert "stride" in err["error"]["message"]

    def test_unreadable_config_exits_2(self, tmp_path, capsys):
        code = main(["run", "--config", str(tmp_path / "missing.json")])
        assert code == 2
        assert "error" in json.loads(capsys.readouterr().out.strip())

    def test_successful_run_exits_0(self, tmp_path):
        path = write_config(
            tmp_path / "c.json",
            out_dir=str(tmp_path / "out"),
            **{"sampler_config.num_steps": 5, "sampler_config.iters": 0},
        )
        assert main(["run", "--config", str(path)]) == 0


class TestCompare:
    def test_duplicate_samplers_produce_identical_rows(self, tmp_path):
        path = write_config(
            tmp_path / "c.json",
            out_dir=str(tmp_path / "out"),
            **{"sampler_config.num_steps": 6, "sampler_config.iters": 2},
        )
        out = compare(path, ["syncos", "syncos"])
        rows = json.loads((out / "summary.json").read_text())["rows"]
        assert rows[0] == rows[1]
        a = (out / "00_syncos" / "trace.csv").read_bytes()
        b = (out / "01_syncos" / "trace.csv").read_bytes()
        assert a == b

    def test_invalid_name_fails_before_any_run(self, tmp_path, capsys):
        path = write_config(tmp_path / "c.json", out_dir=str(tmp_path / "out"))
        code = main(["compare", "--config", str(path), "--samplers", "syncos,warpdrive"])
        assert code == 2
        assert not (tmp_path / "out" / "00_syncos").exists()

    def test_needs_two_samplers(self, tmp_path):
        path = write_config(tmp_path / "c.json", out_dir=str(tmp_path / "out"))
        with pytest.raises(ConfigError):
            compare(path, ["syncos"])

    def test_three_way_comparison_artifacts(self, tmp_path):
        path = write_config(
            tmp_path / "c.json",
            out_dir=str(tmp_path / "out"),
            total_iters=30,
            **{"sampler_config.num_steps": 6, "sampler_config.iters": 2},
        )
        out = compare(path, ["gen_l_video", "csd_only", "syncos"])
        summary = json.loads((out / "summary.json").read_text())
        assert [r["sampler"] for r in summary["rows"]] == ["gen_l_video", "csd_only", "syncos"]
        assert (out / "comparison.png").exists()
        assert (out / "summary.csv").read_text().splitlines()[0].startswith("sampler,")
        for sub in ("00_gen_l_video", "01_csd_only", "02_syncos"):
            assert (out / sub / "trace.csv").exists()
            assert (out / sub / "divergence.png").exists()
            metrics = json.loads((out / sub / "metrics.json").read_text())
            assert "wall_clock_seconds" not in metrics
