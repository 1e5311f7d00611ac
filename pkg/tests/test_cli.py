import json
from pathlib import Path

import numpy as np
import pytest

from bmhd.cli import (
    EXIT_CONFIG,
    EXIT_GATE,
    EXIT_OK,
    ExperimentConfig,
    load_config,
    main,
    plot,
    run,
)
from bmhd.decay import DecayTrace
from bmhd.errors import ConfigError


def write_toml(path, text):
    Path(path).write_text(text)
    return str(path)


class TestConfig:
    def test_unknown_kind(self):
        with pytest.raises(ConfigError, match="kind"):
            ExperimentConfig(kind="frobnicate")

    def test_missing_input_file(self):
        with pytest.raises(ConfigError, match="no such file"):
            ExperimentConfig(kind="decay-report",
                             params={"trajectory": "/nope/missing.json"})

    def test_load_round_trip(self, tmp_path):
        cfg_path = write_toml(tmp_path / "c.toml", """
[experiment]
kind = "symbol-sweep"
seed = 7
output_dir = "out"
[params]
n_directions = 4
""")
        cfg = load_config(cfg_path)
        assert cfg.kind == "symbol-sweep"
        assert cfg.seed == 7
        assert cfg.params["n_directions"] == 4

    def test_kind_mismatch_exit_code(self, tmp_path):
        cfg_path = write_toml(tmp_path / "c.toml", """
[experiment]
kind = "symbol-sweep"
""")
        code = main(["harness", "--config", cfg_path])
        assert code == EXIT_CONFIG


class TestRunners:
    def test_symbol_sweep_and_determinism(self, tmp_path):
        outs = []
        for run_dir in ("a", "b"):
            code = main([
                "symbol-sweep",
                "--seed", "3",
                "--output-dir", str(tmp_path / run_dir),
                "--set", "n_directions=8",
                "--set", "n_magnitudes=10",
                "--set", "d=2",
            ])
            assert code == EXIT_OK
            outs.append(json.loads((tmp_path / run_dir / "manifest.json").read_text()))
        # identical content hashes for identical (config, seed)
        assert outs[0]["files"] == outs[1]["files"]
        assert outs[0]["result"]["worst_margin"] < 0

    def test_linear_decay_gate(self, tmp_path):
        base = [
            "linear-decay",
            "--seed", "1",
            "--set", "d=2",
            "--set", "n_times=8",
            "--set", "n_radial=48",
            "--set", "n_theta=8",
            "--set", "k_min=-18",
        ]
        code = main(base + ["--output-dir", str(tmp_path / "ok"),
                            "--set", "tolerance=0.1"])
        assert code == EXIT_OK
        fits = json.loads((tmp_path / "ok" / "fits.json").read_text())["fits"]
        assert fits["low_besov_s0"]["pass"]
        # an absurdly tight gate must fail with the acceptance exit code
        code = main(base + ["--output-dir", str(tmp_path / "tight"),
                            "--set", "tolerance=1e-9"])
        assert code == EXIT_GATE

    def test_simulate_then_decay_report(self, tmp_path):
        code = main([
            "simulate",
            "--seed", "5",
            "--output-dir", str(tmp_path / "sim"),
            "--set", "n=32",
            "--set", f"length={2 * np.pi * 8}",
            "--set", "dt=0.01",
            "--set", "t_end=0.3",
            "--set", "snapshot_stride=5",
        ])
        assert code == EXIT_OK
        code = main([
            "decay-report",
            "--output-dir", str(tmp_path / "rep"),
            "--set", f"trajectory={tmp_path / 'sim' / 'trajectory' / 'manifest.json'}",
        ])
        assert code == EXIT_OK
        report = json.loads((tmp_path / "rep" / "ep_dp.json").read_text())
        assert np.isfinite(report["existence_functional"]["total"])
        assert np.isfinite(report["decay_functional"]["total"])
        for value in report["existence_functional"]["parts"].values():
            assert np.isfinite(value)
        assert (tmp_path / "rep" / "norms.csv").exists()

    def test_duhamel_check(self, tmp_path):
        code = main([
            "duhamel-check",
            "--seed", "2",
            "--output-dir", str(tmp_path / "duh"),
            "--set", "n=32",
            "--set", f"length={2 * np.pi * 8}",
            "--set", "dt=0.005",
            "--set", "t_end=0.2",
            "--set", "snapshot_stride=4",
            "--set", "threshold=1e-5",
        ])
        assert code == EXIT_OK
        rep = json.loads((tmp_path / "duh" / "duhamel.json").read_text())
        assert rep["pass"]

    def test_harness_single_suite(self, tmp_path):
        code = main([
            "harness",
            "--seed", "1",
            "--output-dir", str(tmp_path / "h"),
            "--set", 'suites="convolution"',
        ])
        assert code == EXIT_OK
        rep = json.loads((tmp_path / "h" / "suite_convolution.json").read_text())
        assert rep["expected_failure"]["failed_as_designed"]


class TestPlot:
    def make_trace_csv(self, tmp_path, exponent=-0.75):
        t = np.geomspace(1, 1e3, 30)
        vals = 2.0 * (1 + t**2) ** (exponent / 2)
        trace = DecayTrace(times=t.tolist(), values={"v": vals.tolist()},
                           meta={"length": None})
        path = tmp_path / "trace.csv"
        trace.to_csv(path)
        return path

    def test_empty_series_rejected(self, tmp_path):
        path = tmp_path / "empty.csv"
        path.write_text("# meta: {}\nt,t_bracket,v\n")
        with pytest.raises(ValueError, match="empty"):
            plot(path, tmp_path / "o.svg")

    def test_malformed_csv(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("whatever,columns\n1,2\n")
        with pytest.raises(ValueError, match="line 1"):
            plot(path, tmp_path / "o.svg")

    def test_powerlaw_trace_with_reference(self, tmp_path):
        csv_path = self.make_trace_csv(tmp_path)
        fits = {"fits": {"v": {"fitted_exponent": -0.7501,
                               "predicted_exponent": -0.75}}}
        fits_path = tmp_path / "fits.json"
        fits_path.write_text(json.dumps(fits))
        out = plot(csv_path, tmp_path / "t.svg", fits_path)
        svg = Path(out).read_text()
        assert "reference slope -0.75" in svg
        assert "fit v: -0.7501" in svg
        assert svg.count("<polyline") == 1

    def test_sweep_plot_has_zero_line(self, tmp_path):
        from bmhd.semigroup import LinearParams, standard_sweep

        sweep = standard_sweep(LinearParams.for_dim(2), 4, 6)
        csv_path = tmp_path / "sweep.csv"
        sweep.write_csv(csv_path)
        out = plot(csv_path, tmp_path / "s.svg")
        svg = Path(out).read_text()
        assert "stroke-dasharray" in svg  # the zero guide line

    def test_deterministic_bytes(self, tmp_path):
        csv_path = self.make_trace_csv(tmp_path)
        a = Path(plot(csv_path, tmp_path / "a.svg")).read_bytes()
        b = Path(plot(csv_path, tmp_path / "b.svg")).read_bytes()
        assert a == b
