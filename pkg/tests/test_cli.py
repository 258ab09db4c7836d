"""Configuration parsing and command-line behavior."""

import json
import subprocess
import sys

import pytest

import fbmsde.cli as cli
from fbmsde.config import parse_config
from fbmsde.errors import ConfigError

MINIMAL_MR = {
    "seed": 7,
    "model": {
        "model": "mean_reverting",
        "a1": 1.0,
        "a2": 1.0,
        "gamma": 0.7,
        "sigma": 0.5,
        "y0": 1.0,
        "hurst": 0.7,
    },
}


def config_text(**overrides) -> str:
    cfg = json.loads(json.dumps(MINIMAL_MR))
    for key, value in overrides.items():
        if isinstance(value, dict) and key in cfg:
            cfg[key].update(value)
        else:
            cfg[key] = value
    return json.dumps(cfg)


class TestParseConfig:
    def test_minimal_config_fills_defaults(self):
        cfg = parse_config(config_text())
        assert cfg.scheme["tol_abs"] == 1e-12
        assert cfg.scheme["bracket_growth"] == 2.0
        assert cfg.scheme["method"] == "circulant"
        assert cfg.experiment["p"] == 2.0
        assert cfg.io["out_dir"] == "."
        assert len(cfg.digest) == 64

    def test_build_model(self):
        model = parse_config(config_text()).build_model()
        assert model.family == "mean_reverting"
        assert model.gamma == 0.7

    def test_gamma_out_of_range_names_path(self):
        with pytest.raises(ConfigError) as excinfo:
            parse_config(config_text(model={"gamma": 1.2}))
        assert any("$.model.gamma" in e for e in excinfo.value.errors)

    def test_unknown_key_named(self):
        bad = json.loads(config_text())
        bad["model"]["gama"] = 0.7
        with pytest.raises(ConfigError) as excinfo:
            parse_config(json.dumps(bad))
        assert any("$.model.gama" in e and "unknown" in e for e in excinfo.value.errors)

    def test_syntax_error_reports_position(self):
        with pytest.raises(ConfigError) as excinfo:
            parse_config('{"seed": 1,\n  "model": }')
        assert "line 2" in excinfo.value.errors[0]

    def test_all_errors_collected(self):
        bad = json.loads(config_text(model={"gamma": 1.2}))
        bad["extra_block"] = {}
        bad["seed"] = "not-an-int"
        with pytest.raises(ConfigError) as excinfo:
            parse_config(json.dumps(bad))
        joined = "\n".join(excinfo.value.errors)
        assert "$.model.gamma" in joined
        assert "$.extra_block" in joined
        assert "$.seed" in joined
        assert len(excinfo.value.errors) >= 3

    def test_cross_field_constraint_surfaces(self):
        cfg = {
            "seed": 1,
            "model": {
                "model": "ait_sahalia",
                "a_m1": 1.0, "a0": 1.0, "a1": 1.0, "a2": 1.0,
                "r": 2.4, "rho": 1.5,
                "sigma": 0.5, "y0": 1.0, "hurst": 0.7,
            },
        }
        with pytest.raises(ConfigError) as excinfo:
            parse_config(json.dumps(cfg))
        assert any("min(2, rho) + 1" in e for e in excinfo.value.errors)

    def test_digest_ignores_io_block(self):
        a = parse_config(config_text())
        b = parse_config(config_text(io={"out_dir": "elsewhere"}))
        assert a.digest == b.digest

    def test_seed_changes_digest(self):
        a = parse_config(config_text())
        b = parse_config(config_text(seed=8))
        assert a.digest != b.digest


def run_cli(*argv: str) -> int:
    return cli.main(list(argv))


class TestCli:
    def test_fbm_csv(self, tmp_path, capsys):
        out = tmp_path / "paths.csv"
        code = run_cli(
            "fbm", "--hurst", "0.7", "--steps", "4", "--paths", "2",
            "--seed", "3", "--out", str(out),
        )
        assert code == 0
        lines = out.read_text().splitlines()
        assert lines[0].startswith("# master_seed=3 config_digest=")
        assert lines[1] == "path_index,node_index,time,value"
        assert len(lines) == 2 + 2 * 5
        assert lines[2] == "0,0,0.0,0.0"

    def test_fbm_rerun_byte_identical(self, tmp_path):
        a, b = tmp_path / "a.csv", tmp_path / "b.csv"
        for out in (a, b):
            run_cli(
                "fbm", "--hurst", "0.7", "--steps", "8", "--paths", "3",
                "--seed", "11", "--method", "cholesky", "--out", str(out),
            )
        assert a.read_bytes() == b.read_bytes()

    def test_simulate_writes_trajectories(self, tmp_path):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(config_text(scheme={"steps": 16}))
        out = tmp_path / "sim.csv"
        code = run_cli("simulate", "--config", str(cfg), "--paths", "2", "--out", str(out))
        assert code == 0
        lines = out.read_text().splitlines()
        header = lines[1].split(",")
        assert header == [
            "path_index", "node_index", "time", "x_value", "y_value",
            "residual", "iterations",
        ]
        assert len(lines) == 2 + 2 * 17
        x_values = [float(line.split(",")[3]) for line in lines[2:]]
        assert all(v > 0.0 for v in x_values)

    def test_simulate_and_moments_reruns_byte_identical(self, tmp_path):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(config_text(scheme={"steps": 32}, experiment={"paths": 3}))
        outputs = []
        for tag in ("a", "b"):
            sim_out = tmp_path / f"sim_{tag}.csv"
            run_cli("simulate", "--config", str(cfg), "--out", str(sim_out))
            mom_dir = tmp_path / f"mom_{tag}"
            run_cli("moments", "--config", str(cfg), "--out-dir", str(mom_dir))
            outputs.append(
                (
                    sim_out.read_bytes(),
                    (mom_dir / "moments.csv").read_bytes(),
                    (mom_dir / "probe.json").read_bytes(),
                )
            )
        assert outputs[0] == outputs[1]

    def test_simulate_rejects_excessive_step(self, tmp_path, capsys):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(
            config_text(
                model={"a2": -1.0},  # h0 = 1/(|a2| (1 - gamma)) = 10/3
                scheme={"steps": 1, "horizon": 4.0},
            )
        )
        code = run_cli("simulate", "--config", str(cfg), "--out", "unused.csv")
        assert code == 1
        captured = capsys.readouterr()
        assert "h0" in captured.err

    def test_invalid_config_exits_one(self, tmp_path, capsys):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(config_text(model={"gamma": 1.2}))
        code = run_cli("simulate", "--config", str(cfg))
        assert code == 1
        assert "$.model.gamma" in capsys.readouterr().err

    def test_missing_config_flag(self, capsys):
        assert run_cli("converge") == 1

    def test_converge_writes_report_and_levels(self, tmp_path):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(
            config_text(
                experiment={"paths": 6, "k_min": 3, "k_max": 5, "k_ref": 8}
            )
        )
        out_dir = tmp_path / "results"
        code = run_cli(
            "converge", "--config", str(cfg), "--out-dir", str(out_dir),
            "--threads", "1", "--keep-paths",
        )
        assert code in (0, 3)  # tiny run may land outside the band
        report = json.loads((out_dir / "report.json").read_text())
        assert report["meta"]["master_seed"] == 7
        assert len(report["levels"]) == 3
        assert "y_interp" in report["fits"]
        levels_lines = (out_dir / "levels.csv").read_text().splitlines()
        assert levels_lines[1] == "level,h,e_mean,e_stderr"
        errors_lines = (out_dir / "errors.csv").read_text().splitlines()
        assert len(errors_lines) == 2 + 6 * 3

    def test_converge_band_failure_maps_to_exit_three(self, tmp_path, monkeypatch):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(
            config_text(experiment={"paths": 6, "k_min": 3, "k_max": 5, "k_ref": 8})
        )

        real = cli.run_strong_error

        def failing(plan, workers=1, keep_paths=False):
            report = real(plan, workers=workers, keep_paths=keep_paths)
            band = dict(report.order_band)
            band["passed"] = False
            return type(report)(
                plan=report.plan, levels=report.levels, fits=report.fits,
                targets=report.targets, order_band=band, trend_ok=report.trend_ok,
                incomplete=report.incomplete, failures=report.failures,
                per_path_errors=report.per_path_errors,
            )

        monkeypatch.setattr(cli, "run_strong_error", failing)
        code = run_cli("converge", "--config", str(cfg), "--out-dir", str(tmp_path / "o"))
        assert code == 3

    def test_converge_plan_flag_alias(self, tmp_path):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(
            config_text(experiment={"paths": 4, "k_min": 3, "k_max": 5, "k_ref": 8})
        )
        code = run_cli("converge", "--plan", str(cfg), "--out-dir", str(tmp_path / "o"))
        assert code in (0, 3)
        assert (tmp_path / "o" / "report.json").exists()

    def test_moments_outputs(self, tmp_path):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(
            config_text(scheme={"steps": 64}, experiment={"paths": 4})
        )
        out_dir = tmp_path / "m"
        code = run_cli("moments", "--config", str(cfg), "--out-dir", str(out_dir))
        assert code == 0
        probe = json.loads((out_dir / "probe.json").read_text())
        assert probe["meta"]["config_digest"]
        moments_lines = (out_dir / "moments.csv").read_text().splitlines()
        assert moments_lines[1] == "p,negative_moment,positive_moment"

    def test_verify_assumptions(self, tmp_path, capsys):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(config_text())
        assert run_cli("verify-assumptions", "--config", str(cfg)) == 0
        out = capsys.readouterr().out
        assert "one_sided_lipschitz" in out
        assert "pass" in out

    def test_module_entry_point(self, tmp_path):
        out = tmp_path / "p.csv"
        proc = subprocess.run(
            [
                sys.executable, "-m", "fbmsde", "fbm", "--hurst", "0.7",
                "--steps", "2", "--out", str(out),
            ],
            capture_output=True,
        )
        assert proc.returncode == 0
        assert out.exists()
