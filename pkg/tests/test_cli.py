import json
from pathlib import Path

import pytest

from odelof import TestAbortedError, cli


def write_config(path: Path, **overrides) -> Path:
    # linear2d stays stable on the coarse 120-point grid these tests use
    raw = {
        "system": "linear2d",
        "n_points": 120,
        "master_seed": 17,
        "test": {"b1": 2, "b2": 9},
        "tests": ["case2"],
    }
    raw.update(overrides)
    path.write_text(json.dumps(raw))
    return path


class TestSimulate:
    def test_reruns_are_byte_identical(self, tmp_path):
        cfg = write_config(tmp_path / "c.json")
        a = tmp_path / "a.csv"
        b = tmp_path / "b.csv"
        assert cli.main(["simulate", "--config", str(cfg), "--out", str(a)]) == 0
        assert cli.main(["simulate", "--config", str(cfg), "--out", str(b)]) == 0
        assert a.read_bytes() == b.read_bytes()

    def test_seed_override_changes_data(self, tmp_path):
        cfg = write_config(tmp_path / "c.json")
        a = tmp_path / "a.csv"
        b = tmp_path / "b.csv"
        cli.main(["simulate", "--config", str(cfg), "--out", str(a)])
        cli.main(["simulate", "--config", str(cfg), "--seed", "99", "--out", str(b)])
        assert a.read_bytes() != b.read_bytes()

    def test_missing_seed_is_a_config_error(self, tmp_path, capsys):
        cfg = write_config(tmp_path / "c.json", master_seed=None)
        code = cli.main(["simulate", "--config", str(cfg), "--out", str(tmp_path / "x.csv")])
        assert code == 2
        assert "master_seed" in capsys.readouterr().err


class TestDiagnose:
    def test_internal_and_csv_runs_match(self, tmp_path, capsys):
        cfg = write_config(tmp_path / "c.json")
        run_a = tmp_path / "a"
        assert cli.main(["diagnose", "--config", str(cfg), "--out", str(run_a)]) == 0
        out = capsys.readouterr().out
        assert "case2:" in out and ("reject" in out or "retain" in out)
        assert (run_a / "config.json").exists()
        assert (run_a / "data.csv").exists()
        assert (run_a / "report_case2.json").exists()

        run_b = tmp_path / "b"
        assert (
            cli.main(
                [
                    "diagnose",
                    "--config",
                    str(cfg),
                    "--data",
                    str(run_a / "data.csv"),
                    "--out",
                    str(run_b),
                ]
            )
            == 0
        )
        # diagnosing the archived CSV reproduces the internal run exactly
        assert (run_b / "report_case2.json").read_bytes() == (
            run_a / "report_case2.json"
        ).read_bytes()

    def test_short_series_is_a_runtime_error(self, tmp_path, capsys):
        cfg = write_config(tmp_path / "c.json")
        import math

        data = tmp_path / "short.csv"
        rows = ["time,x1,x2"] + [
            f"{0.5 * i},{math.cos(0.5 * i)},{math.sin(0.5 * i)}" for i in range(30)
        ]
        data.write_text("\n".join(rows) + "\n")
        code = cli.main(
            ["diagnose", "--config", str(cfg), "--data", str(data), "--out", str(tmp_path / "o")]
        )
        assert code == 3
        assert "too few" in capsys.readouterr().err

    def test_aborted_test_exit_code(self, tmp_path, capsys, monkeypatch):
        def boom(config, out_dir, series=None):
            raise TestAbortedError("all replicates failed", n_failed=2, n_total=2)

        monkeypatch.setattr(cli, "run_diagnose", boom)
        cfg = write_config(tmp_path / "c.json")
        code = cli.main(["diagnose", "--config", str(cfg), "--out", str(tmp_path / "o")])
        assert code == 4
        assert "failed" in capsys.readouterr().err


class TestPowerStudy:
    def test_jobs_do_not_change_results(self, tmp_path):
        cfg = tmp_path / "c.json"
        cfg.write_text(
            json.dumps(
                {
                    "master_seed": 23,
                    "replicates": 2,
                    "n_points": 120,
                    "test": {"b1": 2, "b2": 9},
                    "tests": ["case2"],
                    "cells": [
                        {"system": "linear2d"},
                        {"system": "linear2d", "generator": "sde"},
                    ],
                }
            )
        )
        one = tmp_path / "one"
        two = tmp_path / "two"
        assert cli.main(["power-study", "--config", str(cfg), "--out", str(one)]) == 0
        assert (
            cli.main(
                ["power-study", "--config", str(cfg), "--jobs", "2", "--out", str(two)]
            )
            == 0
        )
        files = sorted(p.relative_to(one) for p in one.rglob("*") if p.is_file())
        assert files == sorted(p.relative_to(two) for p in two.rglob("*") if p.is_file())
        for rel in files:
            assert (one / rel).read_bytes() == (two / rel).read_bytes(), rel

        table = (one / "power_table.csv").read_text().splitlines()
        assert table[0] == (
            "cell,system,generator,test,replicates,completed,rejections,"
            "power,mc_se,n_aborted"
        )
        assert len(table) == 3  # two cells, one test each
        assert (one / "linear2d_ode" / "case2" / "rep0000.json").exists()
        assert (one / "linear2d_sde" / "case2" / "rep0001.json").exists()

    def test_cells_inherit_cli_replicate_override(self, tmp_path):
        cfg = tmp_path / "c.json"
        cfg.write_text(
            json.dumps(
                {
                    "master_seed": 31,
                    "replicates": 5,
                    "n_points": 120,
                    "test": {"b1": 2, "b2": 9},
                    "tests": ["case2"],
                    "cells": [{"system": "linear2d"}],
                }
            )
        )
        out = tmp_path / "out"
        assert (
            cli.main(
                [
                    "power-study",
                    "--config",
                    str(cfg),
                    "--replicates",
                    "1",
                    "--out",
                    str(out),
                ]
            )
            == 0
        )
        reps = list((out / "linear2d_ode" / "case2").glob("rep*.json"))
        assert len(reps) == 1


class TestExportPlots:
    def test_writes_plot_tables(self, tmp_path):
        cfg = write_config(tmp_path / "c.json")
        run = tmp_path / "run"
        assert cli.main(["diagnose", "--config", str(cfg), "--out", str(run)]) == 0
        plots = tmp_path / "plots"
        code = cli.main(
            [
                "export-plots",
                "--report",
                str(run / "report_case2.json"),
                "--data",
                str(run / "data.csv"),
                "--config",
                str(cfg),
                "--out",
                str(plots),
            ]
        )
        assert code == 0
        report = json.loads((run / "report_case2.json").read_text())
        n = report["n_obs"]
        trim = report["end_trim"]
        g_rows = (plots / "g_vs_state.csv").read_text().splitlines()
        assert len(g_rows) == n - 2 * trim + 1  # header + trimmed rows
        overlay = (plots / "series_overlay.csv").read_text().splitlines()
        assert len(overlay) == n + 1
        assert (plots / "rate_overlay.csv").exists()
        assert (plots / "h_surface.csv").exists()


class TestArgumentHandling:
    def test_requires_a_subcommand(self):
        with pytest.raises(SystemExit):
            cli.main([])

    def test_bad_json_reports_position(self, tmp_path, capsys):
        cfg = tmp_path / "broken.json"
        cfg.write_text('{"system": "linear2d",}')
        code = cli.main(["simulate", "--config", str(cfg), "--out", str(tmp_path / "x.csv")])
        assert code == 2
        assert "broken.json:1:" in capsys.readouterr().err

    def test_unknown_system_is_a_config_error(self, tmp_path, capsys):
        cfg = tmp_path / "c.json"
        cfg.write_text('{"system": "lorenz", "master_seed": 1}')
        code = cli.main(["simulate", "--config", str(cfg), "--out", str(tmp_path / "x.csv")])
        assert code == 2
        assert "system must be one of" in capsys.readouterr().err
