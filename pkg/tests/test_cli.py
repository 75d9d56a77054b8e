"""Command-line interface: outputs, exit codes, and error reporting."""

import json
import re

import pytest

from cloakgan import cli as cli_mod
from cloakgan.cli import main
from cloakgan.errors import SolverError


MINI_TOML = """\
seed = 11

[forward]
epochs = 4
batch_size = 4
val_fraction = 0.25

[gan]
batch_size = 4
candidates_per_epoch = 8

[loop]
max_generations = 2
epochs_per_generation = 2
top_k = 4
initial_dataset_size = 6
"""

MICRO_TOML = """\
seed = 5

[forward]
epochs = 2
batch_size = 4
val_fraction = 0.25

[gan]
batch_size = 4
candidates_per_epoch = 4

[loop]
max_generations = 1
epochs_per_generation = 1
top_k = 2
initial_dataset_size = 4
"""


@pytest.fixture()
def mini_toml(tmp_path):
    path = tmp_path / "mini.toml"
    path.write_text(MINI_TOML)
    return str(path)


@pytest.fixture()
def micro_toml(tmp_path):
    path = tmp_path / "micro.toml"
    path.write_text(MICRO_TOML)
    return str(path)


def stderr_error(capsys):
    err = capsys.readouterr().err.strip().splitlines()
    return json.loads(err[-1])


class TestUsage:
    def test_help_exits_zero(self, capsys):
        assert main(["--help"]) == 0
        assert "subcommand" in capsys.readouterr().out or True

    def test_unknown_subcommand(self, capsys):
        assert main(["frobnicate"]) == 1
        assert stderr_error(capsys)["error"] == "UsageError"

    def test_missing_required_flag(self, capsys):
        assert main(["plot", "--run", "x"]) == 1
        assert stderr_error(capsys)["error"] == "UsageError"

    def test_missing_config_file(self, capsys):
        assert main(["baseline", "--config", "/no/such/file.toml"]) == 1
        assert stderr_error(capsys)["error"] == "FileNotFoundError"


class TestBaseline:
    def test_deviation_under_five_percent(self, tmp_path, capsys):
        config = tmp_path / "run.toml"
        config.write_text("[solver]\ngrid_resolution = 20\n")
        assert main(["baseline", "--config", str(config)]) == 0
        out = capsys.readouterr().out
        match = re.search(r"relative deviation = ([+-][\d.]+)%", out)
        assert match, out
        assert abs(float(match.group(1))) < 5.0


class TestSimulate:
    def test_anchor_record_has_ratio_one(self, finished_run, mini_toml, capsys):
        run_dir, _, _ = finished_run
        code = main(["simulate", "--config", mini_toml,
                     "--image", "0", "--dataset", str(run_dir / "initial.clk")])
        assert code == 0
        out = capsys.readouterr().out
        ratio = float(re.search(r"cloaking ratio = ([\d.]+)", out).group(1))
        assert ratio == pytest.approx(1.0, abs=1e-9)

    def test_dataset_file_argument(self, finished_run, mini_toml, capsys):
        run_dir, _, best = finished_run
        code = main(["simulate", "--config", mini_toml,
                     "--image", str(run_dir / "best.clk")])
        assert code == 0
        out = capsys.readouterr().out
        psi = float(re.search(r"psi_r = ([\d.e+-]+) W/m", out).group(1))
        assert psi == pytest.approx(best.psi_r, rel=1e-9)

    def test_index_without_dataset(self, mini_toml, capsys):
        assert main(["simulate", "--config", mini_toml, "--image", "3"]) == 1
        assert stderr_error(capsys)["error"] == "ConfigurationError"

    def test_index_out_of_range(self, finished_run, mini_toml, capsys):
        run_dir, _, _ = finished_run
        code = main(["simulate", "--config", mini_toml, "--image", "999",
                     "--dataset", str(run_dir / "initial.clk")])
        assert code == 1
        assert "out of range" in stderr_error(capsys)["message"]

    def test_solver_failure_exits_two(self, finished_run, mini_toml,
                                      monkeypatch, capsys):
        run_dir, _, _ = finished_run

        def broken(*args, **kwargs):
            raise SolverError("synthetic breakdown")

        monkeypatch.setattr(cli_mod, "_solve_one", broken)
        code = main(["simulate", "--config", mini_toml,
                     "--image", str(run_dir / "best.clk")])
        assert code == 2
        assert stderr_error(capsys)["error"] == "SolverError"


class TestDatasetAndTraining:
    def test_gen_dataset_writes_and_resumes(self, micro_toml, tmp_path, capsys):
        out = tmp_path / "init.clk"
        assert main(["gen-dataset", "--config", micro_toml, "--out", str(out)]) == 0
        assert "wrote 4 records" in capsys.readouterr().out
        first = out.read_bytes()
        assert main(["gen-dataset", "--config", micro_toml, "--out", str(out)]) == 0
        assert out.read_bytes() == first

    def test_train_forward(self, finished_run, mini_toml, tmp_path, capsys):
        run_dir, _, _ = finished_run
        out = tmp_path / "net.ckpt"
        code = main(["train-forward", "--config", mini_toml,
                     "--dataset", str(run_dir / "initial.clk"), "--out", str(out)])
        assert code == 0
        assert out.exists()
        assert (tmp_path / "net_losses.csv").exists()
        assert "final train mse" in capsys.readouterr().out


class TestLoop:
    def test_fresh_micro_run(self, micro_toml, tmp_path, capsys):
        run_dir = tmp_path / "run"
        code = main(["loop", "--config", micro_toml, "--run-dir", str(run_dir)])
        assert code == 0
        out = capsys.readouterr().out
        assert "generation 0: min psi_r" in out
        assert "best cloaking ratio" in out
        assert (run_dir / "gen_000" / "record.json").exists()
        assert (run_dir / "best.clk").exists()

    def test_resume_finished_run(self, finished_run, mini_toml, capsys):
        run_dir, records, _ = finished_run
        code = main(["loop", "--config", mini_toml, "--resume", str(run_dir)])
        assert code == 0
        out = capsys.readouterr().out
        assert f"generation {records[-1].generation}:" in out

    def test_resume_missing_directory(self, mini_toml, capsys):
        code = main(["loop", "--config", mini_toml, "--resume", "/no/such/run"])
        assert code == 1
        assert "not a run directory" in stderr_error(capsys)["message"]


class TestPlot:
    @pytest.mark.parametrize("kind", ["fields", "losses", "progress", "montage"])
    def test_kinds_render(self, finished_run, tmp_path, kind, capsys):
        run_dir, _, _ = finished_run
        out = tmp_path / f"{kind}.png"
        assert main(["plot", "--run", str(run_dir), "--kind", kind,
                     "--out", str(out)]) == 0
        assert out.stat().st_size > 0

    def test_plot_needs_run_directory(self, tmp_path, capsys):
        code = main(["plot", "--run", str(tmp_path), "--kind", "progress",
                     "--out", str(tmp_path / "x.png")])
        assert code == 1
        assert "config.json" in stderr_error(capsys)["message"]
