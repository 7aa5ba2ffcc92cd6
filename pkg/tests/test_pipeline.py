import shutil

import pytest
from click.testing import CliRunner

from gridmor.__main__ import cli
from gridmor.pipeline.compare import parse_orders
from gridmor.pipeline.project import ConfigError, load_basis, load_experiment, load_project, load_trajectory
from gridmor.utils.files import read_csv, read_json

EXPERIMENTS = """
[experiments]

[experiments.quick]
key = 'quick'
grid = 'grids/nine_bus.toml'
horizon = 1.0
record_dt = 0.02

[experiments.quick.scenario]
kind = 'load-step'
delta = 0.005
onset = 0.2

[experiments.quick.solver]
h = 0.01

[experiments.quick.reduction]
method = 'sp-pod'

[experiments.quick.compare]
orders = ['2', 'full']

[experiments.quick_bpod]
key = 'quick_bpod'
grid = 'grids/nine_bus.toml'
horizon = 1.0
record_dt = 0.02

[experiments.quick_bpod.scenario]
kind = 'load-step'
delta = 0.005
onset = 0.2

[experiments.quick_bpod.solver]
h = 0.01

[experiments.quick_bpod.reduction]
method = 'sp-bpod'

[experiments.quick_bpod.gramians]
magnitudes = [1.0]
horizon = 1.0
dt = 0.02
pod_modes = 10

[experiments.broken]
key = 'broken'
grid = 'grids/nine_bus.toml'

[experiments.broken.reduction]
method = 'truncation'
"""


@pytest.fixture
def project(tmp_path, monkeypatch, grid_file):
    (tmp_path / "grids").mkdir()
    shutil.copy(grid_file, tmp_path / "grids" / "nine_bus.toml")
    (tmp_path / "config.toml").write_text(
        "[project]\n"
        "name = 'test'\n\n"
        "[project.path]\n"
        f"config = '{tmp_path.as_posix()}'\n"
        f"data = '{(tmp_path / 'data').as_posix()}'\n\n"
        "[project.environment]\n"
        "n_jobs = 2\n"
    )
    (tmp_path / "experiments.toml").write_text(EXPERIMENTS)
    monkeypatch.setenv("GRIDMOR_PROJECT_PATH", str(tmp_path))
    monkeypatch.delenv("GRIDMOR_OUTPUT_PATH", raising=False)
    return tmp_path


def run(*args):
    return CliRunner().invoke(cli, list(args))


def test_project_and_experiment_settings(project):
    config = load_project()
    assert config["path"]["data"] == project / "data"
    settings = load_experiment("quick")
    assert settings.settings["reduction"]["energy_d"] == 0.99
    assert settings.settings["scenario"] == {"kind": "load-step", "delta": 0.005, "onset": 0.2}
    assert settings.settings["reduction"]["deviation"] is True
    assert settings.solver_options.h == 0.01
    assert settings.n_jobs == 2
    assert settings.header(stage="x")["config_hash"] == settings.config_hash()


def test_output_path_override(project, tmp_path_factory, monkeypatch):
    elsewhere = tmp_path_factory.mktemp("elsewhere")
    monkeypatch.setenv("GRIDMOR_OUTPUT_PATH", str(elsewhere))
    assert load_experiment("quick").path == elsewhere / "quick"


def test_configuration_errors(project, monkeypatch):
    with pytest.raises(ConfigError):
        load_experiment("missing")
    with pytest.raises(ConfigError):
        load_experiment("broken")
    monkeypatch.delenv("GRIDMOR_PROJECT_PATH")
    with pytest.raises(ConfigError):
        load_project()


def test_parse_orders():
    assert parse_orders("2, 4,full", 40) == [2, 4, 40]


def test_sp_pod_pipeline(project):
    data = project / "data" / "quick"

    result = run("simulate", "--experiment", "quick")
    assert result.exit_code == 0, result.output
    fom = load_trajectory(data / "fom_trajectory.parquet")
    assert fom.n_records == 51
    assert read_json(data / "fom_diagnostics.json")["scenario"] == "load-step"

    result = run("reduce", "--experiment", "quick")
    assert result.exit_code == 0, result.output
    basis = load_basis(data)
    assert basis.r_d <= basis.n_d / 3
    assert basis.r_a <= basis.n_a / 4
    assert basis.deim is not None
    assert basis.deim.offset is not None
    assert (data / "deim_indices.txt").exists()
    first = (data / "basis" / "W_R.parquet").read_bytes()

    result = run("hsv-report", "--experiment", "quick")
    assert result.exit_code == 0, result.output
    table, header = read_csv(data / "hsv_dynamic.csv")
    assert header["experiment"] == "quick"
    assert list(table["order"])[:3] == [1, 2, 3]

    result = run("rom-sim", "--experiment", "quick")
    assert result.exit_code == 0, result.output
    rom = load_trajectory(data / "rom_trajectory.parquet")
    assert rom.state_names == fom.state_names

    result = run("compare", "--experiment", "quick", "--sweep")
    assert result.exit_code == 0, result.output
    comparison = read_json(data / "comparison.json")
    assert 0 <= comparison["rmse"] <= 0.05
    assert set(comparison["epsilon"]) == {"conventional", "solar", "motor", "algebraic"}
    sweep, _ = read_csv(data / "sweep.csv")
    assert list(sweep["r_d"]) == [2, 40]
    assert sweep["rmse"].notna().all()
    assert (data / "error_norm.png").exists()
    assert set(read_json(data / "timings.json")) >= {"fom", "reduce", "rom"}

    result = run("report", "--experiment", "quick")
    assert result.exit_code == 0, result.output
    assert "RMSE" in result.output

    # the same settings give the same basis bytes
    result = run("reduce", "--experiment", "quick")
    assert result.exit_code == 0, result.output
    assert (data / "basis" / "W_R.parquet").read_bytes() == first

    # an order the basis cannot provide fails the stage but keeps the table
    result = run("compare", "--experiment", "quick", "--orders", "2,99")
    assert result.exit_code != 0
    assert "99" in result.output
    sweep, _ = read_csv(data / "sweep.csv")
    assert list(sweep["r_d"]) == [2, 99]
    assert sweep["rmse"].isna().tolist() == [False, True]


def test_sp_bpod_pipeline(project):
    data = project / "data" / "quick_bpod"
    result = run("simulate", "--experiment", "quick_bpod")
    assert result.exit_code == 0, result.output
    result = run("gramians", "--experiment", "quick_bpod")
    assert result.exit_code == 0, result.output
    assert (data / "G_c.parquet").exists()
    assert (data / "scaling.parquet").exists()

    result = run("reduce", "--experiment", "quick_bpod")
    assert result.exit_code == 0, result.output
    basis = load_basis(data)
    assert basis.method == "sp-bpod"
    assert basis.r_d <= basis.n_d / 3
    basis.check_structure(tol=1e-8)
    summary = read_json(data / "balance_summary.json")
    assert sum(summary["categories"].values()) == 40

    result = run("rom-sim", "--experiment", "quick_bpod")
    assert result.exit_code == 0, result.output
    result = run("compare", "--experiment", "quick_bpod")
    assert result.exit_code == 0, result.output
    balanced = read_json(data / "comparison.json")["rmse"]

    # POD on the same step as the yardstick
    for stage in (["reduce", "--method", "sp-pod"], ["rom-sim"], ["compare"]):
        result = run(*stage, "--experiment", "quick_bpod")
        assert result.exit_code == 0, result.output
    pod = read_json(data / "comparison.json")["rmse"]
    assert balanced <= 10.0 * pod


def test_console_entry_loads_dotenv(project, monkeypatch):
    (project / ".env").write_text(f"GRIDMOR_PROJECT_PATH={project.as_posix()}\n")
    monkeypatch.delenv("GRIDMOR_PROJECT_PATH")
    monkeypatch.chdir(project)
    result = run("report", "--experiment", "quick")
    assert result.exit_code == 0, result.output
    assert "missing artifacts" in result.output


def test_report_lists_missing_artifacts(project):
    result = run("report", "--experiment", "quick")
    assert result.exit_code == 0
    assert "missing artifacts" in result.output
    assert "full-order trajectory" in result.output


def test_unknown_method_fails(project):
    result = run("reduce", "--experiment", "quick", "--method", "truncation")
    assert result.exit_code != 0
    result = run("simulate", "--experiment", "broken")
    assert result.exit_code != 0
