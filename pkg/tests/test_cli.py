import json

import pytest
from typer.testing import CliRunner

from wilflow import logs
from wilflow.cli import EXIT_CONFIG, app
from wilflow.sinks import DIAGNOSTICS_COLUMNS, read_diagnostics

runner = CliRunner()


@pytest.fixture(autouse=True)
def reset_logging_state():
    logs._reset_logging_for_tests()
    yield
    logs._reset_logging_for_tests()


def write_config(tmp_path, text: str, name: str = "run.cfg"):
    path = tmp_path / name
    path.write_text(text)
    return path


def error_record(output: str) -> dict:
    lines = [line for line in output.splitlines() if line.startswith("{")]
    return json.loads(lines[-1])


def test_run_with_zero_horizon_writes_initial_row(tmp_path):
    config = write_config(
        tmp_path, "geometry = circle\ngeometry.circle.elements = 12\ndt = 0.01\nt_end = 0\n"
    )
    result = runner.invoke(app, ["run", str(config)])
    assert result.exit_code == 0, result.output
    lines = (tmp_path / "output" / "diagnostics.csv").read_text().splitlines()
    assert lines[0] == ",".join(DIAGNOSTICS_COLUMNS)
    assert len(lines) == 2
    assert lines[1].startswith("0,0,")
    assert "0 steps" in result.output
    assert (tmp_path / "output" / "wilflow.log").exists()


def test_run_writes_steps_and_frames(tmp_path):
    config = write_config(
        tmp_path,
        "geometry = circle_segment\n"
        "geometry.circle_segment.elements = 16\n"
        "kappa_bar = -0.5\n"
        "dt = 0.01\n"
        "t_end = 0.02\n"
        "frame_every = 1\n"
        "output_dir = arc\n",
    )
    result = runner.invoke(app, ["run", str(config)])
    assert result.exit_code == 0, result.output
    table = read_diagnostics(tmp_path / "arc" / "diagnostics.csv")
    assert list(table["step"]) == [0, 1, 2]
    assert (table["stability_slack"] >= -1e-9).all()
    for step in range(3):
        assert (tmp_path / "arc" / f"frame_{step}.vtk").exists()


def test_run_is_deterministic(tmp_path):
    body = (
        "geometry = circle\ngeometry.circle.elements = 24\n"
        "kappa_bar = -2\ndt = 0.01\nt_end = 0.03\n"
    )
    first = write_config(tmp_path, body + "output_dir = a\n", "a.cfg")
    second = write_config(tmp_path, body + "output_dir = b\n", "b.cfg")
    assert runner.invoke(app, ["run", str(first)]).exit_code == 0
    assert runner.invoke(app, ["run", str(second)]).exit_code == 0
    a = (tmp_path / "a" / "diagnostics.csv").read_bytes()
    assert a == (tmp_path / "b" / "diagnostics.csv").read_bytes()


def test_missing_mesh_file_exits_with_config_code(tmp_path):
    config = write_config(
        tmp_path, "geometry = file\ngeometry.file.path = absent.off\ndt = 0.01\nt_end = 0\n"
    )
    result = runner.invoke(app, ["run", str(config)])
    assert result.exit_code == EXIT_CONFIG
    record = error_record(result.output)
    assert record["error"] == "config_error"
    assert "absent.off" in record["message"]


def test_runtime_failure_exits_with_one(tmp_path):
    config = write_config(
        tmp_path,
        "geometry = sphere\ngeometry.sphere.level = 1\n"
        "w_mode = kappa_squared\ndt = 0.01\nt_end = 0\n",
    )
    result = runner.invoke(app, ["run", str(config)])
    assert result.exit_code == 1
    assert error_record(result.output)["error"] == "invalid_spec"


def test_validate_reports_mesh_summary(tmp_path):
    config = write_config(tmp_path, "geometry = torus\ndt = 1e-3\nt_end = 1\n")
    result = runner.invoke(app, ["validate", str(config)])
    assert result.exit_code == 0, result.output
    assert result.output.splitlines()[0] == "OK"
    assert "d=3 J=2048" in result.output
    assert "A1 satisfied; steps=1000" in result.output


def test_validate_lists_every_problem(tmp_path):
    config = write_config(
        tmp_path,
        "geometry = sphere_cap\n"
        "w_mode = kappa_squared\n"
        "boundary.3 = clamped\n"
        "dt = 0.01\n"
        "t_end = 0\n",
    )
    result = runner.invoke(app, ["validate", str(config)])
    assert result.exit_code == EXIT_CONFIG
    message = error_record(result.output)["message"]
    assert "kappa_squared" in message
    assert "[3]" in message


def test_run_rejects_boundary_parts_the_mesh_lacks(tmp_path):
    config = write_config(
        tmp_path,
        "geometry = circle_segment\n"
        "geometry.circle_segment.elements = 16\n"
        "boundary.3 = clamped\n"
        "dt = 0.01\n"
        "t_end = 0.01\n",
    )
    result = runner.invoke(app, ["run", str(config)])
    assert result.exit_code == EXIT_CONFIG
    record = error_record(result.output)
    assert record["error"] == "config_error"
    assert "[3]" in record["message"]
    assert not (tmp_path / "output" / "diagnostics.csv").exists()


def test_validate_reports_md_resolution_from_the_file(tmp_path):
    config = write_config(
        tmp_path, "geometry = circle\ndt = 0.01\nt_end = 0\nmd_resolution = 512\n"
    )
    result = runner.invoke(app, ["validate", str(config)])
    assert result.exit_code == 0, result.output
    assert result.output.splitlines()[-1] == "md_resolution=512"


def test_converge_needs_two_levels(tmp_path):
    result = runner.invoke(app, ["converge", "closed_circle", "--levels", "1"])
    assert result.exit_code == EXIT_CONFIG
    assert "2 levels" in error_record(result.output)["message"]


def test_converge_rejects_unknown_case():
    result = runner.invoke(app, ["converge", "square", "--levels", "2"])
    assert result.exit_code == EXIT_CONFIG


def test_converge_writes_report(tmp_path):
    output = tmp_path / "reports" / "eoc.csv"
    result = runner.invoke(
        app,
        [
            "converge",
            "closed_circle",
            "--levels",
            "2",
            "--t-end",
            "0.04",
            "--base-elements",
            "8",
            "--output",
            str(output),
        ],
    )
    assert result.exit_code == 0, result.output
    assert output.read_text().splitlines()[0] == "h,dt,e_x,e_k1,e_k2,eoc_x,eoc_k1,eoc_k2"
    assert "eoc_x" in result.output
