import logging

import pytest

from wilflow.config import (
    RunConfig,
    Settings,
    load_run_config,
    log_level_from_env,
    parse_key_values,
)
from wilflow.errors import ConfigError
from wilflow.generators import sphere
from wilflow.mesh_io import save_mesh
from wilflow.models import BoundaryCondition, TangentialMode, WMode


def write_config(tmp_path, text: str):
    path = tmp_path / "run.cfg"
    path.write_text(text)
    return path


def test_parse_key_values_skips_comments_and_blanks():
    entries = parse_key_values("# header\n\ngeometry = circle  # trailing\n dt=0.01\n")
    assert entries == {"geometry": "circle", "dt": "0.01"}


def test_parse_key_values_reports_line_numbers():
    with pytest.raises(ConfigError) as info:
        parse_key_values("dt = 0.1\njust words\ndt = 0.2\nt_end =\n")
    problems = info.value.problems
    assert problems[0].startswith("line 2:")
    assert problems[1] == "line 3: duplicate key 'dt'"
    assert problems[2].startswith("line 4:")


def test_load_generator_config(tmp_path):
    path = write_config(
        tmp_path,
        "geometry = torus\n"
        "geometry.torus.major = 2.0\n"
        "geometry.torus.minor = 0.5\n"
        "kappa_bar = -0.5\n"
        "dt = 1e-3\n"
        "t_end = 0.01\n"
        "tangential_mode = mdr\n"
        "output_dir = results\n"
        "frame_every = 5\n",
    )
    config = load_run_config(path)
    assert config.geometry.kind == "torus"
    assert config.geometry.params == {"major": 2.0, "minor": 0.5}
    assert config.tangential_mode == TangentialMode.MDR
    assert config.output_dir == tmp_path / "results"
    solver = config.solver_config()
    assert solver.kappa_bar == -0.5
    assert solver.num_steps() == 10
    assert solver.frame_every == 5
    assert solver.w_mode == WMode.VERTEX_NORMAL


def test_boundary_keys(tmp_path):
    path = write_config(
        tmp_path,
        "geometry = circle_segment\n"
        "dt = 0.01\n"
        "t_end = 0\n"
        "boundary.split = true\n"
        "boundary.1 = clamped\n",
    )
    config = load_run_config(path)
    assert config.boundary_split
    assert config.boundary_assignment == {1: BoundaryCondition.CLAMPED}
    assert config.solver_config().boundary_conditions == {1: BoundaryCondition.CLAMPED}


def test_mesh_file_paths_resolve_against_config_dir(tmp_path):
    (tmp_path / "meshes").mkdir()
    save_mesh(sphere(1), tmp_path / "meshes" / "ball.off")
    path = write_config(
        tmp_path,
        "geometry = file\ngeometry.file.path = meshes/ball.off\ndt = 0.01\nt_end = 0.02\n",
    )
    config = load_run_config(path)
    assert config.mesh_file.path == tmp_path / "meshes" / "ball.off"
    assert config.geometry is None


def test_missing_mesh_file_is_named(tmp_path):
    text = "geometry = file\ngeometry.file.path = nope.off\ndt = 0.01\nt_end = 0\n"
    path = write_config(tmp_path, text)
    with pytest.raises(ConfigError) as info:
        load_run_config(path)
    assert str(tmp_path / "nope.off") in str(info.value)


@pytest.mark.parametrize(
    "text,fragment",
    [
        ("geometry = circle\ndt = 0.01\nt_end = 0\ncolour = red\n", "colour"),
        (
            "geometry = circle\ngeometry.sphere.level = 2\ndt = 0.01\nt_end = 0\n",
            "geometry.sphere.level",
        ),
        ("dt = 0.01\nt_end = 0\n", "geometry"),
        ("geometry = circle\ndt = 0.1\nt_end = 0.05\n", "t_end"),
        ("geometry = circle\ndt = -1\nt_end = 0\n", "dt"),
        (
            "geometry = circle\ndt = 0.01\nt_end = 0\nboundary.0 = glued\n",
            "boundary_assignment",
        ),
        ("geometry = hyperboloid\ndt = 0.01\nt_end = 0\n", "hyperboloid"),
        ("geometry = circle\ndt = 0.01\nt_end = 0\nmd_resolution = 8\n", "md_resolution"),
    ],
)
def test_invalid_configs_are_rejected(tmp_path, text, fragment):
    with pytest.raises(ConfigError) as info:
        load_run_config(write_config(tmp_path, text))
    assert fragment in str(info.value)


def test_missing_config_file(tmp_path):
    with pytest.raises(ConfigError):
        load_run_config(tmp_path / "absent.cfg")


def test_run_config_requires_one_geometry_source():
    with pytest.raises(ValueError):
        RunConfig(dt=0.1, t_end=0.0)


def test_settings_from_env(monkeypatch, tmp_path):
    monkeypatch.setenv("WILFLOW_THREADS", "4")
    monkeypatch.setenv("WILFLOW_DUMP_MATRICES", str(tmp_path / "dumps"))
    monkeypatch.setenv("WILFLOW_MD_RESOLUTION", "not a number")
    settings = Settings.from_env()
    assert settings.threads == 4
    assert settings.dump_matrices_dir == tmp_path / "dumps"
    assert settings.md_resolution == 2048

    monkeypatch.setenv("WILFLOW_THREADS", "0")
    assert Settings.from_env().threads == 1
    monkeypatch.setenv("WILFLOW_MD_RESOLUTION", "8")
    with pytest.raises(RuntimeError):
        Settings.from_env()


def test_log_level_from_env(monkeypatch):
    monkeypatch.delenv("WILFLOW_LOG_LEVEL", raising=False)
    assert log_level_from_env() == logging.INFO
    monkeypatch.setenv("WILFLOW_LOG_LEVEL", "warning")
    assert log_level_from_env() == logging.WARNING
    monkeypatch.setenv("WILFLOW_LOG_LEVEL", "chatty")
    assert log_level_from_env(logging.ERROR) == logging.ERROR


def test_md_resolution_overrides_settings(tmp_path):
    path = write_config(tmp_path, "geometry = circle\ndt = 0.01\nt_end = 0\nmd_resolution = 512\n")
    config = load_run_config(path)
    assert config.md_resolution == 512
    settings = Settings(md_resolution=2048)
    assert config.apply_to(settings).md_resolution == 512
    assert settings.md_resolution == 2048
    plain = load_run_config(write_config(tmp_path, "geometry = circle\ndt = 0.01\nt_end = 0\n"))
    assert plain.apply_to(settings) is settings
