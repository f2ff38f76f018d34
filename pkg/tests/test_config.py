from __future__ import annotations

import json
from pathlib import Path

import pytest

from drsched.config import CONFIG_FILE_NAME, DrschedSettings, load_settings, package_cases_dir
from drsched.core.errors import ParameterError


@pytest.fixture(autouse=True)
def _clean_env(monkeypatch: pytest.MonkeyPatch) -> None:
    for name in ("DRSCHED_SOLVER", "DRSCHED_FEAS_TOL", "DRSCHED_GAP_TOL", "DRSCHED_SEGMENTS", "DRSCHED_WORKERS", "DRSCHED_DATA_DIR"):
        monkeypatch.delenv(name, raising=False)


def _write_config(config_dir: Path, obj: dict) -> None:
    config_dir.mkdir(parents=True, exist_ok=True)
    (config_dir / CONFIG_FILE_NAME).write_text(json.dumps(obj), encoding="utf-8")


def test_defaults(tmp_path: Path) -> None:
    s = load_settings(config_dir=tmp_path)
    assert s == DrschedSettings()
    assert s.solver.solver == "CLARABEL"
    assert s.segments == 10


def test_file_env_override_precedence(tmp_path: Path, monkeypatch: pytest.MonkeyPatch) -> None:
    _write_config(tmp_path, {"segments": 6, "noise_sigma": 0.3, "solver": {"solver": "SCS", "gap_tol": 1e-5}, "colour": "blue"})
    s = load_settings(config_dir=tmp_path)
    assert (s.segments, s.noise_sigma, s.solver.solver, s.solver.gap_tol) == (6, 0.3, "SCS", 1e-5)

    monkeypatch.setenv("DRSCHED_SEGMENTS", "8")
    monkeypatch.setenv("DRSCHED_SOLVER", "CLARABEL")
    s = load_settings(config_dir=tmp_path)
    assert (s.segments, s.solver.solver) == (8, "CLARABEL")

    s = load_settings(config_dir=tmp_path, segments=12, solver="SCS", beta_scaling=None)
    assert (s.segments, s.solver.solver, s.beta_scaling) == (12, "SCS", "m")
    assert s.noise_sigma == 0.3


def test_unreadable_config_is_ignored(tmp_path: Path) -> None:
    (tmp_path / CONFIG_FILE_NAME).write_text("{not json", encoding="utf-8")
    assert load_settings(config_dir=tmp_path) == DrschedSettings()


def test_bad_env_value(tmp_path: Path, monkeypatch: pytest.MonkeyPatch) -> None:
    monkeypatch.setenv("DRSCHED_FEAS_TOL", "tight")
    with pytest.raises(ParameterError, match="DRSCHED_FEAS_TOL"):
        load_settings(config_dir=tmp_path)


@pytest.mark.parametrize(
    "overrides",
    [
        {"segments": 0},
        {"noise_sigma": -0.1},
        {"noise_family": "cauchy"},
        {"beta_scaling": "log"},
        {"admm_max_iter": 0},
        {"admm_eps": 0.0},
        {"workers": 0},
        {"feasibility_tol": 0.0},
        {"large_psd_size": 0},
    ],
)
def test_validation(tmp_path: Path, overrides: dict) -> None:
    with pytest.raises(ParameterError):
        load_settings(config_dir=tmp_path, **overrides)


def test_cases_dir(monkeypatch: pytest.MonkeyPatch, tmp_path: Path) -> None:
    assert (package_cases_dir() / "case6.json").exists()
    assert (package_cases_dir() / "case30_2regions.csv").exists()
    monkeypatch.setenv("DRSCHED_DATA_DIR", str(tmp_path))
    assert package_cases_dir() == tmp_path
