from __future__ import annotations

import json
import logging
import os
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Literal

from drsched.core.errors import ParameterError


log = logging.getLogger(__name__)

NoiseFamily = Literal["uniform", "normal"]
BetaScaling = Literal["m", "sqrt_m"]

CONFIG_FILE_NAME = "drsched.json"


@dataclass(frozen=True)
class SolverSettings:
    solver: str = "CLARABEL"
    fallback_solver: str | None = "SCS"
    feasibility_tol: float = 1e-7
    gap_tol: float = 1e-7
    max_iters: int | None = None
    verbose: bool = False
    # Programs with a PSD block larger than this go to large_psd_solver first.
    large_psd_size: int | None = 100
    large_psd_solver: str = "SCS"


@dataclass(frozen=True)
class DrschedSettings:
    solver: SolverSettings = field(default_factory=SolverSettings)
    segments: int = 10
    noise_sigma: float = 0.15
    noise_family: NoiseFamily = "uniform"
    beta_scaling: BetaScaling = "m"
    admm_max_iter: int = 500
    admm_eps: float = 1e-4
    workers: int | None = None


def _xdg_config_home() -> Path:
    env = (os.getenv("XDG_CONFIG_HOME", "") or "").strip()
    return Path(env).expanduser() if env else Path("~/.config").expanduser()


def default_config_dir() -> Path:
    env = (os.getenv("DRSCHED_CONFIG_DIR", "") or "").strip()
    return Path(env).expanduser() if env else _xdg_config_home() / "drsched"


def package_cases_dir() -> Path:
    """Directory holding the shipped network cases and partition files."""

    env = (os.getenv("DRSCHED_DATA_DIR", "") or "").strip()
    if env:
        return Path(env).expanduser()
    try:
        import importlib.resources

        base = importlib.resources.files("drsched.data")
        packaged = Path(str(base.joinpath("cases")))
        if packaged.exists():
            return packaged
    except Exception:
        pass
    return Path(__file__).resolve().parent / "data" / "cases"


# env var -> (section, key, parser)
_ENV_OVERRIDES: dict[str, tuple[str | None, str, Any]] = {
    "DRSCHED_SOLVER": ("solver", "solver", str),
    "DRSCHED_FEAS_TOL": ("solver", "feasibility_tol", float),
    "DRSCHED_GAP_TOL": ("solver", "gap_tol", float),
    "DRSCHED_SEGMENTS": (None, "segments", int),
    "DRSCHED_WORKERS": (None, "workers", int),
}


def load_settings(*, config_dir: str | Path | None = None, **overrides: Any) -> DrschedSettings:
    """Resolve settings.

    Precedence (highest to lowest):
    1) keyword overrides (typically CLI flags); solver fields may be passed directly
    2) env vars DRSCHED_SOLVER, DRSCHED_FEAS_TOL, DRSCHED_GAP_TOL, DRSCHED_SEGMENTS, DRSCHED_WORKERS
    3) drsched.json in the config dir
    4) defaults
    """

    top: dict[str, Any] = {}
    solver: dict[str, Any] = {}

    cfg_dir = Path(config_dir).expanduser() if config_dir is not None else default_config_dir()
    cfg_file = cfg_dir / CONFIG_FILE_NAME
    if cfg_file.exists():
        try:
            obj = json.loads(cfg_file.read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError):
            log.warning("Ignoring unreadable config file", extra={"path": str(cfg_file)})
            obj = None
        if isinstance(obj, dict):
            _merge_known(top, solver, obj, source=str(cfg_file))

    for env_name, (section, key, parse) in _ENV_OVERRIDES.items():
        raw = (os.getenv(env_name, "") or "").strip()
        if not raw:
            continue
        try:
            value = parse(raw)
        except ValueError as exc:
            raise ParameterError(f"{env_name}: invalid value {raw!r}") from exc
        (solver if section == "solver" else top)[key] = value

    solver_keys = {f.name for f in fields(SolverSettings)}
    for key, value in overrides.items():
        if value is None:
            continue
        if key in solver_keys:
            solver[key] = value
        else:
            top[key] = value

    settings = replace(DrschedSettings(**top), solver=SolverSettings(**solver))
    _validate_settings(settings)
    return settings


def _merge_known(top: dict[str, Any], solver: dict[str, Any], obj: dict[str, Any], *, source: str) -> None:
    top_keys = {f.name for f in fields(DrschedSettings)} - {"solver"}
    solver_keys = {f.name for f in fields(SolverSettings)}
    for key, value in obj.items():
        if key == "solver" and isinstance(value, dict):
            solver.update({k: v for k, v in value.items() if k in solver_keys})
        elif key in top_keys:
            top[key] = value
        else:
            log.debug("Unknown config key ignored", extra={"key": key, "path": source})


def _validate_settings(settings: DrschedSettings) -> None:
    s = settings.solver
    if s.feasibility_tol <= 0 or s.gap_tol <= 0:
        raise ParameterError("solver tolerances must be positive")
    if s.large_psd_size is not None and s.large_psd_size < 1:
        raise ParameterError("large_psd_size must be >= 1")
    if settings.segments < 1:
        raise ParameterError("segments must be >= 1")
    if settings.noise_sigma < 0:
        raise ParameterError("noise_sigma must be >= 0")
    if settings.noise_family not in {"uniform", "normal"}:
        raise ParameterError(f"invalid noise_family: {settings.noise_family!r}")
    if settings.beta_scaling not in {"m", "sqrt_m"}:
        raise ParameterError(f"invalid beta_scaling: {settings.beta_scaling!r}")
    if settings.admm_max_iter < 1 or settings.admm_eps <= 0:
        raise ParameterError("admm_max_iter must be >= 1 and admm_eps > 0")
    if settings.workers is not None and settings.workers < 1:
        raise ParameterError("workers must be >= 1")
