from __future__ import annotations

import argparse
import logging
import sys
import uuid
from pathlib import Path
from typing import Any

from drsched.config import load_settings
from drsched.core.admm.consensus import write_trace_csv
from drsched.core.errors import INPUT_ERRORS, DrschedError, ParameterError
from drsched.core.experiments.sweep import MODELS, write_sweep_csv
from drsched.core.network.models import NetworkCase
from drsched.core.pricing.scenarios import ScenarioSet, write_scenarios
from drsched.core.service import SchedulingService, parse_generate
from drsched.core.util.stablejson import dumps, write_json
from drsched.logging import TRACE_LEVEL, parse_log_level, run_context, setup_logging
from drsched.runlog import TeeTextIO, create_run_log_dir


log = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_SOLVER = 3


def main(argv: list[str] | None = None) -> None:
    parser = argparse.ArgumentParser(prog="drsched", description="Distributionally robust CVaR self-scheduling.")
    _add_logging_args(parser)
    parser.add_argument("--config-dir", default=None, help="Override config dir (default: ~/.config/drsched)")

    sub = parser.add_subparsers(dest="cmd", required=True)

    solve_p = sub.add_parser("solve", help="Solve one scheduling model")
    _add_logging_args(solve_p)
    _add_case_args(solve_p)
    _add_scenario_args(solve_p)
    _add_model_args(solve_p)
    solve_p.add_argument("--model", choices=list(MODELS), default="exact")
    solve_p.add_argument("--beta", type=float, default=0.95, help="CVaR confidence level in (0, 1)")
    solve_p.add_argument("--delta", type=float, default=0.1, help="Ambiguity confidence parameter in (0, 1)")
    solve_p.add_argument("--out", default=None, help="Output directory for result.json (and admm_trace.csv)")

    sweep_p = sub.add_parser("sweep", help="Run a delta/beta/model grid")
    _add_logging_args(sweep_p)
    _add_case_args(sweep_p)
    _add_scenario_args(sweep_p)
    _add_model_args(sweep_p)
    sweep_p.add_argument("--sweep", required=True, help='Grid, e.g. "deltas=0.1,0.2;betas=0.9,0.95"')
    sweep_p.add_argument("--models", default="exact", help=f"Comma-separated subset of {','.join(MODELS)}")
    sweep_p.add_argument("--workers", type=int, default=1, help="Sweep cells solved in parallel")
    sweep_p.add_argument("--no-timing", action="store_true", help="Leave timing columns out of sweep.csv")
    sweep_p.add_argument("--out", default=None, help="Output directory for sweep.csv")

    scen_p = sub.add_parser("scenarios", help="Generate a price scenario CSV")
    _add_logging_args(scen_p)
    _add_case_args(scen_p)
    scen_p.add_argument("--generate", required=True, help="M,sigma,seed")
    scen_p.add_argument("--family", choices=["uniform", "normal"], default=None)
    scen_p.add_argument("--out", required=True, help="CSV path")

    case_p = sub.add_parser("case", help="Summarise a network case")
    _add_logging_args(case_p)
    _add_case_args(case_p)

    args = parser.parse_args(argv)

    level_name: str | None = getattr(args, "log_level", None)
    if getattr(args, "trace", False):
        level = TRACE_LEVEL
    elif getattr(args, "verbose", False):
        level = logging.DEBUG
    else:
        level = parse_log_level(level_name)

    run_id = uuid.uuid4().hex[:12]

    log_file = getattr(args, "log_file", None)
    result_fh = None
    stdout_orig = sys.stdout
    code = EXIT_OK
    try:
        if getattr(args, "log_dir", None):
            argv_for_meta = [parser.prog] + (list(argv) if argv is not None else sys.argv[1:])
            runlog = create_run_log_dir(str(args.log_dir), run_id=run_id, argv=argv_for_meta)
            if not log_file:
                log_file = str(runlog.log_path)
            result_fh = open(runlog.result_path, "w", encoding="utf-8")
            sys.stdout = TeeTextIO(sys.stdout, result_fh)

        setup_logging(
            level=level,
            log_format=str(getattr(args, "log_format", "pretty") or "pretty"),
            log_file=log_file,
            no_color=bool(getattr(args, "no_color", False)),
        )

        with run_context(run_id):
            log.debug("CLI start", extra={"cmd": args.cmd, "run_id": run_id})
            code = _run(args)
    finally:
        sys.stdout = stdout_orig
        if result_fh is not None:
            result_fh.flush()
            result_fh.close()
    raise SystemExit(code)


def _run(args: argparse.Namespace) -> int:
    try:
        return _dispatch(args)
    except INPUT_ERRORS as exc:
        log.error("Input error", extra={"kind": exc.kind, "error": str(exc)})
        _print_json({"ok": False, "error": str(exc), "kind": exc.kind})
        return EXIT_INPUT
    except DrschedError as exc:
        log.error("Solve failed", extra={"kind": exc.kind, "error": str(exc)})
        _print_json({"ok": False, "error": str(exc), "kind": exc.kind})
        return EXIT_SOLVER


def _dispatch(args: argparse.Namespace) -> int:
    settings = load_settings(
        config_dir=args.config_dir,
        segments=getattr(args, "segments", None),
        solver=getattr(args, "solver", None),
        beta_scaling=getattr(args, "beta_scaling", None),
        admm_eps=getattr(args, "admm_eps", None),
        admm_max_iter=getattr(args, "admm_max_iter", None),
    )
    service = SchedulingService(settings)
    case = service.load_case(args.case, horizon=getattr(args, "horizon", None))

    if args.cmd == "case":
        _print_json({"ok": True, **service.case_summary(case)})
        return EXIT_OK

    if args.cmd == "scenarios":
        count, sigma, seed = parse_generate(args.generate)
        scenarios = service.generate_scenarios(case, count, sigma=sigma, seed=seed, family=args.family)
        path = write_scenarios(args.out, scenarios)
        _print_json({"ok": True, "path": str(path), "samples": scenarios.count, "dim": scenarios.dim})
        return EXIT_OK

    scenarios = _load_scenarios(service, case, args)
    gammas = _gammas(args)
    partition = service.load_partition(case, args.partition) if args.partition or _uses_admm(args) else None

    if args.cmd == "solve":
        report = service.solve(
            case,
            scenarios,
            model=args.model,
            beta=args.beta,
            delta=args.delta,
            pieces=args.pieces,
            partition=partition,
            gammas=gammas,
        )
        payload = report.to_dict(case)
        if args.out:
            out = Path(args.out).expanduser()
            write_json(out / "result.json", payload)
            if report.trace:
                write_trace_csv(out / "admm_trace.csv", report.trace)
        _print_json(payload)
        return EXIT_OK if report.decision.ok else EXIT_SOLVER

    if args.cmd == "sweep":
        deltas, betas = parse_sweep(args.sweep)
        models = [m.strip() for m in str(args.models).split(",") if m.strip()]
        result = service.sweep(
            case,
            scenarios,
            deltas=deltas,
            betas=betas,
            models=models,
            pieces=args.pieces,
            partition=partition,
            gammas=gammas,
            workers=args.workers,
        )
        if args.out:
            write_sweep_csv(Path(args.out).expanduser() / "sweep.csv", result, timing=not args.no_timing)
        _print_json({"ok": True, **result.to_dict()})
        return EXIT_OK

    raise ParameterError(f"unknown command: {args.cmd}")


def parse_sweep(value: str) -> tuple[list[float], list[float]]:
    """``"deltas=0.1,0.2;betas=0.9,0.95"`` -> (deltas, betas)."""

    grid: dict[str, list[float]] = {}
    for part in str(value or "").split(";"):
        part = part.strip()
        if not part:
            continue
        key, sep, raw = part.partition("=")
        key = key.strip().lower()
        if not sep or key not in {"deltas", "betas"}:
            raise ParameterError(f"--sweep: expected 'deltas=...;betas=...', got {part!r}")
        try:
            grid[key] = [float(v) for v in raw.split(",") if v.strip()]
        except ValueError:
            raise ParameterError(f"--sweep: {key} must be numbers, got {raw!r}") from None
    if not grid.get("deltas") or not grid.get("betas"):
        raise ParameterError("--sweep: both deltas and betas need at least one value")
    return grid["deltas"], grid["betas"]


def _uses_admm(args: argparse.Namespace) -> bool:
    if args.cmd == "solve":
        return args.model == "admm"
    return "admm" in str(getattr(args, "models", ""))


def _load_scenarios(service: SchedulingService, case: NetworkCase, args: argparse.Namespace) -> ScenarioSet:
    if args.scenarios and args.generate:
        raise ParameterError("pass either --scenarios or --generate, not both")
    if args.scenarios:
        return service.load_scenarios(args.scenarios, case)
    if args.generate:
        count, sigma, seed = parse_generate(args.generate)
        return service.generate_scenarios(case, count, sigma=sigma, seed=seed)
    raise ParameterError("one of --scenarios or --generate is required")


def _gammas(args: argparse.Namespace) -> tuple[float, float] | None:
    g1, g2 = getattr(args, "gamma1", None), getattr(args, "gamma2", None)
    if g1 is None and g2 is None:
        return None
    if g1 is None or g2 is None:
        raise ParameterError("--gamma1 and --gamma2 must be given together")
    return float(g1), float(g2)


def _add_case_args(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--case", required=True, help="Case JSON path or shipped case name (case6, case30)")
    parser.add_argument("--horizon", type=int, default=None, help="Use only the first T periods")
    parser.add_argument("--segments", type=int, default=None, help="Piecewise cost segments L (default: 10)")
    parser.add_argument("--solver", default=None, help="Conic solver name (default: CLARABEL)")


def _add_scenario_args(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--scenarios", default=None, help="Scenario CSV (header u<i>_t<t>)")
    parser.add_argument("--generate", default=None, help="Generate scenarios in-process: M,sigma,seed")


def _add_model_args(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--pieces", type=int, default=2, help="Split model piece count")
    parser.add_argument("--partition", default=None, help="Partition CSV (bus_id,region_id) or shipped partition name")
    parser.add_argument("--gamma1", type=float, default=None, help="Explicit mean ambiguity radius")
    parser.add_argument("--gamma2", type=float, default=None, help="Explicit covariance ambiguity factor (>= 1)")
    parser.add_argument("--beta-scaling", choices=["m", "sqrt_m"], default=None)
    parser.add_argument("--admm-eps", type=float, default=None, help="ADMM residual tolerance before scaling (default: 1e-4)")
    parser.add_argument("--admm-max-iter", type=int, default=None, help="ADMM iteration limit (default: 500)")


def _add_logging_args(parser: argparse.ArgumentParser) -> None:
    # SUPPRESS defaults keep root-level flags from being overwritten by subparser defaults.
    parser.add_argument(
        "--log-level",
        choices=["error", "warning", "info", "debug", "trace"],
        default=argparse.SUPPRESS,
        help="Logging level (default: info)",
    )
    parser.add_argument("-v", "--verbose", action="store_true", default=argparse.SUPPRESS, help="Alias for --log-level=debug")
    parser.add_argument("--trace", action="store_true", default=argparse.SUPPRESS, help="Alias for --log-level=trace")
    parser.add_argument("--log-file", default=argparse.SUPPRESS, help="Optional log file path")
    parser.add_argument(
        "--log-dir",
        default=argparse.SUPPRESS,
        help="Optional directory to create a per-run log bundle (drsched.log, result.json, metadata.json)",
    )
    parser.add_argument("--log-format", choices=["pretty", "json"], default=argparse.SUPPRESS, help="Log output format (default: pretty)")
    parser.add_argument("--no-color", action="store_true", default=argparse.SUPPRESS, help="Disable ANSI colors in pretty logs")


def _print_json(payload: dict[str, Any]) -> None:
    sys.stdout.write(dumps(payload, pretty=True))
