from __future__ import annotations

import json
import logging
import math
from pathlib import Path
from typing import Any

import numpy as np

from drsched.config import package_cases_dir
from drsched.core.errors import CaseError
from drsched.core.network.models import GeneratorSpec, Line, NetworkCase


log = logging.getLogger(__name__)

_CASE_KEYS = {"buses", "lines", "generators", "loads", "ref_bus"}
_CASE_OPTIONAL = {"horizon", "name", "notes", "source"}
_LINE_KEYS = {"from", "to", "x"}
_LINE_OPTIONAL = {"fmax", "name"}
_GEN_KEYS = {"bus", "pmin", "pmax", "a", "b", "c", "rup", "rdn"}
_GEN_OPTIONAL = {"p0", "name"}


def parse_case(path: str | Path) -> NetworkCase:
    """Read and validate a JSON network case file."""

    p = Path(path).expanduser()
    obj = _read_json(p)
    case = parse_case_dict(obj, source=str(p), default_name=p.stem)
    log.info(
        "Case loaded",
        extra={"case": case.name, "buses": case.n_buses, "lines": len(case.lines), "units": case.n_generators, "periods": case.horizon},
    )
    return case


def load_packaged_case(name: str) -> NetworkCase:
    """Load one of the shipped cases by stem (``case6``, ``case30``)."""

    stem = name[:-5] if name.endswith(".json") else name
    return parse_case(package_cases_dir() / f"{stem}.json")


def parse_case_dict(obj: dict[str, Any], *, source: str = "<case>", default_name: str = "case") -> NetworkCase:
    _require_keys(source, obj, required=_CASE_KEYS, optional=_CASE_OPTIONAL)

    bus_ids = _parse_buses(source, obj["buses"])
    index = {bus_id: i for i, bus_id in enumerate(bus_ids)}
    n = len(bus_ids)

    ref_raw = obj["ref_bus"]
    if isinstance(ref_raw, list):
        if len(ref_raw) != 1:
            raise CaseError(f"{source}: ref_bus must name exactly one bus, got {len(ref_raw)}")
        ref_raw = ref_raw[0]
    ref_bus = _bus_index(source, index, ref_raw, "ref_bus")

    lines_raw = obj["lines"]
    if not isinstance(lines_raw, list):
        raise CaseError(f"{source}: lines must be a list")
    lines = tuple(_parse_line(source, index, i, item) for i, item in enumerate(lines_raw))

    gens_raw = obj["generators"]
    if not isinstance(gens_raw, list):
        raise CaseError(f"{source}: generators must be a list")
    generators = tuple(_parse_generator(source, index, i, item) for i, item in enumerate(gens_raw))
    seen: set[int] = set()
    for i, gen in enumerate(generators):
        if gen.bus in seen:
            raise CaseError(f"{source}: generators[{i}].bus duplicates another generator bus ({bus_ids[gen.bus]})")
        seen.add(gen.bus)

    loads = _parse_loads(source, obj["loads"], n)
    horizon = obj.get("horizon")
    if horizon is not None:
        if not isinstance(horizon, int) or isinstance(horizon, bool) or horizon != loads.shape[1]:
            raise CaseError(f"{source}: horizon must equal the number of load columns ({loads.shape[1]})")

    name = obj.get("name")
    return NetworkCase(
        n_buses=n,
        lines=lines,
        generators=generators,
        loads=loads,
        ref_bus=ref_bus,
        name=name if isinstance(name, str) and name else default_name,
        bus_ids=tuple(bus_ids),
    )


def _parse_buses(source: str, raw: Any) -> list[int]:
    if isinstance(raw, int) and not isinstance(raw, bool):
        if raw < 1:
            raise CaseError(f"{source}: buses must be >= 1")
        return list(range(1, raw + 1))
    if not isinstance(raw, list) or not raw:
        raise CaseError(f"{source}: buses must be a positive integer or a non-empty list of bus ids")
    ids: list[int] = []
    for i, item in enumerate(raw):
        if not isinstance(item, int) or isinstance(item, bool):
            raise CaseError(f"{source}: buses[{i}] must be an integer id")
        ids.append(int(item))
    if len(set(ids)) != len(ids):
        raise CaseError(f"{source}: buses contains duplicate ids")
    return ids


def _bus_index(source: str, index: dict[int, int], raw: Any, where: str) -> int:
    if not isinstance(raw, int) or isinstance(raw, bool):
        raise CaseError(f"{source}: {where} must be an integer bus id")
    try:
        return index[int(raw)]
    except KeyError:
        raise CaseError(f"{source}: {where} refers to unknown bus {raw}") from None


def _parse_line(source: str, index: dict[int, int], i: int, item: Any) -> Line:
    where = f"lines[{i}]"
    if not isinstance(item, dict):
        raise CaseError(f"{source}: {where} must be an object")
    _require_keys(source, item, required=_LINE_KEYS, optional=_LINE_OPTIONAL, prefix=where)
    a = _bus_index(source, index, item["from"], f"{where}.from")
    b = _bus_index(source, index, item["to"], f"{where}.to")
    if a == b:
        raise CaseError(f"{source}: {where} connects bus {item['from']} to itself")
    x = _require_number(source, item, "x", prefix=where)
    if x < 0:
        raise CaseError(f"{source}: {where}.x must be >= 0")
    fmax_raw = item.get("fmax")
    fmax = math.inf if fmax_raw is None else _require_number(source, item, "fmax", prefix=where)
    if fmax < 0:
        raise CaseError(f"{source}: {where}.fmax must be >= 0")
    return Line(from_bus=a, to_bus=b, x=x, f_max=fmax)


def _parse_generator(source: str, index: dict[int, int], i: int, item: Any) -> GeneratorSpec:
    where = f"generators[{i}]"
    if not isinstance(item, dict):
        raise CaseError(f"{source}: {where} must be an object")
    _require_keys(source, item, required=_GEN_KEYS, optional=_GEN_OPTIONAL, prefix=where)
    bus = _bus_index(source, index, item["bus"], f"{where}.bus")
    vals = {k: _require_number(source, item, k, prefix=where) for k in ("pmin", "pmax", "a", "b", "c", "rup", "rdn")}
    if vals["pmin"] > vals["pmax"]:
        raise CaseError(f"{source}: {where}: pmin ({vals['pmin']}) exceeds pmax ({vals['pmax']})")
    if vals["c"] < 0:
        raise CaseError(f"{source}: {where}.c must be >= 0")
    if vals["rup"] < 0 or vals["rdn"] < 0:
        raise CaseError(f"{source}: {where}: ramp limits must be >= 0")
    p0 = item.get("p0")
    p_initial = None if p0 is None else _require_number(source, item, "p0", prefix=where)
    name = item.get("name")
    return GeneratorSpec(
        bus=bus,
        p_min=vals["pmin"],
        p_max=vals["pmax"],
        a=vals["a"],
        b=vals["b"],
        c=vals["c"],
        ramp_up=vals["rup"],
        ramp_down=vals["rdn"],
        p_initial=p_initial,
        name=name if isinstance(name, str) and name else f"G{i + 1}",
    )


def _parse_loads(source: str, raw: Any, n: int) -> np.ndarray:
    if not isinstance(raw, list) or len(raw) != n:
        raise CaseError(f"{source}: loads must be a list of {n} rows (one per bus)")
    rows: list[list[float]] = []
    width: int | None = None
    for i, row in enumerate(raw):
        if not isinstance(row, list) or not row:
            raise CaseError(f"{source}: loads[{i}] must be a non-empty list")
        if width is None:
            width = len(row)
        elif len(row) != width:
            raise CaseError(f"{source}: loads[{i}] has {len(row)} periods, expected {width}")
        values: list[float] = []
        for t, v in enumerate(row):
            if not isinstance(v, (int, float)) or isinstance(v, bool) or not math.isfinite(v):
                raise CaseError(f"{source}: loads[{i}][{t}] must be a finite number")
            if v < 0:
                raise CaseError(f"{source}: loads[{i}][{t}] must be >= 0")
            values.append(float(v))
        rows.append(values)
    return np.asarray(rows, dtype=float)


def _read_json(path: Path) -> dict[str, Any]:
    try:
        text = path.read_text(encoding="utf-8")
    except FileNotFoundError as exc:
        raise CaseError(f"{path}: file not found") from exc
    except OSError as exc:
        raise CaseError(f"{path}: failed to read") from exc
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as exc:
        raise CaseError(f"{path}: invalid json ({exc.msg} at line {exc.lineno})") from exc
    if not isinstance(obj, dict):
        raise CaseError(f"{path}: expected json object")
    return obj


def _require_number(source: str, obj: dict[str, Any], key: str, *, prefix: str) -> float:
    val = obj.get(key)
    if not isinstance(val, (int, float)) or isinstance(val, bool) or not math.isfinite(val):
        raise CaseError(f"{source}: {prefix}.{key} must be a finite number")
    return float(val)


def _require_keys(
    source: str,
    obj: dict[str, Any],
    *,
    required: set[str],
    optional: set[str],
    prefix: str | None = None,
) -> None:
    keys = set(obj.keys())
    missing = required - keys
    where = prefix or "case"
    if missing:
        raise CaseError(f"{source}: missing keys in {where}: {', '.join(sorted(missing))}")
    extra = keys - (required | optional)
    if extra:
        raise CaseError(f"{source}: unknown keys in {where}: {', '.join(sorted(extra))}")
