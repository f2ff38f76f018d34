from __future__ import annotations

import csv
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Mapping, Sequence

from drsched.core.errors import PartitionError
from drsched.core.network.grid import neighbours
from drsched.core.network.models import NetworkCase
from drsched.core.network.schedule import ScheduleScope


log = logging.getLogger(__name__)


@dataclass(frozen=True)
class Region:
    """One region: owned buses plus ghost copies of outside neighbours.

    ``consensus_buses`` are the angle copies this region shares with others:
    its own boundary buses and its ghosts.
    """

    label: int
    buses: tuple[int, ...]
    ghosts: tuple[int, ...]
    lines: tuple[int, ...]
    units: tuple[int, ...]
    boundary: tuple[int, ...]
    has_ref: bool

    @property
    def angle_buses(self) -> tuple[int, ...]:
        return tuple(sorted(self.buses + self.ghosts))

    @property
    def consensus_buses(self) -> tuple[int, ...]:
        return tuple(sorted(self.boundary + self.ghosts))

    @property
    def scope(self) -> ScheduleScope:
        return ScheduleScope(buses=self.buses, angle_buses=self.angle_buses, lines=self.lines, include_ref=self.has_ref)


@dataclass(frozen=True)
class RegionPartition:
    case: NetworkCase
    assignment: tuple[int, ...]
    regions: tuple[Region, ...]
    tie_lines: tuple[int, ...]
    boundary_buses: tuple[int, ...]

    @property
    def n_regions(self) -> int:
        return len(self.regions)

    def owner(self, bus: int) -> int:
        """Index (into ``regions``) of the region owning ``bus``."""

        label = self.assignment[bus]
        for i, reg in enumerate(self.regions):
            if reg.label == label:
                return i
        raise PartitionError(f"bus {self.case.bus_label(bus)} has no region")

    def copy_count(self) -> int:
        return sum(len(r.consensus_buses) for r in self.regions) * self.case.horizon

    def summary(self) -> dict[str, Any]:
        case = self.case
        return {
            "regions": [
                {
                    "region": r.label,
                    "buses": [case.bus_label(b) for b in r.buses],
                    "ghosts": [case.bus_label(b) for b in r.ghosts],
                    "units": [u + 1 for u in r.units],
                }
                for r in self.regions
            ],
            "tie_lines": [[case.bus_label(case.lines[k].from_bus), case.bus_label(case.lines[k].to_bus)] for k in self.tie_lines],
            "boundary_buses": [case.bus_label(b) for b in self.boundary_buses],
        }


def read_partition(path: str | Path) -> dict[int, int]:
    """Read a ``bus_id,region_id`` table; the header row is optional."""

    p = Path(path).expanduser()
    try:
        text = p.read_text(encoding="utf-8")
    except FileNotFoundError as exc:
        raise PartitionError(f"{p}: file not found") from exc
    out: dict[int, int] = {}
    for lineno, row in enumerate(csv.reader(text.splitlines()), start=1):
        cells = [c.strip() for c in row]
        if not cells or all(not c for c in cells) or cells[0].startswith("#"):
            continue
        if len(cells) != 2:
            raise PartitionError(f"{p}: line {lineno}: expected 'bus_id,region_id'")
        try:
            bus, region = int(cells[0]), int(cells[1])
        except ValueError:
            if lineno == 1:
                continue
            raise PartitionError(f"{p}: line {lineno}: bus and region ids must be integers") from None
        if bus in out:
            raise PartitionError(f"{p}: line {lineno}: bus {bus} assigned twice")
        out[bus] = region
    if not out:
        raise PartitionError(f"{p}: no assignments")
    return out


def single_region(case: NetworkCase) -> dict[int, int]:
    return {case.bus_label(b): 1 for b in range(case.n_buses)}


def partition_case(
    case: NetworkCase,
    assignment: Mapping[int, int],
    *,
    regions: Sequence[int] | None = None,
) -> RegionPartition:
    """Split ``case`` by a bus-id to region-id table.

    ``regions`` lists the expected region ids; any of them left without buses
    is an error.
    """

    index = {case.bus_label(b): b for b in range(case.n_buses)}
    unknown = sorted(set(assignment) - set(index))
    if unknown:
        raise PartitionError(f"partition names unknown buses: {', '.join(str(u) for u in unknown)}")
    missing = [bid for bid in index if bid not in assignment]
    if missing:
        raise PartitionError(f"partition does not assign buses: {', '.join(str(m) for m in missing)}")

    labels = tuple(int(assignment[case.bus_label(b)]) for b in range(case.n_buses))
    used = sorted(set(labels))
    expected = sorted(set(regions)) if regions is not None else used
    empty = [r for r in expected if r not in used]
    if empty:
        raise PartitionError(f"regions without buses: {', '.join(str(r) for r in empty)}")
    extra = [r for r in used if r not in expected]
    if extra:
        raise PartitionError(f"partition uses undeclared regions: {', '.join(str(r) for r in extra)}")

    tie = tuple(k for k, ln in enumerate(case.lines) if labels[ln.from_bus] != labels[ln.to_bus])
    boundary = tuple(sorted({b for k in tie for b in (case.lines[k].from_bus, case.lines[k].to_bus)}))
    nbrs = neighbours(case)

    out: list[Region] = []
    for label in expected:
        buses = tuple(b for b in range(case.n_buses) if labels[b] == label)
        owned = set(buses)
        ghosts = tuple(sorted({n for b in buses for n in nbrs[b] if n not in owned}))
        lines = tuple(k for k, ln in enumerate(case.lines) if ln.from_bus in owned or ln.to_bus in owned)
        units = tuple(i for i, g in enumerate(case.generators) if g.bus in owned)
        out.append(
            Region(
                label=label,
                buses=buses,
                ghosts=ghosts,
                lines=lines,
                units=units,
                boundary=tuple(b for b in boundary if b in owned),
                has_ref=case.ref_bus in owned,
            )
        )

    part = RegionPartition(case, labels, tuple(out), tie, boundary)
    log.info("Partition built", extra={"regions": len(out), "tie_lines": len(tie), "boundary_buses": len(boundary)})
    return part
