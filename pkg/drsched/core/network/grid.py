from __future__ import annotations

import numpy as np
import scipy.sparse as sp

from drsched.core.errors import CaseError, ParameterError
from drsched.core.network.models import GeneratorSpec, NetworkCase


def admittance_sparse(case: NetworkCase) -> sp.csr_matrix:
    """DC susceptance matrix: ``B_ij = -1/x`` per line, ``B_ii`` = sum of incident ``1/x``."""

    n = case.n_buses
    rows: list[int] = []
    cols: list[int] = []
    vals: list[float] = []
    for k, line in enumerate(case.lines):
        if line.x == 0:
            raise CaseError(f"{case.name}: line {k} ({case.bus_label(line.from_bus)}-{case.bus_label(line.to_bus)}) has zero reactance")
        y = 1.0 / line.x
        a, b = line.from_bus, line.to_bus
        rows += [a, b, a, b]
        cols += [a, b, b, a]
        vals += [y, y, -y, -y]
    # Parallel lines accumulate through COO duplicate summation.
    return sp.coo_matrix((vals, (rows, cols)), shape=(n, n)).tocsr()


def admittance_matrix(case: NetworkCase) -> np.ndarray:
    return np.asarray(admittance_sparse(case).toarray())


def neighbours(case: NetworkCase) -> list[set[int]]:
    out: list[set[int]] = [set() for _ in range(case.n_buses)]
    for line in case.lines:
        out[line.from_bus].add(line.to_bus)
        out[line.to_bus].add(line.from_bus)
    return out


def cost_cuts(gen: GeneratorSpec, segments: int) -> list[tuple[float, float]]:
    """Tangent cuts ``(slope, intercept)`` of the quadratic cost.

    Cut ``l`` touches the cost curve at ``p_l = p_min + l (p_max - p_min) / L``
    for ``l = 0..L-1``. No cut touches ``p_max``: between tangent points the
    envelope stays within ``c * step**2 / 4`` of the curve, but on the last
    interval the gap grows to ``c * step**2`` at ``p_max``, with
    ``step = (p_max - p_min) / L``.
    """

    if segments < 1:
        raise ParameterError(f"segment count must be >= 1, got {segments}")
    step = (gen.p_max - gen.p_min) / segments
    cuts: list[tuple[float, float]] = []
    for l in range(segments):
        p = gen.p_min + l * step
        cuts.append((2.0 * gen.c * p + gen.b, gen.a - gen.c * p * p))
    return cuts


def cut_envelope(cuts: list[tuple[float, float]], p: np.ndarray) -> np.ndarray:
    """Pointwise maximum of the cuts, i.e. the smallest feasible z for output p."""

    slopes = np.asarray([s for s, _ in cuts])
    intercepts = np.asarray([c for _, c in cuts])
    p = np.asarray(p, dtype=float)
    return np.max(np.multiply.outer(p, slopes) + intercepts, axis=-1)


def cost_value(gen: GeneratorSpec, p: float) -> float:
    return float(gen.cost(p))
