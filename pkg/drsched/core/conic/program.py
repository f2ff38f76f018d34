"""Solver-agnostic conic program representation.

A program is a flat variable vector ``x`` plus:

- a linear objective ``c @ x + c0`` (minimised),
- linear row groups ``A @ x (<=|==|>=) b``,
- second-order cones ``||v(x)||_2 <= s(x)``,
- PSD blocks given as the packed upper triangle (``np.triu_indices(k)`` order)
  of a symmetric matrix that is affine in ``x``,
- elementwise variable bounds.

Programs are assembled with :class:`ProgramBuilder` and are immutable once built.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from types import MappingProxyType
from typing import Any, Literal, Mapping, Sequence

import numpy as np
import scipy.sparse as sp

from drsched.core.errors import ParameterError


SolveStatus = Literal["optimal", "infeasible", "unbounded", "numerical_limit"]


class Sense(str, enum.Enum):
    LE = "<="
    EQ = "=="
    GE = ">="


def _csr(m: Any, shape: tuple[int, int] | None = None) -> sp.csr_matrix:
    out = sp.csr_matrix(m, dtype=float)
    if shape is not None and out.shape != shape:
        out = sp.csr_matrix((out.data, out.indices, out.indptr), shape=shape)
    return out


@dataclass(frozen=True, eq=False)
class Affine:
    """Vector of affine functions ``coeffs @ x + const``.

    ``coeffs`` may have fewer columns than the final program; missing columns are
    zero. Operations pad both operands to the wider of the two.
    """

    coeffs: sp.csr_matrix
    const: np.ndarray

    # Make `ndarray @ Affine` defer to __rmatmul__.
    __array_ufunc__ = None

    def __post_init__(self) -> None:
        if self.coeffs.shape[0] != self.const.shape[0]:
            raise ParameterError("affine expression: coefficient rows and constant length differ")

    @property
    def rows(self) -> int:
        return int(self.coeffs.shape[0])

    @property
    def n_vars(self) -> int:
        return int(self.coeffs.shape[1])

    @classmethod
    def zeros(cls, rows: int, n_vars: int = 0) -> Affine:
        return cls(sp.csr_matrix((rows, n_vars)), np.zeros(rows))

    @classmethod
    def constant(cls, values: Any, n_vars: int = 0) -> Affine:
        const = np.atleast_1d(np.asarray(values, dtype=float)).ravel()
        return cls(sp.csr_matrix((const.size, n_vars)), const.copy())

    @classmethod
    def select(cls, indices: Any, n_vars: int, scale: float = 1.0) -> Affine:
        idx = np.asarray(indices, dtype=np.int64).ravel()
        m = idx.size
        coeffs = sp.csr_matrix((np.full(m, float(scale)), (np.arange(m), idx)), shape=(m, n_vars))
        return cls(coeffs, np.zeros(m))

    @staticmethod
    def vstack(items: Sequence[Affine]) -> Affine:
        if not items:
            return Affine.zeros(0)
        n = max(a.n_vars for a in items)
        coeffs = sp.vstack([a.padded(n).coeffs for a in items], format="csr")
        return Affine(coeffs, np.concatenate([a.const for a in items]))

    def padded(self, n_vars: int) -> Affine:
        if n_vars == self.n_vars:
            return self
        if n_vars < self.n_vars:
            raise ParameterError("cannot shrink an affine expression")
        return Affine(_csr(self.coeffs, (self.rows, n_vars)), self.const)

    def _coerce(self, other: Any) -> Affine:
        if isinstance(other, Affine):
            return other
        const = np.broadcast_to(np.asarray(other, dtype=float), (self.rows,)).copy()
        return Affine(sp.csr_matrix((self.rows, self.n_vars)), const)

    def __add__(self, other: Any) -> Affine:
        o = self._coerce(other)
        if o.rows != self.rows:
            raise ParameterError(f"affine expression: row mismatch {self.rows} vs {o.rows}")
        n = max(self.n_vars, o.n_vars)
        a, b = self.padded(n), o.padded(n)
        return Affine(_csr(a.coeffs + b.coeffs), a.const + b.const)

    __radd__ = __add__

    def __neg__(self) -> Affine:
        return Affine(-self.coeffs, -self.const)

    def __sub__(self, other: Any) -> Affine:
        return self + (-self._coerce(other))

    def __rsub__(self, other: Any) -> Affine:
        return (-self) + other

    def __mul__(self, scalar: float) -> Affine:
        s = float(scalar)
        return Affine(_csr(self.coeffs * s), self.const * s)

    __rmul__ = __mul__

    def __rmatmul__(self, matrix: Any) -> Affine:
        return self.lmul(matrix)

    def lmul(self, matrix: Any) -> Affine:
        """Left product ``matrix @ self`` for dense or sparse ``matrix``."""

        m = _csr(matrix)
        if m.shape[1] != self.rows:
            raise ParameterError(f"affine expression: cannot multiply {m.shape} by {self.rows} rows")
        return Affine(_csr(m @ self.coeffs), np.asarray(m @ self.const, dtype=float).ravel())

    def __getitem__(self, idx: Any) -> Affine:
        rows = np.arange(self.rows)[idx]
        rows = np.atleast_1d(rows)
        return Affine(self.coeffs[rows], self.const[rows])

    def sum(self) -> Affine:
        return Affine(_csr(self.coeffs.sum(axis=0)), np.array([self.const.sum()]))

    def dot(self, weights: Any) -> Affine:
        w = np.asarray(weights, dtype=float).ravel()
        if w.size != self.rows:
            raise ParameterError("affine expression: weight length mismatch")
        return self.lmul(w[None, :])

    def value(self, x: np.ndarray) -> np.ndarray:
        n = self.n_vars
        return np.asarray(self.coeffs @ np.asarray(x, dtype=float)[:n] + self.const).ravel()


@dataclass(frozen=True)
class VarBlock:
    name: str
    start: int
    shape: tuple[int, ...]
    symmetric: bool = False

    @property
    def size(self) -> int:
        if self.symmetric:
            k = self.shape[0]
            return k * (k + 1) // 2
        return int(np.prod(self.shape, dtype=np.int64)) if self.shape else 1

    @property
    def indices(self) -> np.ndarray:
        """Variable indices laid out in the block's shape.

        For symmetric blocks the (i, j) and (j, i) entries share one variable.
        """

        if not self.symmetric:
            return self.start + np.arange(self.size, dtype=np.int64).reshape(self.shape)
        k = self.shape[0]
        out = np.empty((k, k), dtype=np.int64)
        iu, ju = np.triu_indices(k)
        packed = self.start + np.arange(iu.size, dtype=np.int64)
        out[iu, ju] = packed
        out[ju, iu] = packed
        return out

    def expr(self, n_vars: int | None = None) -> Affine:
        n = self.start + self.size if n_vars is None else n_vars
        return Affine.select(self.indices.ravel(), n)

    def shifted(self, offset: int, prefix: str = "") -> VarBlock:
        return VarBlock(prefix + self.name, self.start + offset, self.shape, self.symmetric)


@dataclass(frozen=True, eq=False)
class LinearRows:
    name: str
    coeffs: sp.csr_matrix
    sense: Sense
    rhs: np.ndarray

    @property
    def rows(self) -> int:
        return int(self.coeffs.shape[0])

    def violation(self, x: np.ndarray) -> np.ndarray:
        lhs = np.asarray(self.coeffs @ x).ravel()
        if self.sense is Sense.LE:
            return np.maximum(lhs - self.rhs, 0.0)
        if self.sense is Sense.GE:
            return np.maximum(self.rhs - lhs, 0.0)
        return np.abs(lhs - self.rhs)


@dataclass(frozen=True, eq=False)
class SocBlock:
    name: str
    vector: Affine
    scalar: Affine

    def violation(self, x: np.ndarray) -> float:
        return float(np.linalg.norm(self.vector.value(x)) - self.scalar.value(x)[0])


@dataclass(frozen=True, eq=False)
class PsdBlock:
    name: str
    size: int
    packed: Affine

    def matrix(self, x: np.ndarray) -> np.ndarray:
        return unpack_symmetric(self.packed.value(x), self.size)


def packed_length(k: int) -> int:
    return k * (k + 1) // 2


def unpack_symmetric(packed: np.ndarray, k: int) -> np.ndarray:
    out = np.zeros((k, k))
    iu, ju = np.triu_indices(k)
    out[iu, ju] = packed
    out[ju, iu] = packed
    return out


def unpack_operator(k: int) -> sp.csr_matrix:
    """Sparse map from the packed upper triangle to the row-major full matrix."""

    iu, ju = np.triu_indices(k)
    p = np.arange(iu.size)
    rows = np.concatenate([iu * k + ju, ju * k + iu])
    cols = np.concatenate([p, p])
    m = sp.coo_matrix((np.ones(rows.size), (rows, cols)), shape=(k * k, iu.size)).tocsr()
    # Diagonal entries were added twice.
    m.data[:] = 1.0
    return m


@dataclass(frozen=True, eq=False)
class ConicProgram:
    n_vars: int
    objective: np.ndarray
    objective_const: float
    linear: tuple[LinearRows, ...]
    soc: tuple[SocBlock, ...]
    psd: tuple[PsdBlock, ...]
    lower: np.ndarray
    upper: np.ndarray
    blocks: Mapping[str, VarBlock]

    def block(self, name: str) -> VarBlock:
        try:
            return self.blocks[name]
        except KeyError:
            raise ParameterError(f"unknown variable block: {name}") from None

    def value(self, x: np.ndarray, name: str) -> np.ndarray:
        b = self.block(name)
        return np.asarray(x, dtype=float)[b.indices]

    def objective_value(self, x: np.ndarray) -> float:
        return float(self.objective @ x + self.objective_const)

    def rows(self, name: str) -> LinearRows:
        for group in self.linear:
            if group.name == name:
                return group
        raise ParameterError(f"unknown row group: {name}")

    def row_counts(self) -> dict[str, int]:
        counts: dict[str, int] = {}
        for group in self.linear:
            counts[group.name] = counts.get(group.name, 0) + group.rows
        return counts

    def stats(self) -> dict[str, Any]:
        return {
            "n_vars": self.n_vars,
            "linear_rows": sum(g.rows for g in self.linear),
            "soc_blocks": len(self.soc),
            "psd_sizes": [b.size for b in self.psd],
        }

    def residuals(self, x: np.ndarray) -> dict[str, float]:
        x = np.asarray(x, dtype=float)
        lin = max((float(g.violation(x).max(initial=0.0)) for g in self.linear), default=0.0)
        bounds = float(max(np.max(self.lower - x, initial=0.0), np.max(x - self.upper, initial=0.0)))
        soc = max((b.violation(x) for b in self.soc), default=-math.inf)
        eig = min((min_eigenvalue(b.matrix(x)) for b in self.psd), default=math.inf)
        return {
            "max_linear_violation": max(lin, bounds),
            "max_soc_violation": max(soc, 0.0),
            "min_psd_eigenvalue": eig,
        }


@dataclass(frozen=True)
class Tolerances:
    feasibility: float = 1e-7
    gap: float = 1e-7


@dataclass(frozen=True, eq=False)
class ConicSolution:
    status: SolveStatus
    x: np.ndarray | None
    objective: float
    iterations: int | None = None
    wall_time: float = 0.0
    solver: str = ""
    row_duals: Mapping[str, np.ndarray] = field(default_factory=dict)
    diagnostics: Mapping[str, Any] = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return self.status == "optimal" and self.x is not None


def min_eigenvalue(m: Any) -> float:
    """Smallest eigenvalue of a symmetric matrix."""

    a = np.asarray(m, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ParameterError(f"min_eigenvalue: expected a square matrix, got shape {a.shape}")
    if a.size == 0:
        return math.inf
    scale = max(1.0, float(np.max(np.abs(a))))
    if float(np.max(np.abs(a - a.T))) > 1e-9 * scale:
        raise ParameterError("min_eigenvalue: matrix is not symmetric")
    return float(np.linalg.eigvalsh(0.5 * (a + a.T))[0])


def _symmetric_eig(m: Any, floor: float) -> tuple[np.ndarray, np.ndarray]:
    a = np.asarray(m, dtype=float)
    w, v = np.linalg.eigh(0.5 * (a + a.T))
    return np.maximum(w, floor), v


def psd_sqrt(m: Any, floor: float = 0.0) -> np.ndarray:
    w, v = _symmetric_eig(m, floor)
    return (v * np.sqrt(w)) @ v.T


def psd_inv_sqrt(m: Any, floor: float) -> np.ndarray:
    if floor <= 0:
        raise ParameterError("psd_inv_sqrt: floor must be positive")
    w, v = _symmetric_eig(m, floor)
    return (v / np.sqrt(w)) @ v.T


class ProgramBuilder:
    """Incremental assembly of a :class:`ConicProgram`."""

    def __init__(self) -> None:
        self._n = 0
        self._blocks: dict[str, VarBlock] = {}
        self._lower: list[np.ndarray] = []
        self._upper: list[np.ndarray] = []
        self._linear: list[tuple[str, Affine, Sense, np.ndarray]] = []
        self._soc: list[tuple[str, Affine, Affine]] = []
        self._psd: list[tuple[str, int, Affine]] = []
        self._objective = Affine.zeros(1)

    @property
    def n_vars(self) -> int:
        return self._n

    def _allocate(self, block: VarBlock, lb: Any, ub: Any) -> VarBlock:
        if block.name in self._blocks:
            raise ParameterError(f"duplicate variable block: {block.name}")
        self._blocks[block.name] = block
        self._lower.append(np.broadcast_to(np.asarray(-np.inf if lb is None else lb, dtype=float), (block.size,)).copy())
        self._upper.append(np.broadcast_to(np.asarray(np.inf if ub is None else ub, dtype=float), (block.size,)).copy())
        self._n += block.size
        return block

    def add_variable(self, name: str, shape: int | tuple[int, ...] = (), *, lb: Any = None, ub: Any = None) -> VarBlock:
        dims = (shape,) if isinstance(shape, int) else tuple(shape)
        return self._allocate(VarBlock(name, self._n, dims), lb, ub)

    def add_symmetric(self, name: str, k: int) -> VarBlock:
        return self._allocate(VarBlock(name, self._n, (k, k), symmetric=True), None, None)

    def block(self, name: str) -> VarBlock:
        return self._blocks[name]

    def expr(self, block: VarBlock | str) -> Affine:
        b = self._blocks[block] if isinstance(block, str) else block
        return b.expr()

    def add_rows(self, name: str, lhs: Affine, sense: Sense | str, rhs: Any = 0.0) -> None:
        if lhs.rows == 0:
            return
        rhs_vec = np.broadcast_to(np.asarray(rhs, dtype=float), (lhs.rows,)) - lhs.const
        self._linear.append((name, lhs, Sense(sense), np.asarray(rhs_vec, dtype=float)))

    def add_soc(self, name: str, vector: Affine, scalar: Affine) -> None:
        if scalar.rows != 1:
            raise ParameterError("soc block: scalar side must have exactly one row")
        self._soc.append((name, vector, scalar))

    def add_psd(self, name: str, k: int, packed: Affine) -> None:
        if packed.rows != packed_length(k):
            raise ParameterError(f"psd block {name}: expected {packed_length(k)} packed rows, got {packed.rows}")
        self._psd.append((name, k, packed))

    def add_lmi(self, name: str, top_left: Affine, off: Affine, corner: Affine) -> None:
        """Constrain ``[[M, w], [w^T, c]] >= 0`` with M given row-major in full."""

        k = off.rows
        if top_left.rows != k * k or corner.rows != 1:
            raise ParameterError(f"lmi {name}: inconsistent block sizes")
        stacked = Affine.vstack([top_left, off, corner])
        gather: list[int] = []
        for i in range(k):
            gather.extend(i * k + j for j in range(i, k))
            gather.append(k * k + i)
        gather.append(k * k + k)
        self.add_psd(name, k + 1, stacked[np.asarray(gather)])

    def add_objective(self, expr: Affine) -> None:
        if expr.rows != 1:
            raise ParameterError("objective term must be scalar")
        self._objective = self._objective + expr

    def embed(self, program: ConicProgram, prefix: str) -> int:
        """Copy another program in with shifted variables; returns the offset."""

        offset = self._n
        for blk in program.blocks.values():
            self._blocks[prefix + blk.name] = blk.shifted(offset, prefix)
        self._lower.append(program.lower.copy())
        self._upper.append(program.upper.copy())
        self._n += program.n_vars

        def shift(a: Affine) -> Affine:
            n = self._n
            coeffs = sp.hstack([sp.csr_matrix((a.rows, offset)), a.padded(program.n_vars).coeffs], format="csr")
            return Affine(_csr(coeffs, (a.rows, n)), a.const)

        for g in program.linear:
            self._linear.append((prefix + g.name, shift(Affine(g.coeffs, np.zeros(g.rows))), g.sense, g.rhs.copy()))
        for s in program.soc:
            self._soc.append((prefix + s.name, shift(s.vector), shift(s.scalar)))
        for p in program.psd:
            self._psd.append((prefix + p.name, p.size, shift(p.packed)))
        obj = Affine(sp.csr_matrix(program.objective[None, :]), np.array([program.objective_const]))
        self.add_objective(shift(obj))
        return offset

    def build(self) -> ConicProgram:
        n = self._n
        linear = tuple(LinearRows(name, lhs.padded(n).coeffs, sense, rhs) for name, lhs, sense, rhs in self._linear)
        soc = tuple(SocBlock(name, v.padded(n), s.padded(n)) for name, v, s in self._soc)
        psd = tuple(PsdBlock(name, k, p.padded(n)) for name, k, p in self._psd)
        obj = self._objective.padded(n)
        return ConicProgram(
            n_vars=n,
            objective=np.asarray(obj.coeffs.toarray()).ravel(),
            objective_const=float(obj.const[0]),
            linear=linear,
            soc=soc,
            psd=psd,
            lower=np.concatenate(self._lower) if self._lower else np.zeros(0),
            upper=np.concatenate(self._upper) if self._upper else np.zeros(0),
            blocks=MappingProxyType(dict(self._blocks)),
        )

