"""Plain-text dump of a conic program for cross-solver debugging.

Format (one record per line, whitespace separated)::

    drsched-conic 1
    vars <n>
    block <name> <start> <sym:0|1> <dim> [<dim> ...]
    bound <index> <lower> <upper>          (only non-default bounds)
    objective <const> <nnz> {<index> <value>}
    rows <name> <sense> <m>
    row <rhs> <nnz> {<index> <value>}      (m lines)
    soc <name> <m>
    aff <const> <nnz> {<index> <value>}    (m vector lines, then one scalar line)
    psd <name> <k>
    aff ...                                (k(k+1)/2 packed lines)
    end

Floats are written with ``repr`` so the text round-trips exactly.
"""

from __future__ import annotations

from pathlib import Path
from types import MappingProxyType
from typing import Iterator

import numpy as np
import scipy.sparse as sp

from drsched.core.conic.program import Affine, ConicProgram, LinearRows, PsdBlock, Sense, SocBlock, VarBlock
from drsched.core.errors import ParameterError

MAGIC = "drsched-conic 1"


def _terms(row: sp.csr_matrix) -> str:
    row = row.tocsr()
    parts = [str(row.nnz)]
    for idx, val in zip(row.indices, row.data):
        parts.append(f"{int(idx)} {float(val)!r}")
    return " ".join(parts)


def _affine_lines(expr: Affine) -> Iterator[str]:
    for i in range(expr.rows):
        yield f"aff {float(expr.const[i])!r} {_terms(expr.coeffs[i])}"


def dump_program(program: ConicProgram) -> str:
    lines = [MAGIC, f"vars {program.n_vars}"]
    for blk in program.blocks.values():
        dims = " ".join(str(d) for d in blk.shape)
        lines.append(f"block {blk.name} {blk.start} {int(blk.symmetric)} {dims}".rstrip())
    for i in np.flatnonzero(np.isfinite(program.lower) | np.isfinite(program.upper)):
        lines.append(f"bound {int(i)} {float(program.lower[i])!r} {float(program.upper[i])!r}")
    lines.append(f"objective {program.objective_const!r} {_terms(sp.csr_matrix(program.objective[None, :]))}")
    for group in program.linear:
        lines.append(f"rows {group.name} {group.sense.value} {group.rows}")
        for i in range(group.rows):
            lines.append(f"row {float(group.rhs[i])!r} {_terms(group.coeffs[i])}")
    for soc in program.soc:
        lines.append(f"soc {soc.name} {soc.vector.rows}")
        lines.extend(_affine_lines(soc.vector))
        lines.extend(_affine_lines(soc.scalar))
    for psd in program.psd:
        lines.append(f"psd {psd.name} {psd.size}")
        lines.extend(_affine_lines(psd.packed))
    lines.append("end")
    return "\n".join(lines) + "\n"


class _Reader:
    def __init__(self, text: str) -> None:
        self._lines = [ln for ln in text.splitlines() if ln.strip()]
        self._pos = 0

    def next(self, expected: str | None = None) -> list[str]:
        if self._pos >= len(self._lines):
            raise ParameterError("conic dump: unexpected end of input")
        tokens = self._lines[self._pos].split()
        self._pos += 1
        if expected is not None and tokens[0] != expected:
            raise ParameterError(f"conic dump: line {self._pos}: expected '{expected}', got '{tokens[0]}'")
        return tokens

    def peek(self) -> str:
        return self._lines[self._pos].split()[0] if self._pos < len(self._lines) else ""


def _parse_terms(tokens: list[str], n: int) -> sp.csr_matrix:
    nnz = int(tokens[0])
    idx = np.array([int(tokens[1 + 2 * k]) for k in range(nnz)], dtype=np.int64)
    val = np.array([float(tokens[2 + 2 * k]) for k in range(nnz)])
    return sp.csr_matrix((val, (np.zeros(nnz, dtype=np.int64), idx)), shape=(1, n))


def _read_affine(reader: _Reader, rows: int, n: int) -> Affine:
    coeffs, const = [], []
    for _ in range(rows):
        tokens = reader.next("aff")
        const.append(float(tokens[1]))
        coeffs.append(_parse_terms(tokens[2:], n))
    if not coeffs:
        return Affine.zeros(0, n)
    return Affine(sp.vstack(coeffs, format="csr"), np.asarray(const))


def load_program(text: str) -> ConicProgram:
    reader = _Reader(text)
    if " ".join(reader.next()) != MAGIC:
        raise ParameterError("conic dump: bad header")
    n = int(reader.next("vars")[1])
    blocks: dict[str, VarBlock] = {}
    lower = np.full(n, -np.inf)
    upper = np.full(n, np.inf)
    linear: list[LinearRows] = []
    socs: list[SocBlock] = []
    psds: list[PsdBlock] = []
    objective = np.zeros(n)
    objective_const = 0.0

    while True:
        kind = reader.peek()
        if kind == "end":
            break
        tokens = reader.next()
        if kind == "block":
            name, start, sym = tokens[1], int(tokens[2]), bool(int(tokens[3]))
            blocks[name] = VarBlock(name, start, tuple(int(d) for d in tokens[4:]), sym)
        elif kind == "bound":
            i = int(tokens[1])
            lower[i], upper[i] = float(tokens[2]), float(tokens[3])
        elif kind == "objective":
            objective_const = float(tokens[1])
            objective = np.asarray(_parse_terms(tokens[2:], n).toarray()).ravel()
        elif kind == "rows":
            name, sense, m = tokens[1], Sense(tokens[2]), int(tokens[3])
            rhs, coeffs = [], []
            for _ in range(m):
                row = reader.next("row")
                rhs.append(float(row[1]))
                coeffs.append(_parse_terms(row[2:], n))
            linear.append(LinearRows(name, sp.vstack(coeffs, format="csr"), sense, np.asarray(rhs)))
        elif kind == "soc":
            name, m = tokens[1], int(tokens[2])
            vector = _read_affine(reader, m, n)
            socs.append(SocBlock(name, vector, _read_affine(reader, 1, n)))
        elif kind == "psd":
            name, k = tokens[1], int(tokens[2])
            psds.append(PsdBlock(name, k, _read_affine(reader, k * (k + 1) // 2, n)))
        else:
            raise ParameterError(f"conic dump: unknown record '{kind}'")

    return ConicProgram(
        n_vars=n,
        objective=objective,
        objective_const=objective_const,
        linear=tuple(linear),
        soc=tuple(socs),
        psd=tuple(psds),
        lower=lower,
        upper=upper,
        blocks=MappingProxyType(blocks),
    )


def write_program(path: str | Path, program: ConicProgram) -> Path:
    out = Path(path)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(dump_program(program), encoding="utf-8")
    return out


def read_program(path: str | Path) -> ConicProgram:
    return load_program(Path(path).read_text(encoding="utf-8"))
