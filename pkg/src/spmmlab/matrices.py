"""Sparse and dense matrix containers, Matrix Market loading, and the SpMM oracle.

The compressed-sparse-row matrix is the only sparse storage used by the
compiler and simulator.  Dense right-hand sides and results are stored
row-major in a flat float64 buffer so that simulated kernels and the host
oracle index them identically (``i * num_cols + k``).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

__all__ = [
    "CsrMatrix",
    "DenseMatrix",
    "MatrixFormatError",
    "load_matrix_market",
    "loads_matrix_market",
    "random_csr",
    "random_dense",
    "dense_spmm_oracle",
]


class MatrixFormatError(ValueError):
    """Raised for malformed Matrix Market input.  Carries a 1-based line number."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


@dataclass(frozen=True)
class CsrMatrix:
    """CSR matrix with int64 index arrays and float64 values.

    Invariants checked at construction: ``row_ptr`` has ``num_rows + 1``
    non-decreasing entries starting at 0 and ending at ``nnz``; column
    indices are in range and strictly increasing within each row
    (duplicates must have been combined by the caller).
    """

    num_rows: int
    num_cols: int
    row_ptr: np.ndarray
    col_idx: np.ndarray
    vals: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "row_ptr", np.asarray(self.row_ptr, dtype=np.int64))
        object.__setattr__(self, "col_idx", np.asarray(self.col_idx, dtype=np.int64))
        object.__setattr__(self, "vals", np.asarray(self.vals, dtype=np.float64))
        if self.num_rows < 0 or self.num_cols < 0:
            raise ValueError("matrix dimensions must be non-negative")
        rp = self.row_ptr
        if rp.shape != (self.num_rows + 1,):
            raise ValueError("row_ptr must have num_rows + 1 entries")
        if self.num_rows >= 0 and (rp[0] != 0 or rp[-1] != len(self.vals)):
            raise ValueError("row_ptr must start at 0 and end at nnz")
        if np.any(np.diff(rp) < 0):
            raise ValueError("row_ptr must be non-decreasing")
        if len(self.col_idx) != len(self.vals):
            raise ValueError("col_idx and vals must have equal length")
        if self.nnz:
            if self.col_idx.min() < 0 or self.col_idx.max() >= self.num_cols:
                raise ValueError("column index out of range")
            for r in range(self.num_rows):
                seg = self.col_idx[rp[r] : rp[r + 1]]
                if np.any(np.diff(seg) <= 0):
                    raise ValueError(f"columns in row {r} must be strictly increasing")

    @property
    def nnz(self) -> int:
        return int(self.row_ptr[-1])

    def to_dense(self) -> np.ndarray:
        out = np.zeros((self.num_rows, self.num_cols))
        for r in range(self.num_rows):
            lo, hi = self.row_ptr[r], self.row_ptr[r + 1]
            out[r, self.col_idx[lo:hi]] = self.vals[lo:hi]
        return out


@dataclass
class DenseMatrix:
    """Row-major dense matrix over a flat float64 buffer."""

    num_rows: int
    num_cols: int
    vals: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        if self.vals is None:
            self.vals = np.zeros(self.num_rows * self.num_cols)
        self.vals = np.asarray(self.vals, dtype=np.float64).reshape(-1)
        if self.vals.shape != (self.num_rows * self.num_cols,):
            raise ValueError("vals length must equal num_rows * num_cols")

    @classmethod
    def from_2d(cls, array) -> "DenseMatrix":
        a = np.asarray(array, dtype=np.float64)
        return cls(a.shape[0], a.shape[1], a.reshape(-1).copy())

    def at(self, i: int, k: int) -> float:
        return float(self.vals[i * self.num_cols + k])

    def to_2d(self) -> np.ndarray:
        return self.vals.reshape(self.num_rows, self.num_cols).copy()

    def dump_text(self) -> str:
        """Plain text grid: header line `rows cols`, then one row per line."""
        lines = [f"{self.num_rows} {self.num_cols}"]
        grid = self.vals.reshape(self.num_rows, self.num_cols)
        for row in grid:
            lines.append(" ".join(repr(float(v)) for v in row))
        return "\n".join(lines) + "\n"


def _coo_to_csr(num_rows: int, num_cols: int, rows, cols, vals) -> CsrMatrix:
    """Combine duplicate coordinates by summation and pack into CSR."""
    rows = np.asarray(rows, dtype=np.int64)
    cols = np.asarray(cols, dtype=np.int64)
    vals = np.asarray(vals, dtype=np.float64)
    if len(rows):
        order = np.lexsort((cols, rows))
        rows, cols, vals = rows[order], cols[order], vals[order]
        keep = np.ones(len(rows), dtype=bool)
        keep[1:] = (rows[1:] != rows[:-1]) | (cols[1:] != cols[:-1])
        # duplicate entries add up; np.add.reduceat sums each run of equals
        starts = np.flatnonzero(keep)
        vals = np.add.reduceat(vals, starts)
        rows, cols = rows[keep], cols[keep]
    row_ptr = np.zeros(num_rows + 1, dtype=np.int64)
    np.add.at(row_ptr, rows + 1, 1)
    row_ptr = np.cumsum(row_ptr)
    return CsrMatrix(num_rows, num_cols, row_ptr, cols, vals)


def loads_matrix_market(text: str) -> CsrMatrix:
    """Parse coordinate Matrix Market content (general or symmetric, real)."""
    lines = text.splitlines()
    if not lines:
        raise MatrixFormatError("empty file", 1)
    banner = lines[0].split()
    if len(banner) < 5 or banner[0] != "%%MatrixMarket":
        raise MatrixFormatError("expected '%%MatrixMarket' banner", 1)
    _, obj, fmt, fld, sym = (tok.lower() for tok in banner[:5])
    if obj != "matrix" or fmt != "coordinate":
        raise MatrixFormatError(f"unsupported object/format '{obj} {fmt}'", 1)
    if fld != "real":
        raise MatrixFormatError(f"unsupported field '{fld}' (only real)", 1)
    if sym not in ("general", "symmetric"):
        raise MatrixFormatError(f"unsupported symmetry '{sym}'", 1)

    lineno = 1
    size_line = None
    for lineno, raw in enumerate(lines[1:], start=2):
        s = raw.strip()
        if not s or s.startswith("%"):
            continue
        size_line = s
        break
    if size_line is None:
        raise MatrixFormatError("missing size line", lineno + 1)
    parts = size_line.split()
    if len(parts) != 3:
        raise MatrixFormatError("size line must be 'rows cols nnz'", lineno)
    try:
        num_rows, num_cols, nnz = (int(p) for p in parts)
    except ValueError:
        raise MatrixFormatError("size line must contain integers", lineno) from None
    if num_rows < 0 or num_cols < 0 or nnz < 0:
        raise MatrixFormatError("size values must be non-negative", lineno)

    rows, cols, vals = [], [], []
    seen = 0
    for entry_lineno, raw in enumerate(lines[lineno:], start=lineno + 1):
        s = raw.strip()
        if not s or s.startswith("%"):
            continue
        parts = s.split()
        if len(parts) != 3:
            raise MatrixFormatError("entry must be 'row col value'", entry_lineno)
        try:
            r, c = int(parts[0]), int(parts[1])
            v = float(parts[2])
        except ValueError:
            raise MatrixFormatError(f"non-numeric entry {parts!r}", entry_lineno) from None
        if not (1 <= r <= num_rows and 1 <= c <= num_cols):
            raise MatrixFormatError(
                f"coordinate ({r}, {c}) outside {num_rows}x{num_cols}", entry_lineno
            )
        seen += 1
        if seen > nnz:
            raise MatrixFormatError("more entries than declared", entry_lineno)
        rows.append(r - 1)
        cols.append(c - 1)
        vals.append(v)
        if sym == "symmetric" and r != c:
            rows.append(c - 1)
            cols.append(r - 1)
            vals.append(v)
    if seen != nnz:
        raise MatrixFormatError(
            f"declared {nnz} entries but found {seen}", len(lines) + 1
        )
    return _coo_to_csr(num_rows, num_cols, rows, cols, vals)


def load_matrix_market(path: str | Path) -> CsrMatrix:
    """Load a coordinate Matrix Market file into CSR (1-based file, 0-based memory)."""
    return loads_matrix_market(Path(path).read_text())


def random_csr(num_rows: int, num_cols: int, density: float, seed: int) -> CsrMatrix:
    """Deterministic random CSR with round(density * rows * cols) nonzeros.

    Values are uniform on [-1, 1).  The same seed always produces the
    same matrix; empty rows are allowed and expected at low densities.
    """
    if not (0.0 <= density <= 1.0):
        raise ValueError("density must be within [0, 1]")
    total = num_rows * num_cols
    nnz = int(round(density * total))
    rng = np.random.default_rng(seed)
    flat = rng.choice(total, size=nnz, replace=False) if nnz else np.empty(0, np.int64)
    vals = rng.uniform(-1.0, 1.0, size=nnz)
    return _coo_to_csr(num_rows, num_cols, flat // num_cols, flat % num_cols, vals)


def random_dense(num_rows: int, num_cols: int, seed: int) -> DenseMatrix:
    rng = np.random.default_rng(seed)
    return DenseMatrix(num_rows, num_cols, rng.uniform(-1.0, 1.0, num_rows * num_cols))


def dense_spmm_oracle(a: CsrMatrix, b: DenseMatrix) -> DenseMatrix:
    """Reference C = A @ B in float64, accumulating in ascending (i, j, k) order.

    The inner k axis is vectorized; that preserves the per-element addition
    order (ascending j for each (i, k)), so results are bit-reproducible.
    """
    if a.num_cols != b.num_rows:
        raise ValueError("inner dimensions disagree")
    bgrid = b.vals.reshape(b.num_rows, b.num_cols)
    out = np.zeros((a.num_rows, b.num_cols))
    for i in range(a.num_rows):
        for p in range(int(a.row_ptr[i]), int(a.row_ptr[i + 1])):
            out[i] += a.vals[p] * bgrid[a.col_idx[p]]
    return DenseMatrix(a.num_rows, b.num_cols, out.reshape(-1))
