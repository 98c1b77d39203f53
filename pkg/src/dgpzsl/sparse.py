"""Compressed sparse row matrices and the few kernels the propagation code needs.

Every matrix is kept in canonical form: column indices strictly increasing
within a row, no duplicates, no stored zeros. That makes structural equality
a plain array comparison and keeps the per-row reduction order of ``spmm``
fixed (ascending column), so products are bit-reproducible.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import Iterable, Sequence

import numpy as np

from .errors import ValidationError


@dataclass(frozen=True, eq=False)
class SparseMatrix:
    n_rows: int
    n_cols: int
    row_ptr: np.ndarray
    col_idx: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        row_ptr = np.asarray(self.row_ptr, dtype=np.int64)
        col_idx = np.asarray(self.col_idx, dtype=np.int64)
        values = np.asarray(self.values, dtype=np.float64)
        for arr in (row_ptr, col_idx, values):
            arr.setflags(write=False)
        object.__setattr__(self, "row_ptr", row_ptr)
        object.__setattr__(self, "col_idx", col_idx)
        object.__setattr__(self, "values", values)
        self._check()

    def _check(self):
        if self.n_rows < 0 or self.n_cols < 0:
            raise ValidationError(f"negative shape ({self.n_rows}, {self.n_cols})")
        rp = self.row_ptr
        if rp.shape != (self.n_rows + 1,) or rp[0] != 0:
            raise ValidationError("row_ptr must have length n_rows+1 and start at 0")
        if np.any(np.diff(rp) < 0):
            raise ValidationError("row_ptr must be non-decreasing")
        nnz = int(rp[-1])
        if self.col_idx.shape != (nnz,) or self.values.shape != (nnz,):
            raise ValidationError("col_idx/values length must equal row_ptr[-1]")
        if nnz:
            if self.col_idx.min() < 0 or self.col_idx.max() >= self.n_cols:
                raise ValidationError("column index out of range")
            # strictly increasing inside each row; row starts are allowed to drop
            steps = np.diff(self.col_idx)
            starts = np.zeros(nnz, dtype=bool)
            starts[rp[:-1][rp[:-1] < nnz]] = True
            if np.any(steps[~starts[1:]] <= 0):
                raise ValidationError("column indices must be strictly increasing within a row")
            if np.any(self.values == 0.0):
                raise ValidationError("explicit zeros are not allowed in canonical CSR")
            if not np.all(np.isfinite(self.values)):
                raise ValidationError("non-finite stored value")

    @property
    def shape(self) -> tuple[int, int]:
        return (self.n_rows, self.n_cols)

    @property
    def nnz(self) -> int:
        return int(self.row_ptr[-1])

    def row_ids(self) -> np.ndarray:
        """Row index of every stored entry."""
        return np.repeat(np.arange(self.n_rows), np.diff(self.row_ptr))

    def triplets(self) -> list[tuple[int, int, float]]:
        return list(zip(self.row_ids().tolist(), self.col_idx.tolist(), self.values.tolist()))

    def row_sums(self) -> np.ndarray:
        out = np.zeros(self.n_rows)
        np.add.at(out, self.row_ids(), self.values)
        return out

    def to_dense(self) -> np.ndarray:
        out = np.zeros(self.shape)
        out[self.row_ids(), self.col_idx] = self.values
        return out

    def pattern(self) -> frozenset[tuple[int, int]]:
        return frozenset(zip(self.row_ids().tolist(), self.col_idx.tolist()))

    def __eq__(self, other):
        if not isinstance(other, SparseMatrix):
            return NotImplemented
        return (
            self.shape == other.shape
            and np.array_equal(self.row_ptr, other.row_ptr)
            and np.array_equal(self.col_idx, other.col_idx)
            and np.array_equal(self.values, other.values)
        )

    def __repr__(self):
        return f"SparseMatrix(shape={self.shape}, nnz={self.nnz})"

    @cached_property
    def T(self) -> "SparseMatrix":
        return transpose(self)


def _from_coo(n_rows: int, n_cols: int, rows, cols, vals) -> SparseMatrix:
    """Canonicalize coordinate arrays: sort, sum duplicates, drop zeros."""
    rows = np.asarray(rows, dtype=np.int64)
    cols = np.asarray(cols, dtype=np.int64)
    vals = np.asarray(vals, dtype=np.float64)
    if rows.size:
        order = np.lexsort((cols, rows))
        rows, cols, vals = rows[order], cols[order], vals[order]
        key = rows * max(n_cols, 1) + cols
        first = np.ones(key.size, dtype=bool)
        first[1:] = key[1:] != key[:-1]
        starts = np.flatnonzero(first)
        vals = np.add.reduceat(vals, starts)
        rows, cols = rows[starts], cols[starts]
        keep = vals != 0.0
        rows, cols, vals = rows[keep], cols[keep], vals[keep]
    counts = np.bincount(rows, minlength=n_rows) if rows.size else np.zeros(n_rows, dtype=np.int64)
    row_ptr = np.concatenate([[0], np.cumsum(counts)])
    return SparseMatrix(n_rows, n_cols, row_ptr, cols, vals)


def csr_from_triplets(n_rows: int, n_cols: int, triplets: Iterable[Sequence]) -> SparseMatrix:
    """Build a canonical CSR matrix from ``(row, col, value)`` triplets.

    Duplicate coordinates are summed and entries that end up zero are dropped.
    """
    rows, cols, vals = [], [], []
    for pos, (r, c, v) in enumerate(triplets):
        if not (0 <= r < n_rows and 0 <= c < n_cols):
            raise ValidationError(
                f"triplet #{pos} ({r}, {c}, {v}) out of range for shape ({n_rows}, {n_cols})"
            )
        rows.append(r)
        cols.append(c)
        vals.append(v)
    return _from_coo(n_rows, n_cols, rows, cols, vals)


def from_dense(a) -> SparseMatrix:
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2:
        raise ValidationError(f"expected a 2-D array, got shape {a.shape}")
    r, c = np.nonzero(a)
    return _from_coo(a.shape[0], a.shape[1], r, c, a[r, c])


def identity(n: int) -> SparseMatrix:
    return SparseMatrix(n, n, np.arange(n + 1), np.arange(n), np.ones(n))


def zeros(n_rows: int, n_cols: int) -> SparseMatrix:
    return SparseMatrix(n_rows, n_cols, np.zeros(n_rows + 1), [], [])


def spmm(a: SparseMatrix, x: np.ndarray) -> np.ndarray:
    """Sparse times dense.

    Work is proportional to ``a.nnz * x.shape[1]``. Each output row is summed
    in ascending column order, so the result does not depend on how the work
    might be split.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or a.n_cols != x.shape[0]:
        raise ValidationError(f"spmm shape mismatch: sparse {a.shape} @ dense {x.shape}")
    out = np.zeros((a.n_rows, x.shape[1]))
    if a.nnz == 0 or x.shape[1] == 0:
        return out
    prod = a.values[:, None] * x[a.col_idx]
    starts = a.row_ptr[:-1]
    nonempty = np.flatnonzero(np.diff(a.row_ptr))
    out[nonempty] = np.add.reduceat(prod, starts[nonempty], axis=0)
    return out


def scale_rows(a: SparseMatrix, factors: np.ndarray) -> SparseMatrix:
    """Multiply row i by ``factors[i]``; rows scaled to zero are dropped."""
    vals = a.values * np.asarray(factors, dtype=np.float64)[a.row_ids()]
    return _from_coo(a.n_rows, a.n_cols, a.row_ids(), a.col_idx, vals)


def row_normalize(a: SparseMatrix) -> SparseMatrix:
    """D^-1 A. Rows summing to zero stay empty."""
    sums = a.row_sums()
    if np.any(sums < 0):
        bad = int(np.flatnonzero(sums < 0)[0])
        raise ValidationError(f"row {bad} has negative sum {sums[bad]}; adjacency values must be non-negative")
    inv = np.zeros_like(sums)
    nz = sums > 0
    inv[nz] = 1.0 / sums[nz]
    return scale_rows(a, inv)


def sym_normalize(a: SparseMatrix) -> SparseMatrix:
    """D^-1/2 A D^-1/2 with zero-degree rows and columns left at zero."""
    if a.n_rows != a.n_cols:
        raise ValidationError(f"sym_normalize needs a square matrix, got {a.shape}")
    if np.any(a.values < 0):
        raise ValidationError("sym_normalize needs non-negative values")
    deg = a.row_sums()
    rows = a.row_ids()
    prod = deg[rows] * deg[a.col_idx]
    vals = np.zeros_like(a.values)
    ok = prod > 0
    vals[ok] = a.values[ok] / np.sqrt(prod[ok])
    return _from_coo(a.n_rows, a.n_cols, rows, a.col_idx, vals)


def transpose(a: SparseMatrix) -> SparseMatrix:
    return _from_coo(a.n_cols, a.n_rows, a.col_idx, a.row_ids(), a.values)


def add(*mats: SparseMatrix) -> SparseMatrix:
    """Entrywise sum of equally shaped matrices."""
    if not mats:
        raise ValidationError("add needs at least one matrix")
    shape = mats[0].shape
    for m in mats:
        if m.shape != shape:
            raise ValidationError(f"add shape mismatch: {shape} vs {m.shape}")
    rows = np.concatenate([m.row_ids() for m in mats])
    cols = np.concatenate([m.col_idx for m in mats])
    vals = np.concatenate([m.values for m in mats])
    return _from_coo(shape[0], shape[1], rows, cols, vals)


def binarize(a: SparseMatrix) -> SparseMatrix:
    """Same pattern, every stored value set to 1."""
    return SparseMatrix(a.n_rows, a.n_cols, a.row_ptr, a.col_idx, np.ones(a.nnz))
