"""Sparse operators stored as (row, col, value) triplets."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class SparseOperator:
    """Forward triplets plus an implied reverse part.

    With ``hermitian=True`` every off-diagonal forward entry (r, c, v) also
    contributes (c, r, conj(v)); diagonal entries are stored once. Duplicate
    positions add.
    """

    dim: int
    rows: np.ndarray
    cols: np.ndarray
    values: np.ndarray
    hermitian: bool = False

    def __post_init__(self):
        self.rows = np.asarray(self.rows, dtype=np.int64)
        self.cols = np.asarray(self.cols, dtype=np.int64)
        self.values = np.asarray(self.values, dtype=complex)
        if not (len(self.rows) == len(self.cols) == len(self.values)):
            raise ValueError("triplet arrays differ in length")
        if len(self.rows) and (self.rows.min() < 0 or self.rows.max() >= self.dim
                               or self.cols.min() < 0 or self.cols.max() >= self.dim):
            raise ValueError("triplet index outside the operator dimension")

    @property
    def reverse(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        if not self.hermitian:
            return np.zeros(0, np.int64), np.zeros(0, np.int64), np.zeros(0, complex)
        off = self.rows != self.cols
        return self.cols[off], self.rows[off], self.values[off].conj()

    @property
    def nnz(self) -> int:
        return len(self.rows) + len(self.reverse[0])

    def to_dense(self) -> np.ndarray:
        m = np.zeros((self.dim, self.dim), dtype=complex)
        np.add.at(m, (self.rows, self.cols), self.values)
        r, c, v = self.reverse
        np.add.at(m, (r, c), v)
        return m

    def apply(self, psi: np.ndarray) -> np.ndarray:
        psi = np.asarray(psi)
        if psi.shape[0] != self.dim:
            raise ValueError(f"dimension mismatch: operator {self.dim}, state {psi.shape[0]}")
        out = np.zeros(psi.shape, dtype=complex)
        np.add.at(out, self.rows, (self.values * psi[self.cols].T).T)
        r, c, v = self.reverse
        if len(r):
            np.add.at(out, r, (v * psi[c].T).T)
        return out

    def __matmul__(self, psi):
        return self.apply(psi)

    @classmethod
    def from_dense(cls, m: np.ndarray, hermitian: bool = False, tol: float = 0.0) -> "SparseOperator":
        m = np.asarray(m, dtype=complex)
        if hermitian:
            if not np.allclose(m, m.conj().T, atol=1e-12):
                raise ValueError("matrix is not Hermitian")
            r, c = np.nonzero(np.triu(np.abs(m) > tol))
        else:
            r, c = np.nonzero(np.abs(m) > tol)
        return cls(m.shape[0], r, c, m[r, c], hermitian)

    @classmethod
    def identity(cls, dim: int) -> "SparseOperator":
        i = np.arange(dim)
        return cls(dim, i, i, np.ones(dim), True)


def apply(op: SparseOperator, psi: np.ndarray) -> np.ndarray:
    return op.apply(psi)
