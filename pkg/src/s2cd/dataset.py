"""Sparse datasets: ingestion, synthetic generation, and the dual row/column view.

A dataset is a sparse matrix with one row per example and one column per
feature, plus a label per example. Both a row-major (CSR) and a column-major
(CSC) view are kept, since solvers walk rows for dot products and columns for
residual maintenance.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .sampling import make_rng

__all__ = [
    "SparseDataset",
    "DatasetFormatError",
    "dataset_from_arrays",
    "dataset_from_dense",
    "load_libsvm",
    "generate_dataset",
]


class DatasetFormatError(ValueError):
    """Raised for malformed input files; carries the offending line number."""


@dataclass
class SparseDataset:
    """Immutable sparse design matrix with labels.

    ``csr`` and ``csc`` encode the same matrix; indices are sorted and no
    explicit zeros are stored. Columns that were entirely empty at ingestion
    are pruned, and ``col_remap`` maps surviving column positions back to the
    original feature indices.
    """

    n: int
    d: int
    csr: sp.csr_matrix
    csc: sp.csc_matrix
    labels: np.ndarray
    col_remap: np.ndarray = field(default=None)  # original index per kept column

    def __post_init__(self):
        if self.col_remap is None:
            self.col_remap = np.arange(self.d, dtype=np.int64)

    @property
    def row_nnz(self) -> np.ndarray:
        return np.diff(self.csr.indptr)

    @property
    def col_nnz(self) -> np.ndarray:
        return np.diff(self.csc.indptr)

    @property
    def nnz(self) -> int:
        return self.csr.nnz

    @property
    def mean_row_nnz(self) -> float:
        """Mean number of stored entries per example (the cost of one component gradient)."""
        return self.nnz / self.n

    def row(self, i: int) -> tuple[np.ndarray, np.ndarray]:
        """Support indices and values of example ``i``."""
        lo, hi = self.csr.indptr[i], self.csr.indptr[i + 1]
        return self.csr.indices[lo:hi], self.csr.data[lo:hi]

    def col(self, j: int) -> tuple[np.ndarray, np.ndarray]:
        """Support indices and values of feature ``j``."""
        lo, hi = self.csc.indptr[j], self.csc.indptr[j + 1]
        return self.csc.indices[lo:hi], self.csc.data[lo:hi]

    def validate(self) -> None:
        """Check the structural invariants; raises AssertionError on violation."""
        assert self.csr.shape == (self.n, self.d)
        assert self.csc.shape == (self.n, self.d)
        assert self.labels.shape == (self.n,)
        assert (self.csr != self.csc.tocsr()).nnz == 0, "row/column views disagree"
        assert np.all(self.csr.data != 0.0), "explicit zeros stored in rows"
        assert np.all(self.csc.data != 0.0), "explicit zeros stored in columns"
        for mat in (self.csr, self.csc):
            ptr, idx = mat.indptr, mat.indices
            for k in range(len(ptr) - 1):
                seg = idx[ptr[k] : ptr[k + 1]]
                assert np.all(np.diff(seg) > 0), "indices not strictly increasing"
        assert np.all(self.col_nnz > 0), "empty column survived pruning"


def _canonicalize(mat: sp.spmatrix, labels: np.ndarray) -> SparseDataset:
    """Sort indices, drop explicit zeros, prune empty columns, build both views."""
    csr = sp.csr_matrix(mat)
    csr.eliminate_zeros()
    csr.sort_indices()
    col_counts = np.diff(sp.csc_matrix(csr).indptr)
    keep = np.flatnonzero(col_counts > 0)
    if keep.size == 0:
        raise ValueError("dataset has no nonzero entries")
    remap = keep.astype(np.int64)
    if keep.size < csr.shape[1]:
        warnings.warn(
            f"pruning {csr.shape[1] - keep.size} empty feature column(s); "
            "surviving columns are re-indexed (see col_remap)",
            stacklevel=3,
        )
        csr = sp.csr_matrix(csr[:, keep])
        csr.sort_indices()
    csc = sp.csc_matrix(csr)
    csc.sort_indices()
    n, d = csr.shape
    return SparseDataset(
        n=n, d=d, csr=csr, csc=csc,
        labels=np.asarray(labels, dtype=np.float64).copy(),
        col_remap=remap,
    )


def dataset_from_arrays(
    rows: np.ndarray, cols: np.ndarray, vals: np.ndarray,
    labels: np.ndarray, n: int, d: int,
) -> SparseDataset:
    """Build a dataset from COO triplets."""
    if n <= 0 or d <= 0:
        raise ValueError("n and d must be positive")
    mat = sp.coo_matrix((vals, (rows, cols)), shape=(n, d))
    return _canonicalize(mat, labels)


def dataset_from_dense(dense: np.ndarray, labels: np.ndarray) -> SparseDataset:
    """Build a dataset from a dense 2-d array (zeros become structural zeros)."""
    dense = np.asarray(dense, dtype=np.float64)
    if dense.ndim != 2:
        raise ValueError("expected a 2-d array")
    return _canonicalize(sp.csr_matrix(dense), labels)


def load_libsvm(path: str) -> SparseDataset:
    """Read a text file of ``label idx:val idx:val ...`` lines (1-based indices).

    Malformed lines raise :class:`DatasetFormatError` with the line number.
    Feature indices must be strictly increasing within a line.
    """
    labels: list[float] = []
    row_ids: list[int] = []
    col_ids: list[int] = []
    vals: list[float] = []
    max_col = -1
    with open(path, "r") as fh:
        row = 0
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            try:
                label = float(parts[0])
            except ValueError:
                raise DatasetFormatError(
                    f"{path}:{lineno}: bad label {parts[0]!r}"
                ) from None
            prev = 0
            for tok in parts[1:]:
                try:
                    idx_s, val_s = tok.split(":", 1)
                    idx = int(idx_s)
                    val = float(val_s)
                except ValueError:
                    raise DatasetFormatError(
                        f"{path}:{lineno}: bad feature token {tok!r}"
                    ) from None
                if idx < 1:
                    raise DatasetFormatError(
                        f"{path}:{lineno}: feature index {idx} is not 1-based"
                    )
                if idx <= prev:
                    raise DatasetFormatError(
                        f"{path}:{lineno}: feature indices not strictly increasing"
                    )
                prev = idx
                if val != 0.0:
                    row_ids.append(row)
                    col_ids.append(idx - 1)
                    vals.append(val)
                    max_col = max(max_col, idx - 1)
            labels.append(label)
            row += 1
    if row == 0:
        raise DatasetFormatError(f"{path}: no data lines")
    if max_col < 0:
        raise DatasetFormatError(f"{path}: all feature values are zero")
    return dataset_from_arrays(
        np.asarray(row_ids), np.asarray(col_ids), np.asarray(vals),
        np.asarray(labels), n=row, d=max_col + 1,
    )


def save_libsvm(dataset: SparseDataset, path: str) -> None:
    """Write a dataset in the same text format accepted by :func:`load_libsvm`."""
    with open(path, "w") as fh:
        for i in range(dataset.n):
            idx, val = dataset.row(i)
            toks = " ".join(f"{j + 1}:{v!r}" for j, v in zip(idx, val))
            fh.write(f"{dataset.labels[i]!r} {toks}\n")


def generate_dataset(
    n: int,
    d: int,
    density: float,
    scale: float = 1.0,
    label_model: str = "regression",
    seed: int = 0,
    noise: float = 0.1,
) -> SparseDataset:
    """Generate a random sparse dataset with a planted linear signal.

    Every row keeps at least one nonzero. Labels are ``<a_i, w> + noise`` for
    regression and ``sign(<a_i, w>)`` for classification, with ``w`` standard
    normal.
    """
    if not (0.0 < density <= 1.0):
        raise ValueError("density must be in (0, 1]")
    if n <= 0 or d <= 0:
        raise ValueError("n and d must be positive")
    rng = make_rng(seed)
    rows, cols, vals = [], [], []
    for i in range(n):
        k = max(1, int(rng.binomial(d, density)))
        support = np.sort(rng.choice(d, size=k, replace=False))
        v = rng.standard_normal(k) * scale
        v[v == 0.0] = scale  # keep the support structural
        rows.extend([i] * k)
        cols.extend(support.tolist())
        vals.extend(v.tolist())
    mat = sp.coo_matrix(
        (np.asarray(vals), (np.asarray(rows), np.asarray(cols))), shape=(n, d)
    )
    w = rng.standard_normal(d)
    score = mat.tocsr() @ w
    if label_model == "regression":
        labels = score + noise * rng.standard_normal(n)
    elif label_model == "classification":
        labels = np.where(score >= 0.0, 1.0, -1.0)
    else:
        raise ValueError(f"unknown label model {label_model!r}")
    return _canonicalize(mat, labels)
