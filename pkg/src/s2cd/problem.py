"""Finite-sum objectives over sparse linear models.

The objective is ``f(x) = (1/n) sum_i f_i(x)`` with
``f_i(x) = phi(<a_i, x>; b_i) + regularizer_i(x)``. Each component has a
coordinate-wise curvature table ``L[i, j]`` from which all nonuniform sampling
quantities are derived: per-component support counts, column weights and
probabilities, conditional component probabilities per column, and the
aggregate smoothness constant that drives the method's condition number.

Two regularizer placements are supported. ``SUPPORT`` splits the L2 penalty
across components proportionally to ``1/n_j`` on each component's support
(``n_j`` = nonzeros in column j), which preserves the total ``(mu/2)||x||^2``
exactly while keeping every component as sparse as its data row. ``DENSE``
puts the full penalty inside every component, which matches the textbook
decomposition but makes every component depend on every coordinate. The two
modes define the same ``f`` and differ only in its decomposition.
"""

from __future__ import annotations

import enum
import threading
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .dataset import SparseDataset
from .sampling import build_alias_table

__all__ = [
    "LossKind",
    "RegMode",
    "SamplingTables",
    "Problem",
    "ResidualCache",
    "StaleCacheError",
    "build_problem",
    "derive_sampling_tables",
    "value",
    "full_gradient",
    "partial",
    "apply_coordinate_step",
    "component_value",
    "component_gradient",
    "component_partial",
]

# entries per conditional table above which DENSE mode refuses to build
DENSE_MODE_ENTRY_LIMIT = 20_000_000


class StaleCacheError(RuntimeError):
    """A residual cache was used with a problem it does not belong to."""


class LossKind(enum.Enum):
    SQUARED = "squared"
    LOGISTIC = "logistic"

    @property
    def curvature_bound(self) -> float:
        """Global upper bound on the scalar loss curvature phi''."""
        return 1.0 if self is LossKind.SQUARED else 0.25

    @classmethod
    def from_name(cls, name: str) -> "LossKind":
        try:
            return cls(name.lower())
        except ValueError:
            raise ValueError(
                f"unknown loss {name!r}; expected one of {[k.value for k in cls]}"
            ) from None


class RegMode(enum.Enum):
    SUPPORT = "support"
    DENSE = "dense"

    @classmethod
    def from_name(cls, name: str) -> "RegMode":
        try:
            return cls(name.lower())
        except ValueError:
            raise ValueError(
                f"unknown reg mode {name!r}; expected one of {[k.value for k in cls]}"
            ) from None


def loss_value(kind: LossKind, t, b):
    """Scalar loss phi(t; b); vectorized."""
    t = np.asarray(t, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if kind is LossKind.SQUARED:
        return 0.5 * (t - b) ** 2
    z = -b * t
    # log(1 + exp(z)) without overflow
    return np.maximum(z, 0.0) + np.log1p(np.exp(-np.abs(z)))


def loss_deriv(kind: LossKind, t, b):
    """Scalar loss derivative phi'(t; b); vectorized."""
    if kind is LossKind.SQUARED:
        return np.asarray(t, dtype=np.float64) - np.asarray(b, dtype=np.float64)
    return _logistic_deriv(t, b)


def _logistic_deriv(t, b):
    t = np.asarray(t, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    z = b * t
    ez = np.exp(-np.abs(z))
    # phi' = -b * sigmoid(-z); exp argument is always <= 0
    return np.where(z >= 0.0, -b * ez / (1.0 + ez), -b / (1.0 + ez))


@dataclass
class SamplingTables:
    """Quantities derived from a coordinate curvature table ``L``.

    ``omega[i]`` is the number of coordinates component i depends on
    (nonzeros in row i of L); ``v[j] = sum_i omega[i] * L[i, j]`` weights
    column j; ``p = v / sum(v)`` are the coordinate sampling probabilities;
    ``q_cond`` holds the conditional component probabilities
    ``omega[i] * L[i, j] / v[j]`` per stored entry of L (CSC order); and
    ``agg_smoothness = sum_j v[j] / n`` is the aggregate smoothness constant.
    """

    n: int
    d: int
    omega: np.ndarray
    v: np.ndarray
    p: np.ndarray
    q_ptr: np.ndarray
    q_rows: np.ndarray
    q_weights: np.ndarray  # omega_i * L_ij per entry
    q_cond: np.ndarray     # q_weights normalized per column
    lip_vals: np.ndarray   # L_ij per entry (CSC order)
    agg_smoothness: float


def derive_sampling_tables(lip) -> SamplingTables:
    """Derive all sampling quantities from a curvature table.

    ``lip`` may be a dense 2-d array or any scipy sparse matrix; zeros mean
    "component i does not depend on coordinate j". Raises if any entry is
    negative or any column is entirely zero (its sampling probability would
    not be well defined).
    """
    lc = sp.csc_matrix(lip)
    lc.eliminate_zeros()
    lc.sort_indices()
    n, d = lc.shape
    if np.any(lc.data < 0):
        raise ValueError("curvature table entries must be nonnegative")
    omega = np.diff(sp.csr_matrix(lc).indptr).astype(np.int64)
    q_ptr = lc.indptr.astype(np.int64)
    q_rows = lc.indices.astype(np.int64)
    lip_vals = lc.data.astype(np.float64)
    q_weights = omega[q_rows] * lip_vals
    entry_cols = _entry_cols(q_ptr)
    v = np.bincount(entry_cols, weights=q_weights, minlength=d)
    if np.any(v <= 0.0):
        raise ValueError("every coordinate must carry positive weight (empty column?)")
    p = v / v.sum()
    q_cond = q_weights / v[entry_cols]
    return SamplingTables(
        n=n, d=d, omega=omega, v=v, p=p,
        q_ptr=q_ptr, q_rows=q_rows, q_weights=q_weights, q_cond=q_cond,
        lip_vals=lip_vals,
        agg_smoothness=float(v.sum() / n),
    )


def _entry_cols(ptr: np.ndarray) -> np.ndarray:
    """Column index of each stored entry given CSC offsets."""
    return np.repeat(np.arange(ptr.size - 1, dtype=np.int64), np.diff(ptr))


@dataclass
class Problem:
    """Immutable finite-sum objective plus everything solvers need.

    Safe to share across threads after construction; the lazy alias tables
    are built under a lock.
    """

    dataset: SparseDataset
    loss: LossKind
    mu: float
    reg_mode: RegMode
    lip: sp.csc_matrix           # curvature table, CSC
    tables: SamplingTables
    reg_c: np.ndarray            # per-column regularizer curvature (mu * n/n_j or mu)
    comp_smoothness: np.ndarray  # per-component full-gradient smoothness bound

    # kernel-ready views (int64/float64, CSC order)
    c_ptr: np.ndarray = field(repr=False, default=None)
    c_rows: np.ndarray = field(repr=False, default=None)
    c_vals: np.ndarray = field(repr=False, default=None)
    q_avals: np.ndarray = field(repr=False, default=None)  # a_ij per conditional entry
    q_invnq: np.ndarray = field(repr=False, default=None)  # 1 / (n * q_ij) per entry

    _alias_lock: threading.Lock = field(default_factory=threading.Lock, repr=False)
    _alias_tables: tuple = field(default=None, repr=False)

    @property
    def n(self) -> int:
        return self.dataset.n

    @property
    def d(self) -> int:
        return self.dataset.d

    @property
    def omega(self) -> np.ndarray:
        return self.tables.omega

    @property
    def v(self) -> np.ndarray:
        return self.tables.v

    @property
    def p(self) -> np.ndarray:
        return self.tables.p

    @property
    def q_ptr(self) -> np.ndarray:
        return self.tables.q_ptr

    @property
    def q_rows(self) -> np.ndarray:
        return self.tables.q_rows

    @property
    def q_weights(self) -> np.ndarray:
        return self.tables.q_weights

    @property
    def q_cond(self) -> np.ndarray:
        return self.tables.q_cond

    @property
    def L_hat(self) -> float:
        return self.tables.agg_smoothness

    @property
    def kappa_hat(self) -> float:
        return self.tables.agg_smoothness / self.mu if self.mu > 0 else np.inf

    def alias_tables(self) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        """Flattened alias tables ``(p_prob, p_alias, q_prob, q_alias)``.

        The coordinate table indexes columns; the conditional tables store
        acceptance thresholds and local alias positions per column, laid out
        by ``q_ptr``. Built once, lazily, under a lock.
        """
        with self._alias_lock:
            if self._alias_tables is None:
                p_prob, p_alias = build_alias_table(self.v)
                q_prob = np.empty_like(self.q_weights)
                q_alias = np.empty(self.q_weights.shape[0], dtype=np.int64)
                ptr = self.q_ptr
                for j in range(self.d):
                    lo, hi = ptr[j], ptr[j + 1]
                    pr, al = build_alias_table(self.q_weights[lo:hi])
                    q_prob[lo:hi] = pr
                    q_alias[lo:hi] = al
                self._alias_tables = (p_prob, p_alias, q_prob, q_alias)
        return self._alias_tables

    def loss_values(self, t: np.ndarray) -> np.ndarray:
        return loss_value(self.loss, t, self.dataset.labels)

    def loss_derivs(self, t: np.ndarray) -> np.ndarray:
        if self.loss is LossKind.SQUARED:
            return t - self.dataset.labels
        return _logistic_deriv(t, self.dataset.labels)


def build_problem(
    dataset: SparseDataset,
    loss: LossKind,
    mu: float,
    reg_mode: RegMode = RegMode.SUPPORT,
) -> Problem:
    """Assemble a :class:`Problem` from data, a loss, and an L2 weight.

    ``mu`` must be nonnegative; with ``mu = 0`` the objective is unregularized
    and the condition number is reported as infinity. The curvature table is
    ``gamma * a_ij**2`` plus the mode's regularizer curvature, where ``gamma``
    bounds the scalar loss curvature.
    """
    if mu < 0:
        raise ValueError("mu must be nonnegative")
    if dataset.n == 0 or dataset.nnz == 0:
        raise ValueError("dataset is empty")
    gamma = loss.curvature_bound
    n, d = dataset.n, dataset.d
    col_counts = dataset.col_nnz
    c_ptr = dataset.csc.indptr.astype(np.int64)
    c_rows = dataset.csc.indices.astype(np.int64)
    c_vals = dataset.csc.data.astype(np.float64)

    if reg_mode is RegMode.SUPPORT:
        reg_c = mu * (n / col_counts.astype(np.float64))
    else:
        reg_c = np.full(d, float(mu))

    if reg_mode is RegMode.SUPPORT or mu == 0.0:
        # curvature table shares the data's sparsity pattern
        lip_vals = gamma * c_vals**2
        if reg_mode is RegMode.SUPPORT and mu > 0.0:
            lip_vals = lip_vals + reg_c[_entry_cols(c_ptr)]
        lip = sp.csc_matrix((lip_vals, c_rows.copy(), c_ptr.copy()), shape=(n, d))
        tables = derive_sampling_tables(lip)
        q_avals = c_vals.copy()
    else:
        if n * d > DENSE_MODE_ENTRY_LIMIT:
            raise ValueError(
                f"dense regularizer mode needs {n * d} conditional entries; "
                "use support mode for instances this large"
            )
        dense_a = np.zeros((n, d))
        dense_a[c_rows, _entry_cols(c_ptr)] = c_vals
        lip = sp.csc_matrix(gamma * dense_a**2 + mu)
        tables = derive_sampling_tables(lip)
        q_avals = np.empty(tables.q_rows.size)
        for j in range(d):
            lo, hi = tables.q_ptr[j], tables.q_ptr[j + 1]
            q_avals[lo:hi] = dense_a[tables.q_rows[lo:hi], j]

    q_invnq = 1.0 / (n * tables.q_cond)
    comp_smoothness = _component_smoothness(dataset, gamma, mu, reg_mode)
    return Problem(
        dataset=dataset,
        loss=loss,
        mu=float(mu),
        reg_mode=reg_mode,
        lip=lip,
        tables=tables,
        reg_c=reg_c,
        comp_smoothness=comp_smoothness,
        c_ptr=c_ptr,
        c_rows=c_rows,
        c_vals=c_vals,
        q_avals=q_avals,
        q_invnq=q_invnq,
    )


def _component_smoothness(
    dataset: SparseDataset, gamma: float, mu: float, reg_mode: RegMode
) -> np.ndarray:
    """Upper bound on the gradient Lipschitz constant of each component."""
    sq = dataset.csr.copy()
    sq.data = sq.data**2
    row_sq = np.asarray(sq.sum(axis=1)).ravel()
    if mu == 0.0:
        return gamma * row_sq
    if reg_mode is RegMode.DENSE:
        return gamma * row_sq + mu
    n = dataset.n
    ratio = n / dataset.col_nnz.astype(np.float64)
    out = gamma * row_sq
    for i in range(n):
        idx, _ = dataset.row(i)
        if idx.size:
            out[i] += mu * ratio[idx].max()
    return out


# ---------------------------------------------------------------------------
# objective oracles
# ---------------------------------------------------------------------------


def value(problem: Problem, x: np.ndarray) -> float:
    """Exact objective value f(x). Identical in both regularizer modes."""
    x = _check_dim(problem, x)
    t = problem.dataset.csr @ x
    data_term = float(problem.loss_values(t).mean())
    return data_term + 0.5 * problem.mu * float(x @ x)


def full_gradient(problem: Problem, x: np.ndarray) -> np.ndarray:
    """Exact gradient of f; costs one pass over the data (n component gradients)."""
    x = _check_dim(problem, x)
    t = problem.dataset.csr @ x
    g = np.asarray(problem.dataset.csr.T @ problem.loss_derivs(t)).ravel() / problem.n
    return g + problem.mu * x


def component_value(problem: Problem, i: int, x: np.ndarray) -> float:
    """Value of component f_i at x."""
    x = _check_dim(problem, x)
    idx, vals = problem.dataset.row(i)
    t = float(vals @ x[idx])
    base = float(loss_value(problem.loss, t, problem.dataset.labels[i]))
    if problem.mu == 0.0:
        return base
    if problem.reg_mode is RegMode.DENSE:
        return base + 0.5 * problem.mu * float(x @ x)
    return base + 0.5 * float(problem.reg_c[idx] @ (x[idx] ** 2))


def component_gradient(problem: Problem, i: int, x: np.ndarray) -> np.ndarray:
    """Dense gradient of component f_i at x."""
    x = _check_dim(problem, x)
    idx, vals = problem.dataset.row(i)
    t = float(vals @ x[idx])
    slope = float(loss_deriv(problem.loss, t, problem.dataset.labels[i]))
    g = np.zeros(problem.d)
    g[idx] = slope * vals
    if problem.mu == 0.0:
        return g
    if problem.reg_mode is RegMode.DENSE:
        return g + problem.mu * x
    g[idx] += problem.reg_c[idx] * x[idx]
    return g


def component_partial(problem: Problem, i: int, j: int, x: np.ndarray) -> float:
    """Partial derivative of f_i along coordinate j, computed from scratch."""
    x = _check_dim(problem, x)
    idx, vals = problem.dataset.row(i)
    t = float(vals @ x[idx])
    a_ij = _row_lookup(idx, vals, j)
    slope = float(loss_deriv(problem.loss, t, problem.dataset.labels[i]))
    out = slope * a_ij
    if problem.mu == 0.0:
        return out
    if problem.reg_mode is RegMode.DENSE:
        return out + problem.mu * x[j]
    if a_ij != 0.0:
        out += problem.reg_c[j] * x[j]
    return out


def _row_lookup(idx: np.ndarray, vals: np.ndarray, j: int) -> float:
    pos = np.searchsorted(idx, j)
    if pos < idx.size and idx[pos] == j:
        return float(vals[pos])
    return 0.0


def _check_dim(problem: Problem, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (problem.d,):
        raise ValueError(f"point has shape {x.shape}, expected ({problem.d},)")
    return x


# ---------------------------------------------------------------------------
# residual cache
# ---------------------------------------------------------------------------


@dataclass
class ResidualCache:
    """Maintained inner products ``r_i = <a_i, y>`` for a single mutable point.

    The cache owns its point: all updates go through
    :func:`apply_coordinate_step`, which keeps ``y`` and ``r`` consistent. To
    bound float drift the residuals are recomputed from scratch every ``n``
    coordinate steps. One cache belongs to one problem and one solver run.
    """

    problem: Problem
    y: np.ndarray
    r: np.ndarray
    steps_since_refresh: int = 0
    column_touches: int = 0

    @classmethod
    def create(cls, problem: Problem, y: np.ndarray) -> "ResidualCache":
        y = _check_dim(problem, y).copy()
        return cls(problem=problem, y=y, r=problem.dataset.csr @ y)

    def refresh(self) -> None:
        self.r = self.problem.dataset.csr @ self.y
        self.steps_since_refresh = 0

    def check_owner(self, problem: Problem) -> None:
        if self.problem is not problem:
            raise StaleCacheError("cache belongs to a different problem")


def apply_coordinate_step(cache: ResidualCache, j: int, delta: float) -> ResidualCache:
    """Shift coordinate j of the cached point by ``delta``; O(n_j) work."""
    if delta == 0.0:
        return cache
    problem = cache.problem
    lo, hi = problem.c_ptr[j], problem.c_ptr[j + 1]
    cache.y[j] += delta
    cache.r[problem.c_rows[lo:hi]] += problem.c_vals[lo:hi] * delta
    cache.column_touches += int(hi - lo)
    cache.steps_since_refresh += 1
    if cache.steps_since_refresh >= problem.n:
        cache.refresh()
    return cache


def partial(problem: Problem, i: int, j: int, cache: ResidualCache) -> float:
    """Partial derivative of f_i along j at the cache's point, from cached residuals.

    Requires ``L[i, j] > 0``: in support mode j must lie in the support of
    ``a_i``; in dense mode (mu > 0) any j is valid.
    """
    cache.check_owner(problem)
    idx, vals = problem.dataset.row(i)
    a_ij = _row_lookup(idx, vals, j)
    if a_ij == 0.0 and problem.reg_mode is RegMode.SUPPORT:
        raise ValueError(f"component {i} does not depend on coordinate {j}")
    slope = float(loss_deriv(problem.loss, float(cache.r[i]), problem.dataset.labels[i]))
    return slope * a_ij + problem.reg_c[j] * cache.y[j]
