"""Exact nonuniform discrete sampling and reproducible randomness.

All randomness in the repository flows through numpy ``Generator`` objects
backed by the PCG64 bit generator: a fixed, documented algorithm whose draw
sequence is identical for identical seeds on every platform. Weighted choices
use Walker/Vose alias tables (O(n) build, O(1) sample); the inner-loop length
law is sampled by inverse CDF on a precomputed cumulative table.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass, field
from typing import TYPE_CHECKING

import numpy as np

if TYPE_CHECKING:
    from .problem import Problem

__all__ = [
    "make_rng",
    "DiscreteDistribution",
    "build_distribution",
    "GeometricLaw",
    "sample_inner_length",
    "PairSampler",
    "sample_pair",
]


def make_rng(seed: int) -> np.random.Generator:
    """Repository-wide PRNG: PCG64 seeded with a 64-bit integer."""
    return np.random.Generator(np.random.PCG64(seed))


def build_alias_table(weights: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Vose alias construction over ``weights`` (nonnegative, not all zero).

    Returns ``(prob, alias)`` arrays of the same length. Entries are filled in
    ascending index order (FIFO work queues), so the table is a deterministic
    function of the weights.
    """
    w = np.asarray(weights, dtype=np.float64)
    k = w.size
    total = float(w.sum())
    scaled = w * (k / total)
    prob = np.ones(k)
    alias = np.arange(k, dtype=np.int64)
    small = [i for i in range(k) if scaled[i] < 1.0]
    large = [i for i in range(k) if scaled[i] >= 1.0]
    si = li = 0
    while si < len(small) and li < len(large):
        s, l = small[si], large[li]
        si += 1
        prob[s] = scaled[s]
        alias[s] = l
        scaled[l] = (scaled[l] + scaled[s]) - 1.0
        if scaled[l] < 1.0:
            small.append(l)
            li += 1
    # leftovers are numerically 1.0
    for idx in range(si, len(small)):
        prob[small[idx]] = 1.0
    for idx in range(li, len(large)):
        prob[large[idx]] = 1.0
    return prob, alias


def alias_draw(prob: np.ndarray, alias: np.ndarray, u: float) -> int:
    """Map one uniform in [0,1) through an alias table."""
    k = prob.shape[0]
    scaled = u * k
    idx = int(scaled)
    if idx >= k:  # guard u == 1.0 - eps rounding up
        idx = k - 1
    frac = scaled - idx
    return idx if frac < prob[idx] else int(alias[idx])


@dataclass
class DiscreteDistribution:
    """Sampler over {0..k-1} with probabilities proportional to ``weights``.

    Zero-weight indices have sampling probability exactly zero: they only
    appear in the alias table with acceptance threshold 0, and the strict
    ``frac < prob`` test never accepts them.
    """

    weights: np.ndarray
    probabilities: np.ndarray
    prob: np.ndarray   # alias acceptance thresholds
    alias: np.ndarray  # alias targets
    support_size: int

    def sample(self, rng: np.random.Generator) -> int:
        return alias_draw(self.prob, self.alias, rng.random())

    def sample_many(self, rng: np.random.Generator, size: int) -> np.ndarray:
        u = rng.random(size)
        scaled = u * self.prob.shape[0]
        idx = scaled.astype(np.int64)
        np.minimum(idx, self.prob.shape[0] - 1, out=idx)
        frac = scaled - idx
        take_alias = frac >= self.prob[idx]
        out = idx.copy()
        out[take_alias] = self.alias[idx[take_alias]]
        return out


def build_distribution(weights) -> DiscreteDistribution:
    """Build an O(1) sampler from nonnegative weights (at least one positive)."""
    w = np.asarray(weights, dtype=np.float64)
    if w.ndim != 1 or w.size == 0:
        raise ValueError("weights must be a nonempty 1-d array")
    if np.any(w < 0.0):
        raise ValueError("weights must be nonnegative")
    total = float(w.sum())
    if total <= 0.0:
        raise ValueError("at least one weight must be positive")
    prob, alias = build_alias_table(w)
    return DiscreteDistribution(
        weights=w.copy(),
        probabilities=w / total,
        prob=prob,
        alias=alias,
        support_size=int(np.count_nonzero(w)),
    )


@dataclass
class GeometricLaw:
    """Length law of the stochastic inner loop.

    ``P(T) = rho**(m - T) / beta`` for ``T`` in {1..m}, with
    ``rho = 1 - mu*h`` and ``beta = sum_{t=1..m} rho**(m-t)``. Because
    ``rho <= 1`` the probability is nondecreasing in ``T``. ``mu*h = 0`` is
    supported (a lower bound of 0 on the convexity modulus) and degenerates to
    the uniform law on {1..m}.
    """

    m: int
    mu_h: float
    rho: float
    beta: float
    pmf: np.ndarray
    cdf: np.ndarray

    @classmethod
    def build(cls, m: int, mu_h: float) -> "GeometricLaw":
        if m < 1:
            raise ValueError("m must be >= 1")
        if mu_h < 0.0 or mu_h >= 1.0:
            raise ValueError(f"mu*h must lie in [0, 1), got {mu_h}")
        rho = 1.0 - mu_h
        powers = rho ** (m - np.arange(1, m + 1, dtype=np.float64))
        beta = float(powers.sum())
        pmf = powers / beta
        cdf = np.cumsum(pmf)
        return cls(m=m, mu_h=mu_h, rho=rho, beta=beta, pmf=pmf, cdf=cdf)

    def sample(self, rng: np.random.Generator) -> int:
        return self.sample_from_uniform(rng.random())

    def sample_from_uniform(self, u: float) -> int:
        return int(np.searchsorted(self.cdf, u, side="right")) + 1

    def mean(self) -> float:
        return float(np.arange(1, self.m + 1) @ self.pmf)


def sample_inner_length(law: GeometricLaw, rng: np.random.Generator) -> int:
    """Draw the number of stochastic steps for one epoch; result in {1..m}."""
    return law.sample(rng)


@dataclass
class PairSampler:
    """Sequential (coordinate, component) sampler for a problem.

    A coordinate ``j`` is drawn from the column probabilities, then a
    component ``i`` from the conditional law of column ``j``. Column samplers
    are built lazily on first touch and memoized (columns with tiny
    probability may never pay their construction cost); memoization is
    lock-protected so pre-building from another thread is safe.
    """

    col_dist: DiscreteDistribution
    q_ptr: np.ndarray    # column offsets into the conditional tables
    q_rows: np.ndarray   # component index per support entry
    q_weights: np.ndarray
    _col_cache: dict = field(default_factory=dict)
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False)

    @classmethod
    def from_problem(cls, problem: "Problem") -> "PairSampler":
        return cls(
            col_dist=build_distribution(problem.v),
            q_ptr=problem.q_ptr,
            q_rows=problem.q_rows,
            q_weights=problem.q_weights,
        )

    def q_column(self, j: int) -> DiscreteDistribution:
        with self._lock:
            dist = self._col_cache.get(j)
            if dist is None:
                lo, hi = self.q_ptr[j], self.q_ptr[j + 1]
                dist = build_distribution(self.q_weights[lo:hi])
                self._col_cache[j] = dist
        return dist

    def sample(self, rng: np.random.Generator) -> tuple[int, int]:
        j = self.col_dist.sample(rng)
        pos = self.q_column(j).sample(rng)
        return j, int(self.q_rows[self.q_ptr[j] + pos])

    def joint_distribution(self) -> tuple[DiscreteDistribution, np.ndarray, np.ndarray]:
        """Flattened joint law over support pairs.

        Returns ``(dist, pair_j, pair_i)``: sampling ``dist`` yields a flat
        index ``s`` decoding to the pair ``(pair_j[s], pair_i[s])``, with
        joint probability equal to the product law of the sequential sampler.
        """
        d = self.col_dist.weights.shape[0]
        pj = self.col_dist.probabilities
        weights = np.empty_like(self.q_weights)
        pair_j = np.empty(self.q_weights.shape[0], dtype=np.int64)
        for j in range(d):
            lo, hi = self.q_ptr[j], self.q_ptr[j + 1]
            colw = self.q_weights[lo:hi]
            tot = colw.sum()
            weights[lo:hi] = pj[j] * (colw / tot) if tot > 0 else 0.0
            pair_j[lo:hi] = j
        return build_distribution(weights), pair_j, self.q_rows.copy()


def sample_pair(sampler: PairSampler, rng: np.random.Generator) -> tuple[int, int]:
    """Draw ``(j, i)``: coordinate first, then component conditioned on it."""
    return sampler.sample(rng)
