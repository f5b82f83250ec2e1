"""Solvers: the semi-stochastic coordinate method and four baselines.

All solvers emit a :class:`RunTrace` with uniform cost accounting:
``grad_evals`` counts component-gradient evaluations (a full-gradient pass
costs n), ``partial_evals`` counts single partial-derivative evaluations, and
``column_touches`` counts sparse column work in units of touched nonzeros
(residual maintenance, plus the per-step column scans of plain coordinate
descent). Objective values recorded in the trace cost one extra data pass per
epoch; they are tallied separately in ``value_evals`` and excluded from the
work counters so progress measurement does not contaminate comparisons.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass

import numpy as np

from . import kernels
from .problem import (
    Problem,
    component_gradient,
    full_gradient,
    loss_deriv,
    value,
)
from .sampling import GeometricLaw, build_distribution, make_rng

__all__ = [
    "SolverConfig",
    "EpochRecord",
    "RunTrace",
    "TheoreticalRate",
    "DivergenceError",
    "default_params",
    "theoretical_rate",
    "s2cd",
    "cd_nonuniform",
    "gd",
    "sgd",
    "s2gd",
]

DIVERGENCE_FACTOR = 1e6


class DivergenceError(RuntimeError):
    """The objective blew up; almost always a stepsize misconfiguration."""


@dataclass(frozen=True)
class SolverConfig:
    """Hyperparameters of one semi-stochastic run.

    ``mu_lower_bound`` is the convexity modulus used in the inner-loop length
    law; it defaults to the problem's mu and may be any lower bound including
    0, in which case the law degenerates to the uniform distribution on
    {1..m}.
    """

    h: float
    m: int
    epochs: int
    seed: int | None = None
    epsilon: float | None = None
    mu_lower_bound: float | None = None

    def law_mu(self, problem: Problem) -> float:
        return self.mu_lower_bound if self.mu_lower_bound is not None else problem.mu

    def validate(self, problem: Problem, require_contraction: bool = False) -> None:
        if self.h <= 0:
            raise ValueError("stepsize h must be positive")
        if self.m < 1:
            raise ValueError("m must be >= 1")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        mu_h = self.law_mu(problem) * self.h
        if mu_h < 0 or mu_h >= 1:
            raise ValueError(f"mu * h = {mu_h} outside [0, 1)")
        if require_contraction and not self.h < 1.0 / (2.0 * problem.L_hat):
            raise ValueError(
                f"h = {self.h} is not below 1/(2*L_hat) = {1.0 / (2.0 * problem.L_hat)}"
            )


@dataclass
class EpochRecord:
    epoch: int
    f: float
    gap: float              # f - f_star (nan when no oracle value supplied)
    grad_evals: int         # cumulative component-gradient evaluations
    partial_evals: int      # cumulative partial-derivative evaluations
    column_touches: int     # cumulative touched nonzeros in column work
    value_evals: int        # cumulative, progress measurement only
    inner_steps: int        # stochastic steps taken in this epoch
    wall_ms: float


@dataclass
class EpochInner:
    """Per-step recording of one epoch (instrumentation for audits)."""

    x_snap: np.ndarray
    grad: np.ndarray
    j: np.ndarray
    i: np.ndarray           # -1 for the single-component path
    direction: np.ndarray   # combined per-step direction scalar before scaling
    y_after: np.ndarray     # (t_k, d) iterates after each step


@dataclass
class EpochStats:
    """Per-step objective/distance tracking (instrumentation for rate checks)."""

    f_x: float              # f at the epoch's snapshot
    f_y: np.ndarray         # length t_k + 1, f(y) before/after each step
    dist_sq: np.ndarray     # length t_k + 1, ||y - x_star||^2


@dataclass
class RunTrace:
    method: str
    seed: int | None
    records: list[EpochRecord]
    x_final: np.ndarray
    h: float | None = None
    m: int | None = None
    inner: list[EpochInner] | None = None
    stats: list[EpochStats] | None = None

    def gaps(self) -> np.ndarray:
        return np.array([r.gap for r in self.records])

    def f_values(self) -> np.ndarray:
        return np.array([r.f for r in self.records])

    def fingerprint(self) -> bytes:
        """Deterministic encoding of the trace, wall time excluded."""
        parts = [self.method.encode(), str(self.seed).encode()]
        for r in self.records:
            parts.append(
                f"{r.epoch},{r.f!r},{r.gap!r},{r.grad_evals},{r.partial_evals},"
                f"{r.column_touches},{r.value_evals},{r.inner_steps}".encode()
            )
        parts.append(np.ascontiguousarray(self.x_final).tobytes())
        return b"|".join(parts)


@dataclass(frozen=True)
class TheoreticalRate:
    """Per-epoch contraction factor of the expected suboptimality."""

    rho_epoch: float
    h: float
    m: int

    @property
    def guarantees_contraction(self) -> bool:
        return 0.0 < self.rho_epoch < 1.0


def theoretical_rate(problem: Problem, h: float, m: int) -> TheoreticalRate:
    """Evaluate the per-epoch contraction factor for stepsize h and cap m.

    Requires ``0 < h < 1/(2 * L_hat)``. With mu = 0 there is no contraction
    guarantee and the factor is infinite.
    """
    l_hat = problem.L_hat
    if not 0.0 < h < 1.0 / (2.0 * l_hat):
        raise ValueError(f"h must lie in (0, {1.0 / (2.0 * l_hat)}), got {h}")
    if m < 1:
        raise ValueError("m must be >= 1")
    shrink = (1.0 - problem.mu * h) ** m
    denom = 1.0 - 2.0 * l_hat * h
    if shrink >= 1.0:
        rho = math.inf
    else:
        rho = shrink / ((1.0 - shrink) * denom) + 2.0 * l_hat * h / denom
    return TheoreticalRate(rho_epoch=rho, h=h, m=m)


def default_params(problem: Problem, epsilon: float, seed: int | None = None) -> SolverConfig:
    """Stepsize, inner-loop cap, and epoch count for a target accuracy.

    With ``k = ceil(ln(1/epsilon))`` epochs and ``delta = epsilon**(1/k)``,
    picks ``h = delta / ((4 + 2 delta) * L_hat)`` and
    ``m = ceil((4/delta + 2) * ln(2/delta + 2) * kappa_hat)``, which contracts
    the expected suboptimality by at least ``delta`` per epoch, i.e. to
    ``epsilon`` after the k epochs.
    """
    if not 0.0 < epsilon < 1.0:
        raise ValueError("epsilon must lie in (0, 1)")
    if not problem.mu > 0:
        raise ValueError("auto-parameterization needs a strongly convex problem (mu > 0)")
    k = math.ceil(math.log(1.0 / epsilon))
    delta = epsilon ** (1.0 / k)
    h = delta / ((4.0 + 2.0 * delta) * problem.L_hat)
    m = math.ceil((4.0 / delta + 2.0) * math.log(2.0 / delta + 2.0) * problem.kappa_hat)
    return SolverConfig(h=h, m=m, epochs=k, seed=seed, epsilon=epsilon)


# ---------------------------------------------------------------------------
# semi-stochastic coordinate descent (and its single-component specialization)
# ---------------------------------------------------------------------------


def s2cd(
    problem: Problem,
    config: SolverConfig,
    rng: np.random.Generator | None = None,
    x0: np.ndarray | None = None,
    f_star: float | None = None,
    record_inner: bool = False,
    track_distance_to: np.ndarray | None = None,
    budget_passes: float | None = None,
) -> tuple[np.ndarray, RunTrace]:
    """Run the semi-stochastic coordinate method.

    Each epoch computes and stores the full gradient at the current point,
    draws the number of inner steps from the geometric length law, then
    repeatedly samples a coordinate j and a component i (nonuniformly) and
    moves coordinate j along the variance-reduced direction built from two
    partial derivatives of f_i and the stored gradient entry.

    ``record_inner`` attaches per-step instrumentation to the trace;
    ``track_distance_to`` (typically the minimizer) attaches per-step
    objective/distance statistics. ``budget_passes`` stops after the first
    epoch whose cumulative cost exceeds the budget in effective passes.
    """
    return _run_semi_stochastic(
        problem, config, rng, x0, f_star,
        cd_mode=False, method="s2cd",
        record_inner=record_inner, track_distance_to=track_distance_to,
        budget_passes=budget_passes,
    )


def cd_nonuniform(
    problem: Problem,
    config: SolverConfig,
    rng: np.random.Generator | None = None,
    x0: np.ndarray | None = None,
    f_star: float | None = None,
    record_inner: bool = False,
    track_distance_to: np.ndarray | None = None,
    budget_passes: float | None = None,
) -> tuple[np.ndarray, RunTrace]:
    """Coordinate descent on f with coordinate probabilities p_j.

    This is exactly the single-component path of :func:`s2cd` applied to f
    itself (including the per-epoch gradient snapshot, whose correction term
    cancels identically): on a one-component problem the two methods produce
    the same iterate sequence bit for bit under the same seed. Each step costs
    two column scans instead of two O(1) partial evaluations.
    """
    return _run_semi_stochastic(
        problem, config, rng, x0, f_star,
        cd_mode=True, method="cd_nonuniform",
        record_inner=record_inner, track_distance_to=track_distance_to,
        budget_passes=budget_passes,
    )


def _run_semi_stochastic(
    problem, config, rng, x0, f_star,
    cd_mode, method, record_inner, track_distance_to, budget_passes,
):
    config.validate(problem)
    rng = _resolve_rng(rng, config.seed)
    n, d = problem.n, problem.d
    y = _initial_point(problem, x0)
    law = GeometricLaw.build(config.m, config.law_mu(problem) * config.h)
    p_prob, p_alias, q_prob, q_alias = problem.alias_tables()
    step_over_p = config.h / problem.p
    loss_code = 0 if problem.loss.name == "SQUARED" else 1
    labels = problem.dataset.labels
    x_star = track_distance_to
    if x_star is not None:
        x_star = np.asarray(x_star, dtype=np.float64)

    grad_evals = partial_evals = column_touches = value_evals = 0
    f0 = value(problem, y)
    value_evals += n
    guard = DIVERGENCE_FACTOR * max(abs(f0), 1.0)
    records = [_record(0, f0, f_star, grad_evals, partial_evals, column_touches,
                       value_evals, 0, 0.0)]
    inner: list[EpochInner] | None = [] if record_inner else None
    stats: list[EpochStats] | None = [] if x_star is not None else None
    mean_nnz = problem.dataset.mean_row_nnz

    for k in range(config.epochs):
        t0 = time.perf_counter()
        x_snap = y.copy()
        grad = full_gradient(problem, x_snap)
        grad_evals += n
        r_y = problem.dataset.csr @ y
        r_snap = r_y.copy()
        big_t = law.sample(rng)
        buf = rng.random(2 * big_t)

        if record_inner:
            rec_j = np.empty(big_t, dtype=np.int64)
            rec_i = np.empty(big_t, dtype=np.int64)
            rec_g = np.empty(big_t, dtype=np.float64)
            rec_y = np.empty((big_t, d), dtype=np.float64)
        else:
            rec_j, rec_i, rec_g, rec_y = kernels.empty_record_buffers()

        if x_star is not None:
            st_f = np.empty(big_t + 1, dtype=np.float64)
            st_dist = np.empty(big_t + 1, dtype=np.float64)
            phi_sum = float(problem.loss_values(r_y).sum())
            y_sq = float(y @ y)
            dist_sq = float(np.sum((y - x_star) ** 2))
            st_f[0] = phi_sum / n + 0.5 * problem.mu * y_sq
            st_dist[0] = dist_sq
            xs_arg = x_star
        else:
            st_f, st_dist = kernels.empty_stat_buffers()
            phi_sum = y_sq = dist_sq = 0.0
            xs_arg = np.empty(0, dtype=np.float64)

        (steps_done, _, touches, phi_sum, y_sq, dist_sq, ok) = kernels.epoch_kernel(
            problem.c_ptr, problem.c_rows, problem.c_vals, labels, loss_code,
            p_prob, p_alias,
            problem.q_ptr, problem.q_rows, problem.q_avals, q_prob, q_alias,
            problem.q_invnq,
            problem.reg_c, problem.mu, 1.0 / n,
            step_over_p,
            y, r_y, x_snap, r_snap, grad,
            buf,
            np.int64(n), np.int64(0),
            cd_mode,
            rec_j, rec_i, rec_g, rec_y,
            st_f, st_dist, xs_arg, phi_sum, y_sq, dist_sq,
        )
        if not ok:
            raise DivergenceError(
                f"{method}: non-finite direction at epoch {k}, inner step {steps_done} "
                f"(h={config.h}, m={config.m}); reduce the stepsize"
            )
        partial_evals += 2 * big_t
        column_touches += int(touches)
        f_k = value(problem, y)
        value_evals += n
        wall_ms = (time.perf_counter() - t0) * 1e3
        records.append(_record(k + 1, f_k, f_star, grad_evals, partial_evals,
                               column_touches, value_evals, big_t, wall_ms))
        if record_inner:
            inner.append(EpochInner(x_snap=x_snap, grad=grad, j=rec_j, i=rec_i,
                                    direction=rec_g, y_after=rec_y))
        if x_star is not None:
            # records[-2] is the record for x_k, the epoch's snapshot
            stats.append(EpochStats(f_x=records[-2].f, f_y=st_f, dist_sq=st_dist))
        if not np.isfinite(f_k) or f_k > guard:
            raise DivergenceError(
                f"{method}: objective {f_k} exceeded {DIVERGENCE_FACTOR:g} x f(x0)={f0} "
                f"at epoch {k + 1} (h={config.h}); reduce the stepsize"
            )
        if budget_passes is not None:
            passes = grad_evals / n + partial_evals / (n * mean_nnz)
            if passes >= budget_passes:
                break

    trace = RunTrace(method=method, seed=config.seed, records=records,
                     x_final=y.copy(), h=config.h, m=config.m,
                     inner=inner, stats=stats)
    return y.copy(), trace


def _record(epoch, f, f_star, grad_evals, partial_evals, column_touches,
            value_evals, inner_steps, wall_ms) -> EpochRecord:
    gap = f - f_star if f_star is not None else math.nan
    return EpochRecord(epoch=epoch, f=f, gap=gap, grad_evals=grad_evals,
                       partial_evals=partial_evals, column_touches=column_touches,
                       value_evals=value_evals, inner_steps=inner_steps,
                       wall_ms=wall_ms)


def _resolve_rng(rng, seed) -> np.random.Generator:
    if rng is not None:
        return rng
    return make_rng(seed if seed is not None else 0)


def _initial_point(problem: Problem, x0) -> np.ndarray:
    if x0 is None:
        return np.zeros(problem.d)
    x0 = np.asarray(x0, dtype=np.float64)
    if x0.shape != (problem.d,):
        raise ValueError(f"x0 has shape {x0.shape}, expected ({problem.d},)")
    return x0.copy()


# ---------------------------------------------------------------------------
# baselines
# ---------------------------------------------------------------------------


def gd(
    problem: Problem,
    stepsize: float,
    iters: int,
    x0: np.ndarray | None = None,
    f_star: float | None = None,
    budget_passes: float | None = None,
) -> tuple[np.ndarray, RunTrace]:
    """Full-gradient descent with a constant stepsize; one data pass per iteration."""
    if stepsize <= 0:
        raise ValueError("stepsize must be positive")
    x = _initial_point(problem, x0)
    n = problem.n
    grad_evals = value_evals = 0
    f0 = value(problem, x)
    value_evals += n
    guard = DIVERGENCE_FACTOR * max(abs(f0), 1.0)
    records = [_record(0, f0, f_star, 0, 0, 0, value_evals, 0, 0.0)]
    for k in range(iters):
        t0 = time.perf_counter()
        x -= stepsize * full_gradient(problem, x)
        grad_evals += n
        f_k = value(problem, x)
        value_evals += n
        records.append(_record(k + 1, f_k, f_star, grad_evals, 0, 0, value_evals,
                               0, (time.perf_counter() - t0) * 1e3))
        if not np.isfinite(f_k) or f_k > guard:
            raise DivergenceError(f"gd: objective {f_k} diverged at iteration {k + 1}")
        if budget_passes is not None and grad_evals / n >= budget_passes:
            break
    return x, RunTrace(method="gd", seed=None, records=records, x_final=x.copy(),
                       h=stepsize)


def sgd(
    problem: Problem,
    stepsize,
    iters: int,
    rng: np.random.Generator | None = None,
    seed: int | None = None,
    x0: np.ndarray | None = None,
    f_star: float | None = None,
    record_every: int | None = None,
    budget_passes: float | None = None,
) -> tuple[np.ndarray, RunTrace]:
    """Stochastic gradient descent over uniformly chosen components.

    ``stepsize`` is a constant or a callable ``t -> eta_t`` (t counts steps
    from 0). The trace records one line every ``record_every`` steps
    (default n, i.e. once per effective data pass).
    """
    rng = _resolve_rng(rng, seed)
    x = _initial_point(problem, x0)
    n = problem.n
    eta_of = stepsize if callable(stepsize) else (lambda _t: stepsize)
    record_every = record_every or n
    grad_evals = value_evals = 0
    f0 = value(problem, x)
    value_evals += n
    guard = DIVERGENCE_FACTOR * max(abs(f0), 1.0)
    records = [_record(0, f0, f_star, 0, 0, 0, value_evals, 0, 0.0)]
    dense_reg = problem.reg_mode.name == "DENSE" and problem.mu > 0
    t0 = time.perf_counter()
    steps_in_block = 0
    for t in range(iters):
        i = int(rng.integers(n))
        idx, vals = problem.dataset.row(i)
        slope = _component_slope(problem, i, float(vals @ x[idx]))
        eta = float(eta_of(t))
        if dense_reg:
            x *= 1.0 - eta * problem.mu
            x[idx] -= eta * slope * vals
        else:
            x[idx] -= eta * (slope * vals + problem.reg_c[idx] * x[idx])
        grad_evals += 1
        steps_in_block += 1
        if steps_in_block == record_every or t == iters - 1:
            f_k = value(problem, x)
            value_evals += n
            records.append(_record(len(records), f_k, f_star, grad_evals, 0, 0,
                                   value_evals, steps_in_block,
                                   (time.perf_counter() - t0) * 1e3))
            steps_in_block = 0
            t0 = time.perf_counter()
            if not np.isfinite(f_k) or f_k > guard:
                raise DivergenceError(f"sgd: objective {f_k} diverged at step {t + 1}")
            if budget_passes is not None and grad_evals / n >= budget_passes:
                break
    return x, RunTrace(method="sgd", seed=seed, records=records, x_final=x.copy())


def _component_slope(problem: Problem, i: int, t: float) -> float:
    return float(loss_deriv(problem.loss, t, problem.dataset.labels[i]))


def s2gd(
    problem: Problem,
    h: float,
    m: int,
    epochs: int,
    rng: np.random.Generator | None = None,
    seed: int | None = None,
    x0: np.ndarray | None = None,
    f_star: float | None = None,
    mu_lower_bound: float | None = None,
    budget_passes: float | None = None,
) -> tuple[np.ndarray, RunTrace]:
    """Semi-stochastic full-vector method: gradient snapshots plus corrected
    component gradients, components sampled proportionally to their smoothness
    constants.

    Uses the same geometric inner-loop length law as the coordinate method.
    Each inner step evaluates two component gradients.
    """
    if h <= 0:
        raise ValueError("stepsize h must be positive")
    rng = _resolve_rng(rng, seed)
    x = _initial_point(problem, x0)
    n = problem.n
    mu_law = mu_lower_bound if mu_lower_bound is not None else problem.mu
    law = GeometricLaw.build(m, mu_law * h)
    comp_dist = build_distribution(problem.comp_smoothness)
    comp_probs = comp_dist.probabilities
    grad_evals = value_evals = 0
    f0 = value(problem, x)
    value_evals += n
    guard = DIVERGENCE_FACTOR * max(abs(f0), 1.0)
    records = [_record(0, f0, f_star, 0, 0, 0, value_evals, 0, 0.0)]
    for k in range(epochs):
        t0 = time.perf_counter()
        grad = full_gradient(problem, x)
        grad_evals += n
        x_snap = x.copy()
        y = x.copy()
        big_t = law.sample(rng)
        for _ in range(big_t):
            i = comp_dist.sample(rng)
            corr = component_gradient(problem, i, y) - component_gradient(problem, i, x_snap)
            y -= h * (grad + corr / (n * comp_probs[i]))
            grad_evals += 2
        x = y
        f_k = value(problem, x)
        value_evals += n
        records.append(_record(k + 1, f_k, f_star, grad_evals, 0, 0, value_evals,
                               big_t, (time.perf_counter() - t0) * 1e3))
        if not np.isfinite(f_k) or f_k > guard:
            raise DivergenceError(f"s2gd: objective {f_k} diverged at epoch {k + 1}")
        if budget_passes is not None and grad_evals / n >= budget_passes:
            break
    return x, RunTrace(method="s2gd", seed=seed, records=records, x_final=x.copy(),
                       h=h, m=m)
