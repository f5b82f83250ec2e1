"""Executable verification of the method's estimator properties and constants.

Every expectation audited here is a finite sum over the (component,
coordinate) support, so the checks enumerate it exactly instead of sampling:
the stochastic direction's mean must equal the gradient, and its second
moment must respect the variance bounds that drive the convergence analysis.
A high-accuracy reference solve certifies the optimal value used by those
bounds.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .problem import (
    LossKind,
    Problem,
    component_gradient,
    component_partial,
    component_value,
    full_gradient,
    value,
)

__all__ = [
    "EstimatorAudit",
    "CocoercivityCheck",
    "ReferenceSolution",
    "ConditionReport",
    "EnumerationBudgetError",
    "audit_estimator",
    "check_cocoercivity",
    "check_smoothness_probe",
    "solve_reference",
    "condition_report",
    "probe_smoothness",
    "probe_strong_convexity",
    "probe_cocoercivity",
]

ENUMERATION_BUDGET = 1_000_000  # support entries


class EnumerationBudgetError(RuntimeError):
    """The instance is too large for exact expectation enumeration."""


@dataclass
class EstimatorAudit:
    """Exact law of the stochastic direction at one (y, snapshot) pair.

    ``mean`` is the exact expectation of the scaled update direction, which
    must equal the gradient at y. ``second_moment`` is the exact expectation
    of its squared norm, which must sit below ``bound_sharp`` (the variant
    with the snapshot coefficient reduced by ``mu / max_j p_j``), itself below
    ``bound_basic``.
    """

    y: np.ndarray
    x_snap: np.ndarray
    mean: np.ndarray
    grad_y: np.ndarray
    second_moment: float
    bound_basic: float
    bound_sharp: float

    @property
    def mean_abs_error(self) -> float:
        return float(np.linalg.norm(self.mean - self.grad_y))

    @property
    def mean_rel_error(self) -> float:
        scale = float(np.linalg.norm(self.grad_y))
        return self.mean_abs_error / scale if scale > 0 else self.mean_abs_error


def audit_estimator(
    problem: Problem,
    y: np.ndarray,
    x_snap: np.ndarray,
    f_star: float,
) -> EstimatorAudit:
    """Enumerate the estimator's exact mean and second moment at (y, x_snap).

    Sums run over every support pair with its exact joint probability;
    feasible only when the support has at most ``ENUMERATION_BUDGET`` entries.
    """
    if problem.q_rows.size > ENUMERATION_BUDGET:
        raise EnumerationBudgetError(
            f"{problem.q_rows.size} support entries exceed the enumeration "
            f"budget of {ENUMERATION_BUDGET}"
        )
    y = np.asarray(y, dtype=np.float64)
    x_snap = np.asarray(x_snap, dtype=np.float64)
    r_y = problem.dataset.csr @ y
    r_x = problem.dataset.csr @ x_snap
    slopes_y = problem.loss_derivs(r_y)
    slopes_x = problem.loss_derivs(r_x)
    grad = full_gradient(problem, x_snap)

    ptr = problem.q_ptr
    cols = np.repeat(np.arange(problem.d, dtype=np.int64), np.diff(ptr))
    rows = problem.q_rows
    a = problem.q_avals
    part_y = slopes_y[rows] * a + problem.reg_c[cols] * y[cols]
    part_x = slopes_x[rows] * a + problem.reg_c[cols] * x_snap[cols]
    g_entry = grad[cols] + problem.q_invnq * (part_y - part_x)

    qc = problem.q_cond
    mean = np.bincount(cols, weights=qc * g_entry, minlength=problem.d)
    second = float(np.sum(qc * g_entry * g_entry / problem.p[cols]))

    f_y = value(problem, y)
    f_x = value(problem, x_snap)
    l_hat = problem.L_hat
    gap_y = f_y - f_star
    gap_x = f_x - f_star
    bound_basic = 4.0 * l_hat * gap_y + 4.0 * l_hat * gap_x
    sharp_coeff = l_hat - problem.mu / float(problem.p.max())
    bound_sharp = 4.0 * l_hat * gap_y + 4.0 * sharp_coeff * gap_x
    return EstimatorAudit(
        y=y, x_snap=x_snap, mean=mean, grad_y=full_gradient(problem, y),
        second_moment=second, bound_basic=bound_basic, bound_sharp=bound_sharp,
    )


class CocoercivityCheck(NamedTuple):
    lhs: float
    rhs: float
    holds: bool


def check_cocoercivity(
    problem: Problem, i: int, j: int, x: np.ndarray, y: np.ndarray,
    slack: float = 1e-10,
) -> CocoercivityCheck:
    """Verify the coordinate co-coercivity inequality for component i along j.

    ``(d_j f_i(x) - d_j f_i(y))^2 <= 2 L_ij (f_i(x) - f_i(y) - <grad f_i(y), x - y>)``.
    Requires ``L_ij > 0``; both sides are evaluated deterministically.
    """
    lij = float(problem.lip[i, j])
    if lij <= 0.0:
        raise ValueError(f"coordinate {j} is outside the support of component {i}")
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    diff = component_partial(problem, i, j, x) - component_partial(problem, i, j, y)
    lhs = diff * diff
    bregman = (
        component_value(problem, i, x)
        - component_value(problem, i, y)
        - float(component_gradient(problem, i, y) @ (x - y))
    )
    rhs = 2.0 * lij * bregman
    return CocoercivityCheck(lhs=lhs, rhs=rhs, holds=lhs <= rhs + slack)


def check_smoothness_probe(
    problem: Problem, i: int, j: int, x: np.ndarray, h: float,
    slack: float = 1e-10,
) -> bool:
    """Probe the coordinate curvature bound of component i along j at (x, h).

    Checks ``f_i(x + h e_j) <= f_i(x) + d_j f_i(x) h + (L_ij / 2) h^2`` up to
    ``slack``. Valid for any j: off-support coordinates have ``L_ij = 0`` and
    a vanishing partial derivative.
    """
    x = np.asarray(x, dtype=np.float64)
    lij = float(problem.lip[i, j])
    fx = component_value(problem, i, x)
    slope = component_partial(problem, i, j, x)
    shifted = x.copy()
    shifted[j] += h
    lhs = component_value(problem, i, shifted)
    rhs = fx + slope * h + 0.5 * lij * h * h
    return lhs <= rhs + slack


@dataclass
class ReferenceSolution:
    """High-accuracy minimizer with a strong-convexity certificate.

    ``gap_bound`` bounds ``f(x) - min f`` by ``grad_norm**2 / (2 mu)``;
    infinite when mu = 0 (no certificate without strong convexity).
    """

    x: np.ndarray
    f: float
    grad_norm: float
    gap_bound: float
    iterations: int
    method: str


def solve_reference(
    problem: Problem,
    tol: float = 1e-10,
    method: str = "auto",
    max_iter: int | None = None,
) -> ReferenceSolution:
    """Solve to ``||grad f(x)|| <= tol`` and certify the optimal value.

    Squared loss solves the regularized normal equations by conjugate
    gradients; logistic loss runs full-gradient descent with backtracking.
    ``method`` may force ``"cg"`` or ``"gd"`` (conjugate gradients are only
    available for the squared loss).
    """
    if tol < 1e-12:
        raise ValueError("tol below 1e-12 is not resolvable in double precision")
    if method == "auto":
        method = "cg" if problem.loss is LossKind.SQUARED else "gd"
    if method == "cg":
        if problem.loss is not LossKind.SQUARED:
            raise ValueError("conjugate gradients require the squared loss")
        x, iters = _solve_normal_equations_cg(problem, tol, max_iter)
    elif method == "gd":
        x, iters = _solve_gradient_descent(problem, tol, max_iter)
    else:
        raise ValueError(f"unknown reference method {method!r}")
    grad_norm = float(np.linalg.norm(full_gradient(problem, x)))
    if grad_norm > tol:
        raise RuntimeError(
            f"reference solve ({method}) stalled: ||grad|| = {grad_norm} > tol = {tol} "
            f"after {iters} iterations"
        )
    gap_bound = grad_norm**2 / (2.0 * problem.mu) if problem.mu > 0 else math.inf
    return ReferenceSolution(
        x=x, f=value(problem, x), grad_norm=grad_norm, gap_bound=gap_bound,
        iterations=iters, method=method,
    )


def _solve_normal_equations_cg(problem, tol, max_iter):
    """CG on ``((1/n) A^T A + mu I) x = (1/n) A^T b``.

    The residual of this system is exactly the gradient of f, so the stopping
    rule certifies the gradient norm directly.
    """
    csr = problem.dataset.csr
    n = problem.n
    mu = problem.mu

    def matvec(z):
        return np.asarray(csr.T @ (csr @ z)).ravel() / n + mu * z

    c = np.asarray(csr.T @ problem.dataset.labels).ravel() / n
    x = np.zeros(problem.d)
    r = c - matvec(x)
    p = r.copy()
    rs = float(r @ r)
    cap = max_iter if max_iter is not None else max(10 * problem.d, 1000)
    it = 0
    while math.sqrt(rs) > tol:
        if it >= cap:
            raise RuntimeError(f"conjugate gradients exceeded {cap} iterations")
        hp = matvec(p)
        alpha = rs / float(p @ hp)
        x += alpha * p
        r -= alpha * hp
        rs_new = float(r @ r)
        p = r + (rs_new / rs) * p
        rs = rs_new
        it += 1
        if it % 50 == 0:  # periodic exact residual to cancel drift
            r = c - matvec(x)
            rs = float(r @ r)
            p = r.copy()
    return x, it


def _solve_gradient_descent(problem, tol, max_iter):
    """Full-gradient descent with Armijo backtracking."""
    x = np.zeros(problem.d)
    fx = value(problem, x)
    eta = 1.0
    cap = max_iter if max_iter is not None else 500_000
    for it in range(cap):
        g = full_gradient(problem, x)
        gn_sq = float(g @ g)
        if math.sqrt(gn_sq) <= tol:
            return x, it
        while True:
            x_new = x - eta * g
            f_new = value(problem, x_new)
            if f_new <= fx - 0.5 * eta * gn_sq:
                break
            eta *= 0.5
            if eta < 1e-18:
                raise RuntimeError("backtracking stalled; gradient may be inconsistent")
        x, fx = x_new, f_new
        eta *= 1.3
    raise RuntimeError(f"gradient descent exceeded {cap} iterations")


@dataclass
class ConditionReport:
    """Condition numbers and sampling-weight spread of one problem.

    ``kappa_hat >= kappa_avg`` always holds (each component's smoothness
    constant is dominated by its curvature row sum, and support counts are at
    least 1); the relation to ``kappa_max`` goes either way and is reported
    without assertion.
    """

    L_hat: float
    kappa_hat: float
    kappa_avg: float
    kappa_max: float
    v: np.ndarray
    omega: np.ndarray

    def format_lines(self) -> list[str]:
        lines = [
            f"L_hat={self.L_hat!r}",
            f"kappa_hat={self.kappa_hat!r}",
            f"kappa_avg={self.kappa_avg!r}",
            f"kappa_max={self.kappa_max!r}",
        ]
        for name, arr in (("v", self.v), ("omega", self.omega)):
            counts, edges = np.histogram(arr, bins=min(10, max(1, arr.size)))
            lines.append(f"{name}_hist_edges=" + ",".join(repr(float(e)) for e in edges))
            lines.append(f"{name}_hist_counts=" + ",".join(str(int(c)) for c in counts))
        return lines


# ---------------------------------------------------------------------------
# randomized probe batteries (deterministic under a seeded generator)
# ---------------------------------------------------------------------------


def _random_support_pair(problem: Problem, rng) -> tuple[int, int]:
    """A (component, coordinate) pair with positive curvature entry."""
    i = int(rng.integers(problem.n))
    idx, _ = problem.dataset.row(i)
    if problem.reg_mode.name == "DENSE" and problem.mu > 0:
        j = int(rng.integers(problem.d))
    else:
        if idx.size == 0:
            return _random_support_pair(problem, rng)
        j = int(idx[rng.integers(idx.size)])
    return i, j


def probe_smoothness(
    problem: Problem, rng, count: int, slack: float = 1e-10, scale: float = 1.0,
) -> int:
    """Count violations of the coordinate curvature bound over random probes."""
    violations = 0
    for _ in range(count):
        i, j = _random_support_pair(problem, rng)
        x = scale * rng.standard_normal(problem.d)
        h = scale * float(rng.standard_normal())
        if not check_smoothness_probe(problem, i, j, x, h, slack=slack):
            violations += 1
    return violations


def probe_strong_convexity(
    problem: Problem, rng, count: int, slack: float = 1e-10, scale: float = 1.0,
) -> int:
    """Count violations of the lower quadratic bound of f over random point pairs."""
    violations = 0
    for _ in range(count):
        x = scale * rng.standard_normal(problem.d)
        y = scale * rng.standard_normal(problem.d)
        lhs = value(problem, y)
        rhs = (
            value(problem, x)
            + float(full_gradient(problem, x) @ (y - x))
            + 0.5 * problem.mu * float(np.sum((y - x) ** 2))
        )
        if lhs < rhs - slack:
            violations += 1
    return violations


def probe_cocoercivity(
    problem: Problem, rng, count: int, slack: float = 1e-10, scale: float = 1.0,
) -> int:
    """Count co-coercivity violations over random support pairs and points."""
    violations = 0
    for _ in range(count):
        i, j = _random_support_pair(problem, rng)
        x = scale * rng.standard_normal(problem.d)
        y = scale * rng.standard_normal(problem.d)
        if not check_cocoercivity(problem, i, j, x, y, slack=slack).holds:
            violations += 1
    return violations


def condition_report(problem: Problem) -> ConditionReport:
    """Compute all three condition numbers; asserts the average-based chain."""
    mu = problem.mu
    comp = problem.comp_smoothness
    kappa_avg = float(comp.mean() / mu) if mu > 0 else math.inf
    kappa_max = float(comp.max() / mu) if mu > 0 else math.inf
    kappa_hat = problem.kappa_hat
    if mu > 0:
        assert kappa_hat >= kappa_avg * (1.0 - 1e-12), (
            f"condition-number chain violated: {kappa_hat} < {kappa_avg}"
        )
    return ConditionReport(
        L_hat=problem.L_hat,
        kappa_hat=kappa_hat,
        kappa_avg=kappa_avg,
        kappa_max=kappa_max,
        v=problem.v.copy(),
        omega=problem.omega.copy(),
    )
