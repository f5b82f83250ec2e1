"""Experiment orchestration: problem setup, method runs, comparison, diagnosis.

Costs are aligned across methods in "effective passes": one pass equals n
component-gradient evaluations, and a partial-derivative evaluation counts
``1 / d_bar`` of a component gradient (``d_bar`` = mean row support measured
on the data). Runs for distinct (method, seed) pairs may execute in parallel
over the shared problem; the ``S2CD_THREADS`` environment variable caps the
worker count.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import solvers, traces
from .dataset import SparseDataset, generate_dataset, load_libsvm
from .diagnostics import (
    ENUMERATION_BUDGET,
    audit_estimator,
    condition_report,
    probe_cocoercivity,
    probe_smoothness,
    probe_strong_convexity,
    solve_reference,
)
from .problem import LossKind, Problem, RegMode, build_problem
from .sampling import GeometricLaw, make_rng

__all__ = [
    "VALID_METHODS",
    "GeneratorParams",
    "ExperimentSpec",
    "SpecError",
    "run_experiment",
    "compare_traces",
    "diagnose",
]

VALID_METHODS = ("s2cd", "cd_nonuniform", "gd", "sgd", "s2gd")

REFERENCE_TOL = 1e-9
GAP_THRESHOLDS = (1e-1, 1e-2, 1e-3)


class SpecError(ValueError):
    """Invalid experiment specification (caught before any compute)."""


@dataclass(frozen=True)
class GeneratorParams:
    n: int
    d: int
    density: float
    scale: float = 1.0
    label_model: str = "regression"
    seed: int = 0
    noise: float = 0.1

    def describe(self) -> str:
        return (
            f"generate:n={self.n},d={self.d},density={self.density},"
            f"scale={self.scale},labels={self.label_model},seed={self.seed}"
        )


@dataclass
class ExperimentSpec:
    source: str | GeneratorParams
    loss: LossKind = LossKind.SQUARED
    mu: float = 1.0
    reg_mode: RegMode = RegMode.SUPPORT
    methods: list[str] = field(default_factory=lambda: ["s2cd"])
    seeds: list[int] = field(default_factory=lambda: [0])
    epsilon: float = 1e-2
    h: float | None = None
    m: int | None = None
    epochs: int | None = None
    budget_passes: float = 20.0
    out: str = "trace.log"

    def validate(self) -> None:
        if not self.methods:
            raise SpecError("at least one method is required")
        for name in self.methods:
            if name not in VALID_METHODS:
                raise SpecError(
                    f"unknown method {name!r}; valid methods: {', '.join(VALID_METHODS)}"
                )
        if not self.seeds:
            raise SpecError("at least one seed is required")
        if not self.budget_passes > 0:
            raise SpecError("budget must be positive")
        if not 0.0 < self.epsilon < 1.0:
            raise SpecError("epsilon must lie in (0, 1)")


def resolve_dataset(source: str | GeneratorParams) -> SparseDataset:
    if isinstance(source, GeneratorParams):
        return generate_dataset(
            n=source.n, d=source.d, density=source.density, scale=source.scale,
            label_model=source.label_model, seed=source.seed, noise=source.noise,
        )
    return load_libsvm(source)


def describe_source(source: str | GeneratorParams) -> str:
    return source.describe() if isinstance(source, GeneratorParams) else f"file:{source}"


def estimate_full_smoothness(problem: Problem, iters: int = 100) -> float:
    """Upper estimate of the gradient Lipschitz constant of f (power iteration)."""
    csr = problem.dataset.csr
    n = problem.n
    rng = make_rng(0)
    z = rng.standard_normal(problem.d)
    z /= np.linalg.norm(z)
    lam = 0.0
    for _ in range(iters):
        w = np.asarray(csr.T @ (csr @ z)).ravel() / n
        lam = float(z @ w)
        norm = np.linalg.norm(w)
        if norm == 0.0:
            break
        z = w / norm
    return problem.loss.curvature_bound * lam * 1.05 + problem.mu


def _worker_count(n_jobs: int) -> int:
    cap = os.environ.get("S2CD_THREADS")
    limit = os.cpu_count() or 1
    if cap:
        try:
            limit = max(1, min(limit, int(cap)))
        except ValueError:
            pass
    return max(1, min(n_jobs, limit))


def _semi_stochastic_config(spec: ExperimentSpec, problem: Problem) -> solvers.SolverConfig:
    if spec.h is not None and spec.m is not None:
        epochs = spec.epochs or _epochs_for_budget(spec, problem, spec.h, spec.m)
        return solvers.SolverConfig(h=spec.h, m=spec.m, epochs=epochs, epsilon=spec.epsilon)
    auto = solvers.default_params(problem, spec.epsilon)
    h = spec.h if spec.h is not None else auto.h
    m = spec.m if spec.m is not None else auto.m
    epochs = spec.epochs or auto.epochs
    return solvers.SolverConfig(h=h, m=m, epochs=epochs, epsilon=spec.epsilon)


def _epochs_for_budget(spec: ExperimentSpec, problem: Problem, h: float, m: int) -> int:
    law = GeometricLaw.build(m, problem.mu * h)
    per_epoch = 1.0 + 2.0 * law.mean() / (problem.n * problem.dataset.mean_row_nnz)
    return max(1, math.ceil(spec.budget_passes / per_epoch))


def _run_one(spec: ExperimentSpec, problem: Problem, method: str, seed: int,
             f_star: float) -> tuple[dict, solvers.RunTrace]:
    budget = spec.budget_passes
    if method in ("s2cd", "cd_nonuniform"):
        cfg = _semi_stochastic_config(spec, problem)
        cfg = solvers.SolverConfig(h=cfg.h, m=cfg.m, epochs=cfg.epochs, seed=seed,
                                   epsilon=cfg.epsilon)
        fn = solvers.s2cd if method == "s2cd" else solvers.cd_nonuniform
        _, trace = fn(problem, cfg, f_star=f_star, budget_passes=budget)
        run_fields = {"method": method, "seed": seed, "h": cfg.h, "m": cfg.m,
                      "epochs": cfg.epochs, "epsilon": cfg.epsilon}
    elif method == "gd":
        step = spec.h if spec.h is not None else 1.0 / estimate_full_smoothness(problem)
        iters = spec.epochs or max(1, math.ceil(budget))
        _, trace = solvers.gd(problem, step, iters, f_star=f_star, budget_passes=budget)
        run_fields = {"method": method, "seed": seed, "stepsize": step, "iters": iters}
    elif method == "sgd":
        step = spec.h if spec.h is not None else 1.0 / (2.0 * float(problem.comp_smoothness.max()))
        iters = (spec.epochs or max(1, math.ceil(budget))) * problem.n
        _, trace = solvers.sgd(problem, step, iters, seed=seed, f_star=f_star,
                               budget_passes=budget)
        run_fields = {"method": method, "seed": seed, "stepsize": step, "iters": iters}
    elif method == "s2gd":
        cfg = _s2gd_config(spec, problem)
        _, trace = solvers.s2gd(problem, cfg["h"], cfg["m"], cfg["epochs"], seed=seed,
                                f_star=f_star, budget_passes=budget)
        run_fields = {"method": method, "seed": seed, **cfg}
    else:  # pragma: no cover - guarded by validate()
        raise SpecError(f"unknown method {method!r}")
    return run_fields, trace


def _s2gd_config(spec: ExperimentSpec, problem: Problem) -> dict:
    if spec.h is not None and spec.m is not None and spec.epochs is not None:
        return {"h": spec.h, "m": spec.m, "epochs": spec.epochs}
    if problem.mu <= 0:
        raise SpecError("s2gd auto-parameterization needs mu > 0")
    k = math.ceil(math.log(1.0 / spec.epsilon))
    delta = spec.epsilon ** (1.0 / k)
    l_avg = float(problem.comp_smoothness.mean())
    h = spec.h if spec.h is not None else delta / ((4.0 + 2.0 * delta) * l_avg)
    m = spec.m if spec.m is not None else math.ceil(
        (4.0 / delta + 2.0) * math.log(2.0 / delta + 2.0) * l_avg / problem.mu
    )
    return {"h": h, "m": m, "epochs": spec.epochs or k}


def run_experiment(spec: ExperimentSpec) -> traces.TraceFileData:
    """Execute every (method, seed) pair and write the trace file."""
    spec.validate()
    dataset = resolve_dataset(spec.source)
    problem = build_problem(dataset, spec.loss, spec.mu, spec.reg_mode)
    ref = solve_reference(problem, tol=REFERENCE_TOL)
    report = condition_report(problem)
    header = {
        "source": describe_source(spec.source),
        "n": problem.n,
        "d": problem.d,
        "nnz": dataset.nnz,
        "d_bar": dataset.mean_row_nnz,
        "loss": problem.loss.value,
        "mu": problem.mu,
        "reg_mode": problem.reg_mode.value,
        "L_hat": problem.L_hat,
        "kappa_hat": report.kappa_hat,
        "kappa_avg": report.kappa_avg,
        "kappa_max": report.kappa_max,
        "f_star": ref.f,
        "f_star_gap_bound": ref.gap_bound,
        "budget_passes": spec.budget_passes,
    }
    pairs = [(m, s) for m in spec.methods for s in spec.seeds]
    results: dict[tuple[str, int], tuple[dict, solvers.RunTrace]] = {}
    workers = _worker_count(len(pairs))
    if workers == 1:
        for method, seed in pairs:
            results[(method, seed)] = _run_one(spec, problem, method, seed, ref.f)
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            futs = {
                (method, seed): pool.submit(_run_one, spec, problem, method, seed, ref.f)
                for method, seed in pairs
            }
            for key, fut in futs.items():
                results[key] = fut.result()
    lines: list[str] = []
    for key in pairs:  # deterministic output order regardless of completion order
        run_fields, trace = results[key]
        lines.extend(traces.trace_records(trace, run_fields))
    traces.write_trace_file(spec.out, header, lines)
    return traces.parse_trace_file(spec.out)


# ---------------------------------------------------------------------------
# comparison
# ---------------------------------------------------------------------------


def effective_passes(epoch_fields: dict, n: int, d_bar: float) -> float:
    return (
        int(epoch_fields["grad_evals"]) / n
        + int(epoch_fields["partial_evals"]) / (n * d_bar)
    )


def compare_traces(paths: list[str]) -> str:
    """Summarize runs from one or more trace files over the same problem.

    Reports, per method, the mean effective-pass count at which each relative
    gap threshold was first reached, plus the measured cost ratio of the
    coordinate method's condition number against the component-average one.
    No ordering between methods is asserted; the output is descriptive.
    """
    datas = [traces.parse_trace_file(p) for p in paths]
    key0 = datas[0].problem_key()
    for path, data in zip(paths[1:], datas[1:]):
        if data.problem_key() != key0:
            raise ValueError(f"{path}: trace describes a different problem")
    header = datas[0].header
    n = int(header["n"])
    d_bar = float(header["d_bar"])

    per_method: dict[str, list[list[tuple[float, float]]]] = {}
    for data in datas:
        for run in data.runs:
            curve = []
            gap0 = None
            for ep in run.epochs:
                gap = float(ep["gap"])
                if gap0 is None:
                    gap0 = gap if gap > 0 else None
                rel = gap / gap0 if gap0 else math.nan
                curve.append((effective_passes(ep, n, d_bar), rel))
            per_method.setdefault(run.method, []).append(curve)

    widths = [14, 6] + [16] * len(GAP_THRESHOLDS)
    cols = ["method", "runs"] + [f"passes_to_{t:g}" for t in GAP_THRESHOLDS]
    out = ["  ".join(c.ljust(w) for c, w in zip(cols, widths))]
    for method in sorted(per_method):
        curves = per_method[method]
        cells = [method.ljust(widths[0]), str(len(curves)).ljust(widths[1])]
        for thr in GAP_THRESHOLDS:
            reached = []
            for curve in curves:
                hit = next((p for p, rel in curve if not math.isnan(rel) and rel <= thr), None)
                if hit is not None:
                    reached.append(hit)
            if not reached:
                cells.append("not_reached".ljust(widths[2]))
            else:
                cells.append(
                    f"{np.mean(reached):.3g} ({len(reached)}/{len(curves)})".ljust(widths[2])
                )
        out.append("  ".join(cells))

    ratio_line = _cost_ratio_line(header, per_method, datas)
    if ratio_line:
        out.append(ratio_line)
    return "\n".join(out)


def _cost_ratio_line(header, per_method, datas) -> str | None:
    if "s2cd" not in per_method:
        return None
    c_grad = float(header["d_bar"])
    ratios = []
    for data in datas:
        for run in data.runs:
            if run.method != "s2cd" or not run.epochs:
                continue
            last = run.epochs[-1]
            pe = int(last["partial_evals"])
            if pe > 0:
                ratios.append((pe + int(last["column_touches"])) / pe)
    if not ratios:
        return None
    c_pd = float(np.mean(ratios))
    kh = float(header["kappa_hat"])
    ka = float(header["kappa_avg"])
    ratio = (kh * c_pd) / (ka * c_grad) if ka > 0 and math.isfinite(kh) else math.nan
    return (
        f"cost_ratio kappa_hat*C_pd/(kappa_avg*C_grad) = {ratio:.4g} "
        f"(C_grad={c_grad:.4g} C_pd={c_pd:.4g} kappa_hat={kh:.6g} kappa_avg={ka:.6g})"
    )


# ---------------------------------------------------------------------------
# diagnosis
# ---------------------------------------------------------------------------


def diagnose(problem: Problem, probe_count: int = 2000, audit_points: int = 5,
             seed: int = 0) -> list[str]:
    """Run the condition report and, on small instances, the full audits.

    Returns printable ``key=value`` lines plus one pass/fail line per check.
    Instances whose support exceeds the enumeration budget get the condition
    report only, with a notice that audits were skipped.
    """
    lines = condition_report(problem).format_lines()
    lines.append(f"p=" + ",".join(repr(float(x)) for x in problem.p[: min(16, problem.d)]))
    if problem.q_rows.size > ENUMERATION_BUDGET:
        lines.append(f"audits=skipped support_entries={problem.q_rows.size} "
                     f"budget={ENUMERATION_BUDGET}")
        return lines
    rng = make_rng(seed)
    ref = solve_reference(problem, tol=REFERENCE_TOL)
    lines.append(f"f_star={ref.f!r}")
    lines.append(f"f_star_gap_bound={ref.gap_bound!r}")

    points = [ref.x, np.zeros(problem.d)]
    for _ in range(max(0, audit_points - len(points))):
        points.append(rng.standard_normal(problem.d))
    worst_mean_err = 0.0
    chain_ok = True
    for y in points:
        x_snap = y + 0.5 * rng.standard_normal(problem.d)
        audit = audit_estimator(problem, y, x_snap, ref.f)
        worst_mean_err = max(worst_mean_err, audit.mean_rel_error)
        if not (
            audit.second_moment <= audit.bound_sharp + 1e-9
            and audit.bound_sharp <= audit.bound_basic + 1e-9
        ):
            chain_ok = False
    lines.append(f"check_unbiasedness={'pass' if worst_mean_err <= 1e-10 else 'fail'} "
                 f"worst_rel_err={worst_mean_err!r}")
    lines.append(f"check_variance_bound_chain={'pass' if chain_ok else 'fail'}")

    sm = probe_smoothness(problem, rng, probe_count)
    lines.append(f"check_coordinate_smoothness={'pass' if sm == 0 else 'fail'} "
                 f"violations={sm}/{probe_count}")
    sc = probe_strong_convexity(problem, rng, probe_count)
    lines.append(f"check_strong_convexity={'pass' if sc == 0 else 'fail'} "
                 f"violations={sc}/{probe_count}")
    cc = probe_cocoercivity(problem, rng, probe_count)
    lines.append(f"check_cocoercivity={'pass' if cc == 0 else 'fail'} "
                 f"violations={cc}/{probe_count}")
    return lines
