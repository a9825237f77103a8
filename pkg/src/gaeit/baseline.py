"""
Regularized Gauss-Newton with Levenberg damping, and the NR -> GA hybrid.

The Gauss-Newton iteration minimizes the squared form
``||y - h(rho)||**2 + alpha * ||L (rho - rho_ref)||**2``.  Reported
objectives use the caller's :class:`ObjectiveSpec` (the unsquared norm by
default) so the numbers line up with the genetic algorithm's fitness.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, replace
from typing import Callable, NamedTuple, Optional

import numpy as np
import scipy.linalg as sla

from . import forward
from .errors import ConfigurationError, NumericalError
from .forward import MeasurementSet, Protocol, check_rho
from .ga import GAConfig, run_ga
from .mesh import Mesh
from .objective import ObjectiveSpec, ObjectiveValue, evaluate, regularizer_matrix
from .results import ReconResult, TraceRow

__all__ = [
    "NRConfig",
    "NRStep",
    "Disturbance",
    "nr_step",
    "run_nr",
    "run_hybrid",
    "disturb",
    "best_homogeneous",
]

LAMBDA_MAX = 1e16


@dataclass(frozen=True)
class NRConfig:
    """Gauss-Newton/Levenberg settings.

    ``alpha`` weights the regularizer in the squared objective.  The default
    1e-5 is roughly ``2 * 1e-3 * ||noise||`` at 1% noise on the reference
    scene, where the squared and unsquared objectives share stationary
    points.  ``None`` reuses the objective spec's alpha unchanged.
    """

    max_iterations: int = 30
    lambda0: float = 1e-2
    lambda_up: float = 10.0
    lambda_down: float = 0.1
    step_tol: float = 1e-4
    residual_tol: float = 1e-8
    alpha: Optional[float] = 1e-5
    line_search: bool = False
    one_step: bool = False
    rho_floor: float = 1e-6

    def __post_init__(self):
        if self.lambda_up <= 1 or not 0 < self.lambda_down < 1:
            raise ConfigurationError("need lambda_up > 1 and 0 < lambda_down < 1")
        if self.step_tol <= 0 or self.residual_tol <= 0 or self.lambda0 <= 0:
            raise ConfigurationError("tolerances and lambda0 must be > 0")
        if self.max_iterations < 0:
            raise ConfigurationError("max_iterations must be >= 0")
        if self.alpha is not None and self.alpha < 0:
            raise ConfigurationError("alpha must be >= 0")

    def replace(self, **changes) -> "NRConfig":
        return replace(self, **changes)


class NRStep(NamedTuple):
    rho: np.ndarray
    accepted: bool
    delta: np.ndarray
    value: ObjectiveValue
    prediction: MeasurementSet


def _squared(spec: ObjectiveSpec, config: Optional[NRConfig] = None) -> ObjectiveSpec:
    alpha = spec.alpha if config is None or config.alpha is None else config.alpha
    return spec.replace(data_norm="l2-squared", alpha=alpha)


def nr_step(
    rho,
    y: MeasurementSet,
    mesh: Mesh,
    protocol: Protocol,
    spec: ObjectiveSpec,
    lam: float,
    jac: Optional[np.ndarray] = None,
    prediction: Optional[MeasurementSet] = None,
    rho_floor: float = 1e-6,
    current: Optional[ObjectiveValue] = None,
) -> NRStep:
    """One damped Gauss-Newton trial step.

    Solves ``(J'J + alpha L'L + lam I) delta = J'r - alpha L'L (rho - rho_ref)``
    and accepts ``max(rho + delta, rho_floor)`` iff the squared objective
    decreases.  ``spec`` is used with its data norm forced to squared.
    On rejection the returned ``rho`` is the unchanged input.
    """
    rho = check_rho(mesh, rho)
    sq = spec.replace(data_norm="l2-squared")
    if jac is None or prediction is None:
        jac, prediction = forward.jacobian(mesh, rho, protocol, return_measurements=True)
    if current is None:
        current = evaluate(rho, y, sq, mesh, protocol, prediction=prediction)
    L = regularizer_matrix(sq, mesh)
    LtL = (L.T @ L).toarray()
    r = y.values - prediction.values
    lhs = jac.T @ jac + sq.alpha * LtL
    lhs[np.diag_indices_from(lhs)] += lam
    rhs = jac.T @ r - sq.alpha * (LtL @ (rho - sq.reference(len(rho))))
    try:
        delta = sla.solve(lhs, rhs, assume_a="pos", check_finite=False)
    except (sla.LinAlgError, ValueError) as exc:
        cond = np.linalg.cond(lhs)
        raise NumericalError(f"Gauss-Newton system failed (lambda={lam:.3e}, cond={cond:.3e}): {exc}") from None
    if not np.all(np.isfinite(delta)):
        raise NumericalError(f"non-finite Gauss-Newton step at lambda={lam:.3e}")
    cand = np.maximum(rho + delta, rho_floor)
    h_new = forward.forward_solve(mesh, cand, protocol)
    value = evaluate(cand, y, sq, mesh, protocol, prediction=h_new)
    if value.total < current.total:
        return NRStep(cand, True, delta, value, h_new)
    return NRStep(rho, False, delta, value, h_new)


def run_nr(
    mesh: Mesh,
    protocol: Protocol,
    y: MeasurementSet,
    spec: ObjectiveSpec,
    config: NRConfig,
    rho0,
    clock: Callable[[], float] = time.perf_counter,
) -> ReconResult:
    """Iterate :func:`nr_step` with the Levenberg schedule.

    Terminates with reason ``"step"`` (relative step below ``step_tol``),
    ``"residual"`` (relative misfit below ``residual_tol``), ``"stalled"``
    (no decrease even at very large damping), ``"one-step"`` or
    ``"budget"``.
    """
    t_start = clock()
    rho = check_rho(mesh, rho0).copy()
    sq = _squared(spec, config)
    y_norm = float(np.linalg.norm(y.values)) or 1.0

    t0 = clock()
    solves, jacs = 0, 0
    if config.max_iterations > 0:
        jac, h = forward.jacobian(mesh, rho, protocol, return_measurements=True)
        jacs += 1
    else:
        jac, h = None, forward.forward_solve(mesh, rho, protocol)
    solves += 1
    current = evaluate(rho, y, sq, mesh, protocol, prediction=h)
    reported = evaluate(rho, y, spec, mesh, protocol, prediction=h)
    history = [current]
    trace = [TraceRow(0, reported.total, reported.total, solves, 1e3 * (clock() - t0), "nr")]

    lam = config.lambda0
    reason = "budget"
    iteration = 0
    while iteration < config.max_iterations:
        t0 = clock()
        row_solves = 0
        while True:
            step = nr_step(rho, y, mesh, protocol, sq, lam, jac, h, config.rho_floor, current)
            row_solves += 1
            if not step.accepted and config.line_search:
                for shrink in (0.5, 0.25, 0.125):
                    cand = np.maximum(rho + shrink * step.delta, config.rho_floor)
                    h_try = forward.forward_solve(mesh, cand, protocol)
                    row_solves += 1
                    v_try = evaluate(cand, y, sq, mesh, protocol, prediction=h_try)
                    if v_try.total < current.total:
                        step = NRStep(cand, True, step.delta * shrink, v_try, h_try)
                        break
            if step.accepted:
                lam = max(lam * config.lambda_down, 1e-12)
                break
            lam *= config.lambda_up
            if lam > LAMBDA_MAX:
                break
        iteration += 1
        if not step.accepted:
            solves += row_solves
            trace.append(TraceRow(iteration, reported.total, reported.total, row_solves,
                                  1e3 * (clock() - t0), "nr"))
            reason = "stalled"
            break

        rel_step = float(np.max(np.abs(step.rho - rho)) / np.max(np.abs(rho)))
        rho, h, current = step.rho, step.prediction, step.value
        history.append(current)
        reported = evaluate(rho, y, spec, mesh, protocol, prediction=h)
        misfit = float(np.linalg.norm(y.values - h.values)) / y_norm

        if rel_step < config.step_tol:
            reason = "step"
        elif misfit < config.residual_tol:
            reason = "residual"
        elif config.one_step:
            reason = "one-step"
        elif iteration >= config.max_iterations:
            reason = "budget"
        else:
            reason = None
            jac, h = forward.jacobian(mesh, rho, protocol, return_measurements=True)
            jacs += 1
            row_solves += 1
        solves += row_solves
        trace.append(TraceRow(iteration, reported.total, reported.total, row_solves,
                              1e3 * (clock() - t0), "nr"))
        if reason is not None:
            break

    return ReconResult(
        rho_est=rho,
        objective=reported,
        termination_reason=reason,
        trace=trace,
        objective_trace=history,
        forward_solve_count=solves,
        jacobian_count=jacs,
        wall_time=clock() - t_start,
        generations=iteration,
        stages={"nr": {"squared_objective_total": current.total, "squared_alpha": sq.alpha}},
        solver="nr",
    )


@dataclass(frozen=True)
class Disturbance:
    """Multiplicative log-normal perturbation ``rho * exp(scale * N(0, 1))``."""

    scale: float = 0.2
    seed: int = 0


def disturb(rho, disturbance: Disturbance, bounds: Optional[tuple[float, float]] = None) -> np.ndarray:
    rng = np.random.default_rng(disturbance.seed)
    out = np.asarray(rho, dtype=float) * np.exp(disturbance.scale * rng.standard_normal(len(rho)))
    if bounds is not None:
        out = np.clip(out, bounds[0], bounds[1])
    return out


def best_homogeneous(mesh: Mesh, protocol: Protocol, y: MeasurementSet) -> np.ndarray:
    """Least-squares homogeneous field (``h`` is linear under uniform scaling)."""
    h1 = forward.forward_solve(mesh, np.ones(mesh.n_elements), protocol).values
    c = float(y.values @ h1) / float(h1 @ h1)
    if not c > 0:
        c = 1.0
    return np.full(mesh.n_elements, c)


def run_hybrid(
    mesh: Mesh,
    protocol: Protocol,
    y: MeasurementSet,
    spec: ObjectiveSpec,
    nr_config: NRConfig,
    ga_config: GAConfig,
    disturbance: Optional[Disturbance] = None,
    rho0=None,
    clock: Callable[[], float] = time.perf_counter,
) -> ReconResult:
    """Gauss-Newton from a homogeneous start, optional disturbance, then GA.

    The (disturbed) Gauss-Newton estimate, clamped to the GA bounds, is
    the GA warm start.  The combined trace marks each row with its stage
    (``nr``, ``disturb``, ``ga``).
    """
    t_start = clock()
    extra_solves = 0
    if rho0 is None:
        rho0 = best_homogeneous(mesh, protocol, y)
        extra_solves += 1
    nr = run_nr(mesh, protocol, y, spec, nr_config, rho0, clock=clock)
    trace = [replace(row) for row in nr.trace]
    trace[0].forward_solves += extra_solves
    stages = {"nr": {"rows": [0, len(trace)], **_stage_summary(nr)}}

    warm = np.clip(nr.rho_est, ga_config.bounds[0], ga_config.bounds[1])
    disturbed_value = None
    if disturbance is not None:
        t0 = clock()
        warm = disturb(nr.rho_est, disturbance, ga_config.bounds)
        disturbed_value = evaluate(warm, y, spec, mesh, protocol)
        extra_solves += 1
        trace.append(TraceRow(0, disturbed_value.total, disturbed_value.total, 1,
                              1e3 * (clock() - t0), "disturb"))
        stages["disturb"] = {
            "rows": [len(trace) - 1, len(trace)],
            "scale": disturbance.scale,
            "seed": disturbance.seed,
            "objective_total": disturbed_value.total,
        }

    ga = run_ga(mesh, protocol, y, spec, ga_config, warm_start=warm, clock=clock)
    start = len(trace)
    trace.extend(ga.trace)
    stages["ga"] = {"rows": [start, len(trace)], **_stage_summary(ga)}

    return ReconResult(
        rho_est=ga.rho_est,
        objective=ga.objective,
        termination_reason=ga.termination_reason,
        trace=trace,
        objective_trace=nr.objective_trace + ([disturbed_value] if disturbed_value else []) + ga.objective_trace,
        forward_solve_count=nr.forward_solve_count + ga.forward_solve_count + extra_solves,
        jacobian_count=nr.jacobian_count,
        wall_time=clock() - t_start,
        generations=ga.generations,
        stages=stages,
        solver="hybrid",
    )


def _stage_summary(res: ReconResult) -> dict:
    return {
        **res.stages.get(res.solver, {}),
        "termination_reason": res.termination_reason,
        "objective_total": res.objective.total,
        "forward_solve_count": res.forward_solve_count,
        "jacobian_count": res.jacobian_count,
        "iterations": res.generations,
    }
