"""Alternating variance/coefficient minimization with Krylov inner solves.

The outer loop alternates a least-squares coefficient update (conjugate
gradient for least squares with early stopping at the whitened noise
level) and the componentwise variance update from
:mod:`sparse_ias.hyperprior`.  Two hybrid drivers start in a globally
convex parameter regime and hand off to a stronger sparsity-promoting
one, either all at once after a phase-switch rule fires or per component
once its variance drops below the second regime's convexity threshold.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from . import hyperprior as hp
from .linops import CompositeDictionary, LinearMap, scale_columns, scale_rows

log = logging.getLogger(__name__)

#: Variance floor applied before column scaling, to keep sqrt(theta) well
#: above underflow.  Far below any meaningful variance scale.
THETA_FLOOR = 1e-30

#: Fraction of max|alpha| above which a coefficient counts as support.
REPORT_THRESHOLD = 1e-6


# ---------------------------------------------------------------------------
# stopping rules


@dataclass(frozen=True)
class PhaseSwitch:
    """When to leave the first hyperparameter regime.

    Fires after ``after_iters`` outer iterations, or when the relative
    l2 change of the variance vector drops below ``theta_rtol`` --
    whichever is specified; with both set, whichever happens first.
    """

    after_iters: int | None = None
    theta_rtol: float | None = None

    def __post_init__(self):
        if self.after_iters is None and self.theta_rtol is None:
            raise ValueError("phase switch needs a trigger")
        if self.after_iters is not None and self.after_iters < 0:
            raise ValueError("after_iters must be >= 0")
        if self.theta_rtol is not None and self.theta_rtol <= 0:
            raise ValueError("theta_rtol must be positive")

    def fires(self, iters_in_phase: int, theta_rel_change: float | None) -> bool:
        if self.after_iters is not None and iters_in_phase >= self.after_iters:
            return True
        if (
            self.theta_rtol is not None
            and theta_rel_change is not None
            and theta_rel_change < self.theta_rtol
        ):
            return True
        return False


def after_fixed(k: int) -> PhaseSwitch:
    return PhaseSwitch(after_iters=k)


def on_theta_rtol(tol: float) -> PhaseSwitch:
    return PhaseSwitch(theta_rtol=tol)


def whichever_first(k: int, tol: float) -> PhaseSwitch:
    return PhaseSwitch(after_iters=k, theta_rtol=tol)


@dataclass(frozen=True)
class StoppingRule:
    """Outer-loop termination: iteration cap plus variance stagnation."""

    max_outer: int = 100
    theta_rtol: float = 1e-3
    phase_switch: PhaseSwitch = field(default_factory=lambda: after_fixed(10))

    def __post_init__(self):
        if self.max_outer < 1:
            raise ValueError("max_outer must be >= 1")
        if self.theta_rtol <= 0:
            raise ValueError("theta_rtol must be positive")


# ---------------------------------------------------------------------------
# problems and reports


@dataclass(frozen=True)
class Problem:
    """A whitened linear model: data b and the forward-times-dictionary map.

    ``dictionary`` is optional and only used for per-frame bookkeeping.
    """

    forward_dict: LinearMap
    b: np.ndarray
    dictionary: CompositeDictionary | None = None


@dataclass
class IasState:
    alpha: np.ndarray
    theta: np.ndarray
    outer_iter: int
    phase: np.ndarray  # per-component, 1 or 2
    params1: hp.HyperParams
    params2: hp.HyperParams | None = None

    def active_scales(self) -> np.ndarray:
        """Componentwise variance scales under each component's phase."""
        scales = np.broadcast_to(self.params1.theta_scale, self.alpha.shape).copy()
        if self.params2 is not None:
            mask = self.phase == 2
            scales[mask] = np.broadcast_to(self.params2.theta_scale, self.alpha.shape)[mask]
        return scales


@dataclass
class SolveReport:
    objective_trace: list[float]
    cgls_counts: list[int]
    data_residual: list[float]
    support_per_frame: list[np.ndarray]
    final_state: IasState
    switch_iteration: int | None = None
    stop_reason: str = ""

    @property
    def outer_iterations(self) -> int:
        return len(self.objective_trace)


@dataclass
class CglsResult:
    solution: np.ndarray
    iterations: int
    residuals: list[float]
    stop_reason: str


# ---------------------------------------------------------------------------
# CGLS


def cgls(
    op: LinearMap,
    b,
    stop_level: float,
    max_inner: int,
    damp: float = 0.0,
) -> CglsResult:
    """Conjugate gradient for least squares from a zero start.

    Minimizes ||op x - b||^2 (+ damp^2 ||x||^2 when damped) and stops at
    the first iterate whose data residual reaches ``stop_level``, at
    ``max_inner`` iterations, or when the normal-equation residual falls
    below 1e-12 of its initial value.
    """
    if stop_level < 0:
        raise ValueError("stop_level must be >= 0")
    b = np.asarray(b, dtype=float)
    x = np.zeros(op.cols)
    r = b.copy()
    rnorm = float(np.linalg.norm(r))
    residuals = [rnorm]
    if rnorm <= stop_level:
        return CglsResult(x, 0, residuals, "discrepancy")

    damp2 = damp * damp
    s = op.apply_adjoint(r)
    if damp2 > 0.0:
        s = s - damp2 * x
    p = s.copy()
    gamma = float(s @ s)
    gamma0 = gamma
    stop_reason = "max_inner"
    iters = 0
    for iters in range(1, max_inner + 1):
        q = op.apply(p)
        denom = float(q @ q) + damp2 * float(p @ p)
        if denom <= 0.0:
            iters -= 1
            stop_reason = "stagnation"
            break
        step = gamma / denom
        x += step * p
        r -= step * q
        rnorm = float(np.linalg.norm(r))
        residuals.append(rnorm)
        if rnorm <= stop_level:
            stop_reason = "discrepancy"
            break
        s = op.apply_adjoint(r)
        if damp2 > 0.0:
            s = s - damp2 * x
        gamma_new = float(s @ s)
        if gamma_new <= 1e-24 * gamma0:
            stop_reason = "normal_equation"
            break
        p = s + (gamma_new / gamma) * p
        gamma = gamma_new
    return CglsResult(x, iters, residuals, stop_reason)


# ---------------------------------------------------------------------------
# IAS building blocks


def whiten(a: LinearMap, b, noise_std: float) -> tuple[LinearMap, np.ndarray]:
    """Rescale a forward map and data to unit noise (diagonal covariance)."""
    if noise_std <= 0:
        raise ValueError(f"noise_std must be positive, got {noise_std}")
    b = np.asarray(b, dtype=float)
    if noise_std == 1.0:
        return a, b.copy()
    w = np.full(a.rows, 1.0 / noise_std)
    return scale_rows(a, w), b / noise_std


def alpha_update(
    state: IasState,
    b,
    forward_dict: LinearMap,
    exact: bool = False,
    max_inner: int | None = None,
) -> tuple[np.ndarray, CglsResult]:
    """Coefficient update for fixed variances.

    Scales columns by sqrt(theta), solves for the scaled coefficients by
    CGLS and maps back.  The quasi mode stops at the whitened noise level
    sqrt(m); the exact mode solves the unit-regularized problem to high
    accuracy (for descent tests and small studies).
    """
    theta = np.maximum(state.theta, THETA_FLOOR)
    scaled = scale_columns(forward_dict, np.sqrt(theta))
    if exact:
        inner = max_inner if max_inner is not None else 10 * forward_dict.cols
        result = cgls(scaled, b, stop_level=0.0, max_inner=inner, damp=1.0)
    else:
        inner = max_inner if max_inner is not None else forward_dict.rows + forward_dict.cols
        result = cgls(scaled, b, stop_level=math.sqrt(forward_dict.rows), max_inner=inner)
    return np.sqrt(theta) * result.solution, result


def _theta_step(alpha: np.ndarray, state: IasState) -> np.ndarray:
    """Variance update honoring each component's active parameter set."""
    if state.params2 is None or not (state.phase == 2).any():
        return hp.theta_update_batch(
            alpha, np.broadcast_to(state.params1.theta_scale, alpha.shape), state.params1
        )
    theta = np.empty_like(alpha)
    for phase, params in ((1, state.params1), (2, state.params2)):
        mask = state.phase == phase
        if mask.any():
            scales = np.broadcast_to(params.theta_scale, alpha.shape)[mask]
            theta[mask] = hp.theta_update_batch(alpha[mask], scales, params)
    return theta


def _mixed_objective(alpha, theta, b, forward_dict, state: IasState) -> float:
    residual = np.asarray(b) - forward_dict.apply(alpha)
    total = 0.5 * float(residual @ residual)
    if state.params2 is None or not (state.phase == 2).any():
        return total + hp.penalty(alpha, theta, state.params1).total
    for phase, params in ((1, state.params1), (2, state.params2)):
        mask = state.phase == phase
        if mask.any():
            scales = np.broadcast_to(params.theta_scale, alpha.shape)[mask]
            sub = params.with_scale(scales)
            total += hp.penalty(alpha[mask], theta[mask], sub).total
    return total


def _support_counts(alpha: np.ndarray, problem: Problem, threshold: float) -> np.ndarray:
    peak = float(np.max(np.abs(alpha))) if alpha.size else 0.0
    cut = threshold * peak
    active = np.abs(alpha) > cut if peak > 0.0 else np.zeros(alpha.shape, dtype=bool)
    if problem.dictionary is None:
        return np.array([int(active.sum())])
    return np.array([int(active[s].sum()) for s in problem.dictionary.slices()])


def _require_strict(params: hp.HyperParams, label: str) -> None:
    if not params.strictly_admissible:
        raise hp.ParameterError(
            f"{label}: eta = 0 leaves no positive variance floor; "
            "the solver needs strictly admissible parameters"
        )


# ---------------------------------------------------------------------------
# drivers


def ias_run(
    problem: Problem,
    params: hp.HyperParams,
    stop: StoppingRule | None = None,
    *,
    nonneg_projection: bool = False,
    exact_alpha: bool = False,
    report_threshold: float = REPORT_THRESHOLD,
) -> SolveReport:
    """Plain single-regime alternating minimization."""
    stop = stop if stop is not None else StoppingRule()
    _require_strict(params, "ias_run")
    state = _initial_state(problem, params)
    return _iterate(
        problem,
        state,
        stop,
        switch=None,
        params2=None,
        nonneg=nonneg_projection,
        exact_alpha=exact_alpha,
        report_threshold=report_threshold,
    )


def hybrid_global(
    problem: Problem,
    params1: hp.HyperParams,
    r2: float,
    beta2: float,
    stop: StoppingRule | None = None,
    *,
    nonneg_projection: bool = False,
    exact_alpha: bool = False,
    report_threshold: float = REPORT_THRESHOLD,
) -> SolveReport:
    """Convex warm start, then a one-shot global handoff to regime two.

    The second regime's scales come from the compatibility condition, so
    the zero-coefficient variance is continuous across the switch.
    """
    _check_phase1(params1)
    params2 = hp.HyperParams(r2, beta2, hp.compatible_scale(params1, r2, beta2))
    _require_strict(params2, "hybrid_global phase 2")
    state = _initial_state(problem, params1)
    return _iterate(
        problem,
        state,
        stop if stop is not None else StoppingRule(),
        switch="global",
        params2=params2,
        nonneg=nonneg_projection,
        exact_alpha=exact_alpha,
        report_threshold=report_threshold,
    )


def hybrid_local(
    problem: Problem,
    params1: hp.HyperParams,
    r2: float,
    beta2: float,
    stop: StoppingRule | None = None,
    *,
    nonneg_projection: bool = False,
    exact_alpha: bool = False,
    report_threshold: float = REPORT_THRESHOLD,
) -> SolveReport:
    """Per-component handoff: a component switches to regime two, for
    good, once its variance falls below that regime's convexity
    threshold."""
    _check_phase1(params1)
    params2 = hp.HyperParams(r2, beta2, hp.compatible_scale(params1, r2, beta2))
    _require_strict(params2, "hybrid_local phase 2")
    state = _initial_state(problem, params1)
    return _iterate(
        problem,
        state,
        stop if stop is not None else StoppingRule(),
        switch="local",
        params2=params2,
        nonneg=nonneg_projection,
        exact_alpha=exact_alpha,
        report_threshold=report_threshold,
    )


def _check_phase1(params1: hp.HyperParams) -> None:
    if params1.r < 1.0 or params1.eta <= 0.0:
        raise hp.ParameterError(
            f"phase 1 must be globally convex (r >= 1, eta > 0); "
            f"got r = {params1.r}, eta = {params1.eta:.3g}"
        )


def _initial_state(problem: Problem, params: hp.HyperParams) -> IasState:
    n = problem.forward_dict.cols
    b = np.asarray(problem.b, dtype=float)
    if b.ndim != 1 or b.shape[0] != problem.forward_dict.rows:
        raise ValueError(
            f"data length {b.shape} does not match forward map rows "
            f"{problem.forward_dict.rows}"
        )
    scales = np.broadcast_to(params.theta_scale, (n,))
    theta0 = scales * hp.phi_zero(params)
    return IasState(
        alpha=np.zeros(n),
        theta=theta0.copy(),
        outer_iter=0,
        phase=np.ones(n, dtype=np.int8),
        params1=params,
    )


def _iterate(
    problem: Problem,
    state: IasState,
    stop: StoppingRule,
    switch: str | None,
    params2: hp.HyperParams | None,
    nonneg: bool,
    exact_alpha: bool,
    report_threshold: float,
) -> SolveReport:
    b = np.asarray(problem.b, dtype=float)
    report = SolveReport([], [], [], [], state)
    rel_change: float | None = None
    iters_in_phase = 0
    stop_reason = "max_outer"

    for t in range(1, stop.max_outer + 1):
        if switch == "global" and params2 is not None and not (state.phase == 2).any():
            if stop.phase_switch.fires(iters_in_phase, rel_change):
                state.phase[:] = 2
                state.params2 = params2
                report.switch_iteration = t - 1
                rel_change = None
                iters_in_phase = 0
                log.info("switching to second hyperprior at outer iteration %d", t - 1)

        alpha, inner = alpha_update(state, b, problem.forward_dict, exact=exact_alpha)
        if nonneg:
            np.clip(alpha, 0.0, None, out=alpha)
        theta_prev = state.theta
        theta = _theta_step(alpha, state)
        rel_change = float(
            np.linalg.norm(theta - theta_prev) / max(np.linalg.norm(theta_prev), 1e-300)
        )
        state.alpha, state.theta, state.outer_iter = alpha, theta, t
        iters_in_phase += 1

        if switch == "local" and params2 is not None:
            thresholds = hp.convexity_threshold(params2)
            thresholds = np.broadcast_to(thresholds, theta.shape)
            newly = (state.phase == 1) & (theta < thresholds)
            if newly.any():
                if report.switch_iteration is None:
                    report.switch_iteration = t
                state.phase[newly] = 2
                state.params2 = params2

        report.objective_trace.append(_mixed_objective(alpha, theta, b, problem.forward_dict, state))
        report.cgls_counts.append(inner.iterations)
        report.data_residual.append(float(np.linalg.norm(b - problem.forward_dict.apply(alpha))))
        report.support_per_frame.append(_support_counts(alpha, problem, report_threshold))
        log.info(
            "outer %3d: objective %.6e, cgls %3d, residual %.3e",
            t,
            report.objective_trace[-1],
            inner.iterations,
            report.data_residual[-1],
        )

        in_final_phase = switch != "global" or (state.phase == 2).all()
        if in_final_phase and rel_change < stop.theta_rtol:
            stop_reason = "theta_rtol"
            break

    report.stop_reason = stop_reason
    report.final_state = state
    return report
