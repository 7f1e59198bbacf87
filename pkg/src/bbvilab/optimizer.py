"""Projected SGD, stepsize plans and iteration-complexity predictors.

Plans take ``Delta = |lambda_0 - lambda*|`` (a distance, not its square).
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Optional, Union

import numpy as np

from . import bounds
from .domain import DomainSpec, in_domain, project
from .estimators import EstimatorKind, gradient_arrays
from .family import ScaleKind, VarParams
from .rng import NormalStream
from .targets import Target, regularity


class ScheduleKind(str, enum.Enum):
    FIXED = "fixed"
    DECREASING = "decreasing"


@dataclass(frozen=True)
class FixedSchedule:
    gamma: float

    def __post_init__(self):
        if not (self.gamma >= 0 and math.isfinite(self.gamma)):
            raise ValueError(f"gamma must be finite and >= 0, got {self.gamma}")

    kind = ScheduleKind.FIXED

    def gamma_at(self, t: int) -> float:
        return self.gamma


@dataclass(frozen=True)
class DecreasingSchedule:
    """``gamma_t = min(mu / (2 alpha), (4t + 2) / (mu (t + 1)^2))`` with ``t`` from 0."""

    mu: float
    alpha: float

    def __post_init__(self):
        if not (self.mu > 0 and self.alpha > 0):
            raise ValueError("mu and alpha must be positive")

    kind = ScheduleKind.DECREASING

    def gamma_at(self, t: int) -> float:
        return min(self.mu / (2.0 * self.alpha), (4.0 * t + 2.0) / (self.mu * (t + 1.0) ** 2))


StepSchedule = Union[FixedSchedule, DecreasingSchedule]


@dataclass(frozen=True)
class StepPlan:
    schedule: StepSchedule
    T: int
    epsilon: float
    inputs: dict
    T_exact: float
    warnings: tuple = ()


def _ceil_count(x: float) -> int:
    return max(1, int(math.ceil(x)))


def _log_term(delta: float, epsilon: float) -> tuple[float, tuple]:
    arg = 2.0 * delta**2 / epsilon
    if arg <= 1.0:
        return 0.0, (f"epsilon={epsilon} >= 2 Delta^2={2 * delta**2}; accuracy already met, T set to 1",)
    return math.log(arg), ()


def _check_plan_inputs(mu, alpha, beta, epsilon, delta):
    if not (mu > 0 and alpha > 0 and epsilon > 0 and delta > 0):
        raise ValueError("mu, alpha, epsilon and Delta must be positive")
    if beta < 0:
        raise ValueError("beta must be >= 0")


def fixed_stepsize_plan(mu, alpha, beta, epsilon, delta) -> StepPlan:
    """``gamma = min(eps mu / (4 beta), mu / (2 alpha), 2 / mu)`` and
    ``T = max(4 beta / (mu^2 eps), 2 alpha / mu^2, 1/2) log(2 Delta^2 / eps)``.
    """
    _check_plan_inputs(mu, alpha, beta, epsilon, delta)
    first = math.inf if beta == 0 else epsilon * mu / (4.0 * beta)
    gamma = min(first, mu / (2.0 * alpha), 2.0 / mu)
    log_term, warn = _log_term(delta, epsilon)
    t_exact = max(4.0 * beta / (mu**2 * epsilon), 2.0 * alpha / mu**2, 0.5) * log_term
    return StepPlan(FixedSchedule(gamma), _ceil_count(t_exact), epsilon,
                    dict(mu=mu, alpha=alpha, beta=beta, Delta=delta), t_exact, warn)


def decreasing_stepsize_plan(mu, alpha, beta, epsilon, delta) -> StepPlan:
    """``T = 16 beta / (mu^2 eps) + 8 alpha Delta / (mu^2 sqrt(eps))``."""
    _check_plan_inputs(mu, alpha, beta, epsilon, delta)
    t_exact = 16.0 * beta / (mu**2 * epsilon) + 8.0 * alpha * delta / (mu**2 * math.sqrt(epsilon))
    return StepPlan(DecreasingSchedule(mu, alpha), _ceil_count(t_exact), epsilon,
                    dict(mu=mu, alpha=alpha, beta=beta, Delta=delta), t_exact)


def adaptive_fixed_plan(mu, alpha_tilde, beta_tilde, c_pp, epsilon, delta) -> StepPlan:
    """Fixed-stepsize plan with ``delta`` chosen to minimize ``T``.

    ``gamma = min(mu / (2 (a + 2 b / eps)), 2 / mu)`` and
    ``T = (2 / mu^2) max(a + 2 b / eps, mu^2 / 4) log(2 Delta^2 / eps)``.
    """
    _check_plan_inputs(mu, alpha_tilde, beta_tilde, epsilon, delta)
    pp_delta = bounds.adaptive_delta_fixed(alpha_tilde, beta_tilde, c_pp, epsilon)
    eff = alpha_tilde + 2.0 * beta_tilde / epsilon
    gamma = min(0.5 * mu / eff, 2.0 / mu)
    log_term, warn = _log_term(delta, epsilon)
    t_exact = 2.0 / mu**2 * max(eff, mu**2 / 4.0) * log_term
    inputs = dict(mu=mu, alpha_tilde=alpha_tilde, beta_tilde=beta_tilde, c_pp=c_pp, Delta=delta,
                  pp_delta=pp_delta, alpha=(1 + c_pp * pp_delta) * alpha_tilde,
                  beta=beta_tilde + (beta_tilde / (c_pp * pp_delta) if pp_delta > 0 else 0.0))
    return StepPlan(FixedSchedule(gamma), _ceil_count(t_exact), epsilon, inputs, t_exact, warn)


def adaptive_decreasing_plan(mu, alpha_tilde, beta_tilde, c_pp, epsilon, delta) -> StepPlan:
    """Decreasing-stepsize plan at the optimal ``delta``.

    ``T = 16 b / (mu^2 eps) + 16 sqrt(2 Delta a b) / (mu^2 eps^{3/4}) + 8 a Delta / (mu^2 sqrt(eps))``
    with the schedule capped at ``mu / (2 (1 + c delta) a)``.  With ``b = 0``
    the plain decreasing plan at ``(a, 0)`` is returned.
    """
    _check_plan_inputs(mu, alpha_tilde, beta_tilde, epsilon, delta)
    if beta_tilde == 0:
        return decreasing_stepsize_plan(mu, alpha_tilde, 0.0, epsilon, delta)
    pp_delta = bounds.adaptive_delta_decreasing(alpha_tilde, beta_tilde, c_pp, epsilon, delta)
    t_exact = (16.0 * beta_tilde / (mu**2 * epsilon)
               + 16.0 * math.sqrt(2.0 * delta * alpha_tilde * beta_tilde) / (mu**2 * epsilon**0.75)
               + 8.0 * alpha_tilde * delta / (mu**2 * math.sqrt(epsilon)))
    alpha = (1 + c_pp * pp_delta) * alpha_tilde
    inputs = dict(mu=mu, alpha_tilde=alpha_tilde, beta_tilde=beta_tilde, c_pp=c_pp, Delta=delta,
                  pp_delta=pp_delta, alpha=alpha, beta=(1 + 1 / (c_pp * pp_delta)) * beta_tilde)
    return StepPlan(DecreasingSchedule(mu, alpha), _ceil_count(t_exact), epsilon, inputs, t_exact)


def bbvi_complexity(kind, schedule_kind, kappa, d, k_phi, epsilon, delta, misfit) -> int:
    """Iteration count for BBVI on ``Lambda_L``.

    ``misfit`` is ``|lambda_bar - lambda*|^2`` for CFE and
    ``sqrt(D_F4(q*, pi)) / L^2`` for STL.
    """
    kind = EstimatorKind(kind)
    schedule_kind = ScheduleKind(schedule_kind)
    if not (kappa >= 1 and d >= 1 and epsilon > 0 and delta > 0):
        raise ValueError("need kappa >= 1, d >= 1, epsilon > 0, Delta > 0")
    if misfit < 0:
        raise ValueError("misfit must be >= 0")
    k2 = kappa**2
    if schedule_kind is ScheduleKind.FIXED:
        log_term, _ = _log_term(delta, epsilon)
        if kind is EstimatorKind.CFE:
            t = 2.0 * k2 * (d + k_phi + 4) * (1 + 2 * misfit / epsilon) * log_term
        else:
            t = 8.0 * k2 * (d + k_phi) * (1 + misfit / epsilon) * log_term
        return _ceil_count(t)
    root = math.sqrt(delta) * math.sqrt(misfit) / epsilon**0.75
    tail = misfit / epsilon + delta / math.sqrt(epsilon)
    if kind is EstimatorKind.CFE:
        t = 16.0 * k2 * (d + k_phi + 4) * (tail + 2.0 * root)
    else:
        t = 32.0 * k2 * (d + k_phi) * (tail + root / math.sqrt(2.0))
    return _ceil_count(t)


@dataclass
class Trace:
    """Per-iteration record of one run.

    Row ``t`` describes ``lambda_t``; ``grad_norm_sq[t]`` is the squared norm of
    the (batch-averaged) gradient drawn at ``lambda_t`` and is NaN for the
    last row.  ``dist_sq`` is ``None`` when no optimum was supplied.
    """

    t: np.ndarray
    gamma: np.ndarray
    grad_norm_sq: np.ndarray
    dist_sq: Optional[np.ndarray]
    final: VarParams
    snapshots: dict = field(default_factory=dict)
    failure: Optional[str] = None

    @property
    def failed(self) -> bool:
        return self.failure is not None


def sgd_run(target: Target, kind: EstimatorKind, params0: VarParams, dom: DomainSpec, sched: StepSchedule,
            T: int, batch: int = 1, seed: int = 0, optimum: Optional[VarParams] = None,
            snapshot_every: int = 0) -> Trace:
    """Run ``T`` steps of ``lambda <- proj(lambda + gamma_t g)``.

    The estimators return ascent directions of the ELBO, so adding them
    descends the negative ELBO.  Step ``t`` consumes base draws
    ``t * batch .. (t + 1) * batch - 1`` of ``seed``.  A non-finite gradient
    stops the run and sets ``failure``; arrays then end at the failing step.
    """
    return sgd_run_seeds(target, kind, params0, dom, sched, T, batch, [seed], optimum, snapshot_every)[0]


def sgd_run_seeds(target: Target, kind: EstimatorKind, params0: VarParams, dom: DomainSpec, sched: StepSchedule,
                  T: int, batch: int, seeds, optimum: Optional[VarParams] = None,
                  snapshot_every: int = 0, chunk_steps: int = 256) -> list[Trace]:
    """Independent runs of :func:`sgd_run`, one per seed, advanced in lockstep.

    Each run sees exactly the draws it would see alone; stacking only
    amortizes interpreter overhead.  A run that fails is frozen at its
    failing step while the others continue.
    """
    kind = EstimatorKind(kind)
    if T < 0 or batch < 1:
        raise ValueError("need T >= 0 and batch >= 1")
    seeds = [int(s) for s in seeds]
    n_runs = len(seeds)
    fam = params0.kind
    start = project(params0, dom)
    d = start.dim
    full = fam is ScaleKind.FULL_RANK
    m = np.repeat(start.mean[None], n_runs, axis=0)
    C = np.repeat(start.scale[None], n_runs, axis=0)
    idx = np.arange(d)
    tau = dom.threshold
    streams = [NormalStream(s, d) for s in seeds]
    gammas = np.array([sched.gamma_at(t) for t in range(T)] + [np.nan])
    gnorm = np.full((n_runs, T + 1), np.nan)
    dist = None
    if optimum is not None:
        om, oC = optimum.mean, optimum.scale
        scale_axes = (1, 2) if full else (1,)
        dist = np.full((n_runs, T + 1), np.nan)
        dist[:, 0] = np.sum((m - om) ** 2, axis=1) + np.sum((C - oC) ** 2, axis=scale_axes)
    snapshots = [({0: start} if snapshot_every else {}) for _ in seeds]
    steps = np.full(n_runs, T)
    failures: list[Optional[str]] = [None] * n_runs
    alive = np.ones(n_runs, dtype=bool)
    expand = (slice(None), None)
    draws = None
    for t in range(T):
        k = t % chunk_steps
        if k == 0:
            n_steps = min(chunk_steps, T - t)
            draws = np.stack([s.take(n_steps * batch).reshape(n_steps, batch, d) for s in streams], axis=1)
        u = draws[k]
        g_m, g_C = gradient_arrays(kind, target, m[expand], C[expand], fam, u)
        g_m = g_m.mean(axis=1)
        g_C = g_C.mean(axis=1)
        gn = np.sum(g_m * g_m, axis=1) + np.sum(g_C.reshape(n_runs, -1) ** 2, axis=1)
        bad = alive & ~np.isfinite(gn)
        if bad.any():
            for r in np.flatnonzero(bad):
                diag = np.diag(C[r]) if full else C[r]
                failures[r] = f"non-finite gradient at step {t} (|g|^2={gn[r]}, min diag={float(np.min(diag))})"
                steps[r] = t
            alive &= ~bad
            if not alive.any():
                break
        gnorm[alive, t] = gn[alive]
        gamma = gammas[t]
        step_m = np.where(alive[:, None], gamma * g_m, 0.0)
        step_C = np.where(alive.reshape((-1,) + (1,) * (C.ndim - 1)), gamma * g_C, 0.0)
        m = m + step_m
        C = C + step_C
        if full:
            C[:, idx, idx] = np.maximum(C[:, idx, idx], tau)
        else:
            C = np.maximum(C, tau)
        if dist is not None:
            dist[alive, t + 1] = (np.sum((m - om) ** 2, axis=1) + np.sum((C - oC) ** 2, axis=scale_axes))[alive]
        if snapshot_every and (t + 1) % snapshot_every == 0:
            for r in np.flatnonzero(alive):
                snapshots[r][t + 1] = VarParams(m[r], C[r], fam, start.base)
    traces = []
    for r in range(n_runs):
        n = int(steps[r]) + 1
        final = VarParams(m[r], C[r], fam, start.base)
        if not in_domain(final, dom):
            raise AssertionError("iterate left the feasible set")
        traces.append(Trace(np.arange(n), gammas[:n].copy(), gnorm[r, :n].copy(),
                            None if dist is None else dist[r, :n].copy(), final, snapshots[r], failures[r]))
    return traces


def planned_accuracy_constants(target, estimator, family, k_phi, S, misfit):
    """``(mu, alpha_tilde, beta_tilde, c_pp)`` for a Gaussian target on ``Lambda_S``."""
    reg = regularity(target)
    a_t, b_t, c_pp = bounds.adaptive_coefficients(estimator, family, target.dim, k_phi, reg.L_smooth, S, misfit)
    return reg.mu_strong, a_t, b_t, c_pp
