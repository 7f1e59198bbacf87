"""Experiment orchestration: each runner turns a config into a :class:`Table`."""

from __future__ import annotations

import math
from concurrent.futures import Executor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .. import bounds
from ..divergences import (
    fisher4_gaussian,
    fisher_gaussian,
    fisher_sandwich,
    kl_gaussian,
    kl_minimizer_meanfield,
)
from ..domain import DomainSpec, param_distance, param_distance_sq, project
from ..estimators import expected_grad_norm_sq
from ..family import ScaleKind, VarParams
from ..optimizer import (
    FixedSchedule,
    StepPlan,
    adaptive_decreasing_plan,
    adaptive_fixed_plan,
    sgd_run_seeds,
)
from ..rng import derive_seed
from ..targets import GaussianTarget, optimal_params, regularity, worst_case_instance
from .config import ConfigError, ExperimentConfig


class NumericalFailure(RuntimeError):
    pass


@dataclass
class Table:
    columns: list
    rows: list
    meta: dict = field(default_factory=dict)

    def column(self, name: str) -> list:
        i = self.columns.index(name)
        return [r[i] for r in self.rows]


def _map(fn, items, executor: Optional[Executor]):
    items = list(items)
    if executor is None:
        return [fn(x) for x in items]
    return list(executor.map(fn, items))


def build_target(cfg: ExperimentConfig) -> GaussianTarget:
    """Target named by the config; ``kappa = 1`` gives exactly ``Sigma = I``."""
    if cfg.target_kind == "equicorrelated":
        return GaussianTarget.equicorrelated(cfg.d, cfg.rho)
    rotation = None if cfg.kappa == 1 else cfg.rotation_seed
    return GaussianTarget.from_spectrum(cfg.d, cfg.kappa, seed=rotation)


@dataclass(frozen=True)
class Setting:
    target: GaussianTarget
    mu: float
    L: float
    S: float

    def domain(self, family) -> DomainSpec:
        return DomainSpec(self.S, ScaleKind(family))


def resolve(cfg: ExperimentConfig) -> Setting:
    target = build_target(cfg)
    reg = regularity(target)
    S = reg.L_smooth if cfg.S is None else cfg.S
    if S < reg.L_smooth * (1 - 1e-12):
        raise ConfigError(f"domain.S={S} is below L={reg.L_smooth}; the optimum would be infeasible")
    return Setting(target, reg.mu_strong, reg.L_smooth, S)


def misfit(estimator: str, target: GaussianTarget, opt: VarParams) -> float:
    """Misfit entering the variance bounds at the optimum ``opt``.

    STL: ``D_F4(q*, pi)``, exactly zero for the full-rank family since it
    contains every Gaussian.  CFE: ``|lambda* - lambda_bar|^2`` with
    ``lambda_bar = (mode, 0)``.
    """
    if estimator == "stl":
        return 0.0 if opt.kind is ScaleKind.FULL_RANK else fisher4_gaussian(opt, target)
    return float(np.sum((opt.mean - target.mu) ** 2) + np.sum(opt.scale**2))


def far_point(opt: VarParams, dom: DomainSpec, radius: float, factor: float) -> VarParams:
    """``lambda_far``: mean moved ``radius`` along ``e_1``, scale multiplied by ``factor``, then projected."""
    m = np.array(opt.mean)
    m[0] += radius
    return project(opt.replace(mean=m, scale=opt.scale * factor), dom)


def sweep_path(opt: VarParams, dom: DomainSpec, radius: float, factor: float, points: int) -> list:
    """``(s, lambda_s)`` for ``lambda_s = (1 - s) lambda_far + s lambda*`` on an even grid in ``s``."""
    far = far_point(opt, dom, radius, factor)
    out = []
    for s in np.linspace(0.0, 1.0, points):
        s = float(s)
        lam = opt if s == 1.0 else far.replace(mean=(1 - s) * far.mean + s * opt.mean,
                                                scale=(1 - s) * far.scale + s * opt.scale)
        out.append((s, lam))
    return out


def adaptive_deltas(cfg: ExperimentConfig, setting: Setting, estimator: str, family: str, mis: float) -> dict:
    a_t, b_t, c_pp = bounds.adaptive_coefficients(estimator, family, setting.target.dim, cfg.k_phi,
                                                 setting.L, setting.S, mis)
    return {eps: bounds.adaptive_delta_fixed(a_t, b_t, c_pp, eps) for eps in cfg.epsilons}


def _measure(cfg, setting, estimator, lam, seed):
    est = expected_grad_norm_sq(estimator, setting.target, lam, cfg.n_samples, seed)
    if not (math.isfinite(est.mean) and math.isfinite(est.std_err)):
        raise NumericalFailure(f"non-finite gradient moment for {estimator}")
    return est


def _constants_meta(cfg, setting, deltas) -> dict:
    return dict(mu=setting.mu, L=setting.L, kappa=setting.L / setting.mu, k_phi=cfg.k_phi, S=setting.S,
                adaptive_delta={f"{est}/{fam}": {repr(e): dl for e, dl in d.items()} for (est, fam), d in deltas.items()})


def _bound_grid(cfg, setting):
    """Per ``(estimator, family)``: misfit and the deltas to evaluate, adaptive first then 1."""
    mis, deltas = {}, {}
    for fam in cfg.families:
        opt = optimal_params(setting.target, fam)
        for est in cfg.estimators:
            mis[est, fam] = misfit(est, setting.target, opt)
            deltas[est, fam] = adaptive_deltas(cfg, setting, est, fam, mis[est, fam])
    return mis, deltas


def _delta_label(eps) -> str:
    return f"eps={eps!r}"


def run_variance_sweep(cfg: ExperimentConfig, executor: Optional[Executor] = None) -> Table:
    setting = resolve(cfg)
    mis, deltas = _bound_grid(cfg, setting)
    columns = ["family", "point", "s", "dist_sq"]
    for est in cfg.estimators:
        columns += [f"{est}_mean", f"{est}_se"]
    for est in cfg.estimators:
        columns += [f"{est}_bound_{_delta_label(e)}" for e in cfg.epsilons] + [f"{est}_bound_delta=1"]
    units = []
    for fam in cfg.families:
        dom = setting.domain(fam)
        opt = optimal_params(setting.target, fam)
        for i, (s, lam) in enumerate(sweep_path(opt, dom, cfg.sweep_radius, cfg.sweep_scale_factor, cfg.sweep_points)):
            units.append((fam, i, s, lam, opt))

    def unit(u):
        fam, i, s, lam, opt = u
        dist_sq = param_distance_sq(lam, opt)
        row = [fam, i, s, dist_sq]
        for est in cfg.estimators:
            row += list(_measure(cfg, setting, est, lam, derive_seed(cfg.seed, i)))
        for est in cfg.estimators:
            for dl in list(deltas[est, fam].values()) + [1.0]:
                row.append(bounds.upper_bound(est, fam, setting.target.dim, cfg.k_phi, setting.L, setting.S,
                                              dl, dist_sq, mis[est, fam]).bound_value)
        return row

    rows = _map(unit, units, executor)
    return Table(columns, rows, dict(constants=_constants_meta(cfg, setting, deltas),
                                     misfit={f"{e}/{f}": v for (e, f), v in mis.items()}))


def run_bounds_check(cfg: ExperimentConfig, executor: Optional[Executor] = None) -> Table:
    """Long-format comparison of measured second moments with every bound.

    ``upper_ok`` is ``measured <= upper + 5 SE``; for STL ``lower_ok`` is
    ``measured >= D_F - 5 SE`` (CFE rows carry NaN and ``True``).
    """
    setting = resolve(cfg)
    mis, deltas = _bound_grid(cfg, setting)
    columns = ["family", "point", "estimator", "delta_label", "delta", "dist_sq", "measured", "se",
               "upper", "upper_ok", "lower", "lower_ok"]
    units = []
    for fam in cfg.families:
        dom = setting.domain(fam)
        opt = optimal_params(setting.target, fam)
        for i, (_, lam) in enumerate(sweep_path(opt, dom, cfg.sweep_radius, cfg.sweep_scale_factor, cfg.sweep_points)):
            units.append((fam, i, lam, opt))

    def unit(u):
        fam, i, lam, opt = u
        dist_sq = param_distance_sq(lam, opt)
        out = []
        for est in cfg.estimators:
            mean, se = _measure(cfg, setting, est, lam, derive_seed(cfg.seed, i))
            lower = fisher_gaussian(lam, setting.target) if est == "stl" else math.nan
            lower_ok = True if est != "stl" else bool(mean >= lower - 5 * se - bounds.ROUNDOFF_ATOL)
            labelled = [(_delta_label(e), dl) for e, dl in deltas[est, fam].items()] + [("delta=1", 1.0)]
            for label, dl in labelled:
                up = bounds.upper_bound(est, fam, setting.target.dim, cfg.k_phi, setting.L, setting.S,
                                        dl, dist_sq, mis[est, fam]).bound_value
                out.append([fam, i, est, label, dl, dist_sq, mean, se, up, bool(mean <= up + 5 * se + bounds.ROUNDOFF_ATOL), lower, lower_ok])
        return out

    rows = [r for chunk in _map(unit, units, executor) for r in chunk]
    return Table(columns, rows, dict(constants=_constants_meta(cfg, setting, deltas)))


def plan_for(cfg: ExperimentConfig, setting: Setting, estimator: str, family: str, schedule: str,
             epsilon: float, dist0: float) -> StepPlan:
    opt = optimal_params(setting.target, family)
    a_t, b_t, c_pp = bounds.adaptive_coefficients(estimator, family, setting.target.dim, cfg.k_phi,
                                                 setting.L, setting.S, misfit(estimator, setting.target, opt))
    make = adaptive_fixed_plan if schedule == "fixed" else adaptive_decreasing_plan
    return make(setting.mu, a_t, b_t, c_pp, epsilon, dist0)


def run_convergence(cfg: ExperimentConfig, executor: Optional[Executor] = None, workers: int = 1) -> Table:
    """Projected SGD from ``lambda_far`` under the planned ``(gamma, T)`` for every estimator, schedule and epsilon.

    ``sgd.T`` and ``sgd.gamma`` override the plan.  Seeds are split across
    workers; each run is independent of the split.
    """
    setting = resolve(cfg)
    columns = ["family", "estimator", "schedule", "epsilon", "seed_index", "t", "gamma", "dist_sq",
               "grad_norm_sq", "seed_mean_dist_sq"]
    seeds = [derive_seed(cfg.seed, i) for i in range(cfg.n_seeds)]
    n_groups = max(1, min(len(seeds), workers if executor is not None else 1))
    groups = [list(range(g, len(seeds), n_groups)) for g in range(n_groups)]
    rows, plans = [], {}
    for fam in cfg.families:
        dom = setting.domain(fam)
        opt = optimal_params(setting.target, fam)
        start = far_point(opt, dom, cfg.sweep_radius, cfg.sweep_scale_factor)
        dist0 = param_distance(start, opt)
        for est in cfg.estimators:
            for sched_name in cfg.schedules:
                for eps in cfg.epsilons:
                    plan = plan_for(cfg, setting, est, fam, sched_name, eps, dist0)
                    schedule = plan.schedule if cfg.gamma is None else FixedSchedule(cfg.gamma)
                    T = plan.T if cfg.T is None else cfg.T
                    if T > cfg.max_T:
                        raise ConfigError(f"planned T={T} for {est}/{fam}/{sched_name} at eps={eps!r} exceeds "
                                          f"sgd.max_T={cfg.max_T}; set sgd.T or raise sgd.max_T")
                    plans[f"{fam}/{est}/{sched_name}/{eps!r}"] = dict(
                        T=T, planned_T=plan.T, schedule=repr(schedule), Delta=dist0, warnings=list(plan.warnings))

                    def unit(idx, schedule=schedule, T=T):
                        return idx, sgd_run_seeds(setting.target, est, start, dom, schedule, T, cfg.batch,
                                                  [seeds[i] for i in idx], opt)

                    traces = [None] * len(seeds)
                    for idx, trs in _map(unit, groups, executor):
                        for i, tr in zip(idx, trs):
                            traces[i] = tr
                    for i, tr in enumerate(traces):
                        if tr.failed:
                            raise NumericalFailure(f"seed index {i}: {tr.failure}")
                    stacked = np.stack([tr.dist_sq for tr in traces])
                    seed_mean = stacked.mean(axis=0)
                    ts = sorted(set(range(0, T + 1, cfg.record_every)) | {T})
                    for i, tr in enumerate(traces):
                        for t in ts:
                            rows.append([fam, est, sched_name, eps, i, t, float(tr.gamma[t]), float(tr.dist_sq[t]),
                                         float(tr.grad_norm_sq[t]), float(seed_mean[t])])
    return Table(columns, rows, dict(constants=dict(mu=setting.mu, L=setting.L, kappa=setting.L / setting.mu,
                                                    k_phi=cfg.k_phi, S=setting.S), plans=plans))


def run_worst_case(cfg: ExperimentConfig, executor: Optional[Executor] = None) -> Table:
    """STL on the worst-case instance for every ``(d, L)`` in the grid.

    ``exact`` is the closed-form second moment on the stored entries; the
    ``ratio`` column is the upper/lower coefficient ratio at ``S = L``.
    """
    columns = ["d", "L", "lower_bound", "mc_mean", "mc_se", "exact", "upper_bound", "lower_ok", "ratio"]
    units = [(d, L) for d in cfg.worst_dims for L in cfg.worst_L]

    def unit(u):
        d, L = u
        target, lam = worst_case_instance(d, L)
        c_frob_sq = float(np.sum(lam.scale**2))
        lower = bounds.stl_lower_worstcase(d, cfg.k_phi, L, c_frob_sq, 0.0)
        est = expected_grad_norm_sq("stl", target, lam, cfg.worst_samples, derive_seed(cfg.seed, d, int(L * 1000)))
        if not math.isfinite(est.mean):
            raise NumericalFailure("non-finite gradient moment on the worst-case instance")
        opt = optimal_params(target, "full-rank")
        upper = bounds.stl_upper_fullrank(d, cfg.k_phi, L, L, 0.0, param_distance_sq(lam, opt), 0.0).bound_value
        ratio = bounds.stl_tightness_ratio(d, cfg.k_phi, L) if lower > 0 else math.nan
        return [d, L, lower, est.mean, est.std_err, bounds.stl_worstcase_expected(d, cfg.k_phi, L), upper,
                bool(est.mean >= lower - 5 * est.std_err), ratio]

    return Table(columns, _map(unit, units, executor))


def run_divergence_table(cfg: ExperimentConfig, executor: Optional[Executor] = None) -> Table:
    """KL and Fisher divergences of mean-field approximations to equicorrelated targets."""
    columns = ["rho", "kl_at_kl_minimizer", "fisher_at_kl_minimizer", "fisher_marginal",
               "sandwich_lower", "sandwich_upper", "within"]

    def unit(rho):
        target = GaussianTarget.equicorrelated(cfg.d, rho)
        q = kl_minimizer_meanfield(target)
        sw = fisher_sandwich(target)
        tol = 1e-12 * max(1.0, sw.upper)
        within = bool(sw.lower - tol <= sw.exact <= sw.upper + tol)
        return [rho, kl_gaussian(q, target), fisher_gaussian(q, target), sw.exact, sw.lower, sw.upper, within]

    return Table(columns, _map(unit, cfg.rhos, executor))


RUNNERS = {
    "variance-sweep": run_variance_sweep,
    "converge": run_convergence,
    "bounds-check": run_bounds_check,
    "worst-case": run_worst_case,
    "divergence-table": run_divergence_table,
}
