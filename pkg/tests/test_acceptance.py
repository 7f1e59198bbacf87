"""Desk-scale acceptance criteria, one test (or a small group) per criterion.

Each criterion records a PASS/FAIL line that is repeated in the terminal
summary.  The worst-case lower bound does not hold for the construction as
stated; that part is an expected failure and still reports FAIL.
"""

import math
import time

import numpy as np
import pytest
from scipy import stats

from bbvilab import bounds
from bbvilab.divergences import fisher_gaussian, fisher_sandwich, kl_gaussian
from bbvilab.domain import DomainSpec, in_domain, param_distance, param_distance_sq, project
from bbvilab.estimators import analytic_grad_gaussian, grad_norm_sq_draws, mean_gradient
from bbvilab.family import VarParams, chain_to_params, entropy_grad, j_factor, sample, score
from bbvilab.harness import cli
from bbvilab.harness.config import ExperimentConfig
from bbvilab.harness.experiments import misfit, run_bounds_check, run_worst_case
from bbvilab.optimizer import adaptive_fixed_plan, planned_accuracy_constants, sgd_run_seeds
from bbvilab.targets import GaussianTarget, optimal_params, regularity

from conftest import random_params, random_target

KINDS = ("full-rank", "mean-field")


def _random_spd(rng, d):
    a = rng.standard_normal((d, d))
    return a @ a.T + 0.1 * np.eye(d)


# 1 ---------------------------------------------------------------------------

def test_criterion_01_unbiasedness(criterion):
    rng = np.random.default_rng(1)
    t0 = time.perf_counter()
    worst = 0.0
    for d in (1, 3, 5):
        target = random_target(rng, d)
        for fam in KINDS:
            q = random_params(rng, d, fam)
            exact = -analytic_grad_gaussian(target, q).flat()
            for kind in ("cfe", "stl"):
                mean, se = mean_gradient(kind, target, q, 1_000_000, 100 + d)
                z = np.abs(mean.flat() - exact) / np.maximum(se.flat(), 1e-300)
                worst = max(worst, float(z.max()))
    elapsed = time.perf_counter() - t0
    ok = worst <= 5.0 and elapsed <= 60
    criterion(1, ok, f"max |mean - grad| / SE = {worst:.2f} (<= 5), {elapsed:.1f}s")
    assert ok


# 2 ---------------------------------------------------------------------------

def test_criterion_02_stl_interpolation(criterion):
    rng = np.random.default_rng(2)
    target = random_target(rng, 5)
    norms = np.sqrt(grad_norm_sq_draws("stl", target, optimal_params(target, "full-rank"), 10_000, 7))
    ok = float(norms.max()) <= 1e-10
    criterion(2, ok, f"max per-draw |g_STL| at the fit = {norms.max():.2e} (<= 1e-10)")
    assert ok


# 3 and 4 ---------------------------------------------------------------------

GRID = [(2, 1.0), (2, 10.0), (30, 1.0), (30, 10.0)]


@pytest.fixture(scope="module")
def bounds_tables():
    t0 = time.perf_counter()
    tables = {}
    for d, kappa in GRID:
        cfg = ExperimentConfig(experiment="bounds-check", d=d, kappa=kappa, families=KINDS, sweep_points=50,
                               n_samples=1024, epsilons=(1e-2, 1e-4))
        tables[d, kappa] = run_bounds_check(cfg)
    return tables, time.perf_counter() - t0


def test_criterion_03_upper_bounds(criterion, bounds_tables):
    tables, elapsed = bounds_tables
    total = bad = 0
    evaluators = set()
    for table in tables.values():
        for row in table.rows:
            r = dict(zip(table.columns, row))
            evaluators.add((r["estimator"], r["family"]))
            total += 1
            bad += not r["upper_ok"]
    ok = bad == 0 and len(evaluators) == 4 and elapsed <= 120
    criterion(3, ok, f"{total - bad}/{total} (point, delta) checks dominated over 4 evaluators, {elapsed:.1f}s")
    assert ok


def test_criterion_04_lower_bounds(criterion, bounds_tables):
    tables, _ = bounds_tables
    total = bad = 0
    for table in tables.values():
        for row in table.rows:
            r = dict(zip(table.columns, row))
            if r["estimator"] == "stl" and r["delta_label"] == "delta=1":
                total += 1
                bad += not r["lower_ok"]
    rng = np.random.default_rng(4)
    lsi_bad = 0
    for _ in range(1000):
        d = int(rng.integers(1, 8))
        target = random_target(rng, d)
        q = random_params(rng, d, "full-rank")
        mu = regularity(target).mu_strong
        lsi_bad += 2 * mu * kl_gaussian(q, target) > fisher_gaussian(q, target) * (1 + 1e-10) + 1e-12
    ok = bad == 0 and lsi_bad == 0
    criterion(4, ok, f"Fisher floor held at {total - bad}/{total} points; 2 mu KL <= D_F on {1000 - lsi_bad}/1000 pairs")
    assert ok


# 5 ---------------------------------------------------------------------------

@pytest.fixture(scope="module")
def worst_table():
    return run_worst_case(ExperimentConfig(experiment="worst-case", worst_dims=(2, 10), worst_L=(2.0, 10.0),
                                           worst_samples=100_000))


@pytest.mark.xfail(strict=True, reason="the stated worst-case floor is about twice the true second moment")
def test_criterion_05_worst_case_lower(criterion, worst_table):
    rows = [dict(zip(worst_table.columns, r)) for r in worst_table.rows]
    detail = "; ".join(f"d={r['d']} L={r['L']:g}: MC {r['mc_mean']:.4g} +- {r['mc_se']:.2g} vs floor {r['lower_bound']:.4g}"
                       for r in rows)
    ok = all(r["lower_ok"] for r in rows)
    criterion(5, ok, f"worst-case floor: {detail}")
    assert ok


def test_criterion_05_tightness_ratio(criterion, worst_table):
    rows = [dict(zip(worst_table.columns, r)) for r in worst_table.rows]
    ratios = [r["ratio"] for r in rows if r["L"] == 10.0]
    exact_ok = all(abs(r["mc_mean"] - r["exact"]) <= 5 * r["mc_se"] for r in rows)
    ok = all(x <= 8.0 for x in ratios) and exact_ok
    criterion(5, ok, f"upper/lower ratio at L=10: {', '.join(f'{x:.2f}' for x in ratios)} (<= 8); "
                     f"MC matches closed form: {exact_ok}")
    assert ok


# 6 ---------------------------------------------------------------------------

def _plan_and_start(target, estimator, family, eps, scale0):
    reg = regularity(target)
    opt = optimal_params(target, family)
    dom = DomainSpec(reg.L_smooth, family)
    p0 = VarParams(opt.mean + np.eye(target.dim)[0], scale0, family)
    mis = misfit(estimator, target, opt)
    consts = planned_accuracy_constants(target, estimator, family, 3.0, reg.L_smooth, mis)
    dist0 = param_distance(project(p0, dom), opt)
    return consts, dist0, p0, dom, opt


def test_criterion_06_linear_convergence(criterion):
    t0 = time.perf_counter()
    target = GaussianTarget.from_spectrum(5, 4.0, seed=1)
    eps = 1e-3
    consts, dist0, p0, dom, opt = _plan_and_start(target, "stl", "full-rank", eps, np.eye(5))
    plan = adaptive_fixed_plan(*consts, eps, dist0)
    runs = sgd_run_seeds(target, "stl", p0, dom, plan.schedule, plan.T, 1, range(20), opt)
    mean_dist = np.mean([r.dist_sq for r in runs], axis=0)
    phase = mean_dist > 1e-25
    fit = stats.linregress(np.arange(mean_dist.size)[phase], np.log(mean_dist[phase]))
    elapsed = time.perf_counter() - t0

    stl_ratio = adaptive_fixed_plan(*consts, eps / 10, dist0).T / plan.T
    cfe_consts, cfe_dist0, *_ = _plan_and_start(target, "cfe", "full-rank", eps, np.eye(5))
    cfe_ratio = adaptive_fixed_plan(*cfe_consts, eps / 10, cfe_dist0).T / adaptive_fixed_plan(*cfe_consts, eps, cfe_dist0).T

    ok = (mean_dist[-1] <= eps and fit.slope < 0 and fit.rvalue**2 >= 0.95 and elapsed <= 60
          and stl_ratio <= 1.5 and cfe_ratio >= 5)
    criterion(6, ok, f"T={plan.T}, seed-mean dist_sq={mean_dist[-1]:.2e} (<= {eps:g}), R^2={fit.rvalue**2:.4f}, "
                     f"T(eps/10)/T(eps): STL {stl_ratio:.2f} (<= 1.5), CFE {cfe_ratio:.2f} (>= 5), {elapsed:.1f}s")
    assert ok


# 7 ---------------------------------------------------------------------------

def test_criterion_07_cfe_convergence(criterion):
    target = GaussianTarget.equicorrelated(5, 0.5)
    eps = 0.1
    consts, dist0, p0, dom, opt = _plan_and_start(target, "cfe", "mean-field", eps, np.ones(5))
    plan = adaptive_fixed_plan(*consts, eps, dist0)
    runs = sgd_run_seeds(target, "cfe", p0, dom, plan.schedule, plan.T, 1, range(20), opt)
    final = np.array([r.dist_sq[-1] for r in runs])
    ok = final.mean() <= eps
    criterion(7, ok, f"mean-field CFE, rho=0.5, eps={eps:g}: T={plan.T}, gamma={plan.schedule.gamma:.3e}, "
                     f"seed-mean dist_sq={final.mean():.2e}")
    assert ok


# 8 ---------------------------------------------------------------------------

def test_criterion_08_projection_suite(criterion):
    rng = np.random.default_rng(8)
    S, d = 4.0, 4
    failures = []
    for fam in KINDS:
        dom = DomainSpec(S, fam)
        for _ in range(200):
            p = random_params(rng, d, fam, floor=-0.5)
            once = project(p, dom)
            if project(once, dom) != once or not in_domain(once, dom):
                failures.append("idempotence")
            changed = np.flatnonzero(np.concatenate([p.mean, np.ravel(p.scale)]) != np.concatenate([once.mean, np.ravel(once.scale)]))
            diag_flat = np.arange(d) * (d + 1) + d if fam == "full-rank" else np.arange(d) + d
            if not set(changed) <= set(diag_flat):
                failures.append("structure")
        p = random_params(rng, d, fam, floor=-0.5)
        best = param_distance_sq(p, project(p, dom))
        for _ in range(1000):
            c = project(random_params(rng, d, fam, floor=-0.5), dom)
            if param_distance_sq(p, c) < best - 1e-12:
                failures.append("optimality")
        for _ in range(1000):
            a = project(random_params(rng, d, fam, floor=0.0), dom)
            b = project(random_params(rng, d, fam, floor=0.0), dom)
            if math.sqrt((entropy_grad(a) - entropy_grad(b)).norm_sq()) > S * param_distance(a, b) + 1e-12:
                failures.append("smoothness")
    ok = not failures
    criterion(8, ok, "idempotence, optimality vs 1000 competitors, diagonal-only edits, entropy S-smoothness over 1000 pairs"
                     + ("" if ok else f"; failed: {sorted(set(failures))}"))
    assert ok


# 9 ---------------------------------------------------------------------------

def test_criterion_09_identity_suite(criterion):
    rng = np.random.default_rng(9)
    failed = []
    n, d = 1_000_000, 3
    u, _ = sample(VarParams(np.zeros(d), np.eye(d)), n, 99)

    def within(vals, expected):
        mean = vals.mean(axis=0)
        se = vals.std(axis=0, ddof=1) / math.sqrt(vals.shape[0])
        return bool(np.all(np.abs(mean - expected) <= 5 * se + 1e-12))

    sq = np.sum(u**2, axis=1)
    if not (np.all(np.abs(u.mean(axis=0)) <= 4 / math.sqrt(n))
            and within((u[:, :, None] * u[:, None, :]).reshape(n, -1), np.eye(d).ravel())
            and within(sq, float(d))
            and within((sq[:, None, None] * u[:, :, None] * u[:, None, :]).reshape(n, -1), ((d + 2) * np.eye(d)).ravel())):
        failed.append("moments")

    for _ in range(1000):
        dd = int(rng.integers(1, 7))
        g, v = rng.standard_normal(dd), rng.standard_normal(dd)
        full = g @ g + np.sum(np.outer(g, v) ** 2)
        if abs(full - j_factor(v, "full-rank") * (g @ g)) > 1e-10 * max(1.0, full):
            failed.append("J_T")
        for fam in KINDS:
            if chain_to_params(g, v, fam).norm_sq() > j_factor(v, fam) * (g @ g) * (1 + 1e-10) + 1e-12:
                failed.append("J_T stored")

    q = random_params(rng, d, "full-rank")
    zbar = rng.standard_normal(d)
    uu, zz = sample(q, 400_000, 5)
    expected = (d + 1) * np.sum((q.mean - zbar) ** 2) + (d + 3) * np.sum(q.scale**2)
    if not within(j_factor(uu, "full-rank") * np.sum((zz - zbar) ** 2, axis=1), expected):
        failed.append("norm-distance")

    a, b, c = rng.normal(0, 3, (3, 10_000))
    delta = np.exp(rng.uniform(-6, 6, 10_000))
    if np.any((a + b) ** 2 > bounds.peter_paul_two(a, b, delta) * (1 + 1e-12) + 1e-12):
        failed.append("Peter-Paul 2")
    if np.any((a + b + c) ** 2 > bounds.peter_paul_three(a, b, c, delta) * (1 + 1e-12) + 1e-12):
        failed.append("Peter-Paul 3")

    for _ in range(1000):
        dd = int(rng.integers(2, 11))
        sw = fisher_sandwich(GaussianTarget.from_covariance(np.zeros(dd), _random_spd(rng, dd)))
        tol = 1e-9 * sw.upper
        if not (sw.lower - tol <= sw.exact <= sw.upper + tol):
            failed.append("sandwich")

    for case in range(20):
        target = random_target(rng, 3)
        qq = random_params(rng, 3, KINDS[case % 2])
        _, z = sample(qq, 50_000, 1000 + case)
        vals = np.sum((target.grad_log_lik(z) - score(qq, z)) ** 2, axis=1)
        if not within(vals, fisher_gaussian(qq, target)):
            failed.append("Fisher closed form")

    ok = not failed
    criterion(9, ok, "moments, J_T (1e-10), norm-distance (5 SE), Peter-Paul x 10^4, sandwich x 10^3, Fisher vs MC"
                     + ("" if ok else f"; failed: {sorted(set(failed))}"))
    assert ok


# 10 --------------------------------------------------------------------------

REPRO_CONFIGS = {
    "variance-sweep": "target.d = 5\ntarget.kappa = 3\nfamilies = full-rank, mean-field\nmc.samples = 256\n",
    "bounds-check": "target.d = 4\nfamilies = full-rank, mean-field\nmc.samples = 256\nsweep.points = 8\n",
    "converge": "target.d = 3\nepsilons = 0.1\nsgd.seeds = 6\nsgd.T = 300\nsgd.schedules = fixed, decreasing\n",
    "worst-case": "worst.samples = 5000\n",
    "divergence-table": "target.d = 6\n",
}


def test_criterion_10_reproducibility(criterion, tmp_path):
    mismatched = []
    for experiment, text in REPRO_CONFIGS.items():
        cfg = tmp_path / f"{experiment}.cfg"
        cfg.write_text(f"experiment = {experiment}\nseed = 17\n{text}")
        outputs = []
        for run, threads in enumerate((1, 1, 4)):
            out = tmp_path / f"{experiment}-{run}.csv"
            code = cli.main([experiment, "--config", str(cfg), "--out", str(out), "--deterministic",
                             "--threads", str(threads)])
            assert code == 0
            outputs.append((out.read_bytes(), (tmp_path / f"{experiment}-{run}.csv.json").read_bytes()))
        if len(set(outputs)) != 1:
            mismatched.append(experiment)
    ok = not mismatched
    criterion(10, ok, f"byte-identical CSV and sidecar for {len(REPRO_CONFIGS) - len(mismatched)}/{len(REPRO_CONFIGS)} "
                      "experiments across reruns and --threads 1/4")
    assert ok
