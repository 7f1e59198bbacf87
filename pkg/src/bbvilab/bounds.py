"""Closed-form gradient-variance bounds for the CFE and STL estimators.

Every evaluator takes plain scalars so it can be used as a formula oracle.
Upper bounds have the quadratic-variance form ``alpha * dist_sq + beta`` where
``dist_sq = |lambda - lambda*|^2`` and the free Peter-Paul parameter ``delta``
trades ``alpha`` against ``beta``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Optional

STL_PETER_PAUL = 0.5
CFE_PETER_PAUL = 1.0
# absolute slack for comparisons at an exact fit, where the true value is 0
ROUNDOFF_ATOL = 1e-12


@dataclass(frozen=True)
class QvCoefficients:
    """``alpha``/``beta`` at ``delta_used`` plus the delta-free adaptive coefficients.

    For STL, ``alpha = (1 + c delta) alpha_tilde`` and
    ``beta = (1 + 1/(c delta)) beta_tilde`` hold exactly.  For CFE the
    ``(L + S)^2`` term does not scale with ``delta``, so only
    ``alpha <= (1 + c delta) alpha_tilde`` holds.
    """

    alpha: float
    beta: float
    delta_used: float
    alpha_tilde: float
    beta_tilde: float
    c_pp: float


@dataclass(frozen=True)
class BoundReport:
    bound_value: float
    alpha: float
    beta: float
    dist_sq: float
    delta: float
    inputs: dict = field(default_factory=dict)
    measured: Optional[float] = None
    std_err: Optional[float] = None

    def with_measurement(self, mean: float, std_err: float) -> "BoundReport":
        return replace(self, measured=float(mean), std_err=float(std_err))

    def dominates(self, n_se: float = 5.0) -> bool:
        """True when the measurement does not exceed the bound by more than ``n_se`` standard errors."""
        if self.measured is None:
            raise ValueError("no measurement attached")
        return self.measured <= self.bound_value + n_se * self.std_err + ROUNDOFF_ATOL


def _check_nonneg(**kw):
    for name, v in kw.items():
        if v < 0 or math.isnan(v):
            raise ValueError(f"{name} must be non-negative, got {v}")


def _inv_or_zero(scale: float, delta: float, weight: float) -> float:
    """``(1 + scale / delta) * weight`` with the ``weight = 0`` limit taken as 0."""
    if weight == 0:
        return 0.0
    if delta <= 0:
        raise ValueError("delta must be positive when the beta term is non-zero")
    return (1.0 + scale / delta) * weight


def _report(alpha, beta, dist_sq, delta, **inputs) -> BoundReport:
    return BoundReport(alpha * dist_sq + beta, alpha, beta, dist_sq, delta, inputs)


def stl_fullrank_coefficients(d, k_phi, L, S, d_f4_at_opt) -> tuple[float, float]:
    """Adaptive ``(alpha_tilde, beta_tilde)`` of the full-rank STL bound (Peter-Paul constant 1/2)."""
    return 2.0 * (L**2 * (d + k_phi) + S**2 * (d + 1)), (2 * d + k_phi) * math.sqrt(d_f4_at_opt)


def stl_meanfield_coefficients(d, k_phi, L, S, d_f4_at_opt) -> tuple[float, float]:
    root = math.sqrt(d * k_phi)
    return (
        2.0 * (L**2 * (2 * k_phi * math.sqrt(d) + 1) + S**2 * (root + 1)),
        (1 + root) * math.sqrt(d_f4_at_opt),
    )


def cfe_fullrank_coefficients(d, k_phi, L, S, dist_opt_mode_sq) -> tuple[float, float]:
    """Adaptive ``(alpha_tilde, beta_tilde)`` dominating the full-rank CFE bound (constant 1)."""
    energy = L**2 * (d + k_phi)
    return energy + (L + S) ** 2, energy * dist_opt_mode_sq


def cfe_meanfield_coefficients(d, k_phi, L, S, dist_opt_mode_sq) -> tuple[float, float]:
    energy = L**2 * (2 * k_phi * math.sqrt(d) + 1)
    return energy + (L + S) ** 2, energy * dist_opt_mode_sq


def stl_upper_fullrank(d, k_phi, L, S, delta, dist_sq, d_f4_at_opt) -> BoundReport:
    """Full-rank STL: ``(2+delta)(L^2 (d+k) + S^2 (d+1)) dist_sq + (1+2/delta)(2d+k) sqrt(D4)``."""
    _check_nonneg(d=d, k_phi=k_phi, L=L, S=S, delta=delta, dist_sq=dist_sq, d_f4_at_opt=d_f4_at_opt)
    a_t, b_t = stl_fullrank_coefficients(d, k_phi, L, S, d_f4_at_opt)
    alpha = (1 + STL_PETER_PAUL * delta) * a_t
    beta = _inv_or_zero(2.0, delta, b_t)
    return _report(alpha, beta, dist_sq, delta, d=d, k_phi=k_phi, L=L, S=S, d_f4_at_opt=d_f4_at_opt)


def stl_upper_meanfield(d, k_phi, L, S, delta, dist_sq, d_f4_at_opt) -> BoundReport:
    _check_nonneg(d=d, k_phi=k_phi, L=L, S=S, delta=delta, dist_sq=dist_sq, d_f4_at_opt=d_f4_at_opt)
    a_t, b_t = stl_meanfield_coefficients(d, k_phi, L, S, d_f4_at_opt)
    alpha = (1 + STL_PETER_PAUL * delta) * a_t
    beta = _inv_or_zero(2.0, delta, b_t)
    return _report(alpha, beta, dist_sq, delta, d=d, k_phi=k_phi, L=L, S=S, d_f4_at_opt=d_f4_at_opt)


def cfe_upper_fullrank(d, k_phi, L, S, delta, dist_sq, dist_opt_mode_sq) -> BoundReport:
    """Full-rank CFE: ``(L^2 (d+k)(1+delta) + (L+S)^2) dist_sq + L^2 (d+k)(1+1/delta) |lambda* - lambda_bar|^2``."""
    _check_nonneg(d=d, k_phi=k_phi, L=L, S=S, delta=delta, dist_sq=dist_sq, dist_opt_mode_sq=dist_opt_mode_sq)
    energy = L**2 * (d + k_phi)
    alpha = energy * (1 + delta) + (L + S) ** 2
    beta = _inv_or_zero(1.0, delta, energy * dist_opt_mode_sq)
    return _report(alpha, beta, dist_sq, delta, d=d, k_phi=k_phi, L=L, S=S, dist_opt_mode_sq=dist_opt_mode_sq)


def cfe_upper_meanfield(d, k_phi, L, S, delta, dist_sq, dist_opt_mode_sq) -> BoundReport:
    """Mean-field CFE with ``L^2`` on both energy terms."""
    _check_nonneg(d=d, k_phi=k_phi, L=L, S=S, delta=delta, dist_sq=dist_sq, dist_opt_mode_sq=dist_opt_mode_sq)
    energy = L**2 * (2 * k_phi * math.sqrt(d) + 1)
    alpha = energy * (1 + delta) + (L + S) ** 2
    beta = _inv_or_zero(1.0, delta, energy * dist_opt_mode_sq)
    return _report(alpha, beta, dist_sq, delta, d=d, k_phi=k_phi, L=L, S=S, dist_opt_mode_sq=dist_opt_mode_sq)


_UPPER = {
    ("stl", "full-rank"): (stl_upper_fullrank, stl_fullrank_coefficients, STL_PETER_PAUL),
    ("stl", "mean-field"): (stl_upper_meanfield, stl_meanfield_coefficients, STL_PETER_PAUL),
    ("cfe", "full-rank"): (cfe_upper_fullrank, cfe_fullrank_coefficients, CFE_PETER_PAUL),
    ("cfe", "mean-field"): (cfe_upper_meanfield, cfe_meanfield_coefficients, CFE_PETER_PAUL),
}


def _key(estimator, family) -> tuple[str, str]:
    return (getattr(estimator, "value", estimator), getattr(family, "value", family))


def adaptive_coefficients(estimator, family, d, k_phi, L, S, misfit) -> tuple[float, float, float]:
    """``(alpha_tilde, beta_tilde, c_pp)`` for an estimator/family pair.

    ``misfit`` is the fourth-order Fisher divergence at the optimum for STL
    and ``|lambda* - lambda_bar|^2`` for CFE.
    """
    _, coeffs, c_pp = _UPPER[_key(estimator, family)]
    a_t, b_t = coeffs(d, k_phi, L, S, misfit)
    return a_t, b_t, c_pp


def upper_bound(estimator, family, d, k_phi, L, S, delta, dist_sq, misfit) -> BoundReport:
    fn, _, _ = _UPPER[_key(estimator, family)]
    return fn(d, k_phi, L, S, delta, dist_sq, misfit)


def qv_coefficients(estimator, family, d, k_phi, L, S, delta, misfit) -> QvCoefficients:
    rep = upper_bound(estimator, family, d, k_phi, L, S, delta, 0.0, misfit)
    a_t, b_t, c_pp = adaptive_coefficients(estimator, family, d, k_phi, L, S, misfit)
    return QvCoefficients(rep.alpha, rep.beta, delta, a_t, b_t, c_pp)


def adaptive_upper_bound(estimator, family, d, k_phi, L, S, epsilon, dist_sq, misfit) -> BoundReport:
    """Upper bound evaluated at the fixed-stepsize optimal ``delta`` for accuracy ``epsilon``."""
    a_t, b_t, c_pp = adaptive_coefficients(estimator, family, d, k_phi, L, S, misfit)
    delta = adaptive_delta_fixed(a_t, b_t, c_pp, epsilon)
    return upper_bound(estimator, family, d, k_phi, L, S, delta, dist_sq, misfit)


def stl_lower_fisher(d_f: float, kl: float, c_lsi: float) -> tuple[float, float]:
    """Chained floors ``E|g_STL|^2 >= D_F >= (2 / C_LSI) KL``."""
    _check_nonneg(d_f=d_f, kl=kl)
    if c_lsi <= 0:
        raise ValueError("c_lsi must be positive")
    return float(d_f), 2.0 * kl / c_lsi


def stl_lower_worstcase(d, k_phi, L, c_frob_sq, mean_gap_sq) -> float:
    """``(L^2 (d+k) - 2(d+1)) |C|_F^2 - 2 (k-1) |m - z_bar|^2``; may be negative."""
    if L < 1:
        raise ValueError("the worst-case lower bound requires L >= 1")
    _check_nonneg(c_frob_sq=c_frob_sq, mean_gap_sq=mean_gap_sq)
    return (L**2 * (d + k_phi) - 2 * (d + 1)) * c_frob_sq - 2 * (k_phi - 1) * mean_gap_sq


def stl_worstcase_expected(d: int, k_phi: float, L: float, stored_only: bool = True) -> float:
    """Exact ``E|g_STL|^2`` on the worst-case instance with the mean at the mode.

    There the residual is ``(L - 1/L) L^{-1/2} u_i`` on coordinates ``i >= 2``
    and zero on the first.  With gradients on the stored lower triangle the
    ``i``-th row contributes ``E u_i^2 (1 + sum_{j<=i} u_j^2) = i + k``; with
    the full matrix every row contributes ``d + k``.
    """
    c2 = (L - 1.0 / L) ** 2 / L
    if stored_only:
        return c2 * sum(i + k_phi for i in range(2, d + 1))
    return c2 * (d - 1) * (d + k_phi)


def stl_tightness_ratio(d: int, k_phi: float, L: float) -> float:
    """Full-rank STL upper coefficient over the worst-case lower bound at ``S = L``.

    Both sides are evaluated on ``|C|_F^2 = d / L`` with ``delta = 0`` and no
    misfit, so the ratio compares the ``|C|_F^2`` coefficients.
    """
    c_frob_sq = d / L
    upper = stl_upper_fullrank(d, k_phi, L, L, 0.0, c_frob_sq, 0.0).bound_value
    return upper / stl_lower_worstcase(d, k_phi, L, c_frob_sq, 0.0)


def adaptive_delta_fixed(alpha_tilde, beta_tilde, c_pp, epsilon) -> float:
    """``delta = 2 beta_tilde / (alpha_tilde c epsilon)``; equalizes the two terms of the fixed-stepsize complexity."""
    if alpha_tilde <= 0 or c_pp <= 0 or epsilon <= 0:
        raise ValueError("alpha_tilde, c_pp and epsilon must be positive")
    _check_nonneg(beta_tilde=beta_tilde)
    return 2.0 * beta_tilde / (alpha_tilde * c_pp * epsilon)


def adaptive_delta_decreasing(alpha_tilde, beta_tilde, c_pp, epsilon, dist0) -> float:
    """Minimizer of the decreasing-stepsize complexity over ``delta``.

    With ``alpha = (1 + c delta) alpha_tilde`` and
    ``beta = (1 + 1/(c delta)) beta_tilde`` the delta-dependent part is
    ``16 beta_tilde / (c delta mu^2 eps) + 8 c delta alpha_tilde dist0 / (mu^2 sqrt(eps))``,
    minimized at ``delta = sqrt(2 beta_tilde / (alpha_tilde dist0)) / (c eps^{1/4})``.
    """
    if beta_tilde <= 0:
        raise ValueError("the decreasing-stepsize delta is undefined for beta_tilde = 0")
    if alpha_tilde <= 0 or c_pp <= 0 or epsilon <= 0 or dist0 <= 0:
        raise ValueError("alpha_tilde, c_pp, epsilon and dist0 must be positive")
    return math.sqrt(2.0 * beta_tilde / (alpha_tilde * dist0)) / (c_pp * epsilon**0.25)


def peter_paul_two(a, b, delta):
    """Right-hand side of ``(a + b)^2 <= (1 + delta) a^2 + (1 + 1/delta) b^2``."""
    return (1 + delta) * a**2 + (1 + 1 / delta) * b**2


def peter_paul_three(a, b, c, delta):
    """Right-hand side of ``(a + b + c)^2 <= (2 + delta)(a^2 + b^2) + (1 + 2/delta) c^2``."""
    return (2 + delta) * (a**2 + b**2) + (1 + 2 / delta) * c**2
