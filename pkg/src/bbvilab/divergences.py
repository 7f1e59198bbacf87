"""KL and Fisher-Hyvarinen divergences between Gaussians."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_solve, solve_triangular

from .estimators import CHUNK, MCEstimate
from .family import VarParams, sample, score
from .targets import GaussianTarget, marginal_params, optimal_params


def kl_gaussian(q: VarParams, target: GaussianTarget) -> float:
    """``KL(q || target)`` in closed form."""
    P = target.precision
    c = q.scale_matrix()
    r = q.mean - target.mu
    logdet_q = 2.0 * np.sum(np.log(q.diag))
    logdet_p = 2.0 * np.sum(np.log(np.diag(target.chol)))
    trace = np.sum(P * (c @ c.T))
    return float(0.5 * (r @ P @ r + trace - logdet_q + logdet_p - q.dim))


def fisher_gaussian(q: VarParams, target: GaussianTarget) -> float:
    """Second-order Fisher-Hyvarinen divergence ``E_q |grad log target - grad log q|^2``.

    Closed form ``|P C - C^{-T}|_F^2 + |P (m - mu)|^2`` with ``P`` the target
    precision.
    """
    P = target.precision
    c = q.scale_matrix()
    c_inv_t = solve_triangular(c, np.eye(q.dim), lower=True).T
    r = P @ (q.mean - target.mu)
    return float(np.sum((P @ c - c_inv_t) ** 2) + r @ r)


def fisher4_gaussian(q: VarParams, target: GaussianTarget) -> float:
    """Closed-form ``E_q |grad log target - grad log q|^4``.

    The difference is ``B u + b`` with ``B = C^{-T} - P C`` and
    ``b = P (mu - m)``.  With ``M = B^T B`` Gaussian moments give
    ``(tr M)^2 + 2 tr(M^2) + 4 |B^T b|^2 + 2 tr(M) |b|^2 + |b|^4``.
    """
    P = target.precision
    c = q.scale_matrix()
    B = solve_triangular(c, np.eye(q.dim), lower=True).T - P @ c
    b = P @ (target.mu - q.mean)
    M = B.T @ B
    tr = np.trace(M)
    bb = b @ b
    Btb = B.T @ b
    return float(tr**2 + 2.0 * np.sum(M * M) + 4.0 * Btb @ Btb + 2.0 * tr * bb + bb**2)


def fisher4_mc(q: VarParams, target: GaussianTarget, n: int, seed: int) -> MCEstimate:
    """Monte Carlo estimate of the fourth-order divergence ``E_q |grad log target - grad log q|^4``."""
    if n < 2:
        raise ValueError("n must be >= 2")
    parts = []
    for start in range(0, n, CHUNK):
        k = min(CHUNK, n - start)
        _, z = sample(q, k, seed, start=start)
        diff = target.grad_log_lik(z) - score(q, z)
        parts.append(np.sum(diff**2, axis=-1) ** 2)
    vals = np.concatenate(parts)
    return MCEstimate(float(np.mean(vals)), float(np.std(vals, ddof=1) / math.sqrt(n)))


def kl_minimizer_meanfield(target: GaussianTarget) -> VarParams:
    return optimal_params(target, "mean-field")


@dataclass(frozen=True)
class CorrelationDecomposition:
    """``Sigma = D^{1/2} R D^{1/2}`` with ``D`` stored as the marginal variances."""

    variances: np.ndarray
    R: np.ndarray

    def reconstruct(self) -> np.ndarray:
        s = np.sqrt(self.variances)
        return s[:, None] * self.R * s[None, :]


def correlation_decomposition(target: GaussianTarget) -> CorrelationDecomposition:
    cov = target.covariance
    var = np.diag(cov).copy()
    s = np.sqrt(var)
    R = cov / s[:, None] / s[None, :]
    R = 0.5 * (R + R.T)
    np.fill_diagonal(R, 1.0)
    return CorrelationDecomposition(var, R)


@dataclass(frozen=True)
class FisherSandwich:
    lower: float
    exact: float
    upper: float
    exact_at_kl_minimizer: float


def fisher_sandwich(target: GaussianTarget) -> FisherSandwich:
    """Correlation-controlled bounds on the Fisher divergence of the marginal-matching Gaussian.

    With ``q = N(mu, D)``, ``D = diag(Sigma)``, the divergence equals
    ``|D^{-1/2} (R^{-1} - I)|_F^2`` and is therefore squeezed between
    ``|R^{-1} - I|_F^2 / max(D)`` and ``|R^{-1} - I|_F^2 / min(D)``.  ``exact``
    is computed from the closed-form Gaussian divergence, independently of the
    two ends.  ``exact_at_kl_minimizer`` is the divergence at the mean-field
    KL minimizer, which the sandwich does not bound in general.
    """
    dec = correlation_decomposition(target)
    chol_r = np.linalg.cholesky(dec.R)
    r_inv = cho_solve((chol_r, True), np.eye(target.dim))
    gap = float(np.sum((r_inv - np.eye(target.dim)) ** 2))
    return FisherSandwich(
        lower=gap / float(dec.variances.max()),
        exact=fisher_gaussian(marginal_params(target), target),
        upper=gap / float(dec.variances.min()),
        exact_at_kl_minimizer=fisher_gaussian(kl_minimizer_meanfield(target), target),
    )
