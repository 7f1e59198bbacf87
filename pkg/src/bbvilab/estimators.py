"""Reparameterization gradient estimators and their Monte Carlo measurement.

Sign convention: ``grad_cfe`` and ``grad_stl`` estimate the gradient of the
ELBO (the ascent direction), i.e. ``-grad F`` for the negative ELBO ``F``.
``analytic_grad_gaussian`` returns ``grad F`` itself.  The optimizer steps
along the estimators, which is descent on ``F``.
"""

from __future__ import annotations

import enum
import math
from concurrent.futures import Executor
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.linalg import solve_triangular

from .family import (
    GradientSample,
    ScaleKind,
    VarParams,
    entropy,
    reparameterize,
    sample,
)
from .targets import GaussianTarget, Target

CHUNK = 8192


class EstimatorKind(str, enum.Enum):
    CFE = "cfe"
    STL = "stl"


@dataclass(frozen=True)
class MCEstimate:
    mean: float
    std_err: float

    def __iter__(self):
        yield self.mean
        yield self.std_err


def gradient_arrays(kind: EstimatorKind, target: Target, mean: np.ndarray, scale: np.ndarray,
                    family: ScaleKind, u: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Estimator blocks ``(g_mean, g_scale)`` from raw parameter arrays.

    ``u`` may be one draw ``(d,)`` or a batch ``(..., d)``; ``mean`` and
    ``scale`` broadcast against its leading axes, so stacked parameters
    ``(S, 1, d)`` / ``(S, 1, d, d)`` with draws ``(S, b, d)`` evaluate ``S``
    independent runs at once.  For STL the frozen score at ``z = C u + m``
    equals ``-C^{-T} u``, so no second solve is needed.
    """
    full = family is ScaleKind.FULL_RANK
    if full:
        z = (scale @ u[..., None])[..., 0] + mean
    else:
        z = u * scale + mean
    g = target.grad_log_lik(z)
    if kind is EstimatorKind.STL:
        if not full:
            g = g + u / scale
        elif scale.ndim == 2:
            g = g + solve_triangular(scale, u.T, lower=True, trans="T").T
        else:
            g = g + (np.swapaxes(np.linalg.inv(scale), -1, -2) @ u[..., None])[..., 0]
    if full:
        g_scale = np.tril(g[..., :, None] * u[..., None, :])
    else:
        g_scale = g * u
    if kind is EstimatorKind.CFE:
        if full:
            idx = np.arange(scale.shape[-1])
            g_scale[..., idx, idx] += 1.0 / np.diagonal(scale, axis1=-2, axis2=-1)
        else:
            g_scale = g_scale + 1.0 / scale
    return g, g_scale


def grad_cfe(target: Target, params: VarParams, u) -> GradientSample:
    """Closed-form-entropy estimator for one draw ``u`` (or a batch ``(n, d)``).

    With ``z = C u + m`` and ``g = grad log l(z)``: mean block ``g``, scale
    block ``tril(g u^T)`` (``g * u`` for mean-field) plus ``1 / C_ii`` on the
    diagonal.
    """
    u = np.asarray(u, dtype=float)
    reparameterize(params, u)
    g_mean, g_scale = gradient_arrays(EstimatorKind.CFE, target, params.mean, params.scale, params.kind, u)
    return GradientSample(g_mean, g_scale, params.kind)


def grad_stl(target: Target, params: VarParams, u) -> GradientSample:
    """Sticking-the-landing estimator.

    The variational score is evaluated at the current parameters but not
    differentiated through them, so only the path term
    ``r = grad log l(z) - score(z)`` survives, pulled back through ``z = C u + m``.
    """
    u = np.asarray(u, dtype=float)
    reparameterize(params, u)
    g_mean, g_scale = gradient_arrays(EstimatorKind.STL, target, params.mean, params.scale, params.kind, u)
    return GradientSample(g_mean, g_scale, params.kind)


_ESTIMATORS = {EstimatorKind.CFE: grad_cfe, EstimatorKind.STL: grad_stl}


def estimate(kind: EstimatorKind, target: Target, params: VarParams, u) -> GradientSample:
    return _ESTIMATORS[EstimatorKind(kind)](target, params, u)


def _chunks(n: int, size: int = CHUNK):
    return [(s, min(size, n - s)) for s in range(0, n, size)]


def _map_chunks(fn, n: int, executor: Optional[Executor]):
    chunks = _chunks(n)
    if executor is None:
        return [fn(s, k) for s, k in chunks]
    return list(executor.map(lambda sk: fn(*sk), chunks))


def elbo_estimate(target: Target, params: VarParams, n: int, seed: int, return_std_err: bool = False):
    """Monte Carlo estimate of the negative ELBO ``-E log l(z) - H(q)``."""
    if not hasattr(target, "log_lik"):
        raise ValueError("target does not provide log_lik")
    if n < 1:
        raise ValueError("n must be >= 1")
    vals = np.concatenate(
        _map_chunks(lambda s, k: -target.log_lik(sample(params, k, seed, start=s)[1]), n, None)
    )
    value = float(np.mean(vals)) - entropy(params)
    if not return_std_err:
        return value
    se = float(np.std(vals, ddof=1) / math.sqrt(n)) if n > 1 else math.inf
    return MCEstimate(value, se)


def grad_norm_sq_draws(kind: EstimatorKind, target: Target, params: VarParams, n: int, seed: int,
                       executor: Optional[Executor] = None) -> np.ndarray:
    """Per-draw ``|g|^2`` for sample indices ``0 .. n-1``."""

    def chunk(start, k):
        u, _ = sample(params, k, seed, start=start)
        return np.atleast_1d(estimate(kind, target, params, u).norm_sq())

    return np.concatenate(_map_chunks(chunk, n, executor))


def expected_grad_norm_sq(kind: EstimatorKind, target: Target, params: VarParams, n: int, seed: int,
                          executor: Optional[Executor] = None) -> MCEstimate:
    """Monte Carlo mean and standard error of ``|g|^2``.

    Draws are reduced with numpy's pairwise summation over the full array,
    so the result does not depend on how chunks were scheduled.
    """
    if n < 2:
        raise ValueError("n must be >= 2")
    vals = grad_norm_sq_draws(kind, target, params, n, seed, executor)
    if not np.all(np.isfinite(vals)):
        raise FloatingPointError("non-finite gradient norm encountered")
    return MCEstimate(float(np.mean(vals)), float(np.std(vals, ddof=1) / math.sqrt(n)))


def mean_gradient(kind: EstimatorKind, target: Target, params: VarParams, n: int, seed: int) -> tuple[GradientSample, GradientSample]:
    """Componentwise MC mean of the estimator and its standard error."""
    s1m = s2m = s1s = s2s = 0.0
    for start, k in _chunks(n):
        u, _ = sample(params, k, seed, start=start)
        g = estimate(kind, target, params, u)
        s1m = s1m + g.g_mean.sum(axis=0)
        s2m = s2m + (g.g_mean**2).sum(axis=0)
        s1s = s1s + g.g_scale.sum(axis=0)
        s2s = s2s + (g.g_scale**2).sum(axis=0)

    def mean_se(s1, s2):
        mean = s1 / n
        var = np.maximum(s2 / n - mean**2, 0.0) * n / (n - 1)
        return mean, np.sqrt(var / n)

    mm, sm = mean_se(s1m, s2m)
    ms, ss = mean_se(s1s, s2s)
    kind_ = params.kind
    return GradientSample(mm, ms, kind_), GradientSample(sm, ss, kind_)


def analytic_grad_gaussian(target: GaussianTarget, params: VarParams) -> GradientSample:
    """Exact ``grad F`` (``F = KL(q || target)``) on the stored entries."""
    P = target.precision
    g_mean = P @ (params.mean - target.mu)
    if params.kind is ScaleKind.FULL_RANK:
        g_scale = np.tril(P @ params.scale) - np.diag(1.0 / np.diag(params.scale))
    else:
        g_scale = np.diag(P) * params.scale - 1.0 / params.scale
    return GradientSample(g_mean, g_scale, params.kind)
