"""Strongly log-concave Gaussian targets and their regularity constants."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Protocol

import numpy as np
from scipy.linalg import cho_solve

from . import rng
from .family import LOG_2PI, ScaleKind, VarParams


class Target(Protocol):
    """Whole-gradient oracle for ``log l``; ``log_lik`` is optional."""

    dim: int

    def grad_log_lik(self, z: np.ndarray) -> np.ndarray: ...


@dataclass(frozen=True)
class RegularityConstants:
    mu_strong: float
    L_smooth: float
    kappa: float
    c_lsi: float


@dataclass(frozen=True, eq=False)
class GaussianTarget:
    """``N(mu, Sigma)`` with ``Sigma = chol chol^T``.

    ``log_lik`` is the normalized log-density plus ``offset``; the offset
    leaves every gradient unchanged.
    """

    mu: np.ndarray
    chol: np.ndarray
    offset: float = 0.0

    def __post_init__(self):
        mu = np.array(self.mu, dtype=float).reshape(-1)
        chol = np.tril(np.array(self.chol, dtype=float))
        d = mu.shape[0]
        if chol.shape != (d, d):
            raise ValueError(f"Cholesky factor must be ({d}, {d}), got {chol.shape}")
        if np.any(np.diag(chol) <= 0):
            raise ValueError("Cholesky factor must have a positive diagonal")
        precision = cho_solve((chol, True), np.eye(d))
        precision = 0.5 * (precision + precision.T)
        for a in (mu, chol, precision):
            a.setflags(write=False)
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "chol", chol)
        object.__setattr__(self, "precision", precision)

    @classmethod
    def from_covariance(cls, mu, cov, offset: float = 0.0) -> "GaussianTarget":
        cov = np.asarray(cov, dtype=float)
        if not np.allclose(cov, cov.T, rtol=0, atol=1e-12 * max(1.0, np.abs(cov).max())):
            raise ValueError("covariance must be symmetric")
        return cls(mu, np.linalg.cholesky(0.5 * (cov + cov.T)), offset)

    @classmethod
    def from_spectrum(cls, dim: int, kappa: float, seed: Optional[int] = 0, mu_strong: float = 1.0, mean=None) -> "GaussianTarget":
        """Precision with eigenvalues geometrically spaced on ``[mu_strong, kappa * mu_strong]``.

        Eigenvectors come from a Haar-random rotation drawn from ``seed``;
        ``seed=None`` keeps the precision diagonal.
        """
        if kappa < 1:
            raise ValueError("kappa must be >= 1")
        if dim == 1 and kappa != 1:
            raise ValueError("a one-dimensional target has kappa = 1")
        eig = mu_strong * np.geomspace(1.0, kappa, dim)
        if seed is None:
            q = np.eye(dim)
        else:
            g = rng.normals(seed, 0, dim, dim)
            q, r = np.linalg.qr(g)
            q = q * np.sign(np.diag(r))
        cov = (q / eig) @ q.T
        mean = np.zeros(dim) if mean is None else mean
        return cls.from_covariance(mean, 0.5 * (cov + cov.T))

    @classmethod
    def equicorrelated(cls, dim: int, rho: float, variance: float = 1.0, mean=None) -> "GaussianTarget":
        if not (-1.0 / max(dim - 1, 1) < rho < 1.0):
            raise ValueError(f"rho={rho} does not give a positive definite matrix for d={dim}")
        cov = variance * ((1 - rho) * np.eye(dim) + rho * np.ones((dim, dim)))
        return cls.from_covariance(np.zeros(dim) if mean is None else mean, cov)

    @property
    def dim(self) -> int:
        return self.mu.shape[0]

    @property
    def covariance(self) -> np.ndarray:
        return self.chol @ self.chol.T

    def grad_log_lik(self, z) -> np.ndarray:
        return -(np.asarray(z, dtype=float) - self.mu) @ self.precision

    def log_lik(self, z) -> np.ndarray | float:
        r = np.asarray(z, dtype=float) - self.mu
        quad = np.einsum("...i,ij,...j->...", r, self.precision, r)
        logdet = 2.0 * np.sum(np.log(np.diag(self.chol)))
        out = -0.5 * quad - 0.5 * (self.dim * LOG_2PI + logdet) + self.offset
        return float(out) if np.ndim(out) == 0 else out


def regularity(target: GaussianTarget) -> RegularityConstants:
    eig = np.linalg.eigvalsh(target.precision)
    mu_strong, L = float(eig[0]), float(eig[-1])
    return RegularityConstants(mu_strong, L, L / mu_strong, 1.0 / mu_strong)


def worst_case_instance(dim: int, L: float, offset: float = 0.0) -> tuple[GaussianTarget, VarParams]:
    """Target ``N(0, diag(1/L, L, ..., L))`` and the isotropic scale ``L^{-1/2} I``.

    ``offset`` shifts the variational mean away from the mode along all
    coordinates but the first (which stays at the mode).
    """
    if L < 1:
        raise ValueError("worst-case instance requires L >= 1")
    if dim < 2:
        raise ValueError("worst-case instance requires d >= 2")
    var = np.full(dim, float(L))
    var[0] = 1.0 / L
    target = GaussianTarget(np.zeros(dim), np.diag(np.sqrt(var)))
    m = np.full(dim, float(offset))
    m[0] = 0.0
    params = VarParams(m, np.eye(dim) / math.sqrt(L), ScaleKind.FULL_RANK)
    return target, params


def optimal_params(target: GaussianTarget, kind: ScaleKind) -> VarParams:
    """Minimizer of ``KL(q || target)`` over the family.

    Full-rank: the exact fit ``(mu, chol(Sigma))``.  Mean-field: ``m = mu``
    and ``C_ii = (Sigma^{-1})_ii^{-1/2}``, the root of the first-order
    condition ``C^{-2} = diag(Sigma^{-1})``.
    """
    kind = ScaleKind(kind)
    if kind is ScaleKind.FULL_RANK:
        return VarParams(target.mu, target.chol, kind)
    return VarParams(target.mu, 1.0 / np.sqrt(np.diag(target.precision)), kind)


def marginal_params(target: GaussianTarget) -> VarParams:
    """Mean-field Gaussian matching the target marginals, ``(mu, diag(Sigma)^{1/2})``."""
    return VarParams(target.mu, np.sqrt(np.diag(target.covariance)), ScaleKind.MEAN_FIELD)
