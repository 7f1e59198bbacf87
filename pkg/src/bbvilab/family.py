"""Location-scale Gaussian variational family.

A member is ``q = law(C u + m)`` with ``u`` drawn from a standardized base
distribution.  The scale ``C`` is either a lower-triangular Cholesky-style
factor (full-rank) or a positive diagonal (mean-field).  Mean-field scales are
stored as their diagonal vector; full-rank scales as a dense ``(d, d)`` array
whose strict upper triangle is kept at zero, so Frobenius norms of the dense
array equal norms over the stored entries.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import solve_triangular

from . import rng

LOG_2PI = math.log(2.0 * math.pi)


class ScaleKind(str, enum.Enum):
    FULL_RANK = "full-rank"
    MEAN_FIELD = "mean-field"


@dataclass(frozen=True)
class BaseDistribution:
    """Standardized, symmetric base law of the reparameterization.

    ``kurtosis`` is carried explicitly so bound formulas never assume the
    Gaussian value.
    """

    name: str = "standard-gaussian"
    kurtosis: float = 3.0

    def entropy_constant(self, dim: int) -> float:
        if self.name != "standard-gaussian":
            raise NotImplementedError(f"no entropy constant for base {self.name!r}")
        return 0.5 * dim * (1.0 + LOG_2PI)

    def draw(self, seed: int, start: int, n: int, dim: int) -> np.ndarray:
        if self.name != "standard-gaussian":
            raise NotImplementedError(f"no sampler for base {self.name!r}")
        return rng.normals(seed, start, n, dim)


STANDARD_GAUSSIAN = BaseDistribution()


@dataclass(frozen=True, eq=False)
class VarParams:
    """Variational parameter ``(m, C)``.

    Parameters
    ----------
    mean : array_like, shape (d,)
    scale : array_like
        ``(d, d)`` lower-triangular factor for full-rank, ``(d,)`` diagonal
        for mean-field.  Entries above the diagonal are dropped.
    kind : ScaleKind
    """

    mean: np.ndarray
    scale: np.ndarray
    kind: ScaleKind = ScaleKind.FULL_RANK
    base: BaseDistribution = field(default=STANDARD_GAUSSIAN)

    def __post_init__(self):
        kind = ScaleKind(self.kind)
        mean = np.array(self.mean, dtype=float).reshape(-1)
        scale = np.array(self.scale, dtype=float)
        d = mean.shape[0]
        if kind is ScaleKind.FULL_RANK:
            if scale.shape != (d, d):
                raise ValueError(f"full-rank scale must be ({d}, {d}), got {scale.shape}")
            scale = np.tril(scale)
        else:
            if scale.ndim == 2:
                scale = np.diag(scale).copy()
            if scale.shape != (d,):
                raise ValueError(f"mean-field scale must be ({d},), got {scale.shape}")
        mean.setflags(write=False)
        scale.setflags(write=False)
        object.__setattr__(self, "kind", kind)
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "scale", scale)

    @property
    def dim(self) -> int:
        return self.mean.shape[0]

    @property
    def diag(self) -> np.ndarray:
        return np.diag(self.scale) if self.kind is ScaleKind.FULL_RANK else self.scale

    def scale_matrix(self) -> np.ndarray:
        """Dense ``(d, d)`` scale matrix."""
        if self.kind is ScaleKind.FULL_RANK:
            return np.array(self.scale)
        return np.diag(self.scale)

    def covariance(self) -> np.ndarray:
        c = self.scale_matrix()
        return c @ c.T

    def flat(self) -> np.ndarray:
        """Concatenation of the mean and the stored scale entries."""
        if self.kind is ScaleKind.FULL_RANK:
            rows, cols = np.tril_indices(self.dim)
            return np.concatenate([self.mean, self.scale[rows, cols]])
        return np.concatenate([self.mean, self.scale])

    @classmethod
    def from_flat(cls, flat, dim: int, kind: ScaleKind, base: BaseDistribution = STANDARD_GAUSSIAN) -> "VarParams":
        flat = np.asarray(flat, dtype=float)
        kind = ScaleKind(kind)
        mean = flat[:dim]
        if kind is ScaleKind.FULL_RANK:
            scale = np.zeros((dim, dim))
            scale[np.tril_indices(dim)] = flat[dim:]
        else:
            scale = flat[dim:]
        return cls(mean, scale, kind, base)

    def replace(self, mean=None, scale=None) -> "VarParams":
        return VarParams(
            self.mean if mean is None else mean,
            self.scale if scale is None else scale,
            self.kind,
            self.base,
        )

    def is_valid(self) -> bool:
        return bool(np.all(self.diag > 0) and np.all(np.isfinite(self.flat())))

    def __eq__(self, other):
        if not isinstance(other, VarParams):
            return NotImplemented
        return (
            self.kind is other.kind
            and self.base == other.base
            and np.array_equal(self.mean, other.mean)
            and np.array_equal(self.scale, other.scale)
        )

    def __repr__(self):
        return f"VarParams(kind={self.kind.value}, mean={self.mean!r}, scale={self.scale!r})"


@dataclass(frozen=True)
class GradientSample:
    """A gradient split into the mean block and the stored-scale block.

    Leading axes, when present, index draws: ``g_mean`` has shape ``(..., d)``
    and ``g_scale`` has shape ``(..., d, d)`` (full-rank, lower triangle) or
    ``(..., d)`` (mean-field).
    """

    g_mean: np.ndarray
    g_scale: np.ndarray
    kind: ScaleKind

    def norm_sq(self) -> np.ndarray | float:
        scale_axes = (-2, -1) if self.kind is ScaleKind.FULL_RANK else (-1,)
        out = np.sum(self.g_mean**2, axis=-1) + np.sum(self.g_scale**2, axis=scale_axes)
        return float(out) if np.ndim(out) == 0 else out

    def mean(self) -> "GradientSample":
        """Average over the leading draw axis."""
        return GradientSample(self.g_mean.mean(axis=0), self.g_scale.mean(axis=0), self.kind)

    def flat(self) -> np.ndarray:
        """Flat vector(s) in the same layout as :meth:`VarParams.flat`."""
        if self.kind is ScaleKind.FULL_RANK:
            d = self.g_mean.shape[-1]
            rows, cols = np.tril_indices(d)
            return np.concatenate([self.g_mean, self.g_scale[..., rows, cols]], axis=-1)
        return np.concatenate([self.g_mean, self.g_scale], axis=-1)

    def __add__(self, other: "GradientSample") -> "GradientSample":
        return GradientSample(self.g_mean + other.g_mean, self.g_scale + other.g_scale, self.kind)

    def __sub__(self, other: "GradientSample") -> "GradientSample":
        return GradientSample(self.g_mean - other.g_mean, self.g_scale - other.g_scale, self.kind)

    def __neg__(self) -> "GradientSample":
        return GradientSample(-self.g_mean, -self.g_scale, self.kind)


def _check_dim(params: VarParams, x: np.ndarray, name: str) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.shape[-1:] != (params.dim,):
        raise ValueError(f"{name} has trailing dimension {x.shape[-1:]}, expected ({params.dim},)")
    return x


def reparameterize(params: VarParams, u) -> np.ndarray:
    """Map base draws ``u`` of shape ``(..., d)`` to ``C u + m``."""
    u = _check_dim(params, u, "u")
    if params.kind is ScaleKind.FULL_RANK:
        return u @ params.scale.T + params.mean
    return u * params.scale + params.mean


def sample(params: VarParams, n: int, seed: int, start: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """Draw ``n`` pairs ``(u, z)`` for sample indices ``start .. start + n - 1``.

    Returns two ``(n, d)`` arrays.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    u = params.base.draw(seed, start, n, params.dim)
    return u, reparameterize(params, u)


def _whiten(params: VarParams, z: np.ndarray) -> np.ndarray:
    """Solve ``C w = z - m`` for each row of ``z``."""
    if np.any(params.diag <= 0):
        raise ValueError("scale has non-positive diagonal entries")
    r = z - params.mean
    if params.kind is ScaleKind.MEAN_FIELD:
        return r / params.scale
    flat = r.reshape(-1, params.dim).T
    return solve_triangular(params.scale, flat, lower=True).T.reshape(r.shape)


def log_density(params: VarParams, z) -> np.ndarray | float:
    """Log-density of ``N(m, C C^T)`` at ``z`` (shape ``(..., d)``)."""
    z = _check_dim(params, z, "z")
    w = _whiten(params, z)
    d = params.dim
    out = -0.5 * np.sum(w**2, axis=-1) - 0.5 * d * LOG_2PI - np.sum(np.log(params.diag))
    return float(out) if np.ndim(out) == 0 else out


def score(params: VarParams, z) -> np.ndarray:
    """``grad_z log q(z) = -C^{-T} C^{-1} (z - m)``, two triangular solves."""
    z = _check_dim(params, z, "z")
    w = _whiten(params, z)
    if params.kind is ScaleKind.MEAN_FIELD:
        return -w / params.scale
    flat = w.reshape(-1, params.dim).T
    return -solve_triangular(params.scale, flat, lower=True, trans="T").T.reshape(w.shape)


def entropy(params: VarParams) -> float:
    return float(np.sum(np.log(params.diag)) + params.base.entropy_constant(params.dim))


def entropy_grad(params: VarParams) -> GradientSample:
    """Gradient of the entropy: zero mean block, ``1 / C_ii`` on the diagonal."""
    inv = 1.0 / params.diag
    g_scale = np.diag(inv) if params.kind is ScaleKind.FULL_RANK else inv
    return GradientSample(np.zeros(params.dim), g_scale, params.kind)


def j_factor(u, kind: ScaleKind) -> np.ndarray | float:
    """Jacobian factor relating parameter-gradient norms to z-gradient norms.

    ``1 + |u|^2`` for full-rank and ``1 + sqrt(sum u_i^4)`` for mean-field.
    """
    u = np.asarray(u, dtype=float)
    if ScaleKind(kind) is ScaleKind.FULL_RANK:
        out = 1.0 + np.sum(u**2, axis=-1)
    else:
        out = 1.0 + np.sqrt(np.sum(u**4, axis=-1))
    return float(out) if np.ndim(out) == 0 else out


def chain_to_params(grad_z: np.ndarray, u: np.ndarray, kind: ScaleKind) -> GradientSample:
    """Pull a z-space gradient back through ``z = C u + m`` onto the stored entries.

    The mean block is ``grad_z``; the scale block is ``tril(grad_z u^T)`` for
    full-rank and ``grad_z * u`` for mean-field.
    """
    if ScaleKind(kind) is ScaleKind.FULL_RANK:
        g_scale = np.tril(grad_z[..., :, None] * u[..., None, :])
    else:
        g_scale = grad_z * u
    return GradientSample(np.array(grad_z), g_scale, ScaleKind(kind))
