"""Feasible parameter set with a diagonal floor, its projection, and the flat metric."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .family import ScaleKind, VarParams


@dataclass(frozen=True)
class DomainSpec:
    """Parameters whose scale diagonal is at least ``1 / sqrt(S)``.

    On this set the entropy is ``S``-smooth.
    """

    S: float
    kind: ScaleKind = ScaleKind.FULL_RANK

    def __post_init__(self):
        if not (self.S > 0 and math.isfinite(self.S)):
            raise ValueError(f"S must be positive and finite, got {self.S}")
        object.__setattr__(self, "kind", ScaleKind(self.kind))

    @property
    def threshold(self) -> float:
        return 1.0 / math.sqrt(self.S)


def project(params: VarParams, dom: DomainSpec) -> VarParams:
    """Euclidean projection: clamp each diagonal scale entry up to ``1 / sqrt(S)``.

    Only the ``d`` diagonal entries are touched; the mean and off-diagonal
    entries are returned bit-identical.
    """
    if params.kind is not dom.kind:
        raise ValueError(f"parameter kind {params.kind.value} does not match domain kind {dom.kind.value}")
    tau = dom.threshold
    if params.kind is ScaleKind.MEAN_FIELD:
        return params.replace(scale=np.maximum(params.scale, tau))
    scale = np.array(params.scale)
    idx = np.arange(params.dim)
    scale[idx, idx] = np.maximum(scale[idx, idx], tau)
    return params.replace(scale=scale)


def in_domain(params: VarParams, dom: DomainSpec) -> bool:
    return bool(np.all(params.diag >= dom.threshold))


def param_distance_sq(a: VarParams, b: VarParams) -> float:
    if a.kind is not b.kind or a.dim != b.dim:
        raise ValueError("parameters must share kind and dimension")
    return float(np.sum((a.mean - b.mean) ** 2) + np.sum((a.scale - b.scale) ** 2))


def param_distance(a: VarParams, b: VarParams) -> float:
    """Euclidean distance between the flat parameter vectors."""
    return math.sqrt(param_distance_sq(a, b))
