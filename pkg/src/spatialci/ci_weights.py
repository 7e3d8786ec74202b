"""
Conditional information of Gaussian observations and its transformation
into calibration weights.

For a target observation given a conditioning set, the conditional
information (CI) is the entropy of the target given the others. Weights are
built from the proportion of the target's variance removed by simple
kriging from the conditioning set::

    f1      = 1 - kriging_variance / sill = 1 - exp(-2 (H(target) - CI))
    f1_star = (m + 1)(k m + 1) / ((k + 1) m**2) * f1
    w       = 1 - f1_star          (clamped to [0, 1])

with ``m = partial_sill / nugget`` and ``k`` the size of the conditioning
set. Independent observations get ``w = 1``; ``k + 1`` coincident
observations get ``w = 1 / (k + 1)`` each.

All entropies are in nats.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve

from .spatial_core import ObservationSet
from .variogram import VariogramModel, covariance_matrix

LOG_2PI = np.log(2.0 * np.pi)


@dataclass(frozen=True)
class CovarianceContext:
    cov: np.ndarray
    factor: tuple
    marginal_variance: float
    ratio: float

    @classmethod
    def from_model(cls, model: VariogramModel, coords) -> CovarianceContext:
        cov = covariance_matrix(model, coords)
        try:
            factor = cho_factor(cov, lower=True)
        except LinAlgError as exc:
            raise LinAlgError(
                f"covariance matrix not positive definite "
                f"(condition number {np.linalg.cond(cov):.3g})"
            ) from exc
        return cls(cov, factor, model.sill, model.ratio)

    @property
    def n(self) -> int:
        return len(self.cov)


def _logdet(mat: np.ndarray) -> float:
    try:
        c, _ = cho_factor(mat, lower=True)
    except LinAlgError as exc:
        raise LinAlgError("singular covariance submatrix") from exc
    return 2.0 * float(np.log(np.diag(c)).sum())


def _index_list(idx, n):
    idx = [int(i) for i in idx]
    if any(i < 0 or i >= n for i in idx):
        raise IndexError(f"index out of range for {n} observations")
    if len(set(idx)) != len(idx):
        raise ValueError("duplicate indices")
    return idx


def univariate_entropy(variance: float) -> float:
    return 0.5 * (1.0 + LOG_2PI + np.log(variance))


def joint_entropy(ctx: CovarianceContext, subset) -> float:
    """Differential entropy of the observations in ``subset``."""
    subset = _index_list(subset, ctx.n)
    if not subset:
        raise ValueError("subset must be non-empty")
    k = len(subset)
    return 0.5 * k * (1.0 + LOG_2PI) + 0.5 * _logdet(ctx.cov[np.ix_(subset, subset)])


def conditional_information(ctx: CovarianceContext, target: int, given) -> float:
    """Entropy of ``target`` given ``given``, via the log-determinant ratio."""
    given = _index_list(given, ctx.n)
    if target in given:
        raise ValueError("target must not be in the conditioning set")
    if not given:
        return univariate_entropy(ctx.cov[target, target])
    full = given + [int(target)]
    log_ratio = _logdet(ctx.cov[np.ix_(full, full)]) - _logdet(ctx.cov[np.ix_(given, given)])
    return 0.5 * (1.0 + LOG_2PI + log_ratio)


def kriging_variance(ctx: CovarianceContext, target: int, given) -> float:
    """Simple-kriging variance of ``target`` predicted from ``given``."""
    given = _index_list(given, ctx.n)
    if target in given:
        raise ValueError("target must not be in the conditioning set")
    var = ctx.cov[target, target]
    if not given:
        return float(var)
    c = ctx.cov[given, target]
    try:
        fac = cho_factor(ctx.cov[np.ix_(given, given)], lower=True)
    except LinAlgError as exc:
        raise LinAlgError("singular conditioning covariance") from exc
    return float(var - c @ cho_solve(fac, c))


def variance_reduction_f1(ctx: CovarianceContext, target: int, given) -> float:
    """Proportion of the target's variance removed by kriging from ``given``."""
    return 1.0 - kriging_variance(ctx, target, given) / ctx.cov[target, target]


def f1_from_entropy(ctx: CovarianceContext, target: int, given) -> float:
    """``1 - exp(-2 (H(target) - CI))`` computed from determinants; test oracle."""
    h1 = univariate_entropy(ctx.cov[target, target])
    ci = conditional_information(ctx, target, given)
    return float(-np.expm1(-2.0 * (h1 - ci)))


def transform_f1(f1, k: int, m: float):
    """Rescale f1 so that k + 1 coincident points get weight 1 / (k + 1)."""
    return (m + 1.0) * (k * m + 1.0) / ((k + 1.0) * m * m) * np.asarray(f1)


@dataclass(frozen=True)
class WeightVector:
    w: np.ndarray
    f1: np.ndarray
    f1_star: np.ndarray
    ci: np.ndarray
    kriging_variance: np.ndarray

    def __len__(self):
        return len(self.w)

    def diagnostics(self) -> list[dict]:
        return [
            {"ci": float(c), "f1": float(a), "f1_star": float(b), "w": float(w)}
            for c, a, b, w in zip(self.ci, self.f1, self.f1_star, self.w)
        ]

    def save_diagnostics(self, path) -> None:
        Path(path).write_text(json.dumps(self.diagnostics(), indent=2) + "\n")


def compute_weights(residuals, model: VariogramModel) -> WeightVector:
    """CI weights for every observation given all the others.

    ``residuals`` is an ObservationSet or an ``(n, 2)`` coordinate array;
    only the sites matter. Each leave-one-out kriging variance comes from
    the diagonal of the inverse covariance matrix, ``1 / (inv(cov))_ii``,
    so one factorisation serves all n targets. ``k = n - 1`` in the
    rescaling step.
    """
    coords = residuals.coords if isinstance(residuals, ObservationSet) else np.asarray(residuals)
    n = len(coords)
    if n < 2:
        raise ValueError("need at least two observations")
    sill = model.sill
    h1 = univariate_entropy(sill)
    if model.partial_sill == 0:
        warnings.warn("partial sill is zero: no spatial dependence, all weights 1",
                      stacklevel=2)
        ones = np.ones(n)
        return WeightVector(ones, np.zeros(n), np.zeros(n), np.full(n, h1), np.full(n, sill))
    ctx = CovarianceContext.from_model(model, coords)
    prec_diag = np.diag(cho_solve(ctx.factor, np.eye(n)))
    kvar = 1.0 / prec_diag
    f1 = np.clip(1.0 - kvar / sill, 0.0, 1.0)
    ci = 0.5 * (1.0 + LOG_2PI + np.log(kvar))
    f1s = transform_f1(f1, n - 1, ctx.ratio)
    w = np.clip(1.0 - f1s, 0.0, 1.0)
    return WeightVector(w, f1, f1s, ci, kvar)
