"""
Cost functions and mean estimators.

Unweighted and weighted mean square error, the independent-Gaussian negative
log-likelihood they are proportional to, and three estimators of a constant
process mean: the (weighted) least-squares mean and the full spatial
maximum-likelihood mean.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve
from scipy.optimize import minimize

from .spatial_core import ObservationSet, pairwise_distances
from .variogram import VariogramModel, correlation


@dataclass(frozen=True)
class CostReport:
    value: float
    per_point_contributions: np.ndarray
    weights_used: np.ndarray


def _pair(y, y_hat):
    y = np.asarray(y, dtype=float)
    y_hat = np.asarray(y_hat, dtype=float)
    if y.shape != y_hat.shape:
        raise ValueError(f"length mismatch: {y.shape} vs {y_hat.shape}")
    return y, y_hat


def _weights(w, n):
    w = np.ones(n) if w is None else np.asarray(w, dtype=float)
    if w.shape != (n,):
        raise ValueError(f"length mismatch: {n} values, {w.shape} weights")
    if np.any((w < 0) | (w > 1)):
        raise ValueError("weights must lie in [0, 1]")
    return w


def wmse_report(y, y_hat, w=None) -> CostReport:
    y, y_hat = _pair(y, y_hat)
    w = _weights(w, len(y))
    contrib = w * (y_hat - y) ** 2 / len(y)
    return CostReport(float(contrib.sum()), contrib, w)


def mse(y, y_hat) -> float:
    y, y_hat = _pair(y, y_hat)
    return float(np.mean((y_hat - y) ** 2))


def wmse(y, y_hat, w) -> float:
    """``mean(w * (y_hat - y)**2)``; the divisor is n, not the weight sum."""
    return wmse_report(y, y_hat, w).value


def mae(y, y_hat) -> float:
    y, y_hat = _pair(y, y_hat)
    return float(np.mean(np.abs(y_hat - y)))


def wmae(y, y_hat, w) -> float:
    y, y_hat = _pair(y, y_hat)
    return float(np.mean(_weights(w, len(y)) * np.abs(y_hat - y)))


def gaussian_nll(y, y_hat, sigma: float) -> float:
    """Negative log-likelihood of ``y`` as independent N(y_hat, sigma**2)."""
    if not sigma > 0:
        raise ValueError("sigma must be positive")
    y, y_hat = _pair(y, y_hat)
    z = (y_hat - y) / sigma
    return float(np.sum(0.5 * z * z + np.log(sigma * np.sqrt(2.0 * np.pi))))


def nll_from_mse(mse_value: float, n: int, sigma: float) -> float:
    return n * mse_value / (2.0 * sigma**2) + n * np.log(sigma * np.sqrt(2.0 * np.pi))


def estimate_mean(obs, mode: str = "unweighted", w=None) -> float:
    """Constant mean minimising (weighted) MSE: ``sum(w y) / sum(w)``.

    In weighted mode ``w`` defaults to ``obs.weights``.
    """
    y = obs.values if isinstance(obs, ObservationSet) else np.asarray(obs, dtype=float)
    if mode == "unweighted":
        return float(np.mean(y))
    if mode != "weighted":
        raise ValueError(f"unknown mode {mode!r}")
    if w is None:
        w = getattr(obs, "weights", None)
    if w is None:
        raise ValueError("weighted mode requires weights")
    w = np.asarray(w, dtype=float)
    if w.sum() <= 0:
        raise ValueError("all weights are zero")
    return float(w @ y / w.sum())


def gls_mean(y, cov) -> float:
    """Generalised least-squares mean ``(1' C^-1 y) / (1' C^-1 1)``."""
    y = np.asarray(y, dtype=float)
    fac = cho_factor(cov, lower=True)
    a = cho_solve(fac, np.column_stack([y, np.ones_like(y)]))
    return float(a[:, 0].sum() / a[:, 1].sum())


@dataclass(frozen=True)
class SpatialMLResult:
    mean: float
    model: VariogramModel
    neg_loglik: float
    converged: bool


def _profile_nll(y, corr, tau2, sig2):
    cov = sig2 * corr
    cov[np.diag_indices_from(cov)] = tau2 + sig2
    try:
        c, low = cho_factor(cov, lower=True)
    except LinAlgError:
        return np.inf, np.nan
    a = cho_solve((c, low), np.column_stack([y, np.ones_like(y)]))
    mu = a[:, 0].sum() / a[:, 1].sum()
    r = y - mu
    quad = r @ cho_solve((c, low), r)
    logdet = 2.0 * np.log(np.diag(c)).sum()
    return 0.5 * (logdet + quad + len(y) * np.log(2 * np.pi)), mu


def spatial_ml_mean(obs: ObservationSet, smoothness: float = 1.0, bounds=None,
                    family: str = "matern", initial: VariogramModel | None = None) -> SpatialMLResult:
    """Maximum-likelihood constant mean under a Gaussian-process model.

    Nugget, partial sill and range are estimated jointly (smoothness fixed);
    for given covariance parameters the mean is profiled out as the GLS
    estimator. ``bounds`` is ``((tau2_lo, tau2_hi), (sig2_lo, sig2_hi),
    (phi_lo, phi_hi))``; defaults scale with the sample variance and the
    site extent.
    """
    y = obs.values
    n = len(y)
    if n < 5:
        raise ValueError("spatial ML needs at least 5 observations")
    d = pairwise_distances(obs)
    var = float(np.var(y, ddof=1)) or 1.0
    diag = float(np.hypot(*np.ptp(obs.coords, axis=0))) or 1.0
    if bounds is None:
        bounds = ((1e-6, 10 * var), (1e-6, 10 * var), (0.1, max(diag, 0.2)))
    lo = np.log([b[0] for b in bounds])
    hi = np.log([b[1] for b in bounds])

    cache = {}

    def corr_for(phi):
        key = float(phi)
        if key not in cache:
            cache.clear()
            cache[key] = correlation(VariogramModel(family, 1.0, 1.0, phi, smoothness), d)
        return cache[key]

    def f(p):
        tau2, sig2, phi = np.exp(p)
        return _profile_nll(y, corr_for(phi).copy(), tau2, sig2)[0]

    starts = []
    if initial is not None:
        starts.append([initial.nugget, initial.partial_sill, initial.range])
    starts += [[0.2 * var, 0.8 * var, 0.05 * diag], [0.5 * var, 0.5 * var, 0.2 * diag]]
    best = None
    for s in starts:
        p0 = np.clip(np.log(s), lo, hi)
        r = minimize(f, p0, method="L-BFGS-B", bounds=list(zip(lo, hi)))
        if np.isfinite(r.fun) and (best is None or r.fun < best.fun):
            best = r
    if best is None:
        raise LinAlgError("covariance matrix singular at every start")
    tau2, sig2, phi = np.exp(best.x)
    nll, mu = _profile_nll(y, corr_for(phi).copy(), tau2, sig2)
    model = VariogramModel(family, float(tau2), float(sig2), float(phi), smoothness)
    return SpatialMLResult(float(mu), model, float(nll), bool(best.success))
