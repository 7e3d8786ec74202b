"""
Isotropic variogram models (exponential and Matérn with nugget), the
method-of-moments empirical variogram, and weighted least-squares fitting.

Parameterisation::

    gamma(h) = nugget + partial_sill * (1 - rho(h)),   h > 0
    rho(h)   = exp(-h / range)                                   exponential
    rho(h)   = (h / range)**kappa K_kappa(h / range) / (2**(kappa-1) Gamma(kappa))   Matérn

``gamma(0) = 0``. The covariance between distinct observations at lag h is
``partial_sill * rho(h)`` (also for coincident sites) and the variance of a
single observation is ``nugget + partial_sill``.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
from scipy.optimize import brentq, least_squares
from scipy.special import gammaln, kv

from .spatial_core import ObservationSet, pairwise_distances

FAMILIES = ("exponential", "matern")
DEFAULT_N_BINS = 15
PRACTICAL_CORRELATION = 0.05


class ConvergenceWarning(UserWarning):
    pass


@dataclass(frozen=True)
class VariogramModel:
    family: str = "matern"
    nugget: float = 1.0
    partial_sill: float = 4.0
    range: float = 2.5
    smoothness: float = 1.0

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown variogram family {self.family!r}")
        if not self.nugget > 0:
            raise ValueError("nugget must be positive")
        if not self.partial_sill >= 0:
            raise ValueError("partial sill must be non-negative")
        if not self.range > 0:
            raise ValueError("range must be positive")
        if not self.smoothness > 0:
            raise ValueError("smoothness must be positive")

    @property
    def sill(self) -> float:
        return self.nugget + self.partial_sill

    @property
    def ratio(self) -> float:
        """Partial sill over nugget."""
        return self.partial_sill / self.nugget

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> VariogramModel:
        keys = ("family", "nugget", "partial_sill", "range", "smoothness")
        return cls(**{k: d[k] for k in keys if k in d})

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")

    @classmethod
    def load(cls, path) -> VariogramModel:
        return cls.from_dict(json.loads(Path(path).read_text()))


def correlation(model: VariogramModel, h):
    """Correlation of the spatially structured part at lag ``h`` (rho(0) = 1)."""
    h = np.asarray(h, dtype=float)
    x = h / model.range
    if model.family == "exponential":
        return np.exp(-x)
    nu = model.smoothness
    with np.errstate(invalid="ignore", over="ignore", under="ignore"):
        log_norm = (1.0 - nu) * np.log(2.0) - gammaln(nu)
        xs = np.where(x > 0, x, 1.0)
        rho = np.exp(log_norm + nu * np.log(xs)) * kv(nu, xs)
    rho = np.where(x < 1e-12, 1.0, rho)
    # kv underflows to 0 far out; clip tiny negative round-off
    return np.clip(np.nan_to_num(rho, nan=0.0), 0.0, 1.0)


def _check_lag(h):
    h = np.asarray(h, dtype=float)
    if np.any(h < 0):
        raise ValueError("lag distances must be non-negative")
    return h


def evaluate(model: VariogramModel, h):
    """Semivariance at lag ``h`` (scalar or array); zero at ``h == 0``."""
    h = _check_lag(h)
    g = model.nugget + model.partial_sill * (1.0 - correlation(model, h))
    g = np.where(h == 0, 0.0, g)
    return float(g) if g.ndim == 0 else g


def to_covariance(model: VariogramModel, h):
    """Covariance at lag ``h``: the sill at ``h == 0``, sill minus gamma elsewhere."""
    h = _check_lag(h)
    c = np.where(h == 0, model.sill, model.partial_sill * correlation(model, h))
    return float(c) if c.ndim == 0 else c


def covariance_matrix(model: VariogramModel, coords) -> np.ndarray:
    """Covariance matrix of observations at ``coords``.

    The diagonal is the sill; off-diagonal entries are ``partial_sill * rho``
    even for coincident sites, so the nugget acts as independent noise.
    """
    d = pairwise_distances(coords)
    cov = model.partial_sill * correlation(model, d)
    cov[np.diag_indices_from(cov)] = model.sill
    return cov


def practical_range(model: VariogramModel, level: float = PRACTICAL_CORRELATION) -> float:
    """Lag at which the structured correlation falls to ``level``."""
    if model.family == "exponential":
        return -model.range * np.log(level)
    f = lambda h: float(correlation(model, h)) - level
    hi = model.range
    while f(hi) > 0:
        hi *= 2.0
    return brentq(f, 0.0, hi, xtol=1e-12 * model.range, rtol=1e-14)


@dataclass(frozen=True)
class EmpiricalVariogram:
    bin_edges: np.ndarray
    semivariances: np.ndarray
    pair_counts: np.ndarray
    mean_lags: np.ndarray | None = None

    @property
    def bin_centres(self) -> np.ndarray:
        e = np.asarray(self.bin_edges)
        return 0.5 * (e[:-1] + e[1:])

    @property
    def lags(self) -> np.ndarray:
        """Mean pair distance per bin, or the bin centre where unavailable."""
        if self.mean_lags is None:
            return self.bin_centres
        return np.where(self.pair_counts > 0, self.mean_lags, self.bin_centres)

    @property
    def occupied(self) -> np.ndarray:
        return np.asarray(self.pair_counts) > 0

    @classmethod
    def from_points(cls, lags, semivariances, pair_counts=None):
        """Build from lag/semivariance pairs; bins are placed around ``lags``."""
        lags = np.asarray(lags, dtype=float)
        mids = 0.5 * (lags[1:] + lags[:-1])
        edges = np.concatenate([[max(0.0, 2 * lags[0] - mids[0]) if len(lags) > 1 else 0.0],
                                mids, [2 * lags[-1] - mids[-1] if len(lags) > 1 else 2 * lags[0]]])
        counts = np.ones(len(lags), int) if pair_counts is None else np.asarray(pair_counts)
        return cls(edges, np.asarray(semivariances, float), counts, lags)


def empirical_variogram(residuals, n_bins: int = DEFAULT_N_BINS,
                        max_dist: float | None = None, coords=None) -> EmpiricalVariogram:
    """Matheron estimator: half the mean squared difference per distance bin.

    ``residuals`` is an ObservationSet (or a value array together with
    ``coords``). ``max_dist`` defaults to half the largest pairwise
    distance. Bins are ``[lo, hi)`` except the last, which includes
    ``max_dist``. Bins with no pairs carry a zero count and zero
    semivariance.
    """
    if n_bins < 1:
        raise ValueError("n_bins must be at least 1")
    if isinstance(residuals, ObservationSet):
        coords, e = residuals.coords, residuals.values
    else:
        e = np.asarray(residuals, dtype=float)
    if len(e) < 2:
        raise ValueError("need at least two observations")
    d = pairwise_distances(coords)
    iu = np.triu_indices(len(e), k=1)
    dist = d[iu]
    sq = 0.5 * (e[iu[0]] - e[iu[1]]) ** 2
    if max_dist is None:
        max_dist = 0.5 * dist.max()
    if not max_dist > 0:
        raise ValueError("max_dist must be positive")
    edges = np.linspace(0.0, max_dist, n_bins + 1)
    keep = dist <= max_dist
    idx = np.clip(np.searchsorted(edges, dist[keep], side="right") - 1, 0, n_bins - 1)
    counts = np.bincount(idx, minlength=n_bins)
    sums = np.bincount(idx, weights=sq[keep], minlength=n_bins)
    lag_sums = np.bincount(idx, weights=dist[keep], minlength=n_bins)
    with np.errstate(invalid="ignore", divide="ignore"):
        gam = np.where(counts > 0, sums / np.maximum(counts, 1), 0.0)
        lags = np.where(counts > 0, lag_sums / np.maximum(counts, 1), 0.5 * (edges[1:] + edges[:-1]))
    return EmpiricalVariogram(edges, gam, counts, lags)


def fit(empirical: EmpiricalVariogram, family: str = "matern",
        smoothness: float = 1.0, initial: VariogramModel | None = None,
        max_nfev: int = 2000) -> VariogramModel:
    """Fit nugget, partial sill and range to an empirical variogram.

    Minimises the Cressie criterion ``sum N_h (gamma_hat / gamma - 1)**2``
    over log-parameters with a bounded trust-region solver, the smoothness
    held at ``smoothness``. The range is bounded so that the practical
    range does not exceed the largest lag in ``empirical``. Several starts are tried (``initial`` first) and
    the lowest criterion is kept. A ``ConvergenceWarning`` is issued when no
    start converged; the best model found is still returned.
    """
    occ = empirical.occupied
    if occ.sum() < 3:
        raise ValueError(f"need at least 3 occupied bins, got {int(occ.sum())}")
    h = empirical.lags[occ]
    g = np.asarray(empirical.semivariances, float)[occ]
    n_h = np.asarray(empirical.pair_counts, float)[occ]
    if not np.any(g > 0):
        raise ValueError("empirical variogram is identically zero")

    sill_guess = float(np.average(g, weights=n_h))
    floor = 1e-8 * max(sill_guess, g.max())
    ceil = 10.0 * g.max()
    h_max = float(h.max())
    lo = np.log([floor, floor, 1e-3 * h_max])
    # practical range capped at the largest lag analysed
    unit = practical_range(VariogramModel(family, 1.0, 1.0, 1.0, smoothness))
    hi = np.log([ceil, ceil, h_max / unit])
    w = np.sqrt(n_h)

    def resid(p):
        tau2, sig2, phi = np.exp(p)
        m = VariogramModel(family, tau2, sig2, phi, smoothness)
        return w * (g / evaluate(m, h) - 1.0)

    starts = []
    if initial is not None:
        starts.append((initial.nugget, initial.partial_sill, initial.range))
    g_lo = float(g[np.argmin(h)])
    g_hi = float(np.max(g))
    for frac in (0.1, 0.2):
        starts.append((max(0.5 * g_lo, floor * 10), max(g_hi - 0.5 * g_lo, floor * 10),
                       frac * h_max))
    best, converged = None, False
    for s in starts:
        p0 = np.clip(np.log(np.maximum(s, 1e-300)), lo + 1e-9, hi - 1e-9)
        r = least_squares(resid, p0, bounds=(lo, hi), method="trf",
                          xtol=1e-14, ftol=1e-14, gtol=1e-14, max_nfev=max_nfev)
        if best is None or r.cost < best.cost:
            best = r
        converged |= r.status > 0
    if not converged:
        warnings.warn("variogram fit did not converge; returning best-so-far",
                      ConvergenceWarning, stacklevel=2)
    tau2, sig2, phi = np.exp(best.x)
    return VariogramModel(family, float(tau2), float(sig2), float(phi), smoothness)


def fit_residuals(residuals: ObservationSet, family: str = "matern",
                  smoothness: float = 1.0, n_bins: int = DEFAULT_N_BINS,
                  max_dist: float | None = None,
                  initial: VariogramModel | None = None):
    """Empirical variogram of ``residuals`` and the model fitted to it."""
    emp = empirical_variogram(residuals, n_bins, max_dist)
    return fit(emp, family, smoothness, initial), emp


def write_empirical_csv(emp: EmpiricalVariogram, path) -> None:
    lines = ["bin_lo,bin_hi,lag,semivariance,pair_count"]
    for lo_, hi_, lag, gam, n in zip(emp.bin_edges[:-1], emp.bin_edges[1:], emp.lags,
                                     emp.semivariances, emp.pair_counts):
        lines.append(f"{lo_!r},{hi_!r},{float(lag)!r},{float(gam)!r},{int(n)}")
    Path(path).write_text("\n".join(lines) + "\n")
