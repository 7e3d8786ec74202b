"""
Iteratively reweighted calibration of forward models.

A forward model maps a parameter vector and site coordinates to predicted
values. Calibration minimises (weighted) MSE with a bounded global search
(differential evolution) followed by a Nelder-Mead polish. The reweighting
loop is:

1. start with all weights equal to one and fit the model;
2. fit a variogram to the residuals of the current fit;
3. compute CI weights from that variogram;
4. stop if the weights moved less than the threshold, otherwise refit with
   the new weights and go back to 2.
"""

from __future__ import annotations

import json
import logging
import os
import shlex
import subprocess
import tempfile
import warnings
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy.optimize import differential_evolution, minimize

from .ci_weights import compute_weights
from .spatial_core import ObservationSet
from .variogram import ConvergenceWarning, VariogramModel, fit_residuals

log = logging.getLogger(__name__)

PLUME_SOURCE = (25.0, 25.0)


class ForwardModel:
    """Base class: subclasses set ``name``, ``param_names``, ``bounds`` and
    implement ``predict`` (or ``predict_many`` for vectorised evaluation)."""

    name = "model"
    param_names: tuple = ()
    bounds: np.ndarray

    def predict(self, theta, coords) -> np.ndarray:
        return self.predict_many(np.atleast_2d(theta), coords)[0]

    def predict_many(self, thetas, coords) -> np.ndarray:
        return np.stack([self.predict(t, coords) for t in np.atleast_2d(thetas)])

    def check_bounds(self):
        b = np.asarray(self.bounds, dtype=float)
        if b.shape != (len(self.param_names), 2):
            raise ValueError("bounds must be one (lo, hi) pair per parameter")
        if not np.all(np.isfinite(b)) or np.any(b[:, 0] >= b[:, 1]):
            raise ValueError("bounds must be finite with lo < hi")
        return b

    def spec(self) -> dict:
        return {"name": self.name, "param_names": list(self.param_names),
                "bounds": np.asarray(self.bounds).tolist()}


class FunctionModel(ForwardModel):
    def __init__(self, name, param_names, bounds, func, vectorised=False):
        self.name = name
        self.param_names = tuple(param_names)
        self.bounds = np.asarray(bounds, dtype=float)
        self._func = func
        self._vectorised = vectorised
        self.check_bounds()

    def predict(self, theta, coords):
        if self._vectorised:
            return self._func(np.atleast_2d(theta), coords)[0]
        return np.asarray(self._func(np.asarray(theta, float), coords), dtype=float)

    def predict_many(self, thetas, coords):
        if self._vectorised:
            return self._func(np.atleast_2d(thetas), coords)
        return super().predict_many(thetas, coords)


class ConstantMean(ForwardModel):
    name = "constant_mean"
    param_names = ("mean",)

    def __init__(self, bounds=(-10.0, 10.0)):
        self.bounds = np.array([bounds], dtype=float)
        self.check_bounds()

    def predict_many(self, thetas, coords):
        thetas = np.atleast_2d(thetas)
        return np.repeat(thetas[:, :1], len(coords), axis=1)


class ToyPlume(ForwardModel):
    """Elongated Gaussian deposit from a point source.

    ``load = M / (2 pi rho^2 alpha) exp(-((x - x0 - u) / (rho alpha))^2 / 2
    - ((y - y0 - v) / rho)^2 / 2)`` with the source ``(x0, y0)`` at the
    domain centre. Integrates to ``M`` over the plane.
    """

    name = "toy_plume"
    param_names = ("mass", "offset_x", "offset_y", "spread", "elongation")
    default_bounds = ((500.0, 50000.0), (-15.0, 15.0), (-15.0, 15.0), (2.0, 20.0), (1.0, 4.0))

    def __init__(self, bounds=None, source=PLUME_SOURCE):
        self.bounds = np.asarray(bounds or self.default_bounds, dtype=float)
        self.source = tuple(source)
        self.check_bounds()

    def predict_many(self, thetas, coords):
        t = np.atleast_2d(np.asarray(thetas, dtype=float))
        mass, u, v, rho, alpha = (t[:, i:i + 1] for i in range(5))
        if np.any(mass <= 0) or np.any(rho <= 0) or np.any(alpha < 1):
            raise ValueError("toy plume needs mass > 0, spread > 0, elongation >= 1")
        xy = np.asarray(coords, dtype=float).reshape(-1, 2)
        dx = (xy[:, 0] - self.source[0] - u) / (rho * alpha)
        dy = (xy[:, 1] - self.source[1] - v) / rho
        return mass / (2 * np.pi * rho**2 * alpha) * np.exp(-0.5 * (dx * dx + dy * dy))


class ExternalModelError(RuntimeError):
    pass


class ExternalModel(ForwardModel):
    """Forward model run as an external process.

    ``command`` is a template with ``{params}``, ``{sites}`` and ``{out}``
    placeholders. Each call gets its own temporary directory holding the
    parameter file (``name=value`` lines), the sites CSV (``x_km,y_km``)
    and the output path; the command must write one predicted value per
    line, in site order.
    """

    def __init__(self, command, param_names, bounds, name="external", timeout=None, cwd=None):
        self.command = command
        self.name = name
        self.param_names = tuple(param_names)
        self.bounds = np.asarray(bounds, dtype=float)
        self.timeout = timeout
        self.cwd = cwd
        self.check_bounds()

    def predict(self, theta, coords):
        theta = np.asarray(theta, dtype=float).ravel()
        if len(theta) != len(self.param_names):
            raise ValueError(f"expected {len(self.param_names)} parameters, got {len(theta)}")
        xy = np.asarray(coords, dtype=float).reshape(-1, 2)
        with tempfile.TemporaryDirectory(prefix="spatialci-") as tmp:
            paths = {k: os.path.join(tmp, f) for k, f in
                     (("params", "params.txt"), ("sites", "sites.csv"), ("out", "out.csv"))}
            Path(paths["params"]).write_text(
                "".join(f"{k}={float(v)!r}\n" for k, v in zip(self.param_names, theta)))
            Path(paths["sites"]).write_text(
                "x_km,y_km\n" + "".join(f"{x!r},{y!r}\n" for x, y in xy.tolist()))
            argv = [tok.format(**paths) for tok in shlex.split(self.command)]
            try:
                proc = subprocess.run(argv, capture_output=True, text=True,
                                      timeout=self.timeout, cwd=self.cwd)
            except (OSError, subprocess.TimeoutExpired) as exc:
                raise ExternalModelError(f"could not run {argv[0]!r}: {exc}") from exc
            if proc.returncode != 0:
                raise ExternalModelError(
                    f"command exited with status {proc.returncode}\n"
                    f"stdout:\n{proc.stdout}\nstderr:\n{proc.stderr}")
            try:
                text = Path(paths["out"]).read_text()
            except OSError as exc:
                raise ExternalModelError(
                    f"no output file written\nstdout:\n{proc.stdout}\nstderr:\n{proc.stderr}"
                ) from exc
        values = _parse_output(text, proc)
        if len(values) != len(xy):
            raise ExternalModelError(
                f"output has {len(values)} rows for {len(xy)} sites\n"
                f"stdout:\n{proc.stdout}\nstderr:\n{proc.stderr}")
        return values


def _parse_output(text, proc):
    lines = [ln.strip() for ln in text.splitlines() if ln.strip()]
    try:
        float(lines[0].split(",")[0])
    except (IndexError, ValueError):
        lines = lines[1:]  # header line
    try:
        return np.array([float(ln.split(",")[0]) for ln in lines])
    except ValueError as exc:
        raise ExternalModelError(
            f"could not parse model output: {exc}\nstdout:\n{proc.stdout}\nstderr:\n{proc.stderr}"
        ) from exc


def model_from_spec(spec: dict) -> ForwardModel:
    """Build a forward model from a JSON-style dict (``{"name": ...}``)."""
    kind = spec.get("name", spec.get("kind"))
    if kind == "constant_mean":
        return ConstantMean(tuple(spec.get("bounds", [[-10.0, 10.0]])[0]))
    if kind == "toy_plume":
        return ToyPlume(spec.get("bounds"), tuple(spec.get("source", PLUME_SOURCE)))
    if kind == "external":
        return ExternalModel(spec["command"], spec["param_names"], spec["bounds"],
                             timeout=spec.get("timeout"), cwd=spec.get("cwd"))
    raise ValueError(f"unknown forward model {kind!r}")


# ---------------------------------------------------------------- optimiser

@dataclass(frozen=True)
class OptimizeResult:
    theta: np.ndarray
    cost: float
    nfev: int
    success: bool
    message: str = ""


def minimize_bounded(f, bounds, seed=0, budget=3000, f_many=None, tol=1e-3):
    """Differential evolution over the box, then a Nelder-Mead polish inside it.

    DE uses rand/1/bin with population 15 per dimension, F = 0.8 and
    CR = 0.9; ``budget`` caps the DE evaluations (the polish gets up to
    ``200 * dim`` more). ``f_many`` evaluates a ``(dim, S)`` batch at once.
    """
    bounds = np.asarray(bounds, dtype=float)
    dim = len(bounds)
    pop = 15 * dim
    maxiter = max(1, budget // pop - 1)
    kw = dict(strategy="rand1bin", popsize=15, mutation=0.8, recombination=0.9,
              seed=seed, maxiter=maxiter, polish=False, tol=tol, init="latinhypercube")
    if f_many is not None:
        de = differential_evolution(f_many, bounds, vectorized=True, updating="deferred", **kw)
    else:
        de = differential_evolution(f, bounds, **kw)
    scale = bounds[:, 1] - bounds[:, 0]
    # polish in unit-box coordinates so the simplex is well scaled
    g = lambda z: f(bounds[:, 0] + z * scale)
    z0 = (de.x - bounds[:, 0]) / scale
    nm = minimize(g, z0, method="Nelder-Mead", bounds=[(0.0, 1.0)] * dim,
                  options={"xatol": 1e-10, "fatol": 1e-15, "maxfev": 200 * dim,
                           "initial_simplex": _simplex(z0, 0.05)})
    if nm.fun <= de.fun:
        x, fx = bounds[:, 0] + np.clip(nm.x, 0, 1) * scale, float(nm.fun)
    else:
        x, fx = de.x, float(de.fun)
    x = np.clip(x, bounds[:, 0], bounds[:, 1])
    ok = bool(de.success or nm.success)
    return OptimizeResult(x, fx, int(de.nfev + nm.nfev), ok, f"{de.message}; {nm.message}")


def _simplex(z0, step):
    dim = len(z0)
    pts = [z0.copy()]
    for i in range(dim):
        p = z0.copy()
        p[i] = p[i] + step if p[i] + step <= 1 else p[i] - step
        pts.append(p)
    return np.array(pts)


_TRANSFORMS = {
    "none": lambda v: v,
    "log10": lambda v: np.log10(np.maximum(v, 1e-30)),
}


def cost_function(model: ForwardModel, obs: ObservationSet, w=None, transform="none"):
    """Weighted-MSE objective on the transformed scale, plus a batch version."""
    tf = _TRANSFORMS[transform]
    y = tf(obs.values)
    w = np.ones(obs.n) if w is None else np.asarray(w, dtype=float)
    coords = obs.coords

    def f(theta):
        return float(np.mean(w * (tf(model.predict(theta, coords)) - y) ** 2))

    def f_many(x):
        pred = tf(model.predict_many(np.asarray(x).T, coords))
        return np.mean(w * (pred - y) ** 2, axis=1)

    return f, f_many


def optimize(model: ForwardModel, obs: ObservationSet, cost="mse", w=None, seed=0,
             budget=3000, transform="none") -> OptimizeResult:
    """Best parameters of ``model`` for ``obs`` under (weighted) MSE."""
    bounds = model.check_bounds()
    if cost == "mse":
        w = None
    elif cost != "wmse":
        raise ValueError(f"unknown cost {cost!r}")
    if w is not None:
        w = np.asarray(w, dtype=float)
        if w.shape != (obs.n,) or np.any((w < 0) | (w > 1)):
            raise ValueError("weights must be one value in [0, 1] per observation")
    f, f_many = cost_function(model, obs, w, transform)
    vectorised = type(model).predict_many is not ForwardModel.predict_many or \
        getattr(model, "_vectorised", False)
    res = minimize_bounded(f, bounds, seed=seed, budget=budget,
                           f_many=f_many if vectorised else None)
    if not res.success:
        log.warning("optimizer budget exhausted: %s", res.message)
    return res


# ------------------------------------------------------ iterative reweighting

@dataclass(frozen=True)
class CalibrationConfig:
    cost: str = "wmse"
    budget: int = 3000
    convergence_threshold: float = 0.1
    max_reweight_iterations: int = 10
    seed: int = 0
    transform: str = "none"
    family: str = "matern"
    smoothness: float = 1.0
    n_bins: int = 15
    max_dist: float | None = None

    def __post_init__(self):
        if self.cost not in ("mse", "wmse"):
            raise ValueError(f"unknown cost {self.cost!r}")
        if self.convergence_threshold < 0:
            raise ValueError("convergence threshold must be non-negative")
        if self.budget < 1:
            raise ValueError("budget must be at least 1")
        if self.max_reweight_iterations < 0:
            raise ValueError("max_reweight_iterations must be non-negative")
        if self.transform not in _TRANSFORMS:
            raise ValueError(f"unknown transform {self.transform!r}")

    @classmethod
    def from_dict(cls, d: dict) -> CalibrationConfig:
        return cls(**d)


@dataclass
class CalibrationResult:
    """Trace of a reweighted calibration.

    ``thetas[j]`` was fitted with ``weights[j]``. ``weights[0]`` is all ones;
    each later vector came from ``variograms[j]`` fitted to the residuals of
    ``thetas[j - 1]``. ``max_dw[r]`` is the change of the r-th computed
    weight vector from the one before; when the run converges the last
    computed vector is kept in ``weights``/``variograms`` without a refit.
    """

    param_names: tuple
    thetas: list = field(default_factory=list)
    costs: list = field(default_factory=list)
    weights: list = field(default_factory=list)
    variograms: list = field(default_factory=list)
    max_dw: list = field(default_factory=list)
    converged: bool = False

    @property
    def theta(self) -> np.ndarray:
        return self.thetas[-1]

    @property
    def rounds(self) -> int:
        """Number of weighted fits performed."""
        return len(self.thetas) - 1

    @property
    def unweighted_theta(self) -> np.ndarray:
        return self.thetas[0]

    def to_dict(self) -> dict:
        its = []
        for j, th in enumerate(self.thetas):
            vg = self.variograms[j]
            its.append({
                "theta": dict(zip(self.param_names, map(float, th))),
                "cost": self.costs[j],
                "weights": [float(v) for v in self.weights[j]],
                "variogram": None if vg is None else vg.to_dict(),
                "max_dw": None if j == 0 else self.max_dw[j - 1],
            })
        extra = self.weights[len(self.thetas):]
        return {
            "param_names": list(self.param_names),
            "converged": self.converged,
            "rounds": self.rounds,
            "theta": dict(zip(self.param_names, map(float, self.theta))),
            "iterations": its,
            "final_check": None if not extra else {
                "weights": [float(v) for v in extra[0]],
                "variogram": None if self.variograms[-1] is None else self.variograms[-1].to_dict(),
                "max_dw": self.max_dw[-1],
            },
            "max_dw": list(self.max_dw),
        }

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")


def _residual_weights(model, obs, theta, config, initial):
    tf = _TRANSFORMS[config.transform]
    resid = tf(model.predict(theta, obs.coords)) - tf(obs.values)
    with warnings.catch_warnings():
        warnings.simplefilter("error", ConvergenceWarning)
        try:
            vg, _ = fit_residuals(ObservationSet(obs.coords, resid), config.family,
                                  config.smoothness, config.n_bins, config.max_dist, initial)
        except (ValueError, ConvergenceWarning) as exc:
            warnings.warn(f"variogram fit failed ({exc}); using equal weights", stacklevel=3)
            return np.ones(obs.n), None
    if vg.partial_sill == 0:
        return np.ones(obs.n), vg
    return compute_weights(obs.coords, vg).w, vg


def calibrate_iterative(model: ForwardModel, obs: ObservationSet,
                        config: CalibrationConfig = CalibrationConfig()) -> CalibrationResult:
    """Unweighted fit followed by CI-reweighted refits until weights settle."""
    res = CalibrationResult(tuple(model.param_names))
    w = np.ones(obs.n)
    fit0 = optimize(model, obs, "mse", None, config.seed, config.budget, config.transform)
    res.thetas.append(fit0.theta)
    res.costs.append(fit0.cost)
    res.weights.append(w)
    res.variograms.append(None)
    if config.cost == "mse":
        return res
    vg = None
    for r in range(1, config.max_reweight_iterations + 1):
        w_new, vg = _residual_weights(model, obs, res.theta, config, vg)
        dw = float(np.max(np.abs(w_new - w)))
        res.max_dw.append(dw)
        if dw < config.convergence_threshold:
            res.weights.append(w_new)
            res.variograms.append(vg)
            res.converged = True
            break
        fit = optimize(model, obs, "wmse", w_new, config.seed + r, config.budget, config.transform)
        res.thetas.append(fit.theta)
        res.costs.append(fit.cost)
        res.weights.append(w_new)
        res.variograms.append(vg)
        w = w_new
    return res
