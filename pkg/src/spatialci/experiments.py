"""
Replicated simulation experiments comparing unweighted, CI-weighted and full
spatial-likelihood estimation.

A scenario fixes the sampling scheme, the residual variogram, the forward
model and the estimators. Each replicate simulates Gaussian-process
residuals (on top of the forward-model surface for ``toy_plume``) and runs
every estimator. Results are per-replicate estimates plus median-based
summaries.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path

import numpy as np

from .calibration import (CalibrationConfig, ConstantMean, ToyPlume, calibrate_iterative)
from .cost import spatial_ml_mean
from .gp_sim import SamplingScheme, gp_factor, replicate_rng, sample_locations, spatial_dependence_setting
from .spatial_core import ObservationSet
from .variogram import VariogramModel

ESTIMATORS = ("unweighted", "weighted", "spatial_ml")
FORWARD_MODELS = ("constant_mean", "toy_plume")
TOY_PLUME_TRUTH = (5000.0, 3.0, -2.0, 8.0, 1.5)
# residual variogram of the case-study fit, log10 load scale
TOY_PLUME_RESIDUALS = VariogramModel("matern", 0.0105742, 0.04067892, 2.84104255, 1.0)


@dataclass(frozen=True)
class ExperimentScenario:
    name: str = "scenario"
    scheme: SamplingScheme = field(default_factory=SamplingScheme)
    dependence: str = "mid"
    truth_variogram: VariogramModel | None = None
    replicates: int = 100
    estimators: tuple = ESTIMATORS
    forward_model: str = "constant_mean"
    truth_theta: tuple | None = None
    mean: float = 0.0
    seed: int = 0
    resample_sites: bool = False
    calibration: CalibrationConfig = field(default_factory=CalibrationConfig)

    def __post_init__(self):
        if self.replicates < 1:
            raise ValueError("replicates must be at least 1")
        if not self.estimators:
            raise ValueError("estimator set must be non-empty")
        bad = set(self.estimators) - set(ESTIMATORS)
        if bad:
            raise ValueError(f"unknown estimators {sorted(bad)}")
        if self.forward_model not in FORWARD_MODELS:
            raise ValueError(f"unknown forward model {self.forward_model!r}")
        if self.forward_model == "toy_plume" and "spatial_ml" in self.estimators:
            raise ValueError("spatial_ml is only available for the constant-mean model")

    @property
    def truth(self) -> VariogramModel:
        if self.truth_variogram is not None:
            return self.truth_variogram
        if self.forward_model == "toy_plume":
            return TOY_PLUME_RESIDUALS
        return spatial_dependence_setting(self.dependence)

    @property
    def model(self):
        if self.forward_model == "toy_plume":
            return ToyPlume()
        return ConstantMean((self.mean - 10.0, self.mean + 10.0))

    @property
    def theta_true(self) -> np.ndarray:
        if self.forward_model == "toy_plume":
            return np.asarray(self.truth_theta or TOY_PLUME_TRUTH, dtype=float)
        return np.array([self.mean])

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "scheme": self.scheme.to_dict(),
            "dependence": self.dependence,
            "truth_variogram": None if self.truth_variogram is None else self.truth_variogram.to_dict(),
            "replicates": self.replicates,
            "estimators": list(self.estimators),
            "forward_model": self.forward_model,
            "truth_theta": None if self.truth_theta is None else list(self.truth_theta),
            "mean": self.mean,
            "seed": self.seed,
            "resample_sites": self.resample_sites,
            "calibration": self.calibration.__dict__.copy(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> ExperimentScenario:
        d = dict(d)
        d["scheme"] = SamplingScheme.from_dict(d.get("scheme", {}))
        if d.get("truth_variogram") is not None:
            d["truth_variogram"] = VariogramModel.from_dict(d["truth_variogram"])
        d["calibration"] = CalibrationConfig.from_dict(d.get("calibration", {}))
        if "estimators" in d:
            d["estimators"] = tuple(d["estimators"])
        if d.get("truth_theta") is not None:
            d["truth_theta"] = tuple(d["truth_theta"])
        return cls(**d)

    @classmethod
    def load(cls, path) -> ExperimentScenario:
        return cls.from_dict(json.loads(Path(path).read_text()))


def bundled_scenarios() -> list[str]:
    root = resources.files("spatialci") / "scenarios"
    return sorted(p.name[:-5] for p in root.iterdir() if p.name.endswith(".json"))


def load_scenario(name_or_path) -> ExperimentScenario:
    """Scenario from a JSON file path or the name of a bundled scenario."""
    p = Path(name_or_path)
    if p.suffix == ".json" and p.exists():
        return ExperimentScenario.load(p)
    ref = resources.files("spatialci") / "scenarios" / f"{name_or_path}.json"
    if not ref.is_file():
        raise FileNotFoundError(f"no scenario file or bundled scenario {name_or_path!r}")
    return ExperimentScenario.from_dict(json.loads(ref.read_text()))


def summarize(estimates, truth: float) -> dict:
    """Median bias and median absolute deviation, in % of ``truth``.

    With ``truth == 0`` both are reported on the absolute scale and
    ``relative`` is False.
    """
    est = np.asarray(estimates, dtype=float)
    if est.size == 0:
        raise ValueError("no estimates to summarise")
    med = float(np.median(est))
    bias = med - truth
    mad = float(np.median(np.abs(est - med)))
    if truth == 0:
        return {"median_bias": bias, "mad": mad, "relative": False}
    return {"median_bias": 100.0 * bias / truth, "mad": 100.0 * mad / abs(truth), "relative": True}


@dataclass
class SummaryStats:
    scenario: str
    param_names: tuple
    theta_true: np.ndarray
    estimates: dict  # estimator -> (replicates, n_params) array
    rounds: list = field(default_factory=list)
    converged: list = field(default_factory=list)

    def stats(self, estimator: str, param: int | str = 0) -> dict:
        j = self.param_names.index(param) if isinstance(param, str) else param
        col = self.estimates[estimator][:, j]
        out = summarize(col, float(self.theta_true[j]))
        n = len(col)
        out.update(mean=float(col.mean()), sd=float(col.std(ddof=1)) if n > 1 else 0.0,
                   se=float(col.std(ddof=1) / np.sqrt(n)) if n > 1 else 0.0, n=n)
        return out

    def sd(self, estimator, param=0) -> float:
        return self.stats(estimator, param)["sd"]

    def to_dict(self) -> dict:
        blocks = {}
        for est in self.estimates:
            blocks[est] = {name: self.stats(est, j) for j, name in enumerate(self.param_names)}
        out = {"scenario": self.scenario,
               "truth": dict(zip(self.param_names, map(float, self.theta_true))),
               "estimators": blocks}
        if self.rounds:
            r = np.asarray(self.rounds)
            out["reweighting"] = {
                "rounds": [int(v) for v in r],
                "converged": [bool(v) for v in self.converged],
                "rounds_histogram": {str(k): int((r == k).sum()) for k in sorted(set(r.tolist()))},
            }
        return out

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")

    def write_replicates_csv(self, path) -> None:
        with Path(path).open("w", newline="") as fh:
            wr = csv.writer(fh, lineterminator="\n")
            wr.writerow(["replicate", "estimator", "parameter", "estimate"])
            for est, arr in self.estimates.items():
                for r, row in enumerate(arr):
                    for name, v in zip(self.param_names, row):
                        wr.writerow([r, est, name, repr(float(v))])


def simulate_replicate(scenario: ExperimentScenario, replicate: int, coords=None,
                       factor=None) -> ObservationSet:
    """Observed dataset for one replicate (deterministic in seed and index)."""
    if coords is None:
        coords = scenario_sites(scenario, replicate)
    if factor is None:
        factor = gp_factor(coords, scenario.truth)
    z = replicate_rng(scenario.seed, replicate).standard_normal(len(coords))
    resid = factor @ z
    if scenario.forward_model == "constant_mean":
        return ObservationSet(coords, scenario.mean + resid)
    surface = scenario.model.predict(scenario.theta_true, coords)
    if scenario.calibration.transform == "log10":
        return ObservationSet(coords, 10.0 ** (np.log10(surface) + resid))
    return ObservationSet(coords, surface + resid)


def scenario_sites(scenario: ExperimentScenario, replicate: int = 0) -> np.ndarray:
    seed = scenario.seed + 7919 * replicate if scenario.resample_sites else scenario.seed
    return sample_locations(scenario.scheme, seed)


def run_replicate(scenario: ExperimentScenario, obs: ObservationSet, replicate: int):
    """Estimates ``{estimator: theta}`` plus (rounds, converged) for one dataset."""
    out = {}
    trace = None
    cfg = replace(scenario.calibration, seed=scenario.calibration.seed + replicate)
    want_w = "weighted" in scenario.estimators
    if want_w or "unweighted" in scenario.estimators:
        if not want_w:
            cfg = replace(cfg, cost="mse")
        try:
            res = calibrate_iterative(scenario.model, obs, cfg)
        except Exception as exc:
            raise RuntimeError(f"replicate {replicate}: {exc}") from exc
        if "unweighted" in scenario.estimators:
            out["unweighted"] = res.unweighted_theta
        if want_w:
            out["weighted"] = res.theta
            trace = (res.rounds, res.converged)
    if "spatial_ml" in scenario.estimators:
        try:
            ml = spatial_ml_mean(obs, scenario.truth.smoothness, family=scenario.truth.family)
        except Exception as exc:
            raise RuntimeError(f"replicate {replicate}: {exc}") from exc
        out["spatial_ml"] = np.array([ml.mean])
    return out, trace


def run_scenario(scenario: ExperimentScenario, replicates_csv=None, progress=None) -> SummaryStats:
    """Run every replicate of ``scenario`` and collect the estimates."""
    model = scenario.model
    coords = None if scenario.resample_sites else scenario_sites(scenario)
    factor = None if coords is None else gp_factor(coords, scenario.truth)
    ests = {e: [] for e in ESTIMATORS if e in scenario.estimators}
    stats = SummaryStats(scenario.name, tuple(model.param_names), scenario.theta_true, {})
    for r in range(scenario.replicates):
        obs = simulate_replicate(scenario, r, coords, factor)
        out, trace = run_replicate(scenario, obs, r)
        for e in ests:
            ests[e].append(out[e])
        if trace is not None:
            stats.rounds.append(trace[0])
            stats.converged.append(trace[1])
        if progress is not None:
            progress(r)
    stats.estimates = {e: np.array(v) for e, v in ests.items()}
    if replicates_csv is not None:
        stats.write_replicates_csv(replicates_csv)
    return stats
