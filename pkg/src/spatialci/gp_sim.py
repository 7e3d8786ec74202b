"""
Gaussian-process simulation at point sites and the sampling schemes used in
the simulation studies.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np
from scipy.linalg import LinAlgError, cholesky

from .spatial_core import ObservationSet, elbow_k, kmeans, load_observations, shrink_to_centres
from .variogram import VariogramModel, covariance_matrix

DOMAIN = (0.0, 50.0, 0.0, 50.0)
SCHEME_KINDS = ("random_n", "fixed_layout", "clustered_layout")
BUNDLED_LAYOUTS = {"kelud_like": "kelud_like_sites.csv"}


def bundled_layout(name: str = "kelud_like") -> np.ndarray:
    """Coordinates of a layout shipped with the package.

    ``kelud_like`` is a synthetic 80-site layout with five visible clusters
    over the 50 x 50 km domain; it stands in for a field-survey layout.
    """
    if name not in BUNDLED_LAYOUTS:
        raise KeyError(f"unknown bundled layout {name!r}; have {sorted(BUNDLED_LAYOUTS)}")
    ref = resources.files("spatialci") / "data" / BUNDLED_LAYOUTS[name]
    with resources.as_file(ref) as p:
        return load_observations(p).coords


def resolve_layout(layout) -> np.ndarray:
    """Layout given as a bundled name, a CSV path, or coordinates."""
    if isinstance(layout, str):
        if layout in BUNDLED_LAYOUTS:
            return bundled_layout(layout)
        return load_observations(layout).coords
    if isinstance(layout, Path):
        return load_observations(layout).coords
    return np.asarray(layout, dtype=float).reshape(-1, 2)


@dataclass(frozen=True)
class SamplingScheme:
    kind: str = "random_n"
    n: int = 80
    domain: tuple = DOMAIN
    layout: object = None
    shrink_factor: float | None = None
    k: int | None = None
    k_max: int = 10

    def __post_init__(self):
        if self.kind not in SCHEME_KINDS:
            raise ValueError(f"unknown sampling scheme {self.kind!r}")
        x0, x1, y0, y1 = self.domain
        if not (x1 > x0 and y1 > y0):
            raise ValueError("degenerate domain")
        if self.kind != "random_n" and self.layout is None:
            raise ValueError(f"scheme {self.kind!r} requires a layout")
        if self.kind == "random_n" and self.n < 1:
            raise ValueError("n must be at least 1")

    def to_dict(self) -> dict:
        d = asdict(self)
        if isinstance(self.layout, np.ndarray):
            d["layout"] = self.layout.tolist()
        d["domain"] = list(self.domain)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> SamplingScheme:
        d = dict(d)
        if "domain" in d:
            d["domain"] = tuple(d["domain"])
        return cls(**d)


def replicate_rng(seed: int, replicate: int) -> np.random.Generator:
    """Independent stream for one replicate of a batch."""
    return np.random.default_rng([int(seed), int(replicate)])


def sample_locations(scheme: SamplingScheme, seed: int = 0) -> np.ndarray:
    """Site coordinates (``(n, 2)`` array, km) for a sampling scheme.

    ``clustered_layout`` clusters the layout with k-means (k from the elbow
    method unless ``scheme.k`` is set) and moves each site towards its
    cluster centre by ``shrink_factor`` (default 0.5).
    """
    if scheme.kind == "random_n":
        x0, x1, y0, y1 = scheme.domain
        rng = np.random.default_rng(seed)
        return np.column_stack([rng.uniform(x0, x1, scheme.n), rng.uniform(y0, y1, scheme.n)])
    xy = resolve_layout(scheme.layout)
    if scheme.kind == "fixed_layout":
        return xy.copy()
    k = scheme.k or elbow_k(xy, min(scheme.k_max, len(xy)), seed)
    assignment = kmeans(xy, k, seed)
    factor = 0.5 if scheme.shrink_factor is None else scheme.shrink_factor
    return shrink_to_centres(xy, assignment, factor)


def gp_factor(coords, truth: VariogramModel) -> np.ndarray:
    """Lower Cholesky factor of the covariance at ``coords``."""
    cov = covariance_matrix(truth, coords)
    try:
        return cholesky(cov, lower=True)
    except LinAlgError as exc:
        raise LinAlgError(
            f"covariance factorisation failed: n={len(cov)}, "
            f"condition number {np.linalg.cond(cov):.3g}, "
            f"min eigenvalue {np.linalg.eigvalsh(cov).min():.3g}"
        ) from exc


def simulate_gp(coords, truth: VariogramModel, mean: float = 0.0,
                seed: int | np.random.Generator = 0) -> ObservationSet:
    """One draw of a Gaussian process with constant ``mean`` at ``coords``."""
    coords = np.asarray(coords, dtype=float).reshape(-1, 2)
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    L = gp_factor(coords, truth)
    return ObservationSet(coords, mean + L @ rng.standard_normal(len(coords)))


@dataclass(frozen=True)
class SimulationBatch:
    replicates: int = 100
    truth: VariogramModel = field(default_factory=VariogramModel)
    mean: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.replicates < 1:
            raise ValueError("replicates must be at least 1")

    def simulate(self, coords) -> np.ndarray:
        """``(replicates, n)`` array of values; row r uses ``replicate_rng(seed, r)``."""
        coords = np.asarray(coords, dtype=float).reshape(-1, 2)
        L = gp_factor(coords, self.truth)
        z = np.stack([replicate_rng(self.seed, r).standard_normal(len(coords))
                      for r in range(self.replicates)])
        return self.mean + z @ L.T

    def manifest(self, files=()) -> dict:
        return {
            "replicates": self.replicates,
            "truth": self.truth.to_dict(),
            "mean": self.mean,
            "seed": self.seed,
            "files": list(files),
        }

    def write_manifest(self, path, files=()) -> None:
        Path(path).write_text(json.dumps(self.manifest(files), indent=2) + "\n")


def spatial_dependence_setting(level: str) -> VariogramModel:
    """Matérn (smoothness 1) truth for the low/mid/high dependence settings.

    ``low`` keeps the total sill at 5 with a nugget share of 0.4.
    """
    settings = {
        "low": VariogramModel("matern", 2.0, 3.0, 2.5, 1.0),
        "mid": VariogramModel("matern", 1.0, 4.0, 2.5, 1.0),
        "high": VariogramModel("matern", 1.0, 4.0, 3.5, 1.0),
    }
    try:
        return settings[level]
    except KeyError:
        raise ValueError(f"dependence level must be one of {sorted(settings)}") from None
