"""
Sites, observations, distances and the clustering used to build sampling
layouts.

Coordinates live in a flat kilometre frame. Observation files are CSV with a
header ``x_km,y_km,value[,weight]``.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np
from scipy.spatial.distance import cdist

KMEANS_MAX_ITER = 100
KMEANS_N_INIT = 10


class Location(NamedTuple):
    x: float
    y: float


@dataclass(frozen=True)
class ObservationSet:
    """Observed values at sites, with optional calibration weights in [0, 1]."""

    coords: np.ndarray
    values: np.ndarray
    weights: np.ndarray | None = None

    def __post_init__(self):
        coords = np.asarray(self.coords, dtype=float).reshape(-1, 2)
        values = np.asarray(self.values, dtype=float).ravel()
        object.__setattr__(self, "coords", coords)
        object.__setattr__(self, "values", values)
        if len(coords) < 1:
            raise ValueError("no observations")
        if len(values) != len(coords):
            raise ValueError(
                f"{len(coords)} locations but {len(values)} values"
            )
        if not np.all(np.isfinite(coords)):
            raise ValueError("non-finite coordinates")
        if self.weights is not None:
            w = np.asarray(self.weights, dtype=float).ravel()
            if len(w) != len(values):
                raise ValueError(f"{len(values)} values but {len(w)} weights")
            if np.any((w < 0) | (w > 1)) or not np.all(np.isfinite(w)):
                raise ValueError("weights must lie in [0, 1]")
            object.__setattr__(self, "weights", w)

    def __len__(self):
        return len(self.values)

    @property
    def n(self) -> int:
        return len(self.values)

    @property
    def locations(self) -> list[Location]:
        return [Location(float(x), float(y)) for x, y in self.coords]

    def with_values(self, values) -> ObservationSet:
        return replace(self, values=np.asarray(values, dtype=float))

    def with_weights(self, weights) -> ObservationSet:
        return replace(self, weights=weights)

    @classmethod
    def from_locations(cls, locations: Sequence, values, weights=None):
        return cls(np.asarray(locations, dtype=float), values, weights)


@dataclass(frozen=True)
class ClusterAssignment:
    k: int
    centres: np.ndarray
    labels: np.ndarray
    within_ss: float
    n_iter: int = field(default=0, compare=False)


def load_observations(path, x_col="x_km", y_col="y_km", value_col="value",
                      weight_col="weight") -> ObservationSet:
    """Read an observation CSV, keeping row order.

    The weight column is optional; if the header lacks ``weight_col`` the
    returned set carries no weights. Errors name the offending data row
    (1-based, header excluded).
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"observation file not found: {path}")
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise ValueError(f"{path}: no observations")
        header = [h.strip() for h in header]
        missing = [c for c in (x_col, y_col, value_col) if c not in header]
        if missing:
            raise ValueError(f"{path}: missing column(s) {missing}")
        idx = [header.index(c) for c in (x_col, y_col, value_col)]
        has_w = weight_col in header
        if has_w:
            idx.append(header.index(weight_col))
        rows = []
        for row_no, row in enumerate(reader, start=1):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise ValueError(
                    f"{path}: row {row_no} has {len(row)} columns, "
                    f"expected {len(header)}"
                )
            try:
                rows.append([float(row[i]) for i in idx])
            except ValueError:
                raise ValueError(
                    f"{path}: row {row_no} has a non-numeric cell"
                ) from None
    if not rows:
        raise ValueError(f"{path}: no observations")
    arr = np.array(rows)
    return ObservationSet(arr[:, :2], arr[:, 2], arr[:, 3] if has_w else None)


def write_observations(obs: ObservationSet, path, weights=None) -> None:
    """Write ``obs`` in the observation CSV format.

    ``weights`` overrides ``obs.weights`` when given, which is how a weight
    vector gets joined onto an existing file.
    """
    w = obs.weights if weights is None else np.asarray(weights, dtype=float)
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["x_km", "y_km", "value"] + (["weight"] if w is not None else []))
        for i in range(obs.n):
            row = [repr(float(obs.coords[i, 0])), repr(float(obs.coords[i, 1])),
                   repr(float(obs.values[i]))]
            if w is not None:
                row.append(repr(float(w[i])))
            writer.writerow(row)


def _coords(obs) -> np.ndarray:
    if isinstance(obs, ObservationSet):
        return obs.coords
    return np.asarray(obs, dtype=float).reshape(-1, 2)


def pairwise_distances(obs) -> np.ndarray:
    """Euclidean distance matrix (km) between all sites of ``obs``.

    Accepts an ObservationSet or an ``(n, 2)`` coordinate array.
    """
    xy = _coords(obs)
    d = cdist(xy, xy)
    np.fill_diagonal(d, 0.0)
    return d


def _lloyd(xy, centres, max_iter=KMEANS_MAX_ITER):
    labels = None
    for it in range(1, max_iter + 1):
        d2 = ((xy[:, None, :] - centres[None, :, :]) ** 2).sum(-1)
        new = d2.argmin(axis=1)
        # empty cluster: reseed at the point worst served by its centre
        for j in range(len(centres)):
            if not np.any(new == j):
                far = d2[np.arange(len(xy)), new].argmax()
                new[far] = j
                d2[far] = 0.0
        if labels is not None and np.array_equal(new, labels):
            break
        labels = new
        centres = np.array([xy[labels == j].mean(axis=0) for j in range(len(centres))])
    wss = float(((xy - centres[labels]) ** 2).sum())
    return centres, labels, wss, it


def _kmeanspp(xy, k, rng):
    n = len(xy)
    chosen = [rng.integers(n)]
    d2 = ((xy - xy[chosen[0]]) ** 2).sum(1)
    for _ in range(1, k):
        total = d2.sum()
        if total <= 0:
            nxt = rng.choice(np.setdiff1d(np.arange(n), chosen))
        else:
            nxt = rng.choice(n, p=d2 / total)
        chosen.append(nxt)
        d2 = np.minimum(d2, ((xy - xy[nxt]) ** 2).sum(1))
    return xy[chosen].copy()


def _kmeans_path(xy, k_max, seed):
    """Solutions for k = 1..k_max; each k also restarts from the k-1 centres
    plus the worst-served point, so within-SS cannot increase with k."""
    rng = np.random.default_rng(seed)
    out = []
    prev = None
    for k in range(1, k_max + 1):
        best = None
        starts = [_kmeanspp(xy, k, rng) for _ in range(KMEANS_N_INIT)]
        if prev is not None:
            d2 = ((xy - prev.centres[prev.labels]) ** 2).sum(1)
            starts.append(np.vstack([prev.centres, xy[d2.argmax()]]))
        for c0 in starts:
            centres, labels, wss, it = _lloyd(xy, c0)
            if best is None or wss < best.within_ss - 1e-12:
                best = ClusterAssignment(k, centres, labels, wss, it)
        out.append(best)
        prev = best
    return out


def kmeans(obs, k: int, seed: int = 0) -> ClusterAssignment:
    """Lloyd's k-means on site coordinates.

    Initial centres are data points (k-means++ draws, ``KMEANS_N_INIT``
    restarts) plus a nested restart seeded from the ``k - 1`` solution;
    the lowest within-cluster sum of squares wins.
    """
    xy = _coords(obs)
    if k < 1:
        raise ValueError("k must be a positive integer")
    if k > len(xy):
        raise ValueError(f"k={k} exceeds the number of observations ({len(xy)})")
    return _kmeans_path(xy, k, seed)[-1]


def elbow_k(obs, k_max: int, seed: int = 0) -> int:
    """Number of clusters at the elbow of the within-SS curve.

    The elbow is the k in ``2..k_max`` with the largest second difference
    of ``log W``, i.e. where the relative drop in within-cluster sum of
    squares ``W`` stops being large. On raw ``W`` the second difference is
    dominated by the first split and picks k = 2 for well separated blobs.
    """
    xy = _coords(obs)
    n = len(xy)
    if not 2 <= k_max <= n:
        raise ValueError(f"k_max must lie in [2, {n}], got {k_max}")
    path = _kmeans_path(xy, min(k_max + 1, n), seed)
    wss = np.array([a.within_ss for a in path])
    if len(wss) == k_max:  # k_max == n: W(n + 1) = W(n) = 0
        wss = np.append(wss, wss[-1])
    logw = np.log(wss + 1e-12 * wss[0] + 1e-300)
    ks = np.arange(2, k_max + 1)
    second = logw[ks - 2] - 2 * logw[ks - 1] + logw[ks]
    return int(ks[np.argmax(second)])


def shrink_to_centres(obs, assignment: ClusterAssignment, factor: float):
    """Pull every site towards its cluster centre by ``factor``.

    ``factor=1`` leaves sites unchanged, ``factor=0`` collapses each cluster
    onto its centre. Returns the same kind of object it was given.
    """
    if not 0.0 <= factor <= 1.0:
        raise ValueError(f"factor must lie in [0, 1], got {factor}")
    xy = _coords(obs)
    labels = np.asarray(assignment.labels)
    if len(labels) != len(xy):
        raise ValueError("assignment does not match observations")
    c = np.asarray(assignment.centres)[labels]
    moved = c + factor * (xy - c)
    if isinstance(obs, ObservationSet):
        return replace(obs, coords=moved)
    return moved
