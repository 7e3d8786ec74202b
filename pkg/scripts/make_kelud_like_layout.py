"""Regenerate the bundled 80-site clustered layout (src/spatialci/data)."""

from pathlib import Path

import numpy as np

from spatialci.spatial_core import ObservationSet, elbow_k, write_observations

# cluster centre (km), spread (km), number of sites
CLUSTERS = [
    ((14.0, 33.0), 3.0, 22),
    ((23.0, 13.0), 2.5, 18),
    ((36.0, 37.0), 3.5, 16),
    ((41.0, 17.0), 2.5, 13),
    ((19.0, 45.0), 2.0, 11),
]


def make_layout(seed=20140213):
    rng = np.random.default_rng(seed)
    pts = [rng.normal(c, s, size=(n, 2)) for c, s, n in CLUSTERS]
    return np.clip(np.vstack(pts), 0.5, 49.5).round(3)


if __name__ == "__main__":
    xy = make_layout()
    assert len(xy) == 80
    print("elbow k:", elbow_k(xy, 10, seed=0))
    out = Path(__file__).resolve().parents[1] / "src/spatialci/data/kelud_like_sites.csv"
    write_observations(ObservationSet(xy, np.zeros(len(xy))), out)
    print("wrote", out)
