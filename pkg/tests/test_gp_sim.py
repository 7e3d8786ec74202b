import numpy as np
import pytest

from spatialci.gp_sim import (
    SamplingScheme,
    SimulationBatch,
    bundled_layout,
    sample_locations,
    simulate_gp,
    spatial_dependence_setting,
)
from spatialci.variogram import VariogramModel, empirical_variogram, evaluate, to_covariance

MID = VariogramModel("matern", 1.0, 4.0, 2.5, 1.0)


def test_pure_nugget_variance():
    xy = np.random.default_rng(0).uniform(0, 50, (5, 2))
    vals = SimulationBatch(2000, VariogramModel("matern", 2.0, 0.0, 2.5), 0.0, seed=1).simulate(xy)
    # 10,000 draws in total
    assert vals.var() == pytest.approx(2.0, rel=0.05)


def test_sample_mean_within_three_se():
    xy = np.random.default_rng(1).uniform(0, 50, (20, 2))
    vals = SimulationBatch(200, MID, 7.0, seed=2).simulate(xy)
    means = vals.mean(axis=1)
    assert abs(means.mean() - 7.0) < 3 * means.std(ddof=1) / np.sqrt(len(means))


def test_two_site_covariance():
    d = 2.5
    xy = np.array([[0.0, 0.0], [d, 0.0]])
    vals = SimulationBatch(5000, MID, 0.0, seed=3).simulate(xy)
    expected = to_covariance(MID, d)
    assert np.cov(vals.T)[0, 1] == pytest.approx(expected, rel=0.10)


def test_coincident_sites_differ_by_nugget():
    vals = SimulationBatch(4000, MID, 0.0, seed=4).simulate(np.zeros((2, 2)))
    half_sq = 0.5 * np.mean((vals[:, 0] - vals[:, 1]) ** 2)
    assert half_sq == pytest.approx(MID.nugget, rel=0.1)


@pytest.mark.slow
def test_pooled_empirical_variogram_matches_model():
    xy = np.random.default_rng(5).uniform(0, 50, (80, 2))
    vals = SimulationBatch(200, MID, 0.0, seed=6).simulate(xy)
    emps = [empirical_variogram(v, 20, 12.5, coords=xy) for v in vals]
    counts = sum(e.pair_counts for e in emps)
    gam = sum(e.semivariances * e.pair_counts for e in emps) / np.maximum(counts, 1)
    lags = sum(e.lags * e.pair_counts for e in emps) / np.maximum(counts, 1)
    sel = (lags >= 2.5) & (lags <= 10.0) & (counts > 0)
    np.testing.assert_allclose(gam[sel], evaluate(MID, lags[sel]), rtol=0.10)


def test_determinism():
    xy = bundled_layout()
    a = simulate_gp(xy, MID, 0.0, seed=9).values
    b = simulate_gp(xy, MID, 0.0, seed=9).values
    assert np.array_equal(a, b)
    assert not np.array_equal(a, simulate_gp(xy, MID, 0.0, seed=10).values)


def test_batch_rows_are_independent_streams():
    xy = np.random.default_rng(0).uniform(0, 50, (10, 2))
    full = SimulationBatch(5, MID, seed=7).simulate(xy)
    short = SimulationBatch(3, MID, seed=7).simulate(xy)
    assert np.array_equal(full[:3], short)


def test_dependence_settings():
    low, mid, high = (spatial_dependence_setting(s) for s in ("low", "mid", "high"))
    assert mid == MID
    assert low.ratio < mid.ratio
    assert high.range > mid.range
    assert low.sill == mid.sill == high.sill
    with pytest.raises(ValueError):
        spatial_dependence_setting("extreme")


def test_random_scheme_in_domain_and_deterministic():
    s = SamplingScheme("random_n", n=40)
    xy = sample_locations(s, seed=3)
    assert xy.shape == (40, 2)
    assert np.all((xy >= 0) & (xy <= 50))
    assert np.array_equal(xy, sample_locations(s, seed=3))


def test_fixed_scheme_returns_layout():
    assert np.array_equal(sample_locations(SamplingScheme("fixed_layout", layout="kelud_like")),
                          bundled_layout())


def test_clustered_scheme_moves_sites_inwards():
    base = bundled_layout()
    xy = sample_locations(SamplingScheme("clustered_layout", layout="kelud_like"))
    assert xy.shape == base.shape
    spread = lambda a: np.sum((a - a.mean(0)) ** 2)
    assert spread(xy) < spread(base)
    full = sample_locations(SamplingScheme("clustered_layout", layout="kelud_like", shrink_factor=1.0))
    np.testing.assert_allclose(full, base)


def test_scheme_validation():
    with pytest.raises(ValueError):
        SamplingScheme("stratified")
    with pytest.raises(ValueError):
        SamplingScheme("fixed_layout")
    with pytest.raises(ValueError):
        SamplingScheme(domain=(0, 0, 0, 1))


def test_scheme_roundtrip():
    s = SamplingScheme("clustered_layout", layout="kelud_like", shrink_factor=0.3, k=5)
    assert SamplingScheme.from_dict(s.to_dict()) == s


def test_factorisation_failure_reports_diagnostics():
    from scipy.linalg import LinAlgError

    with pytest.raises(LinAlgError, match="condition number"):
        simulate_gp(np.zeros((3, 2)), VariogramModel("matern", 1e-300, 1.0, 1.0))
