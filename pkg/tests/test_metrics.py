import numpy as np
import pytest
from scipy import stats

from mmaf.forecast import EnsembleForecast
from mmaf.metrics import (coverage, crps, crps_ensemble, evaluate, pit, pit_histogram, pit_uniformity_pvalue,
                          pit_values, rmse, save_report, write_plot_data)


def _naive_crps(x, y):
    x = np.asarray(x, dtype=float)
    return np.mean(np.abs(x - y)) - 0.5 * np.mean(np.abs(x[:, None] - x[None, :]))


def test_rmse_hand_value_and_offset():
    ens = EnsembleForecast(np.array([[[0.0]], [[5.0]]]), np.array([[0.0]]), 0, 1, [4])
    assert rmse(ens, 4) == pytest.approx(np.sqrt(12.5))
    rng = np.random.default_rng(0)
    obs = rng.standard_normal((6, 2))
    ens = EnsembleForecast(obs[None] + 0.7 + np.zeros((3, 1, 1)), obs, 0, 1, [1, 2])
    assert rmse(ens, 1) == pytest.approx(0.7) and rmse(ens, 2) == pytest.approx(0.7)


def test_crps_small_cases():
    assert crps([0.0, 1.0], 0.5) == pytest.approx(0.25)
    assert crps([2.0, 2.0, 2.0], 2.0) == 0.0
    assert crps([3.0, 3.0], 1.0) == pytest.approx(2.0)


def test_crps_matches_pairwise_formula():
    rng = np.random.default_rng(1)
    for J in (2, 3, 10, 57):
        x = rng.standard_normal((J, 4, 3))
        y = rng.standard_normal((4, 3))
        got = crps_ensemble(x, y)
        for h in range(4):
            for r in range(3):
                assert got[h, r] == pytest.approx(_naive_crps(x[:, h, r], y[h, r]), abs=1e-12)


def test_crps_gaussian_limit():
    # CRPS of N(0,1) at y=0 is (sqrt(2) - 1) / sqrt(pi)
    x = np.random.default_rng(2).standard_normal(10_000)
    exact = (np.sqrt(2.0) - 1.0) / np.sqrt(np.pi)
    assert exact == pytest.approx(0.2337, abs=1e-4)
    assert crps(x, 0.0) == pytest.approx(exact, rel=0.02)


def test_crps_invariances_and_bounds():
    rng = np.random.default_rng(3)
    x, y = rng.standard_normal(30), 0.4
    c = crps(x, y)
    assert crps(rng.permutation(x), y) == pytest.approx(c, abs=1e-13)
    assert crps(x + 2.5, y + 2.5) == pytest.approx(c, abs=1e-13)
    assert crps(3.0 * x, 3.0 * y) == pytest.approx(3.0 * c, rel=1e-12)
    assert 0.0 <= c <= np.max(np.abs(x - y))


def test_pit_formula():
    rng = np.random.default_rng(0)
    u = np.random.default_rng(9).uniform()
    assert pit([1.0, 2.0, 2.0, 3.0], 2.0, np.random.default_rng(9)) == pytest.approx((1 + 3 * u) / 5)
    assert pit([1.0, 2.0, 3.0], 2.5, np.random.default_rng(9)) == pytest.approx((2 + u) / 4)
    for _ in range(50):
        v = pit([1.0, 2.0, 3.0], 10.0, rng)
        assert 0.75 <= v <= 1.0
        v = pit([1.0, 2.0, 3.0], -1.0, rng)
        assert 0.0 <= v <= 0.25
        v = pit([1.0, 2.0, 2.0, 3.0], 2.0, rng)
        assert 0.2 <= v <= 0.8


def test_pit_uniform_for_exchangeable_draws():
    rng = np.random.default_rng(5)
    J, n = 20, 10_000
    draws = rng.standard_normal((n, J + 1))
    vals = np.array([pit(d[:J], d[J], rng) for d in draws])
    assert stats.kstest(vals, "uniform").pvalue > 1e-3
    # ties: discrete members and observation from the same law
    disc = rng.integers(0, 3, (n, J + 1)).astype(float)
    vals = np.array([pit(d[:J], d[J], rng) for d in disc])
    assert stats.kstest(vals, "uniform").pvalue > 1e-3


def test_coverage_quantile_convention():
    members = np.arange(1.0, 101.0).reshape(100, 1, 1)
    for y, inside in ((25.7, 0.0), (25.75, 1.0), (50.0, 1.0), (75.25, 1.0), (75.3, 0.0)):
        ens = EnsembleForecast(members, np.array([[y]]), 0, 1, [0])
        assert coverage(ens, [50])[50] == inside


def test_calibrated_ensemble_scores():
    rng = np.random.default_rng(6)
    H1, R, J = 200, 10, 100
    members = rng.standard_normal((J, H1, R))
    obs = rng.standard_normal((H1, R))
    ens = EnsembleForecast(members, obs, 0, 1, list(range(R)))
    cov = coverage(ens)
    for q, v in cov.items():
        assert abs(100 * v - q) <= 5
    rep = evaluate(ens, seed=1)
    assert sum(rep.pit_hist) == rep.n_cases == H1 * R
    assert rep.pit_chi2_pvalue > 1e-3
    assert rep.crps_mean == pytest.approx(np.mean(crps_ensemble(members, obs)))
    assert rep.rmse_mean == pytest.approx(np.mean([rmse(ens, r) for r in range(R)]))


def test_histogram_and_pvalue():
    vals = np.linspace(0.0, 1.0, 1000, endpoint=False) + 0.0005
    assert pit_histogram(vals).tolist() == [100] * 10
    assert pit_uniformity_pvalue(vals) == pytest.approx(1.0)
    assert pit_uniformity_pvalue(np.full(1000, 0.5)) < 1e-100


def test_evaluate_deterministic_and_files(tmp_path):
    rng = np.random.default_rng(7)
    ens = EnsembleForecast(rng.standard_normal((5, 4, 2)), rng.standard_normal((4, 2)), 3, 2, [1, 2])
    a, b = evaluate(ens, seed=4), evaluate(ens, seed=4)
    assert a.to_dict() == b.to_dict()
    np.testing.assert_array_equal(pit_values(ens, np.random.default_rng(0)).shape, (4, 2))
    save_report(a, tmp_path / "report.json")
    paths = write_plot_data(ens, a, tmp_path / "plots")
    assert sorted(p.name for p in paths) == ["coverage.csv", "pit_hist.csv", "quantile_bands.csv"]
    assert len((tmp_path / "plots" / "quantile_bands.csv").read_text().splitlines()) == 1 + 4 * 2
