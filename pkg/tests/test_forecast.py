import numpy as np
import pytest

from mmaf.embedding import FeatureSet, Role, make_plan
from mmaf.forecast import (EnsembleForecast, ForecastError, InferenceInputs, causal_footprint, generate_ensemble,
                           load_ensemble, save_ensemble)
from mmaf.network import Architecture, GaussianPosterior, forward
from mmaf.rng import derive_rng


def _inputs(position=3, n=12, D=3, first=5, seed=0):
    rng = np.random.default_rng(seed)
    X, Y = rng.standard_normal((n, D)), rng.standard_normal(n)
    idx = np.arange(first, first + n)
    val = FeatureSet(position, X[:1], Y[:1], Role.VALIDATION, idx[:1])
    test = FeatureSet(position, X[1:], Y[1:], Role.TEST, idx[1:])
    return InferenceInputs.from_sets(test, val), X, Y


def _posterior(arch, seed=1, raw=-1.0):
    rng = np.random.default_rng(seed)
    return GaussianPosterior(rng.standard_normal(arch.d), np.full(arch.d, raw))


def test_degenerate_posterior_gives_identical_members():
    arch = Architecture(3, (4,))
    inp, X, _ = _inputs()
    rho = _posterior(arch, raw=-800.0)
    assert np.all(rho.std == 0.0)
    ens = generate_ensemble({3: (rho, arch)}, {3: inp}, start=6, H=4, J=5)
    assert np.all(ens.members == ens.members[0])
    np.testing.assert_allclose(ens.members[0, :, 0], forward(arch, rho.mu, X[1:6]), rtol=0, atol=1e-14)


def test_two_member_ensemble_matches_direct_evaluation():
    arch = Architecture(3, (5, 2))
    inp, X, Y = _inputs()
    rho = _posterior(arch)
    ens = generate_ensemble({3: (rho, arch)}, {3: inp}, start=5, H=3, J=2, seed=11)
    rng = derive_rng(11, "forecast", 3)
    for j in range(2):
        theta = rho.mu + rho.std * rng.standard_normal(arch.d)
        np.testing.assert_array_equal(ens.members[j, :, 0], forward(arch, theta, X[:4]))
    np.testing.assert_array_equal(ens.observations[:, 0], Y[:4])
    assert (ens.J, ens.H, ens.R) == (2, 3, 1)


def test_parameters_reused_across_horizons():
    # with identical inputs at every horizon a member must repeat its value
    arch = Architecture(2, (3,))
    n = 6
    X = np.tile([[0.3, -0.7]], (n, 1))
    fs = FeatureSet(0, X, np.zeros(n), Role.TEST, np.arange(10, 10 + n))
    ens = generate_ensemble({0: (_posterior(arch), arch)}, {0: InferenceInputs.from_sets(fs)}, 10, n - 1, J=7)
    assert np.all(ens.members == ens.members[:, :1, :])
    assert np.unique(ens.members[:, 0, 0]).size == 7


def test_non_anticipation():
    arch = Architecture(3, (4,))
    inp, X, Y = _inputs()
    rho = _posterior(arch)
    base = generate_ensemble({3: (rho, arch)}, {3: inp}, 5, 4, J=10)
    future = InferenceInputs(inp.position, inp.inputs.copy(), inp.targets.copy(), inp.indices)
    future.inputs[3:] += 100.0
    future.targets[:] = 0.0
    alt = generate_ensemble({3: (rho, arch)}, {3: future}, 5, 4, J=10)
    np.testing.assert_array_equal(alt.members[:, :3], base.members[:, :3])


def test_errors():
    arch = Architecture(3, (4,))
    inp, _, _ = _inputs()
    rho = _posterior(arch)
    with pytest.raises(ForecastError, match="horizon out of range"):
        generate_ensemble({3: (rho, arch)}, {3: inp}, 10, 20)
    with pytest.raises(ForecastError, match="architecture mismatch"):
        generate_ensemble({3: (_posterior(Architecture(2, (4,))), Architecture(2, (4,)))}, {3: inp}, 5, 1)
    with pytest.raises(ForecastError):
        generate_ensemble({3: (rho, arch)}, {3: inp}, 5, 1, J=1)
    train = FeatureSet(3, np.zeros((2, 3)), np.zeros(2), Role.TRAIN, [1, 2])
    with pytest.raises(ForecastError):
        InferenceInputs.from_sets(train)
    with pytest.raises(ForecastError):
        EnsembleForecast(np.zeros((1, 2, 1)), np.zeros((2, 1)), 0, 1, [0])


def _footprint_oracle(i, plan, x_star, P, horizon):
    # every grid point not earlier than the target minus the stride, tested against each input point
    pts = [(i * plan.a + dt, x) for dt, x in plan.template(x_star, P)]
    last = max(t for t, _ in pts)
    grid = [(t, x) for t in range(0, i * plan.a + horizon + 1) for x in range(P)]
    return [(t, x) for t, x in grid
            if t > last and min(plan.c * (t - ts) - abs(x - xs) for ts, xs in pts) >= -1e-9]


@pytest.mark.parametrize("c,p,a", [(0.5, 1, 3), (1.0, 2, 4), (2.3, 3, 6), (0.2, 1, 2)])
def test_causal_footprint_brute_force(c, p, a):
    P = 20
    plan = make_plan(c, 1.0, 400, P, p=p, n_test=5, force_a=a)
    for x_star in (plan.positions_used[0], P // 2, plan.positions_used[-1]):
        for i in (3, 7):
            got = causal_footprint(i, plan, x_star, P, horizon=2 * a)
            assert sorted(got) == sorted(_footprint_oracle(i, plan, x_star, P, 2 * a))
            assert (i * a, x_star) in got


def test_ensemble_csv_round_trip(tmp_path):
    rng = np.random.default_rng(4)
    ens = EnsembleForecast(rng.standard_normal((4, 3, 2)), rng.standard_normal((3, 2)), 9, 5, [2, 7], 1.5, 0.25)
    path = save_ensemble(ens, tmp_path / "ens.csv")
    back = load_ensemble(path)
    np.testing.assert_array_equal(back.members, ens.members)
    np.testing.assert_array_equal(back.observations, ens.observations)
    assert (back.start, back.a, back.positions, back.t0, back.h_t) == (9, 5, [2, 7], 1.5, 0.25)
    np.testing.assert_allclose(back.times, 1.5 + 0.25 * 5 * np.array([9, 10, 11]))
    (tmp_path / "bad.csv").write_text("a,b\n1,2\n")
    with pytest.raises(ForecastError):
        load_ensemble(tmp_path / "bad.csv")
