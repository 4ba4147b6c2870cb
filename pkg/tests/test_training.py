import math

import numpy as np
import pytest

from helpers import objective_fd_error, random_objective_case
from mmaf.embedding import FeatureSet, Role
from mmaf.network import Architecture, GaussianPosterior, ReferenceDistribution, kl, mc_lip_cached
from mmaf.training import (Adam, NumericalError, TrainConfig, TrainState, load_posterior, objective, pac_bound,
                           penalty, save_posterior, step, target_value, train, truncated_loss)


def _toy_set(m=200, seed=0, D=1):
    rng = np.random.default_rng(seed)
    X = rng.uniform(0.2, 1.0, (m, D))
    return FeatureSet(0, X, 2.0 * X[:, 0], Role.TRAIN, np.arange(1, m + 1))


def test_truncated_loss():
    assert truncated_loss(5, 1, 3) == 3
    assert truncated_loss(2, 1, 3) == 1
    assert truncated_loss(0.7, 0.7, 3) == 0
    assert np.array_equal(truncated_loss(np.array([0.0, 10.0]), 0.0, 3.0), [0.0, 3.0])


def test_target_value_arithmetic():
    d = 4
    pi = ReferenceDistribution(0.5)
    at_ref = GaussianPosterior(np.zeros(d), np.full(d, math.log(math.expm1(math.sqrt(0.5)))))
    assert target_value(at_ref, pi, 0.0, 1.0, 3, 4) == pytest.approx(1.0)
    assert target_value(at_ref, pi, 0.3, 0.0, 7, 1) == pytest.approx(1.3)
    vals = [penalty(k, 1.0, 3, 50) for k in (0.0, 0.5, 1.0, 5.0)]
    assert all(b > a for a, b in zip(vals, vals[1:]))


def test_objective_gradient_finite_differences():
    rng = np.random.default_rng(2024)
    errs = [objective_fd_error(random_objective_case(rng)) for _ in range(25)]
    assert max(errs) < 1e-4


def test_penalty_gradient_is_exact():
    # on the truncation plateau the objective is the penalty alone
    rng = np.random.default_rng(3)
    arch = Architecture(2, (3,))
    rho = GaussianPosterior(rng.normal(0, 0.5, arch.d), rng.normal(-0.3, 0.2, arch.d))
    X, Y = rng.normal(0, 0.1, (4, 2)), np.full(4, 100.0)
    case = (rho, rng.standard_normal(arch.d), X, Y, arch, ReferenceDistribution(0.3), 1.7, 500, 3.0)
    assert objective_fd_error(case, h=1e-5) < 1e-8


def _state(arch, eta, m=10, mc_lip=1.0):
    cfg = TrainConfig(eta=eta)
    return TrainState(GaussianPosterior.initial(arch.d), Adam(2 * arch.d, eta), arch, ReferenceDistribution(0.1),
                      mc_lip, m, cfg)


def test_zero_learning_rate_keeps_state():
    arch = Architecture(1, (2,))
    st = _state(arch, 0.0)
    before = st.rho.copy()
    X, Y = np.ones((3, 1)), np.zeros(3)
    step(st, X, Y, np.random.default_rng(0))
    assert np.array_equal(st.rho.mu, before.mu) and np.array_equal(st.rho.raw_kappa, before.raw_kappa)


def test_plateau_shrinks_mean():
    arch = Architecture(1, (2,))
    st = _state(arch, 1e-2)
    st.rho = GaussianPosterior(np.full(arch.d, 0.5), st.rho.raw_kappa)
    X, Y = np.full((5, 1), 0.01), np.full(5, 1e3)
    for _ in range(20):
        step(st, X, Y, np.random.default_rng(1))
    assert np.all(np.abs(st.rho.mu) < 0.5)


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_non_finite_gradient_aborts():
    arch = Architecture(1, ())
    st = _state(arch, 1e-3)
    with pytest.raises(NumericalError, match="non-finite gradient"):
        step(st, np.array([[np.inf]]), np.array([0.0]), np.random.default_rng(0))


def test_linear_toy_learns():
    ts = _toy_set()
    arch = Architecture(1, ())
    rho, rep = train(ts, arch, ReferenceDistribution(1.0), TrainConfig(eta=5e-2, epochs=40, batch_size=50))
    assert len(rep.target_curve) == 40
    from mmaf.training import posterior_risk
    r0 = posterior_risk(GaussianPosterior.initial(1), arch, ts.inputs, ts.targets, 3.0, 200,
                        np.random.default_rng(0))
    r1 = posterior_risk(rho, arch, ts.inputs, ts.targets, 3.0, 200, np.random.default_rng(0))
    assert r1 < r0


def test_eta_zero_single_epoch_is_initialization():
    ts = _toy_set(20)
    arch = Architecture(1, (3,))
    rho, rep = train(ts, arch, ReferenceDistribution(0.5), TrainConfig(eta=0.0, epochs=1))
    init = GaussianPosterior.initial(arch.d)
    assert np.array_equal(rho.mu, init.mu) and np.array_equal(rho.raw_kappa, init.raw_kappa)
    with pytest.raises(ValueError):
        TrainConfig(epochs=0)


def test_train_rejects_wrong_role():
    fs = _toy_set(10)
    val = FeatureSet(0, fs.inputs, fs.targets, Role.VALIDATION, fs.time_indices)
    with pytest.raises(ValueError):
        train(val, Architecture(1, ()), ReferenceDistribution(1.0), TrainConfig())


def test_determinism_and_mc_lip_constant():
    ts = _toy_set(100, D=2)
    arch = Architecture(2, (4,))
    pi = ReferenceDistribution(0.2)
    cfg = TrainConfig(eta=1e-2, epochs=3, batch_size=30, seed=9)
    a, ra = train(ts, arch, pi, cfg)
    b, rb = train(ts, arch, pi, cfg)
    assert np.array_equal(a.mu, b.mu) and np.array_equal(a.raw_kappa, b.raw_kappa)
    assert ra.target_curve == rb.target_curve
    assert ra.mc_lip == rb.mc_lip == mc_lip_cached(arch, pi, cfg.mc_lip_draws, cfg.seed)


def test_pac_bound_structure():
    ts = _toy_set(400, D=2)
    arch = Architecture(2, (3,))
    pi = ReferenceDistribution(0.3)
    cfg = TrainConfig(eta=1e-2, epochs=2)
    rho, rep = train(ts, arch, pi, cfg, lam=1.0, a=5, p=1)
    assert rep.pac_bound >= rep.rho_r
    assert rep.vacuous == (rep.pac_bound >= cfg.epsilon)
    big, rho_r = pac_bound(rho, pi, ts, arch, cfg, lam=1e6, a=5, p=1, mc_lip=rep.mc_lip, rho_r=rep.rho_r)
    k, m = kl(rho, pi), len(ts)
    limit = rho_r + (k + math.log(1 / cfg.delta)) / math.sqrt(m) + cfg.epsilon ** 2 / (2 * math.sqrt(m))
    assert big == pytest.approx(limit, rel=1e-12)
    assert rep.pac_bound > big


def test_posterior_file_round_trip(tmp_path):
    ts = _toy_set(30, D=2)
    arch = Architecture(2, (3, 3))
    pi = ReferenceDistribution.from_precision(30)
    rho, rep = train(ts, arch, pi, TrainConfig(epochs=1))
    path = save_posterior(tmp_path / "p.json", rho, arch, pi, rep, position=4)
    rho2, arch2, pi2, rep2, pos = load_posterior(path)
    assert np.array_equal(rho2.mu, rho.mu) and np.array_equal(rho2.raw_kappa, rho.raw_kappa)
    assert arch2 == arch and pi2 == pi and pos == 4
    assert rep2["target_curve"] == rep.target_curve


def test_objective_value_is_target():
    rng = np.random.default_rng(5)
    rho, eps, X, Y, arch, pi, mc_lip, m, epsilon = random_objective_case(rng)
    value, _, _ = objective(rho, eps, X, Y, arch, pi, mc_lip, m, epsilon)
    from mmaf.network import forward
    r_hat = float(np.mean(truncated_loss(forward(arch, rho.mu + rho.std * eps, X), Y, epsilon)))
    assert value == pytest.approx(target_value(rho, pi, r_hat, mc_lip, arch.input_dim, m), rel=1e-13)
