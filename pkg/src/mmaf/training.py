"""PAC-Bayes guided training of diagonal-Gaussian weight posteriors."""

from __future__ import annotations

import json
import math
import time
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .embedding import FeatureSet, Role
from .network import (Architecture, GaussianPosterior, ReferenceDistribution, backward, forward,
                      kl, kl_grad, mc_lip_cached, sample_theta)
from .rng import derive_rng

__all__ = [
    "NumericalError",
    "TrainConfig",
    "TrainReport",
    "Adam",
    "TrainState",
    "truncated_loss",
    "empirical_risk",
    "penalty",
    "penalty_grad_kl",
    "target_value",
    "objective",
    "step",
    "train",
    "posterior_risk",
    "pac_bound",
    "save_posterior",
    "load_posterior",
]


class NumericalError(ArithmeticError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    epsilon: float = 3.0
    delta: float = 0.025
    eta: float = 1e-3
    batch_size: int = 0
    epochs: int = 30
    beta1: float = 0.9
    beta2: float = 0.999
    eps_adam: float = 1e-8
    seed: int = 0
    bound_mc_draws: int = 100
    mc_lip_draws: int = 1000
    mc_lip_seed: int | None = None

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")
        if not 0 < self.delta < 1:
            raise ValueError("delta must lie in (0, 1)")
        if not self.eta >= 0:
            raise ValueError("learning rate must be non-negative")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_size < 0:
            raise ValueError("batch size must be >= 0 (0 = full batch)")

    @property
    def lip_seed(self) -> int:
        """Seed of the reference Lipschitz estimate; a property of the reference law only."""
        return self.seed if self.mc_lip_seed is None else self.mc_lip_seed


@dataclass
class TrainReport:
    target: float
    target_curve: list
    initial_target: float
    kl: float
    mc_lip: float
    pac_bound: float = float("nan")
    rho_r: float = float("nan")
    wallclock: float = 0.0
    vacuous: bool = False
    m: int = 0
    D: int = 0
    steps: int = 0

    def to_dict(self) -> dict:
        return asdict(self)


def truncated_loss(x, y, epsilon: float):
    """``min(|x - y|, epsilon)``."""
    out = np.minimum(np.abs(np.asarray(x, dtype=float) - np.asarray(y, dtype=float)), epsilon)
    return float(out) if out.ndim == 0 else out


def empirical_risk(arch, theta, X, Y, epsilon) -> float:
    return float(np.mean(truncated_loss(forward(arch, theta, X), Y, epsilon)))


def penalty(kl_value: float, mc_lip: float, D: int, m: int) -> float:
    """``(KL + sqrt((2 KL + 1)(mc_lip D + 1))) / sqrt(m)``."""
    return (kl_value + math.sqrt((2.0 * kl_value + 1.0) * (mc_lip * D + 1.0))) / math.sqrt(m)


def penalty_grad_kl(kl_value: float, mc_lip: float, D: int, m: int) -> float:
    lip_term = mc_lip * D + 1.0
    return (1.0 + math.sqrt(lip_term / (2.0 * kl_value + 1.0))) / math.sqrt(m)


def target_value(rho: GaussianPosterior, pi: ReferenceDistribution, r_hat: float, mc_lip: float,
                 D: int, m: int) -> float:
    """Training target: empirical risk plus the linearized-divergence penalty."""
    if m < 1:
        raise ValueError("m must be >= 1")
    return r_hat + penalty(kl(rho, pi), mc_lip, D, m)


def objective(rho: GaussianPosterior, eps: np.ndarray, X, Y, arch: Architecture,
              pi: ReferenceDistribution, mc_lip: float, m: int, epsilon: float):
    """Target with frozen noise ``eps`` and its gradient in ``(mu, raw_kappa)``.

    The risk part is evaluated at ``theta = mu + sqrt(kappa) * eps`` on the
    batch ``(X, Y)``; the penalty uses the training-set size ``m``.
    """
    theta = rho.mu + rho.std * eps
    g_theta, r_hat = backward(arch, theta, X, Y, epsilon, return_loss=True)
    kl_value = kl(rho, pi)
    D = arch.input_dim
    value = r_hat + penalty(kl_value, mc_lip, D, m)
    scale = penalty_grad_kl(kl_value, mc_lip, D, m)
    kg_mu, kg_raw = kl_grad(rho, pi)
    g_mu = g_theta + scale * kg_mu
    g_raw = g_theta * eps * rho.std_grad() + scale * kg_raw
    return value, g_mu, g_raw


class Adam:
    def __init__(self, size: int, lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = np.zeros(size)
        self.v = np.zeros(size)
        self.t = 0

    def update(self, grad: np.ndarray) -> np.ndarray:
        """Step to subtract from the parameters."""
        self.t += 1
        self.m = self.beta1 * self.m + (1.0 - self.beta1) * grad
        self.v = self.beta2 * self.v + (1.0 - self.beta2) * grad * grad
        m_hat = self.m / (1.0 - self.beta1 ** self.t)
        v_hat = self.v / (1.0 - self.beta2 ** self.t)
        return self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


@dataclass
class TrainState:
    rho: GaussianPosterior
    adam: Adam
    arch: Architecture
    pi: ReferenceDistribution
    mc_lip: float
    m: int
    cfg: TrainConfig
    steps: int = 0


def step(state: TrainState, X, Y, rng: np.random.Generator) -> TrainState:
    """One Adam update on a chronological batch with a single posterior draw."""
    if len(Y) == 0:
        raise ValueError("empty batch")
    rho = state.rho
    _, eps = sample_theta(rho, rng)
    value, g_mu, g_raw = objective(rho, eps, X, Y, state.arch, state.pi, state.mc_lip, state.m,
                                   state.cfg.epsilon)
    grad = np.concatenate([g_mu, g_raw])
    if not (np.all(np.isfinite(grad)) and math.isfinite(value)):
        raise NumericalError(
            f"non-finite gradient at step {state.steps}: objective={value}, "
            f"|mu|max={np.max(np.abs(rho.mu)):.3g}, kappa range=[{rho.kappa.min():.3g}, "
            f"{rho.kappa.max():.3g}], non-finite entries={int(np.sum(~np.isfinite(grad)))}")
    upd = state.adam.update(grad)
    d = rho.d
    state.rho = GaussianPosterior(rho.mu - upd[:d], rho.raw_kappa - upd[d:])
    state.steps += 1
    return state


def _full_target(state: TrainState, X, Y, rng) -> float:
    theta, _ = sample_theta(state.rho, rng)
    r_hat = empirical_risk(state.arch, theta, X, Y, state.cfg.epsilon)
    return target_value(state.rho, state.pi, r_hat, state.mc_lip, state.arch.input_dim, state.m)


def posterior_risk(rho: GaussianPosterior, arch: Architecture, X, Y, epsilon: float, draws: int,
                   rng: np.random.Generator) -> float:
    """Monte Carlo average of the empirical risk under ``rho``."""
    total = 0.0
    for _ in range(draws):
        theta, _ = sample_theta(rho, rng)
        total += empirical_risk(arch, theta, X, Y, epsilon)
    return total / draws


def pac_bound(rho_star: GaussianPosterior, pi: ReferenceDistribution, train_set: FeatureSet,
              arch: Architecture, cfg: TrainConfig, lam: float, a: int, p: int,
              mc_lip: float | None = None, rho_r: float | None = None) -> tuple[float, float]:
    """Right-hand side of the PAC-Bayes bound; returns ``(bound, rho_r)``.

    The chi-square term is linearized to ``2 KL`` as in training and the
    dependence coefficient is ``exp(-lam (a - p))``.
    """
    m = len(train_set)
    if mc_lip is None:
        mc_lip = mc_lip_cached(arch, pi, cfg.mc_lip_draws, cfg.lip_seed)
    if rho_r is None:
        rho_r = posterior_risk(rho_star, arch, train_set.inputs, train_set.targets, cfg.epsilon,
                               cfg.bound_mc_draws, derive_rng(cfg.seed, "bound"))
    kl_value = kl(rho_star, pi)
    eps, delta = cfg.epsilon, cfg.delta
    sq = math.sqrt(m)
    dep = (eps / delta) * 2.0 * (mc_lip * arch.input_dim + 1.0) * math.exp(-lam * (a - p)) \
        * (2.0 * kl_value + 1.0)
    bound = rho_r + (kl_value + math.log(1.0 / delta)) / sq + eps ** 2 / (2.0 * sq) + math.sqrt(dep)
    return bound, rho_r


def train(train_set: FeatureSet, arch: Architecture, pi: ReferenceDistribution, cfg: TrainConfig,
          *, lam: float | None = None, a: int | None = None, p: int | None = None):
    """Fit the posterior from ``mu = 0``, ``kappa = 1/4``.

    Batches are consecutive blocks in chronological order. After each epoch
    the target is logged on the full training set with a fresh draw. If
    ``lam``, ``a`` and ``p`` are given the PAC bound is also reported.
    """
    if train_set.role is not Role.TRAIN:
        raise ValueError(f"expected a training set, got {train_set.role.value}")
    m = len(train_set)
    if m < 1:
        raise ValueError("empty training set")
    if train_set.D != arch.input_dim:
        raise ValueError(f"features have D={train_set.D}, architecture expects {arch.input_dim}")
    t_start = time.perf_counter()
    X, Y = train_set.inputs, train_set.targets
    mc_lip = mc_lip_cached(arch, pi, cfg.mc_lip_draws, cfg.lip_seed)
    rho = GaussianPosterior.initial(arch.d)
    state = TrainState(rho, Adam(2 * arch.d, cfg.eta, cfg.beta1, cfg.beta2, cfg.eps_adam), arch, pi,
                       mc_lip, m, cfg)
    rng = derive_rng(cfg.seed, "train")
    rng_log = derive_rng(cfg.seed, "target_log")
    bs = m if cfg.batch_size in (0, None) or cfg.batch_size >= m else cfg.batch_size
    initial = _full_target(state, X, Y, rng_log)
    curve = []
    for _ in range(cfg.epochs):
        for s in range(0, m, bs):
            step(state, X[s:s + bs], Y[s:s + bs], rng)
        curve.append(_full_target(state, X, Y, rng_log))
    report = TrainReport(target=curve[-1], target_curve=curve, initial_target=initial,
                         kl=kl(state.rho, pi), mc_lip=mc_lip, m=m, D=arch.input_dim,
                         steps=state.steps)
    if lam is not None and a is not None and p is not None:
        report.pac_bound, report.rho_r = pac_bound(state.rho, pi, train_set, arch, cfg, lam, a, p,
                                                   mc_lip=mc_lip)
        report.vacuous = bool(report.pac_bound >= cfg.epsilon)
    report.wallclock = time.perf_counter() - t_start
    return state.rho, report


def save_posterior(path, rho: GaussianPosterior, arch: Architecture, pi: ReferenceDistribution,
                   report: TrainReport | None = None, position: int | None = None) -> Path:
    """JSON document: architecture, reference law, flat ``mu``/``raw_kappa``, report."""
    path = Path(path)
    doc = {
        "arch": arch.name,
        "input_dim": arch.input_dim,
        "hidden": list(arch.hidden),
        "s": pi.precision,
        "reference_variance": pi.variance,
        "d": arch.d,
        "position": position,
        "layout": "layer-major: W1 row-major, b1, ..., W_{l+1} (no output bias)",
        "mu": [float(v) for v in rho.mu],
        "raw_kappa": [float(v) for v in rho.raw_kappa],
        "report": None if report is None else report.to_dict(),
    }
    path.write_text(json.dumps(doc) + "\n", encoding="utf-8")
    return path


def load_posterior(path):
    """Returns ``(rho, arch, pi, report_dict, position)``."""
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    arch = Architecture(int(doc["input_dim"]), tuple(doc["hidden"]))
    if arch.d != int(doc["d"]):
        raise ValueError(f"{path}: parameter count {doc['d']} does not match architecture {arch.name}")
    rho = GaussianPosterior(np.array(doc["mu"], dtype=float), np.array(doc["raw_kappa"], dtype=float))
    if rho.d != arch.d:
        raise ValueError(f"{path}: posterior length {rho.d} does not match d={arch.d}")
    pi = ReferenceDistribution(float(doc["reference_variance"]))
    return rho, arch, pi, doc.get("report"), doc.get("position")

