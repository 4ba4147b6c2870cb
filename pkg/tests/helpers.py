"""Shared oracles for the test suite."""

import numpy as np

from mmaf.network import Architecture, GaussianPosterior, ReferenceDistribution, unpack
from mmaf.training import objective

KINK_MARGIN = 1e-3


def naive_forward(arch, theta, x):
    """Loop-based re-implementation of the network, used as an oracle."""
    h = [float(v) for v in x]
    layers = unpack(arch, theta)
    for li, (W, b) in enumerate(layers):
        out = []
        for i in range(W.shape[0]):
            s = sum(W[i, j] * h[j] for j in range(len(h)))
            if b is not None:
                s += b[i]
            out.append(s)
        h = out if li == len(layers) - 1 else [max(v, 0.0) for v in out]
    return h[0]


def preactivations(arch, theta, X):
    pre, h = [], np.asarray(X, dtype=float)
    for W, b in unpack(arch, theta):
        z = h @ W.T + (0.0 if b is None else b)
        pre.append(z)
        h = np.maximum(z, 0.0)
    return pre


def random_objective_case(rng, max_d=200):
    """A random smooth-region configuration of the training objective.

    Returns ``(rho, eps, X, Y, arch, pi, mc_lip, m, epsilon)``; resamples until
    no ReLU pre-activation and no loss argument is within ``KINK_MARGIN`` of a kink.
    """
    while True:
        D = int(rng.integers(1, 6))
        hidden = tuple(int(w) for w in rng.integers(1, 8, size=rng.integers(1, 4)))
        arch = Architecture(D, hidden)
        if arch.d > max_d:
            continue
        n = int(rng.integers(1, 6))
        rho = GaussianPosterior(rng.normal(0, 0.7, arch.d), rng.normal(-0.5, 0.5, arch.d))
        eps = rng.standard_normal(arch.d)
        X = rng.normal(0, 1, (n, D))
        epsilon = float(rng.uniform(0.5, 4.0))
        theta = rho.mu + rho.std * eps
        pre = preactivations(arch, theta, X)
        out = pre[-1][:, 0]
        Y = out + rng.uniform(-1.5 * epsilon, 1.5 * epsilon, n)
        diff = np.abs(out - Y)
        if any(np.min(np.abs(z)) < KINK_MARGIN for z in pre[:-1]):
            continue
        if np.min(diff) < KINK_MARGIN or np.min(np.abs(diff - epsilon)) < KINK_MARGIN:
            continue
        pi = ReferenceDistribution(float(rng.uniform(0.05, 2.0)))
        return rho, eps, X, Y, arch, pi, float(rng.uniform(0.0, 3.0)), int(rng.integers(1, 10_000)), epsilon


def objective_fd_error(case, h=1e-6):
    """Relative error between the analytic and central-difference gradients."""
    rho, eps, X, Y, arch, pi, mc_lip, m, epsilon = case
    _, g_mu, g_raw = objective(rho, eps, X, Y, arch, pi, mc_lip, m, epsilon)
    g = np.concatenate([g_mu, g_raw])
    flat = np.concatenate([rho.mu, rho.raw_kappa])
    d = rho.d
    fd = np.empty_like(flat)
    for k in range(flat.size):
        vals = []
        for sgn in (1.0, -1.0):
            f = flat.copy()
            f[k] += sgn * h
            vals.append(objective(GaussianPosterior(f[:d], f[d:]), eps, X, Y, arch, pi, mc_lip, m, epsilon)[0])
        fd[k] = (vals[0] - vals[1]) / (2 * h)
    return float(np.linalg.norm(fd - g) / max(np.linalg.norm(g), 1e-12))
