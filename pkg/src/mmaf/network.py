"""Stochastic ReLU feed-forward networks with diagonal-Gaussian weight laws.

Parameter layout (flat vector of length ``d``), layer by layer::

    W1 (n1 x n0, row-major), b1, W2 (n2 x n1), b2, ..., W_{l+1} (1 x n_l)

The output layer has no bias.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

__all__ = [
    "Architecture",
    "GaussianPosterior",
    "ReferenceDistribution",
    "parse_arch",
    "pack",
    "unpack",
    "forward",
    "backward",
    "output_gradient",
    "spectral_norm",
    "lipschitz_bound",
    "kl",
    "kl_grad",
    "sample_theta",
    "mc_lip_reference",
    "mc_lip_cached",
    "softplus",
    "KAPPA0",
]

KAPPA0 = 0.25
POWER_ITER_TOL = 1e-8
POWER_ITER_MAX = 200


@dataclass(frozen=True)
class Architecture:
    input_dim: int
    hidden: tuple

    def __post_init__(self):
        object.__setattr__(self, "hidden", tuple(int(w) for w in self.hidden))
        if self.input_dim < 1 or any(w < 1 for w in self.hidden):
            raise ValueError(f"invalid architecture: D={self.input_dim}, hidden={self.hidden}")

    @property
    def widths(self) -> tuple:
        return (self.input_dim,) + self.hidden + (1,)

    @property
    def n_layers(self) -> int:
        return len(self.hidden) + 1

    @property
    def d(self) -> int:
        w = self.widths
        return sum(w[i] * w[i + 1] for i in range(len(w) - 1)) + sum(self.hidden)

    @property
    def name(self) -> str:
        if self.hidden and len(set(self.hidden)) == 1:
            return f"{self.hidden[0]}^{len(self.hidden)}"
        return ",".join(str(w) for w in self.hidden) or "linear"

    def __str__(self):
        return self.name


def parse_arch(text: str, input_dim: int) -> Architecture:
    """Parse ``"w^l"`` (``l`` hidden layers of width ``w``) or ``"w1,w2,..."``."""
    text = str(text).strip()
    m = re.fullmatch(r"(\d+)\^(\d+)", text)
    if m:
        return Architecture(input_dim, (int(m.group(1)),) * int(m.group(2)))
    if text == "linear":
        return Architecture(input_dim, ())
    if re.fullmatch(r"\d+(,\d+)*", text):
        return Architecture(input_dim, tuple(int(w) for w in text.split(",")))
    raise ValueError(f"cannot parse architecture {text!r}; expected 'w^l' such as '10^2'")


def unpack(arch: Architecture, theta: np.ndarray) -> list:
    """Split a flat vector into ``[(W1, b1), ..., (W_{l+1}, None)]`` views."""
    theta = np.asarray(theta, dtype=float)
    if theta.shape != (arch.d,):
        raise ValueError(f"parameter vector has shape {theta.shape}, architecture needs ({arch.d},)")
    w = arch.widths
    layers, pos = [], 0
    for i in range(len(w) - 1):
        n_in, n_out = w[i], w[i + 1]
        W = theta[pos:pos + n_in * n_out].reshape(n_out, n_in)
        pos += n_in * n_out
        if i < len(w) - 2:
            b = theta[pos:pos + n_out]
            pos += n_out
        else:
            b = None
        layers.append((W, b))
    return layers


def pack(layers) -> np.ndarray:
    parts = []
    for W, b in layers:
        parts.append(np.asarray(W, dtype=float).ravel())
        if b is not None:
            parts.append(np.asarray(b, dtype=float).ravel())
    return np.concatenate(parts)


def _as_batch(arch, x):
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    X = x[None, :] if single else x
    if X.ndim != 2 or X.shape[1] != arch.input_dim:
        raise ValueError(f"input has shape {x.shape}, architecture expects {arch.input_dim} features")
    return X, single


def _forward_cache(layers, X):
    acts, pre = [X], []
    h = X
    for W, b in layers[:-1]:
        z = h @ W.T + b
        pre.append(z)
        h = np.maximum(z, 0.0)
        acts.append(h)
    out = (h @ layers[-1][0].T)[:, 0]
    return out, acts, pre


def forward(arch: Architecture, theta, x):
    """Network output for one input vector (scalar) or a batch (vector)."""
    X, single = _as_batch(arch, x)
    out, _, _ = _forward_cache(unpack(arch, theta), X)
    return float(out[0]) if single else out


def _backprop(arch, layers, acts, pre, g):
    """Flat gradient of ``sum_n g[n] * h(X_n)``."""
    grads = [None] * len(layers)
    delta = g[:, None]  # (n, 1)
    for i in range(len(layers) - 1, -1, -1):
        W, b = layers[i]
        gW = delta.T @ acts[i]
        gb = None if b is None else delta.sum(axis=0)
        grads[i] = (gW, gb)
        if i > 0:
            delta = (delta @ W) * (pre[i - 1] > 0.0)
    return pack(grads)


def output_gradient(arch: Architecture, theta, x) -> np.ndarray:
    """Gradient of ``h_theta(x)`` with respect to ``theta`` for a single input."""
    X, _ = _as_batch(arch, x)
    layers = unpack(arch, theta)
    _, acts, pre = _forward_cache(layers, X)
    return _backprop(arch, layers, acts, pre, np.ones(1))


def backward(arch: Architecture, theta, x, y, epsilon: float, return_loss: bool = False):
    """Gradient of the truncated absolute loss ``min(|h(x) - y|, epsilon)``.

    For a batch the loss is averaged over rows. Subgradient 0 is used at the
    kinks ``|h - y| = 0`` and ``|h - y| = epsilon`` and for ReLU at 0.
    """
    X, single = _as_batch(arch, x)
    Y = np.atleast_1d(np.asarray(y, dtype=float))
    if Y.shape != (X.shape[0],):
        raise ValueError("targets do not match the number of inputs")
    layers = unpack(arch, theta)
    out, acts, pre = _forward_cache(layers, X)
    diff = out - Y
    ad = np.abs(diff)
    g = np.where((ad > 0.0) & (ad < epsilon), np.sign(diff), 0.0) / X.shape[0]
    grad = _backprop(arch, layers, acts, pre, g)
    if return_loss:
        return grad, float(np.mean(np.minimum(ad, epsilon)))
    return grad


POWER_BLOCK = 4


def _start_block(n: int, b: int) -> np.ndarray:
    k = np.arange(n)[:, None]
    j = np.arange(b)[None, :]
    V = 1.0 + 0.5 * np.cos(0.7 * (k + 1) * (j + 1) + j)
    return np.linalg.qr(V)[0]


def spectral_norm(W, tol: float = POWER_ITER_TOL, max_iter: int = POWER_ITER_MAX):
    """Largest singular value by block power iteration on ``W^T W``.

    A block of up to ``POWER_BLOCK`` vectors is iterated from a fixed start
    and the estimate is the top singular value of ``W V`` (Rayleigh-Ritz).
    The block makes convergence depend on the gap to the fifth singular
    value rather than the second, so nearly tied leading values converge.
    ``W`` may carry leading batch dimensions; the result then has that shape.
    """
    W = np.asarray(W, dtype=float)
    batch = W.shape[:-2]
    if W.shape[-1] == 1 or W.shape[-2] == 1:
        return np.linalg.norm(W.reshape(*batch, -1), axis=-1) if batch else float(np.linalg.norm(W))
    n = W.shape[-1]
    b = min(POWER_BLOCK, n, W.shape[-2])
    V = np.broadcast_to(_start_block(n, b), batch + (n, b)).copy()
    sigma = np.zeros(batch)
    Wt = np.swapaxes(W, -1, -2)
    for _ in range(max_iter):
        U = W @ V
        new_sigma = np.linalg.norm(U, ord=2, axis=(-2, -1)) if b > 1 else np.linalg.norm(U[..., 0], axis=-1)
        converged = np.abs(new_sigma - sigma) <= tol * np.maximum(new_sigma, np.finfo(float).tiny)
        sigma = new_sigma
        if np.all(converged | (new_sigma == 0.0)):
            break
        V = np.linalg.qr(Wt @ U)[0]
    return sigma if batch else float(sigma)


def lipschitz_bound(arch: Architecture, theta) -> float:
    """Product of the spectral norms of all weight matrices."""
    out = 1.0
    for W, _ in unpack(arch, theta):
        out *= spectral_norm(W)
    return float(out)


def softplus(x):
    return np.logaddexp(0.0, x)


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


@dataclass
class GaussianPosterior:
    """``N(mu, diag(kappa))`` with ``kappa = softplus(raw_kappa)^2``."""

    mu: np.ndarray
    raw_kappa: np.ndarray

    def __post_init__(self):
        self.mu = np.asarray(self.mu, dtype=float)
        self.raw_kappa = np.asarray(self.raw_kappa, dtype=float)
        if self.mu.shape != self.raw_kappa.shape or self.mu.ndim != 1:
            raise ValueError("mu and raw_kappa must be vectors of equal length")

    @classmethod
    def initial(cls, d: int, kappa0: float = KAPPA0) -> "GaussianPosterior":
        raw = math.log(math.expm1(math.sqrt(kappa0)))
        return cls(np.zeros(d), np.full(d, raw))

    @property
    def d(self) -> int:
        return self.mu.size

    @property
    def std(self) -> np.ndarray:
        return softplus(self.raw_kappa)

    @property
    def kappa(self) -> np.ndarray:
        return self.std ** 2

    def std_grad(self) -> np.ndarray:
        """``d sqrt(kappa) / d raw_kappa``."""
        return _sigmoid(self.raw_kappa)

    def copy(self) -> "GaussianPosterior":
        return GaussianPosterior(self.mu.copy(), self.raw_kappa.copy())


@dataclass(frozen=True)
class ReferenceDistribution:
    """Isotropic reference law ``N(0, variance * I)``."""

    variance: float

    def __post_init__(self):
        if not self.variance > 0:
            raise ValueError(f"reference variance must be positive, got {self.variance}")

    @classmethod
    def from_precision(cls, s: float) -> "ReferenceDistribution":
        """Reference ``N(0, I / s)``: the grid value ``s`` is a precision."""
        return cls(1.0 / float(s))

    @property
    def precision(self) -> float:
        return 1.0 / self.variance


def kl(rho: GaussianPosterior, pi: ReferenceDistribution) -> float:
    """``KL(rho, pi) = 1/2 sum(log(v / kappa) - 1 + kappa / v + mu^2 / v)``."""
    v = pi.variance
    std = rho.std
    kappa = std * std
    return float(0.5 * np.sum(np.log(v) - 2.0 * np.log(std) - 1.0 + kappa / v + rho.mu ** 2 / v))


def kl_grad(rho: GaussianPosterior, pi: ReferenceDistribution):
    """Gradient of :func:`kl` with respect to ``(mu, raw_kappa)``."""
    v = pi.variance
    std = rho.std
    d_std = -1.0 / std + std / v
    return rho.mu / v, d_std * rho.std_grad()


def sample_theta(rho: GaussianPosterior, rng: np.random.Generator):
    """One reparameterized draw; returns ``(theta, eps)``."""
    eps = rng.standard_normal(rho.d)
    return rho.mu + rho.std * eps, eps


def mc_lip_reference(arch: Architecture, pi: ReferenceDistribution, n: int = 1000,
                     rng: np.random.Generator | None = None, chunk: int = 100) -> float:
    """Monte Carlo mean of :func:`lipschitz_bound` over ``theta ~ pi``.

    Only weight matrices enter the bound, so only they are drawn; each draw
    is a standard normal matrix scaled by ``sqrt(variance)``.
    """
    if n < 1:
        raise ValueError("need at least one draw")
    rng = np.random.default_rng(0) if rng is None else rng
    w = arch.widths
    prod = np.ones(n)
    for i in range(len(w) - 1):
        norms = np.empty(n)
        for s in range(0, n, chunk):
            k = min(chunk, n - s)
            norms[s:s + k] = spectral_norm(rng.standard_normal((k, w[i + 1], w[i])))
        prod *= norms
    return float(np.mean(prod) * pi.variance ** (arch.n_layers / 2.0))


@lru_cache(maxsize=256)
def _mc_lip_cached(input_dim, hidden, variance, n, seed):
    from .rng import derive_rng
    return mc_lip_reference(Architecture(input_dim, hidden), ReferenceDistribution(variance), n,
                            derive_rng(seed, "mc_lip"))


def mc_lip_cached(arch: Architecture, pi: ReferenceDistribution, n: int = 1000, seed: int = 0) -> float:
    """:func:`mc_lip_reference` memoized per ``(arch, variance, n, seed)``."""
    return _mc_lip_cached(arch.input_dim, arch.hidden, float(pi.variance), int(n), int(seed))
