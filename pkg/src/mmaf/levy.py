"""Homogeneous Levy bases with zero mean: Gaussian and normal inverse Gaussian."""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

__all__ = [
    "LevyKind",
    "LevyBasisSpec",
    "variance_rate",
    "mean_rate",
    "sample_cell",
    "sample_cells",
    "inverse_gaussian",
]


class LevyKind(str, Enum):
    GAUSSIAN = "Gaussian"
    NIG = "NIG"


@dataclass(frozen=True)
class LevyBasisSpec:
    """Law of the basis value of a unit-area cell.

    Gaussian uses ``sigma2`` (variance per unit area). NIG uses ``alpha``,
    ``beta`` and ``delta`` (scale per unit area); the location is not free,
    it is forced to ``-delta * beta / gamma`` so the basis has mean zero.
    """

    kind: LevyKind = LevyKind.GAUSSIAN
    sigma2: float = 1.0
    alpha: float = 1.0
    beta: float = 0.0
    delta: float = 1.0

    def __post_init__(self):
        kind = LevyKind(self.kind)
        object.__setattr__(self, "kind", kind)
        if kind is LevyKind.GAUSSIAN:
            if not self.sigma2 > 0:
                raise ValueError(f"Gaussian basis needs sigma2 > 0, got {self.sigma2}")
        else:
            if not (self.alpha > abs(self.beta) and self.delta > 0):
                raise ValueError(
                    f"NIG basis needs alpha > |beta| and delta > 0, got "
                    f"alpha={self.alpha}, beta={self.beta}, delta={self.delta}")

    @classmethod
    def gaussian(cls, sigma2: float = 1.0) -> "LevyBasisSpec":
        return cls(LevyKind.GAUSSIAN, sigma2=sigma2)

    @classmethod
    def nig(cls, alpha: float = 1.0, beta: float = 0.0, delta: float = 1.0) -> "LevyBasisSpec":
        return cls(LevyKind.NIG, alpha=alpha, beta=beta, delta=delta)

    @property
    def gamma_nig(self) -> float:
        return math.sqrt(self.alpha ** 2 - self.beta ** 2)

    @property
    def location_rate(self) -> float:
        if self.kind is LevyKind.GAUSSIAN:
            return 0.0
        return -self._drift()

    def _drift(self) -> float:
        return self.delta * self.beta / self.gamma_nig

    def to_dict(self) -> dict:
        d = {"levy.kind": self.kind.value}
        if self.kind is LevyKind.GAUSSIAN:
            d["levy.sigma2"] = self.sigma2
        else:
            d.update({"levy.alpha": self.alpha, "levy.beta": self.beta, "levy.delta": self.delta})
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "LevyBasisSpec":
        kind = LevyKind(d.get("levy.kind", "Gaussian"))
        if kind is LevyKind.GAUSSIAN:
            return cls.gaussian(float(d.get("levy.sigma2", 1.0)))
        return cls.nig(float(d.get("levy.alpha", 1.0)), float(d.get("levy.beta", 0.0)),
                       float(d.get("levy.delta", 1.0)))


def variance_rate(spec: LevyBasisSpec) -> float:
    """Variance of the basis per unit area."""
    if spec.kind is LevyKind.GAUSSIAN:
        return float(spec.sigma2)
    return spec.delta * spec.alpha ** 2 / spec.gamma_nig ** 3


def mean_rate(spec: LevyBasisSpec) -> float:
    if spec.kind is LevyKind.GAUSSIAN:
        return 0.0
    # location + beta * E[mixing]; both terms are the same float, so this is 0.0
    return spec.location_rate + spec._drift()


def inverse_gaussian(mean, shape, rng: np.random.Generator, size=None) -> np.ndarray:
    """Inverse Gaussian draws by the Michael-Schucany-Haas transformation."""
    mean = np.asarray(mean, dtype=float)
    shape = np.asarray(shape, dtype=float)
    if size is None:
        size = np.broadcast(mean, shape).shape
    nu = rng.standard_normal(size)
    u = rng.random(size)
    y = nu * nu
    my = mean * y
    x = mean + mean * my / (2 * shape) - mean / (2 * shape) * np.sqrt(4 * shape * my + my * my)
    # the smaller root can underflow to ~0 for extreme y; keep it positive
    x = np.maximum(x, np.finfo(float).tiny)
    return np.where(u <= mean / (mean + x), x, mean * mean / x)


def sample_cells(spec: LevyBasisSpec, area, rng: np.random.Generator, size=None) -> np.ndarray:
    """Basis values of independent cells of the given area(s)."""
    area = np.asarray(area, dtype=float)
    if np.any(area <= 0):
        raise ValueError("cell area must be positive")
    if size is None:
        size = area.shape
    if spec.kind is LevyKind.GAUSSIAN:
        return np.sqrt(spec.sigma2 * area) * rng.standard_normal(size)
    delta_b = spec.delta * area
    z = inverse_gaussian(delta_b / spec.gamma_nig, delta_b * delta_b, rng, size)
    eps = rng.standard_normal(size)
    return spec.location_rate * area + spec.beta * z + np.sqrt(z) * eps


def sample_cell(spec: LevyBasisSpec, area: float, rng: np.random.Generator) -> float:
    """Basis value of a single cell of the given area."""
    if not area > 0:
        raise ValueError(f"cell area must be positive, got {area}")
    return float(sample_cells(spec, area, rng, size=()))
