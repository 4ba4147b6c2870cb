"""Moment estimation of the STOU parameters from normalized variograms."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .raster import RasterSeries

__all__ = [
    "EstimationError",
    "EstimatedParams",
    "empirical_variance",
    "temporal_variogram",
    "spatial_variogram",
    "estimate_params",
    "params_from_variograms",
    "plug_in_lambda",
    "theta_lex_decay",
    "save_params",
    "load_params",
]


class EstimationError(ValueError):
    pass


@dataclass(frozen=True)
class EstimatedParams:
    A_star: float
    c_star: float
    lambda_star: float
    k2_hat: float
    tau: float = 1
    u: float = 1

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "EstimatedParams":
        return cls(**{k: d[k] for k in ("A_star", "c_star", "lambda_star", "k2_hat", "tau", "u")})


def empirical_variance(r: RasterSeries) -> float:
    """``sum(Z^2) / (N P - 1)``; the raster is taken as already zero-mean."""
    z = r.values
    if z.size < 2:
        raise EstimationError("empirical variance needs at least two observations")
    k2 = float(np.sum(z * z)) / (z.size - 1)
    if k2 <= 0.0:
        raise EstimationError("zero variance: raster is identically zero")
    return k2


def _k2(r, k2_hat):
    return empirical_variance(r) if k2_hat is None else float(k2_hat)


def temporal_variogram(r: RasterSeries, s: int, k2_hat: float | None = None) -> float:
    """Normalized temporal variogram at integer lag ``s`` (time steps)."""
    s = int(s)
    if not 1 <= s < r.N:
        raise EstimationError(f"temporal lag must satisfy 1 <= s < N={r.N}, got {s}")
    k2 = _k2(r, k2_hat)
    if k2 <= 0:
        raise EstimationError("normalized variogram needs k2_hat > 0")
    d = r.values[s:] - r.values[:-s]
    return float(np.mean(d * d)) / k2


def spatial_variogram(r: RasterSeries, u: int, k2_hat: float | None = None) -> float:
    """Normalized spatial variogram at integer lag ``u`` (grid units)."""
    u = int(u)
    if not 1 <= u < r.P:
        raise EstimationError(f"spatial lag must satisfy 1 <= u < P={r.P}, got {u}")
    k2 = _k2(r, k2_hat)
    if k2 <= 0:
        raise EstimationError("normalized variogram needs k2_hat > 0")
    d = r.values[:, u:] - r.values[:, :-u]
    return float(np.mean(d * d)) / k2


def plug_in_lambda(A_star: float, c_star: float) -> float:
    """Decay rate of the theta-lex coefficients, ``A min(2, c) / (2 c)``."""
    return A_star * min(2.0, c_star) / (2.0 * c_star)


def theta_lex_decay(lam: float, r) -> np.ndarray | float:
    """Modelled theta-lex coefficient ``exp(-lam r)`` at distance ``r``."""
    return np.exp(-lam * np.asarray(r, dtype=float))


def params_from_variograms(gamma_t: float, gamma_s: float, tau: float = 1.0,
                           u: float = 1.0) -> tuple[float, float, float]:
    """Invert the exponential variogram models; returns ``(A*, c*, lambda*)``.

    ``tau`` is in time units and ``u`` in the same spatial units as the
    resulting ``c*``.
    """
    for name, g in (("temporal", gamma_t), ("spatial", gamma_s)):
        if not 0.0 < g < 2.0:
            raise EstimationError(
                "variogram saturation: increase data or decrease lag "
                f"({name} variogram {g:.6g} outside (0, 2))")
    A = -math.log(1.0 - gamma_t / 2.0) / tau
    c = -A * u / math.log(1.0 - gamma_s / 2.0)
    return A, c, plug_in_lambda(A, c)


def estimate_params(r: RasterSeries, tau: int = 1, u: int = 1) -> EstimatedParams:
    """Estimate ``A``, ``c`` and the theta-lex decay rate of a zero-mean raster.

    Lags are integers in raster steps; they are converted with ``h_t`` and the
    grid spacing, so ``A*`` is per time unit and ``c*`` is space per time unit.
    """
    k2 = empirical_variance(r)
    gt = temporal_variogram(r, tau, k2)
    gs = spatial_variogram(r, u, k2)
    A, c, lam = params_from_variograms(gt, gs, tau * r.h_t, u * r.dx)
    return EstimatedParams(A, c, lam, k2, tau, u)


def save_params(p: EstimatedParams, path) -> Path:
    path = Path(path)
    path.write_text(json.dumps(p.to_dict(), indent=2) + "\n", encoding="utf-8")
    return path


def load_params(path) -> EstimatedParams:
    try:
        return EstimatedParams.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))
    except (KeyError, json.JSONDecodeError) as exc:
        raise EstimationError(f"malformed params file {path}: {exc}") from None
