"""Forecast verification: RMSE, ensemble CRPS, randomized PIT and interval coverage."""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy import stats

from .forecast import EnsembleForecast
from .rng import derive_rng

__all__ = [
    "DEFAULT_LEVELS",
    "EvaluationReport",
    "rmse",
    "crps",
    "crps_ensemble",
    "pit",
    "pit_values",
    "pit_histogram",
    "pit_uniformity_pvalue",
    "coverage",
    "evaluate",
    "save_report",
    "write_plot_data",
]

DEFAULT_LEVELS = (10, 20, 30, 40, 50, 60, 70, 80, 90, 95)


def rmse(ens: EnsembleForecast, position) -> float:
    """Root mean squared member error over all horizons at one position."""
    col = list(ens.positions).index(position)
    err = ens.members[:, :, col] - ens.observations[None, :, col]
    return float(np.sqrt(np.mean(err * err)))


def crps_ensemble(members, y) -> np.ndarray:
    """Ensemble CRPS along the first axis of ``members``, broadcast against ``y``.

    The pairwise term uses the sorted-sample identity
    ``sum_jk |x_j - x_k| = 2 sum_k (2k - J - 1) x_(k)``.
    """
    x = np.asarray(members, dtype=float)
    J = x.shape[0]
    y = np.asarray(y, dtype=float)
    abs_err = np.mean(np.abs(x - y), axis=0)
    xs = np.sort(x, axis=0)
    w = (2.0 * np.arange(1, J + 1) - J - 1).reshape((J,) + (1,) * (x.ndim - 1))
    spread = np.sum(w * xs, axis=0) / (J * J)
    return np.maximum(abs_err - spread, 0.0)


def crps(members, y: float) -> float:
    return float(crps_ensemble(np.asarray(members, dtype=float).reshape(-1), y))


def pit(members, y: float, rng: np.random.Generator) -> float:
    """Randomized rank ``(#{x < y} + U (1 + #{x = y})) / (J + 1)``."""
    x = np.asarray(members, dtype=float).reshape(-1)
    below = np.count_nonzero(x < y)
    ties = np.count_nonzero(x == y)
    return float((below + rng.uniform() * (1 + ties)) / (x.size + 1))


def pit_values(ens: EnsembleForecast, rng: np.random.Generator) -> np.ndarray:
    """PIT per (horizon, position), computed position-major."""
    out = np.empty((ens.H + 1, ens.R))
    for r in range(ens.R):
        for h in range(ens.H + 1):
            out[h, r] = pit(ens.members[:, h, r], ens.observations[h, r], rng)
    return out


def pit_histogram(values, bins: int = 10) -> np.ndarray:
    counts, _ = np.histogram(np.asarray(values, dtype=float).reshape(-1), bins=bins, range=(0.0, 1.0))
    return counts


def pit_uniformity_pvalue(values, bins: int = 10) -> float:
    """Chi-square goodness-of-fit p-value of the PIT histogram against uniform."""
    return float(stats.chisquare(pit_histogram(values, bins)).pvalue)


def coverage(ens: EnsembleForecast, levels=DEFAULT_LEVELS) -> dict:
    """Fraction of observations inside the central ``q%`` interval of the members."""
    out = {}
    for q in levels:
        lo_p, hi_p = (1.0 - q / 100.0) / 2.0, (1.0 + q / 100.0) / 2.0
        lo, hi = np.quantile(ens.members, [lo_p, hi_p], axis=0)
        inside = (ens.observations >= lo) & (ens.observations <= hi)
        out[q] = float(np.mean(inside))
    return out


@dataclass
class EvaluationReport:
    positions: list
    rmse: dict
    rmse_mean: float
    crps: list
    crps_by_position: dict
    crps_mean: float
    pit: list
    pit_hist: list
    pit_chi2_pvalue: float
    coverage: dict
    J: int
    H: int
    start: int
    n_cases: int = field(init=False)

    def __post_init__(self):
        self.n_cases = len(self.positions) * (self.H + 1)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["coverage"] = {str(k): v for k, v in self.coverage.items()}
        d["rmse"] = {str(k): v for k, v in self.rmse.items()}
        d["crps_by_position"] = {str(k): v for k, v in self.crps_by_position.items()}
        return d


def evaluate(ens: EnsembleForecast, seed: int = 0, levels=DEFAULT_LEVELS, bins: int = 10) -> EvaluationReport:
    """All verification scores with the table averaging conventions.

    CRPS is averaged over horizons and then positions; RMSE is computed per
    position over horizons and members, then averaged over positions.
    """
    crps_hr = crps_ensemble(ens.members, ens.observations)
    r_by_pos = {p: rmse(ens, p) for p in ens.positions}
    c_by_pos = {p: float(np.mean(crps_hr[:, k])) for k, p in enumerate(ens.positions)}
    pv = pit_values(ens, derive_rng(seed, "pit"))
    return EvaluationReport(
        positions=list(ens.positions),
        rmse=r_by_pos,
        rmse_mean=float(np.mean(list(r_by_pos.values()))),
        crps=crps_hr.tolist(),
        crps_by_position=c_by_pos,
        crps_mean=float(np.mean(list(c_by_pos.values()))),
        pit=pv.tolist(),
        pit_hist=pit_histogram(pv, bins).tolist(),
        pit_chi2_pvalue=pit_uniformity_pvalue(pv, bins),
        coverage=coverage(ens, levels),
        J=ens.J, H=ens.H, start=ens.start,
    )


def save_report(report: EvaluationReport, path) -> Path:
    path = Path(path)
    path.write_text(json.dumps(report.to_dict(), indent=2) + "\n", encoding="utf-8")
    return path


def write_plot_data(ens: EnsembleForecast, report: EvaluationReport, directory) -> list[Path]:
    """CSV tables for external plotting: PIT bins, coverage, per-horizon quantile bands."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = []
    bins = len(report.pit_hist)
    p = directory / "pit_hist.csv"
    with p.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["bin_lo", "bin_hi", "count"])
        for b, n in enumerate(report.pit_hist):
            w.writerow([b / bins, (b + 1) / bins, n])
    paths.append(p)
    p = directory / "coverage.csv"
    with p.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["level", "nominal", "empirical"])
        for q, v in report.coverage.items():
            w.writerow([q, q / 100.0, v])
    paths.append(p)
    p = directory / "quantile_bands.csv"
    qs = [0.05, 0.25, 0.5, 0.75, 0.95]
    band = np.quantile(ens.members, qs, axis=0)
    with p.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["position", "horizon", "time", "observation"] + [f"q{int(q * 100):02d}" for q in qs])
        times = ens.times
        for k, pos in enumerate(ens.positions):
            for h in range(ens.H + 1):
                w.writerow([pos, h, times[h], ens.observations[h, k]] + [band[i, h, k] for i in range(len(qs))])
    paths.append(p)
    return paths
