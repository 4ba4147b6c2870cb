"""Ensemble forecasts from trained weight posteriors, and their causal footprint."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .embedding import EmbeddingPlan, FeatureSet, Role
from .network import forward, sample_theta
from .rng import derive_rng

__all__ = [
    "ForecastError",
    "EnsembleForecast",
    "InferenceInputs",
    "generate_ensemble",
    "causal_footprint",
    "save_ensemble",
    "load_ensemble",
]


class ForecastError(ValueError):
    pass


@dataclass
class EnsembleForecast:
    """``members[j, h, r]``: member ``j`` at horizon ``h`` for position ``positions[r]``."""

    members: np.ndarray
    observations: np.ndarray
    start: int
    a: int
    positions: list
    t0: float = 0.0
    h_t: float = 1.0

    def __post_init__(self):
        self.members = np.asarray(self.members, dtype=float)
        self.observations = np.asarray(self.observations, dtype=float)
        J, H1, R = self.members.shape
        if J < 2:
            raise ForecastError("an ensemble needs at least two members")
        if self.observations.shape != (H1, R) or len(self.positions) != R:
            raise ForecastError("observations/positions do not match the member tensor")

    @property
    def J(self) -> int:
        return self.members.shape[0]

    @property
    def H(self) -> int:
        return self.members.shape[1] - 1

    @property
    def R(self) -> int:
        return self.members.shape[2]

    @property
    def times(self) -> np.ndarray:
        return self.t0 + self.h_t * self.a * (self.start + np.arange(self.H + 1))


@dataclass
class InferenceInputs:
    """Validation and test examples of one position, addressable by example index."""

    position: int
    inputs: np.ndarray
    targets: np.ndarray
    indices: np.ndarray

    @classmethod
    def from_sets(cls, *sets: FeatureSet) -> "InferenceInputs":
        sets = [s for s in sets if len(s)]
        pos = {s.position for s in sets}
        if len(pos) != 1:
            raise ForecastError("feature sets must belong to a single position")
        if any(s.role is Role.TRAIN for s in sets):
            raise ForecastError("forecasts start from validation or test inputs only")
        idx = np.concatenate([s.time_indices for s in sets])
        order = np.argsort(idx)
        return cls(pos.pop(), np.concatenate([s.inputs for s in sets])[order],
                   np.concatenate([s.targets for s in sets])[order], idx[order])

    def rows(self, start: int, H: int) -> np.ndarray:
        want = np.arange(start, start + H + 1)
        lookup = {int(i): k for k, i in enumerate(self.indices)}
        missing = [int(i) for i in want if int(i) not in lookup]
        if missing:
            raise ForecastError(
                f"horizon out of range at position {self.position}: examples {missing[:3]} "
                f"not in validation/test (available {self.indices.min()}..{self.indices.max()})")
        return np.array([lookup[int(i)] for i in want])


def generate_ensemble(posteriors: dict, inputs: dict, start: int, H: int, J: int = 100,
                      seed: int = 0, a: int = 1, t0: float = 0.0, h_t: float = 1.0) -> EnsembleForecast:
    """J-member trajectories over horizons ``0..H`` from example ``start``.

    ``posteriors`` maps position to ``(rho, arch)``; ``inputs`` maps position
    to :class:`InferenceInputs`. Each member draws its parameters once per
    position and reuses them for every horizon; position ``r`` uses the
    stream ``derive_rng(seed, "forecast", r)``.
    """
    if J < 2:
        raise ForecastError("J must be >= 2")
    if H < 0:
        raise ForecastError("H must be >= 0")
    positions = sorted(posteriors)
    if set(positions) != set(inputs):
        raise ForecastError("posteriors and inputs cover different positions")
    members = np.empty((J, H + 1, len(positions)))
    obs = np.empty((H + 1, len(positions)))
    for col, pos in enumerate(positions):
        rho, arch = posteriors[pos]
        inp = inputs[pos]
        if inp.inputs.shape[1] != arch.input_dim or rho.d != arch.d:
            raise ForecastError(f"posterior/feature architecture mismatch at position {pos}")
        rows = inp.rows(start, H)
        X = inp.inputs[rows]
        obs[:, col] = inp.targets[rows]
        rng = derive_rng(seed, "forecast", pos)
        for j in range(J):
            theta, _ = sample_theta(rho, rng)
            members[j, :, col] = forward(arch, theta, X)
    return EnsembleForecast(members, obs, start, a, positions, t0, h_t)


def causal_footprint(i: int, plan: EmbeddingPlan, x_star: int, P: int,
                     horizon: int | None = None) -> list[tuple[int, int]]:
    """Grid points lying in the future cones of every input coordinate of example ``i``.

    Times are in raster steps (the target of example ``i`` is at ``i * a``);
    the search runs up to ``horizon`` steps past the target (default ``a``).
    """
    horizon = plan.a if horizon is None else horizon
    t_target = i * plan.a
    tmpl = plan.template(x_star, P)
    pts = [(t_target + dt, x) for dt, x in tmpl]
    t_first = max(t for t, _ in pts) + 1
    out = []
    for t in range(t_first, t_target + horizon + 1):
        for x in range(P):
            if all(abs(x - xs) <= plan.c * (t - ts) + 1e-9 for ts, xs in pts):
                out.append((t, x))
    assert (t_target, x_star) in out, "forecast target outside the causal footprint"
    return out


def save_ensemble(ens: EnsembleForecast, path) -> Path:
    """CSV ``position,horizon,member,value,observation`` plus a JSON sidecar."""
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["position", "horizon", "member", "value", "observation"])
        for col, pos in enumerate(ens.positions):
            for h in range(ens.H + 1):
                y = repr(float(ens.observations[h, col]))
                for j in range(ens.J):
                    w.writerow([pos, h, j, repr(float(ens.members[j, h, col])), y])
    meta = {"start": ens.start, "a": ens.a, "J": ens.J, "H": ens.H, "positions": list(ens.positions),
            "t0": ens.t0, "h_t": ens.h_t}
    path.with_suffix(".json").write_text(json.dumps(meta, indent=2) + "\n", encoding="utf-8")
    return path


def load_ensemble(path) -> EnsembleForecast:
    path = Path(path)
    with path.open("r", newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        rows = list(reader)
    if not rows or not {"position", "horizon", "member", "value", "observation"} <= set(reader.fieldnames or []):
        raise ForecastError(f"malformed ensemble file {path}")
    positions = sorted({int(r["position"]) for r in rows})
    H = max(int(r["horizon"]) for r in rows)
    J = max(int(r["member"]) for r in rows) + 1
    col = {p: k for k, p in enumerate(positions)}
    members = np.full((J, H + 1, len(positions)), np.nan)
    obs = np.full((H + 1, len(positions)), np.nan)
    for r in rows:
        k, h, j = col[int(r["position"])], int(r["horizon"]), int(r["member"])
        members[j, h, k] = float(r["value"])
        obs[h, k] = float(r["observation"])
    if np.isnan(members).any():
        raise ForecastError(f"ensemble file {path} is missing (position, horizon, member) cells")
    meta_path = path.with_suffix(".json")
    meta = json.loads(meta_path.read_text(encoding="utf-8")) if meta_path.exists() else {}
    return EnsembleForecast(members, obs, int(meta.get("start", 0)), int(meta.get("a", 1)), positions,
                            float(meta.get("t0", 0.0)), float(meta.get("h_t", 1.0)))
