"""Cone-shaped feature embedding and chronological train/validation/test split."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np

from .raster import RasterSeries

__all__ = [
    "EmbeddingError",
    "EmbeddingPlan",
    "FeatureSet",
    "Role",
    "select_a",
    "stride_rule_holds",
    "cone_halfwidths",
    "build_index_template",
    "interior_positions",
    "make_plan",
    "extract_features",
    "save_features",
    "load_features",
    "save_plan",
    "load_plan",
]

# guards floor(c * tau) against c * tau landing a hair below an integer
_FLOOR_EPS = 1e-9


class EmbeddingError(ValueError):
    pass


class Role(str, Enum):
    TRAIN = "train"
    VALIDATION = "validation"
    TEST = "test"


def stride_rule_holds(lam: float, p: int, epsilon: float, delta: float, a: int, m: int) -> bool:
    return m >= 1 and math.exp(-lam * (a - p)) <= delta / (2.0 * m * epsilon)


def select_a(lam: float, p: int, epsilon: float, delta: float, N: int,
             n_test: int) -> tuple[int, int]:
    """Smallest stride ``a >= p + 1`` whose dependence decay clears the PAC budget.

    ``m(a) = floor(N / a) - n_test - 1``. The left side ``exp(-lam (a - p))``
    falls and the right side ``delta / (2 m(a) epsilon)`` rises with ``a``, so
    the first feasible ``a`` of the upward scan is the minimum.
    """
    if lam <= 0:
        raise EmbeddingError(f"decay rate must be positive, got {lam}")
    a_max = N // (n_test + 2)
    for a in range(p + 1, a_max + 1):
        m = N // a - n_test - 1
        if stride_rule_holds(lam, p, epsilon, delta, a, m):
            return a, m
    raise EmbeddingError(
        f"series too short for dependence decay: no stride a in [{p + 1}, {a_max}] "
        f"satisfies the rule for N={N}, n_test={n_test}, lambda={lam:.6g}")


def cone_halfwidths(c_grid: float, p: int) -> list[int]:
    """Number of grid steps the cone reaches at each depth ``tau = 1..p``."""
    return [int(math.floor(c_grid * tau + _FLOOR_EPS)) for tau in range(1, p + 1)]


def build_index_template(x_star: int, c: float, p: int, P: int) -> list[tuple[int, int]]:
    """Lex-ordered ``(time offset, position index)`` pairs of the past cone at ``x_star``.

    ``c`` is in grid units per time step.
    """
    widths = cone_halfwidths(c, p)
    if x_star - widths[-1] < 0 or x_star + widths[-1] > P - 1:
        raise EmbeddingError(
            f"cone exceeds raster; position excluded (x*={x_star}, reach={widths[-1]}, P={P})")
    out = []
    for tau in range(p, 0, -1):
        w = widths[tau - 1]
        out.extend((-tau, x) for x in range(x_star - w, x_star + w + 1))
    return out


def interior_positions(c: float, p: int, P: int) -> list[int]:
    reach = cone_halfwidths(c, p)[-1]
    return list(range(reach, P - reach))


@dataclass(frozen=True)
class EmbeddingPlan:
    p: int
    c: float
    a: int
    epsilon: float
    delta: float
    n_test: int
    m: int
    D: int
    N: int
    positions_used: list = field(default_factory=list)
    lam: float = float("nan")
    n_val: int = 1
    forced_a: bool = False

    def __post_init__(self):
        if self.p < 1:
            raise EmbeddingError("past depth p must be >= 1")
        if self.a < self.p + 1:
            raise EmbeddingError(f"stride a={self.a} must be >= p + 1 = {self.p + 1}")
        if self.n_val != 1:
            raise EmbeddingError("the validation set has exactly one example")
        if self.m != self.N // self.a - self.n_test - self.n_val or self.m < 1:
            raise EmbeddingError(
                f"inconsistent split: m={self.m}, floor(N/a)={self.N // self.a}, n_test={self.n_test}")

    @property
    def n_examples(self) -> int:
        return self.N // self.a

    @property
    def rule_satisfied(self) -> bool:
        return stride_rule_holds(self.lam, self.p, self.epsilon, self.delta, self.a, self.m)

    @property
    def validation_index(self) -> int:
        return self.m + 1

    @property
    def test_indices(self) -> list[int]:
        return list(range(self.m + 2, self.n_examples + 1))

    def template(self, x_star: int, P: int) -> list[tuple[int, int]]:
        return build_index_template(x_star, self.c, self.p, P)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["rule_satisfied"] = self.rule_satisfied
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "EmbeddingPlan":
        keys = ("p", "c", "a", "epsilon", "delta", "n_test", "m", "D", "N",
                "positions_used", "lam", "n_val", "forced_a")
        return cls(**{k: d[k] for k in keys if k in d})


def make_plan(c: float, lam: float, N: int, P: int, *, p: int = 1, epsilon: float = 3.0,
              delta: float = 0.025, n_test: int = 0, force_a: int | None = None) -> EmbeddingPlan:
    """Embedding plan for an ``N x P`` raster; ``c`` in grid units per step."""
    if force_a is None:
        a, m = select_a(lam, p, epsilon, delta, N, n_test)
    else:
        a = int(force_a)
        if a < p + 1:
            raise EmbeddingError(f"forced stride a={a} must be >= p + 1 = {p + 1}")
        m = N // a - n_test - 1
        if m < 1:
            raise EmbeddingError(f"forced stride a={a} leaves no training examples")
    D = sum(2 * w + 1 for w in cone_halfwidths(c, p))
    positions = interior_positions(c, p, P)
    if not positions:
        raise EmbeddingError("cone exceeds raster; position excluded (no interior positions)")
    return EmbeddingPlan(p=p, c=float(c), a=a, epsilon=float(epsilon), delta=float(delta),
                         n_test=int(n_test), m=m, D=D, N=N, positions_used=positions,
                         lam=float(lam), forced_a=force_a is not None)


@dataclass(frozen=True)
class FeatureSet:
    position: int
    inputs: np.ndarray
    targets: np.ndarray
    role: Role
    time_indices: np.ndarray

    def __post_init__(self):
        inputs = np.asarray(self.inputs, dtype=float)
        if inputs.ndim != 2:
            raise EmbeddingError("inputs must be a matrix")
        targets = np.asarray(self.targets, dtype=float).reshape(-1)
        idx = np.asarray(self.time_indices, dtype=int).reshape(-1)
        if inputs.shape[0] != targets.size or idx.size != targets.size:
            raise EmbeddingError("inputs, targets and time indices disagree in length")
        object.__setattr__(self, "inputs", inputs)
        object.__setattr__(self, "targets", targets)
        object.__setattr__(self, "time_indices", idx)
        object.__setattr__(self, "role", Role(self.role))

    def __len__(self) -> int:
        return self.targets.size

    @property
    def D(self) -> int:
        return self.inputs.shape[1]

    def row(self, i: int) -> int:
        """Row holding example ``i`` (1-based example index)."""
        hits = np.flatnonzero(self.time_indices == i)
        if hits.size == 0:
            raise EmbeddingError(f"example {i} not in the {self.role.value} set")
        return int(hits[0])


def extract_features(r: RasterSeries, plan: EmbeddingPlan, x_star: int):
    """Input/target pairs at ``x_star``, split into (train, validation, test).

    Example ``i`` targets time ``t0 + i a`` (raster row ``i a - 1``); its
    inputs are the raster values on the past-cone template below that time.
    """
    if r.N != plan.N:
        raise EmbeddingError(f"plan built for N={plan.N}, raster has N={r.N}")
    tmpl = plan.template(x_star, r.P)
    dt = np.array([o[0] for o in tmpl])
    cols = np.array([o[1] for o in tmpl])
    n = plan.n_examples
    i = np.arange(1, n + 1)
    target_rows = i * plan.a - 1
    rows = target_rows[:, None] + dt[None, :]
    assert rows.min() >= 0 and target_rows.max() < r.N
    X = r.values[rows, cols[None, :]]
    Y = r.values[target_rows, x_star]
    m = plan.m
    parts = ((Role.TRAIN, slice(0, m)), (Role.VALIDATION, slice(m, m + 1)), (Role.TEST, slice(m + 1, n)))
    return tuple(FeatureSet(x_star, X[s], Y[s], role, i[s]) for role, s in parts)


def _feature_path(directory: Path, position: int, role: Role) -> Path:
    return directory / f"pos{position:04d}_{Role(role).value}.csv"


def save_features(directory, sets) -> list[Path]:
    """Write one CSV per (position, role): ``i,x_1..x_D,y``."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = []
    for fs in sets:
        path = _feature_path(directory, fs.position, fs.role)
        with path.open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["i"] + [f"x_{k + 1}" for k in range(fs.D)] + ["y"])
            for idx, x, y in zip(fs.time_indices, fs.inputs, fs.targets):
                w.writerow([int(idx)] + [repr(float(v)) for v in x] + [repr(float(y))])
        paths.append(path)
    return paths


def load_features(directory, position: int, role) -> FeatureSet:
    path = _feature_path(Path(directory), position, Role(role))
    if not path.exists():
        raise EmbeddingError(f"feature file not found: {path}")
    with path.open("r", newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    D = len(header) - 2
    if D < 1 or header[0] != "i" or header[-1] != "y":
        raise EmbeddingError(f"malformed feature header in {path}")
    data = np.array([[float(v) for v in row[1:]] for row in body]).reshape(-1, D + 1)
    idx = np.array([int(row[0]) for row in body], dtype=int)
    return FeatureSet(position, data[:, :D], data[:, D], Role(role), idx)


def save_plan(plan: EmbeddingPlan, path) -> Path:
    path = Path(path)
    path.write_text(json.dumps(plan.to_dict(), indent=2) + "\n", encoding="utf-8")
    return path


def load_plan(path) -> EmbeddingPlan:
    return EmbeddingPlan.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))
