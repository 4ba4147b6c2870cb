"""Simulation of zero-mean spatio-temporal Ornstein-Uhlenbeck (STOU) fields.

The field at ``(t, x)`` is the integral of ``exp(-A (t - s))`` against a Levy
basis over the cone ``{s <= t, |x - xi| <= c (t - s)}``.

Discretization
--------------
Every coarse grid cell is split into ``refine x refine`` fine cells; the past
is cut at ``T = ceil(ln(1/tol) / (A dt_sub))`` fine time slabs. One basis
value is drawn per fine cell and shared by every target point.

Within a slab the kernel is integrated exactly: a fine cell carries the
variable ``V = int_cell exp(-A (s_top - s)) Lambda(ds, dxi)``, represented as
``g * Lambda(cell)`` with ``g`` chosen so that ``Var V`` is exact. A target
point weights ``V`` by the least-squares coefficient
``Cov(Z, V) / Var(V)``, which is ``exp(-A * lag_top)`` for cells fully
inside the cone and scales with the covered kernel mass for cells the cone
boundary cuts. The part of ``Z`` orthogonal to all cell variables is added
as an independent per-point draw from the same basis, so each point has the
exact variance. Because target times sit on slab edges, temporal
covariances are exact for ``refine >= 2``; spatial covariances carry an
error only through the cut cells, which vanishes as ``refine`` grows.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .levy import LevyBasisSpec, sample_cells, variance_rate
from .raster import RasterSeries
from .rng import derive_rng

__all__ = [
    "StouModel",
    "SimGrid",
    "SimulationError",
    "simulate",
    "theoretical_variance",
    "truncation_depth",
    "weight_template",
]

DEFAULT_MAX_WINDOW_BYTES = 256 * 2 ** 20
_CHUNK_ROWS = 512


class SimulationError(ValueError):
    pass


@dataclass(frozen=True)
class StouModel:
    A: float
    c: float
    basis: LevyBasisSpec = field(default_factory=LevyBasisSpec)

    def __post_init__(self):
        if not (self.A > 0 and math.isfinite(self.A)):
            raise SimulationError(f"mean-reverting rate A must be positive, got {self.A}")
        if not (self.c > 0 and math.isfinite(self.c)):
            raise SimulationError(f"propagation speed c must be positive, got {self.c}")


@dataclass(frozen=True)
class SimGrid:
    N: int
    P: int
    dt: float = 1.0
    dx: float = 1.0
    refine: int = 4
    trunc_tol: float = 1e-6
    seed: int = 0
    t0: float = 0.0
    x0: float = 0.0

    def __post_init__(self):
        if self.N < 1 or self.P < 1:
            raise SimulationError("grid needs N >= 1 and P >= 1")
        if self.refine < 1:
            raise SimulationError(f"refine must be >= 1, got {self.refine}")
        if not 0 < self.trunc_tol < 1:
            raise SimulationError(f"trunc_tol must lie in (0, 1), got {self.trunc_tol}")
        if not (self.dt > 0 and self.dx > 0):
            raise SimulationError("dt and dx must be positive")

    @property
    def dt_sub(self) -> float:
        return self.dt / self.refine

    @property
    def dx_sub(self) -> float:
        return self.dx / self.refine


def theoretical_variance(model: StouModel) -> float:
    """Stationary variance ``Var(Lambda') * c / (2 A^2)``."""
    return variance_rate(model.basis) * model.c / (2.0 * model.A ** 2)


def truncation_depth(model: StouModel, grid: SimGrid) -> int:
    return int(math.ceil(math.log(1.0 / grid.trunc_tol) / (model.A * grid.dt_sub)))


def _half_line_mass(v0, v1, l0, l1, A, c):
    """int_{v0}^{v1} int_{max(l0, v/c)}^{l1} exp(-2 A l) dl dv for 0 <= v0 <= v1."""
    E = lambda l: math.exp(-2.0 * A * l)
    total = 0.0
    a, b = v0, min(v1, c * l0)
    if b > a:
        total += (b - a) * (E(l0) - E(l1)) / (2.0 * A)
    a, b = max(v0, c * l0), min(v1, c * l1)
    if b > a:
        total += ((c / (2.0 * A)) * (E(a / c) - E(b / c)) - (b - a) * E(l1)) / (2.0 * A)
    return total


def _cone_mass(x0, x1, l0, l1, A, c):
    """Mass of ``exp(-2 A lag)`` over the cell ``[x0, x1] x [l0, l1]`` inside the cone."""
    if x0 >= 0:
        return _half_line_mass(x0, x1, l0, l1, A, c)
    if x1 <= 0:
        return _half_line_mass(-x1, -x0, l0, l1, A, c)
    return _half_line_mass(0.0, -x0, l0, l1, A, c) + _half_line_mass(0.0, x1, l0, l1, A, c)


def weight_template(model: StouModel, grid: SimGrid):
    """Per-target weights on the fine basis values, plus the residual area.

    Returns ``(W, jmin, residual_area)``: ``W[k, j - jmin]`` multiplies the
    basis value of the fine cell in the ``k``-th slab below the target time
    and ``j`` fine columns from the target's first sub-cell;
    ``residual_area`` is the equivalent cell area of the orthogonal remainder.
    """
    A, c, r = model.A, model.c, grid.refine
    dts, dxs = grid.dt_sub, grid.dx_sub
    T = truncation_depth(model, grid)
    reach = c * T * dts / dxs
    jmin = int(math.floor(-reach + r / 2.0)) - 1
    jmax = int(math.ceil(reach + r / 2.0))
    js = np.arange(jmin, jmax + 1)
    v_full = dxs * (1.0 - math.exp(-2.0 * A * dts)) / (2.0 * A)
    g = math.sqrt(v_full / (dts * dxs))
    W = np.zeros((T, js.size))
    for k in range(T):
        l0, l1 = k * dts, (k + 1) * dts
        for col, j in enumerate(js):
            x0 = (j - r / 2.0) * dxs
            mass = _cone_mass(x0, x0 + dxs, l0, l1, A, c)
            if mass > 0.0:
                W[k, col] = math.exp(A * l0) * mass / v_full * g
    # trim columns that no slab reaches
    used = np.flatnonzero(np.any(W != 0.0, axis=0))
    W = W[:, used[0]:used[-1] + 1]
    jmin = int(js[used[0]])
    L = T * dts
    total = 2.0 * c * (1.0 / (4 * A * A) - math.exp(-2 * A * L) * (L / (2 * A) + 1.0 / (4 * A * A)))
    captured = float(np.sum(W * W)) * dts * dxs
    return W, jmin, max(total - captured, 0.0)


def simulate(model: StouModel, grid: SimGrid, *, max_window_bytes: int = DEFAULT_MAX_WINDOW_BYTES,
             name: str = "stou") -> RasterSeries:
    """Simulate an ``N x P`` zero-mean stationary STOU raster.

    Identical ``(model, grid)`` give bit-identical rasters. The first row is
    already stationary (the truncated cone spans the effective past).
    """
    r, N, P = grid.refine, grid.N, grid.P
    # upper estimate of the template width, checked before the template is built
    T = truncation_depth(model, grid)
    nj = 2 * int(math.ceil(model.c * T * grid.dt_sub / grid.dx_sub)) + r + 3
    F = (P - 1) * r + nj
    window_bytes = 8 * (T + _CHUNK_ROWS * r) * F
    if window_bytes > max_window_bytes:
        raise SimulationError(
            f"window memory {window_bytes / 2**20:.1f} MiB over limit "
            f"{max_window_bytes / 2**20:.1f} MiB (T={T} slabs x {F} fine columns)")
    W, jmin, resid_area = weight_template(model, grid)
    T, nj = W.shape
    F = (P - 1) * r + nj

    # M[k] maps a slab row of fine columns to the P targets
    M = np.zeros((T, F, P))
    for p in range(P):
        M[:, p * r:p * r + nj, p] = W
    area = grid.dt_sub * grid.dx_sub
    rng_cells = derive_rng(grid.seed, "simulate", 0)
    rng_resid = derive_rng(grid.seed, "simulate", 1)

    out = np.empty((N, P))
    # buf holds slabs [start, start + len(buf)); target i's top slab is T - 1 + i * r
    buf = np.empty((0, F))
    start = 0
    for i0 in range(0, N, _CHUNK_ROWS):
        n = min(_CHUNK_ROWS, N - i0)
        top_first = T - 1 + i0 * r
        top_last = top_first + (n - 1) * r
        missing = top_last + 1 - (start + buf.shape[0])
        buf = np.concatenate([buf, sample_cells(model.basis, area, rng_cells, size=(missing, F))])
        z = np.zeros((n, P))
        for k in range(T):
            a = top_first - k - start
            z += buf[a:a + (n - 1) * r + 1:r] @ M[k]
        if resid_area > 0.0:
            z += sample_cells(model.basis, resid_area, rng_resid, size=(n, P))
        out[i0:i0 + n] = z
        next_start = top_last + r - (T - 1)
        drop = min(max(next_start - start, 0), buf.shape[0])
        buf = buf[drop:]
        start += drop
    positions = grid.x0 + grid.dx * np.arange(P)
    return RasterSeries(out, positions, t0=grid.t0, h_t=grid.dt, name=name)
