"""End-to-end workflow: data, estimation, embedding, reference selection, training, forecasts."""

from __future__ import annotations

import json
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from .embedding import EmbeddingPlan, extract_features, make_plan, save_features, save_plan
from .estimation import EstimatedParams, estimate_params, plug_in_lambda, save_params
from .forecast import InferenceInputs, generate_ensemble, save_ensemble
from .levy import LevyBasisSpec
from .metrics import crps_ensemble, evaluate, save_report, write_plot_data
from .network import ReferenceDistribution, parse_arch
from .raster import RasterSeries, detrend, load_raster, save_raster
from .rng import derive_seed
from .stou import SimGrid, StouModel, simulate
from .training import NumericalError, TrainConfig, pac_bound, save_posterior, train

__all__ = [
    "ConfigError",
    "ValidationAborted",
    "PipelineConfig",
    "RunManifest",
    "ValidationResult",
    "DEFAULT_S_GRID",
    "sub_seed",
    "validate_reference",
    "run_pipeline",
]

DEFAULT_S_GRID = (10, 30, 50, 70, 90, 110, 130, 150, 170, 190, 210)

VALIDATION_NOTE = ("validation CRPS/RMSE use the single validation example per position "
                   "(horizon 0), averaged over positions")


class ConfigError(ValueError):
    pass


class ValidationAborted(NumericalError):
    """Training failed during the reference grid search; ``progress`` holds finished grid points."""

    def __init__(self, message, progress):
        super().__init__(message)
        self.progress = progress


def sub_seed(master: int, *key) -> int:
    """Integer seed for a sub-stage, derived from the master seed and a key path."""
    return int(derive_seed(master, *key).generate_state(1, np.uint32)[0])


# flat config key -> (attribute, type)
_KEYS = {
    "data.path": ("data_path", str),
    "sim.A": ("sim_A", float),
    "sim.c": ("sim_c", float),
    "sim.N": ("sim_N", int),
    "sim.P": ("sim_P", int),
    "sim.refine": ("sim_refine", int),
    "sim.tol": ("sim_tol", float),
    "sim.dt": ("sim_dt", float),
    "sim.dx": ("sim_dx", float),
    "detrend": ("detrend", str),
    "estimate.tau": ("tau", int),
    "estimate.u": ("u", int),
    "estimate.A": ("A_override", float),
    "estimate.c": ("c_override", float),
    "estimate.lambda": ("lambda_override", float),
    "embed.p": ("p", int),
    "embed.n_test": ("n_test", int),
    "embed.force_a": ("force_a", int),
    "embed.positions": ("positions", list),
    "epsilon": ("epsilon", float),
    "delta": ("delta", float),
    "train.archs": ("archs", list),
    "train.s_grid": ("s_grid", list),
    "train.eta": ("eta", float),
    "train.batch": ("batch", int),
    "train.epochs": ("epochs", int),
    "train.sweep_epochs": ("sweep_epochs", int),
    "train.bound_mc_draws": ("bound_mc_draws", int),
    "train.mc_lip_draws": ("mc_lip_draws", int),
    "forecast.J": ("J", int),
    "forecast.H": ("H", int),
    "seed": ("seed", int),
    "out": ("out", str),
    "workers": ("workers", int),
}
_LEVY_KEYS = ("levy.kind", "levy.sigma2", "levy.alpha", "levy.beta", "levy.delta")


@dataclass
class PipelineConfig:
    data_path: str | None = None
    sim_A: float = 3.851
    sim_c: float = 1.013
    sim_N: int = 10_000
    sim_P: int = 10
    sim_refine: int = 4
    sim_tol: float = 1e-6
    sim_dt: float = 1.0
    sim_dx: float = 1.0
    levy: dict = field(default_factory=lambda: {"levy.kind": "Gaussian", "levy.sigma2": 1.0})
    detrend: str = "none"
    tau: int = 1
    u: int = 1
    A_override: float | None = None
    c_override: float | None = None
    lambda_override: float | None = None
    p: int = 1
    n_test: int = 100
    force_a: int | None = None
    positions: list | None = None
    epsilon: float = 3.0
    delta: float = 0.025
    archs: list = field(default_factory=lambda: ["10^2"])
    s_grid: list = field(default_factory=lambda: list(DEFAULT_S_GRID))
    eta: float = 1e-3
    batch: int = 1000
    epochs: int = 30
    sweep_epochs: int | None = None
    bound_mc_draws: int = 100
    mc_lip_draws: int = 1000
    J: int = 100
    H: int | None = None
    seed: int = 0
    out: str = "run"
    workers: int = 1

    def __post_init__(self):
        self.validate()

    def validate(self):
        if not self.s_grid or any(not (isinstance(s, (int, float)) and s > 0) for s in self.s_grid):
            raise ConfigError(f"s grid must be non-empty with positive entries, got {self.s_grid}")
        if not self.archs:
            raise ConfigError("architecture list is empty")
        for a in self.archs:
            try:
                parse_arch(str(a), 1)
            except ValueError as exc:
                raise ConfigError(f"invalid architecture {a!r}: {exc}") from None
        if self.J < 2:
            raise ConfigError("forecast.J must be >= 2")
        if self.n_test < 0 or self.p < 1 or self.epochs < 1 or self.workers < 1:
            raise ConfigError("embed.n_test >= 0, embed.p >= 1, train.epochs >= 1 and workers >= 1 required")
        if self.sweep_epochs is not None and self.sweep_epochs < 1:
            raise ConfigError("train.sweep_epochs must be >= 1")
        if not (self.epsilon > 0 and 0 < self.delta < 1):
            raise ConfigError("epsilon > 0 and 0 < delta < 1 required")
        if self.detrend not in ("none", "per_position_mean", "global_mean"):
            raise ConfigError(f"unknown detrend mode {self.detrend!r}")
        try:
            LevyBasisSpec.from_dict(self.levy)
        except (ValueError, TypeError) as exc:
            raise ConfigError(f"invalid Levy basis: {exc}") from None

    @classmethod
    def from_flat(cls, d: dict) -> "PipelineConfig":
        kw, levy = {}, {}
        for key, value in d.items():
            if key in _LEVY_KEYS:
                levy[key] = value
                continue
            if key not in _KEYS:
                raise ConfigError(f"unknown config key {key!r}")
            attr, typ = _KEYS[key]
            if value is None:
                kw[attr] = None
                continue
            try:
                if typ is list:
                    if not isinstance(value, list):
                        raise TypeError("expected a list")
                    kw[attr] = value
                else:
                    kw[attr] = typ(value)
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"bad value for {key!r}: {value!r} ({exc})") from None
        if levy:
            kw["levy"] = levy
        return cls(**kw)

    @classmethod
    def from_file(cls, path) -> "PipelineConfig":
        path = Path(path)
        try:
            d = json.loads(path.read_text(encoding="utf-8"))
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file {path} is not valid JSON: {exc}") from None
        if not isinstance(d, dict):
            raise ConfigError("config file must hold a flat key/value object")
        return cls.from_flat(d)

    def to_flat(self) -> dict:
        out = {key: getattr(self, attr) for key, (attr, _) in _KEYS.items()}
        out.update(self.levy)
        return out

    def train_config(self, seed: int, epochs: int | None = None) -> TrainConfig:
        return TrainConfig(epsilon=self.epsilon, delta=self.delta, eta=self.eta, batch_size=self.batch,
                           epochs=self.epochs if epochs is None else epochs, seed=seed,
                           bound_mc_draws=self.bound_mc_draws, mc_lip_draws=self.mc_lip_draws,
                           mc_lip_seed=self.seed)


@dataclass
class RunManifest:
    config: dict
    artifacts: dict
    estimation: dict
    plan: dict
    results: dict
    notes: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return asdict(self)

    def save(self, path) -> Path:
        path = Path(path)
        path.write_text(json.dumps(self.to_dict(), indent=2) + "\n", encoding="utf-8")
        return path

    @classmethod
    def load(cls, path) -> "RunManifest":
        d = json.loads(Path(path).read_text(encoding="utf-8"))
        return cls(**{f.name: d[f.name] for f in fields(cls) if f.name in d})


@dataclass
class ValidationResult:
    s_star: float
    crps: dict
    rmse: dict
    posteriors: dict

    def table(self) -> list:
        return [{"s": s, "crps": self.crps[s], "rmse": self.rmse[s]} for s in self.crps]


def _train_task(args):
    train_set, arch, s, cfg = args
    return train(train_set, arch, ReferenceDistribution.from_precision(s), cfg)


def _map(fn, tasks, workers):
    if workers > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            return list(ex.map(fn, tasks))
    return [fn(t) for t in tasks]


def validate_reference(train_sets: dict, inputs: dict, arch, s_grid, cfg: PipelineConfig,
                       val_index: int, *, trainer=None, epochs: int | None = None) -> ValidationResult:
    """Choose the reference precision ``s`` by mean validation CRPS over positions.

    For every grid point each position is trained from scratch with the seed
    derived from ``(train, position, grid index)``; the J-member ensemble at
    ``val_index`` uses ``(validate, grid index)``. Ties go to the smaller ``s``.
    ``trainer(train_set, arch, s, train_config) -> (rho, report)`` replaces
    the default trainer (tests inject instrumented stubs).
    """
    if not s_grid:
        raise ConfigError("empty s grid")
    positions = sorted(train_sets)
    crps_tab, rmse_tab, posts = {}, {}, {}
    for g, s in enumerate(s_grid):
        tasks = [(train_sets[pos], arch, s, cfg.train_config(sub_seed(cfg.seed, "train", pos, g), epochs))
                 for pos in positions]
        try:
            if trainer is None:
                fitted = _map(_train_task, tasks, cfg.workers)
            else:
                fitted = [trainer(*t) for t in tasks]
        except (NumericalError, FloatingPointError, ValueError) as exc:
            raise ValidationAborted(f"training failed at s={s}: {exc}",
                                    {"crps": dict(crps_tab), "failed_s": s}) from exc
        post = {pos: f for pos, f in zip(positions, fitted)}
        ens = generate_ensemble({pos: (rho, arch) for pos, (rho, _) in post.items()},
                                {pos: inputs[pos] for pos in positions}, val_index, 0, cfg.J,
                                seed=sub_seed(cfg.seed, "validate", g))
        crps_tab[s] = float(np.mean(crps_ensemble(ens.members, ens.observations)))
        rmse_tab[s] = float(np.mean(np.sqrt(np.mean((ens.members - ens.observations) ** 2, axis=0))))
        posts[s] = post
    best = min(crps_tab.values())
    s_star = min(s for s, v in crps_tab.items() if v == best)
    return ValidationResult(s_star, crps_tab, rmse_tab, posts)


def _load_or_simulate(cfg: PipelineConfig) -> tuple[RasterSeries, bool]:
    if cfg.data_path:
        return load_raster(cfg.data_path), False
    model = StouModel(cfg.sim_A, cfg.sim_c, LevyBasisSpec.from_dict(cfg.levy))
    grid = SimGrid(N=cfg.sim_N, P=cfg.sim_P, dt=cfg.sim_dt, dx=cfg.sim_dx, refine=cfg.sim_refine,
                   trunc_tol=cfg.sim_tol, seed=sub_seed(cfg.seed, "simulate"))
    return simulate(model, grid), True


def _estimate(cfg: PipelineConfig, r: RasterSeries) -> EstimatedParams:
    overrides = (cfg.A_override, cfg.c_override, cfg.lambda_override)
    if all(v is not None for v in overrides[:2]):
        est = EstimatedParams(cfg.A_override, cfg.c_override, plug_in_lambda(cfg.A_override, cfg.c_override),
                              float(np.sum(r.values ** 2) / (r.values.size - 1)), cfg.tau, cfg.u)
    else:
        est = estimate_params(r, cfg.tau, cfg.u)
        if cfg.A_override is not None or cfg.c_override is not None:
            A = est.A_star if cfg.A_override is None else cfg.A_override
            c = est.c_star if cfg.c_override is None else cfg.c_override
            est = replace(est, A_star=A, c_star=c, lambda_star=plug_in_lambda(A, c))
    if cfg.lambda_override is not None:
        est = replace(est, lambda_star=cfg.lambda_override)
    return est


def _finite_mean(values) -> float:
    v = [float(x) for x in values]
    return float(np.mean(v)) if v else float("nan")


def run_pipeline(cfg: PipelineConfig) -> RunManifest:
    """Run every stage and write artifacts under ``cfg.out``.

    ``manifest.json`` holds only deterministic quantities; stage timings go
    to ``timings.json``. A failing stage writes ``failure.json`` before the
    exception propagates.
    """
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    timings, artifacts = {}, {}
    stage = "data"
    clock = time.perf_counter()

    def mark(name):
        nonlocal stage, clock
        now = time.perf_counter()
        timings[stage] = now - clock
        stage, clock = name, now

    try:
        raster, simulated = _load_or_simulate(cfg)
        if simulated:
            artifacts["raster"] = str(save_raster(raster, out / "raster.csv"))
        mark("detrend")
        raster, dinfo = detrend(raster, cfg.detrend)
        mark("estimate")
        est = _estimate(cfg, raster)
        artifacts["params"] = str(save_params(est, out / "params.json"))
        mark("embed")
        c_grid = est.c_star * raster.h_t / raster.dx
        plan = make_plan(c_grid, est.lambda_star, raster.N, raster.P, p=cfg.p, epsilon=cfg.epsilon,
                         delta=cfg.delta, n_test=cfg.n_test, force_a=cfg.force_a)
        positions = list(plan.positions_used)
        if cfg.positions is not None:
            bad = [x for x in cfg.positions if x not in positions]
            if bad:
                raise ConfigError(f"embed.positions {bad} are not interior positions {positions}")
            positions = sorted(int(x) for x in cfg.positions)
        plan = replace(plan, positions_used=positions)
        artifacts["plan"] = str(save_plan(plan, out / "plan.json"))
        sets = {x: extract_features(raster, plan, x) for x in positions}
        save_features(out / "features", [fs for trio in sets.values() for fs in trio])
        artifacts["features"] = str(out / "features")
        train_sets = {x: trio[0] for x, trio in sets.items()}
        inputs = {x: InferenceInputs.from_sets(trio[1], trio[2]) for x, trio in sets.items()}

        results = {}
        for arch_text in cfg.archs:
            arch = parse_arch(str(arch_text), plan.D)
            mark(f"validate[{arch.name}]")
            val = validate_reference(train_sets, inputs, arch, cfg.s_grid, cfg, plan.validation_index,
                                     epochs=cfg.sweep_epochs)
            s_star = val.s_star
            g_star = list(cfg.s_grid).index(s_star)
            pi = ReferenceDistribution.from_precision(s_star)
            mark(f"train[{arch.name}]")
            if cfg.sweep_epochs is None or cfg.sweep_epochs == cfg.epochs:
                fitted = val.posteriors[s_star]
            else:
                tasks = [(train_sets[x], arch, s_star, cfg.train_config(sub_seed(cfg.seed, "train", x, g_star)))
                         for x in positions]
                fitted = dict(zip(positions, _map(_train_task, tasks, cfg.workers)))
            per_pos = {}
            post_dir = out / "posteriors" / arch.name.replace("^", "p")
            post_dir.mkdir(parents=True, exist_ok=True)
            for x in positions:
                rho, rep = fitted[x]
                tcfg = cfg.train_config(sub_seed(cfg.seed, "train", x, g_star))
                rep.pac_bound, rep.rho_r = pac_bound(rho, pi, train_sets[x], arch, tcfg, plan.lam, plan.a,
                                                     plan.p, mc_lip=rep.mc_lip)
                rep.vacuous = bool(rep.pac_bound >= cfg.epsilon)
                rep.wallclock = 0.0
                save_posterior(post_dir / f"pos{x:04d}.json", rho, arch, pi, rep, x)
                per_pos[x] = rep
            artifacts[f"posteriors[{arch.name}]"] = str(post_dir)
            summary = {
                "arch": arch.name,
                "d": arch.d,
                "s_star": s_star,
                "validation_table": val.table(),
                "target": _finite_mean(r.target for r in per_pos.values()),
                "pac_bound": _finite_mean(r.pac_bound for r in per_pos.values()),
                "validation_crps": val.crps[s_star],
                "validation_rmse": val.rmse[s_star],
                "per_position": {str(x): {"target": r.target, "initial_target": r.initial_target,
                                          "target_curve": r.target_curve, "kl": r.kl, "mc_lip": r.mc_lip,
                                          "pac_bound": r.pac_bound, "rho_r": r.rho_r, "vacuous": r.vacuous}
                                 for x, r in per_pos.items()},
            }
            mark(f"forecast[{arch.name}]")
            if plan.n_test > 0:
                start = plan.validation_index + 1
                H = plan.n_test - 1 if cfg.H is None else cfg.H
                if start + H > plan.n_examples:
                    raise ConfigError(f"forecast.H={H} runs past the last example {plan.n_examples}")
                ens = generate_ensemble({x: (fitted[x][0], arch) for x in positions}, inputs, start, H, cfg.J,
                                        seed=sub_seed(cfg.seed, "forecast", g_star), a=plan.a,
                                        t0=raster.t0, h_t=raster.h_t)
                tag = arch.name.replace("^", "p")
                artifacts[f"ensemble[{arch.name}]"] = str(save_ensemble(ens, out / f"ensemble_{tag}.csv"))
                mark(f"evaluate[{arch.name}]")
                rep = evaluate(ens, seed=sub_seed(cfg.seed, "pit", g_star))
                artifacts[f"report[{arch.name}]"] = str(save_report(rep, out / f"report_{tag}.json"))
                write_plot_data(ens, rep, out / f"plots_{tag}")
                artifacts[f"plots[{arch.name}]"] = str(out / f"plots_{tag}")
                summary.update({
                    "test_crps": rep.crps_mean,
                    "test_rmse": rep.rmse_mean,
                    "horizons": H + 1,
                    "crps_ratio_test_to_validation": rep.crps_mean / val.crps[s_star]
                    if val.crps[s_star] > 0 else float("inf"),
                    "pit_hist": rep.pit_hist,
                    "pit_chi2_pvalue": rep.pit_chi2_pvalue,
                    "coverage": {str(k): v for k, v in rep.coverage.items()},
                })
            results[arch.name] = summary
        mark("done")
    except Exception as exc:
        mark("failed")
        (out / "failure.json").write_text(json.dumps(
            {"stage": [k for k in timings if k != "failed"][-1] if timings else "data",
             "error": type(exc).__name__, "message": str(exc), "artifacts": artifacts}, indent=2) + "\n",
            encoding="utf-8")
        raise

    manifest = RunManifest(
        config=cfg.to_flat(),
        artifacts=artifacts,
        estimation={**est.to_dict(), "c_grid": c_grid, "detrend": dinfo.mode.value,
                    "detrend_removed": dinfo.removed, "N": raster.N, "P": raster.P},
        plan=plan.to_dict(),
        results=results,
        notes=[VALIDATION_NOTE, "reference distribution N(0, I/s): s is a precision"],
    )
    artifacts["manifest"] = str(out / "manifest.json")
    manifest.save(out / "manifest.json")
    (out / "timings.json").write_text(json.dumps(timings, indent=2) + "\n", encoding="utf-8")
    return manifest
