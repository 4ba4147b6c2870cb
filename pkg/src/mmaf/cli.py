"""Command line interface.

Exit codes: 0 success, 2 configuration or input error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

from .embedding import EmbeddingError, Role, extract_features, load_features, load_plan, make_plan, \
    save_features, save_plan
from .estimation import EstimationError, estimate_params, load_params, save_params
from .forecast import ForecastError, InferenceInputs, generate_ensemble, load_ensemble, save_ensemble
from .levy import LevyBasisSpec
from .metrics import evaluate, save_report, write_plot_data
from .network import ReferenceDistribution, parse_arch
from .pipeline import ConfigError, PipelineConfig, run_pipeline, sub_seed, validate_reference
from .raster import RasterError, load_raster, save_raster
from .stou import SimGrid, SimulationError, StouModel, simulate
from .training import NumericalError, TrainConfig, load_posterior, save_posterior, train

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3


def _positions_in(features_dir: Path) -> list[int]:
    pos = sorted({int(p.name[3:7]) for p in features_dir.glob("pos*_train.csv")})
    if not pos:
        raise ConfigError(f"no training feature files in {features_dir}")
    return pos


def _plan_for(features_dir: Path):
    path = features_dir / "plan.json"
    return load_plan(path) if path.exists() else None


def cmd_simulate(args) -> int:
    levy = {k: v for k, v in (("levy.kind", args.levy_kind), ("levy.sigma2", args.levy_sigma2),
                              ("levy.alpha", args.levy_alpha), ("levy.beta", args.levy_beta),
                              ("levy.delta", args.levy_delta)) if v is not None}
    model = StouModel(args.A, args.c, LevyBasisSpec.from_dict(levy))
    grid = SimGrid(N=args.N, P=args.P, dt=args.dt, dx=args.dx, refine=args.refine, trunc_tol=args.tol,
                   seed=args.seed)
    save_raster(simulate(model, grid), args.out)
    print(f"wrote {args.out}")
    return EXIT_OK


def cmd_estimate(args) -> int:
    est = estimate_params(load_raster(args.input), args.tau, args.u)
    save_params(est, args.out)
    print(json.dumps(est.to_dict()))
    return EXIT_OK


def cmd_features(args) -> int:
    r = load_raster(args.input)
    est = load_params(args.params)
    lam = est.lambda_star if args.lam is None else args.lam
    plan = make_plan(est.c_star * r.h_t / r.dx, lam, r.N, r.P, p=args.p, epsilon=args.epsilon,
                     delta=args.delta, n_test=args.n_test, force_a=args.force_a)
    out = Path(args.out)
    sets = [fs for x in plan.positions_used for fs in extract_features(r, plan, x)]
    save_features(out, sets)
    save_plan(plan, out / "plan.json")
    if not plan.rule_satisfied:
        print(f"warning: forced stride a={plan.a} violates the dependence-decay rule", file=sys.stderr)
    print(json.dumps({"a": plan.a, "m": plan.m, "D": plan.D, "positions": plan.positions_used}))
    return EXIT_OK


def _train_config(args) -> TrainConfig:
    return TrainConfig(epsilon=args.epsilon, delta=args.delta, eta=args.eta, batch_size=args.batch,
                       epochs=args.epochs, seed=args.seed)


def cmd_train(args) -> int:
    fdir, out = Path(args.features), Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    plan = _plan_for(fdir)
    cfg = _train_config(args)
    pi = ReferenceDistribution.from_precision(args.s)
    for x in _positions_in(fdir):
        ts = load_features(fdir, x, Role.TRAIN)
        arch = parse_arch(args.arch, ts.D)
        kw = {} if plan is None else {"lam": plan.lam, "a": plan.a, "p": plan.p}
        pcfg = replace(cfg, seed=sub_seed(args.seed, "train", x, 0), mc_lip_seed=args.seed)
        rho, rep = train(ts, arch, pi, pcfg, **kw)
        save_posterior(out / f"pos{x:04d}.json", rho, arch, pi, rep, x)
        print(f"position {x}: target={rep.target:.6g} pac_bound={rep.pac_bound:.6g}")
    return EXIT_OK


def _inference_inputs(fdir: Path, positions) -> dict:
    return {x: InferenceInputs.from_sets(load_features(fdir, x, Role.VALIDATION),
                                         load_features(fdir, x, Role.TEST)) for x in positions}


def cmd_validate_prior(args) -> int:
    fdir = Path(args.features)
    plan = _plan_for(fdir)
    positions = _positions_in(fdir)
    train_sets = {x: load_features(fdir, x, Role.TRAIN) for x in positions}
    D = next(iter(train_sets.values())).D
    arch = parse_arch(args.arch, D)
    cfg = PipelineConfig(archs=[args.arch], s_grid=args.s_grid, epsilon=args.epsilon, delta=args.delta,
                         eta=args.eta, batch=args.batch, epochs=args.epochs, J=args.J, seed=args.seed)
    val_index = plan.validation_index if plan is not None else int(load_features(fdir, positions[0],
                                                                                  Role.VALIDATION).time_indices[0])
    res = validate_reference(train_sets, _inference_inputs(fdir, positions), arch, cfg.s_grid, cfg, val_index)
    doc = {"arch": arch.name, "s_star": res.s_star, "table": res.table()}
    Path(args.out).write_text(json.dumps(doc, indent=2) + "\n", encoding="utf-8")
    print(json.dumps({"s_star": res.s_star}))
    return EXIT_OK


def cmd_forecast(args) -> int:
    pdir, fdir = Path(args.posteriors), Path(args.features)
    posts = {}
    for path in sorted(pdir.glob("pos*.json")):
        rho, arch, _, _, pos = load_posterior(path)
        posts[int(pos) if pos is not None else int(path.stem[3:])] = (rho, arch)
    if not posts:
        raise ConfigError(f"no posterior files in {pdir}")
    plan = _plan_for(fdir)
    a = plan.a if plan is not None else 1
    ens = generate_ensemble(posts, _inference_inputs(fdir, sorted(posts)), args.start, args.H, args.J,
                            seed=args.seed, a=a)
    save_ensemble(ens, args.out)
    print(f"wrote {args.out}")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    ens = load_ensemble(args.ensemble)
    rep = evaluate(ens, seed=args.seed)
    save_report(rep, args.out)
    if args.plots:
        write_plot_data(ens, rep, args.plots)
    print(json.dumps({"crps": rep.crps_mean, "rmse": rep.rmse_mean, "pit_chi2_pvalue": rep.pit_chi2_pvalue}))
    return EXIT_OK


def cmd_pipeline(args) -> int:
    cfg = PipelineConfig.from_file(args.config)
    overrides = {}
    if args.out is not None:
        overrides["out"] = args.out
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.sweep_epochs is not None:
        overrides["sweep_epochs"] = args.sweep_epochs
    if args.workers is not None:
        overrides["workers"] = args.workers
    if overrides:
        cfg = replace(cfg, **overrides)
    m = run_pipeline(cfg)
    summary = {k: {f: v.get(f) for f in ("s_star", "target", "pac_bound", "validation_crps", "test_crps",
                                          "test_rmse", "horizons")}
               for k, v in m.results.items()}
    print(json.dumps(summary, indent=2))
    return EXIT_OK


def _train_args(p):
    p.add_argument("--arch", default="10^2")
    p.add_argument("--epsilon", type=float, default=3.0)
    p.add_argument("--delta", type=float, default=0.025)
    p.add_argument("--eta", type=float, default=1e-3)
    p.add_argument("--batch", type=int, default=1000)
    p.add_argument("--epochs", type=int, default=30)
    p.add_argument("--seed", type=int, default=0)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="mmaf", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="simulate a STOU raster")
    p.add_argument("--A", type=float, required=True)
    p.add_argument("--c", type=float, required=True)
    p.add_argument("--levy.kind", dest="levy_kind", choices=["Gaussian", "NIG"], default="Gaussian")
    p.add_argument("--levy.sigma2", dest="levy_sigma2", type=float)
    p.add_argument("--levy.alpha", dest="levy_alpha", type=float)
    p.add_argument("--levy.beta", dest="levy_beta", type=float)
    p.add_argument("--levy.delta", dest="levy_delta", type=float)
    p.add_argument("--N", type=int, required=True)
    p.add_argument("--P", type=int, required=True)
    p.add_argument("--dt", type=float, default=1.0)
    p.add_argument("--dx", type=float, default=1.0)
    p.add_argument("--refine", type=int, default=4)
    p.add_argument("--tol", type=float, default=1e-6)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("estimate", help="estimate A, c and the decay rate from a raster")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--tau", type=int, default=1)
    p.add_argument("--u", type=int, default=1)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("features", help="cone-embed a raster into train/validation/test sets")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--params", required=True)
    p.add_argument("--p", type=int, default=1)
    p.add_argument("--epsilon", type=float, default=3.0)
    p.add_argument("--delta", type=float, default=0.025)
    p.add_argument("--n-test", dest="n_test", type=int, required=True)
    p.add_argument("--force-a", dest="force_a", type=int)
    p.add_argument("--lambda", dest="lam", type=float, help="override the estimated decay rate")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_features)

    p = sub.add_parser("train", help="train one posterior per position")
    p.add_argument("--features", required=True)
    p.add_argument("--s", type=float, default=30.0, help="reference precision (variance 1/s)")
    _train_args(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("validate-prior", help="grid search of the reference precision s")
    p.add_argument("--features", required=True)
    p.add_argument("--s-grid", dest="s_grid", type=lambda t: [float(v) for v in t.split(",")],
                   default=[10, 30, 50, 70, 90, 110, 130, 150, 170, 190, 210])
    p.add_argument("--J", type=int, default=100)
    _train_args(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_validate_prior)

    p = sub.add_parser("forecast", help="ensemble forecasts from trained posteriors")
    p.add_argument("--posteriors", required=True)
    p.add_argument("--features", required=True)
    p.add_argument("--start", type=int, required=True)
    p.add_argument("--H", type=int, required=True)
    p.add_argument("--J", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_forecast)

    p = sub.add_parser("evaluate", help="CRPS, RMSE, PIT and coverage of an ensemble file")
    p.add_argument("--ensemble", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--plots")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("pipeline", help="run the full workflow from a config file")
    p.add_argument("--config", required=True)
    p.add_argument("--out")
    p.add_argument("--seed", type=int)
    p.add_argument("--sweep-epochs", dest="sweep_epochs", type=int)
    p.add_argument("--workers", type=int)
    p.set_defaults(func=cmd_pipeline)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (NumericalError, FloatingPointError, EstimationError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ConfigError, RasterError, SimulationError, EmbeddingError, ForecastError, FileNotFoundError, KeyError,
            json.JSONDecodeError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
