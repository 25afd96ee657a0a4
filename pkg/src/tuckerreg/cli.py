"""Command-line interface.

Subcommands: ``simulate`` (write synthetic dataset files), ``fit`` (MCMC or
fast fit from tensor files), ``predict`` (apply a persisted fit), ``eval``
(prediction metrics), and ``replicate`` (the full replication harness).

Exit codes: 0 success, 2 configuration/validation error, 3 data-shape
error, 4 numerical failure.

All randomness descends from one master seed (``--seed`` or ``io.seed`` in
the config) through numpy ``SeedSequence`` spawning, so every command is
reproducible end to end.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import fileio, model as mdl
from .config import RunConfig, load_run_config
from .exceptions import ConfigError, NumericalError, ShapeError
from .fastfit import run_fast
from .mcmc import DimPrior, run_mcmc
from .model import ModelShape, predict_mean, rpe
from .simulate import (
    SimConfig,
    coverage_rate,
    gen_dataset,
    report_to_csv,
    report_to_json,
    run_replication,
)


def _load_config(args) -> RunConfig:
    cfg = load_run_config(args.config) if args.config else RunConfig()
    if getattr(args, "seed", None) is not None:
        cfg.seed = args.seed
    if getattr(args, "threads", None) is not None:
        cfg.threads = args.threads
    return cfg


def _spawn(seed, *labels):
    """Named child seeds derived from the master seed."""
    root = np.random.SeedSequence(seed)
    children = root.spawn(len(labels))
    return dict(zip(labels, children))


def _read_input_tensor(path, fmt: str) -> np.ndarray:
    if fmt == "csv":
        return fileio.read_csv_matrix(path, validate_finite=True)
    t = fileio.read_tensor(path, validate_finite=True)
    return t


def cmd_simulate(args) -> int:
    cfg = _load_config(args)
    sim = cfg.sim
    out_dir = Path(args.out_dir or cfg.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(_spawn(cfg.seed, "simulate")["simulate"])
    data = gen_dataset(sim, rng)
    files = {
        "x": "x.tbt",
        "y": "y.tbt",
        "b_true": "b_true.tbt",
    }
    fileio.write_tensor(out_dir / files["x"], data.x)
    fileio.write_tensor(out_dir / files["y"], data.y)
    fileio.write_tensor(out_dir / files["b_true"], data.b_true)
    eval_files = []
    for i, (x_new, y_new) in enumerate(data.eval_sets):
        xf, yf = f"eval_{i:02d}_x.tbt", f"eval_{i:02d}_y.tbt"
        fileio.write_tensor(out_dir / xf, x_new)
        fileio.write_tensor(out_dir / yf, y_new)
        eval_files.append({"x": xf, "y": yf})
    manifest = {
        "files": files,
        "eval_sets": eval_files,
        "noise_scale": data.c,
        "snr": sim.snr,
        "theta_star": list(sim.theta_star),
        "design": sim.design,
        "n_samples": sim.shape.n_samples,
        "p_dims": list(sim.shape.p_dims),
        "q_dims": list(sim.shape.q_dims),
        "seed": cfg.seed,
    }
    with open(out_dir / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(f"wrote dataset to {out_dir}")
    return 0


def cmd_fit(args) -> int:
    cfg = _load_config(args)
    x = _read_input_tensor(args.x, args.format)
    y = _read_input_tensor(args.y, args.format)
    shape = ModelShape.from_data(x, y)
    seeds = _spawn(cfg.seed, "fit")
    seed_int = int(seeds["fit"].generate_state(1, dtype=np.uint64)[0])
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    start = time.perf_counter()
    if args.mode == "mcmc":
        mc = cfg.mcmc
        mc.seed = seed_int
        mc.validate()
        dim_prior = DimPrior.for_shape(shape, cfg.theta_bounds)
        trace = run_mcmc(x, y, cfg.priors, dim_prior, mc)
        elapsed = time.perf_counter() - start
        trace_path = out.with_suffix(".trace.tbtr")
        fileio.save_trace(trace_path, trace)
        summary = {
            "mode": "mcmc",
            "theta": list(trace.theta_mode()),
            "n_params": mdl.param_count(shape, trace.theta_mode()),
            "n_stored_draws": len(trace),
            "accept_rate": None
            if np.isnan(trace.accept_rate)
            else trace.accept_rate,
            "sigma2_mean": float(trace.sigma2s.mean()),
            "seconds": elapsed,
            "seed": cfg.seed,
            "artifact": trace_path.name,
        }
    else:
        sa = cfg.fast
        sa.seed = seed_int
        sa.bounds = cfg.theta_bounds if sa.bounds is None else sa.bounds
        sa.validate()
        fit = run_fast(x, y, cfg.priors, sa)
        elapsed = time.perf_counter() - start
        fit_path = out.with_suffix(".fit.tbtm")
        fileio.save_map_fit(fit_path, fit)
        summary = {
            "mode": "fast",
            "theta": list(fit.state.theta),
            "n_params": mdl.param_count(shape, fit.state.theta),
            "bic": fit.bic,
            "sigma2": fit.state.sigma2,
            "seconds": elapsed,
            "seed": cfg.seed,
            "artifact": fit_path.name,
        }
    summary_path = out.with_suffix(".summary.json")
    with open(summary_path, "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(f"fit summary: {summary_path}")
    return 0


def cmd_predict(args) -> int:
    cfg = _load_config(args)
    x_new = _read_input_tensor(args.x_new, args.format)
    kind = fileio.sniff_artifact(args.fit)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    if kind == "trace":
        trace = fileio.load_trace(args.fit)
        if x_new.shape[1:] != trace.shape.p_dims:
            raise ShapeError(
                f"x_new extents {x_new.shape[1:]} != fitted {trace.shape.p_dims}"
            )
        rng = np.random.default_rng(_spawn(cfg.seed, "predict")["predict"])
        summ = mdl.posterior_predict(trace, x_new, rng, level=args.level)
        fileio.write_tensor(out.with_suffix(".mean.tbt"), summ.mean)
        fileio.write_tensor(out.with_suffix(".lower.tbt"), summ.lower)
        fileio.write_tensor(out.with_suffix(".upper.tbt"), summ.upper)
        print(f"wrote mean/lower/upper tensors with prefix {out}")
    elif kind == "fit":
        fit = fileio.load_map_fit(args.fit)
        b = fit["b"]
        n_pred_modes = x_new.ndim - 1
        if x_new.shape[1:] != b.shape[:n_pred_modes]:
            raise ShapeError(
                f"x_new extents {x_new.shape[1:]} != fitted {b.shape[:n_pred_modes]}"
            )
        mean = predict_mean(x_new, b, n_pred_modes)
        fileio.write_tensor(out.with_suffix(".mean.tbt"), mean)
        print(f"wrote point prediction {out.with_suffix('.mean.tbt')} "
              "(no intervals: point fit)")
    else:
        raise ConfigError(f"{args.fit} is not a fitted artifact")
    return 0


def cmd_eval(args) -> int:
    if len(args.pred) != len(args.truth):
        raise ConfigError("need as many --pred as --truth files")
    if not args.pred:
        raise ConfigError("no prediction files given")
    preds = [fileio.read_tensor(p, validate_finite=True) for p in args.pred]
    truths = [fileio.read_tensor(p, validate_finite=True) for p in args.truth]
    metrics = {"rpe": rpe(truths, preds), "n_sets": len(preds)}
    if args.lower and args.upper:
        if len(args.lower) != len(truths) or len(args.upper) != len(truths):
            raise ConfigError("interval file counts must match truth files")
        covers = []
        for lo_p, hi_p, y in zip(args.lower, args.upper, truths):
            lo = fileio.read_tensor(lo_p, validate_finite=True)
            hi = fileio.read_tensor(hi_p, validate_finite=True)
            covers.append(coverage_rate(lo, hi, y))
        metrics["coverage"] = float(np.mean(covers))
    out = Path(args.out)
    with open(out, "w") as fh:
        json.dump(metrics, fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(json.dumps(metrics, sort_keys=True))
    return 0


def cmd_replicate(args) -> int:
    cfg = _load_config(args)
    sim = cfg.sim
    sim.seed = cfg.seed
    if args.full:
        sim.n_replicates = 50
    methods = tuple(args.methods.split(","))
    report = run_replication(
        sim,
        methods=methods,
        mcmc_config=cfg.mcmc,
        sa_config=cfg.fast,
        priors=cfg.priors,
        coverage_level=args.coverage_level,
        n_jobs=cfg.threads,
    )
    prefix = Path(args.out_prefix)
    prefix.parent.mkdir(parents=True, exist_ok=True)
    report_to_csv(report, prefix.with_suffix(".rows.csv"))
    report_to_json(report, prefix.with_suffix(".summary.json"))
    print(json.dumps(report.aggregates, indent=2, sort_keys=True))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tuckerreg",
        description="Bayesian tensor-on-tensor regression with Tucker-structured "
        "coefficients",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, threads=False):
        p.add_argument("--config", help="JSON run configuration")
        p.add_argument("--seed", type=int, help="master seed (overrides config)")
        if threads:
            p.add_argument("--threads", type=int, help="parallel workers")

    p_sim = sub.add_parser("simulate", help="generate a synthetic dataset")
    common(p_sim)
    p_sim.add_argument("--out-dir", help="output directory")
    p_sim.set_defaults(func=cmd_simulate)

    p_fit = sub.add_parser("fit", help="fit a model from tensor files")
    common(p_fit)
    p_fit.add_argument("--mode", choices=("mcmc", "fast"), required=True)
    p_fit.add_argument("-x", required=True, help="predictor tensor file")
    p_fit.add_argument("-y", required=True, help="response tensor file")
    p_fit.add_argument("--out", required=True, help="output prefix")
    p_fit.add_argument(
        "--format", choices=("tbt", "csv"), default="tbt",
        help="input format (csv for order-2 tensors only)",
    )
    p_fit.set_defaults(func=cmd_fit)

    p_pred = sub.add_parser("predict", help="predict from a fitted artifact")
    common(p_pred)
    p_pred.add_argument("--fit", required=True, help="trace or fit file")
    p_pred.add_argument("--x-new", required=True, help="new predictor tensor")
    p_pred.add_argument("--out", required=True, help="output prefix")
    p_pred.add_argument("--level", type=float, default=0.95,
                        help="credible-interval level")
    p_pred.add_argument("--format", choices=("tbt", "csv"), default="tbt")
    p_pred.set_defaults(func=cmd_predict)

    p_eval = sub.add_parser("eval", help="score predictions against truths")
    p_eval.add_argument("--pred", nargs="*", default=[], help="prediction tensors")
    p_eval.add_argument("--truth", nargs="*", default=[], help="truth tensors")
    p_eval.add_argument("--lower", nargs="*", default=[],
                        help="interval lower-bound tensors")
    p_eval.add_argument("--upper", nargs="*", default=[],
                        help="interval upper-bound tensors")
    p_eval.add_argument("--out", required=True, help="metrics JSON path")
    p_eval.set_defaults(func=cmd_eval)

    p_rep = sub.add_parser("replicate", help="run the replication harness")
    common(p_rep, threads=True)
    p_rep.add_argument("--out-prefix", required=True)
    p_rep.add_argument("--methods", default="mcmc,fast,ols",
                       help="comma-separated subset of mcmc,fast,ols")
    p_rep.add_argument("--coverage-level", type=float, default=None,
                       help="also report interval coverage at this level")
    p_rep.add_argument("--full", action="store_true",
                       help="use 50 replicates instead of the configured count")
    p_rep.set_defaults(func=cmd_replicate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ShapeError as exc:
        print(f"shape error: {exc}", file=sys.stderr)
        return 3
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 4
    except (ConfigError, FileNotFoundError, PermissionError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
