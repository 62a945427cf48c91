"""Command-line interface.

Every subcommand resolves its inputs (preset names or config files),
assembles an ExperimentConfig where applicable, and writes CSV/JSON
outputs that embed the config hash.  Exit codes: 0 success, 1 runtime
failure, 2 invalid configuration; failures emit a structured error
JSON on stderr.
"""
from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import __version__
from ._kernels import get_backend
from .envmodel import Condition, exceedance_probability
from .errors import ConfigError, ExtremisError
from .evfit import gaussian_likelihood_approx
from .experiment import (
    ExperimentConfig,
    METHODS,
    compare_runs,
    config_hash,
    resolve_env,
    resolve_sim,
    run_experiment,
    write_csv,
)
from .gp import GPModel, fit_gp
from .narx import LagSpec, NarxModel, fit_narx, predict_narx
from .rng import substream
from .simulator import simulate_block_maxima, simulate_timeseries, blocks_per_state

_CONTOUR_METHODS = ("iform", "ds")


def _error_exit(exc, code, field=None):
    payload = {
        "error": {
            "type": type(exc).__name__ if isinstance(exc, Exception) else "ConfigError",
            "message": str(exc),
            "field": getattr(exc, "field", field),
        }
    }
    print(json.dumps(payload), file=sys.stderr)
    return code


def _threads(args):
    env_val = os.environ.get("EXTREMIS_THREADS")
    if env_val:
        return max(1, int(env_val))
    return max(1, getattr(args, "threads", 1))


def _common(p):
    p.add_argument("--seed", type=int, default=0, help="master seed")
    p.add_argument("--threads", type=int, default=1,
                   help="worker threads (EXTREMIS_THREADS overrides)")
    p.add_argument("--timing", action="store_true",
                   help="embed wall-clock times in output files (off keeps "
                        "outputs bit-identical across runs)")


def _check_method(value, allowed):
    if value not in allowed:
        raise ConfigError("method",
                          f"unknown method {value!r}; choose one of {', '.join(allowed)}")


def _parse_quantiles(text):
    try:
        qs = tuple(float(v) for v in text.split(","))
    except ValueError:
        raise ConfigError("quantiles", f"cannot parse {text!r}")
    if any(not 0 < q < 1 for q in qs):
        raise ConfigError("quantiles", "levels must be in (0, 1)")
    return qs


# ---------------------------------------------------------------- env

def cmd_env(args):
    env = resolve_env(args.env)
    info = {
        "config": env.to_dict(),
        "state_duration_hours": env.state_duration_hours,
        "exceedance_probability": {
            "50yr": exceedance_probability(50.0, env.state_duration_hours),
            "1yr": exceedance_probability(1.0, env.state_duration_hours),
        },
    }
    if args.sample:
        rng = substream(args.seed, "env-sample")
        u, s = env.sample(args.sample, rng)
        if args.out:
            write_csv(args.out, ["u", "sigma_u"],
                      [[f"{a:.12g}", f"{b:.12g}"] for a, b in zip(u, s)],
                      config_hash(env.to_dict()))
            info["sample_file"] = args.out
        info["sample_stats"] = {
            "u_mean": float(u.mean()), "u_max": float(u.max()),
            "sigma_mean": float(s.mean()),
        }
    print(json.dumps(info, indent=2, sort_keys=True))
    return 0


# ---------------------------------------------------------------- sim

def cmd_sim(args):
    preset = resolve_sim(args.sim)
    cond = Condition(args.u, args.sigma)
    rng = substream(args.seed, "sim")
    if args.timeseries:
        t, wind, y = simulate_timeseries(cond, int(rng.integers(2**63 - 1)),
                                         args.duration, args.dt, preset)
        rows = [[f"{a:.6f}", f"{b:.12g}", f"{c:.12g}"]
                for a, b, c in zip(t, wind, y)]
        header = ["t_s", "wind_ms", "response_mnm"]
    else:
        # without an explicit state duration, report single-block maxima
        n_blocks = (blocks_per_state(preset, args.state_hours)
                    if args.state_hours else 1)
        rows = []
        for j in range(args.seeds):
            bm = simulate_block_maxima(cond, int(rng.integers(2**63 - 1)),
                                       preset, n_blocks)
            rows.append([j, f"{bm.max():.12g}"])
        header = ["seed", "state_max_mnm"]
    if args.out:
        write_csv(args.out, header, rows, config_hash(preset.to_dict()))
        print(json.dumps({"rows": len(rows), "file": args.out}))
    else:
        print(",".join(header))
        for r in rows:
            print(",".join(str(v) for v in r))
    return 0


# ---------------------------------------------------------------- contour

def cmd_contour(args):
    _check_method(args.method, _CONTOUR_METHODS)
    env = resolve_env(args.env)
    from .contours import ds_contour_from_model, iform_contour
    pe = exceedance_probability(args.return_period, env.state_duration_hours)
    if args.method == "iform":
        contour = iform_contour(env, pe, args.points)
    else:
        contour = ds_contour_from_model(env, pe, int(args.samples),
                                        n_angles=args.points,
                                        rng=substream(args.seed, "ds-samples"))
    cfg = {"env": env.to_dict(), "method": args.method,
           "return_period": args.return_period, "points": args.points,
           "seed": args.seed}
    write_csv(args.out, ["theta_deg", "u", "sigma_u"],
              [[f"{a:.10g}", f"{x:.12g}", f"{y:.12g}"]
               for a, (x, y) in zip(contour.angles_deg, contour.points)],
              config_hash(cfg))
    print(json.dumps({
        "method": args.method,
        "pe": pe,
        "n_points": contour.n_points,
        "u_max": float(contour.u.max()),
        "file": args.out,
    }, indent=2))
    return 0


def cmd_contour_response(args):
    _check_method(args.method, _CONTOUR_METHODS)
    env = resolve_env(args.env)
    preset = resolve_sim(args.sim)
    params = {
        "return_periods": [float(v) for v in (args.return_period or [50.0])],
        "quantiles": list(_parse_quantiles(args.quantiles)),
        "response_seeds": args.response_seeds,
        "points": args.points,
    }
    if args.method == "ds":
        params["samples"] = int(args.samples)
    cfg = ExperimentConfig(
        name=args.name, env=env.to_dict(), sim=preset.to_dict(),
        method=args.method, params=params, seed=args.seed,
        threads=_threads(args),
    )
    summary = run_experiment(cfg, args.outdir, timing=args.timing)
    print(json.dumps(summary["results"], indent=2, sort_keys=True))
    return 0


# ---------------------------------------------------------------- fit

def cmd_fit(args):
    try:
        samples = np.loadtxt(args.samples, delimiter=",", comments="#", ndmin=1)
    except ValueError:
        samples = np.loadtxt(args.samples, delimiter=",", comments="#",
                             ndmin=1, skiprows=1)
    if samples.ndim > 1:
        samples = samples[:, 0]
    fit = gaussian_likelihood_approx(
        samples, family=args.family, rel_tol=args.tol,
        rng=substream(args.seed, "fit"),
    )
    out = fit.to_dict()
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            json.dump(out, fh, indent=2)
    print(json.dumps(out, indent=2))
    return 0


# ---------------------------------------------------------------- gp

def cmd_gp(args):
    if args.action != "fit":
        raise ConfigError("action", f"unknown gp action {args.action!r}")
    training = []
    for fname in sorted(os.listdir(args.fits)):
        if not fname.endswith(".json"):
            continue
        with open(os.path.join(args.fits, fname), encoding="utf-8") as fh:
            rec = json.load(fh)
        cond = Condition(rec["condition"][0], rec["condition"][1])
        fit = rec["fit"] if "fit" in rec else rec
        training.append((cond, np.asarray(fit["mean"]), np.asarray(fit["cov"])))
    if len(training) < 2:
        raise ConfigError("fits", f"found {len(training)} fit records in "
                                  f"{args.fits}; need at least 2")
    model = fit_gp(training)
    model.save(args.out)
    print(json.dumps({
        "n_training": len(training),
        "family": model.family,
        "lml": model.lml.tolist(),
        "file": args.out,
    }, indent=2))
    return 0


# ---------------------------------------------------------------- narx

def _parse_lag_spec(text):
    """Parse 'y:1,2;wind:0,1' into a LagSpec (y = autoregressive)."""
    ar = ()
    exo = {}
    for part in text.split(";"):
        part = part.strip()
        if not part:
            continue
        if ":" not in part:
            raise ConfigError("lags", f"cannot parse segment {part!r}")
        name, lags = part.split(":", 1)
        values = tuple(int(v) for v in lags.split(",") if v)
        if name.strip() == "y":
            ar = values
        else:
            exo[name.strip()] = values
    if not ar:
        raise ConfigError("lags", "need at least one autoregressive lag (y:...)")
    return LagSpec(ar, exo)


def _read_table(path):
    """Header-keyed columns from a CSV, skipping '#' comment lines."""
    with open(path, encoding="utf-8") as fh:
        lines = [ln.strip() for ln in fh if ln.strip() and not ln.startswith("#")]
    if len(lines) < 2:
        raise ConfigError("input", f"{path}: no data rows")
    header = [h.strip() for h in lines[0].split(",")]
    data = np.array([[float(v) for v in ln.split(",")] for ln in lines[1:]])
    return {name: data[:, i] for i, name in enumerate(header)}


def _load_design(path):
    design = []
    for fname in sorted(os.listdir(path)):
        if not fname.endswith(".csv"):
            continue
        cols = _read_table(os.path.join(path, fname))
        if "y" not in cols:
            raise ConfigError("design", f"{fname}: no 'y' column")
        y = cols.pop("y")
        design.append((cols, y))
    if not design:
        raise ConfigError("design", f"no CSV design files in {path}")
    return design


def cmd_narx(args):
    if args.action == "fit":
        design = _load_design(args.design)
        spec = _parse_lag_spec(args.lags)
        model = fit_narx(design, spec, args.degree, regularization=args.reg)
        model.save(args.out)
        print(json.dumps({
            "n_terms": model.n_terms,
            "train_rmse": model.train_rmse,
            "file": args.out,
        }, indent=2))
        return 0
    if args.action == "predict":
        model = NarxModel.load(args.model)
        if os.path.isdir(args.input):
            cols = _load_design(args.input)[0][0]
        else:
            cols = _read_table(args.input)
            cols.pop("y", None)
        init = [float(v) for v in args.init.split(",")] if args.init else [0.0]
        yhat = predict_narx(model, cols, init)
        write_csv(args.out, ["t", "yhat"],
                  [[i, f"{v:.12g}"] for i, v in enumerate(yhat)])
        print(json.dumps({"steps": len(yhat), "file": args.out}))
        return 0
    raise ConfigError("action", f"unknown narx action {args.action!r}")


# ---------------------------------------------------------------- seq / brute

def cmd_seq(args):
    env = resolve_env(args.env)
    preset = resolve_sim(args.sim)
    params = {
        "family": args.family,
        "seeds": args.seeds,
        "iters": args.iters,
        "years": args.years,
        "init_points": args.init_points,
        "pf_threshold": args.pf_threshold,
        "candidates": args.candidates,
    }
    if args.checkpoint:
        params["checkpoint"] = args.checkpoint
        params["resume"] = args.resume
    cfg = ExperimentConfig(
        name=args.name, env=env.to_dict(), sim=preset.to_dict(),
        method="sequential", params=params, seed=args.seed,
        threads=_threads(args),
    )
    summary = run_experiment(cfg, args.outdir, timing=args.timing)
    print(json.dumps(summary["results"], indent=2, sort_keys=True))
    return 0


def cmd_brute(args):
    env = resolve_env(args.env)
    preset = resolve_sim(args.sim)
    cfg = ExperimentConfig(
        name=args.name, env=env.to_dict(), sim=preset.to_dict(),
        method="brute",
        params={
            "years": args.years,
            "cutoff_u": args.cutoff_u,
            "cutoff_sigma": args.cutoff_sigma,
            "pf_threshold": args.pf_threshold,
        },
        seed=args.seed, threads=_threads(args),
    )
    summary = run_experiment(cfg, args.outdir, timing=args.timing)
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            json.dump({"config_hash": summary["config_hash"],
                       **summary["results"]}, fh, indent=2, sort_keys=True)
    print(json.dumps(summary["results"], indent=2, sort_keys=True))
    return 0


# ---------------------------------------------------------------- compare

def cmd_compare(args):
    summaries = []
    for path in args.summaries:
        with open(path, encoding="utf-8") as fh:
            summaries.append(json.load(fh))
    header, rows = compare_runs(summaries, out_path=args.out)
    print(",".join(header))
    for r in rows:
        print(",".join(str(v) for v in r))
    return 0


# ---------------------------------------------------------------- demo

def cmd_demo(args):
    site = {"site-a": "site-a-like", "brittany": "brittany-like"}.get(args.site)
    if site is None:
        raise ConfigError("site", f"unknown demo site {args.site!r}; "
                                  "choose site-a or brittany")
    env = resolve_env(site)
    preset = resolve_sim(site)
    outdir = args.outdir
    threads = _threads(args)
    os.makedirs(outdir, exist_ok=True)
    env_d, sim_d = env.to_dict(), preset.to_dict()

    def log(msg):
        print(msg, file=sys.stderr)

    summaries = []
    log(f"[demo] brute-force reference ({args.brute_years} years)")
    summaries.append(run_experiment(ExperimentConfig(
        name=f"{args.site}-brute", env=env_d, sim=sim_d, method="brute",
        params={"years": args.brute_years,
                "pf_threshold": args.pf_threshold},
        seed=args.seed, threads=threads,
    ), outdir, timing=args.timing))

    log("[demo] sequential sampling")
    summaries.append(run_experiment(ExperimentConfig(
        name=f"{args.site}-seq", env=env_d, sim=sim_d, method="sequential",
        params={"seeds": args.seeds, "iters": args.iters,
                "years": args.seq_years,
                "pf_threshold": args.pf_threshold},
        seed=args.seed, threads=threads,
    ), outdir, timing=args.timing))

    log("[demo] IFORM contour responses")
    summaries.append(run_experiment(ExperimentConfig(
        name=f"{args.site}-iform", env=env_d, sim=sim_d, method="iform",
        params={"return_periods": [50.0, 100.0],
                "response_seeds": args.response_seeds},
        seed=args.seed, threads=threads,
    ), outdir, timing=args.timing))

    log("[demo] direct-sampling contour responses")
    summaries.append(run_experiment(ExperimentConfig(
        name=f"{args.site}-ds", env=env_d, sim=sim_d, method="ds",
        params={"return_periods": [50.0, 100.0],
                "response_seeds": args.response_seeds,
                "samples": args.ds_samples},
        seed=args.seed, threads=threads,
    ), outdir, timing=args.timing))

    cmp_path = os.path.join(outdir, f"{args.site}-comparison.csv")
    header, rows = compare_runs(summaries, out_path=cmp_path)
    log(f"[demo] comparison written to {cmp_path}")
    print(",".join(header))
    for r in rows:
        print(",".join(str(v) for v in r))
    return 0


# ---------------------------------------------------------------- parser

def build_parser():
    p = argparse.ArgumentParser(
        prog="extremis",
        description="Long-term extreme response estimation toolkit "
                    f"(v{__version__}, {get_backend()} kernels)",
    )
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    q = sub.add_parser("env", help="inspect or sample an environmental model")
    q.add_argument("--env", required=True)
    q.add_argument("--sample", type=int, default=0)
    q.add_argument("--out")
    _common(q)
    q.set_defaults(func=cmd_env)

    q = sub.add_parser("sim", help="simulate the synthetic turbine at one condition")
    q.add_argument("--sim", required=True)
    q.add_argument("--u", type=float, required=True)
    q.add_argument("--sigma", type=float, required=True)
    q.add_argument("--seeds", type=int, default=10)
    q.add_argument("--state-hours", type=float, default=None, dest="state_hours")
    q.add_argument("--timeseries", action="store_true")
    q.add_argument("--duration", type=float, default=600.0)
    q.add_argument("--dt", type=float, default=0.1)
    q.add_argument("--out")
    _common(q)
    q.set_defaults(func=cmd_sim)

    q = sub.add_parser("contour", help="environmental contour only")
    q.add_argument("--env", required=True)
    q.add_argument("--method", required=True)
    q.add_argument("--return-period", type=float, default=50.0, dest="return_period")
    q.add_argument("--points", type=int, default=72)
    q.add_argument("--samples", type=float, default=2e7)
    q.add_argument("--out", required=True)
    _common(q)
    q.set_defaults(func=cmd_contour)

    q = sub.add_parser("contour-response",
                       help="contour + response quantiles at each point")
    q.add_argument("--env", required=True)
    q.add_argument("--sim", required=True)
    q.add_argument("--method", required=True)
    q.add_argument("--return-period", type=float, action="append",
                   dest="return_period", default=None)
    q.add_argument("--quantiles", default="0.5,0.9,0.99")
    q.add_argument("--response-seeds", type=int, default=200, dest="response_seeds")
    q.add_argument("--points", type=int, default=72)
    q.add_argument("--samples", type=float, default=2e7)
    q.add_argument("--name", default="contour-response")
    q.add_argument("--outdir", default=".")
    _common(q)
    q.set_defaults(func=cmd_contour_response)

    q = sub.add_parser("fit", help="extreme-value fit with MCMC uncertainty")
    q.add_argument("--samples", required=True)
    q.add_argument("--family", default="gumbel")
    q.add_argument("--tol", type=float, default=0.01)
    q.add_argument("--out")
    _common(q)
    q.set_defaults(func=cmd_fit)

    q = sub.add_parser("gp", help="Gaussian-process surrogate operations")
    q.add_argument("action", choices=["fit"])
    q.add_argument("--fits", required=True)
    q.add_argument("--out", required=True)
    _common(q)
    q.set_defaults(func=cmd_gp)

    q = sub.add_parser("narx", help="polynomial NARX surrogate")
    q.add_argument("action", choices=["fit", "predict"])
    q.add_argument("--design")
    q.add_argument("--lags", default="y:1,2;wind:0,1")
    q.add_argument("--degree", type=int, default=2)
    q.add_argument("--reg", type=float, default=0.0)
    q.add_argument("--model")
    q.add_argument("--input")
    q.add_argument("--init", default="")
    q.add_argument("--out", required=True)
    _common(q)
    q.set_defaults(func=cmd_narx)

    q = sub.add_parser("seq", help="sequential GP-surrogate estimation")
    q.add_argument("--env", required=True)
    q.add_argument("--sim", required=True)
    q.add_argument("--family", default="gumbel")
    q.add_argument("--seeds", type=int, default=18)
    q.add_argument("--iters", type=int, default=30)
    q.add_argument("--years", type=int, default=1000)
    q.add_argument("--init-points", type=int, default=8, dest="init_points")
    q.add_argument("--pf-threshold", type=float, default=27.112, dest="pf_threshold")
    q.add_argument("--candidates", type=int, default=100_000)
    q.add_argument("--checkpoint")
    q.add_argument("--resume", action="store_true")
    q.add_argument("--name", default="seq")
    q.add_argument("--outdir", default=".")
    _common(q)
    q.set_defaults(func=cmd_seq)

    q = sub.add_parser("brute", help="truncated brute-force Monte Carlo")
    q.add_argument("--env", required=True)
    q.add_argument("--sim", required=True)
    q.add_argument("--years", type=int, default=10_000)
    q.add_argument("--cutoff-u", type=float, default=0.0, dest="cutoff_u")
    q.add_argument("--cutoff-sigma", type=float, default=0.0, dest="cutoff_sigma")
    q.add_argument("--pf-threshold", type=float, default=27.112, dest="pf_threshold")
    q.add_argument("--name", default="brute")
    q.add_argument("--outdir", default=".")
    q.add_argument("--out")
    _common(q)
    q.set_defaults(func=cmd_brute)

    q = sub.add_parser("compare", help="side-by-side method comparison")
    q.add_argument("summaries", nargs="+")
    q.add_argument("--out")
    _common(q)
    q.set_defaults(func=cmd_compare)

    q = sub.add_parser("demo", help="small-scale end-to-end comparison pipeline")
    q.add_argument("site", help="site-a or brittany")
    q.add_argument("--outdir", default="demo-out")
    q.add_argument("--brute-years", type=int, default=1500, dest="brute_years")
    q.add_argument("--seq-years", type=int, default=300, dest="seq_years")
    q.add_argument("--seeds", type=int, default=6)
    q.add_argument("--iters", type=int, default=8)
    q.add_argument("--response-seeds", type=int, default=120, dest="response_seeds")
    q.add_argument("--ds-samples", type=float, default=3e7, dest="ds_samples")
    q.add_argument("--pf-threshold", type=float, default=27.112,
                   dest="pf_threshold",
                   help="failure threshold reported by the brute/seq rows")
    _common(q)
    q.set_defaults(func=cmd_demo)

    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        return _error_exit(exc, 2)
    except ExtremisError as exc:
        return _error_exit(exc, 1)
    except (FileNotFoundError, ValueError) as exc:
        return _error_exit(exc, 2)


if __name__ == "__main__":
    sys.exit(main())
