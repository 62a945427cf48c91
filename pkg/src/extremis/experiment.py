"""Named, reproducible experiments over the toolkit.

An ExperimentConfig plus the package version fully determines every
output: all randomness flows from the master seed through purpose-
tagged substreams, files embed the config hash, and wall-clock timing
is kept out of result files unless explicitly requested.
"""
from __future__ import annotations

import csv
import hashlib
import json
import math
import os
import time
from dataclasses import dataclass, field

import numpy as np

from . import __version__
from .bruteforce import TruncationSpec, brute_force_run
from .contours import (
    contour_extreme_response,
    crop_contour,
    ds_contour_from_model,
    iform_contour,
)
from .envmodel import env_model_from_dict, exceedance_probability
from .errors import ConfigError, EmptyContourError, IncompatibleRunsError
from .presets import env_preset, sim_preset, sim_preset_from_file
from .rng import substream
from .sequential import run_sequential
from .simulator import SimPreset

__all__ = [
    "ExperimentConfig",
    "config_hash",
    "resolve_env",
    "resolve_sim",
    "run_experiment",
    "compare_runs",
    "write_csv",
]

METHODS = ("iform", "ds", "sequential", "brute")


def _canonical(obj):
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def config_hash(d):
    return hashlib.sha256(_canonical(d).encode()).hexdigest()[:16]


def resolve_env(spec):
    """Env model from a preset name, config path, or dict."""
    if isinstance(spec, dict):
        return env_model_from_dict(spec)
    if isinstance(spec, str) and (os.sep in spec or spec.endswith(".json")):
        from .envmodel import load_env_config
        return load_env_config(spec)
    return env_preset(spec)


def resolve_sim(spec):
    """Sim preset from a preset name, file path, or dict."""
    if isinstance(spec, SimPreset):
        return spec
    if isinstance(spec, dict):
        d = dict(spec)
        d.pop("name", None)
        name = spec.get("name", "custom")
        return SimPreset(name=name, **{k: tuple(v) if isinstance(v, list) else v
                                       for k, v in d.items()})
    if isinstance(spec, str) and (os.sep in spec or spec.endswith(".json")):
        return sim_preset_from_file(spec)
    return sim_preset(spec)


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything needed to rerun an experiment bit-for-bit."""

    name: str
    env: dict              # env-model config echo
    sim: dict              # sim-preset echo (may be empty for pure-contour runs)
    method: str
    params: dict = field(default_factory=dict)
    seed: int = 0
    threads: int = 1

    def __post_init__(self):
        if self.method not in METHODS:
            raise ConfigError(
                "method",
                f"unknown method {self.method!r}; choose one of {', '.join(METHODS)}",
            )
        if self.threads < 1:
            raise ConfigError("threads", "must be >= 1")

    def to_dict(self):
        return {
            "name": self.name,
            "env": self.env,
            "sim": self.sim,
            "method": self.method,
            "params": dict(self.params),
            "seed": int(self.seed),
            "threads": int(self.threads),
        }

    @property
    def hash(self):
        # thread count affects scheduling only, never results
        d = self.to_dict()
        d.pop("threads")
        return config_hash(d)


def write_csv(path, header, rows, cfg_hash=None):
    """CSV writer; the first line carries the config hash as a comment."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        if cfg_hash is not None:
            fh.write(f"# config_hash={cfg_hash}\n")
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)


def _fmt(x):
    return f"{x:.12g}" if isinstance(x, float) else str(x)


def _contour_for(env, method, pe, params, seed):
    n_points = int(params.get("points", 72))
    if method == "iform":
        return iform_contour(env, pe, n_points)
    n_samples = int(params.get("samples", 20_000_000))
    return ds_contour_from_model(
        env, pe, n_samples, n_angles=n_points,
        rng=substream(seed, "ds-samples"),
        chunk_size=int(params.get("chunk_size", 1_000_000)),
    )


def _run_contour(cfg, outdir, timing):
    env = env_model_from_dict(cfg.env)
    preset = resolve_sim(cfg.sim)
    params = cfg.params
    periods = params.get("return_periods", [50.0])
    quantiles = tuple(params.get("quantiles", (0.5, 0.9, 0.99)))
    n_seeds = int(params.get("response_seeds", 200))
    results = {}
    files = {}
    for T in periods:
        pe = exceedance_probability(T, env.state_duration_hours)
        contour = _contour_for(env, cfg.method, pe, params, cfg.seed)
        try:
            cropped = crop_contour(contour, preset.cut_in, preset.cut_out)
        except EmptyContourError:
            cropped = contour
        table = contour_extreme_response(
            cropped, preset, n_seeds, quantiles=quantiles,
            rng=substream(cfg.seed, "contour-response", int(T)),
            threads=cfg.threads,
        )
        tag = f"{int(T)}yr"
        cpath = os.path.join(outdir, f"{cfg.name}_contour_{tag}.csv")
        write_csv(
            cpath, ["theta_deg", "u", "sigma_u"],
            [[_fmt(a), _fmt(x), _fmt(y)] for a, (x, y) in
             zip(contour.angles_deg, contour.points)],
            cfg.hash,
        )
        tpath = os.path.join(outdir, f"{cfg.name}_response_{tag}.csv")
        rows = []
        for i in range(len(table.point_u)):
            for j, q in enumerate(table.quantiles):
                rows.append([_fmt(float(table.point_u[i])),
                             _fmt(float(table.point_sigma[i])),
                             _fmt(float(q)), _fmt(float(table.values[i, j]))])
        write_csv(tpath, ["u", "sigma_u", "quantile", "response_mnm"], rows, cfg.hash)
        files[f"contour_{tag}"] = cpath
        files[f"response_{tag}"] = tpath
        summary = table.summary()
        results[tag] = {
            "return_period_years": float(T),
            "pe": pe,
            "n_points": int(cropped.n_points),
            "quantiles": {
                f"{q:g}": {
                    "response_mnm": info["response_mnm"],
                    "condition": [info["condition"].u, info["condition"].sigma_u],
                    "flagged": info["flagged"],
                }
                for q, info in summary.items()
            },
        }
    rv_q = f"{float(params.get('rv_quantile', 0.9)):g}"
    flat = {}
    for tag, res in results.items():
        if rv_q in res["quantiles"]:
            flat[f"rv{tag[:-2]}"] = res["quantiles"][rv_q]["response_mnm"]
    return {"contours": results, **flat}, files


def _run_sequential(cfg, outdir, timing):
    env = env_model_from_dict(cfg.env)
    preset = resolve_sim(cfg.sim)
    p = cfg.params
    history = run_sequential(
        env, preset,
        family=p.get("family", "gumbel"),
        n_seeds=int(p.get("seeds", 18)),
        init_points=int(p.get("init_points", 8)),
        max_iters=int(p.get("iters", 30)),
        years=int(p.get("years", 1000)),
        rng=substream(cfg.seed, "sequential"),
        pf_threshold=float(p.get("pf_threshold", 27.112)),
        resample_longterm=bool(p.get("resample_longterm", False)),
        threads=cfg.threads,
        checkpoint_path=p.get("checkpoint"),
        resume=bool(p.get("resume", False)),
        n_candidates=int(p.get("candidates", 100_000)),
        acq_norm=p.get("acq_norm", "euclidean"),
    )
    hpath = os.path.join(outdir, f"{cfg.name}_history.csv")
    rows = [[r.iteration, _fmt(r.x_new.u), _fmt(r.x_new.sigma_u),
             _fmt(r.rv50), _fmt(r.rv100), _fmt(r.p_f),
             f"{r.wall_s:.3f}" if timing else "0.000"]
            for r in history.records]
    write_csv(hpath, ["iter", "u_new", "sigma_u_new", "rv50_mnm",
                      "rv100_mnm", "pf", "wall_s"], rows, cfg.hash)
    epath = os.path.join(outdir, f"{cfg.name}_exceed.csv")
    run = history.final_run
    write_csv(epath, ["u", "sigma_u", "response_mnm"],
              [[_fmt(float(u)), _fmt(float(s)), _fmt(float(r))]
               for (u, s), r in zip(run.exceed_conditions, run.exceed_responses)],
              cfg.hash)
    gpath = os.path.join(outdir, f"{cfg.name}_gp.json")
    history.gp.save(gpath)
    last = history.records[-1]
    results = {
        "rv50": last.rv50,
        "rv100": last.rv100,
        "pf": last.p_f,
        "iterations": last.iteration,
        "converged": history.converged,
        "n_training_points": len(history.training),
        "scale_clamps": int(run.n_clamped),
    }
    return results, {"history": hpath, "exceedances": epath, "gp_model": gpath}


def _run_brute(cfg, outdir, timing):
    env = env_model_from_dict(cfg.env)
    preset = resolve_sim(cfg.sim)
    p = cfg.params
    trunc = TruncationSpec(float(p.get("cutoff_u", 0.0)),
                           float(p.get("cutoff_sigma", 0.0)))
    res = brute_force_run(
        env, preset, int(p.get("years", 10_000)), trunc,
        rng=substream(cfg.seed, "brute"), threads=cfg.threads,
    )
    threshold = float(p.get("pf_threshold", 27.112))
    results = res.to_dict()
    results["pf"] = float(np.mean(res.annual_maxima > threshold))
    apath = os.path.join(outdir, f"{cfg.name}_annual_maxima.csv")
    write_csv(apath, ["year", "annual_max_mnm"],
              [[y, _fmt(float(v))] for y, v in enumerate(res.annual_maxima)],
              cfg.hash)
    return results, {"annual_maxima": apath}


def run_experiment(cfg, outdir=".", timing=False):
    """Run one experiment and write its files plus a summary JSON.

    Returns the summary dict; the summary file is
    ``<outdir>/<name>_summary.json``.
    """
    os.makedirs(outdir, exist_ok=True)
    t0 = time.perf_counter()
    runner = {
        "iform": _run_contour,
        "ds": _run_contour,
        "sequential": _run_sequential,
        "brute": _run_brute,
    }[cfg.method]
    results, files = runner(cfg, outdir, timing)
    summary = {
        "name": cfg.name,
        "method": cfg.method,
        "version": __version__,
        "config": cfg.to_dict(),
        "config_hash": cfg.hash,
        "env_hash": config_hash(cfg.env),
        "sim_hash": config_hash(cfg.sim),
        "results": results,
        "files": files,
        "wall_s": round(time.perf_counter() - t0, 3) if timing else 0.0,
    }
    spath = os.path.join(outdir, f"{cfg.name}_summary.json")
    with open(spath, "w", encoding="utf-8") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
    summary["summary_path"] = spath
    return summary


def _extract_rv(summary):
    r = summary["results"]
    return (r.get("rv50"), r.get("rv100"), r.get("pf"))


def compare_runs(summaries, out_path=None):
    """Side-by-side rv50/rv100/p_f across runs of compatible settings.

    Relative differences are reported against the brute-force entry
    when one is present.  Refuses fewer than two summaries or summaries
    whose env/sim settings differ.
    """
    if len(summaries) < 2:
        raise IncompatibleRunsError("need at least 2 summaries to compare")
    env_hashes = {s["env_hash"] for s in summaries}
    if len(env_hashes) > 1:
        raise IncompatibleRunsError("env settings differ between runs")
    sim_hashes = {s["sim_hash"] for s in summaries if s["config"]["sim"]}
    if len(sim_hashes) > 1:
        raise IncompatibleRunsError("sim settings differ between runs")
    baseline = next((s for s in summaries if s["method"] == "brute"), None)
    base_rv = _extract_rv(baseline) if baseline else (None, None, None)
    header = ["method", "name", "rv50_mnm", "rv100_mnm", "pf",
              "rel_rv50", "rel_rv100"]
    rows = []
    for s in summaries:
        rv50, rv100, pf = _extract_rv(s)
        rel50 = rel100 = ""
        if baseline is not None and s is not baseline:
            if rv50 is not None and base_rv[0]:
                rel50 = f"{(rv50 - base_rv[0]) / base_rv[0]:.6g}"
            if rv100 is not None and base_rv[1]:
                rel100 = f"{(rv100 - base_rv[1]) / base_rv[1]:.6g}"
        rows.append([
            s["method"], s["name"],
            "" if rv50 is None else _fmt(rv50),
            "" if rv100 is None else _fmt(rv100),
            "" if pf is None else _fmt(pf),
            rel50, rel100,
        ])
    if out_path:
        write_csv(out_path, header, rows,
                  cfg_hash=config_hash(sorted(s["config_hash"] for s in summaries)))
    return header, rows
