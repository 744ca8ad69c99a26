"""Command-line entry point: ``multicure {simulate,fit,study,curves}``.

Exit codes: 0 success, 1 configuration or ingestion error, 2 numerical failure.
"""
from __future__ import annotations

import argparse
import csv
import glob
import hashlib
import json
import os
import platform
import sys
import time
from dataclasses import asdict, replace

import numpy as np
import scipy

from . import __version__
from .diagnostics import GridSpec, convergence_report, summarize, survival_grids, write_curves, write_summary
from .frailty import QuadratureError, QuadratureSpec
from .likelihood import DatasetError, EligibilityTimeline, LikelihoodError, ModelConfig, read_dataset
from .sampler import ChainConfig, PriorConfig, SamplerError, read_chain, run_chains, write_chain
from .simulator import (
    LAG_SCENARIOS,
    NLS_SCENARIOS,
    ReplicateResult,
    iter_study,
    scenario_from_dict,
    scenario_grid,
    study_report,
    true_values,
    write_simulation,
    write_study,
)

SCHEMA_VERSION = 1
ELIGIBILITY_START_AGE = 50.0
MANIFEST = "manifest.json"


class ConfigError(ValueError):
    pass


# ---------------------------------------------------------------------------
# configuration


def load_config(path) -> dict:
    if path is None:
        return {"schema_version": SCHEMA_VERSION}
    try:
        with open(path) as fh:
            cfg = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: line {exc.lineno} column {exc.colno}: {exc.msg}") from None
    except OSError as exc:
        raise ConfigError(f"{path}: {exc.strerror}") from None
    if not isinstance(cfg, dict):
        raise ConfigError(f"{path}: top level must be a JSON object")
    version = cfg.get("schema_version")
    if version != SCHEMA_VERSION:
        raise ConfigError(f"{path}: schema_version must be {SCHEMA_VERSION}, got {version!r}")
    return cfg


def _timeline(d: dict, args) -> EligibilityTimeline:
    d = dict(d or {})
    if getattr(args, "truncate_lag", None) is not None:
        d["max_lag_years"] = None if args.truncate_lag == "none" else float(args.truncate_lag)
    if getattr(args, "max_age", None) is not None:
        d["eligibility_length"] = float(args.max_age) - ELIGIBILITY_START_AGE
    try:
        return EligibilityTimeline(**d)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"timeline: {exc}") from None


def validate_scenario_dict(d: dict) -> None:
    theta = d.get("theta")
    if theta is not None:
        if abs(sum(theta) - 1.0) > 1e-9:
            raise ConfigError(f"scenario: theta must sum to 1 within 1e-9, got {sum(theta)!r}")
        if min(theta) < 0:
            raise ConfigError("scenario: theta entries must be non-negative")
    rates = [d["lambda_single"]] if "lambda_single" in d else []
    rates += list(d.get("lambda_pair", []))
    if any(not r > 0 for r in rates):
        raise ConfigError("scenario: lag rates must be positive")
    if "alpha" in d and not 0.0 < d["alpha"] <= 1.0:
        raise ConfigError("scenario: alpha must lie in (0, 1]")
    if "lag_scenario" in d and d["lag_scenario"] not in LAG_SCENARIOS:
        raise ConfigError(f"scenario: unknown lag scenario {d['lag_scenario']!r}")
    if "nls_scenario" in d and d["nls_scenario"] not in NLS_SCENARIOS:
        raise ConfigError(f"scenario: unknown screening-count scenario {d['nls_scenario']!r}")


def build_scenario(d: dict, args):
    validate_scenario_dict(d)
    d = dict(d)
    if not any(k in d for k in ("lambda_single", "lambda_pair", "theta")):
        d.setdefault("lag_scenario", "LT1")
        d.setdefault("nls_scenario", "NLS1")
    if "timeline" in d or getattr(args, "truncate_lag", None) is not None or getattr(args, "max_age", None) is not None:
        d["timeline"] = asdict(_timeline(d.get("timeline"), args))
    try:
        return scenario_from_dict(d)
    except (TypeError, ValueError, KeyError) as exc:
        raise ConfigError(f"scenario: {exc}") from None


def build_chain_config(d: dict, args, seed_default: int = 0) -> ChainConfig:
    d = dict(d or {})
    for flag, key in (("chains", "n_chains"), ("iterations", "iterations"), ("burn_in", "burn_in"),
                      ("thin", "thin"), ("seed", "seed")):
        v = getattr(args, flag, None)
        if v is not None:
            d[key] = v
    d.setdefault("seed", seed_default)
    if "blocks" in d:
        d["blocks"] = tuple(d["blocks"])
    try:
        return ChainConfig(**d)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"chain: {exc}") from None


def build_model(d: dict, args) -> ModelConfig:
    d = dict(d or {})
    if getattr(args, "ell", None) is not None:
        d["ell"] = args.ell
    timeline = _timeline(d.pop("timeline", None), args)
    quad = d.pop("quadrature", None)
    try:
        q = QuadratureSpec(**quad) if quad else ModelConfig().quadrature
        return ModelConfig(timeline=timeline, quadrature=q, **d)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"model: {exc}") from None


def build_priors(d: dict) -> PriorConfig:
    d = dict(d or {})
    for key in ("beta_prior", "omega_prior"):
        if key in d:
            d[key] = tuple(d[key])
    try:
        return PriorConfig(**d)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"priors: {exc}") from None


# ---------------------------------------------------------------------------
# manifest


def _canonical(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), default=_jsonable)


def _jsonable(o):
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (np.floating,)):
        return float(o)
    if isinstance(o, (tuple, set)):
        return list(o)
    raise TypeError(type(o).__name__)


def write_manifest(out_dir, command: str, effective: dict, seed, inputs, outputs, started=None) -> dict:
    """The single run manifest of an output directory."""
    text = _canonical(effective)
    manifest = {
        "command": command,
        "config": json.loads(text),
        "config_sha256": hashlib.sha256(text.encode()).hexdigest(),
        "seed": seed,
        "inputs": sorted(inputs),
        "outputs": sorted(outputs),
        "versions": {"multicure": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
                     "python": platform.python_version()},
    }
    if started is not None:
        manifest["wall_clock_seconds"] = round(time.time() - started, 3)
    with open(os.path.join(out_dir, MANIFEST), "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True, default=_jsonable)
        fh.write("\n")
    return manifest


# ---------------------------------------------------------------------------
# commands


def cmd_simulate(args) -> int:
    cfg = load_config(args.config)
    started = time.time() if args.record_timing else None
    scen = build_scenario(cfg.get("scenario", {}), args)
    if "n_subjects" in cfg:
        scen = replace(scen, n_subjects=int(cfg["n_subjects"]))
    seed = args.seed if args.seed is not None else int(cfg.get("seed", 0))
    os.makedirs(args.out, exist_ok=True)
    write_simulation(args.out, scen, seed)
    outputs = [f"{scen.name}.csv", f"{scen.name}.truth.csv", f"{scen.name}.scenario.json"]
    write_manifest(args.out, "simulate", {"scenario": _scenario_echo(scen)}, seed,
                   [args.config] if args.config else [], outputs, started)
    return 0


def _scenario_echo(scen):
    from .simulator import scenario_to_dict

    return scenario_to_dict(scen)


def cmd_fit(args) -> int:
    cfg = load_config(args.config)
    started = time.time() if args.record_timing else None
    model = build_model(cfg.get("model"), args)
    priors = build_priors(cfg.get("priors"))
    chain = build_chain_config(cfg.get("chain"), args)
    try:
        records = read_dataset(args.dataset, model.timeline)
    except OSError as exc:
        raise ConfigError(f"{args.dataset}: {exc.strerror}") from None
    os.makedirs(args.out, exist_ok=True)
    chains = run_chains(records, model, priors, chain, threads=args.threads)
    outputs = []
    for c in chains:
        name = f"chain_{c.chain_index}"
        write_chain(c, os.path.join(args.out, name + ".csv"), os.path.join(args.out, name + ".json"),
                    extra={"seed": chain.seed})
        outputs += [name + ".csv", name + ".json"]
    summary = summarize(chains)
    write_summary(summary, os.path.join(args.out, "summary.csv"), os.path.join(args.out, "summary.json"))
    with open(os.path.join(args.out, "convergence.json"), "w") as fh:
        json.dump(convergence_report(chains), fh, indent=2, sort_keys=True)
        fh.write("\n")
    outputs += ["summary.csv", "summary.json", "convergence.json"]
    effective = {"model": _model_echo(model), "priors": asdict(priors), "chain": asdict(chain)}
    write_manifest(args.out, "fit", effective, chain.seed, [args.dataset] + ([args.config] if args.config else []),
                   outputs, started)
    return 0


def _model_echo(model: ModelConfig) -> dict:
    return {"ell": model.ell, "timeline": asdict(model.timeline), "theta_covariates": model.theta_covariates,
            "lag_covariates": model.lag_covariates, "quadrature": asdict(model.quadrature)}


def _study_grid(cfg, args):
    grid_cfg = cfg.get("grid")
    if grid_cfg == "full":
        n = int(cfg.get("n_subjects", 1000))
        grid = scenario_grid(n)
        if "timeline" in cfg or args.truncate_lag is not None or args.max_age is not None:
            tl = _timeline(cfg.get("timeline"), args)
            grid = [replace(s, timeline=tl) for s in grid]
        return grid
    entries = cfg.get("scenarios")
    if not entries:
        raise ConfigError("study: give 'scenarios' (a list) or \"grid\": \"full\"")
    grid = []
    for i, entry in enumerate(entries):
        if isinstance(entry, str):
            lag, _, nls = entry.partition("x")
            entry = {"lag_scenario": lag, "nls_scenario": nls}
        if not isinstance(entry, dict):
            raise ConfigError(f"study: scenario {i} must be an object or a name like 'LT1xNLS1'")
        entry = dict(entry)
        n = entry.pop("n_subjects", cfg.get("n_subjects"))
        if "timeline" not in entry and "timeline" in cfg:
            entry["timeline"] = cfg["timeline"]
        try:
            scen = build_scenario(entry, args)
        except ConfigError as exc:
            raise ConfigError(f"study: scenario {i}: {exc}") from None
        if n is not None:
            scen = replace(scen, n_subjects=int(n))
        grid.append(scen)
    return grid


RESULT_HEADER = ["scenario", "replicate", "status"] + [
    "theta_0", "theta_1", "theta_2", "median_1_1", "median_2_1", "median_2_2", "alpha"]


def cmd_study(args) -> int:
    cfg = load_config(args.config)
    started = time.time() if args.record_timing else None
    grid = _study_grid(cfg, args)
    replicates = int(cfg.get("replicates", 1))
    if replicates < 1:
        raise ConfigError("study: replicates must be at least 1")
    chain = build_chain_config(cfg.get("chain"), args)
    priors = build_priors(cfg.get("priors"))
    seed = args.seed if args.seed is not None else int(cfg.get("seed", 0))
    estimator = None
    if cfg.get("estimator", "posterior") == "truth":
        def estimator(records, scenario, rseed):
            return true_values(scenario)
    elif cfg.get("estimator", "posterior") != "posterior":
        raise ConfigError("study: estimator must be 'posterior' or 'truth'")
    os.makedirs(args.out, exist_ok=True)
    results: list[ReplicateResult] = []
    stream_path = os.path.join(args.out, "replicates.csv")
    with open(stream_path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(RESULT_HEADER)
        fh.flush()
        for res in iter_study(grid, replicates, chain, seed, priors, estimator, threads=args.threads):
            results.append(res)
            if res.estimates is None:
                w.writerow([res.scenario, res.replicate, "failed: " + res.error] + [""] * 7)
            else:
                w.writerow([res.scenario, res.replicate, "ok"] + [repr(res.estimates[p]) for p in RESULT_HEADER[3:]])
            fh.flush()
    report = study_report(grid, results)
    write_study(report, os.path.join(args.out, "table.csv"))
    effective = {"scenarios": [_scenario_echo(s) for s in grid], "replicates": replicates,
                 "chain": asdict(chain), "priors": asdict(priors), "estimator": cfg.get("estimator", "posterior")}
    write_manifest(args.out, "study", effective, seed, [args.config] if args.config else [],
                   ["replicates.csv", "table.csv"], started)
    for name, rep, err in report.failures:
        print(f"{name} replicate {rep} failed: {err}", file=sys.stderr)
    return 0


def cmd_curves(args) -> int:
    cfg = load_config(args.config)
    started = time.time() if args.record_timing else None
    fit_manifest = os.path.join(args.fit_dir, MANIFEST)
    try:
        with open(fit_manifest) as fh:
            fit = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"{fit_manifest}: cannot read fit manifest ({exc})") from None
    if fit.get("command") != "fit":
        raise ConfigError(f"{fit_manifest}: not the manifest of a fit")
    model = fit["config"]["model"]
    timeline = _timeline(model["timeline"], args)
    paths = sorted(glob.glob(os.path.join(args.fit_dir, "chain_*.csv")))
    if not paths:
        raise ConfigError(f"{args.fit_dir}: no chain files")
    chains = [read_chain(p) for p in paths]
    try:
        spec = GridSpec.from_dict(cfg.get("grid", {}))
        grids = survival_grids(chains, int(model["ell"]), timeline, spec)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"curves: {exc}") from None
    os.makedirs(args.out, exist_ok=True)
    write_curves(grids, os.path.join(args.out, "curves.csv"))
    write_manifest(args.out, "curves", {"fit": fit["config_sha256"], "grid": asdict(spec)}, fit.get("seed"),
                   [os.path.relpath(p, args.fit_dir) for p in paths], ["curves.csv"], started)
    return 0


# ---------------------------------------------------------------------------
# parser


def _common(p, seed=True):
    p.add_argument("--config", help="JSON configuration file")
    p.add_argument("--out", required=True, help="output directory")
    if seed:
        p.add_argument("--seed", type=int)
    p.add_argument("--threads", type=int, default=1, help="maximum worker processes")
    p.add_argument("--truncate-lag", help="maximum lag in years, or 'none'")
    p.add_argument("--max-age", type=float, help="last eligible age in years (eligibility starts at 50)")
    p.add_argument("--record-timing", action="store_true", help="add wall-clock time to the manifest")


def _chain_flags(p):
    p.add_argument("--chains", type=int)
    p.add_argument("--iterations", type=int)
    p.add_argument("--burn-in", type=int)
    p.add_argument("--thin", type=int)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="multicure", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("simulate", help="generate a synthetic dataset")
    _common(p)
    p.set_defaults(func=cmd_simulate)
    p = sub.add_parser("fit", help="run posterior chains on a dataset")
    p.add_argument("dataset")
    _common(p)
    _chain_flags(p)
    p.add_argument("--ell", type=int, choices=(1, 2))
    p.set_defaults(func=cmd_fit)
    p = sub.add_parser("study", help="bias/RMSE replication study")
    _common(p)
    _chain_flags(p)
    p.set_defaults(func=cmd_study)
    p = sub.add_parser("curves", help="survival-curve grids from a fit directory")
    p.add_argument("fit_dir")
    _common(p, seed=False)
    p.set_defaults(func=cmd_curves)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.truncate_lag not in (None, "none"):
        try:
            float(args.truncate_lag)
        except ValueError:
            print("error: --truncate-lag takes a number of years or 'none'", file=sys.stderr)
            return 1
    try:
        return args.func(args)
    except (ConfigError, DatasetError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (SamplerError, LikelihoodError, QuadratureError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
