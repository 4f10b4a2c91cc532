"""Command-line entry point.

Eight subcommands cover the full surface: trial, sweep, diagnose, spectrum,
regimes, hw-test, orthant, phase-plot. Every invocation that writes files
puts them under --out together with a manifest recording the config digest,
tool version, and timestamps; data files themselves carry no timestamps so
reruns are diffable. Exit codes: 0 success, 2 validation or usage error,
1 runtime failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import math
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__, concentration, diagnostics, regimes
from .ensemble import BilevelParams
from .errors import (BilevelError, CapExceeded, ConfigError, IncompleteGrid,
                     InsufficientGrid, InvalidArgument, InvalidParams,
                     MismatchedGrids, PartialFailure)
from .experiments import (MNI, CLASSIFIERS, aggregate, compare_classifiers,
                          params_digest, phase_diagram, read_sweep_csv,
                          run_sweep, run_trial)

_VALIDATION_ERRORS = (ConfigError, InvalidParams, InvalidArgument,
                      InsufficientGrid, IncompleteGrid, MismatchedGrids,
                      CapExceeded, FileNotFoundError, json.JSONDecodeError)


def _digest(obj) -> str:
    blob = json.dumps(obj, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def _write_manifest(out_dir: Path, subcommand: str, config, outputs: list) -> None:
    manifest = {"tool": "bilevel-mni", "version": __version__,
                "subcommand": subcommand, "config_digest": _digest(config),
                "created_utc": time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime()),
                "outputs": sorted(outputs)}
    (out_dir / "manifest.json").write_text(
        json.dumps(manifest, sort_keys=True, indent=2) + "\n")


def _load_config(path: str) -> dict:
    p = Path(path)
    if not p.exists():
        raise FileNotFoundError(f"config file not found: {path}")
    with open(p) as fh:
        return json.load(fh)


def _require_keys(cfg: dict, allowed: set, required: set, label: str) -> None:
    unknown = set(cfg) - allowed
    if unknown:
        raise ConfigError(f"unknown keys in {label} config: {sorted(unknown)}")
    missing = required - set(cfg)
    if missing:
        raise ConfigError(f"missing keys in {label} config: {sorted(missing)}")


def _params_from(cfg: dict, base_seed_override) -> tuple:
    params = BilevelParams(n=int(cfg["n"]), p=float(cfg["p"]), q=float(cfg["q"]),
                           r=float(cfg["r"]), t=float(cfg["t"]),
                           c_k=int(cfg.get("c_k", 1)))
    base_seed = int(cfg.get("base_seed", 0))
    if base_seed_override is not None:
        base_seed = base_seed_override
    return params, base_seed


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _emit(out_dir: Path, name: str, payload: dict) -> str:
    (out_dir / name).write_text(json.dumps(payload, sort_keys=True, indent=2) + "\n")
    return name


def _cmd_trial(args) -> int:
    cfg = _load_config(args.config)
    _require_keys(cfg, {"p", "q", "r", "t", "n", "c_k", "seed", "classifier",
                        "test_points", "base_seed", "include_diagnostics"},
                  {"p", "q", "r", "t", "n"}, "trial")
    params, base_seed = _params_from(cfg, args.base_seed)
    result = run_trial(params, int(cfg.get("seed", 0)),
                       cfg.get("classifier", MNI),
                       int(cfg.get("test_points", 100)), base_seed,
                       include_diagnostics=bool(cfg.get("include_diagnostics", False)))
    payload = {"digest": result.digest, "seed": result.seed,
               "classifier": result.classifier,
               "test_points": result.test_points, "errors": result.errors,
               "error_rate": result.error_rate,
               "wall_time_ms": result.wall_time_ms,
               "diagnostics_summary": result.diagnostics_summary}
    out = _out_dir(args)
    name = _emit(out, "trial.json", payload)
    _write_manifest(out, "trial", cfg, [name])
    print(json.dumps({"error_rate": result.error_rate, "errors": result.errors,
                      "out": str(out / name)}))
    return 0


def _cmd_sweep(args) -> int:
    cfg = _load_config(args.config)
    out = _out_dir(args)
    if args.base_seed is not None:
        cfg = {**cfg, "base_seed": args.base_seed}
    try:
        result = run_sweep(cfg, out, workers=args.workers)
    finally:
        _write_manifest(out, "sweep", cfg, ["sweep.csv", "sweep.json"])
    if args.verbose:
        for rec in result.records:
            print(f"{rec.point} {rec.classifier}: mean {rec.mean_error:.4f}",
                  file=sys.stderr)
    print(json.dumps({"records": len(result.records),
                      "skipped": len(result.skipped),
                      "csv": str(result.csv_path)}))
    return 0


def _cmd_diagnose(args) -> int:
    cfg = _load_config(args.config)
    _require_keys(cfg, {"p", "q", "r", "t", "n", "c_k", "seed", "base_seed",
                        "alpha", "beta"}, {"p", "q", "r", "t", "n"}, "diagnose")
    params, base_seed = _params_from(cfg, args.base_seed)
    from . import rng
    trial_seed = rng.derive_seed(base_seed, params_digest(params),
                                 int(cfg.get("seed", 0)))
    fitted = diagnostics.fit(params, trial_seed)
    alpha = int(cfg.get("alpha", 0))
    beta = int(cfg.get("beta", 1))
    payload = {"survival_contamination":
               diagnostics.survival_contamination(fitted, alpha, beta).to_dict()}
    if fitted.scaling.k >= 3:
        payload["correlation_report"] = diagnostics.correlation_report(
            fitted, alpha).to_dict()
    out = _out_dir(args)
    name = _emit(out, "diagnostics.json", payload)
    _write_manifest(out, "diagnose", cfg, [name])
    print(json.dumps({"su_cn_ratio":
                      payload["survival_contamination"]["su_cn_ratio"],
                      "out": str(out / name)}))
    return 0


def _cmd_spectrum(args) -> int:
    cfg = _load_config(args.config)
    _require_keys(cfg, {"p", "q", "r", "t", "n", "c_k", "seed", "base_seed"},
                  {"p", "q", "r", "t", "n"}, "spectrum")
    params, base_seed = _params_from(cfg, args.base_seed)
    from . import rng
    trial_seed = rng.derive_seed(base_seed, params_digest(params),
                                 int(cfg.get("seed", 0)))
    fitted = diagnostics.fit(params, trial_seed)
    report = diagnostics.spectrum_report(fitted)
    out = _out_dir(args)
    name = _emit(out, "spectrum.json", report.to_dict())
    _write_manifest(out, "spectrum", cfg, [name])
    print(json.dumps({"flat_deviation_unfavored": report.flat_deviation_unfavored,
                      "spike_midpoint_ratio": report.spike_midpoint_ratio,
                      "out": str(out / name)}))
    return 0


def _cmd_regimes(args) -> int:
    payload = {"mni": regimes.mni_regime(args.p, args.q, args.r, args.t).to_dict(),
               "averaging": regimes.averaging_regime(
                   args.p, args.q, args.r, args.t).to_dict(),
               "legacy": regimes.legacy_regimes(args.p, args.q, args.r,
                                                args.t).to_dict(),
               "regression_works": regimes.regression_works(args.q, args.r).to_dict()}
    print(json.dumps(payload, sort_keys=True, indent=2))
    if args.out is not None:
        out = _out_dir(args)
        cfg = {"p": args.p, "q": args.q, "r": args.r, "t": args.t}
        name = _emit(out, "regimes.json", payload)
        _write_manifest(out, "regimes", cfg, [name])
    return 0


def _cmd_hw_test(args) -> int:
    cfg = _load_config(args.config)
    _require_keys(cfg, {"mode", "n", "pi", "coupling", "trials", "epsilons",
                        "seed"}, {"mode", "n", "pi"}, "hw-test")
    mode = {"soft": concentration.SOFT_BOUNDED,
            "hard": concentration.HARD_MASKED}.get(cfg["mode"], cfg["mode"])
    sampler = concentration.SparsePairSampler(
        n=int(cfg["n"]), pi=float(cfg["pi"]), mode=mode,
        coupling=float(cfg.get("coupling", 0.0)))
    trials = int(cfg.get("trials", 10**4))
    seed = int(cfg.get("seed", 0))
    if args.base_seed is not None:
        seed = args.base_seed
    sd = math.sqrt(sampler.n * sampler.pi)
    eps = cfg.get("epsilons") or [f * sd for f in (0.5, 1.0, 1.5, 2.0, 2.5,
                                                   3.0, 3.5, 4.0)]
    estimate = concentration.empirical_bilinear_tail(
        sampler, np.eye(sampler.n), eps, trials, seed=seed)
    frob, spec = math.sqrt(sampler.n), 1.0
    c_fit = concentration.fitted_constant(estimate, 1.0, sampler.pi, frob, spec)
    out = _out_dir(args)
    lines = ["epsilon,p_hat,wilson_lo,wilson_hi,bound"]
    for e, ph, lo, hi in zip(estimate.epsilon, estimate.p_hat,
                             estimate.wilson_lo, estimate.wilson_hi):
        bound = concentration.hw_bound(e, 1.0, sampler.pi, frob, spec, c_fit)
        lines.append(f"{e!r},{ph!r},{lo!r},{hi!r},{bound!r}")
    (out / "tail.csv").write_text("\n".join(lines) + "\n")
    name = _emit(out, "hw.json", {"estimate": estimate.to_dict(),
                                  "fitted_constant": c_fit,
                                  "matrix": "identity",
                                  "frob_norm": frob, "spec_norm": spec})
    _write_manifest(out, "hw-test", cfg, ["tail.csv", name])
    print(json.dumps({"fitted_constant": c_fit, "out": str(out / 'tail.csv')}))
    return 0


def _cmd_orthant(args) -> int:
    k_grid = [int(k) for k in args.k_grid.split(",")]
    fit = concentration.orthant_scaling(args.rho, k_grid, args.trials,
                                        seed=args.seed)
    payload = fit.to_dict()
    print(json.dumps(payload, sort_keys=True))
    if args.out is not None:
        out = _out_dir(args)
        cfg = {"rho": args.rho, "k_grid": k_grid, "trials": args.trials,
               "seed": args.seed}
        name = _emit(out, "orthant.json", payload)
        _write_manifest(out, "orthant", cfg, [name])
    return 0


def _cmd_phase_plot(args) -> int:
    rows = read_sweep_csv(args.csv)
    records = aggregate(rows)
    fixed = {}
    if args.fixed:
        for part in args.fixed.split(","):
            name, _, value = part.partition("=")
            if not value:
                raise ConfigError(f"bad --fixed entry {part!r}; use name=value")
            fixed[name.strip()] = float(value)
    out = _out_dir(args)
    diagram = phase_diagram(records, axes=(args.x, args.y), fixed=fixed,
                            classifier=args.classifier,
                            out_svg=out / "phase.svg")
    name = _emit(out, "phase.json", diagram.to_dict())
    cfg = {"csv": str(args.csv), "x": args.x, "y": args.y, "fixed": fixed,
           "classifier": args.classifier}
    _write_manifest(out, "phase-plot", cfg, ["phase.svg", name])
    if args.compare:
        table = [row.to_dict() for row in compare_classifiers(records)]
        _emit(out, "comparison.json", {"rows": table})
    print(json.dumps({"cells": len(diagram.x_values) * len(diagram.y_values),
                      "svg": str(out / 'phase.svg')}))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="bilevel-mni",
        description="Monte Carlo and diagnostic tooling for minimum-norm "
                    "interpolating classifiers on bi-level Gaussian ensembles.")
    parser.add_argument("--version", action="version",
                        version=f"bilevel-mni {__version__}")
    sub = parser.add_subparsers(dest="subcommand", required=True)

    def common(p, out_required=True):
        p.add_argument("--out", required=out_required,
                       default=None if out_required else None,
                       help="output directory (artifacts plus manifest.json)")
        p.add_argument("--base-seed", type=int, default=None,
                       help="override the config's base seed")
        p.add_argument("-v", "--verbose", action="store_true")

    p = sub.add_parser("trial", help="single Monte Carlo trial from a JSON config")
    p.add_argument("--config", required=True)
    common(p)
    p.set_defaults(func=_cmd_trial)

    p = sub.add_parser("sweep", help="parameter-grid sweep from a JSON spec")
    p.add_argument("--config", required=True)
    p.add_argument("--workers", type=int, default=os.cpu_count(),
                   help="trial process pool size (results independent of N)")
    common(p)
    p.set_defaults(func=_cmd_sweep)

    p = sub.add_parser("diagnose",
                       help="survival/contamination and correlation report")
    p.add_argument("--config", required=True)
    common(p)
    p.set_defaults(func=_cmd_diagnose)

    p = sub.add_parser("spectrum", help="Gram spectrum report")
    p.add_argument("--config", required=True)
    common(p)
    p.set_defaults(func=_cmd_spectrum)

    p = sub.add_parser("regimes", help="closed-form phase verdicts as JSON")
    p.add_argument("--p", type=float, required=True)
    p.add_argument("--q", type=float, required=True)
    p.add_argument("--r", type=float, required=True)
    p.add_argument("--t", type=float, required=True)
    p.add_argument("--out", default=None,
                   help="optional output directory for regimes.json")
    p.add_argument("-v", "--verbose", action="store_true")
    p.set_defaults(func=_cmd_regimes)

    p = sub.add_parser("hw-test", help="empirical bilinear tail table (CSV)")
    p.add_argument("--config", required=True)
    common(p)
    p.set_defaults(func=_cmd_hw_test)

    p = sub.add_parser("orthant", help="equicorrelated orthant scaling fit")
    p.add_argument("--rho", type=float, required=True)
    p.add_argument("--k-grid", default="4,8,16,32",
                   help="comma-separated k values")
    p.add_argument("--trials", type=int, default=10**6)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=None,
                   help="optional output directory for orthant.json")
    p.add_argument("-v", "--verbose", action="store_true")
    p.set_defaults(func=_cmd_orthant)

    p = sub.add_parser("phase-plot", help="phase diagram SVG from a sweep CSV")
    p.add_argument("--csv", required=True, help="sweep CSV path")
    p.add_argument("--x", default="r", help="x axis (one of p,q,r,t,n)")
    p.add_argument("--y", default="t", help="y axis (one of p,q,r,t,n)")
    p.add_argument("--fixed", default="",
                   help="comma-separated name=value pins, e.g. p=1.5,q=0.4")
    p.add_argument("--classifier", default=MNI, choices=list(CLASSIFIERS))
    p.add_argument("--compare", action="store_true",
                   help="also write a paired MNI vs Averaging table")
    common(p)
    p.set_defaults(func=_cmd_phase_plot)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    try:
        return args.func(args)
    except _VALIDATION_ERRORS as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except PartialFailure as e:
        print(f"error: {len(e.failures)} trial(s) failed: {e.failures[:3]}",
              file=sys.stderr)
        return 1
    except BilevelError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except Exception as e:  # noqa: BLE001 - CLI boundary
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
