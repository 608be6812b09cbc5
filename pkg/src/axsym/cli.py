"""Command line driver.

    axsym <command> --config <path> [--out <dir>] [--threads <k>] [--seed <u64>]

Commands: simulate, verify, estimate, extract, roundtrip.  The config is a
JSON object; unknown keys are rejected at every level.
"""

from __future__ import annotations

import argparse
import copy
import json
import logging
import math
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .core import SeedSpec, build_grid
from .covariance import (closed_form_model, extract_fourier_coefficients, psd_check,
                         reversibility_diagnostic, series_model, symmetry_diagnostic,
                         thm7_check)
from .estimate import (empirical_covariance, oracle_loop_passes, random_pairs,
                       reversibility_test, series_targets)
from .kernels import (AffineLatFunction, MatrixKernel, make_cosh_family, make_lambda_family,
                      make_log_family, make_poisson_family, make_separable_time, table_family)
from .simulate import (SimulationPlan, read_ensemble_binary, read_ensemble_csv,
                       synthesize_field, write_ensemble_binary, write_ensemble_csv)

log = logging.getLogger("axsym")

COMMANDS = ("simulate", "verify", "estimate", "extract", "roundtrip")
FAMILY_KINDS = ("cosh", "log", "poisson", "lambda", "separable", "table")


class ConfigError(ValueError):
    """Invalid configuration; ``field`` points at the offending key."""

    def __init__(self, field, message):
        super().__init__(f"{field}: {message}" if field else message)
        self.field = field


DEFAULTS = {
    "grid": {"lat_count": 5, "lon_count": 16, "time_count": 1},
    "N": None,
    "K": 1000,
    "seed": 0,
    "tolerances": {"psd_tol": 1e-8, "quadrature_M": 4096, "z_threshold": 4.0,
                   "median_z": 1.5, "coverage": 0.95},
    "output": {"dir": "axsym_out", "formats": ["csv"]},
    "verify": {"n_configs": 100, "max_l": 8, "levels": 8, "n_probe": 64},
    "estimate": {"n_pairs": 40, "input": None, "subtract_mean": False},
    "extract": {"n_max": 8, "phi1": 0.0, "phi2": 0.0, "t": 0.0},
}

TOP_KEYS = {"command", "family", "grid", "N", "K", "seed", "tolerances", "output",
            "verify", "estimate", "extract"}


@dataclass
class RunConfig:
    command: str
    family: dict
    grid: dict
    N: int | None
    K: int
    seed: int
    tolerances: dict
    output: dict
    verify: dict
    estimate: dict
    extract: dict
    raw: dict = field(default_factory=dict)

    def to_dict(self):
        return {"command": self.command, "family": self.family, "grid": self.grid,
                "N": self.N, "K": self.K, "seed": self.seed, "tolerances": self.tolerances,
                "output": self.output, "verify": self.verify, "estimate": self.estimate,
                "extract": self.extract}


# ---------------------------------------------------------------------------
# validation helpers


def _check_keys(obj, allowed, where):
    if not isinstance(obj, dict):
        raise ConfigError(where, "expected a JSON object")
    for key in obj:
        if key not in allowed:
            raise ConfigError(f"{where}.{key}" if where else key, f"unknown key {key!r}")


def _int(value, where, lo=None, hi=None):
    if isinstance(value, bool) or not isinstance(value, (int, float)) or int(value) != value:
        raise ConfigError(where, f"expected an integer, got {value!r}")
    value = int(value)
    if lo is not None and value < lo:
        raise ConfigError(where, f"must be >= {lo}, got {value}")
    if hi is not None and value > hi:
        raise ConfigError(where, f"must be <= {hi}, got {value}")
    return value


def _num(value, where, lo=None, hi=None, strict_lo=False):
    if isinstance(value, bool) or not isinstance(value, (int, float)) or not math.isfinite(value):
        raise ConfigError(where, f"expected a finite number, got {value!r}")
    value = float(value)
    if lo is not None and (value <= lo if strict_lo else value < lo):
        raise ConfigError(where, f"must be {'>' if strict_lo else '>='} {lo}, got {value}")
    if hi is not None and value > hi:
        raise ConfigError(where, f"must be <= {hi}, got {value}")
    return value


def _merge(defaults, given, where):
    _check_keys(given, set(defaults), where)
    out = copy.deepcopy(defaults)
    out.update(given)
    return out


def _validate_lat_function(spec, where):
    if isinstance(spec, (int, float)) and not isinstance(spec, bool):
        c0, c1 = _num(spec, where, 0, strict_lo=True), 0.0
    else:
        _check_keys(spec, {"c0", "c1"}, where)
        if "c0" not in spec:
            raise ConfigError(f"{where}.c0", "missing")
        c0 = _num(spec["c0"], f"{where}.c0")
        c1 = _num(spec.get("c1", 0.0), f"{where}.c1")
        if min(c0, c0 + c1) <= 0:
            raise ConfigError(where, "b(phi) = c0 + c1*phi/pi must be positive on [0, pi]")
    return {"c0": c0, "c1": c1}


def _validate_base(spec, where):
    _check_keys(spec, {"matrix", "length_scale", "alpha"}, where)
    if "matrix" not in spec:
        raise ConfigError(f"{where}.matrix", "missing")
    M = spec["matrix"]
    if isinstance(M, (int, float)) and not isinstance(M, bool):
        M = [[M]]
    try:
        arr = np.array(M, dtype=float)
    except (TypeError, ValueError):
        raise ConfigError(f"{where}.matrix", "expected a square matrix of numbers") from None
    if arr.ndim != 2 or arr.shape[0] != arr.shape[1]:
        raise ConfigError(f"{where}.matrix", "expected a square matrix")
    if np.any(np.abs(arr) >= 1):
        raise ConfigError(f"{where}.matrix", "entries must lie in (-1, 1)")
    out = {"matrix": arr.tolist(), "length_scale": None, "alpha": 0.0}
    if spec.get("length_scale") is not None:
        out["length_scale"] = _num(spec["length_scale"], f"{where}.length_scale", 0, strict_lo=True)
    if "alpha" in spec:
        out["alpha"] = _num(spec["alpha"], f"{where}.alpha", 0)
    try:
        MatrixKernel(**out)
    except ValueError as exc:
        raise ConfigError(where, str(exc)) from None
    return out


def _validate_family(spec, where="family"):
    if not isinstance(spec, dict):
        raise ConfigError(where, "expected a JSON object")
    kind = spec.get("kind")
    if kind not in FAMILY_KINDS:
        raise ConfigError(f"{where}.kind", f"unknown family kind {kind!r}; "
                                           f"expected one of {', '.join(FAMILY_KINDS)}")
    if kind == "cosh":
        _check_keys(spec, {"kind", "b"}, where)
        b = spec.get("b")
        if not isinstance(b, list) or not b:
            raise ConfigError(f"{where}.b", "expected a non-empty list of latitude functions")
        return {"kind": kind, "b": [_validate_lat_function(x, f"{where}.b[{i}]")
                                    for i, x in enumerate(b)]}
    if kind in ("log", "poisson"):
        _check_keys(spec, {"kind", "base"}, where)
        if "base" not in spec:
            raise ConfigError(f"{where}.base", "missing")
        return {"kind": kind, "base": _validate_base(spec["base"], f"{where}.base")}
    if kind == "lambda":
        _check_keys(spec, {"kind", "lambda", "base"}, where)
        lam = _num(spec.get("lambda", 0.0), f"{where}.lambda")
        if abs(lam) > 1:
            raise ConfigError(f"{where}.lambda",
                              f"|lambda| must be <= 1 for the sine-weighted family, got {lam}")
        if "base" not in spec:
            raise ConfigError(f"{where}.base", "missing")
        base = _validate_family(spec["base"], f"{where}.base")
        if not build_family(base).reversible:
            raise ConfigError(f"{where}.base", "base family must be reversible")
        return {"kind": kind, "lambda": lam, "base": base}
    if kind == "separable":
        _check_keys(spec, {"kind", "alpha", "spatial"}, where)
        alpha = _num(spec.get("alpha", 0.0), f"{where}.alpha", 0)
        if "spatial" not in spec:
            raise ConfigError(f"{where}.spatial", "missing")
        return {"kind": kind, "alpha": alpha,
                "spatial": _validate_family(spec["spatial"], f"{where}.spatial")}
    # table
    _check_keys(spec, {"kind", "B", "A"}, where)
    if "B" not in spec:
        raise ConfigError(f"{where}.B", "missing")
    try:
        B = np.array(spec["B"], dtype=float)
        A = None if spec.get("A") is None else np.array(spec["A"], dtype=float)
        table_family(B, A)
    except (TypeError, ValueError) as exc:
        raise ConfigError(where, str(exc)) from None
    return {"kind": kind, "B": B.tolist(), "A": None if A is None else A.tolist()}


def build_family(spec):
    """Instantiate a validated family specification."""
    kind = spec["kind"]
    if kind == "cosh":
        return make_cosh_family([AffineLatFunction(b["c0"], b["c1"]) for b in spec["b"]])
    if kind == "log":
        return make_log_family(MatrixKernel(**spec["base"]))
    if kind == "poisson":
        return make_poisson_family(MatrixKernel(**spec["base"]))
    if kind == "lambda":
        return make_lambda_family(build_family(spec["base"]), spec["lambda"])
    if kind == "separable":
        return make_separable_time(build_family(spec["spatial"]), spec["alpha"])
    return table_family(spec["B"], spec["A"])


def parse_config(text, command=None):
    """Validate a JSON config and fill in defaults."""
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError("", f"malformed JSON at line {exc.lineno} column {exc.colno}: "
                              f"{exc.msg}") from None
    _check_keys(raw, TOP_KEYS, "")
    cfg_cmd = raw.get("command")
    if cfg_cmd is not None and cfg_cmd not in COMMANDS:
        raise ConfigError("command", f"unknown command {cfg_cmd!r}")
    if command is not None and cfg_cmd is not None and command != cfg_cmd:
        raise ConfigError("command", f"config says {cfg_cmd!r} but {command!r} was requested")
    command = command or cfg_cmd
    if command not in COMMANDS:
        raise ConfigError("command", "no command given")

    if "family" not in raw:
        raise ConfigError("family", "missing")
    family = _validate_family(raw["family"])

    grid = _merge(DEFAULTS["grid"], raw.get("grid", {}), "grid")
    for key in ("lat_count", "lon_count", "time_count"):
        grid[key] = _int(grid[key], f"grid.{key}", 1)
    N = raw.get("N")
    N = None if N is None else _int(N, "N", 0, 10**5)
    K = _int(raw.get("K", DEFAULTS["K"]), "K", 1)
    seed = _int(raw.get("seed", DEFAULTS["seed"]), "seed", 0, 2**64 - 1)

    tol = _merge(DEFAULTS["tolerances"], raw.get("tolerances", {}), "tolerances")
    tol["psd_tol"] = _num(tol["psd_tol"], "tolerances.psd_tol", 0, strict_lo=True)
    tol["quadrature_M"] = _int(tol["quadrature_M"], "tolerances.quadrature_M", 4)
    if tol["quadrature_M"] % 2:
        raise ConfigError("tolerances.quadrature_M", "must be even")
    tol["z_threshold"] = _num(tol["z_threshold"], "tolerances.z_threshold", 0, strict_lo=True)
    tol["median_z"] = _num(tol["median_z"], "tolerances.median_z", 0, strict_lo=True)
    tol["coverage"] = _num(tol["coverage"], "tolerances.coverage", 0, 1)

    output = _merge(DEFAULTS["output"], raw.get("output", {}), "output")
    if not isinstance(output["dir"], str):
        raise ConfigError("output.dir", "expected a string")
    fmts = output["formats"]
    if not isinstance(fmts, list) or not fmts or any(f not in ("csv", "binary") for f in fmts):
        raise ConfigError("output.formats", "expected a non-empty list from {'csv', 'binary'}")

    verify = _merge(DEFAULTS["verify"], raw.get("verify", {}), "verify")
    verify["n_configs"] = _int(verify["n_configs"], "verify.n_configs", 1)
    verify["max_l"] = _int(verify["max_l"], "verify.max_l", 1, 16)
    verify["levels"] = _int(verify["levels"], "verify.levels", 0)
    verify["n_probe"] = _int(verify["n_probe"], "verify.n_probe", 1)

    est = _merge(DEFAULTS["estimate"], raw.get("estimate", {}), "estimate")
    est["n_pairs"] = _int(est["n_pairs"], "estimate.n_pairs", 1)
    if est["input"] is not None and not isinstance(est["input"], str):
        raise ConfigError("estimate.input", "expected a path string")
    if not isinstance(est["subtract_mean"], bool):
        raise ConfigError("estimate.subtract_mean", "expected true or false")
    if command == "estimate" and est["input"] is None:
        raise ConfigError("estimate.input", "required for the estimate command")

    ext = _merge(DEFAULTS["extract"], raw.get("extract", {}), "extract")
    ext["n_max"] = _int(ext["n_max"], "extract.n_max", 0)
    ext["phi1"] = _num(ext["phi1"], "extract.phi1", 0, math.pi)
    ext["phi2"] = _num(ext["phi2"], "extract.phi2", 0, math.pi)
    ext["t"] = _num(ext["t"], "extract.t")
    if tol["quadrature_M"] < 4 * (ext["n_max"] + 1):
        raise ConfigError("tolerances.quadrature_M", "too small for extract.n_max")

    fam = build_family(family)
    grid["m"] = fam.m
    if N is None and fam.truncation_hint is None:
        raise ConfigError("N", "required for families without a tail bound")
    return RunConfig(command=command, family=family, grid=grid, N=N, K=K, seed=seed,
                     tolerances=tol, output=output, verify=verify, estimate=est,
                     extract=ext, raw=raw)


# ---------------------------------------------------------------------------
# commands


def _write_json(path, obj):
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _plan(cfg):
    g = cfg.grid
    grid = build_grid(g["lat_count"], g["lon_count"], g["time_count"], g["m"])
    return SimulationPlan(grid=grid, family=build_family(cfg.family), N=cfg.N, K=cfg.K,
                          seed=SeedSpec(cfg.seed))


def _manifest(cfg, plan=None, **extra):
    out = {"axsym_version": __version__, "config": cfg.to_dict()}
    if plan is not None:
        out.update(seed=plan.seed.master, truncation=plan.N,
                   tail_bound=plan.family.tail_bound(plan.N))
    out.update(extra)
    return out


def _write_ensemble(ens, cfg, out):
    files = []
    if "csv" in cfg.output["formats"]:
        write_ensemble_csv(ens, out / "ensemble.csv")
        files.append("ensemble.csv")
    if "binary" in cfg.output["formats"]:
        sidecar = write_ensemble_binary(ens, out / "ensemble.bin")
        files += ["ensemble.bin", sidecar.name]
    return files


def _estimate_report(ens, model, cfg, seed):
    tol = cfg.tolerances
    pairs = random_pairs(ens.grid, cfg.estimate["n_pairs"], seed)
    stats = empirical_covariance(ens, pairs, subtract_mean=cfg.estimate["subtract_mean"],
                                 target=None if model is None else series_targets(ens, model))
    summary = {}
    if model is not None:
        az = np.abs(stats.z)
        summary = {
            "median_abs_z": float(np.median(az)),
            "fraction_below_threshold": float(np.mean(az < tol["z_threshold"])),
            "oracle_loop_pass": oracle_loop_passes(stats.z, tol["z_threshold"],
                                                   tol["median_z"], tol["coverage"]),
        }
    if ens.K >= 2:
        max_z, pair = reversibility_test(ens, pairs)
        summary["reversibility_max_abs_z"] = _finite_json(max_z)
        summary["reversibility_worst_pair"] = pair
    stats.extra["summary"] = summary
    return stats, summary


def _finite_json(x):
    return x if math.isfinite(x) else str(x)


def cmd_simulate(cfg, out, threads):
    plan = _plan(cfg)
    ens = synthesize_field(plan, threads=threads)
    files = _write_ensemble(ens, cfg, out)
    _write_json(out / "manifest.json", _manifest(cfg, plan, files=files))
    return 0


def cmd_verify(cfg, out, threads):
    fam = build_family(cfg.family)
    N = cfg.N if cfg.N is not None else fam.truncation_hint
    model = series_model(fam, N)
    v, tol = cfg.verify, cfg.tolerances["psd_tol"]
    psd = psd_check(model, v["n_configs"], v["max_l"], tol, seed=cfg.seed)
    thm7 = [thm7_check(fam, n, v["n_configs"], v["max_l"], tol, seed=cfg.seed + n)
            for n in range(min(v["levels"], N) + 1)]
    sym = symmetry_diagnostic(model, v["n_probe"], cfg.seed)
    rev = reversibility_diagnostic(model, v["n_probe"], cfg.seed)
    ok = psd.passed and all(r.passed for r in thm7)
    report = {
        "pass": ok,
        "truncation": N,
        "tail_bound": fam.tail_bound(N),
        "psd": psd.to_dict(),
        "thm7": [r.to_dict() for r in thm7],
        "symmetry_diagnostic": sym,
        "reversibility_diagnostic": rev,
    }
    _write_json(out / "report.json", report)
    _write_json(out / "manifest.json", _manifest(cfg, files=["report.json"]))
    if not ok:
        failing = psd if not psd.passed else next(r for r in thm7 if not r.passed)
        print(json.dumps({"failed": "psd" if failing is psd else f"thm7 level {failing.level}",
                          "worst_min_eigenvalue": failing.worst_min_eigenvalue,
                          "worst_config": failing.worst_config}), file=sys.stdout)
    return 0 if ok else 1


def cmd_estimate(cfg, out, threads):
    path = Path(cfg.estimate["input"])
    ens = read_ensemble_binary(path) if path.suffix == ".bin" else read_ensemble_csv(path)
    fam = build_family(cfg.family)
    if fam.m != ens.grid.m:
        raise ValueError(f"family has m={fam.m} but the ensemble has m={ens.grid.m}")
    N = cfg.N if cfg.N is not None else fam.truncation_hint
    stats, summary = _estimate_report(ens, series_model(fam, N), cfg, cfg.seed)
    _write_json(out / "stats.json", stats.to_dict())
    stats.to_csv(out / "stats.csv")
    _write_json(out / "manifest.json", _manifest(cfg, files=["stats.json", "stats.csv"]))
    return 0 if summary.get("oracle_loop_pass", True) else 1


def cmd_extract(cfg, out, threads):
    fam = build_family(cfg.family)
    model = closed_form_model(fam)
    e, M = cfg.extract, cfg.tolerances["quadrature_M"]
    rows = ["n,i,j,B,A\n"]
    for n in range(e["n_max"] + 1):
        b_hat, a_hat = extract_fourier_coefficients(model, n, e["phi1"], e["phi2"], e["t"], M)
        for i in range(fam.m):
            for j in range(fam.m):
                rows.append(f"{n},{i},{j},{'%.17g' % b_hat[i, j]},{'%.17g' % a_hat[i, j]}\n")
    (out / "coefficients.csv").write_text("".join(rows))
    _write_json(out / "manifest.json", _manifest(cfg, files=["coefficients.csv"]))
    return 0


def cmd_roundtrip(cfg, out, threads):
    plan = _plan(cfg)
    ens = synthesize_field(plan, threads=threads)
    files = _write_ensemble(ens, cfg, out)
    stats, summary = _estimate_report(ens, series_model(plan.family, plan.N), cfg, cfg.seed)
    _write_json(out / "stats.json", stats.to_dict())
    stats.to_csv(out / "stats.csv")
    files += ["stats.json", "stats.csv"]
    _write_json(out / "manifest.json", _manifest(cfg, plan, files=files, summary=summary))
    return 0 if summary["oracle_loop_pass"] else 1


HANDLERS = {"simulate": cmd_simulate, "verify": cmd_verify, "estimate": cmd_estimate,
            "extract": cmd_extract, "roundtrip": cmd_roundtrip}


def run(cfg: RunConfig, out=None, threads=1):
    out = Path(out if out is not None else cfg.output["dir"])
    out.mkdir(parents=True, exist_ok=True)
    log.info("running %s into %s (threads=%d)", cfg.command, out, threads)
    return HANDLERS[cfg.command](cfg, out, threads)


def _threads(arg):
    if arg is not None:
        return arg
    env = os.environ.get("AXSYM_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise ConfigError("AXSYM_THREADS", f"expected an integer, got {env!r}") from None
    return 1


def main(argv=None):
    parser = argparse.ArgumentParser(prog="axsym", description=__doc__.splitlines()[0])
    parser.add_argument("command", choices=COMMANDS)
    parser.add_argument("--config", required=True, help="JSON run configuration")
    parser.add_argument("--out", help="output directory (overrides output.dir)")
    parser.add_argument("--threads", type=int, help="worker threads (default: AXSYM_THREADS or 1)")
    parser.add_argument("--seed", type=int, help="master seed, overrides the config")
    parser.add_argument("-v", "--verbose", action="store_true")
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        text = Path(args.config).read_text()
        cfg = parse_config(text, args.command)
        if args.seed is not None:
            cfg.seed = _int(args.seed, "--seed", 0, 2**64 - 1)
        if args.threads is not None and args.threads < 1:
            raise ConfigError("--threads", "must be >= 1")
        return run(cfg, args.out, _threads(args.threads))
    except Exception as exc:  # noqa: BLE001 - every failure becomes a JSON error
        err = {"error": type(exc).__name__, "message": str(exc)}
        if isinstance(exc, ConfigError):
            err["field"] = exc.field
        print(json.dumps(err), file=sys.stderr)
        return 2 if isinstance(exc, (ConfigError, OSError)) else 1


if __name__ == "__main__":
    sys.exit(main())
