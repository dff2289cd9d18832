"""Batch command-line interface.

Subcommands: analyze, simulate, validate, sweep, optimize, bounds.  Every
JSON report embeds a run manifest (command, canonical inputs, tool version,
seed, UTC timestamp, and the algebra-convention ledger), and outputs are
byte-stable across reruns of the same manifest except for the timestamp.

Exit codes: 0 ok, 1 validation verdict failed, 2 unstable model,
3 truncation insufficient, 5 infeasible optimization, 64 usage/config error.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import math
import sys
from datetime import datetime, timezone

import numpy as np

from . import __version__
from .analytic import (
    ModelSpec,
    RateProfile,
    TYPO_LEDGER,
    UnstableModelError,
    departure_orbit_pgf,
    instant_seek_bounds,
    moments_and_throughput,
    server_state_probs,
    stability_margin,
    stationary_report,
    total_system_pgf,
)
from .dists import Deterministic, DistributionError, Erlang, Exponential
from .optimizer import AdmissionProblem, solve
from .oracles import (
    PgfCoefficientError,
    TruncationConfig,
    TruncationInsufficientError,
    embedded_stationary_truncated,
    pgf_to_pmf,
)
from .simulator import SimConfig, run as simulate_run

EXIT_OK = 0
EXIT_VERDICT = 1
EXIT_UNSTABLE = 2
EXIT_TRUNCATION = 3
EXIT_INFEASIBLE = 5
EXIT_USAGE = 64


class UsageError(Exception):
    pass


def _round6(obj):
    """Format every float to 6 significant digits so reruns are byte-stable."""
    if isinstance(obj, dict):
        return {k: _round6(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_round6(v) for v in obj]
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        if math.isnan(x) or math.isinf(x):
            return None
        return float(f"{x:.6g}")
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.ndarray):
        return [_round6(v) for v in obj.tolist()]
    return obj


def _manifest(command: str, inputs: dict, seed) -> dict:
    return {
        "command": command,
        "inputs": _round6(inputs),
        "tool_version": __version__,
        "seed": seed,
        "timestamp": datetime.now(timezone.utc).isoformat(),
        "typo_ledger": [dict(e) for e in TYPO_LEDGER],
    }


def _emit_json(payload: dict, out_path) -> None:
    text = json.dumps(_round6(payload), indent=2, sort_keys=True, allow_nan=False) + "\n"
    if out_path:
        with open(out_path, "w", encoding="utf-8") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def _emit_csv(header, rows, out_path, manifest=None) -> None:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    if out_path:
        with open(out_path, "w", encoding="utf-8", newline="") as fh:
            fh.write(buf.getvalue())
        if manifest is not None:
            # CSV cannot embed the manifest, so reference it via a sidecar
            with open(f"{out_path}.manifest.json", "w", encoding="utf-8") as fh:
                fh.write(json.dumps(_round6(manifest), indent=2, sort_keys=True,
                                    allow_nan=False) + "\n")
    else:
        sys.stdout.write(buf.getvalue())


def _load_json(path: str) -> dict:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            return json.load(fh)
    except FileNotFoundError as exc:
        raise UsageError(f"cannot read {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise UsageError(f"malformed JSON in {path} at line {exc.lineno}, column {exc.colno}: {exc.msg}") from exc


def _model_from_file(path: str) -> ModelSpec:
    obj = _load_json(path)
    try:
        return ModelSpec.from_dict(obj)
    except (KeyError, TypeError, ValueError, DistributionError) as exc:
        raise UsageError(f"invalid model file {path}: {exc}") from exc


# ---------------------------------------------------------------------------
# analyze
# ---------------------------------------------------------------------------

def _cmd_analyze(args) -> int:
    model = _model_from_file(args.model)
    report = stationary_report(model, pmf_max=args.pmf_max)
    payload = {
        "manifest": _manifest("analyze", _load_json(args.model), None),
        "report": report.to_dict(),
    }
    _emit_json(payload, args.out)
    return EXIT_OK if report.stable else EXIT_UNSTABLE


# ---------------------------------------------------------------------------
# simulate
# ---------------------------------------------------------------------------

def _cmd_simulate(args) -> int:
    model = _model_from_file(args.model)
    cfg = SimConfig(warmup_departures=args.warmup, measured_departures=args.departures,
                    replications=args.reps, seed=args.seed)
    est = simulate_run(model, cfg)
    payload = {
        "manifest": _manifest("simulate", _load_json(args.model), args.seed),
        "estimates": est.to_dict(),
        "departure_orbit_pmf": est.departure_orbit_pmf[:args.pmf_max].tolist(),
        "departure_orbit_pmf_hw": est.departure_orbit_pmf_hw[:args.pmf_max].tolist(),
    }
    _emit_json(payload, args.out)
    return EXIT_OK


# ---------------------------------------------------------------------------
# validate: closed forms vs truncated chain vs simulation
# ---------------------------------------------------------------------------

def _cmd_validate(args) -> int:
    model = _model_from_file(args.model)
    if not stability_margin(model) > 0.0:
        sys.stderr.write("model is unstable; nothing to validate\n")
        return EXIT_UNSTABLE
    report = stationary_report(model)
    try:
        chain = embedded_stationary_truncated(model, TruncationConfig(args.trunc, 1e-10))
    except TruncationInsufficientError as exc:
        sys.stderr.write(f"{exc}\n")
        return EXIT_TRUNCATION
    n_cmp = min(args.trunc, 400)
    try:
        orbit_pmf = pgf_to_pmf(lambda z: departure_orbit_pgf(model, z), n_cmp, 0.985)
    except PgfCoefficientError as exc:
        payload = {
            "manifest": _manifest("validate", _load_json(args.model), args.seed),
            "checks": [{"metric": "orbit_pmf_extraction", "pass": False, "detail": str(exc)}],
            "all_pass": False,
        }
        _emit_json(payload, args.out)
        return EXIT_VERDICT
    chain_linf = float(np.max(np.abs(orbit_pmf - chain.pmf[: n_cmp + 1])))

    cfg = SimConfig(warmup_departures=max(2000, args.departures // 20),
                    measured_departures=args.departures, replications=args.reps, seed=args.seed)
    est = simulate_run(model, cfg)
    states = server_state_probs(model)
    perf = moments_and_throughput(model)

    checks = []

    def check(name, analytic_value, estimate):
        ok = abs(analytic_value - estimate.value) <= 3.0 * estimate.half_width
        checks.append({
            "metric": name,
            "analytic": analytic_value,
            "simulation": estimate.value,
            "ci_half_width": estimate.half_width,
            "pass": bool(ok),
        })

    check("mean_orbit", perf.mean_orbit, est.mean_orbit)
    check("throughput", perf.throughput, est.departure_rate)
    check("p_idle", states["C0"], est.p_idle)
    check("p_empty", report.p_empty, est.p_empty)
    for key in ("E2", "E3", "E45", "E67"):
        check(f"state_{key}", states[key], est.state_event_probs[key])
    pmf_window = min(40, n_cmp)
    estimable = orbit_pmf[:pmf_window] * args.departures * args.reps >= 50.0
    pmf_ok = bool(np.all(
        np.abs(orbit_pmf[:pmf_window] - est.departure_orbit_pmf[:pmf_window])[estimable]
        <= 3.0 * est.departure_orbit_pmf_hw[:pmf_window][estimable]))
    checks.append({"metric": "departure_orbit_pmf", "analytic": None, "simulation": None,
                   "ci_half_width": None, "pass": pmf_ok})
    checks.append({"metric": "chain_linf", "analytic": chain_linf, "simulation": None,
                   "ci_half_width": None, "pass": bool(chain_linf <= 1e-8)})

    all_pass = all(c["pass"] for c in checks)
    payload = {
        "manifest": _manifest("validate", _load_json(args.model), args.seed),
        "chain_boundary_mass": chain.boundary_mass,
        "checks": checks,
        "all_pass": all_pass,
    }
    _emit_json(payload, args.out)
    return EXIT_OK if all_pass else EXIT_VERDICT


# ---------------------------------------------------------------------------
# sweep over a parametric (Erlang service/seek) family
# ---------------------------------------------------------------------------

_SWEEP_KEYS = ("lambda_minus", "M", "N", "alpha", "mu", "q1", "q2", "q3", "q4")


def _sweep_model(cfg: dict) -> ModelSpec:
    lp = float(cfg["lambda_plus"])
    q = [float(x) for x in cfg["q"]]
    rates = RateProfile(float(cfg["lambda_minus"]), lp * q[0], lp * q[1], lp * q[2], lp * q[3])
    return ModelSpec(rates, Erlang(int(cfg["M"]), float(cfg["mu"])),
                     Erlang(int(cfg["N"]), float(cfg["alpha"])))


def _parse_vary(spec: str) -> tuple:
    try:
        key, rng = spec.split("=", 1)
        lo, hi, step = (float(x) for x in rng.split(":"))
    except ValueError as exc:
        raise UsageError(f"--vary must look like key=lo:hi:step, got {spec!r}") from exc
    if key not in _SWEEP_KEYS:
        raise UsageError(f"unknown sweep key {key!r}; expected one of {_SWEEP_KEYS}")
    if step <= 0 or hi < lo:
        raise UsageError(f"bad sweep range in {spec!r}")
    n = int(math.floor((hi - lo) / step + 1e-9)) + 1
    return key, [lo + i * step for i in range(n)]


def _cmd_sweep(args) -> int:
    cfg = _load_json(args.model)
    for field in ("lambda_plus", "lambda_minus", "q", "M", "mu", "N", "alpha"):
        if field not in cfg:
            raise UsageError(f"sweep config must define {field!r}")
    key, values = _parse_vary(args.vary)
    metrics = args.metrics.split(",") if args.metrics else ["mean_orbit", "throughput", "mean_sojourn", "p_idle"]
    known = {"mean_orbit", "throughput", "mean_sojourn", "p_idle"}
    bad = [m for m in metrics if m not in known]
    if bad:
        raise UsageError(f"unknown metrics {bad}; expected subset of {sorted(known)}")
    rows = []
    for v in values:
        point = dict(cfg)
        if key in ("M", "N"):
            if abs(v - round(v)) > 1e-9:
                raise UsageError(f"sweep over {key} requires integer grid values, got {v}")
            point[key] = int(round(v))
        elif key.startswith("q"):
            q = [float(x) for x in point["q"]]
            q[int(key[1]) - 1] = v
            point["q"] = q
        else:
            point[key] = v
        model = _sweep_model(point)
        margin = stability_margin(model)
        if margin > 0.0:
            perf = moments_and_throughput(model)
            states = server_state_probs(model)
            available = {"mean_orbit": perf.mean_orbit, "throughput": perf.throughput,
                         "mean_sojourn": perf.mean_sojourn, "p_idle": states["C0"]}
            rows.append([f"{v:.6g}"] + [f"{available[m]:.6g}" for m in metrics] + [f"{margin:.6g}"])
        else:
            rows.append([f"{v:.6g}"] + ["" for _ in metrics] + [f"{margin:.6g}"])
    _emit_csv([key] + metrics + ["margin"], rows, args.out,
              manifest=_manifest("sweep", {"config": cfg, "vary": args.vary}, None))
    return EXIT_OK


# ---------------------------------------------------------------------------
# optimize
# ---------------------------------------------------------------------------

def _cmd_optimize(args) -> int:
    obj = _load_json(args.problem)
    try:
        problem = AdmissionProblem.from_dict(obj)
    except (KeyError, TypeError, ValueError) as exc:
        raise UsageError(f"invalid problem file {args.problem}: {exc}") from exc
    solution = solve(problem, restarts=args.restarts, seed=args.seed)
    payload = {
        "manifest": _manifest("optimize", obj, args.seed),
        "solution": solution.to_dict(),
    }
    _emit_json(payload, args.out)
    if solution.feasible:
        q = solution.q
        sys.stdout.write(
            f"{problem.lambda_minus:.4g},{q[0]:.4f},{q[1]:.4f},{q[2]:.4f},{q[3]:.4f},{solution.throughput:.4f}\n")
        return EXIT_OK
    sys.stderr.write("no feasible admission vector found\n")
    return EXIT_INFEASIBLE


# ---------------------------------------------------------------------------
# bounds and distance to the instant-seek limit
# ---------------------------------------------------------------------------

def _parse_seek(token: str):
    parts = token.split(":")
    try:
        if parts[0] == "erlang":
            return Erlang(int(parts[1]), float(parts[2]))
        if parts[0] == "exponential":
            return Exponential(float(parts[1]))
        if parts[0] == "deterministic":
            return Deterministic(float(parts[1]))
    except (IndexError, ValueError, DistributionError) as exc:
        raise UsageError(f"bad seek spec {token!r}: {exc}") from exc
    raise UsageError(f"bad seek spec {token!r}; use kind:params like erlang:2:5")


def _cmd_bounds(args) -> int:
    model = _model_from_file(args.model)
    rates = model.rates
    want_tv = not args.skip_tv
    profile_ok = (abs(rates.lambda_r - rates.lambda_minus) < 1e-12
                  and abs(rates.lambda_e - rates.lambda_e_plus) < 1e-12
                  and abs(rates.lambda_e - rates.lambda_r_plus) < 1e-12)
    if want_tv and not profile_ok:
        raise UsageError(
            "distance to the instant-seek limit needs lambda_r == lambda_minus and "
            "lambda_e == lambda_e_plus == lambda_r_plus; pass --skip-tv for bounds only")
    pmf_inf = None
    if want_tv:
        limit = ModelSpec(rates, model.service, Deterministic(0.0))
        pmf_inf = pgf_to_pmf(lambda z: total_system_pgf(limit, z), args.pmf_max, 0.97)
    rows = []
    for token in args.seek_sequence.split(","):
        seek = _parse_seek(token.strip())
        m = ModelSpec(rates, model.service, seek)
        if not stability_margin(m) > 0.0:
            sys.stderr.write(f"model with seek {token} is unstable\n")
            return EXIT_UNSTABLE
        lower, upper = instant_seek_bounds(m)
        alpha_star = float(seek.lst_value(rates.lambda_minus))
        if want_tv:
            pmf = pgf_to_pmf(lambda z: total_system_pgf(m, z), args.pmf_max, 0.97)
            tv = float(np.abs(pmf - pmf_inf).sum())
            rows.append([f"{alpha_star:.6g}", f"{lower:.6g}", f"{upper:.6g}", f"{tv:.6g}"])
        else:
            rows.append([f"{alpha_star:.6g}", f"{lower:.6g}", f"{upper:.6g}", ""])
    _emit_csv(["alpha_star", "lower", "upper", "tv_distance"], rows, args.out,
              manifest=_manifest("bounds", {"model": _load_json(args.model),
                                            "seek_sequence": args.seek_sequence}, None))
    return EXIT_OK


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------

def _build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="retrialq",
        description="Stationary analysis, simulation, validation and admission control "
                    "for the single-server retrial queue with event-dependent arrivals.")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("analyze", help="closed-form stationary report for a model file")
    p.add_argument("model")
    p.add_argument("--out", default=None)
    p.add_argument("--pmf-max", type=int, default=0)
    p.set_defaults(func=_cmd_analyze)

    p = sub.add_parser("simulate", help="discrete-event simulation estimates")
    p.add_argument("model")
    p.add_argument("--departures", type=int, default=200_000)
    p.add_argument("--warmup", type=int, default=20_000)
    p.add_argument("--reps", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--pmf-max", type=int, default=64)
    p.add_argument("--out", default=None)
    p.set_defaults(func=_cmd_simulate)

    p = sub.add_parser("validate", help="three-way consistency: closed forms, chain, simulation")
    p.add_argument("model")
    p.add_argument("--departures", type=int, default=200_000)
    p.add_argument("--reps", type=int, default=10)
    p.add_argument("--trunc", type=int, default=400)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=None)
    p.set_defaults(func=_cmd_validate)

    p = sub.add_parser("sweep", help="metric series over one varying parameter (CSV)")
    p.add_argument("model", help="parametric config: lambda_plus, lambda_minus, q, M, mu, N, alpha")
    p.add_argument("--vary", required=True, help="key=lo:hi:step")
    p.add_argument("--metrics", default=None, help="comma-separated subset")
    p.add_argument("--out", default=None)
    p.set_defaults(func=_cmd_sweep)

    p = sub.add_parser("optimize", help="solve the admission-control problem")
    p.add_argument("problem")
    p.add_argument("--restarts", type=int, default=32)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=None)
    p.set_defaults(func=_cmd_optimize)

    p = sub.add_parser("bounds", help="instant-seek proximity bounds per seek distribution")
    p.add_argument("model")
    p.add_argument("--seek-sequence", required=True,
                   help="comma-separated seek specs, e.g. erlang:2:5,erlang:2:10")
    p.add_argument("--skip-tv", action="store_true")
    p.add_argument("--pmf-max", type=int, default=400)
    p.add_argument("--out", default=None)
    p.set_defaults(func=_cmd_bounds)
    return ap


def main(argv=None) -> int:
    ap = _build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code not in (0, None) else 0
    try:
        return args.func(args)
    except UsageError as exc:
        sys.stderr.write(f"error: {exc}\n")
        return EXIT_USAGE
    except UnstableModelError as exc:
        sys.stderr.write(f"unstable model: {exc}\n")
        return EXIT_UNSTABLE
    except TruncationInsufficientError as exc:
        sys.stderr.write(f"{exc}\n")
        return EXIT_TRUNCATION


if __name__ == "__main__":
    sys.exit(main())
