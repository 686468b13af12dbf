"""Command-line front end: ``htbandit run|slope|audit|verify-env``.

Exit codes: 0 success, 2 invalid input, 3 failed audit or bound check.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np
from scipy import stats

from .core import AuditFailure, InvalidInputError, NumericFailureError, cumulative_regret
from .envs import (analytic_moment, environment_from_dict, verify_heavy_tail,
                   verify_truncated_nonnegative)
from .runner import (POLICIES, EpisodeTrace, ExperimentConfig, PolicySpec, audit_epochs,
                     audit_trace_epochs, bound_report, run_experiment)

EXIT_OK, EXIT_INVALID, EXIT_FAILED = 0, 2, 3
NUM = ".12g"

TOP_KEYS = {"policy", "environment", "environment_file", "T", "K", "replicates", "seed",
            "checkpoints", "output"}
POLICY_KEYS = {"name", "alpha", "sigma"}
OUTPUT_KEYS = {"dir", "trace", "plot"}
TRACE_HEADER = ["replicate", "t", "arm", "loss", "skipped", "lambda", "threshold", "cost",
                "cum_regret"]


def fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, bool):
        return "1" if v else "0"
    if isinstance(v, int):
        return str(v)
    return format(float(v), NUM)


# -- config ------------------------------------------------------------------

def _int_field(d: dict, key: str, minimum: int = 0) -> int:
    v = d.get(key)
    if isinstance(v, bool) or not isinstance(v, int):
        raise InvalidInputError(f"{key}: expected an integer, got {v!r}")
    if v < minimum:
        raise InvalidInputError(f"{key}: must be at least {minimum}, got {v}")
    return v


def _parse_policy(obj) -> PolicySpec:
    if isinstance(obj, str):
        obj = {"name": obj}
    if not isinstance(obj, dict):
        raise InvalidInputError("policy: expected a name or an object")
    unknown = set(obj) - POLICY_KEYS
    if unknown:
        raise InvalidInputError(f"policy.{sorted(unknown)[0]}: unknown key")
    name = obj.get("name")
    if name not in POLICIES:
        raise InvalidInputError(f"policy.name: expected one of {list(POLICIES)}, got {name!r}")
    if name == "htinf":
        for key in ("alpha", "sigma"):
            if key not in obj:
                raise InvalidInputError(f"policy.{key}: required for htinf")
            if isinstance(obj[key], bool) or not isinstance(obj[key], (int, float)):
                raise InvalidInputError(f"policy.{key}: expected a number")
        alpha, sigma = float(obj["alpha"]), float(obj["sigma"])
        if not 1.0 < alpha <= 2.0:
            raise InvalidInputError(
                f"policy.alpha: {alpha} outside the heavy-tail exponent range (1, 2]")
        if not sigma > 0.0 or math.isinf(sigma):
            raise InvalidInputError(f"policy.sigma: must be a positive finite number, got {sigma}")
        return PolicySpec(name, alpha, sigma)
    for key in ("alpha", "sigma"):
        if key in obj:
            raise InvalidInputError(f"policy.{key}: {name} does not accept {key}")
    return PolicySpec(name)


def parse_config(text: str, base_dir: Optional[Path] = None) -> ExperimentConfig:
    """Validate a JSON experiment description. Unknown keys are errors."""
    try:
        d = json.loads(text)
    except json.JSONDecodeError as exc:
        raise InvalidInputError(f"config is not valid JSON: {exc}") from None
    if not isinstance(d, dict):
        raise InvalidInputError("config: expected a JSON object")
    unknown = set(d) - TOP_KEYS
    if unknown:
        raise InvalidInputError(f"{sorted(unknown)[0]}: unknown key")
    for key in ("policy", "T", "K", "replicates"):
        if key not in d:
            raise InvalidInputError(f"{key}: required")
    policy = _parse_policy(d["policy"])
    horizon = _int_field(d, "T", 0)
    k = _int_field(d, "K", 1)
    reps = _int_field(d, "replicates", 1)
    seed = _int_field(d, "seed", 0) if "seed" in d else 0
    if ("environment" in d) == ("environment_file" in d):
        raise InvalidInputError("environment: give exactly one of environment, environment_file")
    if "environment_file" in d:
        p = Path(d["environment_file"])
        if not p.is_absolute() and base_dir is not None:
            p = base_dir / p
        try:
            env_obj = json.loads(p.read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise InvalidInputError(f"environment_file: cannot load {p}: {exc}") from None
        env = environment_from_dict(env_obj, horizon, "environment_file")
    else:
        env = environment_from_dict(d["environment"], horizon, "environment")
    if env.k != k:
        raise InvalidInputError(f"K: config says {k} but the environment has {env.k} arms")
    cps = d.get("checkpoints")
    if cps is not None:
        if not isinstance(cps, list) or not all(isinstance(c, int) and c >= 1 for c in cps):
            raise InvalidInputError("checkpoints: expected a list of positive integers")
        cps = tuple(cps)
    out = d.get("output", {})
    if not isinstance(out, dict):
        raise InvalidInputError("output: expected an object")
    bad = set(out) - OUTPUT_KEYS
    if bad:
        raise InvalidInputError(f"output.{sorted(bad)[0]}: unknown key")
    return ExperimentConfig(policy, env, horizon, k, reps, seed, cps, dict(out))


def serialize_config(config: ExperimentConfig) -> str:
    pol = {"name": config.policy.name}
    if config.policy.name == "htinf":
        pol.update(alpha=config.policy.alpha, sigma=config.policy.sigma)
    d = {
        "policy": pol,
        "environment": config.env.to_dict(),
        "T": config.horizon,
        "K": config.k,
        "replicates": config.replicates,
        "seed": config.base_seed,
    }
    if config.checkpoints is not None:
        d["checkpoints"] = list(config.checkpoints)
    if config.outputs:
        d["output"] = dict(config.outputs)
    return json.dumps(d, indent=2, sort_keys=True)


# -- run ---------------------------------------------------------------------

def _trace_rows(trace: EpisodeTrace, mean_schedule) -> list:
    arms = [r.arm for r in trace.records]
    cum = cumulative_regret(arms, mean_schedule) if arms else []
    return [[trace.replicate, r.t, r.arm, r.loss, r.skipped, r.lam, r.threshold, r.cost, c]
            for r, c in zip(trace.records, cum)]


def _epoch_hook(trace):
    audit_trace_epochs(trace)
    return True


def cmd_run(config: ExperimentConfig, out_dir: Path, trace: bool = False,
            plot: bool = True, stdout=None) -> int:
    stdout = stdout or sys.stdout
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    hook = _epoch_hook if config.policy.name in ("adatinf", "ada2tinf") else None
    audit_error = None
    try:
        result = run_experiment(config, keep_traces=trace, trace_hook=hook)
    except AuditFailure as exc:
        audit_error = str(exc)
        result = run_experiment(config, keep_traces=trace)
    series = result.series
    with open(out_dir / "regret.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", "mean_regret", "stderr", "replicates"])
        for t, m, s in series.checkpoints:
            w.writerow([t, fmt(m), fmt(s), series.replicates])
    if trace:
        m = config.env.mean_schedule()
        with open(out_dir / "trace.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(TRACE_HEADER)
            for tr in result.traces:
                for row in _trace_rows(tr, m):
                    w.writerow([fmt(v) for v in row])
    reports = []
    if config.env.params is not None and series.checkpoints:
        reports = bound_report(series, config.env, config.policy.name)
    (out_dir / "bounds.json").write_text(
        json.dumps([_clean(r.to_dict()) for r in reports], indent=2, sort_keys=True) + "\n")
    from .plotting import plot_regret, write_gnuplot_script

    write_gnuplot_script("regret.csv", out_dir / "regret.gp", config.policy.name)
    if plot and series.checkpoints:
        curves = {}
        if reports:
            for t, _, _ in series.checkpoints:
                for r in bound_report(series, config.env, config.policy.name, at=t):
                    if r.applicable:
                        curves.setdefault(r.bound_name, []).append(r.bound_value)
        plot_regret(series, out_dir / "regret.png", f"{config.policy.name}, K={config.k}",
                    curves)
    print("# htbandit run", file=stdout)
    print(f"policy,{config.policy.name}", file=stdout)
    print(f"T,{config.horizon}", file=stdout)
    print(f"replicates,{config.replicates}", file=stdout)
    print(f"final_mean_regret,{fmt(series.final_mean)}", file=stdout)
    print(f"final_stderr,{fmt(series.final_stderr)}", file=stdout)
    for r in reports:
        status = "n/a" if not r.applicable else ("ok" if r.satisfied else "VIOLATED")
        print(f"bound,{r.bound_name},{fmt(r.measured_regret)},{fmt(r.bound_value)},{status}",
              file=stdout)
    print(f"output,{out_dir}", file=stdout)
    failed = any(r.applicable and not r.satisfied for r in reports)
    if audit_error:
        print(f"audit,FAILED,{audit_error}", file=stdout)
    return EXIT_FAILED if failed or audit_error else EXIT_OK


def _clean(d: dict) -> dict:
    return {k: (float(format(v, NUM)) if isinstance(v, float) else v) for k, v in d.items()}


# -- slope -------------------------------------------------------------------

@dataclass(frozen=True)
class SlopeFit:
    slope: float
    ci_low: float
    ci_high: float
    points: int


def fit_slope(ts, means, t_min: float = 1.0) -> SlopeFit:
    """OLS of log(mean) on log(t) over t >= t_min with a 95% interval."""
    pts = [(t, m) for t, m in zip(ts, means) if t >= t_min and t > 0 and m > 0]
    if len(pts) < 3:
        raise InvalidInputError(f"need at least 3 usable checkpoints with t >= {t_min}, got {len(pts)}")
    lx = np.log([p[0] for p in pts])
    ly = np.log([p[1] for p in pts])
    fit = stats.linregress(lx, ly)
    half = stats.t.ppf(0.975, len(pts) - 2) * fit.stderr
    return SlopeFit(float(fit.slope), float(fit.slope - half), float(fit.slope + half), len(pts))


def read_regret_csv(path: Path) -> tuple:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows or "t" not in rows[0] or "mean_regret" not in rows[0]:
        raise InvalidInputError(f"{path}: not a regret.csv file")
    return [int(r["t"]) for r in rows], [float(r["mean_regret"]) for r in rows]


def cmd_slope(paths, t_min: float, stdout=None) -> int:
    stdout = stdout or sys.stdout
    print("path,slope,ci_low,ci_high,points", file=stdout)
    for p in paths:
        ts, ms = read_regret_csv(Path(p))
        f = fit_slope(ts, ms, t_min)
        print(f"{p},{fmt(f.slope)},{fmt(f.ci_low)},{fmt(f.ci_high)},{f.points}", file=stdout)
    return EXIT_OK


# -- audit -------------------------------------------------------------------

@dataclass(frozen=True)
class CsvRound:
    t: int
    arm: int
    loss: float
    skipped: bool
    lam: Optional[float]
    threshold: float
    cost: Optional[float]
    x: None = None


def _opt_float(s: str) -> Optional[float]:
    return float(s) if s != "" else None


def read_trace_csv(path: Path) -> dict:
    """Rounds grouped by replicate."""
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != TRACE_HEADER:
            raise InvalidInputError(f"{path}: header must be {','.join(TRACE_HEADER)}")
        out = {}
        for i, row in enumerate(reader, start=2):
            try:
                rec = CsvRound(int(row["t"]), int(row["arm"]), float(row["loss"]),
                               row["skipped"] == "1", _opt_float(row["lambda"]),
                               float(row["threshold"]), _opt_float(row["cost"]))
            except ValueError as exc:
                raise InvalidInputError(f"{path}:{i}: {exc}") from None
            out.setdefault(int(row["replicate"]), []).append(rec)
    return out


def cmd_audit(path: Path, k: int, horizon: Optional[int], policy: str, stdout=None) -> int:
    stdout = stdout or sys.stdout
    traces = read_trace_csv(Path(path))
    print("replicate,rounds,status,detail", file=stdout)
    failed = False
    for rep in sorted(traces):
        recs = traces[rep]
        try:
            for j, r in enumerate(recs):
                if r.t != j + 1:
                    raise AuditFailure(f"round numbers out of order at row {j + 1}")
                if not 1 <= r.arm <= k:
                    raise AuditFailure(f"round {r.t}: arm {r.arm} outside 1..{k}")
                if r.skipped != (abs(r.loss) > r.threshold):
                    raise AuditFailure(f"round {r.t}: skip flag disagrees with |loss| > threshold")
            n = horizon if horizon is not None else len(recs)
            detail = "invariants"
            if policy == "adatinf":
                a = audit_epochs(recs, k, n)
                detail = f"final_epoch={a.final_epoch}"
            elif policy == "ada2tinf":
                for h, seg in _csv_segments(recs):
                    audit_epochs(seg, k, h)
                detail = "segments"
            print(f"{rep},{len(recs)},ok,{detail}", file=stdout)
        except AuditFailure as exc:
            failed = True
            print(f"{rep},{len(recs)},FAILED,{exc}", file=stdout)
    return EXIT_FAILED if failed else EXIT_OK


def _csv_segments(recs):
    from .policies import Ada2TINF

    for start, length in Ada2TINF.schedule(len(recs)):
        seg = recs[start - 1:start - 1 + length]
        yield length, [CsvRound(r.t - start + 1, r.arm, r.loss, r.skipped, r.lam, r.threshold,
                                r.cost) for r in seg]


# -- verify-env --------------------------------------------------------------

def cmd_verify_env(config: ExperimentConfig, stdout=None) -> int:
    stdout = stdout or sys.stdout
    env = config.env
    print("row,arm,mean,moment,truncated_nonnegative", file=stdout)
    alpha = env.params.alpha if env.params is not None else None
    for p, row in enumerate(env.rows):
        for i, d in enumerate(row):
            mom = analytic_moment(d, alpha) if alpha is not None else None
            print(f"{p + 1},{i + 1},{fmt(d.mean)},{fmt(mom)},"
                  f"{fmt(verify_truncated_nonnegative(d))}", file=stdout)
    ok = True
    if env.params is not None:
        heavy = verify_heavy_tail(env, env.params)
        print(f"heavy_tail,{fmt(heavy)},cap,{fmt(env.params.moment_cap)}", file=stdout)
        ok &= heavy
    else:
        print("heavy_tail,,no alpha/sigma declared", file=stdout)
    star = env.best_arm()
    tn = all(verify_truncated_nonnegative(r[star - 1]) for r in env.rows)
    print(f"optimal_arm,{star},truncated_nonnegative,{fmt(tn)}", file=stdout)
    ok &= tn
    return EXIT_OK if ok else EXIT_FAILED


# -- entry point -------------------------------------------------------------

def _load(path: str) -> ExperimentConfig:
    p = Path(path)
    try:
        text = p.read_text(encoding="utf-8")
    except OSError as exc:
        raise InvalidInputError(f"cannot read {p}: {exc}") from None
    return parse_config(text, p.parent)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="htbandit", description="Heavy-tailed bandit simulator")
    sub = ap.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="run an experiment config")
    r.add_argument("config")
    r.add_argument("--out", help="output directory (default: output.dir or .)")
    r.add_argument("--trace", action="store_true", help="also write trace.csv")
    r.add_argument("--no-plot", action="store_true", help="skip regret.png")
    s = sub.add_parser("slope", help="log-log slope of regret.csv files")
    s.add_argument("csv", nargs="+")
    s.add_argument("--t-min", type=float, default=1.0)
    a = sub.add_parser("audit", help="check a trace.csv")
    a.add_argument("trace")
    a.add_argument("--arms", type=int, help="number of arms K")
    a.add_argument("--horizon", type=int, help="horizon T known to the policy")
    a.add_argument("--policy", choices=["adatinf", "ada2tinf", "other"], default="adatinf")
    a.add_argument("--config", help="experiment config supplying K, T and policy")
    v = sub.add_parser("verify-env", help="check an environment's assumptions")
    v.add_argument("config")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "run":
            cfg = _load(args.config)
            out = args.out or cfg.outputs.get("dir", ".")
            return cmd_run(cfg, Path(out), args.trace or bool(cfg.outputs.get("trace")),
                           plot=not args.no_plot and cfg.outputs.get("plot", True))
        if args.command == "slope":
            return cmd_slope(args.csv, args.t_min)
        if args.command == "audit":
            k, horizon, policy = args.arms, args.horizon, args.policy
            if args.config:
                cfg = _load(args.config)
                k = k or cfg.k
                horizon = horizon if horizon is not None else cfg.horizon
                policy = cfg.policy.name if cfg.policy.name in ("adatinf", "ada2tinf") else "other"
            if not k:
                raise InvalidInputError("audit needs --arms or --config")
            return cmd_audit(Path(args.trace), k, horizon, policy)
        if args.command == "verify-env":
            return cmd_verify_env(_load(args.config))
    except InvalidInputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (OSError, NumericFailureError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAILED if isinstance(exc, NumericFailureError) else EXIT_INVALID
    return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
