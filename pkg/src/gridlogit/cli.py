"""Command-line interface: simulate, estimate, evaluate, restarts, report, config.

Exit codes: 0 success, 2 usage error, 3 validation error, 4 non-convergence.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
import time
from dataclasses import replace
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .analytics import (
    holdout_log_likelihood,
    marginal_cdf,
    marginal_pmf,
    mixture_moments,
    nonattendance_report,
    write_rows,
    wtp_distribution,
)
from .config import (
    ConfigError,
    config_hash,
    dump_config,
    estimation_config_from,
    load_config,
    model_spec_from,
    scenario_from,
    schema_from,
)
from .data import ChoiceDataError, load_panel, save_panel, split_holdout
from .em import EstimationError, fit
from .model import ModelSpec
from .serialize import load_model_file, save_fit
from .synthetic import ScenarioError, generate

log = logging.getLogger("gridlogit")

EXIT_OK, EXIT_USAGE, EXIT_VALIDATION, EXIT_NONCONVERGED = 0, 2, 3, 4


class UsageError(Exception):
    pass


# -- manifests ----------------------------------------------------------------

def _sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def write_manifest(path, command, argv, cfg, seeds, inputs, outputs, started) -> None:
    manifest = {
        "command": command,
        "argv": list(argv),
        "config_hash": config_hash(cfg) if cfg is not None else None,
        "seeds": list(seeds),
        "inputs": [{"path": str(p), "sha256": _sha256(p)} for p in inputs],
        "outputs": [{"path": str(p), "sha256": _sha256(p)} for p in outputs],
        "started": started,
        "finished": _now(),
        "version": __version__,
    }
    Path(path).write_text(json.dumps(manifest, indent=1) + "\n", encoding="utf-8")


# -- helpers ------------------------------------------------------------------

def _load_cfg(args):
    return load_config(getattr(args, "config", None), getattr(args, "set", None) or ())


def _wtp_summaries(model, cfg) -> list:
    w = cfg["wtp"]
    out = []
    if not w.get("cost"):
        return out
    for entry in w.get("time") or []:
        dim = entry["dim"] if isinstance(entry, dict) else entry
        unit = entry.get("unit", "hour") if isinstance(entry, dict) else "hour"
        try:
            out.append(wtp_distribution(model, dim, w["cost"], w.get("cost_income"), w.get("income"), unit))
        except (KeyError, ValueError, ZeroDivisionError) as exc:
            log.warning("value of %s not computed: %s", dim, exc)
    return out


def _summary_text(fit, cfg, extra_lines=()) -> str:
    m = fit.model
    lines = [
        f"log-likelihood      {fit.log_likelihood:.6f}",
        f"parameters          {fit.n_params}",
        f"persons             {fit.n_persons}",
        f"BIC                 {fit.bic:.4f}",
        f"AIC                 {fit.aic:.4f}",
        f"iterations          {fit.iterations}",
        f"converged           {str(fit.converged).lower()}",
        f"wall time (s)       {fit.wall_time:.2f}",
        f"variant             {m.support.variant}",
        f"classes             {m.n_classes}",
    ]
    lines += list(extra_lines)
    if m.fixed_names:
        lines.append("fixed coefficients")
        for n, v in zip(m.fixed_names, m.fixed):
            lines.append(f"  {n:<18s}{v: .6f}")
    if m.support.n_random:
        lines.append("random dimensions (marginal support: value mass)")
        for d in m.support.random_dims:
            coords, masses = marginal_pmf(m, [d])
            lines.append(f"  {d}: " + ", ".join(f"{c[0]:.4f} {p:.3f}" for c, p in zip(coords, masses)))
    for w in _wtp_summaries(m, cfg):
        lines.append(f"value of {w.time_dim}: mean {w.mean:.3f}, median {w.median:.3f} per hour")
    return "\n".join(lines) + "\n"


# -- commands -----------------------------------------------------------------

def cmd_simulate(args) -> int:
    started = _now()
    cfg = _load_cfg(args)
    sim = cfg["simulate"]
    for key, attr in (("experiment", "experiment"), ("kind", "kind"), ("n_persons", "n"), ("n_obs", "t"), ("seed", "seed"), ("scale", "scale")):
        v = getattr(args, attr, None)
        if v is not None:
            sim[key] = v
    if args.no_noise:
        sim["noise"] = False
    scenario = scenario_from(cfg)
    panel, truth = generate(scenario)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_panel(panel, out)
    truth_path = out.with_suffix(".truth.json")
    truth.save(truth_path)
    write_manifest(out.with_suffix(".manifest.json"), "simulate", sys.argv[1:], cfg, [scenario.seed], [], [out, truth_path], started)
    print(f"wrote {panel.n_rows} rows ({panel.n_persons} persons, {panel.n_obs} observations) to {out}")
    return EXIT_OK


def _estimate_one(panel, spec, est, cfg, out_dir: Path, holdout=None, label="model"):
    result = fit(panel, spec, est)
    extra = []
    holdout_ll = None
    if holdout is not None:
        holdout_ll = holdout_log_likelihood(result.model, holdout)
        extra.append(f"holdout LL          {holdout_ll:.6f} ({holdout.n_persons} persons)")
    model_path = out_dir / f"{label}.json"
    save_fit(model_path, result, seed=est.seed, config_hash=config_hash(cfg), extra={"holdout_log_likelihood": holdout_ll})
    traj_path = out_dir / "trajectory.csv"
    write_rows(traj_path, ["iteration", "log_likelihood"], enumerate(result.ll_trajectory))
    summary_path = out_dir / "summary.txt"
    text = _summary_text(result, cfg, extra)
    summary_path.write_text(text, encoding="utf-8")
    return result, [model_path, traj_path, summary_path], text


def cmd_estimate(args) -> int:
    started = _now()
    cfg = _load_cfg(args)
    spec = model_spec_from(cfg)
    if args.mnl:
        spec = ModelSpec.mnl(spec.attribute_names, spec.constraints)
    if args.seed is not None:
        cfg["estimation"]["seed"] = args.seed
    est = estimation_config_from(cfg)
    if args.dry_run:
        print(f"parameters          {spec.n_parameters}")
        print(f"classes             {spec.n_classes}")
        return EXIT_OK
    if not args.data:
        raise UsageError("--data is required")
    panel = load_panel(args.data, schema_from(cfg))
    holdout = None
    if args.holdout_fraction:
        panel, holdout = split_holdout(panel, args.holdout_fraction, args.holdout_seed)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    result, outputs, text = _estimate_one(panel, spec, est, cfg, out_dir, holdout)
    log.info("estimation finished in %.2f s after %d iterations", result.wall_time, result.iterations)
    print(text, end="")
    write_manifest(out_dir / "manifest.json", "estimate", sys.argv[1:], cfg, [est.seed], [Path(args.data)], outputs, started)
    return EXIT_OK if result.converged else EXIT_NONCONVERGED


def cmd_evaluate(args) -> int:
    cfg = _load_cfg(args)
    holdout = load_panel(args.data, schema_from(cfg))
    rows = []
    for path in args.model:
        model, spec, meta = load_model_file(path)
        try:
            ll = holdout_log_likelihood(model, holdout)
        except ValueError as exc:
            raise ChoiceDataError(f"{path}: {exc}") from None
        rows.append((str(path), ll, meta.get("n_params"), meta.get("log_likelihood")))
    rows.sort(key=lambda r: -r[1])
    print(f"{'model':<40s} {'holdout_ll':>16s} {'params':>8s} {'in_sample_ll':>16s}")
    for path, ll, P, ins in rows:
        print(f"{path:<40s} {ll:16.6f} {P!s:>8s} {ins if ins is None else format(ins, '16.6f'):>16}")
    if args.out:
        write_rows(args.out, ["model", "holdout_log_likelihood", "n_params", "in_sample_log_likelihood"], rows)
    return EXIT_OK


def restart_table(results, cfg) -> tuple[list, list]:
    """Per-run rows and the (quantity, mean, se, cv) stability table."""
    runs = []
    quantities: dict[str, list] = {}
    for seed, res in results:
        if isinstance(res, Exception):
            runs.append({"seed": seed, "status": f"failed: {res}"})
            continue
        row = {"seed": seed, "status": "converged" if res.converged else "max-iters", "log_likelihood": res.log_likelihood, "iterations": res.iterations}
        for w in _wtp_summaries(res.model, cfg):
            key = f"mean_value_{w.time_dim}"
            row[key] = w.mean
            quantities.setdefault(key, []).append(w.mean)
        runs.append(row)
    table = []
    for key, vals in quantities.items():
        v = np.asarray(vals, dtype=float)
        mean = float(v.mean())
        se = float(v.std(ddof=1)) if v.size > 1 else float("nan")
        table.append((key, mean, se, se / abs(mean) if mean != 0 else float("nan"), v.size))
    return runs, table


def cmd_restarts(args) -> int:
    started = _now()
    if args.runs < 2:
        raise UsageError("--runs must be at least 2")
    cfg = _load_cfg(args)
    spec = model_spec_from(cfg)
    base = estimation_config_from(cfg)
    panel = load_panel(args.data, schema_from(cfg))
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    seeds = [args.base_seed if args.same_seed else args.base_seed + r for r in range(args.runs)]
    results = []
    for seed in seeds:
        try:
            res = fit(panel, spec, replace(base, seed=seed))
            log.info("restart seed %d: LL %.6f in %.1f s (%d iterations)", seed, res.log_likelihood, res.wall_time, res.iterations)
        except (EstimationError, ValueError, FloatingPointError) as exc:
            log.error("restart seed %d failed: %s", seed, exc)
            res = exc
        results.append((seed, res))
    runs, table = restart_table(results, cfg)
    ok = [(s, r) for s, r in results if not isinstance(r, Exception)]
    if not ok:
        raise EstimationError("every restart failed")
    best_seed, best = max(ok, key=lambda sr: sr[1].log_likelihood)
    keys = sorted({k for r in runs for k in r})
    runs_path = out_dir / "runs.csv"
    write_rows(runs_path, keys, [[r.get(k, "") for k in keys] for r in runs])
    stab_path = out_dir / "stability.csv"
    write_rows(stab_path, ["quantity", "mean", "se", "cv", "n_runs"], table)
    best_path = out_dir / "best_model.json"
    save_fit(best_path, best, seed=best_seed, config_hash=config_hash(cfg))
    print(f"best run: seed {best_seed}, LL {best.log_likelihood:.6f}")
    for q, mean, se, cv, n in table:
        print(f"{q:<28s} mean {mean:10.4f}  se {se:10.4f}  cv {cv:8.4f}  ({n} runs)")
    write_manifest(out_dir / "manifest.json", "restarts", sys.argv[1:], cfg, seeds, [Path(args.data)], [runs_path, stab_path, best_path], started)
    return EXIT_OK


def cmd_report(args) -> int:
    started = _now()
    cfg = _load_cfg(args)
    model, spec, meta = load_model_file(args.model)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    outputs = []
    for d in model.support.random_dims:
        coords, masses = marginal_pmf(model, [d])
        p = out_dir / f"pmf_{d}.csv"
        write_rows(p, [d, "mass"], zip(coords[:, 0], masses))
        x, F = marginal_cdf(model, d)
        c = out_dir / f"cdf_{d}.csv"
        write_rows(c, [d, "cumulative"], zip(x, F))
        outputs += [p, c]
    if model.support.n_random:
        mm = mixture_moments(model)
        mp = out_dir / "moments.csv"
        rows = [["mean", n, "", v] for n, v in zip(mm.names, mm.mean)]
        rows += [["covariance", a, b, mm.covariance[i, j]] for i, a in enumerate(mm.names) for j, b in enumerate(mm.names)]
        rows += [["correlation", a, b, mm.correlation[i, j]] for i, a in enumerate(mm.names) for j, b in enumerate(mm.names)]
        write_rows(mp, ["statistic", "dim_a", "dim_b", "value"], rows)
        outputs.append(mp)
        an = cfg["analysis"]
        na_rows, asc = nonattendance_report(model, float(an["nonattendance_epsilon"]), [a for a in an["asc"] if a in model.support.random_dims], float(an["asc_threshold"]))
        npath = out_dir / "nonattendance.csv"
        write_rows(npath, ["dimension", "mass_near_zero", "pinned_at_bound", "flagged"], [(r.dimension, r.mass_near_zero, r.pinned_at_bound, r.flagged) for r in na_rows] + [(f"{k} < {an['asc_threshold']}", v, "", "") for k, v in asc.items()])
        outputs.append(npath)
    for w in _wtp_summaries(model, cfg):
        wp = out_dir / f"wtp_{w.time_dim}.csv"
        write_rows(wp, ["value_per_hour", "mass"], w.as_rows())
        outputs.append(wp)
        print(f"value of {w.time_dim}: mean {w.mean:.3f}, median {w.median:.3f} per hour")
    print(f"log-likelihood {meta.get('log_likelihood')}, parameters {meta.get('n_params')}, BIC {meta.get('bic')}, AIC {meta.get('aic')}")
    write_manifest(out_dir / "manifest.json", "report", sys.argv[1:], cfg, [], [Path(args.model)], outputs, started)
    return EXIT_OK


def cmd_config(args) -> int:
    cfg = _load_cfg(args)
    sys.stdout.write(dump_config(cfg))
    return EXIT_OK


# -- parser -------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="gridlogit", description="Finite-mixture logit estimation on point-set and grid supports.")
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", help="YAML configuration file")
        sp.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config entry (repeatable)")

    s = sub.add_parser("simulate", help="generate a synthetic panel")
    common(s)
    s.add_argument("--experiment", type=int, choices=(1, 2, 3))
    s.add_argument("--kind", choices=("normal", "lognormal", "mixture"))
    s.add_argument("--n", type=int)
    s.add_argument("--t", type=int)
    s.add_argument("--seed", type=int)
    s.add_argument("--scale", type=float)
    s.add_argument("--no-noise", action="store_true")
    s.add_argument("--out", required=True, help="output CSV path")
    s.set_defaults(func=cmd_simulate)

    e = sub.add_parser("estimate", help="fit a model by EM")
    common(e)
    e.add_argument("--data")
    e.add_argument("--out", default=".")
    e.add_argument("--mnl", action="store_true", help="fit the single-class logit instead")
    e.add_argument("--seed", type=int)
    e.add_argument("--holdout-fraction", type=float)
    e.add_argument("--holdout-seed", type=int, default=0)
    e.add_argument("--dry-run", action="store_true", help="print the parameter count and exit")
    e.set_defaults(func=cmd_estimate)

    v = sub.add_parser("evaluate", help="holdout log-likelihood of fitted models")
    common(v)
    v.add_argument("--model", action="append", required=True)
    v.add_argument("--data", required=True)
    v.add_argument("--out")
    v.set_defaults(func=cmd_evaluate)

    r = sub.add_parser("restarts", help="repeat estimation from different starting values")
    common(r)
    r.add_argument("--data", required=True)
    r.add_argument("--runs", type=int, default=10)
    r.add_argument("--base-seed", type=int, default=0)
    r.add_argument("--same-seed", action="store_true", help="use the base seed for every run")
    r.add_argument("--out", default=".")
    r.set_defaults(func=cmd_restarts)

    rp = sub.add_parser("report", help="tables for a fitted model")
    common(rp)
    rp.add_argument("--model", required=True)
    rp.add_argument("--out", default=".")
    rp.set_defaults(func=cmd_report)

    c = sub.add_parser("config", help="print the effective configuration")
    common(c)
    c.add_argument("--dump", action="store_true")
    c.set_defaults(func=cmd_config)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (UsageError, ConfigError, ScenarioError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ChoiceDataError, EstimationError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
