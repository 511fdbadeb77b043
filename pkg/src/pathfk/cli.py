"""Command-line entry point.

    pathfk run config.json [--output DIR] [--workers K]
    pathfk sweep config.json --axis grid.N --values 8,16,32 [--output DIR]

`run` solves the configured problem, runs the configured checks, and writes
summary.json (byte-stable across reruns and worker counts), manifest.json,
and one CSV of per-sample statistics per check.  Exit code 0 means every
check passed, 2 means at least one check failed, 1 means the run errored.
The environment variable PATHFK_SEED overrides the configured seed and is
recorded in the manifest.
"""

from __future__ import annotations

import argparse
import copy
import hashlib
import json
import os
import sys
import zlib
from concurrent.futures import ProcessPoolExecutor
from importlib.metadata import PackageNotFoundError, version

import numpy as np

from .config import ExperimentConfig, load_config
from .models import shifted_model
from .reports import CheckReport
from .simulation import sample_drivers, simulate_forward
from .solver import solve_nested, solve_regression
from .verification import (comparison_check, discretization_convergence_check,
                           field_from_closed_form, field_from_engine, flow_check,
                           moment_envelope_check, regularity_check,
                           spde_residual_check, z_growth_check,
                           z_representation_check)


def _package_version() -> str:
    try:
        return version("pathfk")
    except PackageNotFoundError:
        return "unknown"


def _check_seed(base_seed: int, name: str) -> int:
    return base_seed + (zlib.crc32(name.encode()) % 100_000)


def _solve(cfg: ExperimentConfig):
    if cfg.engine == "nested":
        return solve_nested(
            cfg.model, cfg.initial,
            n_outer=cfg.engine_options.get("n_outer", cfg.n_scenarios),
            seed=cfg.seed,
            branching=cfg.engine_options.get("branching", 8),
            picard_iters=cfg.engine_options.get("picard_iters", 2),
        )
    drivers = sample_drivers(cfg.grid_times, cfg.n_scenarios, cfg.seed,
                             d=cfg.model.dims[0], l=cfg.model.dims[2])
    ens = simulate_forward(cfg.model, cfg.initial, drivers)
    sol = solve_regression(
        cfg.model, ens, basis=cfg.basis,
        picard_iters=cfg.engine_options.get("picard_iters", 2),
    )
    return sol


def _candidate_field(cfg: ExperimentConfig):
    if cfg.closed_form_u is not None:
        from .models import get_entry
        return field_from_closed_form(get_entry(cfg.model_name))
    return field_from_engine(
        cfg.model, engine="nested",
        n_scenarios=cfg.engine_options.get("n_outer", 8),
        seed=cfg.seed,
        branching=cfg.engine_options.get("branching", 8),
    )


def run_check(cfg: ExperimentConfig, name: str):
    """Run one named check; returns a list of CheckReport."""
    spec = cfg.checks[name] or {}
    seed = _check_seed(cfg.seed, name)
    model = cfg.model

    if name == "closed_form":
        sol = _solve(cfg)
        target = np.asarray(cfg.closed_form_u(cfg.initial), dtype=np.float64)
        err = np.abs(sol.u_estimate - target)
        tol_rel = float(spec.get("tol_rel", 0.02))
        rel = float(np.max(err / (1.0 + np.abs(target))))
        zsc = float(np.max(err / (3.0 * sol.u_stderr + 1e-12)))
        rep = CheckReport.make(
            name, max(rel / tol_rel, zsc), 1.0, sol.n_samples,
            details=[f"estimate {sol.u_estimate.tolist()} vs closed form "
                     f"{target.tolist()} (rel {rel:.4g}, z/3 {zsc:.3g})"],
            samples=[("estimate", float(sol.u_estimate[0])),
                     ("closed_form", float(target[0])),
                     ("stderr", float(sol.u_stderr[0]))])
        return [rep]

    if name == "z_representation":
        drivers = sample_drivers(cfg.grid_times, cfg.n_scenarios, seed,
                                 d=model.dims[0], l=model.dims[2])
        ens = simulate_forward(model, cfg.initial, drivers)
        sol = solve_regression(model, ens, basis=cfg.basis)
        u = None if cfg.closed_form_Z is not None else _candidate_field(cfg)
        return [z_representation_check(
            model, sol, ens, z_reference=cfg.closed_form_Z, u=u,
            n_sub=int(spec.get("n_sub", 100)),
            tol=float(spec.get("tol", 0.05)))]

    if name == "z_growth":
        drivers = sample_drivers(cfg.grid_times, cfg.n_scenarios, seed,
                                 d=model.dims[0], l=model.dims[2])
        ens = simulate_forward(model, cfg.initial, drivers)
        sol = solve_regression(model, ens, basis=cfg.basis)
        return [z_growth_check(sol, ens, q=float(spec.get("q", 1.0)))]

    if name == "flow":
        return [flow_check(
            model, cfg.initial, s=float(spec["s"]),
            n_scenarios=cfg.n_scenarios,
            n_resolve=int(spec.get("n_resolve", 20)), seed=seed,
            basis=cfg.basis)]

    if name == "field_equation":
        u = _candidate_field(cfg)
        drivers = sample_drivers(cfg.grid_times, int(spec.get("n_paths", 10)),
                                 seed, d=model.dims[0], l=model.dims[2])
        ens = simulate_forward(model, cfg.initial, drivers)
        return [spde_residual_check(u, model, ens,
                                    tol=float(spec.get("tol", 0.05)))]

    if name == "comparison":
        upper = shifted_model(model,
                              shift_phi=float(spec.get("shift_phi", 0.1)),
                              shift_f=float(spec.get("shift_f", 0.0)))
        return [comparison_check(upper, model, cfg.initial,
                                 n_scenarios=cfg.n_scenarios, seed=seed,
                                 basis=cfg.basis)]

    if name == "discretization":
        return [discretization_convergence_check(
            model, cfg.initial,
            node_counts=tuple(spec.get("node_counts", (2, 4, 8, 16))),
            n_scenarios=cfg.n_scenarios, seed=seed, basis=cfg.basis,
            noise_only=bool(spec.get("noise_only", False)))]

    if name == "regularity":
        u = _candidate_field(cfg)
        return [regularity_check(
            lambda p: u(p), cfg.grid_times, model.dims[0],
            growth_q=float(spec.get("q", model.growth_m + 1.0)),
            n_probes=int(spec.get("n_probes", 100)), seed=seed)]

    if name == "moments":
        return [
            moment_envelope_check(
                model, cfg.grid_times, p=float(p),
                n_probes=int(spec.get("n_probes", 100)),
                n_scenarios=int(spec.get("n_scenarios", 500)),
                seed=seed, basis=cfg.basis)
            for p in spec.get("p", (2, 4))
        ]

    raise ValueError(f"unknown check {name!r}")


def _check_worker(args):
    raw, seed_override, name = args
    cfg = load_config(raw, seed_override=seed_override)
    return name, run_check(cfg, name)


def _config_hash(raw: dict) -> str:
    return hashlib.sha256(
        json.dumps(raw, sort_keys=True).encode()
    ).hexdigest()


def run_experiment(raw: dict, output_dir: str, workers: int = 1,
                   seed_override=None) -> int:
    cfg = load_config(raw, seed_override=seed_override)
    os.makedirs(output_dir, exist_ok=True)
    sol = _solve(cfg)

    names = sorted(cfg.checks)
    reports = {}
    if workers > 1 and names:
        tasks = [(cfg.raw, seed_override, n) for n in names]
        with ProcessPoolExecutor(max_workers=workers) as pool:
            for name, reps in pool.map(_check_worker, tasks):
                reports[name] = reps
    else:
        for name in names:
            reports[name] = run_check(cfg, name)
    flat = sorted((r for reps in reports.values() for r in reps),
                  key=lambda r: r.name)

    checks_dir = os.path.join(output_dir, "checks")
    if flat:
        os.makedirs(checks_dir, exist_ok=True)
    for rep in flat:
        print(rep.one_line())
        with open(os.path.join(checks_dir, f"{rep.name}.csv"), "w") as fh:
            fh.write(rep.samples_csv())

    all_passed = all(r.passed for r in flat)
    summary = {
        "config_sha256": _config_hash(cfg.raw),
        "model": cfg.model_name,
        "engine": cfg.engine,
        "t": float(cfg.initial.current_time),
        "u_estimate": sol.u_estimate.tolist(),
        "u_stderr": sol.u_stderr.tolist(),
        "checks": {
            r.name: {"statistic": r.statistic, "threshold": r.threshold,
                     "passed": r.passed, "n_samples": r.n_samples}
            for r in flat
        },
        "all_passed": all_passed,
    }
    with open(os.path.join(output_dir, "summary.json"), "w") as fh:
        json.dump(summary, fh, sort_keys=True, indent=2)
        fh.write("\n")
    manifest = {
        "config_sha256": summary["config_sha256"],
        "package_version": _package_version(),
        "seed": cfg.seed,
        "seed_overridden": seed_override is not None,
    }
    with open(os.path.join(output_dir, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, sort_keys=True, indent=2)
        fh.write("\n")
    print(f"u({cfg.model_name}, t={cfg.initial.current_time}) = "
          f"{sol.u_estimate.tolist()} +/- {sol.u_stderr.tolist()}")
    return 0 if all_passed else 2


def _set_dotted(d: dict, dotted: str, value):
    keys = dotted.split(".")
    for k in keys[:-1]:
        d = d.setdefault(k, {})
    d[keys[-1]] = value


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def run_sweep(raw: dict, output_dir: str, axis: str, values, workers: int,
              seed_override=None) -> int:
    """Run the base config once per axis value; emits a long-format CSV
    axis,value,check,statistic for convergence plots.  An empty value list
    is a no-op."""
    if not values:
        return 0
    os.makedirs(output_dir, exist_ok=True)
    rows = ["axis,value,check,statistic"]
    worst = 0
    for v in values:
        sub_raw = copy.deepcopy(raw)
        _set_dotted(sub_raw, axis, v)
        sub_dir = os.path.join(output_dir, f"{axis.replace('.', '_')}={v}")
        code = run_experiment(sub_raw, sub_dir, workers=workers,
                              seed_override=seed_override)
        worst = max(worst, code)
        with open(os.path.join(sub_dir, "summary.json")) as fh:
            summary = json.load(fh)
        rows.append(f"{axis},{v},u_estimate,{summary['u_estimate'][0]!r}")
        for cname, c in sorted(summary["checks"].items()):
            rows.append(f"{axis},{v},{cname},{c['statistic']!r}")
    with open(os.path.join(output_dir, "sweep.csv"), "w") as fh:
        fh.write("\n".join(rows) + "\n")
    return worst


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="pathfk",
        description="Simulate coupled forward-backward two-driver systems "
                    "and verify the path-field identities.")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run one configuration with its checks")
    p_run.add_argument("config", help="JSON configuration file")
    p_run.add_argument("--output", default=None, help="output directory")
    p_run.add_argument("--workers", type=int, default=1,
                       help="parallel workers for the checks")

    p_sweep = sub.add_parser("sweep", help="run a configuration over a range "
                                           "of one parameter")
    p_sweep.add_argument("config")
    p_sweep.add_argument("--axis", required=True,
                         help="dotted config key, e.g. grid.N")
    p_sweep.add_argument("--values", required=True,
                         help="comma-separated values for the parameter")
    p_sweep.add_argument("--output", default=None)
    p_sweep.add_argument("--workers", type=int, default=1)

    args = parser.parse_args(argv)
    seed_override = os.environ.get("PATHFK_SEED")
    if seed_override is not None:
        seed_override = int(seed_override)

    try:
        with open(args.config) as fh:
            raw = json.load(fh)
        out = args.output or raw.get("output_dir", "pathfk-out")
        if args.command == "run":
            return run_experiment(raw, out, workers=args.workers,
                                  seed_override=seed_override)
        values = [_parse_value(v) for v in args.values.split(",") if v != ""]
        return run_sweep(raw, out, args.axis, values, workers=args.workers,
                         seed_override=seed_override)
    except Exception as exc:  # noqa: BLE001 - the CLI boundary reports and exits
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
