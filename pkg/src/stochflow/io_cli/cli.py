"""Command-line surface: simulate, ensemble, diagnose, sweep, verify, bench.

All commands exit 0 only if every requested check passed; failures are
reported as NDJSON records on stdout so runs can be audited mechanically.
Every artifact written embeds the config hash, and `diagnose` refuses to mix
data across configurations.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from pathlib import Path

import numpy as np

from ..diagnostics import (
    energy_residual,
    energy_variational_gap,
    make_test_processes,
    reynolds_defect,
)
from ..ensemble import moment_report, run_ensemble
from ..experiments import SweepPlan, kernel_benchmark, viscosity_sweep
from ..sde import BrownianPath, integrate
from .config import ConfigError, DEFAULTS, RunConfig, emit_config, parse_config
from .storage import HashMismatchError, StorageError, load_trajectory, save_ensemble, save_trajectory
from .verify import run_battery

ENV_SEED = "STOCHFLOW_SEED"
ENV_OUT = "STOCHFLOW_OUT"


def _json_default(obj):
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"not JSON serializable: {type(obj)}")


def _emit(record: dict):
    sys.stdout.write(json.dumps(record, default=_json_default) + "\n")


def _load_config(args) -> RunConfig:
    if args.config:
        text = Path(args.config).read_text()
    else:
        text = json.dumps(DEFAULTS | {"sweep": None})
    cfg = parse_config(text, strict=args.strict)
    if args.seed is not None:
        cfg.data["ensemble"]["base_seed"] = args.seed
    elif ENV_SEED in os.environ:
        cfg.data["ensemble"]["base_seed"] = int(os.environ[ENV_SEED])
    if args.out is not None:
        cfg.data["output_dir"] = args.out
    elif ENV_OUT in os.environ:
        cfg.data["output_dir"] = os.environ[ENV_OUT]
    return cfg


def _outdir(cfg: RunConfig) -> Path:
    out = Path(cfg["output_dir"])
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_simulate(args) -> int:
    cfg = _load_config(args)
    system = cfg.build_system()
    sampler = cfg.initial_sampler(system.basis)
    seeds = np.array([cfg["ensemble"]["base_seed"]], dtype=np.uint64)
    a0 = sampler(seeds, system.basis)[0]
    path = BrownianPath.generate(cfg["ensemble"]["base_seed"], cfg["dt"],
                                 cfg.n_steps, system.n_brownian)
    traj = integrate(system, a0, path, scheme=cfg["scheme"],
                     store_every=cfg["ensemble"]["store_every"])
    out = _outdir(cfg) / "trajectory.bin"
    save_trajectory(out, traj, cfg.hash())
    _emit({"written": str(out), "config_hash": cfg.hash(),
           "n_saved": int(traj.times.size),
           "blowup_time": traj.blowup_time})
    return 0 if traj.blowup_time is None else 3


def cmd_ensemble(args) -> int:
    cfg = _load_config(args)
    system = cfg.build_system()
    sampler = cfg.initial_sampler(system.basis)
    ens_cfg = cfg["ensemble"]
    probe = ens_cfg["probe_times"]
    ens = run_ensemble(
        system, sampler, ens_cfg["members"], ens_cfg["base_seed"],
        cfg["dt"], cfg.n_steps, scheme=cfg["scheme"],
        store_every=ens_cfg["store_every"],
        probe_times=tuple(probe) if probe else None,
        threads=args.threads or 1,
    )
    paths = save_ensemble(_outdir(cfg) / "ensemble", ens, cfg.hash())
    _emit({"written": [str(p) for p in paths.values()],
           "config_hash": cfg.hash(), "members": ens.n_members,
           "blowups": int(np.sum(ens.blowup_step >= 0))})
    return 0


def cmd_diagnose(args) -> int:
    cfg = _load_config(args)
    try:
        traj, stored_hash = load_trajectory(args.data, expect_hash=cfg.hash())
    except HashMismatchError as exc:
        _emit({"error": "config hash mismatch", "file_hash": exc.found,
               "config_hash": exc.expected})
        return 2
    except StorageError as exc:
        _emit({"error": str(exc)})
        return 2
    system = cfg.build_system()
    failures = 0
    t_final = float(traj.times[-1])
    for check in cfg["diagnostics"]:
        if check == "energy_residual":
            value = energy_residual(traj, system, 0.0, t_final)
            tol = 10.0 * np.sqrt(traj.dt)
            ok = abs(value) <= tol
            _emit({"check": check, "interval": [0.0, t_final], "value": value,
                   "tolerance": tol, "pass": ok})
            failures += not ok
        elif check == "gap_battery":
            battery = make_test_processes(system, traj.times.size - 1,
                                          float(traj.times[1] - traj.times[0])
                                          if traj.times.size > 1 else traj.dt,
                                          seed=cfg["ensemble"]["base_seed"])
            tol = 10.0 * np.sqrt(traj.dt)
            for phi in battery:
                value = energy_variational_gap(traj, system, phi, 0.0, t_final)
                ok = value <= tol
                _emit({"check": f"gap[{phi.label}]", "value": value,
                       "tolerance": tol, "pass": ok})
                failures += not ok
        else:
            _emit({"check": check, "skipped": "needs ensemble data"})
    return 0 if failures == 0 else 2


def cmd_sweep(args) -> int:
    cfg = _load_config(args)
    sweep_cfg = cfg["sweep"]
    if sweep_cfg is None:
        _emit({"error": "config has no sweep section"})
        return 1
    system = cfg.build_system()
    plan = SweepPlan(
        nus=tuple(sweep_cfg["nus"]),
        n_members=sweep_cfg.get("members", 64),
        base_seed=cfg["ensemble"]["base_seed"],
        dt=sweep_cfg.get("dt", cfg["dt"]),
        n_steps=int(round(sweep_cfg.get("t_final", cfg["t_final"])
                          / sweep_cfg.get("dt", cfg["dt"]))),
        scheme=sweep_cfg.get("scheme", cfg["scheme"]),
        store_every=sweep_cfg.get("store_every", 10),
        coupled_paths=sweep_cfg.get("coupled_paths", True),
        moment_p=sweep_cfg.get("moment_p", 4.0),
    )
    sampler = cfg.initial_sampler(system.basis)
    report = viscosity_sweep(plan, system, sampler)
    outdir = _outdir(cfg)
    rows = []
    for point in report["points"]:
        rec = {"config_hash": cfg.hash(), **{k: v for k, v in point.items() if k != "moment"},
               "sup_moment": point["moment"]["sup_moment"],
               "sup_moment_stderr": point["moment"]["sup_moment_stderr"]}
        _emit(rec)
        rows.extend([
            (point["nu"], "sup_moment", point["moment"]["sup_moment"],
             point["moment"]["sup_moment_stderr"]),
            (point["nu"], "viscous_functional", point["viscous_functional"], 0.0),
            (point["nu"], "weighted_viscous", point["weighted_viscous"], 0.0),
            (point["nu"], "residual_mean", point["residual_mean"],
             point["residual_stderr"]),
        ])
    _emit({"config_hash": cfg.hash(),
           "weighted_exponent": report["weighted_exponent"],
           "sup_moment_uniformity": report["sup_moment_uniformity"],
           "cauchy_differences": report["cauchy_differences"],
           "euler_gaps_smallest_nu": report["euler_gaps_smallest_nu"]})
    with open(outdir / "sweep.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["parameter", "statistic", "value", "stderr"])
        writer.writerows(rows)
    return 0


def cmd_verify(args) -> int:
    results = run_battery()
    failures = 0
    for res in results:
        _emit(res.record())
        failures += not res.passed
    _emit({"checks": len(results), "failures": failures})
    return 0 if failures == 0 else 2


def cmd_bench(args) -> int:
    cfg = _load_config(args)
    system = cfg.build_system()
    report = kernel_benchmark(system, reps=args.reps)
    _emit({"config_hash": cfg.hash(), **report})
    return 0


def cmd_emit(args) -> int:
    cfg = _load_config(args)
    sys.stdout.write(emit_config(cfg) + "\n")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="stochflow",
        description="Stochastic spectral Galerkin solver for incompressible "
                    "Navier-Stokes/Euler with additive and transport noise",
    )
    parser.add_argument("--config", help="path to a JSON run configuration")
    parser.add_argument("--seed", type=int, default=None,
                        help=f"override the base seed (or set {ENV_SEED})")
    parser.add_argument("--out", default=None,
                        help=f"override the output directory (or set {ENV_OUT})")
    parser.add_argument("--threads", type=int, default=0,
                        help="worker threads for ensemble chunks, 0 = auto")
    strictness = parser.add_mutually_exclusive_group()
    strictness.add_argument("--strict", dest="strict", action="store_true", default=True,
                            help="unknown config keys are fatal (default)")
    strictness.add_argument("--lenient", dest="strict", action="store_false",
                            help="ignore unknown config keys")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("simulate", help="integrate one trajectory").set_defaults(fn=cmd_simulate)
    sub.add_parser("ensemble", help="run a Monte-Carlo ensemble").set_defaults(fn=cmd_ensemble)
    diag = sub.add_parser("diagnose", help="run diagnostics on stored data")
    diag.add_argument("--data", required=True, help="trajectory container to check")
    diag.set_defaults(fn=cmd_diagnose)
    sub.add_parser("sweep", help="viscosity sweep experiment").set_defaults(fn=cmd_sweep)
    sub.add_parser("verify", help="run the invariant battery").set_defaults(fn=cmd_verify)
    bench = sub.add_parser("bench", help="sparse contraction kernel benchmark")
    bench.add_argument("--reps", type=int, default=2000)
    bench.set_defaults(fn=cmd_bench)
    sub.add_parser("emit-config", help="print the canonical config").set_defaults(fn=cmd_emit)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.threads == 0:
        args.threads = min(4, os.cpu_count() or 1)
    try:
        return args.fn(args)
    except ConfigError as exc:
        for err in exc.errors:
            _emit({"config_error": err})
        return 1


if __name__ == "__main__":
    sys.exit(main())
