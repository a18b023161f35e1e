"""Command-line entry point.

Subcommands: simulate, stat, limits, verify-lln, verify-clt, rnp-check,
grid-test, ztrunc.  All are driven by a config file (see config module);
--seed overrides the config's base seed and --threads caps worker
parallelism without changing any result byte.

Exit codes: 0 success, 1 validation error (bad config/usage), 2 runtime
error during execution.

Each experiment run writes report.json, errors.csv, manifest.json and
optionally samples.csv into the output directory.  The manifest carries
the canonical config plus library versions (but neither wall time nor
thread count, so reports stay byte-identical across re-runs); timing is
printed to stdout.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
import time
from pathlib import Path

import numpy as np
import scipy

import uvstat
from uvstat.config import ConfigError, RunConfig, canonical_text, parse_beta_grid, parse_config
from uvstat.harness import ExperimentPlan, ExperimentReport, HarnessError, grid_scan, run_plan
from uvstat.kernels import KernelError, check_admissibility
from uvstat.limits import cond_var_jump, cond_var_mixed, jump_limit, mixed_limit
from uvstat.simulate import SimulationError, path_to_binary, path_to_json, simulate_path
from uvstat.stats import load_increments_csv, power_variation, realized_qv, u_stat, v_stat, y_stat

__all__ = ["main", "entrypoint"]


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="uvstat",
        description="Simulate jump diffusions, compute U-/V-statistics, verify their limit theorems.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, help_text, needs_config=True):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", help="path to the JSON run configuration", required=False)
        p.add_argument("--seed", type=int, default=None, help="override the config base_seed")
        p.add_argument("--threads", type=int, default=1, help="worker pool size (results unchanged)")
        p.add_argument("--output", default=None, help="override the config output directory")
        return p

    add("simulate", "simulate one path and write it to disk").add_argument(
        "--format", choices=("json", "binary"), default="json"
    )
    p_stat = add("stat", "compute one statistic on simulated or CSV data")
    p_stat.add_argument(
        "--stat", choices=("V", "Y", "U", "QV", "PV"), default="V", dest="stat_kind"
    )
    p_stat.add_argument("--power", type=float, default=2.0, help="power for PV")
    p_stat.add_argument("--scaled", action="store_true", help="scaled power variation")
    p_stat.add_argument("--input", default=None, help="CSV of increments (one per line)")
    add("limits", "exact limit functionals and conditional variances of one path")
    add("verify-lln", "law-of-large-numbers experiment")
    add("verify-clt", "central-limit-theorem experiment")
    add("rnp-check", "jump-neighborhood R(n,p) convergence check")
    p_grid = add("grid-test", "jump-size lattice scan")
    p_grid.add_argument("--input", default=None, help="CSV of increments (one per line)")
    p_grid.add_argument("--beta", default=None, help="beta grid as start:stop:step")
    add("ztrunc", "truncated limit-sum experiment")
    return parser


def _load_config(args) -> RunConfig:
    if not args.config:
        raise ConfigError("missing --config (path to the JSON run configuration)")
    path = Path(args.config)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    cfg = parse_config(path.read_text(encoding="utf-8"))
    if args.seed is not None:
        plan = dataclasses.replace(cfg.plan, base_seed=int(args.seed))
        cfg = dataclasses.replace(cfg, plan=plan)
    if args.output is not None:
        cfg = dataclasses.replace(cfg, output_dir=args.output)
    return cfg


def _manifest(cfg: RunConfig) -> dict:
    return {
        "config": cfg.canonical_dict(),
        "versions": {
            "uvstat": uvstat.__version__,
            "numpy": np.__version__,
            "scipy": scipy.__version__,
            "python": sys.version.split()[0],
        },
    }


def _write_report(report: ExperimentReport, cfg: RunConfig, outdir: Path) -> list:
    outdir.mkdir(parents=True, exist_ok=True)
    written = []
    (outdir / "report.json").write_text(report.to_json(), encoding="utf-8")
    written.append(outdir / "report.json")
    (outdir / "errors.csv").write_text(report.rows_csv(), encoding="utf-8")
    written.append(outdir / "errors.csv")
    if report.samples is not None:
        lines = ["n,series,index,value"]
        for n_key in sorted(report.samples):
            series_map = report.samples[n_key]
            for series in sorted(series_map):
                for i, v in enumerate(series_map[series]):
                    if v is None:
                        continue
                    lines.append(f"{n_key},{series},{i},{v!r}")
        (outdir / "samples.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")
        written.append(outdir / "samples.csv")
    manifest = json.dumps(_manifest(cfg), sort_keys=True, indent=1) + "\n"
    (outdir / "manifest.json").write_text(manifest, encoding="utf-8")
    written.append(outdir / "manifest.json")
    return written


def _cmd_simulate(args, cfg: RunConfig) -> int:
    plan = cfg.plan
    n = plan.n_list[-1]
    path = simulate_path(plan.model, n, plan.t, plan.base_seed)
    outdir = Path(cfg.output_dir)
    outdir.mkdir(parents=True, exist_ok=True)
    if args.format == "json":
        target = outdir / "path.json"
        target.write_text(path_to_json(path), encoding="utf-8")
    else:
        target = outdir / "path.bin"
        target.write_bytes(path_to_binary(path))
    print(f"simulated path: n={n}, T={plan.t}, jumps={len(path.jumps)}")
    print(f"wrote {target}")
    return 0


def _cmd_stat(args, cfg: RunConfig) -> int:
    plan = cfg.plan
    input_csv = args.input or cfg.input_csv
    if input_csv:
        data = load_increments_csv(input_csv)
        n = len(data)
        source = f"csv:{input_csv}"
    else:
        n = plan.n_list[-1]
        data = simulate_path(plan.model, n, plan.t, plan.base_seed)
        source = f"simulated(seed={plan.base_seed})"
    kind = args.stat_kind
    if kind == "QV":
        sv = realized_qv(data, t=plan.t if input_csv is None else None)
    elif kind == "PV":
        sv = power_variation(
            data, p=args.power, scaled=args.scaled, t=plan.t if input_csv is None else None
        )
    else:
        if plan.kernel is None:
            raise ConfigError(f"statistic kind {kind} needs a kernel in the config")
        fn = {"V": v_stat, "Y": y_stat, "U": u_stat}[kind]
        sv = fn(data, plan.kernel, t=plan.t if input_csv is None else None)
    doc = {
        "kind": sv.kind,
        "value": sv.value,
        "window": dataclasses.asdict(sv.window),
        "kernel": sv.kernel_id,
        "strategy": sv.strategy,
        "source": source,
    }
    print(json.dumps(doc, sort_keys=True, indent=1))
    return 0


def _cmd_limits(args, cfg: RunConfig) -> int:
    plan = cfg.plan
    if plan.kernel is None:
        raise ConfigError("the limits command needs a kernel in the config")
    n = plan.n_list[-1]
    path = simulate_path(plan.model, n, plan.t, plan.base_seed)
    kernel = plan.kernel
    doc = {"n": n, "seed": plan.base_seed, "n_jumps": len(path.jumps)}
    if kernel.regime in ("JumpLLN", "JumpCLT", "GridTest"):
        lv = jump_limit(path, kernel, t=plan.t)
        doc["limit"] = lv.value
        doc["contributions"] = list(lv.contributions)
        if kernel.regime != "JumpLLN":
            cv = cond_var_jump(path, kernel, t=plan.t)
            doc["cond_variance"] = {
                "total": cv.total,
                "jump_term": cv.jump_term,
                "field_term": cv.field_term,
            }
    else:
        lv = mixed_limit(path, kernel, t=plan.t)
        doc["limit"] = lv.value
        doc["contributions"] = list(lv.contributions)
        if kernel.regime == "MixedCLT":
            cv = cond_var_mixed(path, kernel, t=plan.t)
            doc["cond_variance"] = {
                "total": cv.total,
                "jump_term": cv.jump_term,
                "field_term": cv.field_term,
            }
    print(json.dumps(doc, sort_keys=True, indent=1))
    return 0


def _cmd_experiment(args, cfg: RunConfig, expected_kinds) -> int:
    plan = cfg.plan
    if plan.kind not in expected_kinds:
        raise ConfigError(
            f"config experiment.kind is {plan.kind!r}; this subcommand runs {expected_kinds}"
        )
    start = time.perf_counter()
    report = run_plan(plan, threads=max(1, args.threads))
    elapsed = time.perf_counter() - start
    written = _write_report(report, cfg, Path(cfg.output_dir))
    print(f"{plan.kind} finished in {elapsed:.2f}s ({plan.reps} reps)")
    for item in written:
        print(f"wrote {item}")
    return 0


def _cmd_grid(args, cfg_or_none) -> int:
    if args.input:
        data = load_increments_csv(args.input)
        beta_grid = parse_beta_grid(args.beta)
        if not beta_grid:
            raise ConfigError("grid-test on CSV input needs --beta start:stop:step")
        report = grid_scan(data, beta_grid)
        outdir = Path(args.output or "out")
        outdir.mkdir(parents=True, exist_ok=True)
        (outdir / "report.json").write_text(report.to_json(), encoding="utf-8")
        (outdir / "errors.csv").write_text(report.rows_csv(), encoding="utf-8")
        best = report.tables["beta_min_normalized"]
        print(f"grid scan over {len(beta_grid)} beta values; minimizer beta = {best}")
        print(f"wrote {outdir / 'report.json'}")
        print(f"wrote {outdir / 'errors.csv'}")
        return 0
    cfg = cfg_or_none if cfg_or_none is not None else _load_config(args)
    if args.beta:
        plan = dataclasses.replace(cfg.plan, beta_grid=parse_beta_grid(args.beta))
        cfg = dataclasses.replace(cfg, plan=plan)
    return _cmd_experiment(args, cfg, ("GRID",))


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code in (0, None) else 1
    try:
        if args.command == "grid-test" and args.input:
            return _cmd_grid(args, None)
        cfg = _load_config(args)
        if args.command == "simulate":
            return _cmd_simulate(args, cfg)
        if args.command == "stat":
            return _cmd_stat(args, cfg)
        if args.command == "limits":
            return _cmd_limits(args, cfg)
        if args.command == "verify-lln":
            return _cmd_experiment(args, cfg, ("LLN",))
        if args.command == "verify-clt":
            return _cmd_experiment(args, cfg, ("CLT_jump", "CLT_mixed"))
        if args.command == "rnp-check":
            return _cmd_experiment(args, cfg, ("RNP",))
        if args.command == "grid-test":
            return _cmd_grid(args, cfg)
        if args.command == "ztrunc":
            return _cmd_experiment(args, cfg, ("ZTRUNC",))
        parser.print_usage(sys.stderr)
        return 1
    except (ConfigError, KernelError, HarnessError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        print(f"usage: see `uvstat {args.command} --help`", file=sys.stderr)
        return 1
    except (SimulationError, OSError, ArithmeticError, RuntimeError) as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return 2


def entrypoint():
    sys.exit(main())


if __name__ == "__main__":
    entrypoint()
