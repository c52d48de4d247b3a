"""Command-line entry points: simulate, solve, check-policy, sweep.

Exit codes: 0 success, 2 configuration error, 3 no stable prices exist,
4 I/O failure.
"""
from __future__ import annotations

import argparse
import copy
import csv
import os
import sys
from concurrent.futures import ProcessPoolExecutor

import numpy as np
import yaml

from .chain import Blockchain, TierState
from .config import Config, ConfigError, apply_override, fingerprint, parse_raw
from .policy import check_implementation
from .sim import run, summary_text, write_trace_csv
from .solver import SteadyDemand, solve_stable_prices, verify_compatible_stable

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NO_PRICES = 3
EXIT_IO = 4


def _load_raw(path: str):
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise exc
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"not valid YAML: {exc}") from exc
    return raw


def _overridden(raw, args) -> Config:
    raw = copy.deepcopy(raw)
    if getattr(args, "seed", None) is not None:
        if not isinstance(raw, dict) or "seed" not in raw:
            raise ConfigError("config has no seed to override")
        raw["seed"] = args.seed
    for item in getattr(args, "set", None) or []:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        key, _, text = item.partition("=")
        apply_override(raw, key, yaml.safe_load(text))
    return parse_raw(raw)


def _fmt_value(v) -> str:
    if isinstance(v, float):
        return format(v, ".9g")
    return str(v)


def _say(args):
    if getattr(args, "quiet", False):
        return lambda *a, **k: None
    return print


def cmd_simulate(args) -> int:
    say = _say(args)
    cfg = _overridden(_load_raw(args.config), args)
    trace = run(cfg.sim_config(), blocks=args.blocks)
    os.makedirs(args.out, exist_ok=True)
    trace_path = os.path.join(args.out, "trace.csv")
    write_trace_csv(trace, trace_path)
    with open(os.path.join(args.out, "summary.txt"), "w") as fh:
        fh.write(f"config fingerprint: {fingerprint(cfg)}\n")
        fh.write(summary_text(trace))
    say(f"wrote {trace_path} ({len(trace.records)} blocks)")
    return EXIT_OK


def cmd_solve(args) -> int:
    say = _say(args)
    cfg = _overridden(_load_raw(args.config), args)
    if cfg.solve is None:
        raise ConfigError("config has no solve section")
    s = cfg.solve
    demand = SteadyDemand(s.rate, cfg.demand_spec(s.demand))
    rng = np.random.default_rng(cfg.seed)
    report = solve_stable_prices(
        s.sizes, s.delays, demand,
        tol=s.tolerance, max_iters=s.max_iterations,
        method=s.method, samples=s.samples, rng=rng,
    )
    say(f"iterations: {report.iterations}")
    say(f"residual: {_fmt_value(report.residual)}")
    if not report.solved:
        say(f"outcome: no stable prices ({report.diagnostic})")
        return EXIT_NO_PRICES
    say("outcome: solved")
    for j, p in enumerate(report.prices, start=1):
        say(f"price tier {j}: {_fmt_value(p)}")
    chain = Blockchain(tuple(
        TierState(sz, d, p) for sz, d, p in zip(s.sizes, s.delays, report.prices)
    ))
    verify = verify_compatible_stable(chain, demand, tol=s.tolerance,
                                      method=s.method, samples=s.samples, rng=rng)
    say(f"compatible: {verify.compatible}")
    say(f"stable: {verify.stable}")
    for line in verify.violations:
        say(f"violation: {line}")
    return EXIT_OK


def cmd_check_policy(args) -> int:
    say = _say(args)
    cfg = _overridden(_load_raw(args.config), args)
    if cfg.policy is None:
        raise ConfigError("config has no policy section")
    sim_cfg = cfg.sim_config()
    total = sim_cfg.schedule.total_blocks if args.blocks is None else min(
        args.blocks, sim_cfg.schedule.total_blocks
    )
    warmup = min(cfg.policy.warmup_blocks, max(0, total - 1))
    stop = min(total, warmup + cfg.policy.sample_blocks)
    trace = run(sim_cfg, blocks=args.blocks, collect_range=(warmup, stop))
    outcomes = [txs for _, txs in trace.tx_records]
    reports = check_implementation(outcomes, cfg.policy.policy, cfg.throughput)
    lines = []
    for rep in reports:
        verdict = "PASS" if rep.satisfied else "FAIL"
        c = rep.clause
        lines.append(
            f"{verdict} clause share={_fmt_value(c.share)} delay={_fmt_value(c.delay)} "
            f"price={_fmt_value(c.price)}: estimate={_fmt_value(rep.estimate)} "
            f"se={_fmt_value(rep.std_error)} target={_fmt_value(rep.target)}"
        )
    for line in lines:
        say(line)
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        write_trace_csv(trace, os.path.join(args.out, "trace.csv"))
        with open(os.path.join(args.out, "policy_report.txt"), "w") as fh:
            fh.write(f"blocks sampled: {warmup}..{stop - 1}\n")
            fh.write("\n".join(lines) + "\n")
    return EXIT_OK


def _sweep_job(task) -> tuple[str, str]:
    raw, blocks, out_dir, value_text = task
    cfg = parse_raw(raw)
    trace = run(cfg.sim_config(), blocks=blocks)
    os.makedirs(out_dir, exist_ok=True)
    write_trace_csv(trace, os.path.join(out_dir, "trace.csv"))
    with open(os.path.join(out_dir, "summary.txt"), "w") as fh:
        fh.write(f"config fingerprint: {fingerprint(cfg)}\n")
        fh.write(summary_text(trace))
    return value_text, out_dir


def cmd_sweep(args) -> int:
    say = _say(args)
    base = _load_raw(args.config)
    _overridden(base, args)  # validate the base before spawning anything
    values = [yaml.safe_load(v) for v in args.values.split(",") if v != ""]
    if not values:
        raise ConfigError("--values is empty")
    tasks = []
    for v in values:
        raw = copy.deepcopy(base)
        if args.seed is not None:
            raw["seed"] = args.seed
        apply_override(raw, args.param, v)
        parse_raw(raw)  # fail fast on bad values
        text = _fmt_value(v)
        out_dir = os.path.join(args.out, f"{args.param.replace('.', '_')}={text}")
        tasks.append((raw, args.blocks, out_dir, text))
    os.makedirs(args.out, exist_ok=True)
    if args.jobs <= 1:
        results = [_sweep_job(t) for t in tasks]
    else:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            results = list(pool.map(_sweep_job, tasks))
    # The index goes last so its presence marks a finished sweep.
    with open(os.path.join(args.out, "index.csv"), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["param", "value", "dir"])
        for value_text, out_dir in results:
            w.writerow([args.param, value_text, os.path.basename(out_dir)])
    say(f"swept {args.param} over {len(results)} values into {args.out}")
    return EXIT_OK


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tiersim",
        description="Simulate and analyze multi-tier posted-price fee mechanisms.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, out_required=False, with_out=True):
        p.add_argument("--config", required=True, help="YAML run configuration")
        p.add_argument("--seed", type=int, default=None, help="override the config seed")
        p.add_argument("--set", action="append", metavar="KEY=VALUE",
                       help="override a config entry by dotted path")
        p.add_argument("--blocks", type=int, default=None,
                       help="truncate the schedule to its first N blocks")
        p.add_argument("--quiet", action="store_true",
                       help="suppress normal output; rely on exit codes and files")
        if with_out:
            p.add_argument("--out", required=out_required, default=None,
                           help="output directory")

    p = sub.add_parser("simulate", help="run the mechanism over the load schedule")
    common(p, out_required=True)
    p.set_defaults(fn=cmd_simulate)

    p = sub.add_parser("solve", help="solve steady-state prices for fixed sizes and delays")
    common(p, with_out=False)
    p.set_defaults(fn=cmd_solve)

    p = sub.add_parser("check-policy", help="verify the config's diversity policy on a run")
    common(p)
    p.set_defaults(fn=cmd_check_policy)

    p = sub.add_parser("sweep", help="re-run the config over a parameter grid")
    common(p, out_required=True)
    p.add_argument("--param", required=True, help="dotted config path to vary")
    p.add_argument("--values", required=True, help="comma-separated values")
    p.add_argument("--jobs", type=int, default=1, help="parallel worker processes")
    p.set_defaults(fn=cmd_sweep)
    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
