"""Command-line entry point: run scenarios, emit the built-in one, run property suites."""
from __future__ import annotations

import argparse
import json
import logging
import subprocess
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import sim
from .model import DomainError
from .safety import RegularityError
from .scenario import ScenarioError, load_scenario, swap_scenario, save_scenario, scenario_to_dict

log = logging.getLogger("emff")


def _git_describe() -> str | None:
    try:
        out = subprocess.run(["git", "describe", "--always", "--dirty"], capture_output=True, text=True,
                             cwd=Path(__file__).parent, timeout=5)
    except (OSError, subprocess.SubprocessError):
        return None
    return out.stdout.strip() or None


def _write_outputs(runlog: sim.RunLog, out_dir: Path, stem: str, meta: dict) -> Path:
    out_dir.mkdir(parents=True, exist_ok=True)
    csv_path = out_dir / f"{stem}.csv"
    runlog.write_csv(csv_path)
    meta = dict(meta, columns=runlog.columns, rows=len(runlog.rows), git=_git_describe())
    (out_dir / f"{stem}.json").write_text(json.dumps(meta, indent=2, default=str) + "\n")
    return csv_path


def _tolerances() -> dict:
    return {"safe_set": sim.SAFE_SET_TOLERANCE, "barrier_decay": sim.BARRIER_TOLERANCE,
            "max_halvings": sim.MAX_HALVINGS, "stiff_rtol": sim.STIFF_RTOL}


def _load(args) -> sim.Scenario:
    sc = load_scenario(args.scenario)
    changes = {}
    if args.duration is not None:
        changes["duration"] = args.duration
    if args.log_every is not None:
        changes["log_every"] = args.log_every
    return replace(sc, **changes) if changes else sc


def cmd_run_averaged(args) -> int:
    sc = _load(args)
    started = time.perf_counter()
    runlog = sim.run_averaged(sc, progress=lambda t: log.info("t = %.1f s", t))
    final = runlog.meta.pop("final")
    rel, _ = final.x.relative()
    summary = {
        "min_distance_m": float(runlog.column("dist_min_m").min()),
        "max_relative_speed_m_per_s": float(runlog.column("relspeed_max_m_per_s").max()),
        "max_power_VA": float(runlog.select("power").max()),
        "min_h": float(runlog.column("h").min()),
        "final_formation_error_m": np.linalg.norm(rel - sc.mpc.d, axis=1).tolist(),
        "stiff_steps": runlog.meta.get("stiff_steps", 0),
        "wall_time_s": time.perf_counter() - started,
    }
    meta = {"command": "run-averaged", "scenario": scenario_to_dict(sc), "tolerances": _tolerances(),
            "summary": summary}
    path = _write_outputs(runlog, Path(args.out), Path(args.scenario).stem + "_averaged", meta)
    print(json.dumps(summary, indent=2))
    print(f"wrote {path}")
    return 0


def cmd_run_full(args) -> int:
    sc = _load(args)
    runlog = sim.run_full(sc, args.window, log_every=sc.log_every)
    runlog.meta.pop("final", None)
    meta = {"command": "run-full", "window_s": args.window, "scenario": scenario_to_dict(sc),
            "tolerances": _tolerances()}
    path = _write_outputs(runlog, Path(args.out), Path(args.scenario).stem + "_full", meta)
    print(f"wrote {path}")
    return 0


def cmd_write_scenario(args) -> int:
    out = Path(args.out)
    if out.suffix != ".json":
        out.mkdir(parents=True, exist_ok=True)
        out = out / "three_satellite_swap.json"
    sc = swap_scenario()
    if args.duration is not None:
        sc = replace(sc, duration=args.duration)
    save_scenario(sc, out)
    print(f"wrote {out}")
    return 0


def cmd_validate(args) -> int:
    from .validation import run_suites

    results = run_suites(seed=args.seed)
    width = max(len(r.name) for r in results)
    for r in results:
        print(f"{'PASS' if r.passed else 'FAIL'}  {r.name:<{width}}  margin={r.margin:.3g}  {r.detail}")
    failed = sum(not r.passed for r in results)
    print(f"{len(results) - failed}/{len(results)} suites passed (seed {args.seed})")
    return 1 if failed else 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="emff", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def run_opts(p):
        p.add_argument("scenario", help="scenario JSON file")
        p.add_argument("--out", default="runs", help="output directory (default: runs)")
        p.add_argument("--log-every", type=int, default=None, help="log every k-th step")
        p.add_argument("--duration", type=float, default=None, help="override the run length [s]")

    p = sub.add_parser("run-averaged", help="closed loop on the averaged model")
    run_opts(p)
    p.set_defaults(func=cmd_run_averaged)

    p = sub.add_parser("run-full", help="sinusoidal moments on the unaveraged model")
    run_opts(p)
    p.add_argument("--window", type=float, required=True, help="simulated window [s], a multiple of T")
    p.set_defaults(func=cmd_run_full)

    p = sub.add_parser("validate", help="run the seeded property suites")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("scenario-paper", help="write the built-in three-satellite scenario")
    p.add_argument("--out", default=".", help="directory or .json path")
    p.add_argument("--duration", type=float, default=None)
    p.set_defaults(func=cmd_write_scenario)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ScenarioError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except sim.SafeSetExit as exc:
        print(f"safe set exit: {exc}", file=sys.stderr)
        return 3
    except (DomainError, RegularityError) as exc:
        print(f"domain error: {exc}", file=sys.stderr)
        return 4
