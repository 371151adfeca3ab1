"""Batch front-end.

Subcommands:
  run      simulate scenario files, emitting trace/events/metrics CSVs
  compare  run one workload under several strategies, emit a comparison CSV
  table1   built-in suite reproducing the reference voltage-drop table

Exit codes: 0 success, 1 suite mismatch, 2 validation error, 3 brownout
with --fail-on-brownout.  POWERGAP_OUT overrides the output directory.
"""

from __future__ import annotations

import argparse
import io
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Optional, Sequence

from . import __version__
from .energy_model import (
    MEASURED_DROPS,
    ClockTier,
    EnergyModelParams,
    PowerState,
    RadioMode,
)
from .scenario import ScenarioError, load_scenario
from .strategies import StrategyKind, evaluate_strategies, write_comparison_csv
from .track_world import (
    LayoutError,
    ScenarioConfig,
    Segment,
    SegmentKind,
    TrackLayout,
    events_to_csv,
    run_scenario,
)

EXIT_OK = 0
EXIT_MISMATCH = 1
EXIT_VALIDATION = 2
EXIT_BROWNOUT = 3


def _out_dir(flag_value: Optional[str]) -> Path:
    env = os.environ.get("POWERGAP_OUT")
    path = Path(env) if env else Path(flag_value or ".")
    path.mkdir(parents=True, exist_ok=True)
    return path


def _write_atomic(path: Path, content: str) -> None:
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_text(content)
    os.replace(tmp, path)


def _emit_result(out: Path, name: str, result) -> None:
    buf = io.StringIO()
    result.trace.write_csv(buf)
    _write_atomic(out / f"{name}_trace.csv", buf.getvalue())
    buf = io.StringIO()
    events_to_csv(result.events, buf)
    _write_atomic(out / f"{name}_events.csv", buf.getvalue())
    buf = io.StringIO()
    result.metrics.write_csv(buf)
    _write_atomic(out / f"{name}_metrics.csv", buf.getvalue())


def _run_one(args: tuple[str, Optional[int], str]) -> tuple[str, int]:
    path, seed_override, out_dir = args
    spec = load_scenario(path)
    cfg = spec.build()
    if seed_override is not None:
        cfg.seed = seed_override
    result = run_scenario(cfg)
    _emit_result(Path(out_dir), cfg.name, result)
    return cfg.name, result.metrics.brownout_count


def cmd_run(args: argparse.Namespace) -> int:
    out = _out_dir(args.out)
    jobs = [(p, args.seed, str(out)) for p in args.scenario]
    try:
        if args.jobs > 1 and len(jobs) > 1:
            with ProcessPoolExecutor(max_workers=args.jobs) as pool:
                results = list(pool.map(_run_one, jobs))
        else:
            results = [_run_one(j) for j in jobs]
    except (ScenarioError, LayoutError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    status = EXIT_OK
    for name, brownouts in results:
        print(f"{name}: brownouts={brownouts}")
        if args.fail_on_brownout and brownouts > 0:
            status = EXIT_BROWNOUT
    return status


def cmd_compare(args: argparse.Namespace) -> int:
    try:
        spec = load_scenario(args.workload)
        cfg = spec.build()
        kinds = []
        for token in args.strategies.split(","):
            token = token.strip()
            try:
                kinds.append(StrategyKind(token))
            except ValueError:
                print(
                    f"error: unknown strategy {token!r} "
                    f"(choose from {[k.value for k in StrategyKind]})",
                    file=sys.stderr,
                )
                return EXIT_VALIDATION
        if args.seed is not None:
            cfg.seed = args.seed
        if args.controller:
            cfg.controller = True
        rows = evaluate_strategies(cfg, kinds)
    except (ScenarioError, LayoutError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    buf = io.StringIO()
    write_comparison_csv(rows, buf)
    sys.stdout.write(buf.getvalue())
    out = _out_dir(args.out)
    _write_atomic(out / "compare.csv", buf.getvalue())
    return EXIT_OK


def table1_config(state: PowerState, params: EnergyModelParams) -> ScenarioConfig:
    """One lane-change crossing at a fixed power state."""
    layout = TrackLayout(
        [
            Segment(SegmentKind.STRAIGHT, 0.30),
            Segment(SegmentKind.LANE_CHANGE, 0.48, (0.09, 0.36)),
            Segment(SegmentKind.STRAIGHT, 0.30),
        ]
    )
    return ScenarioConfig(
        params=params,
        layout=layout,
        speed=3.0,
        duration=0.36,
        initial_state=state,
        name=f"table1_{state}",
    )


def run_table1_suite() -> list[tuple[PowerState, float, float]]:
    """Measured-vs-simulated max drop per calibrated power state."""
    params = EnergyModelParams.calibrated()
    rows = []
    for state, expected in sorted(
        MEASURED_DROPS.items(), key=lambda kv: (kv[0].clock.value, kv[0].radio.value)
    ):
        result = run_scenario(table1_config(state, params))
        rows.append((state, expected, result.metrics.max_drop_v))
    return rows


def cmd_table1(args: argparse.Namespace) -> int:
    tolerance = args.tolerance / 100.0
    rows = run_table1_suite()
    status = EXIT_OK
    lines = ["state,expected_v,simulated_v,status"]
    for state, expected, got in rows:
        ok = abs(got - expected) <= tolerance * expected
        verdict = "PASS" if ok else "FAIL"
        print(f"{state}: expected {expected:.6f} V, simulated {got:.6f} V  {verdict}")
        lines.append(f"{state},{expected:.6f},{got:.6f},{verdict}")
        if not ok:
            status = EXIT_MISMATCH
    out = _out_dir(args.out)
    _write_atomic(out / "table1.csv", "\n".join(lines) + "\n")
    return status


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="powergap",
        description="Deterministic intermittent-power debug-log transport simulator",
    )
    parser.add_argument(
        "--version", action="version", version=f"powergap {__version__}"
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="simulate scenario files")
    p_run.add_argument("scenario", nargs="+", help="scenario .scn file(s)")
    p_run.add_argument("--out", default=None, help="output directory")
    p_run.add_argument("--fail-on-brownout", action="store_true")
    p_run.add_argument("--seed", type=int, default=None)
    p_run.add_argument("--jobs", type=int, default=1)
    p_run.set_defaults(func=cmd_run)

    p_cmp = sub.add_parser("compare", help="compare strategies on one workload")
    p_cmp.add_argument("workload", help="workload .scn file")
    p_cmp.add_argument("--strategies",
                       default=",".join(k.value for k in StrategyKind),
                       help="comma-separated strategy names (default: all)")
    p_cmp.add_argument("--controller", action="store_true",
                       help="enable the energy-budget transmission gate")
    p_cmp.add_argument("--out", default=None)
    p_cmp.add_argument("--seed", type=int, default=None)
    p_cmp.set_defaults(func=cmd_compare)

    p_t1 = sub.add_parser("table1", help="reproduce the voltage-drop table")
    p_t1.add_argument("--tolerance", type=float, default=1.0,
                      help="allowed relative error in percent")
    p_t1.add_argument("--out", default=None)
    p_t1.set_defaults(func=cmd_table1)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
