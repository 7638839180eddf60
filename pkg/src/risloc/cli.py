"""Command-line entry point: ``risloc <subcommand> [options]``.

Exit status is 0 on success, 1 for usage or validation errors and 2 when a
run fails.
"""

from __future__ import annotations

import argparse
import csv
import logging
import sys
import time
from dataclasses import dataclass, field, replace
from typing import List, Optional, Sequence

import numpy as np

from .bounds import bounds
from .channel import observe, snr
from .config import explicit_keys, parse_config, schema_text
from .errors import ParseError, RislocError, ValidationError
from .estimator import find_pos_vel
from .harness import (
    ExperimentConfig,
    convergence_trace,
    default_threads,
    format_float,
    point_scenario,
    run_sweep,
    trial_seed,
    write_csv,
    write_metadata,
)

log = logging.getLogger("risloc")

# subcommand -> (sweep axis, default values, default stages, scenario defaults)
SWEEPS = {
    "sweep-distance": ("distance", (1.0, 2.0, 4.0, 6.0, 8.0, 10.0), ("grid", "ref_pos", "ref_vel", "full"), {}),
    "sweep-velocity": ("speed", (0.0, 1.0, 5.0, 10.0, 20.0, 50.0), ("grid", "full"), {}),
    "sweep-multipath": ("rician_k", (5.0, 10.0, 100.0, 1000.0), ("grid", "full"), {}),
    "sweep-snr": ("snr_offset", (-20.0, -10.0, 0.0, 10.0), ("grid", "ref_pos", "full"), {"rho": 5.0}),
}

DESCRIPTIONS = {
    "sweep-distance": "RMSE and bounds versus RIS-UE distance.",
    "sweep-velocity": "RMSE and bounds versus UE speed.",
    "sweep-multipath": "RMSE versus the Rician factor of the RIS-UE link.",
    "sweep-snr": "RMSE versus a gain offset applied to the UE path (dB).",
    "convergence": "Objective per iteration of the grid, outer and descent loops for one trial.",
    "bounds": "Position and velocity error bounds for one UE state.",
    "single-trial": "Run the full estimator once and print the errors.",
}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: error: {message}\n{self.format_usage()}")


@dataclass
class CliConfig:
    command: str
    config_path: Optional[str]
    out: str
    seed: Optional[int]
    trials: Optional[int]
    threads: int
    overrides: List[str] = field(default_factory=list)
    rho: Optional[float] = None
    speed: Optional[float] = None
    no_noise: bool = False


def _u64(text):
    v = int(text, 0)
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("must be an unsigned 64-bit integer")
    return v


def _positive_int(text):
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return v


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(
        prog="risloc",
        description="Near-field RIS localization experiments.",
        epilog="Config file keys:\n" + schema_text(),
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)
    for name, text in DESCRIPTIONS.items():
        p = sub.add_parser(name, help=text, description=text)
        p.add_argument("--config", metavar="PATH", help="experiment file (sectioned key = value)")
        p.add_argument("--out", metavar="PATH", help=f"CSV output path (default: {name}.csv)")
        p.add_argument("--seed", type=_u64, metavar="N", help="master seed (overrides the file)")
        p.add_argument("--trials", type=_positive_int, metavar="N", help="trials per sweep point")
        p.add_argument("--threads", type=_positive_int, metavar="N", help="worker threads (default: all CPUs)")
        p.add_argument(
            "--set",
            dest="overrides",
            action="append",
            default=[],
            metavar="KEY=VALUE",
            help="override a config key; KEY or SECTION.KEY (repeatable)",
        )
        if name == "bounds":
            p.add_argument("--rho", type=float, metavar="M", help="RIS-UE distance (m)")
            p.add_argument("--v", dest="speed", type=float, metavar="MPS", help="UE speed (m/s)")
        if name == "single-trial":
            p.add_argument("--no-noise", action="store_true", help="observe the noise-free signal")
    return parser


def _experiment(cli: CliConfig) -> ExperimentConfig:
    overrides = list(cli.overrides)
    if cli.rho is not None:
        overrides.append(f"scenario.rho={cli.rho!r}")
    if cli.speed is not None:
        overrides.append(f"scenario.speed={cli.speed!r}")
    if cli.command in SWEEPS:
        # the command's axis and defaults form the base so file values are
        # validated against the right axis
        axis, values, stages, scen_defaults = SWEEPS[cli.command]
        base = ExperimentConfig(
            scenario=replace(ExperimentConfig().scenario, **scen_defaults), sweep_axis=axis, sweep_values=values, stages=stages
        )
        cfg = parse_config(cli.config_path, overrides, base)
    else:
        cfg = parse_config(cli.config_path, overrides)
        cfg = replace(cfg, sweep_axis="distance", sweep_values=(cfg.scenario.rho,))
        if cli.command == "single-trial" and "experiment.stages" not in explicit_keys(cli.config_path, overrides):
            cfg = replace(cfg, stages=("grid", "full"))
    if cli.seed is not None:
        cfg = replace(cfg, seed=cli.seed)
    if cli.trials is not None:
        cfg = replace(cfg, trials=cli.trials)
    if cli.no_noise:
        cfg = replace(cfg, noise=False)
    return cfg


def _write_rows(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([format_float(x) if isinstance(x, float) else x for x in row])


def _run(cli: CliConfig, cfg: ExperimentConfig, stdout) -> dict:
    """Execute one subcommand; returns timing for the metadata sidecar."""
    if cli.command in SWEEPS:
        res = run_sweep(cfg, threads=cli.threads)
        write_csv(res.rows, cli.out)
        print(f"wrote {len(res.rows)} rows to {cli.out}", file=stdout)
        return {"stage_seconds": res.stage_seconds, "wall_seconds": res.wall_seconds}

    t0 = time.perf_counter()
    if cli.command == "bounds":
        scen = point_scenario(cfg, 0)
        rep = bounds(replace(scen, rician_k=None))
        rows = [(cfg.scenario.rho, cfg.scenario.speed, rep.peb, rep.veb, rep.condition_number, snr(scen.ue.gain, scen.rf))]
        _write_rows(cli.out, ("rho_m", "speed_mps", "peb_m", "veb_mps", "condition_number", "snr_db"), rows)
        print(f"PEB = {rep.peb:.6g} m, VEB = {rep.veb:.6g} m/s", file=stdout)
        wall = time.perf_counter() - t0
        return {"stage_seconds": {"bounds": wall}, "wall_seconds": wall}

    if cli.command == "convergence":
        tr = convergence_trace(cfg)
        rows = [(name, i, float(v)) for name, series in (("grid", tr.grid), ("outer", tr.outer), ("descent", tr.descent)) for i, v in enumerate(series)]
        _write_rows(cli.out, ("loop", "iteration", "objective"), rows)
        print(
            f"grid iterations {tr.iterations['grid']}, outer iterations {tr.iterations['outer']}, "
            f"descent iterations {tr.iterations['descent']}",
            file=stdout,
        )
        wall = time.perf_counter() - t0
        return {"stage_seconds": {"convergence": wall}, "wall_seconds": wall}

    # single-trial
    scen = point_scenario(cfg, 0)
    obs = observe(scen, trial_seed(cfg, 0, 0), noise=cfg.noise)
    res = find_pos_vel(obs.y, scen, cfg.grid, cfg.convergence)
    pe = float(np.linalg.norm(res.position - scen.ue.position))
    ve = float(np.linalg.norm(res.velocity - scen.ue.velocity))
    ge = float(np.linalg.norm(res.grid_position - scen.ue.position))
    header = ("stage", "position_error_m", "velocity_error_mps", "px", "py", "pz", "vx", "vy", "vz")
    rows = [
        ("grid", ge, float(np.linalg.norm(scen.ue.velocity)), *map(float, res.grid_position), 0.0, 0.0, 0.0),
        ("full", pe, ve, *map(float, res.position), *map(float, res.velocity)),
    ]
    _write_rows(cli.out, header, rows)
    print(f"position error {pe:.6g} m", file=stdout)
    print(f"velocity error {ve:.6g} m/s", file=stdout)
    for msg in res.failures:
        print(f"warning: {msg}", file=stdout)
    seconds = {s.name: 0.0 for s in res.stage_trace}
    for s in res.stage_trace:
        seconds[s.name] += s.seconds
    return {"stage_seconds": seconds, "wall_seconds": time.perf_counter() - t0}


def dispatch(cli: CliConfig, stdout=None, stderr=None) -> int:
    """Run a parsed command and return its exit status."""
    stdout = stdout or sys.stdout
    stderr = stderr or sys.stderr
    try:
        cfg = _experiment(cli)
    except (ParseError, ValidationError) as exc:
        print(f"risloc: invalid configuration: {exc}", file=stderr)
        return 1
    try:
        timing = _run(cli, cfg, stdout)
        write_metadata(
            f"{cli.out}.meta.jsonl",
            cfg,
            cli.command,
            timing["stage_seconds"],
            timing["wall_seconds"],
            {"threads": cli.threads, "argv_overrides": list(cli.overrides)},
        )
    except ValidationError as exc:
        print(f"risloc: invalid configuration: {exc}", file=stderr)
        return 1
    except (RislocError, OSError, ArithmeticError, ValueError) as exc:
        print(f"risloc: run failed: {type(exc).__name__}: {exc}", file=stderr)
        return 2
    return 0


def main(argv: Optional[Sequence[str]] = None, stdout=None, stderr=None) -> int:
    stderr = stderr or sys.stderr
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(str(exc), file=stderr, end="")
        return 1
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    if args.command is None:
        print(parser.format_usage(), file=stderr, end="")
        print("risloc: error: a subcommand is required", file=stderr)
        return 1
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
    cli = CliConfig(
        command=args.command,
        config_path=args.config,
        out=args.out or f"{args.command}.csv",
        seed=args.seed,
        trials=args.trials,
        threads=args.threads or default_threads(),
        overrides=args.overrides,
        rho=getattr(args, "rho", None),
        speed=getattr(args, "speed", None),
        no_noise=getattr(args, "no_noise", False),
    )
    return dispatch(cli, stdout, stderr)
