"""Seeded Monte-Carlo sweeps comparing estimator RMSE with the error bounds."""

from __future__ import annotations

import csv
import hashlib
import io
import json
import logging
import math
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import kernels
from .bounds import bounds
from .channel import UE_DIRECTION, RfConstants, Scenario, default_scenario, observe
from .errors import RislocError, Unidentifiable, ValidationError
from .estimator import (
    ConvergenceConfig,
    GridSpec,
    alpha_hat,
    find_pos_vel,
    init_pos_gain,
    ref_pos_gain,
    ref_vel,
)

log = logging.getLogger(__name__)

SWEEP_AXES = ("distance", "speed", "rician_k", "snr_offset")
STAGES = ("grid", "ref_pos", "ref_vel", "full")
CSV_COLUMNS = (
    "sweep_axis",
    "sweep_value",
    "stage",
    "rmse_pos_m",
    "rmse_vel_mps",
    "peb_m",
    "veb_mps",
    "mean_iters_outer",
    "mean_iters_grid",
    "mean_iters_descent",
    "failures",
    "trials",
    "seed",
)

_AXIS_FIELD = {"distance": "rho", "speed": "speed", "rician_k": "rician_k", "snr_offset": "gain_offset_db"}


@dataclass(frozen=True)
class ScenarioParams:
    """Everything needed to build a :class:`Scenario` except the phase profile.

    ``spacing`` defaults to half a wavelength.
    """

    rho: float = 2.0
    speed: float = 1.0
    num_pilots: int = 40
    rows: int = 32
    cols: int = 32
    spacing: Optional[float] = None
    bs_position: Tuple[float, float, float] = (3.0, 3.0, 1.0)
    ue_direction: Tuple[float, float, float] = tuple(float(x) for x in UE_DIRECTION)
    velocity_direction: Optional[Tuple[float, float, float]] = None
    rician_k: Optional[float] = None
    gain_offset_db: float = 0.0
    rf: RfConstants = RfConstants()

    def __post_init__(self):
        if self.num_pilots < 3:
            raise ValidationError(f"num_pilots must be >= 3, got {self.num_pilots}")
        if self.rows < 1 or self.cols < 1:
            raise ValidationError("RIS dimensions must be >= 1")
        if not (math.isfinite(self.rho) and self.rho >= 1.0):
            raise ValidationError(f"rho must be >= 1 m, got {self.rho}")
        if not (math.isfinite(self.speed) and self.speed >= 0):
            raise ValidationError(f"speed must be >= 0, got {self.speed}")
        if self.rician_k is not None and not (math.isfinite(self.rician_k) and self.rician_k > 0):
            raise ValidationError(f"rician_k must be > 0, got {self.rician_k}")
        if not math.isfinite(self.gain_offset_db):
            raise ValidationError("gain_offset_db must be finite")
        if self.spacing is not None and not self.spacing > 0:
            raise ValidationError("spacing must be > 0")

    def build(self, profile_seed) -> Scenario:
        from .geometry import build_upa

        spacing = self.rf.wavelength / 2.0 if self.spacing is None else self.spacing
        return default_scenario(
            self.rho,
            self.speed,
            num_pilots=self.num_pilots,
            profile_seed=profile_seed,
            rf=self.rf,
            ris=build_upa(self.rows, self.cols, spacing),
            bs_position=self.bs_position,
            ue_direction=self.ue_direction,
            velocity_direction=self.velocity_direction,
            gain_offset_db=self.gain_offset_db,
            rician_k=self.rician_k,
            warn_validity=False,
        )


@dataclass(frozen=True)
class ExperimentConfig:
    """One sweep: a base scenario, an axis, values along it and trial counts.

    The RIS phase profile is drawn once per sweep from ``seed``; set
    ``per_trial_profiles`` to redraw it for every trial instead. Noise (and
    the diffuse multipath term) is always fresh per trial.
    """

    scenario: ScenarioParams = ScenarioParams()
    sweep_axis: str = "distance"
    sweep_values: Tuple[float, ...] = (2.0,)
    trials: int = 100
    seed: int = 0
    stages: Tuple[str, ...] = ("grid", "full")
    grid: GridSpec = GridSpec()
    convergence: ConvergenceConfig = ConvergenceConfig()
    noise: bool = True
    per_trial_profiles: bool = False

    def __post_init__(self):
        object.__setattr__(self, "sweep_values", tuple(float(v) for v in self.sweep_values))
        object.__setattr__(self, "stages", tuple(self.stages))
        if self.sweep_axis not in SWEEP_AXES:
            raise ValidationError(f"sweep_axis must be one of {SWEEP_AXES}, got {self.sweep_axis!r}")
        if self.trials < 1:
            raise ValidationError(f"trials must be >= 1, got {self.trials}")
        if not self.sweep_values:
            raise ValidationError("sweep_values must not be empty")
        if not self.stages:
            raise ValidationError("at least one stage is required")
        bad = [s for s in self.stages if s not in STAGES]
        if bad:
            raise ValidationError(f"unknown stage(s) {bad}; choose from {STAGES}")
        if not 0 <= int(self.seed) < 2**64:
            raise ValidationError("seed must be a 64-bit unsigned integer")
        for i in range(len(self.sweep_values)):
            self.point_params(i)

    def point_params(self, point) -> ScenarioParams:
        value = self.sweep_values[point]
        if not math.isfinite(value):
            raise ValidationError(f"sweep value {value} is not finite")
        return replace(self.scenario, **{_AXIS_FIELD[self.sweep_axis]: value})

    def digest(self) -> str:
        blob = json.dumps(asdict(self), sort_keys=True, default=repr)
        return hashlib.blake2b(blob.encode(), digest_size=12).hexdigest()


def _derive(seed, *key) -> int:
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in key))
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def trial_seed(config: ExperimentConfig, point, trial) -> int:
    """64-bit noise seed derived from (master seed, point, trial)."""
    return _derive(config.seed, point, trial)


def profile_seed(config: ExperimentConfig, point, trial) -> int:
    if config.per_trial_profiles:
        return _derive(config.seed, 0x5EED, point, trial)
    return _derive(config.seed, 0x5EED)


def point_scenario(config: ExperimentConfig, point, trial=0) -> Scenario:
    scen = config.point_params(point).build(profile_seed(config, point, trial))
    if scen.is_mobility_stressed():
        log.warning("sweep point %s: UE travel over one frame is not small against the RIS distance", point)
    return scen


@dataclass
class StageOutcome:
    position_error: Optional[np.ndarray]
    velocity_error: Optional[np.ndarray]
    iterations: Dict[str, int]
    failed: bool
    seconds: float
    message: str = ""


@dataclass
class TrialResult:
    point: int
    trial: int
    seed: int
    stages: Dict[str, StageOutcome]


def _run_stages(config, scen, y) -> Dict[str, StageOutcome]:
    ue = scen.ue
    conv = config.convergence
    out: Dict[str, StageOutcome] = {}
    init = None
    grid_seconds = 0.0

    def grid_init():
        nonlocal init, grid_seconds
        if init is None:
            t = time.perf_counter()
            init = init_pos_gain(y, scen, config.grid, conv)
            grid_seconds = time.perf_counter() - t
        return init

    for stage in config.stages:
        t0 = time.perf_counter()
        try:
            if stage == "grid":
                p, _, tr, _ = grid_init()
                out[stage] = StageOutcome(p - ue.position, -ue.velocity, {"grid": tr.iterations}, False, grid_seconds)
            elif stage == "ref_pos":
                p0, a0, tr, _ = grid_init()
                t0 = time.perf_counter()
                res = ref_pos_gain(y, ue.velocity, p0, a0, scen, conv, config.grid.region())
                failed = res.trace.failure is not None
                out[stage] = StageOutcome(
                    res.estimate - ue.position,
                    None,
                    {"grid": tr.iterations, "ref_pos": res.trace.iterations},
                    failed,
                    grid_seconds + time.perf_counter() - t0,
                    res.trace.failure or "",
                )
            elif stage == "ref_vel":
                v0 = np.zeros(3)
                res = ref_vel(y, v0, ue.position, alpha_hat(ue.position, v0, y, scen), scen, conv)
                out[stage] = StageOutcome(
                    None,
                    res.estimate - ue.velocity,
                    {"ref_vel": res.trace.iterations},
                    res.trace.failure is not None,
                    time.perf_counter() - t0,
                    res.trace.failure or "",
                )
            else:
                init_ = grid_init()
                t0 = time.perf_counter()
                res = find_pos_vel(y, scen, config.grid, conv, init=init_)
                out[stage] = StageOutcome(
                    res.position - ue.position,
                    res.velocity - ue.velocity,
                    dict(res.iterations),
                    res.failed,
                    grid_seconds + time.perf_counter() - t0,
                    "; ".join(res.failures),
                )
        except RislocError as exc:
            out[stage] = StageOutcome(None, None, {}, True, time.perf_counter() - t0, f"{type(exc).__name__}: {exc}")
    return out


def run_trial(config: ExperimentConfig, point: int, trial_index: int, scenario: Optional[Scenario] = None) -> TrialResult:
    """One noise realization at one sweep point, through every configured stage."""
    if not 0 <= point < len(config.sweep_values):
        raise ValidationError(f"point index {point} out of range")
    if scenario is None or config.per_trial_profiles:
        scenario = point_scenario(config, point, trial_index)
    seed = trial_seed(config, point, trial_index)
    obs = observe(scenario, seed, noise=config.noise)
    return TrialResult(point, trial_index, seed, _run_stages(config, scenario, obs.y))


def aggregate_rmse(errors: Sequence) -> float:
    """``sqrt(mean ||e||^2)`` over a non-empty list of error vectors."""
    if len(errors) == 0:
        raise ValidationError("cannot aggregate an empty error list")
    arr = np.asarray(errors, dtype=np.float64).reshape(len(errors), -1)
    return float(np.sqrt(np.mean(np.sum(arr * arr, axis=1))))


@dataclass(frozen=True)
class SweepRow:
    sweep_axis: str
    sweep_value: float
    stage: str
    rmse_pos_m: float
    rmse_vel_mps: float
    peb_m: float
    veb_mps: float
    mean_iters_outer: float
    mean_iters_grid: float
    mean_iters_descent: float
    failures: int
    trials: int
    seed: int


@dataclass
class SweepResult:
    config: ExperimentConfig
    rows: List[SweepRow]
    trials: List[TrialResult] = field(repr=False, default_factory=list)
    stage_seconds: Dict[str, float] = field(default_factory=dict)
    wall_seconds: float = 0.0

    def row(self, stage, value) -> SweepRow:
        for r in self.rows:
            if r.stage == stage and r.sweep_value == float(value):
                return r
        raise KeyError((stage, value))

    def series(self, stage, column) -> List[float]:
        return [getattr(r, column) for r in self.rows if r.stage == stage]


def _mean_count(outcomes, key):
    vals = [o.iterations[key] for o in outcomes if key in o.iterations]
    return float(np.mean(vals)) if vals else math.nan


def _rmse_or_nan(errors):
    return aggregate_rmse(errors) if errors else math.nan


def _summarize(config, point, results, bound):
    rows = []
    value = config.sweep_values[point]
    for stage in config.stages:
        outcomes = [r.stages[stage] for r in results]
        pos = [o.position_error for o in outcomes if o.position_error is not None]
        vel = [o.velocity_error for o in outcomes if o.velocity_error is not None]
        failures = sum(o.failed for o in outcomes)
        if failures == len(outcomes):
            log.warning("sweep point %s, stage %s: every trial failed", value, stage)
        rows.append(
            SweepRow(
                config.sweep_axis,
                value,
                stage,
                _rmse_or_nan(pos),
                _rmse_or_nan(vel),
                bound[0],
                bound[1],
                _mean_count(outcomes, "outer"),
                _mean_count(outcomes, "grid"),
                _mean_count(outcomes, "descent"),
                failures,
                len(outcomes),
                int(config.seed),
            )
        )
    return rows


def point_bounds(scenario: Scenario) -> Tuple[float, float]:
    """PEB and VEB of the specular model (any multipath is ignored)."""
    try:
        rep = bounds(replace(scenario, rician_k=None))
    except Unidentifiable as exc:
        log.warning("bounds unavailable: %s", exc)
        return math.nan, math.nan
    return rep.peb, rep.veb


def default_threads() -> int:
    return len(os.sched_getaffinity(0)) if hasattr(os, "sched_getaffinity") else (os.cpu_count() or 1)


def run_sweep(config: ExperimentConfig, threads: Optional[int] = None, keep_trials=False) -> SweepResult:
    """Run every (point, trial) pair and aggregate per point and stage.

    Trials run on a thread pool; results are gathered by index so the output
    does not depend on the worker count.
    """
    threads = default_threads() if threads is None else int(threads)
    if threads < 1:
        raise ValidationError("threads must be >= 1")
    t_start = time.perf_counter()
    scenarios = [point_scenario(config, i) for i in range(len(config.sweep_values))]
    jobs = [(i, t) for i in range(len(scenarios)) for t in range(config.trials)]

    def work(job):
        i, t = job
        return run_trial(config, i, t, scenarios[i])

    if threads == 1:
        results = [work(j) for j in jobs]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(work, jobs))

    rows: List[SweepRow] = []
    seconds = {s: 0.0 for s in config.stages}
    for i, scen in enumerate(scenarios):
        chunk = results[i * config.trials : (i + 1) * config.trials]
        rows.extend(_summarize(config, i, chunk, point_bounds(scen)))
        for r in chunk:
            for s, o in r.stages.items():
                seconds[s] += o.seconds
    return SweepResult(config, rows, results if keep_trials else [], seconds, time.perf_counter() - t_start)


@dataclass
class ConvergenceTrace:
    grid: List[float]
    outer: List[float]
    descent: List[float]
    iterations: Dict[str, int]


def convergence_trace(config: ExperimentConfig, point=0, trial=0) -> ConvergenceTrace:
    """Objective series of the grid loop, the outer loop and the descent for one trial."""
    scen = point_scenario(config, point, trial)
    obs = observe(scen, trial_seed(config, point, trial), noise=config.noise)
    res = find_pos_vel(obs.y, scen, config.grid, config.convergence)
    return ConvergenceTrace(res.grid_trace, res.outer_trace, res.descent_trace, dict(res.iterations))


# ---------------------------------------------------------------------------
# output


def format_float(x) -> str:
    return format(float(x), ".17g")


def _cell(value):
    if isinstance(value, float):
        return format_float(value)
    return str(value)


def write_csv(rows: Sequence[SweepRow], out) -> None:
    """Write rows with the standard header; ``out`` is a path or text stream."""
    if isinstance(out, (str, os.PathLike)):
        with open(out, "w", newline="") as fh:
            write_csv(rows, fh)
        return
    w = csv.writer(out, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for r in rows:
        w.writerow([_cell(getattr(r, c)) for c in CSV_COLUMNS])


def csv_text(rows: Sequence[SweepRow]) -> str:
    buf = io.StringIO()
    write_csv(rows, buf)
    return buf.getvalue()


def write_metadata(path, config: ExperimentConfig, command: str, stage_seconds=None, wall_seconds=None, extra=None):
    """Append one JSON line of run metadata (seed, config digest, timing)."""
    total = sum((stage_seconds or {}).values())
    record = {
        "command": command,
        "seed": int(config.seed),
        "config_hash": config.digest(),
        "backend": kernels.BACKEND,
        "stage_seconds": stage_seconds or {},
        "stage_fractions": {k: (v / total if total > 0 else 0.0) for k, v in (stage_seconds or {}).items()},
        "wall_seconds": wall_seconds,
    }
    if extra:
        record.update(extra)
    with open(path, "a") as fh:
        fh.write(json.dumps(record, sort_keys=True) + "\n")
    return record
