"""
Sweeps over deadline, task size or fleet size, and the results CSV

One sweep point is (axis value, seed): build the task list, generate the
channel trace, run every requested scheme on it and emit one ResultRow per
scheme. Points are independent and may run on a thread pool; rows always
come back ordered by (scheme, axis value, seed).
"""

import csv
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from pydantic import ValidationError

from .baselines import equal_bit_one_by_one, local_execution_total, orthogonal_optimize
from .errors import ExperimentError
from .models import ExperimentSpec, ResultRow, ScenarioConfig, SolverConfig, TaskTemplate, VehicleTask
from .scenario import ChannelTrace, generate_channel_trace
from .solver import SolveReport, run_algorithm1

logger = logging.getLogger(__name__)

CSV_HEADER = ("scheme", "axis", "axis_value", "seed", "total_energy_j", "iterations", "gap", "wall_time_s")

# Stream tag mixed into the seed of the arrival-time generator
ARRIVAL_STREAM = 0xA221


def build_tasks(template: TaskTemplate, cfg: ScenarioConfig, seed: int) -> List[VehicleTask]:
    """Vehicles with seeded arrivals in [0, min(window, T)) and round-robin lanes"""
    rng = np.random.default_rng(np.random.SeedSequence([seed, ARRIVAL_STREAM]))
    window = min(template.arrival_window, cfg.mission_time)
    arrivals = rng.uniform(0.0, window, template.num_vehicles) if window > 0 else np.zeros(template.num_vehicles)
    return [
        VehicleTask(
            id=k,
            lane=k % cfg.num_lanes + 1,
            arrival_time=float(arrivals[k]),
            input_bits=template.input_bits,
            cycles_per_bit=template.cycles_per_bit,
            output_ratio=template.output_ratio,
            switched_capacitance=template.switched_capacitance,
        )
        for k in range(template.num_vehicles)
    ]


def point_config(spec: ExperimentSpec, value: Optional[float], seed: int) -> Tuple[ScenarioConfig, TaskTemplate]:
    """Scenario and task template of one sweep point; value None keeps the base settings"""
    scenario = spec.scenario.model_dump()
    tasks = spec.tasks.model_dump()
    scenario["rng_seed"] = seed
    if value is not None:
        if spec.axis == "T":
            scenario["mission_time"] = value
        elif spec.axis == "L":
            tasks["input_bits"] = value
        else:
            if value != int(value):
                raise ExperimentError(f"vehicle count must be an integer, got {value}")
            tasks["num_vehicles"] = int(value)
    try:
        return ScenarioConfig(**scenario), TaskTemplate(**tasks)
    except ValidationError as e:
        raise ExperimentError(f"{spec.axis}={value} is not a valid sweep point: {e}") from e


@dataclass(frozen=True)
class SchemeOutcome:
    """Energy of one scheme on one instance"""
    scheme: str
    per_vehicle: np.ndarray
    total: float
    iterations: int = 0
    gap: float = 0.0
    feasible: bool = True
    wall_time: float = 0.0
    report: Optional[SolveReport] = None


def run_scheme(
    scheme: str,
    cfg: ScenarioConfig,
    tasks: Sequence[VehicleTask],
    trace: ChannelTrace,
    solver_cfg: SolverConfig,
) -> SchemeOutcome:
    started = time.perf_counter()
    if scheme == "one-by-one":
        report = run_algorithm1(cfg, tasks, trace, solver_cfg)
        return SchemeOutcome(
            scheme, report.breakdown.per_vehicle, report.primal_value, report.iterations_used,
            report.gap, True, time.perf_counter() - started, report,
        )
    if scheme == "orthogonal":
        result = orthogonal_optimize(cfg, tasks, trace, solver_cfg)
    elif scheme == "equal-bit":
        result = equal_bit_one_by_one(cfg, tasks, trace)
    elif scheme == "local":
        result = local_execution_total(tasks, cfg.mission_time)
    else:
        raise ExperimentError(f"unknown scheme '{scheme}'")
    return SchemeOutcome(
        scheme, result.per_vehicle, result.total, feasible=result.feasible,
        wall_time=time.perf_counter() - started,
    )


def _evaluate_point(spec: ExperimentSpec, value: float, seed: int) -> List[ResultRow]:
    cfg, template = point_config(spec, value, seed)
    tasks = build_tasks(template, cfg, seed)
    trace = generate_channel_trace(cfg, tasks)

    rows = []
    for scheme in spec.schemes:
        outcome = run_scheme(scheme, cfg, tasks, trace, spec.solver)
        rows.append(ResultRow(
            scheme=scheme,
            axis=spec.axis,
            axis_value=value,
            seed=seed,
            total_energy_j=outcome.total,
            per_vehicle_energy_j=[float(e) for e in outcome.per_vehicle],
            iterations=outcome.iterations,
            gap=outcome.gap,
            wall_time_s=outcome.wall_time if spec.record_timing else 0.0,
            feasible=outcome.feasible,
        ))
    logger.info("Finished %s=%g seed %d", spec.axis, value, seed)
    return rows


def run_experiment(
    spec: ExperimentSpec, on_point: Optional[Callable[[float, int], None]] = None
) -> List[ResultRow]:
    """Every (axis value, seed) point of the sweep, rows ordered by (scheme, value, seed)"""
    for value in spec.values:
        point_config(spec, value, spec.base_seed)

    points = [(value, seed) for value in spec.values for seed in spec.seed_list()]
    logger.info("Sweeping %s over %d value(s) x %d seed(s)", spec.axis, len(spec.values), spec.num_seeds)

    def evaluate(point: Tuple[float, int]) -> List[ResultRow]:
        rows = _evaluate_point(spec, *point)
        if on_point is not None:
            on_point(*point)
        return rows

    if spec.workers > 1:
        with ThreadPoolExecutor(max_workers=spec.workers) as pool:
            batches = list(pool.map(evaluate, points))
    else:
        batches = [evaluate(point) for point in points]

    rank = {scheme: i for i, scheme in enumerate(spec.schemes)}
    rows = [row for batch in batches for row in batch]
    rows.sort(key=lambda r: (rank[r.scheme], r.axis_value, r.seed))
    return rows


def _fmt(value: float) -> str:
    return format(value, ".17g")


def emit_csv(rows: Sequence[ResultRow], path: str) -> None:
    """Write the results CSV: UTF-8, LF line endings, 17 significant digits"""
    if not rows:
        raise ExperimentError("no result rows to write")
    try:
        with open(path, "w", encoding="utf-8", newline="") as f:
            writer = csv.writer(f, lineterminator="\n")
            writer.writerow(CSV_HEADER)
            for row in rows:
                writer.writerow([
                    row.scheme,
                    row.axis,
                    _fmt(row.axis_value),
                    row.seed,
                    _fmt(row.total_energy_j),
                    row.iterations,
                    _fmt(row.gap),
                    _fmt(row.wall_time_s),
                ])
    except OSError as e:
        raise ExperimentError(f"Failed to write {path}: {e}") from e
    logger.info("Wrote %d rows to %s", len(rows), path)


def load_rows(path: str) -> List[Dict[str, Any]]:
    """Parse a results CSV back into typed records"""
    try:
        with open(path, "r", encoding="utf-8", newline="") as f:
            reader = csv.DictReader(f)
            if tuple(reader.fieldnames or ()) != CSV_HEADER:
                raise ExperimentError(f"{path} does not have the results header")
            return [
                {
                    "scheme": record["scheme"],
                    "axis": record["axis"],
                    "axis_value": float(record["axis_value"]),
                    "seed": int(record["seed"]),
                    "total_energy_j": float(record["total_energy_j"]),
                    "iterations": int(record["iterations"]),
                    "gap": float(record["gap"]),
                    "wall_time_s": float(record["wall_time_s"]),
                }
                for record in reader
            ]
    except OSError as e:
        raise ExperimentError(f"Failed to read {path}: {e}") from e
    except (KeyError, ValueError) as e:
        raise ExperimentError(f"Malformed row in {path}: {e}") from e


def summarize(rows: Sequence[ResultRow]) -> Dict[Tuple[str, float], float]:
    """Mean total energy per (scheme, axis value), in row order"""
    sums: Dict[Tuple[str, float], List[float]] = {}
    for row in rows:
        sums.setdefault((row.scheme, row.axis_value), []).append(row.total_energy_j)
    return {key: float(np.mean(values)) for key, values in sums.items()}
