"""
Validated configuration and result models
"""

import math
from typing import List, Literal, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

Scheme = Literal["one-by-one", "orthogonal", "equal-bit", "local"]
SweepAxis = Literal["T", "L", "K"]

SCHEMES: Tuple[str, ...] = ("one-by-one", "orthogonal", "equal-bit", "local")

# floor(T/Δ) is taken with this slack so that e.g. 0.15/0.03 gives 5 frames
FRAME_ROUNDING = 1e-9


class ScenarioConfig(BaseModel):
    """Road, RSU and radio description of one scenario"""
    model_config = ConfigDict(frozen=True)

    num_rsus: int = Field(default=3, ge=1)
    rsu_spacing: float = Field(default=500.0, gt=0)
    rsu_radius: float = Field(default=250.0, gt=0)
    rsu_height: float = Field(default=20.0, gt=0)
    num_lanes: int = Field(default=3, ge=1)
    lane_width: float = Field(default=4.0, gt=0)
    lane_speeds: Tuple[float, ...] = (30.0, 32.5, 35.0)
    mission_time: float = Field(default=25.0, gt=0)
    frame_duration: float = Field(default=0.03, gt=0)
    bandwidth: float = Field(default=20e6, gt=0)
    noise_psd: float = Field(default=10 ** ((-114.0 - 30.0) / 10.0), gt=0)  # W/Hz
    vehicle_max_power: float = Field(default=1.0, gt=0)
    rsu_power: float = Field(default=2.0, gt=0)
    ref_gain: float = Field(default=1e-3, gt=0)
    pathloss_exponent: float = Field(default=2.0, ge=2.0)
    rng_seed: int = Field(default=0, ge=0, lt=2**64)
    fading: bool = True

    @field_validator("lane_speeds")
    @classmethod
    def _positive_speeds(cls, speeds: Tuple[float, ...]) -> Tuple[float, ...]:
        if any(v <= 0 for v in speeds):
            raise ValueError("lane speeds must be positive")
        return speeds

    @model_validator(mode="after")
    def _check_shape(self) -> "ScenarioConfig":
        if len(self.lane_speeds) != self.num_lanes:
            raise ValueError(
                f"lane_speeds has {len(self.lane_speeds)} entries for {self.num_lanes} lanes"
            )
        if self.num_frames < 3:
            raise ValueError(
                f"mission time {self.mission_time} s holds {self.num_frames} frames of "
                f"{self.frame_duration} s; uplink, compute and downlink need at least 3"
            )
        return self

    @property
    def num_frames(self) -> int:
        """N = floor(T/Δ)"""
        return int(math.floor(self.mission_time / self.frame_duration + FRAME_ROUNDING))

    @property
    def num_slots(self) -> int:
        """Number of uplink frames, N - 2"""
        return self.num_frames - 2

    @property
    def slot_bits(self) -> float:
        """B·Δ, bits per unit of spectral efficiency in one frame"""
        return self.bandwidth * self.frame_duration

    @property
    def noise_power(self) -> float:
        """N0·B in W"""
        return self.noise_psd * self.bandwidth


class VehicleTask(BaseModel):
    """Computation task carried by one vehicle"""
    model_config = ConfigDict(frozen=True)

    id: int = Field(ge=0)
    lane: int = Field(default=1, ge=1)
    arrival_time: float = Field(default=0.0, ge=0)
    input_bits: float = Field(gt=0)
    cycles_per_bit: float = Field(default=1550.7, gt=0)
    output_ratio: float = Field(default=0.5, gt=0, lt=1)
    switched_capacitance: float = Field(default=1e-28, gt=0)


class SolverConfig(BaseModel):
    """Knobs of the dual ascent loop and of primal recovery"""
    model_config = ConfigDict(frozen=True)

    max_iterations: int = Field(default=500, ge=1)
    min_iterations: int = Field(default=20, ge=1)
    convergence_window: int = Field(default=10, ge=1)
    dual_tolerance: float = Field(default=1e-4, gt=0)
    kkt_tolerance: float = Field(default=1e-6, gt=0)
    step_sizes: Tuple[float, float, float, float, float, float, float] = (0.1,) * 7
    step_decay: Literal["polyak", "sqrt", "harmonic", "constant"] = "polyak"
    agility: float = Field(default=1.0, gt=0, le=2.0)
    tie_break: Literal["lowest_index", "highest_index"] = "lowest_index"
    recovery_tolerance: float = Field(default=1e-4, gt=0)
    local_search_limit: int = Field(default=64, ge=0)

    @field_validator("step_sizes")
    @classmethod
    def _positive_steps(cls, steps: Tuple[float, ...]) -> Tuple[float, ...]:
        if any(p <= 0 for p in steps):
            raise ValueError("step sizes must be positive")
        return steps


class TaskTemplate(BaseModel):
    """How the harness builds the vehicle task list for one sweep point"""
    model_config = ConfigDict(frozen=True)

    num_vehicles: int = Field(default=3, ge=1)
    input_bits: float = Field(default=75e6, gt=0)
    cycles_per_bit: float = Field(default=1550.7, gt=0)
    output_ratio: float = Field(default=0.5, gt=0, lt=1)
    switched_capacitance: float = Field(default=1e-28, gt=0)
    arrival_window: float = Field(default=1.0, ge=0)


class ExperimentSpec(BaseModel):
    """One sweep: axis, values, schemes and seeds"""
    model_config = ConfigDict(frozen=True)

    scenario: ScenarioConfig = ScenarioConfig()
    tasks: TaskTemplate = TaskTemplate()
    solver: SolverConfig = SolverConfig()
    axis: SweepAxis = "T"
    values: Tuple[float, ...] = (10.0, 15.0, 20.0, 25.0)
    schemes: Tuple[Scheme, ...] = SCHEMES
    num_seeds: int = Field(default=1, ge=1)
    base_seed: int = Field(default=0, ge=0, lt=2**64)
    seeds: Optional[Tuple[int, ...]] = None
    record_timing: bool = True
    workers: int = Field(default=1, ge=1)

    @field_validator("values")
    @classmethod
    def _sorted_positive(cls, values: Tuple[float, ...]) -> Tuple[float, ...]:
        if not values:
            raise ValueError("at least one axis value is required")
        if any(v <= 0 for v in values):
            raise ValueError("axis values must be positive")
        if list(values) != sorted(values):
            raise ValueError("axis values must be sorted")
        return values

    @field_validator("schemes")
    @classmethod
    def _known_schemes(cls, schemes: Tuple[str, ...]) -> Tuple[str, ...]:
        if not schemes:
            raise ValueError("at least one scheme is required")
        return schemes

    @model_validator(mode="after")
    def _seed_count(self) -> "ExperimentSpec":
        if self.seeds is not None and len(self.seeds) != self.num_seeds:
            raise ValueError(f"{len(self.seeds)} explicit seeds given for num_seeds={self.num_seeds}")
        return self

    def seed_list(self) -> List[int]:
        """Seeds of the Monte Carlo repetitions"""
        if self.seeds is not None:
            return list(self.seeds)
        return [self.base_seed + i for i in range(self.num_seeds)]


class ResultRow(BaseModel):
    """One (scheme, axis value, seed) measurement"""
    scheme: Scheme
    axis: SweepAxis
    axis_value: float
    seed: int
    total_energy_j: float
    per_vehicle_energy_j: List[float]
    iterations: int = 0
    gap: float = 0.0
    wall_time_s: float = 0.0
    feasible: bool = True
