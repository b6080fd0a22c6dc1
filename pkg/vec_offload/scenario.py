"""
Road geometry, RSU association and per-frame channel traces

Frames are 1-based in the public functions (n = 1..N) and map to column n-1
of every K x N trace matrix.
"""

import logging
from dataclasses import dataclass
from typing import List, NamedTuple, Sequence, Tuple

import numpy as np

from .energy import rate_cap
from .errors import ScenarioError
from .models import ScenarioConfig, VehicleTask

logger = logging.getLogger(__name__)


class Position(NamedTuple):
    """Vehicle position on the road plane, meters"""
    x: float
    y: float


def _readonly(array: np.ndarray) -> np.ndarray:
    array.setflags(write=False)
    return array


@dataclass(frozen=True)
class ChannelTrace:
    """Per-vehicle, per-frame gains and full-power bit caps"""
    gains: np.ndarray
    uplink_cap: np.ndarray
    downlink_cap: np.ndarray
    active: np.ndarray

    @classmethod
    def from_gains(cls, gains: np.ndarray, active: np.ndarray, cfg: ScenarioConfig) -> "ChannelTrace":
        gains = np.array(gains, dtype=float)
        active = np.array(active, dtype=bool)
        if gains.ndim != 2 or gains.shape != active.shape:
            raise ScenarioError(f"gains {gains.shape} and active {active.shape} must be matching K x N matrices")
        if gains.shape[1] != cfg.num_frames:
            raise ScenarioError(f"trace has {gains.shape[1]} frames, scenario has {cfg.num_frames}")
        if np.any(gains < 0) or not np.all(np.isfinite(gains)):
            raise ScenarioError("gains must be finite and non-negative")

        uplink = np.where(active, rate_cap(gains, cfg.vehicle_max_power, cfg.frame_duration, cfg), 0.0)
        downlink = np.where(active, rate_cap(gains, cfg.rsu_power, cfg.frame_duration, cfg), 0.0)
        return cls(
            gains=_readonly(gains),
            uplink_cap=_readonly(uplink),
            downlink_cap=_readonly(downlink),
            active=_readonly(active),
        )

    def scaled(self, factor: float, cfg: ScenarioConfig) -> "ChannelTrace":
        """Same trace with every gain multiplied by factor"""
        if factor < 0:
            raise ScenarioError("gain scaling factor must be non-negative")
        return ChannelTrace.from_gains(self.gains * factor, self.active, cfg)

    @property
    def num_vehicles(self) -> int:
        return self.gains.shape[0]

    @property
    def num_frames(self) -> int:
        return self.gains.shape[1]

    # Slot views: uplink slot i is frame i+1, its downlink is frame i+3

    @property
    def uplink_slot_gains(self) -> np.ndarray:
        return self.gains[:, :-2]

    @property
    def uplink_slot_caps(self) -> np.ndarray:
        return self.uplink_cap[:, :-2]

    @property
    def uplink_slot_active(self) -> np.ndarray:
        return self.active[:, :-2]

    @property
    def downlink_slot_gains(self) -> np.ndarray:
        return self.gains[:, 2:]

    @property
    def downlink_slot_caps(self) -> np.ndarray:
        return self.downlink_cap[:, 2:]

    @property
    def downlink_slot_active(self) -> np.ndarray:
        return self.active[:, 2:]


def rsu_x_positions(cfg: ScenarioConfig) -> np.ndarray:
    """x coordinate of every RSU, r_RSU + (m-1)·d"""
    return cfg.rsu_radius + np.arange(cfg.num_rsus) * cfg.rsu_spacing


def vehicle_position(task: VehicleTask, n: int, cfg: ScenarioConfig) -> Position:
    """Position at the end of frame n, shifted by the arrival time"""
    if not 1 <= n <= cfg.num_frames:
        raise ScenarioError(f"frame {n} outside 1..{cfg.num_frames}")
    speed = _lane_speed(task, cfg)
    return Position(x=(n * cfg.frame_duration - task.arrival_time) * speed,
                    y=(task.lane - 1) * cfg.lane_width)


def nearest_rsu(pos: Position, cfg: ScenarioConfig) -> Tuple[int, float]:
    """1-based index of the closest RSU and the squared 3-D distance to it"""
    dist2 = (pos.x - rsu_x_positions(cfg)) ** 2 + pos.y ** 2 + cfg.rsu_height ** 2
    m = int(np.argmin(dist2))
    return m + 1, float(dist2[m])


def large_scale_gain(pos: Position, cfg: ScenarioConfig) -> float:
    _, dist2 = nearest_rsu(pos, cfg)
    return cfg.ref_gain / dist2 ** (cfg.pathloss_exponent / 2.0)


def fading_draw(rng_seed: int, k: int, n: int) -> float:
    """Unit-mean exponential sample (|h|² of unit-variance Rayleigh) for vehicle k, frame n"""
    rng = np.random.default_rng(np.random.SeedSequence([rng_seed, k, n]))
    return float(rng.standard_exponential())


def _lane_speed(task: VehicleTask, cfg: ScenarioConfig) -> float:
    if task.lane > cfg.num_lanes:
        raise ScenarioError(f"vehicle {task.id} is on lane {task.lane}, road has {cfg.num_lanes}")
    return cfg.lane_speeds[task.lane - 1]


def _validate_tasks(cfg: ScenarioConfig, tasks: Sequence[VehicleTask]) -> None:
    if not tasks:
        raise ScenarioError("at least one vehicle task is required")
    ids = [task.id for task in tasks]
    if len(set(ids)) != len(ids):
        raise ScenarioError(f"vehicle ids must be unique, got {ids}")
    for task in tasks:
        _lane_speed(task, cfg)
        if task.arrival_time >= cfg.mission_time:
            raise ScenarioError(
                f"vehicle {task.id} arrives at {task.arrival_time} s, after the {cfg.mission_time} s mission"
            )


def generate_channel_trace(cfg: ScenarioConfig, tasks: Sequence[VehicleTask]) -> ChannelTrace:
    """Gains s_k[n]·h^l_k[n] and caps for every vehicle and frame"""
    if cfg.num_frames < 3:
        raise ScenarioError(f"{cfg.num_frames} frames cannot hold an uplink, compute and downlink frame")
    _validate_tasks(cfg, tasks)

    frames = np.arange(1, cfg.num_frames + 1)
    times = frames * cfg.frame_duration
    rsu_x = rsu_x_positions(cfg)

    rows: List[np.ndarray] = []
    active_rows: List[np.ndarray] = []
    for task in tasks:
        x = (times - task.arrival_time) * _lane_speed(task, cfg)
        y = (task.lane - 1) * cfg.lane_width
        dist2 = np.min((x[:, None] - rsu_x[None, :]) ** 2, axis=1) + y ** 2 + cfg.rsu_height ** 2
        large_scale = cfg.ref_gain / dist2 ** (cfg.pathloss_exponent / 2.0)

        if cfg.fading:
            # keyed by vehicle id so reordering the task list leaves every draw in place
            small_scale = np.array([fading_draw(cfg.rng_seed, task.id, int(n)) for n in frames])
        else:
            small_scale = np.ones_like(large_scale)

        rows.append(small_scale * large_scale)
        active_rows.append(times >= task.arrival_time)

    trace = ChannelTrace.from_gains(np.vstack(rows), np.vstack(active_rows), cfg)
    logger.debug(
        "Generated trace for %d vehicles over %d frames (seed %d, fading %s)",
        trace.num_vehicles, trace.num_frames, cfg.rng_seed, cfg.fading,
    )
    return trace
