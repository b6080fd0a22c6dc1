"""
Joint scheduling, offload ratio and bit allocation for one-by-one access

The mixed-integer energy problem is attacked through its Lagrangian:

    * ρ_k in closed form from the equality multipliers
    * uplink/downlink schedules by per-frame argmin of the F-scores
    * bits from the relaxed Lagrangian minimiser
    * projected subgradient steps on the multipliers

Iterates of a Lagrangian relaxation are not primal feasible in general, so the
loop is followed by a recovery pass that freezes candidate schedules and
solves the remaining convex problem per vehicle.

Slot i (0-based) is the uplink in frame i+1, compute in frame i+2 and
downlink in frame i+3. Schedules and bit matrices passed between the
functions below are slot-indexed K x (N-2); PrimalPlan holds K x N frames.
"""

import logging
import math
import time
from dataclasses import dataclass, replace
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.optimize import minimize_scalar

from .energy import (
    EnergyBreakdown,
    downlink_score,
    local_energy,
    local_marginal_cost,
    one_by_one_comm_energy,
    rate_cap,
    uplink_score,
)
from .errors import InfeasiblePlanError, ScenarioError
from .models import ScenarioConfig, SolverConfig, VehicleTask
from .scenario import ChannelTrace
from .waterfilling import VehicleAllocation, allocate_vehicle, best_offload, log_gain_offsets, max_carriable

logger = logging.getLogger(__name__)

FEASIBILITY_TOLERANCE = 1e-9

CONSTRAINT_FAMILIES = (
    "uplink_rate",
    "downlink_rate",
    "compute_precedence",
    "downlink_precedence",
    "exclusivity",
    "uplink_total",
    "compute_total",
    "downlink_total",
    "offload_ratio",
    "binary",
    "nonnegative",
    "frame_range",
)


def _task_arrays(tasks: Sequence[VehicleTask]) -> Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    L = np.array([t.input_bits for t in tasks], dtype=float)
    C = np.array([t.cycles_per_bit for t in tasks], dtype=float)
    gamma = np.array([t.switched_capacitance for t in tasks], dtype=float)
    kappa = np.array([t.output_ratio for t in tasks], dtype=float)
    return L, C, gamma, kappa


def validate_instance(cfg: ScenarioConfig, tasks: Sequence[VehicleTask], trace: ChannelTrace) -> None:
    if not tasks:
        raise ScenarioError("at least one vehicle task is required")
    if trace.num_vehicles != len(tasks):
        raise ScenarioError(f"trace has {trace.num_vehicles} vehicles, task list has {len(tasks)}")
    if trace.num_frames != cfg.num_frames:
        raise ScenarioError(f"trace has {trace.num_frames} frames, scenario has {cfg.num_frames}")
    if cfg.num_frames < 3:
        raise ScenarioError("at least 3 frames are required")


# ---------------------------------------------------------------------------
# Plans
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PrimalPlan:
    """Bits and schedules per vehicle and frame (K x N, column = frame - 1)"""
    l_u: np.ndarray
    l_c: np.ndarray
    l_d: np.ndarray
    a_u: np.ndarray
    a_d: np.ndarray
    rho: np.ndarray

    @classmethod
    def from_slots(
        cls,
        uplink: np.ndarray,
        compute: np.ndarray,
        downlink: np.ndarray,
        a_up: np.ndarray,
        a_down: np.ndarray,
        rho: np.ndarray,
    ) -> "PrimalPlan":
        K, S = np.shape(uplink)
        N = S + 2
        l_u, l_c, l_d = np.zeros((K, N)), np.zeros((K, N)), np.zeros((K, N))
        a_u, a_d = np.zeros((K, N), dtype=np.int8), np.zeros((K, N), dtype=np.int8)
        l_u[:, :S] = uplink
        l_c[:, 1 : S + 1] = compute
        l_d[:, 2:] = downlink
        a_u[:, :S] = a_up
        a_d[:, 2:] = a_down
        return cls(l_u=l_u, l_c=l_c, l_d=l_d, a_u=a_u, a_d=a_d, rho=np.asarray(rho, dtype=float))

    @property
    def uplink_slots(self) -> np.ndarray:
        return self.l_u[:, :-2]

    @property
    def compute_slots(self) -> np.ndarray:
        return self.l_c[:, 1:-1]

    @property
    def downlink_slots(self) -> np.ndarray:
        return self.l_d[:, 2:]

    def _violations(self, trace: ChannelTrace, tasks: Sequence[VehicleTask]) -> Dict[str, np.ndarray]:
        L, _, _, kappa = _task_arrays(tasks)
        up, comp, down = self.uplink_slots, self.compute_slots, self.downlink_slots
        a_up, a_down = self.a_u[:, :-2], self.a_d[:, 2:]
        uploaded, computed, delivered = np.cumsum(up, 1), np.cumsum(comp, 1), np.cumsum(down, 1)
        rel = L[:, None]

        def worst(values: np.ndarray) -> np.ndarray:
            return np.max(np.maximum(values, 0.0), axis=1, initial=0.0)

        outside = np.concatenate(
            [self.l_u[:, -2:], self.l_c[:, :1], self.l_c[:, -1:], self.l_d[:, :2]], axis=1
        )
        flags_outside = np.concatenate([self.a_u[:, -2:], self.a_d[:, :2]], axis=1)
        flags = np.concatenate([self.a_u, self.a_d], axis=1).astype(float)
        bits = np.concatenate([self.l_u, self.l_c, self.l_d], axis=1)

        return {
            "uplink_rate": worst((up - a_up * trace.uplink_slot_caps) / rel),
            "downlink_rate": worst((down - a_down * trace.downlink_slot_caps) / rel),
            "compute_precedence": worst((computed - uploaded) / rel),
            "downlink_precedence": worst((delivered - kappa[:, None] * computed) / rel),
            "exclusivity": np.array([
                max(np.max(np.abs(a_up.sum(0) - 1), initial=0), np.max(np.abs(a_down.sum(0) - 1), initial=0))
            ], dtype=float),
            "uplink_total": np.abs(up.sum(1) - self.rho * L) / L,
            "compute_total": np.abs(comp.sum(1) - self.rho * L) / L,
            "downlink_total": np.abs(down.sum(1) - kappa * self.rho * L) / L,
            "offload_ratio": np.maximum(np.maximum(-self.rho, self.rho - 1.0), 0.0),
            "binary": np.max(np.minimum(np.abs(flags), np.abs(flags - 1.0)), axis=1),
            "nonnegative": worst(-bits / rel),
            "frame_range": np.maximum(
                np.max(np.abs(outside) / rel, axis=1), np.max(np.abs(flags_outside), axis=1)
            ),
        }

    def feasibility_residuals(
        self, trace: ChannelTrace, tasks: Sequence[VehicleTask], cfg: ScenarioConfig
    ) -> Dict[str, float]:
        """Largest violation per constraint family; bits relative to L_k"""
        validate_instance(cfg, tasks, trace)
        if self.l_u.shape != trace.gains.shape:
            raise ScenarioError(f"plan shape {self.l_u.shape} does not match trace {trace.gains.shape}")
        return {family: float(np.max(v)) for family, v in self._violations(trace, tasks).items()}

    def check_feasible(
        self,
        trace: ChannelTrace,
        tasks: Sequence[VehicleTask],
        cfg: ScenarioConfig,
        tol: float = FEASIBILITY_TOLERANCE,
    ) -> None:
        validate_instance(cfg, tasks, trace)
        if self.l_u.shape != trace.gains.shape:
            raise ScenarioError(f"plan shape {self.l_u.shape} does not match trace {trace.gains.shape}")
        for family, violation in self._violations(trace, tasks).items():
            if np.max(violation) > tol:
                vehicle = int(np.argmax(violation)) if family != "exclusivity" else None
                raise InfeasiblePlanError(family, float(np.max(violation)), vehicle)


# ---------------------------------------------------------------------------
# Multipliers
# ---------------------------------------------------------------------------


def _decayed_steps(base: Sequence[float], z: int, rule: str) -> Tuple[float, ...]:
    if rule == "sqrt":
        factor = 1.0 / math.sqrt(z)
    elif rule == "harmonic":
        factor = 1.0 / z
    else:  # constant; polyak scales the weights per step
        factor = 1.0
    return tuple(p * factor for p in base)


@dataclass(frozen=True)
class DualState:
    """
    Multipliers of the relaxed rate, precedence and total constraints.

    steps are the current π_1..π_7; step_scale (7 x K) converts each residual
    of vehicle k to the units of its multiplier. agility is the Polyak factor,
    halved whenever the best dual value stalls.
    """
    lam_u: np.ndarray
    lam_d: np.ndarray
    mu_u: np.ndarray
    mu_d: np.ndarray
    u_u: np.ndarray
    u_c: np.ndarray
    u_d: np.ndarray
    steps: Tuple[float, ...] = (1.0,) * 7
    step_scale: Optional[np.ndarray] = None
    iteration: int = 1
    base_steps: Tuple[float, ...] = (1.0,) * 7
    decay: str = "constant"
    agility: float = 1.0

    @classmethod
    def zeros(
        cls,
        K: int,
        S: int,
        steps: Sequence[float] = (1.0,) * 7,
        decay: str = "constant",
        step_scale: Optional[np.ndarray] = None,
    ) -> "DualState":
        steps = tuple(float(p) for p in steps)
        return cls(
            lam_u=np.zeros((K, S)),
            lam_d=np.zeros((K, S)),
            mu_u=np.zeros((K, S)),
            mu_d=np.zeros((K, S)),
            u_u=np.zeros(K),
            u_c=np.zeros(K),
            u_d=np.zeros(K),
            steps=_decayed_steps(steps, 1, decay),
            step_scale=np.ones((7, K)) if step_scale is None else np.asarray(step_scale, dtype=float),
            iteration=1,
            base_steps=steps,
            decay=decay,
        )

    @classmethod
    def initial(cls, tasks: Sequence[VehicleTask], cfg: ScenarioConfig, solver_cfg: SolverConfig) -> "DualState":
        """Zero multipliers with steps scaled to each vehicle's local marginal cost"""
        L, C, gamma, _ = _task_arrays(tasks)
        marginal = np.asarray(local_marginal_cost(L, C, gamma, cfg.mission_time), dtype=float)
        scale = np.vstack([
            np.tile(cfg.slot_bits * marginal, (2, 1)),
            np.tile(marginal / L, (5, 1)),
        ])
        duals = cls.zeros(len(tasks), cfg.num_slots, solver_cfg.step_sizes, solver_cfg.step_decay, scale)
        return replace(duals, agility=solver_cfg.agility)


def optimal_offload_ratio(duals: DualState, task: VehicleTask, T: float, k: int) -> float:
    """ρ_k = 1 - sqrt(clamp((u_u + u_c + κ·u_d)·T²/(3γC³L²), 0, 1))"""
    weight = duals.u_u[k] + duals.u_c[k] + task.output_ratio * duals.u_d[k]
    marginal = local_marginal_cost(task.input_bits, task.cycles_per_bit, task.switched_capacitance, T)
    return 1.0 - math.sqrt(min(max(weight / marginal, 0.0), 1.0))


def offload_ratios(duals: DualState, tasks: Sequence[VehicleTask], T: float) -> np.ndarray:
    return np.array([optimal_offload_ratio(duals, task, T, k) for k, task in enumerate(tasks)])


def _one_hot(choice: np.ndarray, K: int) -> np.ndarray:
    a = np.zeros((K, choice.size), dtype=np.int8)
    a[choice, np.arange(choice.size)] = 1
    return a


def _argmin(scores: np.ndarray, tie_break: str) -> np.ndarray:
    if tie_break == "highest_index":
        return scores.shape[0] - 1 - np.argmin(scores[::-1], axis=0)
    return np.argmin(scores, axis=0)


def optimal_schedule(
    duals: DualState,
    l_u: np.ndarray,
    trace: ChannelTrace,
    cfg: ScenarioConfig,
    tie_break: str = "lowest_index",
) -> Tuple[np.ndarray, np.ndarray]:
    """
    Per-slot argmin of F^u (uplink) and F^d (downlink two frames later).

    Vehicles that have not arrived are left out; a slot nobody can use goes
    to vehicle 0 (or K-1 with the highest_index tie-break).
    """
    K = trace.num_vehicles
    f_up = np.asarray(uplink_score(l_u, trace.uplink_slot_gains, duals.lam_u, cfg))
    f_down = np.asarray(downlink_score(duals.lam_d, trace.downlink_slot_gains, cfg))
    f_up = np.where(trace.uplink_slot_active, f_up, np.inf)
    f_down = np.where(trace.downlink_slot_active, f_down, np.inf)
    return _one_hot(_argmin(f_up, tie_break), K), _one_hot(_argmin(f_down, tie_break), K)


# ---------------------------------------------------------------------------
# Lagrangian
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class LagrangianIterate:
    """Relaxed Lagrangian minimiser for fixed schedules, slot-indexed"""
    rho: np.ndarray
    a_u: np.ndarray
    a_d: np.ndarray
    l_u: np.ndarray
    l_c: np.ndarray
    l_d: np.ndarray


def _reverse_cumsum(values: np.ndarray) -> np.ndarray:
    return np.flip(np.cumsum(np.flip(values, axis=1), axis=1), axis=1)


def _coefficients(duals: DualState, tasks: Sequence[VehicleTask], cfg: ScenarioConfig):
    """Linear Lagrangian weights of l_u, l_c, l_d per slot and of ρ_k·L_k"""
    _, _, _, kappa = _task_arrays(tasks)
    W = cfg.slot_bits
    tail_u = _reverse_cumsum(duals.mu_u)
    tail_d = _reverse_cumsum(duals.mu_d)
    c_u = duals.lam_u / W - tail_u - duals.u_u[:, None]
    c_c = tail_u - kappa[:, None] * tail_d - duals.u_c[:, None]
    c_d = duals.lam_d / W + tail_d - duals.u_d[:, None]
    weight = duals.u_u + duals.u_c + kappa * duals.u_d
    return c_u, c_c, c_d, weight


def _uplink_minimiser(c_u: np.ndarray, trace: ChannelTrace, cfg: ScenarioConfig) -> Tuple[np.ndarray, np.ndarray]:
    """argmin over [0, cap] of E(l) + c·l for a scheduled slot, and E at that point"""
    caps = trace.uplink_slot_caps
    gains = trace.uplink_slot_gains
    usable = caps > 0
    paying = usable & (c_u < 0)
    beta = log_gain_offsets(gains, usable, cfg)
    log_price = np.log2(np.where(paying, -c_u, 1.0))
    bits = np.where(paying, np.clip(cfg.slot_bits * (log_price + beta), 0.0, caps), 0.0)
    return bits, np.asarray(one_by_one_comm_energy(1.0, bits, gains, cfg))


def _fractional_knapsack(c: np.ndarray, caps: np.ndarray, budget: np.ndarray) -> np.ndarray:
    """Fill the most negative slots first up to each row's budget"""
    order = np.argsort(c, axis=1, kind="stable")
    sorted_c = np.take_along_axis(c, order, axis=1)
    sorted_caps = np.where(sorted_c < 0, np.take_along_axis(caps, order, axis=1), 0.0)
    before = np.cumsum(sorted_caps, axis=1) - sorted_caps
    take = np.clip(budget[:, None] - before, 0.0, sorted_caps)
    out = np.zeros_like(c)
    np.put_along_axis(out, order, take, axis=1)
    return out


def _compute_minimiser(c_c: np.ndarray, L: np.ndarray) -> np.ndarray:
    out = np.zeros_like(c_c)
    best = np.argmin(c_c, axis=1)
    rows = np.arange(c_c.shape[0])
    out[rows, best] = np.where(c_c[rows, best] < 0, L, 0.0)
    return out


def lagrangian_iterate(
    duals: DualState,
    a_u: np.ndarray,
    a_d: np.ndarray,
    trace: ChannelTrace,
    tasks: Sequence[VehicleTask],
    cfg: ScenarioConfig,
) -> LagrangianIterate:
    """Minimise the Lagrangian over bits and ρ with the schedules held fixed"""
    L, _, _, kappa = _task_arrays(tasks)
    c_u, c_c, c_d, _ = _coefficients(duals, tasks, cfg)
    scheduled_bits, _ = _uplink_minimiser(c_u, trace, cfg)
    return LagrangianIterate(
        rho=offload_ratios(duals, tasks, cfg.mission_time),
        a_u=a_u,
        a_d=a_d,
        l_u=np.where(a_u == 1, scheduled_bits, 0.0),
        l_c=_compute_minimiser(c_c, L),
        l_d=_fractional_knapsack(c_d, trace.downlink_slot_caps, kappa * L),
    )


def relaxed_minimiser(
    duals: DualState, trace: ChannelTrace, tasks: Sequence[VehicleTask], cfg: ScenarioConfig
) -> Tuple[LagrangianIterate, float]:
    """
    Exact minimiser of the Lagrangian over schedules, bits and ρ, and g(Y).

    The uplink rate limit stays in the domain: a slot's owner sends at most
    its cap, everyone else sends nothing. Every feasible plan lies in this
    domain, so g(Y) is a lower bound on the optimal total energy.
    """
    L, C, gamma, kappa = _task_arrays(tasks)
    K = len(tasks)
    W = cfg.slot_bits
    c_u, c_c, c_d, weight = _coefficients(duals, tasks, cfg)
    caps_u, caps_d = trace.uplink_slot_caps, trace.downlink_slot_caps

    bits, energy = _uplink_minimiser(c_u, trace, cfg)
    scheduled = energy + c_u * bits - duals.lam_u * caps_u / W
    a_u = _one_hot(np.argmin(scheduled, axis=0), K)
    released = -duals.lam_d * caps_d / W
    a_d = _one_hot(np.argmin(released, axis=0), K)

    l_c = _compute_minimiser(c_c, L)
    l_d = _fractional_knapsack(c_d, caps_d, kappa * L)
    rho = offload_ratios(duals, tasks, cfg.mission_time)

    value = (
        float(np.sum(np.min(scheduled, axis=0)))
        + float(np.sum(np.min(released, axis=0)))
        + float(np.sum(c_c * l_c))
        + float(np.sum(c_d * l_d))
        + float(np.sum(local_energy((1.0 - rho) * L, C, gamma, cfg.mission_time) + weight * rho * L))
    )
    iterate = LagrangianIterate(rho=rho, a_u=a_u, a_d=a_d, l_u=np.where(a_u == 1, bits, 0.0), l_c=l_c, l_d=l_d)
    return iterate, value


def dual_value(duals: DualState, trace: ChannelTrace, tasks: Sequence[VehicleTask], cfg: ScenarioConfig) -> float:
    """g(Y), a lower bound on the optimal total energy for any multipliers"""
    return relaxed_minimiser(duals, trace, tasks, cfg)[1]


def update_duals(
    duals: DualState,
    iterate: LagrangianIterate,
    trace: ChannelTrace,
    tasks: Sequence[VehicleTask],
    cfg: ScenarioConfig,
    dual: Optional[float] = None,
    target: Optional[float] = None,
) -> DualState:
    """
    One projected subgradient step along the constraint residuals.

    With the "polyak" rule the step length is agility·(target - dual)/||s||²
    in the metric of the step scales, target being the best known energy.
    The other rules use the decayed steps directly.
    """
    L, _, _, kappa = _task_arrays(tasks)
    W = cfg.slot_bits
    s = duals.step_scale

    uploaded = np.cumsum(iterate.l_u, axis=1)
    computed = np.cumsum(iterate.l_c, axis=1)
    delivered = np.cumsum(iterate.l_d, axis=1)
    residuals = (
        iterate.l_u / W - iterate.a_u * trace.uplink_slot_caps / W,
        iterate.l_d / W - iterate.a_d * trace.downlink_slot_caps / W,
        computed - uploaded,
        delivered - kappa[:, None] * computed,
        iterate.rho * L - iterate.l_u.sum(axis=1),
        iterate.rho * L - iterate.l_c.sum(axis=1),
        kappa * iterate.rho * L - iterate.l_d.sum(axis=1),
    )
    current = (duals.lam_u, duals.lam_d, duals.mu_u, duals.mu_d, duals.u_u, duals.u_c, duals.u_d)
    scales = tuple(s[i][:, None] if i < 4 else s[i] for i in range(7))

    pi = duals.steps
    if duals.decay == "polyak":
        pi = (0.0,) * 7
        if dual is not None and target is not None and target > dual:
            # components held at zero by the projection do not count
            moving = [
                np.where((y > 0) | (r > 0), r, 0.0) if i < 4 else r
                for i, (y, r) in enumerate(zip(current, residuals))
            ]
            norm = sum(p * float(np.sum(sc * r * r)) for p, sc, r in zip(duals.steps, scales, moving))
            if norm > 0:
                length = duals.agility * (target - dual) / norm
                pi = tuple(p * length for p in duals.steps)

    stepped = [y + p * sc * r for y, p, sc, r in zip(current, pi, scales, residuals)]
    z = duals.iteration + 1
    return replace(
        duals,
        lam_u=np.maximum(0.0, stepped[0]),
        lam_d=np.maximum(0.0, stepped[1]),
        mu_u=np.maximum(0.0, stepped[2]),
        mu_d=np.maximum(0.0, stepped[3]),
        u_u=stepped[4],
        u_c=stepped[5],
        u_d=stepped[6],
        iteration=z,
        steps=_decayed_steps(duals.base_steps, z, duals.decay),
    )


# ---------------------------------------------------------------------------
# Bit allocation for fixed schedules
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class BitAllocation:
    """Slot-indexed bits of every vehicle for fixed schedules and ratios"""
    l_u: np.ndarray
    l_c: np.ndarray
    l_d: np.ndarray
    objective: float
    kkt_residual: float
    vehicles: Tuple[VehicleAllocation, ...]


def _scheduled_caps(a_u: np.ndarray, a_d: np.ndarray, trace: ChannelTrace) -> Tuple[np.ndarray, np.ndarray]:
    return a_u * trace.uplink_slot_caps, a_d * trace.downlink_slot_caps


def capacity_limits(
    a_u: np.ndarray, a_d: np.ndarray, trace: ChannelTrace, tasks: Sequence[VehicleTask]
) -> np.ndarray:
    """ρ̄_k, the largest offload ratio each vehicle's schedule can carry"""
    up, down = _scheduled_caps(a_u, a_d, trace)
    return np.array([
        min(1.0, max_carriable(up[k], down[k], task.output_ratio) / task.input_bits)
        for k, task in enumerate(tasks)
    ])


def solve_bit_allocation(
    a_u: np.ndarray,
    a_d: np.ndarray,
    rho: np.ndarray,
    trace: ChannelTrace,
    tasks: Sequence[VehicleTask],
    cfg: ScenarioConfig,
    solver_cfg: Optional[SolverConfig] = None,
) -> BitAllocation:
    """
    Minimum uplink energy moving ρ_k·L_k bits per vehicle on fixed schedules.

    Raises InfeasibleAllocation when a vehicle's schedule cannot carry its
    share through the uplink/compute/downlink chain.
    """
    solver_cfg = solver_cfg or SolverConfig()
    up, down = _scheduled_caps(a_u, a_d, trace)
    vehicles = []
    for k, task in enumerate(tasks):
        vehicles.append(allocate_vehicle(
            trace.uplink_slot_gains[k], up[k], down[k], float(rho[k]) * task.input_bits,
            task.output_ratio, cfg.frame_duration, cfg, vehicle=k,
        ))

    kkt = max(v.kkt_residual for v in vehicles)
    if kkt > solver_cfg.kkt_tolerance:
        logger.info("Bit allocation KKT residual %.3g above tolerance %.3g", kkt, solver_cfg.kkt_tolerance)
    return BitAllocation(
        l_u=np.vstack([v.uplink for v in vehicles]),
        l_c=np.vstack([v.compute for v in vehicles]),
        l_d=np.vstack([v.downlink for v in vehicles]),
        objective=float(sum(v.objective for v in vehicles)),
        kkt_residual=kkt,
        vehicles=tuple(vehicles),
    )


# ---------------------------------------------------------------------------
# Schedules used by recovery and baselines
# ---------------------------------------------------------------------------


def mirrored_downlink(a_u: np.ndarray) -> np.ndarray:
    """Give each uplink slot's owner the downlink two frames later"""
    return np.array(a_u, dtype=np.int8, copy=True)


def round_robin_schedule(active: np.ndarray) -> np.ndarray:
    """Cycle over vehicles in index order, skipping those not yet arrived"""
    K, S = active.shape
    a = np.zeros((K, S), dtype=np.int8)
    upcoming = 0
    for i in range(S):
        order = [(upcoming + step) % K for step in range(K)]
        chosen = next((k for k in order if active[k, i]), None)
        if chosen is None:
            a[0, i] = 1
            continue
        a[chosen, i] = 1
        upcoming = (chosen + 1) % K
    return a


def channel_greedy_schedule(caps: np.ndarray, active: np.ndarray) -> np.ndarray:
    """Proportional-fair: the vehicle whose cap is highest relative to its own mean"""
    K, _ = caps.shape
    counts = np.maximum(active.sum(axis=1), 1)
    mean = np.where(active, caps, 0.0).sum(axis=1) / counts
    score = np.where(active & (caps > 0), caps / np.where(mean > 0, mean, 1.0)[:, None], -np.inf)
    return _one_hot(np.argmax(score, axis=0), K)


def time_share_schedule(
    trace: ChannelTrace, tasks: Sequence[VehicleTask], cfg: ScenarioConfig, solver_cfg: SolverConfig
) -> np.ndarray:
    """
    Round the Δ/K time-sharing solution: each slot goes to the vehicle that
    sends the largest fraction of its time-shared cap there.
    """
    K = len(tasks)
    share = cfg.frame_duration / K
    gains = trace.uplink_slot_gains
    up = np.where(trace.uplink_slot_active, rate_cap(gains, cfg.vehicle_max_power, share, cfg), 0.0)
    down = np.where(
        trace.downlink_slot_active, rate_cap(trace.downlink_slot_gains, cfg.rsu_power, share, cfg), 0.0
    )
    load = np.zeros_like(up)
    for k, task in enumerate(tasks):
        _, allocation, _ = best_offload(
            task, gains[k], up[k], down[k], share, cfg, solver_cfg.recovery_tolerance, vehicle=k
        )
        load[k] = np.divide(allocation.uplink, up[k], out=np.zeros_like(up[k]), where=up[k] > 0)
    # slots nobody loads keep the channel-greedy owner
    fallback = np.argmax(channel_greedy_schedule(trace.uplink_slot_caps, trace.uplink_slot_active), axis=0)
    owner = np.where(load.max(axis=0) > 0, np.argmax(load, axis=0), fallback)
    return _one_hot(owner, K)


# ---------------------------------------------------------------------------
# Algorithm
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class _Candidate:
    a_u: np.ndarray
    a_d: np.ndarray
    rho: np.ndarray
    vehicles: Tuple[VehicleAllocation, ...]
    value: float

    def plan(self) -> PrimalPlan:
        return PrimalPlan.from_slots(
            np.vstack([v.uplink for v in self.vehicles]),
            np.vstack([v.compute for v in self.vehicles]),
            np.vstack([v.downlink for v in self.vehicles]),
            self.a_u,
            self.a_d,
            self.rho,
        )


@dataclass
class SolveReport:
    """Outcome of one run of the dual ascent plus recovery"""
    plan: PrimalPlan
    dual_history: List[float]
    primal_history: List[float]
    feasibility_residuals: Dict[str, float]
    iterations_used: int
    wall_time: float
    dual_bound: float
    primal_value: float
    gap: float
    breakdown: EnergyBreakdown
    kkt_residual: float
    duals: DualState
    candidates_evaluated: int = 0


def _solve_schedule(
    a_u: np.ndarray,
    a_d: np.ndarray,
    trace: ChannelTrace,
    tasks: Sequence[VehicleTask],
    cfg: ScenarioConfig,
    solver_cfg: SolverConfig,
) -> _Candidate:
    """Per-vehicle ρ search on frozen schedules"""
    up, down = _scheduled_caps(a_u, a_d, trace)
    rho, vehicles, value = [], [], 0.0
    for k, task in enumerate(tasks):
        r, allocation, energy = best_offload(
            task, trace.uplink_slot_gains[k], up[k], down[k], cfg.frame_duration, cfg,
            solver_cfg.recovery_tolerance, vehicle=k,
        )
        rho.append(r)
        vehicles.append(allocation)
        value += energy
    return _Candidate(a_u, a_d, np.array(rho), tuple(vehicles), value)


def _schedule_energy(
    a_u: np.ndarray,
    a_d: np.ndarray,
    rho: np.ndarray,
    trace: ChannelTrace,
    tasks: Sequence[VehicleTask],
    cfg: ScenarioConfig,
    solver_cfg: SolverConfig,
) -> float:
    """Energy of the iterate's schedules with ρ clipped to what they can carry"""
    L, C, gamma, _ = _task_arrays(tasks)
    rho = np.minimum(rho, capacity_limits(a_u, a_d, trace, tasks))
    allocation = solve_bit_allocation(a_u, a_d, rho, trace, tasks, cfg, solver_cfg)
    local = np.sum(local_energy((1.0 - rho) * L, C, gamma, cfg.mission_time))
    return allocation.objective + float(local)


def _converged(history: List[float], target: float, solver_cfg: SolverConfig) -> bool:
    window = solver_cfg.convergence_window
    if len(history) < max(solver_cfg.min_iterations, window + 1):
        return False
    best = np.maximum.accumulate(history)
    now, before = best[-1], best[-1 - window]
    if now <= history[0]:
        return False
    if target - now <= solver_cfg.dual_tolerance * abs(target):
        return True
    return abs(now - before) <= solver_cfg.dual_tolerance * max(abs(now), 1e-12)


def _recover(
    final: Tuple[np.ndarray, np.ndarray],
    best_iterate: Optional[Tuple[np.ndarray, np.ndarray]],
    trace: ChannelTrace,
    tasks: Sequence[VehicleTask],
    cfg: ScenarioConfig,
    solver_cfg: SolverConfig,
) -> Tuple[_Candidate, int]:
    K = len(tasks)
    schedules = [final, (final[0], mirrored_downlink(final[0]))]
    if best_iterate is not None:
        schedules += [best_iterate, (best_iterate[0], mirrored_downlink(best_iterate[0]))]
    for a_u in (
        round_robin_schedule(trace.uplink_slot_active),
        channel_greedy_schedule(trace.uplink_slot_caps, trace.uplink_slot_active),
        time_share_schedule(trace, tasks, cfg, solver_cfg),
    ):
        schedules.append((a_u, mirrored_downlink(a_u)))

    seen = set()
    best: Optional[_Candidate] = None
    evaluated = 0
    for a_u, a_d in schedules:
        key = a_u.tobytes() + a_d.tobytes()
        if key in seen:
            continue
        seen.add(key)
        candidate = _solve_schedule(a_u, a_d, trace, tasks, cfg, solver_cfg)
        evaluated += 1
        if best is None or candidate.value < best.value:
            best = candidate

    S = cfg.num_slots
    if K > 1 and S * (K - 1) <= solver_cfg.local_search_limit:
        improved = True
        while improved:
            improved = False
            for i in range(S):
                owner = int(np.argmax(best.a_u[:, i]))
                for k in range(K):
                    if k == owner:
                        continue
                    a_u = best.a_u.copy()
                    a_u[:, i] = 0
                    a_u[k, i] = 1
                    key = a_u.tobytes() + a_u.tobytes()
                    if key in seen:
                        continue
                    seen.add(key)
                    candidate = _solve_schedule(a_u, mirrored_downlink(a_u), trace, tasks, cfg, solver_cfg)
                    evaluated += 1
                    if candidate.value < best.value * (1.0 - 1e-12):
                        best = candidate
                        improved = True
                        owner = k
    return best, evaluated


def certificate_duals(plan_rho: np.ndarray, tasks: Sequence[VehicleTask], cfg: ScenarioConfig) -> DualState:
    """Multipliers implied by a plan: u_u at the local marginal cost, all else 0"""
    L, C, gamma, _ = _task_arrays(tasks)
    duals = DualState.zeros(len(tasks), cfg.num_slots)
    marginal = np.asarray(local_marginal_cost((1.0 - plan_rho) * L, C, gamma, cfg.mission_time), dtype=float)
    return replace(duals, u_u=marginal)


def certificate_bound(
    plan_rho: np.ndarray, trace: ChannelTrace, tasks: Sequence[VehicleTask], cfg: ScenarioConfig
) -> float:
    """Best g(Y) along θ·u_u of the implied multipliers, θ in [0, 2]"""
    base = certificate_duals(plan_rho, tasks, cfg)

    def negative(theta: float) -> float:
        return -dual_value(replace(base, u_u=theta * base.u_u), trace, tasks, cfg)

    result = minimize_scalar(negative, bounds=(0.0, 2.0), method="bounded", options={"xatol": 1e-6})
    return max(-negative(1.0), -float(result.fun))


def run_algorithm1(
    cfg: ScenarioConfig,
    tasks: Sequence[VehicleTask],
    trace: ChannelTrace,
    solver_cfg: Optional[SolverConfig] = None,
) -> SolveReport:
    """Dual ascent until the best dual value stalls, then primal recovery"""
    solver_cfg = solver_cfg or SolverConfig()
    validate_instance(cfg, tasks, trace)
    started = time.perf_counter()
    L, C, gamma, _ = _task_arrays(tasks)

    duals = DualState.initial(tasks, cfg, solver_cfg)
    l_u = np.minimum(L[:, None] / cfg.num_slots, trace.uplink_slot_caps)
    dual_history: List[float] = []
    primal_history: List[float] = []
    best_primal = math.inf
    best_schedules: Optional[Tuple[np.ndarray, np.ndarray]] = None
    schedules = None

    # step target: nothing is worse than computing on board or round-robin access
    a_rr = round_robin_schedule(trace.uplink_slot_active)
    target = min(
        float(np.sum(local_energy(L, C, gamma, cfg.mission_time))),
        _solve_schedule(a_rr, mirrored_downlink(a_rr), trace, tasks, cfg, solver_cfg).value,
    )
    stalled = 0

    for z in range(1, solver_cfg.max_iterations + 1):
        schedules = optimal_schedule(duals, l_u, trace, cfg, solver_cfg.tie_break)
        iterate = lagrangian_iterate(duals, *schedules, trace, tasks, cfg)
        relaxed, dual = relaxed_minimiser(duals, trace, tasks, cfg)
        stalled = stalled + 1 if dual_history and dual <= max(dual_history) else 0
        dual_history.append(dual)

        primal = _schedule_energy(*schedules, iterate.rho, trace, tasks, cfg, solver_cfg)
        primal_history.append(primal)
        if primal < best_primal:
            best_primal, best_schedules = primal, schedules
        target = min(target, primal)

        logger.debug("Iteration %d: dual %.6g J, primal %.6g J", z, dual, primal)
        if stalled >= solver_cfg.convergence_window:
            duals, stalled = replace(duals, agility=duals.agility / 2.0), 0
        duals = update_duals(duals, relaxed, trace, tasks, cfg, dual=dual, target=target)
        l_u = iterate.l_u
        if _converged(dual_history, target, solver_cfg):
            break

    best, evaluated = _recover(schedules, best_schedules, trace, tasks, cfg, solver_cfg)
    plan = best.plan()
    breakdown = evaluate_total_energy(plan, trace, tasks, cfg)

    certificate = certificate_bound(best.rho, trace, tasks, cfg)
    dual_bound = max(max(dual_history), certificate)
    gap = breakdown.total - dual_bound
    wall_time = time.perf_counter() - started
    logger.info(
        "Solved %d vehicles in %d iterations: %.6g J (dual bound %.6g J, gap %.3g J, %d candidates)",
        len(tasks), len(dual_history), breakdown.total, dual_bound, gap, evaluated,
    )

    return SolveReport(
        plan=plan,
        dual_history=dual_history,
        primal_history=primal_history,
        feasibility_residuals=plan.feasibility_residuals(trace, tasks, cfg),
        iterations_used=len(dual_history),
        wall_time=wall_time,
        dual_bound=dual_bound,
        primal_value=breakdown.total,
        gap=gap,
        breakdown=breakdown,
        kkt_residual=max(v.kkt_residual for v in best.vehicles),
        duals=duals,
        candidates_evaluated=evaluated,
    )


def evaluate_total_energy(
    plan: PrimalPlan, trace: ChannelTrace, tasks: Sequence[VehicleTask], cfg: ScenarioConfig
) -> EnergyBreakdown:
    """Uplink plus local energy of a feasible plan"""
    plan.check_feasible(trace, tasks, cfg)
    L, C, gamma, _ = _task_arrays(tasks)
    comm = np.asarray(one_by_one_comm_energy(plan.a_u, plan.l_u, trace.gains, cfg)).sum(axis=1)
    local = np.asarray(local_energy((1.0 - plan.rho) * L, C, gamma, cfg.mission_time))
    return EnergyBreakdown.from_parts(comm, local)
