"""
Capped water-filling over frames and the uplink -> compute -> downlink pipeline

For one vehicle with a fixed set of usable slots, sending l_i bits in slot i
costs (N0·B·τ/g_i)(2^(l_i/W) - 1) with W = B·τ. Working in log2 units the
optimal allocation at water level w is

    l_i = clip(W·(w + β_i), 0, cap_i),   β_i = log2(g_i / (N0·ln2))

Prefix lower bounds on the cumulative uplink (so the downlink can still
deliver κ·total by the last frame) turn the single level into a
non-increasing staircase of levels.
"""

import logging
import math
from dataclasses import dataclass
from typing import Callable, Tuple

import numpy as np
from scipy.optimize import brentq, minimize_scalar

from .energy import comm_energy, local_energy
from .errors import InfeasibleAllocation
from .models import ScenarioConfig, VehicleTask

logger = logging.getLogger(__name__)

# Relative slack on bit totals, absorbs round-off in cumulative sums
BIT_TOLERANCE = 1e-12
FEASIBILITY_SLACK = 1e-9
# Prefix bounds may be missed by this fraction of the total in the staircase
PREFIX_SLACK = 1e-11
LEVEL_XTOL = 1e-13


def log_gain_offsets(gains: np.ndarray, usable: np.ndarray, cfg: ScenarioConfig) -> np.ndarray:
    """β_i = log2(g_i/(N0·ln2)) on usable slots, 0 elsewhere"""
    gains = np.asarray(gains, dtype=float)
    safe = np.where(usable & (gains > 0), gains, 1.0)
    return np.where(usable, np.log2(safe / (cfg.noise_psd * math.log(2.0))), 0.0)


def _fill(level: float, beta: np.ndarray, caps: np.ndarray, width: float) -> np.ndarray:
    return np.where(caps > 0, np.clip(width * (level + beta), 0.0, caps), 0.0)


def capped_waterfill(beta: np.ndarray, caps: np.ndarray, width: float, total: float) -> Tuple[np.ndarray, float]:
    """
    Spread total bits over the slots at one water level, honoring the caps.

    Returns the allocation and its level (-inf when nothing is sent).
    """
    beta = np.asarray(beta, dtype=float)
    caps = np.asarray(caps, dtype=float)
    usable = caps > 0
    if total <= 0 or not usable.any():
        return np.zeros_like(caps), -math.inf

    lo = float(np.min(-beta[usable]))
    hi = float(np.max(caps[usable] / width - beta[usable]))
    full = np.where(usable, caps, 0.0)

    # same summation as the bracket below, so saturation and brentq agree
    capacity = float(_fill(hi, beta, caps, width).sum())
    if total > capacity * (1.0 + FEASIBILITY_SLACK):
        raise ValueError(f"{total:.6g} bits exceed the {capacity:.6g} bits the slots can carry")
    if total >= capacity * (1.0 - BIT_TOLERANCE):
        return full, hi

    def excess(w: float) -> float:
        return float(_fill(w, beta, caps, width).sum()) - total

    if excess(hi) <= 0.0:
        return full, hi
    level = brentq(excess, lo, hi, xtol=LEVEL_XTOL)

    # polish: the level is linear in the total on the interior set
    units = width * (level + beta)
    saturated = usable & (units >= caps)
    interior = usable & (units > 0) & ~saturated
    if interior.any():
        level = ((total - caps[saturated].sum()) / width - beta[interior].sum()) / interior.sum()

    bits = _fill(level, beta, caps, width)
    free = usable & (bits > 0) & (bits < caps)
    if free.any():
        bits[free] = np.minimum(bits[free] + (total - bits.sum()) / free.sum(), caps[free])
    return bits, float(level)


def pipeline_lower_bounds(total: float, down_caps: np.ndarray, kappa: float) -> np.ndarray:
    """U(m) >= total - (downlink capacity after slot m)/κ for every slot m"""
    down_caps = np.asarray(down_caps, dtype=float)
    tail_after = down_caps.sum() - np.cumsum(down_caps)
    return total - tail_after / kappa


def max_carriable(up_caps: np.ndarray, down_caps: np.ndarray, kappa: float) -> float:
    """Largest total the pipeline can carry with these uplink and downlink slots"""
    up_caps = np.asarray(up_caps, dtype=float)
    down_caps = np.asarray(down_caps, dtype=float)
    tail_after = down_caps.sum() - np.cumsum(down_caps)
    candidates = np.cumsum(up_caps) + tail_after / kappa
    return float(max(0.0, min(down_caps.sum() / kappa, candidates.min())))


def staircase_allocation(
    beta: np.ndarray, caps: np.ndarray, width: float, total: float, lower: np.ndarray
) -> Tuple[np.ndarray, np.ndarray]:
    """
    Minimum-energy allocation of total bits subject to cumulative lower bounds.

    Each block is the prefix that needs the highest water level; it is filled
    at that level and the remainder is solved the same way.
    Returns the bits and the per-slot levels (non-increasing).
    """
    beta = np.asarray(beta, dtype=float)
    caps = np.asarray(caps, dtype=float)
    lower = np.asarray(lower, dtype=float)
    S = caps.size
    tol = BIT_TOLERANCE * max(total, 1.0)
    slack_bits = max(PREFIX_SLACK * total, 4.0 * width * LEVEL_XTOL * S)

    bits, level = capped_waterfill(beta, caps, width, total)
    if np.all(np.cumsum(bits) >= lower - slack_bits):
        return bits, np.full(S, level)

    bits = np.zeros(S)
    levels = np.full(S, -math.inf)
    start, carried = 0, 0.0
    while start < S and total - carried > tol:
        b, c = beta[start:], caps[start:]
        capacity = np.cumsum(np.where(c > 0, c, 0.0))
        need = lower[start:] - carried
        need[-1] = total - carried
        need = np.minimum(need, capacity)

        # lowest level at which every prefix carries its share; the half-slack
        # offset keeps a sign change when a prefix must be saturated
        def slack(w: float) -> float:
            return float(np.min(np.cumsum(_fill(w, b, c, width)) - need)) + 0.5 * slack_bits

        usable = c > 0
        if not usable.any():
            break
        lo = float(np.min(-b[usable]))
        hi = float(np.max(c[usable] / width - b[usable]))
        if slack(lo) >= 0:
            w_star = lo
        elif slack(hi) <= 0:
            w_star = hi
        else:
            w_star = brentq(slack, lo, hi, xtol=LEVEL_XTOL)

        gaps = np.cumsum(_fill(w_star, b, c, width)) - need
        tight = np.flatnonzero(gaps <= slack_bits)
        end = int(tight[-1]) if tight.size else S - start - 1

        block_bits, block_level = capped_waterfill(b[: end + 1], c[: end + 1], width, float(need[end]))
        bits[start : start + end + 1] = block_bits
        levels[start : start + end + 1] = block_level
        carried += float(block_bits.sum())
        start += end + 1

    return bits, levels


def greedy_pipeline(bits: np.ndarray, down_caps: np.ndarray, kappa: float) -> Tuple[np.ndarray, np.ndarray]:
    """
    Compute every uploaded bit in the next frame and download as early as the
    caps and κ·(cumulative compute) allow. Returns per-slot (compute, downlink).
    """
    bits = np.asarray(bits, dtype=float)
    down_caps = np.asarray(down_caps, dtype=float)
    uploaded = np.cumsum(bits)
    cap_cum = np.cumsum(down_caps)
    # D(m) = min(κU(m), D(m-1) + cap(m)) unrolled
    delivered = cap_cum + np.minimum(0.0, np.minimum.accumulate(kappa * uploaded - cap_cum))
    downlink = np.clip(np.diff(delivered, prepend=0.0), 0.0, down_caps)
    return bits.copy(), downlink


def kkt_residual(
    bits: np.ndarray,
    levels: np.ndarray,
    beta: np.ndarray,
    caps: np.ndarray,
    width: float,
    total: float,
    lower: np.ndarray,
) -> float:
    """Largest violation of the optimality conditions of a staircase allocation"""
    bits = np.asarray(bits, dtype=float)
    levels = np.asarray(levels, dtype=float)
    scale = max(total, 1.0)
    tiny = BIT_TOLERANCE * scale
    usable = caps > 0
    finite = np.isfinite(levels)
    target = np.where(finite, levels + beta, -math.inf)
    cumulative = np.cumsum(bits)

    residuals = [
        abs(cumulative[-1] - total) / scale if bits.size else total / scale,
        float(np.max(np.maximum(0.0, lower - cumulative), initial=0.0)) / scale,
        float(np.max(np.maximum(0.0, bits - np.where(usable, caps, 0.0)), initial=0.0)) / scale,
        float(np.max(np.maximum(0.0, -bits), initial=0.0)) / scale,
    ]

    at_zero = usable & (bits <= tiny)
    at_cap = usable & ~at_zero & (bits >= caps - tiny)
    interior = usable & ~at_zero & ~at_cap
    if np.any(interior & ~finite):
        return math.inf
    units = bits / width
    residuals.append(float(np.max(np.abs(units - target)[interior], initial=0.0)))
    residuals.append(float(np.max(np.maximum(0.0, target)[at_zero & finite], initial=0.0)))
    residuals.append(float(np.max(np.maximum(0.0, caps / width - target)[at_cap & finite], initial=0.0)))

    if bits.size > 1:
        both = finite[:-1] & finite[1:]
        rises = np.zeros(bits.size - 1)
        rises[both] = levels[1:][both] - levels[:-1][both]
        residuals.append(float(np.max(np.maximum(0.0, rises[both]), initial=0.0)))
        drops = finite[:-1] & ((~finite[1:]) | (rises < -1e-12))
        residuals.append(float(np.max(np.abs(cumulative[:-1] - lower[:-1])[drops], initial=0.0)) / scale)

    return max(residuals)


@dataclass(frozen=True)
class VehicleAllocation:
    """Per-slot uplink, compute and downlink bits of one vehicle"""
    uplink: np.ndarray
    compute: np.ndarray
    downlink: np.ndarray
    levels: np.ndarray
    total: float
    objective: float
    kkt_residual: float


def allocate_vehicle(
    gains: np.ndarray,
    up_caps: np.ndarray,
    down_caps: np.ndarray,
    total: float,
    kappa: float,
    slot_seconds: float,
    cfg: ScenarioConfig,
    vehicle: int = 0,
) -> VehicleAllocation:
    """Minimum uplink energy that moves total bits through the pipeline"""
    up_caps = np.asarray(up_caps, dtype=float)
    down_caps = np.asarray(down_caps, dtype=float)
    S = up_caps.size

    carriable = max_carriable(up_caps, down_caps, kappa)
    if total > carriable * (1.0 + FEASIBILITY_SLACK) + BIT_TOLERANCE:
        raise InfeasibleAllocation(vehicle, total, carriable)
    total = min(total, carriable)

    if total <= 0:
        zeros = np.zeros(S)
        return VehicleAllocation(zeros, zeros.copy(), zeros.copy(), np.full(S, -math.inf), 0.0, 0.0, 0.0)

    width = cfg.bandwidth * slot_seconds
    beta = log_gain_offsets(gains, up_caps > 0, cfg)
    lower = pipeline_lower_bounds(total, down_caps, kappa)
    bits, levels = staircase_allocation(beta, up_caps, width, total, lower)
    compute, downlink = greedy_pipeline(bits, down_caps, kappa)

    return VehicleAllocation(
        uplink=bits,
        compute=compute,
        downlink=downlink,
        levels=levels,
        total=total,
        objective=float(np.sum(comm_energy(bits, gains, slot_seconds, cfg))),
        kkt_residual=kkt_residual(bits, levels, beta, up_caps, width, total, lower),
    )


def optimize_offload_ratio(
    cost_fn: Callable[[float], float],
    local_fn: Callable[[float], float],
    rho_max: float,
    tol: float,
) -> Tuple[float, float]:
    """
    Minimise cost_fn(ρ) + local_fn(ρ) over [0, rho_max].

    Bounded Brent search plus both endpoints, so ρ = 0 is always a candidate.
    """
    def value(rho: float) -> float:
        return cost_fn(rho) + local_fn(rho)

    best = (0.0, value(0.0))
    if rho_max <= 0:
        return best

    result = minimize_scalar(value, bounds=(0.0, rho_max), method="bounded", options={"xatol": tol})
    for rho, v in ((rho_max, value(rho_max)), (float(result.x), float(result.fun))):
        if v < best[1]:
            best = (rho, v)
    return best


def best_offload(
    task: VehicleTask,
    gains: np.ndarray,
    up_caps: np.ndarray,
    down_caps: np.ndarray,
    slot_seconds: float,
    cfg: ScenarioConfig,
    tol: float,
    vehicle: int = 0,
) -> Tuple[float, VehicleAllocation, float]:
    """Offload ratio, allocation and total energy of one vehicle on fixed slots"""
    L = task.input_bits
    kappa = task.output_ratio
    rho_max = min(1.0, max_carriable(up_caps, down_caps, kappa) / L)
    solved = {}

    def allocation(rho: float) -> VehicleAllocation:
        if rho not in solved:
            solved[rho] = allocate_vehicle(
                gains, up_caps, down_caps, min(rho, rho_max) * L, kappa, slot_seconds, cfg, vehicle
            )
        return solved[rho]

    def local(rho: float) -> float:
        return local_energy((1.0 - rho) * L, task.cycles_per_bit, task.switched_capacitance, cfg.mission_time)

    rho, value = optimize_offload_ratio(lambda r: allocation(r).objective, local, rho_max, tol)
    logger.debug("Vehicle %d: rho=%.6f of max %.6f, energy %.6g J", vehicle, rho, rho_max, value)
    return rho, allocation(rho), value
