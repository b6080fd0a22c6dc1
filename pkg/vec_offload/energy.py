"""
Energy model of local execution and uplink transmission

Every function accepts scalars or numpy arrays and returns the same shape.
Energies are in joules, bits are bits, gains are linear power gains.
"""

import math
from dataclasses import dataclass
from typing import Union

import numpy as np

from .errors import EnergyModelError, EnergyOverflowError
from .models import ScenarioConfig

ArrayLike = Union[float, np.ndarray]

# Largest l/(B*width) accepted before 2^x is treated as an overflow
MAX_RATE_EXPONENT = 64.0
LN2 = math.log(2.0)


def _out(value: np.ndarray) -> ArrayLike:
    return float(value) if np.ndim(value) == 0 else value


@dataclass(frozen=True)
class EnergyBreakdown:
    """Per-vehicle communication and local energy of one plan"""
    comm_energy: np.ndarray
    local_energy: np.ndarray
    total: float

    @classmethod
    def from_parts(cls, comm: np.ndarray, local: np.ndarray) -> "EnergyBreakdown":
        comm = np.asarray(comm, dtype=float)
        local = np.asarray(local, dtype=float)
        return cls(comm_energy=comm, local_energy=local, total=float(comm.sum() + local.sum()))

    @property
    def per_vehicle(self) -> np.ndarray:
        return self.comm_energy + self.local_energy


def local_energy(l: ArrayLike, C: ArrayLike, gamma: ArrayLike, T: float) -> ArrayLike:
    """γ·C³·l³/T², the energy of computing l bits on board within T seconds"""
    l = np.asarray(l, dtype=float)
    return _out(np.asarray(gamma) * np.asarray(C) ** 3 * l ** 3 / T ** 2)


def local_marginal_cost(l: ArrayLike, C: ArrayLike, gamma: ArrayLike, T: float) -> ArrayLike:
    """d/dl of local_energy, J/bit"""
    l = np.asarray(l, dtype=float)
    return _out(3.0 * np.asarray(gamma) * np.asarray(C) ** 3 * l ** 2 / T ** 2)


def rate_cap(gain: ArrayLike, power: float, slot_seconds: float, cfg: ScenarioConfig) -> ArrayLike:
    """Bits a slot carries at full power: B·τ·log2(1 + P·g/(N0·B))"""
    gain = np.asarray(gain, dtype=float)
    snr = power * gain / cfg.noise_power
    return _out(cfg.bandwidth * slot_seconds * np.log1p(snr) / LN2)


def _rate_exponent(l: np.ndarray, slot_seconds: float, cfg: ScenarioConfig) -> np.ndarray:
    exponent = l / (cfg.bandwidth * slot_seconds)
    worst = float(np.max(exponent)) if exponent.size else 0.0
    if worst > MAX_RATE_EXPONENT:
        raise EnergyOverflowError(worst, MAX_RATE_EXPONENT)
    return exponent


def comm_energy(l: ArrayLike, gain: ArrayLike, slot_seconds: float, cfg: ScenarioConfig) -> ArrayLike:
    """(N0·B·τ/g)·(2^(l/(B·τ)) − 1), the energy of sending l bits in a slot of τ seconds"""
    l, gain = np.broadcast_arrays(np.asarray(l, dtype=float), np.asarray(gain, dtype=float))
    sending = l > 0
    if np.any(sending & (gain <= 0)):
        raise EnergyModelError("cannot send bits over a channel with zero gain")

    exponent = _rate_exponent(l, slot_seconds, cfg)
    safe_gain = np.where(sending, gain, 1.0)
    energy = cfg.noise_power * slot_seconds / safe_gain * np.expm1(exponent * LN2)
    return _out(np.where(sending, energy, 0.0))


def one_by_one_comm_energy(a: ArrayLike, l: ArrayLike, gain: ArrayLike, cfg: ScenarioConfig) -> ArrayLike:
    """Uplink energy when the vehicle owns the whole frame (a = 1) or stays mute (a = 0)"""
    a, l, gain = np.broadcast_arrays(
        np.asarray(a, dtype=float), np.asarray(l, dtype=float), np.asarray(gain, dtype=float)
    )
    scheduled = a != 0
    energy = comm_energy(np.where(scheduled, l, 0.0), gain, cfg.frame_duration, cfg)
    return _out(a * np.asarray(energy))


def orthogonal_comm_energy(l: ArrayLike, gain: ArrayLike, cfg: ScenarioConfig, K: int) -> ArrayLike:
    """Uplink energy in a slot of δ = Δ/K seconds"""
    if K < 1:
        raise ValueError("orthogonal access needs at least one vehicle")
    return comm_energy(l, gain, cfg.frame_duration / K, cfg)


def marginal_comm_cost(l: ArrayLike, gain: ArrayLike, slot_seconds: float, cfg: ScenarioConfig) -> ArrayLike:
    """dE/dl = (N0·ln2/g)·2^(l/(B·τ)), J/bit"""
    l = np.asarray(l, dtype=float)
    exponent = _rate_exponent(l, slot_seconds, cfg)
    return _out(cfg.noise_psd * LN2 / np.asarray(gain, dtype=float) * np.exp2(exponent))


def implied_transmit_power(l: ArrayLike, gain: ArrayLike, slot_seconds: float, cfg: ScenarioConfig) -> ArrayLike:
    """Transmit power N0·B·(2^(l/(B·τ)) − 1)/g needed to push l bits through the slot"""
    l = np.asarray(l, dtype=float)
    exponent = _rate_exponent(l, slot_seconds, cfg)
    return _out(cfg.noise_power * np.expm1(exponent * LN2) / np.asarray(gain, dtype=float))


def uplink_score(l: ArrayLike, gain: ArrayLike, lam_u: ArrayLike, cfg: ScenarioConfig) -> ArrayLike:
    """F^u: uplink energy minus the rate credit λ_u·log2(1 + P_max·g/(N0·B))"""
    energy = np.asarray(one_by_one_comm_energy(1.0, l, gain, cfg))
    credit = np.asarray(rate_cap(gain, cfg.vehicle_max_power, cfg.frame_duration, cfg)) / cfg.slot_bits
    return _out(energy - np.asarray(lam_u, dtype=float) * credit)


def downlink_score(lam_d: ArrayLike, gain: ArrayLike, cfg: ScenarioConfig) -> ArrayLike:
    """F^d = −λ_d·log2(1 + P_RSU·g/(N0·B)), using the gain two frames after the uplink"""
    credit = np.asarray(rate_cap(gain, cfg.rsu_power, cfg.frame_duration, cfg)) / cfg.slot_bits
    return _out(-np.asarray(lam_d, dtype=float) * credit)
