"""Rotary-wing propulsion power and battery bookkeeping."""
from __future__ import annotations

import math
from dataclasses import dataclass


@dataclass(frozen=True)
class EnergyParams:
    eta_i: float = 88.63  # multiplies the induced-power radical
    eta_b: float = 79.86  # multiplies the blade-profile term
    v_tip: float = 120.0
    v0: float = 4.03
    f0: float = 0.6
    rotor_solidity: float = 0.05
    air_density: float = 1.225
    rotor_disc_area: float = 0.503

    def __post_init__(self):
        for name, value in vars(self).items():
            if not value > 0:
                raise ValueError(f"{name} must be strictly positive, got {value}")


@dataclass(frozen=True)
class BatteryState:
    capacity_j: float
    level_j: float
    reserve_j: float

    @classmethod
    def full(cls, init_j: float, reserve_j: float) -> "BatteryState":
        return cls(init_j + reserve_j, init_j + reserve_j, reserve_j)


def induced_power(speed_mps: float, params: EnergyParams) -> float:
    ratio = speed_mps ** 2 / params.v0 ** 2
    return params.eta_i * math.sqrt(math.sqrt(1.0 + ratio ** 2 / 4.0) - ratio / 2.0)


def blade_power(speed_mps: float, params: EnergyParams) -> float:
    return params.eta_b * (1.0 + 3.0 * speed_mps ** 2 / params.v_tip ** 2)


def parasite_power(speed_mps: float, params: EnergyParams) -> float:
    p = params
    return 0.5 * p.f0 * p.air_density * p.rotor_solidity * p.rotor_disc_area * speed_mps ** 3


def propulsion_power(speed_mps: float, params: EnergyParams = EnergyParams()) -> float:
    """Flight power in watts at forward speed ``speed_mps``."""
    if speed_mps < 0:
        raise ValueError(f"speed must be non-negative, got {speed_mps}")
    return induced_power(speed_mps, params) + blade_power(speed_mps, params) + parasite_power(speed_mps, params)


def hover_power(params: EnergyParams = EnergyParams()) -> float:
    return params.eta_i + params.eta_b


def step_energy(speed_mps: float, dt_s: float, params: EnergyParams = EnergyParams()) -> float:
    """Energy in joules spent over one slot of ``dt_s`` seconds."""
    if not dt_s > 0:
        raise ValueError(f"slot duration must be positive, got {dt_s}")
    if speed_mps > 0:
        return propulsion_power(speed_mps, params) * dt_s
    if speed_mps < 0:
        raise ValueError(f"speed must be non-negative, got {speed_mps}")
    return hover_power(params) * dt_s


def battery_step(battery: BatteryState, energy_j: float) -> BatteryState:
    if energy_j < 0:
        raise ValueError("energy spent must be non-negative")
    return BatteryState(battery.capacity_j, battery.level_j - energy_j, battery.reserve_j)
