"""Household baseline demand and the attacker-controllable water-heater load."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .feeder import Feeder

MINUTES_PER_DAY = 1440
SINGLE_HEATER_W = 4494.0

DEMAND_DEFAULTS = {
    "household_base_w": 6000.0,
    "morning_peak_w": 9000.0,
    "evening_peak_w": 14000.0,
    "morning_hour": 7.5,
    "evening_hour": 19.0,
    "peak_width_h": 2.0,
    "noise_sigma_w": 1200.0,
    "noise_phi": 0.9,
    "power_factor": 0.95,
}


@dataclass(frozen=True)
class DemandProfile:
    p: np.ndarray  # (T, n_bus) watts
    q: np.ndarray  # (T, n_bus) var
    seed: int
    calibration_scale: float

    @property
    def steps(self) -> int:
        return self.p.shape[0]

    def complex_power(self) -> np.ndarray:
        return self.p + 1j * self.q


def diurnal_curve(minutes: np.ndarray, params: dict) -> np.ndarray:
    """Per-household watts: flat base plus morning and evening Gaussian peaks."""
    hours = minutes / 60.0
    w = params["peak_width_h"]
    morning = params["morning_peak_w"] * np.exp(-0.5 * ((hours - params["morning_hour"]) / w) ** 2)
    evening = params["evening_peak_w"] * np.exp(-0.5 * ((hours - params["evening_hour"]) / w) ** 2)
    return params["household_base_w"] + morning + evening


def generate_profile(feeder: Feeder, seed: int, scale: float = 1.0,
                     steps: int = MINUTES_PER_DAY) -> DemandProfile:
    """Deterministic baseline demand for every bus of ``feeder``.

    Each bus gets ``households`` times the diurnal curve plus its own AR(1)
    fluctuation, floored at zero, then multiplied by ``scale``.
    """
    if not scale > 0:
        raise ValueError("scale must be positive")
    params = {**DEMAND_DEFAULTS, **feeder.demand}
    hh = np.array([b.households for b in feeder.buses], dtype=float)
    base = diurnal_curve(np.arange(steps, dtype=float), params)[:, None] * hh[None, :]

    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))
    z = rng.standard_normal((steps, feeder.n_bus))
    phi = params["noise_phi"]
    sigma = params["noise_sigma_w"] * hh
    noise = np.empty_like(z)
    noise[0] = sigma * z[0]
    innov = sigma * math.sqrt(1.0 - phi * phi)
    for t in range(1, steps):
        noise[t] = phi * noise[t - 1] + innov * z[t]

    p = np.maximum(base + noise, 0.0) * scale
    q = p * math.tan(math.acos(params["power_factor"]))
    return DemandProfile(p=p, q=q, seed=seed, calibration_scale=scale)


def export_profile_csv(profile: DemandProfile, feeder: Feeder, path: str | Path) -> None:
    ids = [b.id for b in feeder.buses]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["minute", "bus_id", "p_watts", "q_vars"])
        for t in range(profile.steps):
            for k, bus_id in enumerate(ids):
                w.writerow([t, bus_id, repr(float(profile.p[t, k])), repr(float(profile.q[t, k]))])


def import_profile_csv(feeder: Feeder, path: str | Path, seed: int = 0,
                       scale: float = 1.0) -> DemandProfile:
    rows = list(csv.DictReader(open(path, newline="", encoding="utf-8")))
    steps = 1 + max(int(r["minute"]) for r in rows)
    p = np.zeros((steps, feeder.n_bus))
    q = np.zeros_like(p)
    for r in rows:
        t, k = int(r["minute"]), feeder.bus_index(int(r["bus_id"]))
        p[t, k] = float(r["p_watts"])
        q[t, k] = float(r["q_vars"])
    return DemandProfile(p=p, q=q, seed=seed, calibration_scale=scale)


# -- water heater -----------------------------------------------------------

@dataclass(frozen=True)
class HeaterParams:
    mass: float = 172.2  # kg
    heat_capacity: float = 4181.3  # J/(kg K)
    h: float = 0.9142  # J/(m^2 K s)
    area: float = 149.7
    t_ambient: float = 293.15  # K
    t_initial: float = 293.15  # K
    cutoff: float = 336.0  # K

    @property
    def thermal_mass(self) -> float:
        return self.mass * self.heat_capacity

    @property
    def loss_coefficient(self) -> float:
        return self.h * self.area


@dataclass(frozen=True)
class WaterHeaterState:
    """Thermal state of one node's heaters, lumped into a single body.

    ``units`` is the number of single heaters the node stands for; mass and
    surface scale with it so the temperature trajectory matches one heater
    driven at ``power / units``.
    """

    thermal_energy: float
    rated_power: float = SINGLE_HEATER_W
    units: float = 1.0
    params: HeaterParams = HeaterParams()

    @classmethod
    def initial(cls, rated_power: float = SINGLE_HEATER_W, units: float | None = None,
                params: HeaterParams = HeaterParams()) -> WaterHeaterState:
        units = rated_power / SINGLE_HEATER_W if units is None else units
        return cls(units * params.thermal_mass * params.t_initial, rated_power, units, params)

    @property
    def temperature(self) -> float:
        return self.thermal_energy / (self.units * self.params.thermal_mass)


def heater_energy_step(q, power, dt: float, params: HeaterParams, units=1.0):
    """Exact constant-power solution of dQ/dt = P - hA (Q/(MC) - T_a) over ``dt``.

    Elementwise over arrays. ``power`` is the effective power (cutoff already
    applied).
    """
    mc = units * params.thermal_mass
    ha = units * params.loss_coefficient
    q_inf = mc * (power / ha + params.t_ambient)
    return q_inf + (q - q_inf) * np.exp(-ha * dt / mc)


def heater_step(state: WaterHeaterState, commanded_power: float, dt: float) -> WaterHeaterState:
    if commanded_power < 0:
        raise ValueError("commanded_power must be non-negative")
    if commanded_power > state.rated_power * (1 + 1e-12):
        raise ValueError("commanded_power exceeds rated_power")
    if dt <= 0:
        raise ValueError("dt must be positive")
    p = 0.0 if state.temperature >= state.params.cutoff else commanded_power
    q = heater_energy_step(state.thermal_energy, p, dt, state.params, state.units)
    return replace(state, thermal_energy=float(q))


def available_attack_power(state: WaterHeaterState, node_manipulable_load: float, alr: float,
                           controlled_count: int, total_nodes: int = 13) -> float:
    """Watts the attacker can draw at a node this step (zero above the cutoff)."""
    if not 0 <= alr <= 1:
        raise ValueError("ALR must be in [0, 1]")
    if not 1 <= controlled_count <= total_nodes:
        raise ValueError("controlled_count must be in [1, total_nodes]")
    if state.temperature >= state.params.cutoff:
        return 0.0
    return node_manipulable_load * alr * total_nodes / controlled_count
