"""Attacker model: controlled nodes, attack load ratio and switching strategies.

Every strategy switches all controlled nodes together, so each emitted
control vector is either the ownership vector ``y_a`` or all zeros.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .demand import WaterHeaterState, available_attack_power, heater_step
from .oltc import compensated_voltage

STRATEGIES = ("none", "random", "flipping", "heuristic")
# One deadband above the set point (1.0 + 0.0166). A threshold inside the
# band only ever provokes rising taps, and with one tap step per control
# interval the attack stalls once the regulator has climbed out of reach.
DEFAULT_EPSILON_PU = 1.0166


def make_rng(seed: int, *key: int) -> np.random.Generator:
    """PCG64 stream for ``seed``; extra integers select an independent substream."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=key)))


@dataclass(frozen=True)
class AttackerConfig:
    controlled: tuple[int, ...]  # y_a, 0/1 per attackable node
    alr: float = 0.0
    strategy: str = "none"
    p: float = 0.5
    epsilon: float = DEFAULT_EPSILON_PU  # pu of the regulated bus
    rng_seed: int = 0
    initial_b: bool = True

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise ValueError(f"unknown strategy {self.strategy!r}; choose from {STRATEGIES}")
        if not 0 <= self.alr <= 1:
            raise ValueError("ALR must be in [0, 1]")
        if not 0 <= self.p <= 1:
            raise ValueError("p must be in [0, 1]")
        if any(c not in (0, 1) for c in self.controlled):
            raise ValueError("controlled must be a 0/1 vector")
        if self.strategy != "none" and not any(self.controlled):
            raise ValueError("an active strategy needs at least one controlled node")

    @classmethod
    def unattacked(cls, k: int = 13) -> AttackerConfig:
        return cls(controlled=(0,) * k)

    @property
    def ya(self) -> np.ndarray:
        return np.array(self.controlled, dtype=np.int8)

    @property
    def m(self) -> int:
        return int(sum(self.controlled))

    @staticmethod
    def epsilon_from_volts(volts: float, base_voltage: float) -> float:
        return volts / base_voltage


@dataclass
class AttackerState:
    b: bool = True
    rng: np.random.Generator = field(default_factory=lambda: make_rng(0))

    @classmethod
    def start(cls, cfg: AttackerConfig) -> AttackerState:
        return cls(b=cfg.initial_b, rng=make_rng(cfg.rng_seed))


def _off(cfg: AttackerConfig) -> np.ndarray:
    return np.zeros(len(cfg.controlled), dtype=np.int8)


def decide_random(cfg: AttackerConfig, state: AttackerState) -> np.ndarray:
    q = state.rng.random()
    return cfg.ya if q < cfg.p else _off(cfg)


def decide_flip(cfg: AttackerConfig, state: AttackerState) -> np.ndarray:
    out = cfg.ya if state.b else _off(cfg)
    state.b = not state.b
    return out


def decide_heuristic(cfg: AttackerConfig, state: AttackerState, v, i,
                     r_c: float = 0.0, x_c: float = 0.0) -> np.ndarray:
    """Switch on when the regulator's compensated voltage is at or below epsilon.

    An on-step is always followed by a forced off-step.
    """
    vc = compensated_voltage(complex(v), complex(i), r_c, x_c)
    if vc <= cfg.epsilon and state.b:
        state.b = False
        return cfg.ya
    state.b = True
    return _off(cfg)


def decide(cfg: AttackerConfig, state: AttackerState, v=None, i=None,
           r_c: float = 0.0, x_c: float = 0.0) -> np.ndarray:
    if cfg.strategy == "random":
        return decide_random(cfg, state)
    if cfg.strategy == "flipping":
        return decide_flip(cfg, state)
    if cfg.strategy == "heuristic":
        return decide_heuristic(cfg, state, v, i, r_c, x_c)
    return _off(cfg)


def apply_controls(controls, heaters: list[WaterHeaterState], cfg: AttackerConfig,
                   manipulable_load, dt: float = 60.0):
    """Attack watts per node for this step and the advanced heater states."""
    controls = np.asarray(controls)
    if np.any(controls[np.asarray(cfg.controlled) == 0]):
        raise ValueError("control set on an uncontrolled node")
    k = len(cfg.controlled)
    m = max(cfg.m, 1)
    watts = np.zeros(k)
    new = []
    for n, (c, h, load) in enumerate(zip(controls, heaters, manipulable_load)):
        if c:
            watts[n] = available_attack_power(h, load, cfg.alr, m, k)
        new.append(heater_step(h, watts[n], dt))
    return watts, new
