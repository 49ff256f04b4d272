"""OLTC controller: line-drop compensation, deadband, delays, tap stepping."""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .feeder import OltcParams

NOMINAL_TAPS_PER_DAY = 36
LIFESPAN_CAP = 10.0


def compensated_voltage(v, i, r_c: float, x_c: float):
    """|v + (r_c + j x_c) i|; works elementwise on arrays."""
    return np.abs(v + complex(r_c, x_c) * i)


def controller_delay(deadband: float, dv: float, tau0: float) -> float:
    """Inverse-time controller delay ``tau0 * DB / |dv|`` in seconds."""
    if dv == 0:
        raise ValueError("delay undefined inside deadband (dv == 0)")
    if deadband <= 0 or tau0 <= 0:
        raise ValueError("deadband and tau0 must be positive")
    return tau0 * deadband / abs(dv)


def lifespan_fraction(observed_taps: float, nominal_taps: float = NOMINAL_TAPS_PER_DAY) -> float:
    """Remaining lifespan relative to nominal wear; capped at 10 for zero taps."""
    if observed_taps < 0 or nominal_taps <= 0:
        raise ValueError("observed_taps must be >= 0 and nominal_taps > 0")
    if observed_taps == 0:
        return LIFESPAN_CAP
    return nominal_taps / observed_taps


@dataclass(frozen=True)
class OltcState:
    tap: int = 0
    ratio: float = 1.0
    out_of_band_timer: float = 0.0
    pending_direction: int = 0
    tap_change_count: int = 0

    @classmethod
    def initial(cls, params: OltcParams, tap: int = 0) -> OltcState:
        return cls(tap=tap, ratio=params.ratio(tap))


def step_arrays(params: OltcParams, tap, timer, pending, count, vc, dt: float):
    """Vectorised controller update over a batch of independent regulators.

    ``vc`` is the compensated voltage in pu. Returns new
    ``(tap, timer, pending, count, changed)`` arrays.
    """
    tap = np.asarray(tap, dtype=np.int64)
    timer = np.asarray(timer, dtype=float)
    pending = np.asarray(pending, dtype=np.int64)
    count = np.asarray(count, dtype=np.int64)
    dv = np.asarray(vc, dtype=float) - params.v_ref
    out = np.abs(dv) > params.deadband / 2
    direction = np.where(dv < 0, 1, -1)

    # a reversal restarts the delay
    timer = np.where(out & (pending == direction), timer, 0.0) + np.where(out, dt, 0.0)
    pending = np.where(out, direction, 0)
    with np.errstate(divide="ignore"):
        td = params.tau0 * params.deadband / np.abs(dv)
    fire = out & (timer >= td + params.mech_delay)
    new_tap = np.where(fire, np.clip(tap + direction, -params.max_tap, params.max_tap), tap)
    changed = new_tap != tap
    count = count + changed
    timer = np.where(fire, 0.0, timer)
    pending = np.where(fire, 0, pending)
    return new_tap, timer, pending, count, changed


def step_controller(state: OltcState, params: OltcParams, measured_v, measured_i,
                    dt: float, zbase: float = 1.0) -> tuple[OltcState, bool]:
    """Advance one regulator by ``dt`` seconds; at most one tap step.

    ``measured_v`` and ``measured_i`` are per unit at the regulated terminal;
    ``zbase`` (ohms) converts the compensator settings to per unit.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    vc = compensated_voltage(complex(measured_v), complex(measured_i),
                             params.compensator_r / zbase, params.compensator_x / zbase)
    tap, timer, pending, count, changed = step_arrays(
        params, state.tap, state.out_of_band_timer, state.pending_direction,
        state.tap_change_count, vc, dt,
    )
    tap = int(tap)
    new = replace(
        state,
        tap=tap,
        ratio=params.ratio(tap),
        out_of_band_timer=float(timer),
        pending_direction=int(pending),
        tap_change_count=int(count),
    )
    return new, bool(changed)
