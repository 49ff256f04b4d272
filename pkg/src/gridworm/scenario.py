"""One simulated day: demand + attack -> power flow -> OLTC control -> snapshot.

The engine advances a batch of independent scenarios in lock step. Each row
keeps its own attacker, heater and regulator state and its own random
stream, so results are the same whether a scenario runs alone or inside a
batch of any composition.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from functools import lru_cache

import numpy as np

from .attack import AttackerConfig, make_rng
from .demand import MINUTES_PER_DAY, SINGLE_HEATER_W, HeaterParams, generate_profile, heater_energy_step
from .feeder import Feeder
from .oltc import NOMINAL_TAPS_PER_DAY, lifespan_fraction, step_arrays
from .powerflow import PowerFlowDiverged, compile_network, sweep_batch

log = logging.getLogger(__name__)

_CODES = {"none": 0, "random": 1, "flipping": 2, "heuristic": 3}


class ScenarioError(RuntimeError):
    def __init__(self, message: str, step: int, rows=None):
        super().__init__(message)
        self.step = step
        self.rows = rows


class CalibrationError(RuntimeError):
    def __init__(self, message: str, achieved: int, scale: float):
        super().__init__(message)
        self.achieved = achieved
        self.scale = scale


@dataclass(frozen=True)
class ScenarioConfig:
    attacker: AttackerConfig
    demand_seed: int = 0
    calibration_scale: float | None = None  # None: use the feeder's stored calibration
    steps: int = MINUTES_PER_DAY
    dt: float = 60.0
    nominal_taps: float = NOMINAL_TAPS_PER_DAY

    def __post_init__(self):
        if self.steps < 1:
            raise ValueError("steps must be >= 1")
        if self.dt <= 0:
            raise ValueError("dt must be positive")


@dataclass
class ScenarioResult:
    snapshots: np.ndarray  # (T, d)
    labels: np.ndarray  # (T, K) int8, commanded-on devices
    tap_change_count: int
    lifespan: float
    taps: np.ndarray  # (T,) tap of the first OLTC during each step
    config: ScenarioConfig | None = field(default=None, repr=False)


def resolve_scale(feeder: Feeder, cfg: ScenarioConfig) -> float:
    if cfg.calibration_scale is not None:
        return cfg.calibration_scale
    if feeder.calibration:
        return float(feeder.calibration["scale"])
    return 1.0


@lru_cache(maxsize=8)
def _profile(feeder: Feeder, seed: int, scale: float, steps: int):
    return generate_profile(feeder, seed, scale, steps)


def snapshot_columns(feeder: Feeder) -> list[str]:
    """Names of the snapshot vector entries, in order."""
    cols = [f"oltc{k}.tap" for k in range(len(feeder.oltcs))]
    for k in range(len(feeder.oltcs)):
        for q in ("v0", "v1", "i0", "i1"):
            cols += [f"oltc{k}.{q}.re", f"oltc{k}.{q}.im"]
        cols += [f"oltc{k}.p", f"oltc{k}.q"]
    for c in feeder.capacitors:
        name = feeder.buses[feeder.bus_index(c.bus)].name
        cols += [f"cap{name}.v.re", f"cap{name}.v.im", f"cap{name}.q"]
    for b in feeder.buses:
        cols += [f"bus{b.name}.vmag", f"bus{b.name}.vang"]
    return cols


def snapshot_dim(feeder: Feeder) -> int:
    return 11 * len(feeder.oltcs) + 3 * len(feeder.capacitors) + 2 * feeder.n_bus


def snapshot(state, taps, feeder: Feeder) -> np.ndarray:
    """Flatten a solved state (optionally batched) into the fixed column order."""
    taps = np.asarray(taps, dtype=float)
    v = state.voltage
    parts = [taps.reshape(v.shape[:-1] + (-1,))]
    for k in range(len(feeder.oltcs)):
        for z in (state.oltc_v0, state.oltc_v1, state.oltc_i0, state.oltc_i1):
            parts += [z[..., k:k + 1].real, z[..., k:k + 1].imag]
        parts += [state.oltc_p[..., k:k + 1], state.oltc_q[..., k:k + 1]]
    for c in range(len(feeder.capacitors)):
        cv = state.cap_v[..., c:c + 1]
        parts += [cv.real, cv.imag, state.cap_q[..., c:c + 1]]
    vm = np.abs(v)
    va = np.angle(v)
    parts.append(np.stack([vm, va], axis=-1).reshape(v.shape[:-1] + (-1,)))
    return np.concatenate(parts, axis=-1)


def run_batch(feeder: Feeder, configs: list[ScenarioConfig], record: bool = True,
              forced_controls: np.ndarray | None = None) -> list[ScenarioResult]:
    """Run scenarios that share demand seed, scale, horizon and time step.

    ``forced_controls`` (B, T, K) replays recorded control vectors instead of
    asking the strategies.
    """
    if not configs:
        return []
    c0 = configs[0]
    scale = resolve_scale(feeder, c0)
    for c in configs:
        if (c.demand_seed, resolve_scale(feeder, c), c.steps, c.dt) != (
                c0.demand_seed, scale, c0.steps, c0.dt):
            raise ValueError("run_batch needs a common demand seed, scale, steps and dt")
    if not feeder.oltcs:
        raise ValueError("feeder has no OLTC")

    net = compile_network(feeder)
    prof = _profile(feeder, c0.demand_seed, scale, c0.steps)
    base = prof.complex_power() / feeder.base_power  # (T, n_bus)
    B, T, dt = len(configs), c0.steps, c0.dt
    K = feeder.n_attackable
    oltcs = feeder.oltcs
    n_oltc = len(oltcs)
    att_pos = np.array([feeder.bus_index(i) for i in feeder.attackable_nodes])
    manip = np.array(feeder.manipulable_load)

    for c in configs:
        if len(c.attacker.controlled) != K:
            raise ValueError(f"attacker vector must have {K} entries")
    code = np.array([_CODES[c.attacker.strategy] for c in configs])
    ya = np.array([c.attacker.controlled for c in configs], dtype=bool)
    m = np.maximum(ya.sum(axis=1), 1)
    alr = np.array([c.attacker.alr for c in configs])
    p = np.array([c.attacker.p for c in configs])
    eps = np.array([c.attacker.epsilon for c in configs])
    b = np.array([c.attacker.initial_b for c in configs], dtype=bool)
    draws = np.zeros((B, T))
    for r, c in enumerate(configs):
        if c.attacker.strategy == "random":
            draws[r] = make_rng(c.attacker.rng_seed).random(T)

    hp = HeaterParams()
    units = manip / SINGLE_HEATER_W
    heat = np.tile(units * hp.thermal_mass * hp.t_initial, (B, 1))
    max_power = manip[None, :] * alr[:, None] * K / m[:, None] * ya

    tap = np.zeros((B, n_oltc), dtype=np.int64)
    timer = np.zeros((B, n_oltc))
    pending = np.zeros((B, n_oltc), dtype=np.int64)
    count = np.zeros((B, n_oltc), dtype=np.int64)
    ratio_of = np.array([[o.nominal_ratio, o.ratio_step] for o in oltcs])

    def ratios(tp):
        return ratio_of[:, 0] + tp * ratio_of[:, 1]

    def solve(s, tp, t, v_prev=None):
        try:
            return sweep_batch(net, s, ratios(tp), v_init=v_prev)
        except PowerFlowDiverged as exc:
            raise ScenarioError(f"power flow diverged at step {t}: {exc}", t, exc.rows) from exc

    # the attacker's first observation is the unattacked state at minute 0
    st = solve(np.repeat(base[:1], B, axis=0), tap, 0)
    vc = np.abs(st.oltc_v0[:, 0] + net.oltc_zc[0] * st.oltc_i0[:, 0])

    d = snapshot_dim(feeder)
    snaps = np.zeros((B, T, d)) if record else None
    labels = np.zeros((B, T, K), dtype=np.int8)
    tap_hist = np.zeros((B, T), dtype=np.int64)
    is_rand, is_flip, is_heur = code == 1, code == 2, code == 3

    for t in range(T):
        if forced_controls is not None:
            ctrl = np.asarray(forced_controls[:, t, :], dtype=bool)
        else:
            on = np.zeros(B, dtype=bool)
            on[is_rand] = draws[is_rand, t] < p[is_rand]
            on[is_flip] = b[is_flip]
            b[is_flip] = ~b[is_flip]
            fire = (vc <= eps) & b
            on[is_heur] = fire[is_heur]
            b[is_heur] = ~fire[is_heur]
            ctrl = on[:, None] & ya

        temp = heat / (units * hp.thermal_mass)
        watts = np.where(ctrl & (temp < hp.cutoff), max_power, 0.0)
        heat = heater_energy_step(heat, watts, dt, hp, units)

        s = np.repeat(base[t:t + 1], B, axis=0)
        s[:, att_pos] += watts / feeder.base_power
        st = solve(s, tap, t, st.voltage)  # warm start from this row's previous minute

        labels[:, t] = ctrl
        tap_hist[:, t] = tap[:, 0]
        if record:
            snaps[:, t] = snapshot(st, tap, feeder)

        for k, o in enumerate(oltcs):
            vck = np.abs(st.oltc_v0[:, k] + net.oltc_zc[k] * st.oltc_i0[:, k])
            tap[:, k], timer[:, k], pending[:, k], count[:, k], _ = step_arrays(
                o, tap[:, k], timer[:, k], pending[:, k], count[:, k], vck, dt)
            if k == 0:
                vc = vck

    out = []
    for r, c in enumerate(configs):
        n = int(count[r, 0])
        out.append(ScenarioResult(
            snapshots=snaps[r] if record else np.zeros((T, 0)),
            labels=labels[r],
            tap_change_count=n,
            lifespan=lifespan_fraction(n, c.nominal_taps),
            taps=tap_hist[r],
            config=c,
        ))
    return out


def run_scenario(feeder: Feeder, cfg: ScenarioConfig, record: bool = True,
                 forced_controls: np.ndarray | None = None) -> ScenarioResult:
    fc = None if forced_controls is None else np.asarray(forced_controls)[None]
    return run_batch(feeder, [cfg], record=record, forced_controls=fc)[0]


def run_many(feeder: Feeder, configs: list[ScenarioConfig], record: bool = True,
             chunk: int = 64) -> list[ScenarioResult]:
    """Run arbitrary configs, grouping compatible ones into fixed-size batches."""
    groups: dict[tuple, list[int]] = {}
    for i, c in enumerate(configs):
        key = (c.demand_seed, resolve_scale(feeder, c), c.steps, c.dt)
        groups.setdefault(key, []).append(i)
    results: list[ScenarioResult | None] = [None] * len(configs)
    for idx in groups.values():
        for s in range(0, len(idx), chunk):
            part = idx[s:s + chunk]
            for i, res in zip(part, run_batch(feeder, [configs[i] for i in part], record)):
                results[i] = res
    return results  # type: ignore[return-value]


# -- sweeps and calibration ---------------------------------------------------

def sweep_alr(feeder: Feeder, template: ScenarioConfig, alr_values, strategies,
              baseline_taps: int | None = None) -> list[dict]:
    """Tap count and lifespan per (strategy, ALR), strategy-major.

    Lifespan is ``baseline_taps / taps``; without ``baseline_taps`` the
    unattacked day of ``template`` is simulated to supply it.
    """
    alr_values, strategies = list(alr_values), list(strategies)
    if not alr_values or not strategies:
        raise ValueError("alr_values and strategies must be non-empty")
    K = feeder.n_attackable
    controlled = template.attacker.controlled if any(template.attacker.controlled) else (1,) * K
    cells = [(s, a) for s in strategies for a in alr_values]
    cfgs = [
        replace(template, attacker=replace(template.attacker, controlled=controlled,
                                           strategy=s, alr=float(a)))
        for s, a in cells
    ]
    if baseline_taps is None:
        cfgs.insert(0, replace(template, attacker=AttackerConfig.unattacked(K)))
    res = run_many(feeder, cfgs, record=False)
    if baseline_taps is None:
        baseline_taps = max(res.pop(0).tap_change_count, 1)
    rows = []
    for (s, a), r in zip(cells, res):
        rows.append({"strategy": s, "alr": float(a), "taps": r.tap_change_count,
                     "lifespan": lifespan_fraction(r.tap_change_count, baseline_taps)})
    return rows


def unattacked_taps(feeder: Feeder, seed: int, scale: float, steps: int = MINUTES_PER_DAY) -> int:
    cfg = ScenarioConfig(AttackerConfig.unattacked(feeder.n_attackable), demand_seed=seed,
                         calibration_scale=scale, steps=steps)
    return run_scenario(feeder, cfg, record=False).tap_change_count


def calibrate(feeder: Feeder, seed: int = 0, target_taps: int = NOMINAL_TAPS_PER_DAY,
              tolerance: int = 12, lo: float = 0.05, hi: float = 4.0,
              max_steps: int = 40) -> tuple[float, Feeder]:
    """Bisect the demand scale until the unattacked day has ``target_taps +/- tolerance``.

    Returns the scale and a copy of ``feeder`` carrying the calibration record.
    A feeder already calibrated for the same seed and target is returned as is.
    """
    cal = feeder.calibration
    if cal and cal.get("seed") == seed and cal.get("target_taps") == target_taps \
            and abs(cal.get("achieved_taps", -10**9) - target_taps) <= tolerance:
        return float(cal["scale"]), feeder

    def record(scale, taps):
        return feeder.with_calibration({
            "seed": seed, "scale": scale, "target_taps": target_taps,
            "tolerance": tolerance, "achieved_taps": taps,
        })

    a, z = math.log(lo), math.log(hi)
    scale, taps = lo, -1
    for step in range(max_steps):
        scale = math.exp(0.5 * (a + z))
        taps = unattacked_taps(feeder, seed, scale)
        log.info("calibration step %d: scale=%.6g taps=%d", step, scale, taps)
        if abs(taps - target_taps) <= tolerance:
            return scale, record(scale, taps)
        if taps < target_taps:
            a = math.log(scale)
        else:
            z = math.log(scale)
    raise CalibrationError(
        f"calibration failed after {max_steps} steps: {taps} taps at scale {scale:.6g}",
        taps, scale)
