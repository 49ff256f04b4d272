"""Radial power flow by forward-backward sweep.

All arithmetic is per unit on the feeder's ``base_power`` and each bus's
``base_voltage``. The sweep is vectorised over a leading batch axis so many
independent scenarios can be solved in one call; every row is iterated and
frozen independently, so a row's result does not depend on what else is in
the batch.

OLTC convention: port 0 is the regulated side (``to_bus``), port 1 faces the
source (``from_bus``). Both terminal currents are positive *into* the device,
which makes the transmission form ``V1 = V0/a - (a/Y_T) I0, I1 = -a I0`` and
the admittance form::

    I0 = (g_Fe + j b_mu + Y_T/a^2) V0 - (Y_T/a) V1
    I1 = -(Y_T/a) V0 + Y_T V1

hold exactly. A ratio above one therefore raises the regulated voltage.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .feeder import Feeder, FeederError

VOLTAGE_TOL = 1e-10
MISMATCH_TOL = 1e-8
MAX_ITERS = 100


class PowerFlowDiverged(RuntimeError):
    def __init__(self, message: str, mismatch: float, rows=None):
        super().__init__(message)
        self.mismatch = mismatch
        self.rows = rows


class ConfigurationError(FeederError):
    pass


@dataclass(frozen=True)
class Network:
    """Per-unit arrays derived from a :class:`Feeder`, in sweep order."""

    feeder: Feeder
    source: int  # bus position
    order: tuple[int, ...]  # non-source bus positions, parents first
    parent: np.ndarray  # bus position -> parent position (-1 for source)
    branch_kind: np.ndarray  # 0 line, 1 oltc, -1 source
    branch_ref: np.ndarray  # index into feeder.lines / feeder.oltcs
    z: np.ndarray  # series impedance per child bus (pu); OLTC: 1/Y_T
    ysh: np.ndarray  # OLTC shunt admittance at port 0 (pu), 0 elsewhere
    oltc_port0: np.ndarray  # bus positions
    oltc_port1: np.ndarray
    oltc_zc: np.ndarray  # line-drop compensator impedance (pu)
    cap_bus: np.ndarray
    cap_b: np.ndarray  # shunt susceptance (pu)
    bus_base_current: np.ndarray  # amperes per pu current
    branches: tuple = ()  # (child, parent, is_oltc, oltc index, z, ysh) in sweep order

    @property
    def n_bus(self) -> int:
        return self.feeder.n_bus


@lru_cache(maxsize=32)
def compile_network(feeder: Feeder) -> Network:
    n = feeder.n_bus
    pos = feeder.bus_index
    sbase = feeder.base_power
    parent = np.full(n, -1, dtype=np.int64)
    kind = np.full(n, -1, dtype=np.int64)
    ref = np.full(n, -1, dtype=np.int64)
    z = np.zeros(n, dtype=complex)
    ysh = np.zeros(n, dtype=complex)

    zbase = np.array([b.base_voltage**2 / sbase for b in feeder.buses])
    kids = feeder.children()
    edge_lookup = {}
    for k, ln in enumerate(feeder.lines):
        edge_lookup[frozenset((ln.from_bus, ln.to_bus))] = (0, k)
    for k, o in enumerate(feeder.oltcs):
        edge_lookup[frozenset((o.from_bus, o.to_bus))] = (1, k)

    order: list[int] = []
    queue = [feeder.source_bus]
    while queue:
        u = queue.pop(0)
        for v in kids[u]:
            c, p = pos(v), pos(u)
            order.append(c)
            parent[c] = p
            kd, k = edge_lookup[frozenset((u, v))]
            kind[c], ref[c] = kd, k
            if kd == 0:
                ln = feeder.lines[k]
                zc = complex(ln.resistance, ln.reactance)
                if zc == 0:
                    raise ConfigurationError(
                        f"line {ln.from_bus}->{ln.to_bus} has zero impedance (singular network)"
                    )
                z[c] = zc / zbase[c]
            else:
                o = feeder.oltcs[k]
                z[c] = 1.0 / (o.series_admittance * zbase[c])
                ysh[c] = complex(o.core_loss_conductance, o.magnetizing_susceptance) * zbase[c]
            queue.append(v)

    p0 = np.array([pos(o.to_bus) for o in feeder.oltcs], dtype=np.int64)
    p1 = np.array([pos(o.from_bus) for o in feeder.oltcs], dtype=np.int64)
    zc = np.array(
        [complex(o.compensator_r, o.compensator_x) / zbase[pos(o.to_bus)] for o in feeder.oltcs],
        dtype=complex,
    )
    cap_bus = np.array([pos(c.bus) for c in feeder.capacitors], dtype=np.int64)
    cap_b = np.array([c.reactive_power / sbase for c in feeder.capacitors])
    vb = np.array([b.base_voltage for b in feeder.buses])
    branches = tuple(
        (c, int(parent[c]), bool(kind[c] == 1), int(ref[c]), complex(z[c]), complex(ysh[c]))
        for c in order
    )
    return Network(
        branches=branches,
        feeder=feeder,
        source=pos(feeder.source_bus),
        order=tuple(order),
        parent=parent,
        branch_kind=kind,
        branch_ref=ref,
        z=z,
        ysh=ysh,
        oltc_port0=p0,
        oltc_port1=p1,
        oltc_zc=zc,
        cap_bus=cap_bus,
        cap_b=cap_b,
        bus_base_current=sbase / vb,
    )


@dataclass
class GridState:
    """Solved operating point. Arrays may carry a leading batch axis.

    ``branch_current[..., b]`` is the current (pu) arriving at bus ``b``
    from its parent branch, measured at the bus end; for the source bus it
    is the total current drawn from the supply. OLTC currents are positive
    into the device.
    """

    voltage: np.ndarray
    branch_current: np.ndarray
    oltc_v0: np.ndarray
    oltc_v1: np.ndarray
    oltc_i0: np.ndarray
    oltc_i1: np.ndarray
    oltc_p: np.ndarray  # W drawn through port 1
    oltc_q: np.ndarray  # var drawn through port 1
    cap_v: np.ndarray
    cap_q: np.ndarray  # var supplied
    source_power: np.ndarray  # pu complex
    iterations: np.ndarray
    mismatch: np.ndarray  # max |dS| (pu) per row
    t: int = 0

    def row(self, i: int) -> GridState:
        fields = {}
        for name in self.__dataclass_fields__:
            val = getattr(self, name)
            fields[name] = val[i] if isinstance(val, np.ndarray) else val
        return GridState(**fields)


def _load_current(net: Network, s: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Bus-major (n_bus, B) load currents, capacitors as constant admittance."""
    i = np.conj(s / v)
    if net.cap_bus.size:
        i[net.cap_bus] += 1j * net.cap_b[:, None] * v[net.cap_bus]
    return i


def _backward(branches, i_load, v, ratio):
    j = i_load.copy()
    for c, p, is_oltc, k, _, ysh in reversed(branches):
        if is_oltc:
            j[p] += ratio[k] * (j[c] + ysh * v[c])
        else:
            j[p] += j[c]
    return j


def _forward(branches, source, j, v, ratio, vs):
    out = np.empty_like(v)
    out[source] = vs
    for c, p, is_oltc, k, z, ysh in branches:
        if is_oltc:
            a = ratio[k]
            out[c] = a * out[p] - a * a * z * (j[c] + ysh * v[c])
        else:
            out[c] = out[p] - z * j[c]
    return out


def power_mismatch(net: Network, s: np.ndarray, v: np.ndarray, ratio: np.ndarray) -> np.ndarray:
    """Max complex power mismatch (pu) per row from the branch admittance equations.

    Arrays are batch-major: ``s`` and ``v`` (B, n_bus), ``ratio`` (B, n_oltc).
    """
    s, v, ratio = s.T, v.T, ratio.T
    inj = np.zeros_like(v)
    for c, p, is_oltc, k, z, ysh in net.branches:
        y = 1.0 / z
        if is_oltc:
            a = ratio[k]
            i1 = y * (v[p] - v[c] / a)
            i0 = (ysh + y / (a * a)) * v[c] - (y / a) * v[p]
            inj[p] -= i1
            inj[c] -= i0
        else:
            i = y * (v[p] - v[c])
            inj[c] += i
            inj[p] -= i
    resid = inj - _load_current(net, s, v)
    resid[net.source] = 0.0
    return np.max(np.abs(v * np.conj(resid)), axis=0)


def flat_start(net: Network, ratio: np.ndarray, vs: complex) -> np.ndarray:
    """Source voltage everywhere, stepped through the transformer ratios; (B, n_bus)."""
    v = np.full((ratio.shape[0], net.n_bus), complex(vs))
    for c, p, is_oltc, k, _, _ in net.branches:
        v[:, c] = v[:, p] * (ratio[:, k] if is_oltc else 1.0)
    return v


def sweep_batch(
    net: Network,
    s_load: np.ndarray,
    ratio: np.ndarray,
    vs: float | None = None,
    max_iters: int = MAX_ITERS,
    tol: float = VOLTAGE_TOL,
    mismatch_tol: float = MISMATCH_TOL,
    v_init: np.ndarray | None = None,
) -> GridState:
    """Solve ``B`` independent cases. ``s_load`` is (B, n_bus) pu, ``ratio`` (B, n_oltc).

    ``v_init`` (B, n_bus) replaces the flat start, e.g. with the previous
    time step's solution.
    """
    s_load = np.asarray(s_load, dtype=complex)
    ratio = np.asarray(ratio, dtype=float)
    b = s_load.shape[0]
    if vs is None:
        vs = net.feeder.source_voltage
    branches = net.branches
    v = flat_start(net, ratio, vs) if v_init is None else np.array(v_init, dtype=complex)
    v[:, net.source] = vs

    # iterate bus-major so each branch touches contiguous memory
    st, vt, rt = s_load.T.copy(), v.T.copy(), ratio.T.copy()
    active = np.ones(b, dtype=bool)
    iters = np.zeros(b, dtype=np.int64)
    mism = np.full(b, np.inf)
    with np.errstate(all="ignore"):
        for _ in range(max_iters):
            j = _backward(branches, _load_current(net, st, vt), vt, rt)
            vn = _forward(branches, net.source, j, vt, rt, vs)
            dv = np.max(np.abs(vn - vt), axis=0)
            bad = ~np.isfinite(dv) | (np.min(np.abs(vn), axis=0) < 1e-3)
            vt = np.where(active[None, :], vn, vt)
            iters += active
            if np.any(active & bad):
                rows = np.flatnonzero(active & bad)
                raise PowerFlowDiverged(
                    "power flow diverged (voltage collapse)", float("inf"), rows
                )
            check = active & (dv <= tol)
            if check.any():
                mism[check] = power_mismatch(net, s_load[check], vt.T[check], ratio[check])
                active &= ~(check & (mism <= mismatch_tol))
            if not active.any():
                break
        else:
            rows = np.flatnonzero(active)
            worst = power_mismatch(net, s_load[rows], vt.T[rows], ratio[rows])
            raise PowerFlowDiverged(
                f"power flow did not converge in {max_iters} iterations",
                float(np.max(worst)),
                rows,
            )
    return _assemble(net, s_load, np.ascontiguousarray(vt.T), ratio, iters, mism)


def _assemble(net, s_load, v, ratio, iters, mism) -> GridState:
    j = _backward(net.branches, _load_current(net, s_load.T, v.T), v.T, ratio.T).T
    sbase = net.feeder.base_power
    p0, p1 = net.oltc_port0, net.oltc_port1
    v0 = v[:, p0]
    v1 = v[:, p1]
    i0 = -j[:, p0]
    ysh = net.ysh[p0]
    i1 = ratio * (j[:, p0] + ysh * v0)
    s1 = v1 * np.conj(i1) * sbase
    cap_v = v[:, net.cap_bus]
    cap_q = net.cap_b * np.abs(cap_v) ** 2 * sbase
    src = net.source
    return GridState(
        voltage=v,
        branch_current=j,
        oltc_v0=v0,
        oltc_v1=v1,
        oltc_i0=i0,
        oltc_i1=i1,
        oltc_p=s1.real,
        oltc_q=s1.imag,
        cap_v=cap_v,
        cap_q=cap_q,
        source_power=v[:, src] * np.conj(j[:, src]),
        iterations=iters,
        mismatch=mism,
    )


def loads_to_pu(feeder: Feeder, loads) -> np.ndarray:
    """Per-bus complex power (W + j var) to a per-unit vector in bus order.

    ``loads`` is either a mapping ``bus_id -> complex`` or an array already
    in bus order.
    """
    out = np.zeros(feeder.n_bus, dtype=complex)
    if isinstance(loads, dict):
        for bus_id, s in loads.items():
            out[feeder.bus_index(bus_id)] = complex(s)
    else:
        arr = np.asarray(loads, dtype=complex)
        if arr.shape != (feeder.n_bus,):
            raise ValueError(f"expected {feeder.n_bus} bus loads, got shape {arr.shape}")
        out[:] = arr
    return out / feeder.base_power


def forward_backward_sweep(feeder: Feeder, loads, taps=None, **kw) -> GridState:
    """Solve one operating point. ``taps`` gives one tap position per OLTC."""
    net = compile_network(feeder)
    taps = [0] * len(feeder.oltcs) if taps is None else list(taps)
    if len(taps) != len(feeder.oltcs):
        raise ValueError("one tap position per OLTC required")
    for n, o in zip(taps, feeder.oltcs):
        if abs(n) > o.max_tap:
            raise ValueError(f"tap {n} outside +/-{o.max_tap}")
    ratio = np.array([[o.ratio(n) for n, o in zip(taps, feeder.oltcs)]], dtype=float)
    ratio = ratio.reshape(1, len(feeder.oltcs))
    s = loads_to_pu(feeder, loads)[None, :]
    return sweep_batch(net, s, ratio, **kw).row(0)


solve = forward_backward_sweep


def power_balance_error(feeder: Feeder, loads, state: GridState, taps=None) -> float:
    """|S_source - (sum of loads + losses)| in pu, computed branch by branch."""
    net = compile_network(feeder)
    s = loads_to_pu(feeder, loads)
    v = state.voltage
    total = complex(np.sum(s))
    if net.cap_bus.size:
        total += complex(np.sum(-1j * net.cap_b * np.abs(v[net.cap_bus]) ** 2))
    taps = [0] * len(feeder.oltcs) if taps is None else list(taps)
    for c in net.order:
        p = net.parent[c]
        if net.branch_kind[c] == 0:
            i = (v[p] - v[c]) / net.z[c]
            total += net.z[c] * abs(i) ** 2
        else:
            k = net.branch_ref[c]
            a = feeder.oltcs[k].ratio(taps[k])
            y = 1.0 / net.z[c]
            i1 = y * (v[p] - v[c] / a)
            total += net.z[c] * abs(i1) ** 2 + np.conj(net.ysh[c]) * abs(v[c]) ** 2
    return abs(complex(state.source_power) - total)
