"""Feeder topology, electrical parameters and the attackable node set.

A feeder is loaded from a JSON document (see ``data/ieee123-reduced.json``)
and validated on load. Once built it is immutable and can be shared freely
between concurrent scenario runs.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path
from typing import Any

DEFAULT_FEEDER = "ieee123-reduced.json"


class FeederError(ValueError):
    """A feeder document violates a structural or electrical invariant."""


class FeederParseError(FeederError):
    """The feeder document is not well-formed JSON or misses required keys."""


@dataclass(frozen=True)
class Bus:
    id: int
    name: str
    base_voltage: float  # volts, line-to-neutral
    households: int = 0


@dataclass(frozen=True)
class Line:
    from_bus: int
    to_bus: int
    resistance: float  # ohms
    reactance: float  # ohms


@dataclass(frozen=True)
class CapacitorBank:
    bus: int
    reactive_power: float  # var at 1.0 pu voltage


@dataclass(frozen=True)
class OltcParams:
    """On-load tap changer between ``from_bus`` (source side) and ``to_bus``.

    ``to_bus`` is the regulated side. Turns ratio is
    ``nominal_ratio + tap * ratio_step`` and a ratio above one boosts the
    regulated voltage.
    """

    from_bus: int
    to_bus: int
    series_admittance: complex  # siemens
    nominal_ratio: float = 1.0
    ratio_step: float = 0.00625
    max_tap: int = 16
    core_loss_conductance: float = 0.0  # siemens
    magnetizing_susceptance: float = 0.0  # siemens
    v_ref: float = 1.0  # pu
    deadband: float = 0.0166  # pu, full width
    tau0: float = 30.0  # s
    mech_delay: float = 6.0  # s
    compensator_r: float = 0.0  # ohms
    compensator_x: float = 0.0  # ohms

    def ratio(self, tap: int) -> float:
        return self.nominal_ratio + tap * self.ratio_step


@dataclass(frozen=True)
class Feeder:
    buses: tuple[Bus, ...]
    lines: tuple[Line, ...]
    capacitors: tuple[CapacitorBank, ...]
    oltcs: tuple[OltcParams, ...]
    source_bus: int
    attackable_nodes: tuple[int, ...]
    manipulable_load: tuple[float, ...]  # watts, aligned with attackable_nodes
    name: str = "feeder"
    base_power: float = 1.0e6  # VA
    source_voltage: float = 1.0  # pu
    demand: dict[str, Any] = field(default_factory=dict, compare=False, hash=False)
    calibration: dict[str, Any] | None = field(default=None, compare=False, hash=False)
    notes: tuple[str, ...] = field(default=(), compare=False, hash=False)

    def __post_init__(self) -> None:
        validate(self)

    @property
    def n_bus(self) -> int:
        return len(self.buses)

    @property
    def n_attackable(self) -> int:
        return len(self.attackable_nodes)

    def bus_index(self, bus_id: int) -> int:
        """Position of ``bus_id`` in ``buses``."""
        return self._index[bus_id]

    @property
    def _index(self) -> dict[int, int]:
        cached = self.__dict__.get("_index_cache")
        if cached is None:
            cached = {b.id: i for i, b in enumerate(self.buses)}
            object.__setattr__(self, "_index_cache", cached)
        return cached

    def bus_by_name(self, name: str) -> Bus:
        for b in self.buses:
            if b.name == name:
                return b
        raise KeyError(f"unknown bus name {name!r}")

    @property
    def attackable_names(self) -> list[str]:
        return [self.buses[self.bus_index(i)].name for i in self.attackable_nodes]

    def children(self) -> dict[int, list[int]]:
        """Adjacency of the tree oriented away from the source bus."""
        adj: dict[int, list[int]] = {b.id: [] for b in self.buses}
        for a, b in _edges(self):
            adj[a].append(b)
            adj[b].append(a)
        out: dict[int, list[int]] = {b.id: [] for b in self.buses}
        seen = {self.source_bus}
        stack = [self.source_bus]
        while stack:
            u = stack.pop()
            for v in adj[u]:
                if v not in seen:
                    seen.add(v)
                    out[u].append(v)
                    stack.append(v)
        return out

    def depth(self) -> int:
        kids = self.children()
        best = 0
        stack = [(self.source_bus, 0)]
        while stack:
            u, d = stack.pop()
            best = max(best, d)
            stack.extend((v, d + 1) for v in kids[u])
        return best

    def to_dict(self) -> dict[str, Any]:
        doc: dict[str, Any] = {
            "name": self.name,
            **({"notes": list(self.notes)} if self.notes else {}),
            "base_power_va": self.base_power,
            "source_bus": self.source_bus,
            "source_voltage_pu": self.source_voltage,
            "buses": [
                {"id": b.id, "name": b.name, "base_voltage": b.base_voltage,
                 "households": b.households}
                for b in self.buses
            ],
            "lines": [
                {"from_bus": ln.from_bus, "to_bus": ln.to_bus,
                 "resistance": ln.resistance, "reactance": ln.reactance}
                for ln in self.lines
            ],
            "capacitors": [
                {"bus": c.bus, "reactive_power": c.reactive_power} for c in self.capacitors
            ],
            "oltcs": [_oltc_to_dict(o) for o in self.oltcs],
            "attackable_nodes": list(self.attackable_nodes),
            "manipulable_load_watts": list(self.manipulable_load),
        }
        if self.demand:
            doc["demand"] = dict(self.demand)
        if self.calibration is not None:
            doc["calibration"] = dict(self.calibration)
        return doc

    def digest(self) -> str:
        """SHA-256 of the canonical JSON form, used in manifests."""
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()

    def with_calibration(self, calibration: dict[str, Any] | None) -> Feeder:
        return replace(self, calibration=calibration)


def _oltc_to_dict(o: OltcParams) -> dict[str, Any]:
    return {
        "from_bus": o.from_bus,
        "to_bus": o.to_bus,
        "series_admittance_siemens": [o.series_admittance.real, o.series_admittance.imag],
        "nominal_ratio_pu": o.nominal_ratio,
        "ratio_step_pu": o.ratio_step,
        "max_tap": o.max_tap,
        "core_loss_conductance": o.core_loss_conductance,
        "magnetizing_susceptance": o.magnetizing_susceptance,
        "v_ref_pu": o.v_ref,
        "deadband_pu": o.deadband,
        "tau0": o.tau0,
        "mech_delay": o.mech_delay,
        "compensator_r": o.compensator_r,
        "compensator_x": o.compensator_x,
    }


def _edges(feeder: Feeder) -> list[tuple[int, int]]:
    return [(ln.from_bus, ln.to_bus) for ln in feeder.lines] + [
        (o.from_bus, o.to_bus) for o in feeder.oltcs
    ]


def validate(feeder: Feeder) -> None:
    """Raise :class:`FeederError` naming the first violated invariant."""
    ids = [b.id for b in feeder.buses]
    if not ids:
        raise FeederError("feeder has no buses")
    if len(set(ids)) != len(ids):
        raise FeederError("duplicate bus id")
    known = set(ids)
    for b in feeder.buses:
        if not b.base_voltage > 0:
            raise FeederError(f"bus {b.id}: base_voltage must be positive")
        if b.households < 0:
            raise FeederError(f"bus {b.id}: households must be non-negative")
    if feeder.source_bus not in known:
        raise FeederError(f"unknown bus id {feeder.source_bus} (source_bus)")
    if not feeder.base_power > 0:
        raise FeederError("base_power must be positive")

    for ln in feeder.lines:
        for end in (ln.from_bus, ln.to_bus):
            if end not in known:
                raise FeederError(f"unknown bus id {end} in line")
        if ln.from_bus == ln.to_bus:
            raise FeederError(f"line {ln.from_bus}->{ln.to_bus} is a self loop")
        if ln.resistance < 0:
            raise FeederError(f"line {ln.from_bus}->{ln.to_bus}: negative resistance")
    for c in feeder.capacitors:
        if c.bus not in known:
            raise FeederError(f"unknown bus id {c.bus} in capacitor")
        if c.reactive_power < 0:
            raise FeederError(f"capacitor at {c.bus}: negative reactive_power")
    for o in feeder.oltcs:
        for end in (o.from_bus, o.to_bus):
            if end not in known:
                raise FeederError(f"unknown bus id {end} in oltc")
        if o.from_bus == o.to_bus:
            raise FeederError("oltc terminals must differ")
        if not o.nominal_ratio > 0:
            raise FeederError("oltc nominal_ratio must be positive")
        if not o.ratio_step > 0:
            raise FeederError("oltc ratio_step must be positive")
        if o.max_tap < 1:
            raise FeederError("oltc max_tap must be >= 1")
        if not o.deadband > 0 or not o.tau0 > 0:
            raise FeederError("oltc deadband and tau0 must be positive")
        if not 3.0 <= o.mech_delay <= 10.0:
            raise FeederError("oltc mech_delay outside [3, 10] s")
        if o.series_admittance == 0:
            raise FeederError("oltc series admittance must be non-zero")
        if o.nominal_ratio - o.max_tap * o.ratio_step <= 0:
            raise FeederError("oltc ratio would reach zero within the tap range")

    _check_radial(feeder)

    for o in feeder.oltcs:
        kids = feeder.children()
        if o.to_bus not in kids[o.from_bus]:
            raise FeederError(
                f"oltc {o.from_bus}->{o.to_bus} must point away from the source bus"
            )

    if len(feeder.attackable_nodes) != len(feeder.manipulable_load):
        raise FeederError("attackable_nodes and manipulable_load_watts lengths differ")
    if len(set(feeder.attackable_nodes)) != len(feeder.attackable_nodes):
        raise FeederError("duplicate attackable node")
    for node, load in zip(feeder.attackable_nodes, feeder.manipulable_load):
        if node not in known:
            raise FeederError(f"unknown bus id {node} in attackable_nodes")
        if not load > 0:
            raise FeederError(f"attackable node {node}: manipulable load must be positive")


def _check_radial(feeder: Feeder) -> None:
    adj: dict[int, list[int]] = {b.id: [] for b in feeder.buses}
    pairs = set()
    for a, b in _edges(feeder):
        key = frozenset((a, b))
        if key in pairs:
            raise FeederError("cycle detected (parallel branches between the same buses)")
        pairs.add(key)
        adj[a].append(b)
        adj[b].append(a)
    seen = {feeder.source_bus}
    stack = [(feeder.source_bus, None)]
    while stack:
        u, parent = stack.pop()
        for v in adj[u]:
            if v == parent:
                continue
            if v in seen:
                raise FeederError("cycle detected")
            seen.add(v)
            stack.append((v, u))
    if len(seen) != len(feeder.buses):
        missing = sorted(set(adj) - seen)
        raise FeederError(f"network is not connected to the source bus: {missing}")


def feeder_from_dict(doc: dict[str, Any]) -> Feeder:
    try:
        buses = tuple(
            Bus(int(b["id"]), str(b.get("name", b["id"])), float(b["base_voltage"]),
                int(b.get("households", 0)))
            for b in doc["buses"]
        )
        lines = tuple(
            Line(int(ln["from_bus"]), int(ln["to_bus"]), float(ln["resistance"]),
                 float(ln["reactance"]))
            for ln in doc["lines"]
        )
        caps = tuple(
            CapacitorBank(int(c["bus"]), float(c["reactive_power"]))
            for c in doc.get("capacitors", [])
        )
        oltcs = tuple(_oltc_from_dict(o) for o in doc.get("oltcs", []))
        source = int(doc["source_bus"])
        attackable = tuple(int(i) for i in doc["attackable_nodes"])
        manip = tuple(float(w) for w in doc["manipulable_load_watts"])
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, FeederError):
            raise
        raise FeederParseError(f"malformed feeder document: {exc!r}") from exc
    return Feeder(
        buses=buses,
        lines=lines,
        capacitors=caps,
        oltcs=oltcs,
        source_bus=source,
        attackable_nodes=attackable,
        manipulable_load=manip,
        name=str(doc.get("name", "feeder")),
        base_power=float(doc.get("base_power_va", 1.0e6)),
        source_voltage=float(doc.get("source_voltage_pu", 1.0)),
        demand=dict(doc.get("demand", {})),
        calibration=doc.get("calibration"),
        notes=tuple(str(n) for n in doc.get("notes", [])),
    )


def _oltc_from_dict(o: dict[str, Any]) -> OltcParams:
    y = o["series_admittance_siemens"]
    return OltcParams(
        from_bus=int(o["from_bus"]),
        to_bus=int(o["to_bus"]),
        series_admittance=complex(float(y[0]), float(y[1])),
        nominal_ratio=float(o.get("nominal_ratio_pu", 1.0)),
        ratio_step=float(o.get("ratio_step_pu", 0.00625)),
        max_tap=int(o.get("max_tap", 16)),
        core_loss_conductance=float(o.get("core_loss_conductance", 0.0)),
        magnetizing_susceptance=float(o.get("magnetizing_susceptance", 0.0)),
        v_ref=float(o.get("v_ref_pu", 1.0)),
        deadband=float(o.get("deadband_pu", 0.0166)),
        tau0=float(o.get("tau0", 30.0)),
        mech_delay=float(o.get("mech_delay", 6.0)),
        compensator_r=float(o.get("compensator_r", 0.0)),
        compensator_x=float(o.get("compensator_x", 0.0)),
    )


def load_feeder(path: str | Path) -> Feeder:
    text = Path(path).read_text(encoding="utf-8")
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise FeederParseError(f"{path}: {exc}") from exc
    if not isinstance(doc, dict):
        raise FeederParseError(f"{path}: top level must be an object")
    return feeder_from_dict(doc)


def save_feeder(feeder: Feeder, path: str | Path) -> None:
    Path(path).write_text(json.dumps(feeder.to_dict(), indent=2) + "\n", encoding="utf-8")


def default_feeder_path() -> Path:
    return Path(str(resources.files("gridworm") / "data" / DEFAULT_FEEDER))


def default_feeder() -> Feeder:
    """The bundled single-phase reduction of the IEEE 123 OLTC-1 neighbourhood."""
    return load_feeder(default_feeder_path())
