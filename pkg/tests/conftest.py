import pytest

from gridworm.feeder import default_feeder, feeder_from_dict


def two_bus_doc(r=0.01, x=0.02, attackable=(1,), manip=(1000.0,)):
    """Source 0 feeding bus 1 through one line; unit bases so SI equals pu."""
    return {
        "name": "two-bus",
        "base_power_va": 1.0,
        "source_bus": 0,
        "source_voltage_pu": 1.0,
        "buses": [{"id": 0, "base_voltage": 1.0}, {"id": 1, "base_voltage": 1.0, "households": 1}],
        "lines": [{"from_bus": 0, "to_bus": 1, "resistance": r, "reactance": x}],
        "capacitors": [],
        "oltcs": [],
        "attackable_nodes": list(attackable),
        "manipulable_load_watts": list(manip),
    }


def oltc_doc(tap_y=(0.0, -50.0), load_line=(0.01, 0.02)):
    """Source 0 -> OLTC -> bus 1 -> line -> bus 2, unit bases."""
    return {
        "name": "oltc-chain",
        "base_power_va": 1.0,
        "source_bus": 0,
        "buses": [{"id": i, "base_voltage": 1.0, "households": 1 if i else 0} for i in range(3)],
        "lines": [{"from_bus": 1, "to_bus": 2, "resistance": load_line[0],
                   "reactance": load_line[1]}],
        "oltcs": [{"from_bus": 0, "to_bus": 1, "series_admittance_siemens": list(tap_y)}],
        "attackable_nodes": [2],
        "manipulable_load_watts": [1000.0],
    }


@pytest.fixture(scope="session")
def bundled():
    return default_feeder()


@pytest.fixture
def two_bus():
    return feeder_from_dict(two_bus_doc())


# -- acceptance log ------------------------------------------------------------------

ACCEPTANCE: dict[int, str] = {}


def record(number: int, title: str, ok: bool, detail: str) -> bool:
    line = f"[{'PASS' if ok else 'FAIL'}] criterion {number:2d} {title}: {detail}"
    ACCEPTANCE[number] = line
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[n])
