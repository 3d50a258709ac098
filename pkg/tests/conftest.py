import pathlib
import sys

import pytest

sys.path.insert(0, str(pathlib.Path(__file__).parent))


@pytest.fixture(scope="session")
def d3_short():
    """Distance-3 circuit with a 4-cycle DEM, shared across tests."""
    from qpdec.dem_builder import build_dem
    from qpdec.stab_circuit import build_surface_code

    circ = build_surface_code(3)
    return circ, build_dem(circ, 4)


@pytest.fixture(scope="session")
def d3_long():
    from qpdec.dem_builder import build_dem
    from qpdec.stab_circuit import build_surface_code

    circ = build_surface_code(3)
    return circ, build_dem(circ, 12)


ACCEPTANCE_LINES = []


def record_criterion(number: int, ok: bool, detail: str) -> None:
    """Store one PASS/FAIL line; printed in the terminal summary."""
    line = f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES.append((number, line))
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
