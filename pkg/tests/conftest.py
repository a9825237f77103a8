import numpy as np
import pytest

from gaeit import adjacent_protocol, build_disk_mesh, forward_solve, reference_phantom


@pytest.fixture(scope="session")
def mesh12():
    return build_disk_mesh(12, 16)


@pytest.fixture(scope="session")
def mesh4():
    return build_disk_mesh(4, 16)


@pytest.fixture(scope="session")
def protocol16():
    return adjacent_protocol(16)


@pytest.fixture(scope="session")
def reference_scene(mesh12, protocol16):
    """Single-anomaly phantom and its noiseless measurements."""
    phantom = reference_phantom(mesh12)
    return phantom, forward_solve(mesh12, phantom.rho_true, protocol16)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


ACCEPTANCE_LINES: list[str] = []


@pytest.fixture(scope="session")
def acceptance_log():
    """Collects one verdict line per acceptance criterion for the terminal summary."""

    def record(number: int, title: str, passed: bool, detail: str) -> bool:
        line = f"criterion {number:>2} {'PASS' if passed else 'FAIL'}  {title}: {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.write_sep("=", "acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)
