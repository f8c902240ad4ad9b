import math

import numpy as np
import pytest

from cavflow.geometry import CavitationConfig, HoleDomain, build_evolution

# lines printed in the terminal summary, one per acceptance criterion
ACCEPTANCE = {}


def record(number: int, name: str, passed: bool, detail: str = ""):
    ACCEPTANCE[number] = (name, bool(passed), detail)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        name, ok, detail = ACCEPTANCE[k]
        terminalreporter.write_line(f"criterion {k:2d} {'PASS' if ok else 'FAIL'}  {name}  {detail}")


def three_hole_domain(r=0.15):
    centers = 0.5 * np.exp(2j * np.pi * np.arange(3) / 3)
    return HoleDomain(0j, 1.0, centers, np.full(3, r))


THREE_SITES = 0.45 * np.exp(2j * np.pi * np.arange(3) / 3)


@pytest.fixture(scope="session")
def radial_evolution():
    return build_evolution(CavitationConfig(1.0, [0j], [math.pi]))


@pytest.fixture(scope="session")
def off_center_evolution():
    return build_evolution(CavitationConfig(1.0, [0.4 + 0j], [0.5 * math.pi]))


@pytest.fixture(scope="session")
def three_evolution():
    return build_evolution(CavitationConfig(1.0, THREE_SITES, [0.02 * math.pi] * 3))
