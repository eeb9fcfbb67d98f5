import json
from pathlib import Path

import pytest

from nisqpf.driver import QpfConfig, build_caches
from nisqpf.io import load_case

GOLDEN = Path(__file__).parent / "golden"


def golden(name):
    return json.loads((GOLDEN / name).read_text())


@pytest.fixture(scope="session")
def five_bus():
    return load_case("five_bus")


@pytest.fixture(scope="session")
def nine_bus():
    return load_case("nine_bus")


@pytest.fixture(scope="session")
def five_bus_caches(five_bus):
    return build_caches(five_bus, QpfConfig())


@pytest.fixture(scope="session")
def nine_bus_caches(nine_bus):
    return build_caches(nine_bus, QpfConfig())


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
