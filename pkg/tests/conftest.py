import os

import numpy as np
import pytest

from qgate_opt.system import SystemParams, build_model
from qgate_opt.orchestrator import PRESETS

LONG = os.environ.get("QGATE_LONG", "") not in ("", "0")


def pytest_configure(config):
    config.addinivalue_line("markers", "long: full-truncation runs (minutes to hours); set QGATE_LONG=1")


def pytest_collection_modifyitems(config, items):
    if LONG:
        return
    skip = pytest.mark.skip(reason="long-running; set QGATE_LONG=1 to run")
    for item in items:
        if "long" in item.keywords:
            item.add_marker(skip)


TINY = SystemParams(qubit_levels=3, cavity_levels=6, qubit1_freq=7.45, qubit2_freq=7.65)


@pytest.fixture(scope="session")
def tiny_model():
    """54-dimensional model for fast unit tests."""
    return build_model(TINY)


@pytest.fixture(scope="session")
def reduced_model():
    return build_model(SystemParams(**PRESETS["reduced"]["system"]))


@pytest.fixture(scope="session")
def full_model():
    return build_model(SystemParams())


@pytest.fixture
def rng():
    return np.random.default_rng(20240607)


def random_unitary(rng, n=4):
    z = (rng.normal(size=(n, n)) + 1j * rng.normal(size=(n, n))) / np.sqrt(2)
    q, r = np.linalg.qr(z)
    return q * (np.diag(r) / np.abs(np.diag(r)))


def random_gate(rng, loss=0.2):
    """Random 4x4 matrix with singular values in [1 - loss, 1]."""
    u, v = random_unitary(rng), random_unitary(rng)
    s = rng.uniform(1 - loss, 1.0, size=4)
    return u @ np.diag(s) @ v


ACCEPTANCE_LINES = []


@pytest.fixture
def acceptance():
    """Record one pass/fail line per acceptance criterion."""

    def record(label, passed, detail):
        line = f"[{'PASS' if passed else 'FAIL'}] {label}: {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
