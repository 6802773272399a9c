import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def random_hermitian(rng, n, pd=False):
    X = rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))
    A = X @ X.conj().T if pd else X + X.conj().T
    return A + (n * np.eye(n) if pd else 0)


def small_scenario_dict(**over):
    base = {
        "preset": "paper",
        "bands": {"M_L": 3, "M_H": 3},
        "users": {"K": 2},
        "search": {"zeta": 3, "I_PS": 2},
        "seeds": {"master": 11, "ensemble_size": 2},
    }
    for key, value in over.items():
        if isinstance(value, dict) and isinstance(base.get(key), dict):
            base[key] = {**base[key], **value}
        else:
            base[key] = value
    return base


ACCEPTANCE_LINES = []


def report(criterion, ok, detail):
    """Record and print one acceptance line; returns ``ok`` for asserting."""
    line = f"[{'PASS' if ok else 'FAIL'}] criterion {criterion}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
