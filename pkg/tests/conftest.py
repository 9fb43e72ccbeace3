import dataclasses

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from ehwsn.config import SystemConfig, validate_config

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture(scope="session")
def cfg():
    return validate_config(SystemConfig())


@pytest.fixture(scope="session")
def cfg_python(cfg):
    return dataclasses.replace(cfg, solver=dataclasses.replace(cfg.solver, backend="python"))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# criterion -> list of (part, ok, detail), filled by test_acceptance.py
ACCEPTANCE: dict = {}


@pytest.fixture(scope="session")
def acceptance():
    def record(criterion, title, part, ok, detail):
        ACCEPTANCE.setdefault((criterion, title), []).append((part, bool(ok), detail))
        print(f"criterion {criterion} {part}: {'PASS' if ok else 'FAIL'} ({detail})")
    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for (n, title), parts in sorted(ACCEPTANCE.items()):
        ok = all(p[1] for p in parts)
        tr.write_line(f"[{'PASS' if ok else 'FAIL'}] criterion {n} {title}: " +
                      "; ".join(f"{p}={'ok' if good else 'FAILED'} ({d})" for p, good, d in parts))
