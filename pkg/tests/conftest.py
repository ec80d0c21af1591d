import time

import numpy as np
import pytest

from fddmimo import dataset as ds
from fddmimo import reggan
from fddmimo.channel import PathParams, SystemConfig
from fddmimo.linalg import make_rng


def random_params(rng, L=5, tau_max=90e-9):
    """A delay-sorted random path set with both phase vectors."""
    return PathParams.sorted_by_delay(
        rng.uniform(1e-4, 1e-3, L), rng.uniform(5e-9, tau_max, L),
        rng.uniform(0.0, 2 * np.pi, L), rng.uniform(0.0, 2 * np.pi, L),
        rng.uniform(0.0, 2 * np.pi, L))


@pytest.fixture
def rng():
    return make_rng(1234)


@pytest.fixture(scope="session")
def small_cfg():
    return SystemConfig(M=8, K=4, L=3, p=4)


@pytest.fixture(scope="session")
def small_dataset():
    return ds.generate(ds.ScenarioSpec(user_count=600, seed=3))


@pytest.fixture(scope="session")
def small_model(small_dataset):
    """A briefly trained prior; good enough for plumbing, not for accuracy."""
    return reggan.train(small_dataset, reggan.GanConfig(epochs=60, seed=1))


# wall time of session-scoped setup, for runtime budgets that include it
SETUP_SECONDS = {}


@pytest.fixture(scope="session")
def desk_dataset():
    t0 = time.perf_counter()
    data = ds.generate(ds.ScenarioSpec())
    SETUP_SECONDS["desk_dataset"] = time.perf_counter() - t0
    return data


@pytest.fixture(scope="session")
def desk_model(desk_dataset):
    """Desk-scale prior: 20k users, batch 256, 3000 epochs."""
    t0 = time.perf_counter()
    model = reggan.train(desk_dataset, reggan.GanConfig())
    SETUP_SECONDS["desk_model"] = time.perf_counter() - t0
    return model


# --- acceptance report ----------------------------------------------------

_VERDICTS = []


@pytest.fixture
def verdict():
    """``verdict(n, ok, detail)`` records one acceptance line and asserts ``ok``."""
    def record(n, ok, detail):
        line = f"criterion {n:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
        _VERDICTS.append((n, line))
        print(line)
        assert ok, line
    return record


def pytest_terminal_summary(terminalreporter):
    if _VERDICTS:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(_VERDICTS):
            terminalreporter.write_line(line)
