import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from fdd2d import dataset
from fdd2d.config import ScenarioConfig, default_power_levels


ACCEPTANCE_LINES = []


@pytest.fixture(scope="session")
def acceptance_log():
    """Record one summary line per acceptance criterion."""
    def log(cid, passed, detail):
        line = f"criterion {cid}: {'PASS' if passed else 'FAIL'}  {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        return passed
    return log


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda l: int(l.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def config():
    return ScenarioConfig()


@pytest.fixture(scope="session")
def small_config():
    """N=K=2 with four power levels: 1024 combinations per sample."""
    return ScenarioConfig(power_levels=default_power_levels(4))


@pytest.fixture(scope="session")
def tiny_config():
    return ScenarioConfig(N=1, K=1, power_levels=default_power_levels(2))


@pytest.fixture(scope="session")
def samples(config):
    """A fixed batch of labeled samples at the default scenario."""
    ds = dataset.generate_and_label(config, 64, seed=11, split="fixture")
    return ds.with_stats(dataset.compute_stats(ds.csi), "self")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def random_allocation(rng, config):
    from fdd2d.rates import Allocation
    return Allocation(rng.integers(0, config.K, config.N), rng.integers(0, config.L, 2 * config.N))
