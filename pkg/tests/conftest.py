import numpy as np
import pytest

from holo_crlb.channel import Beamforming, build_tables
from holo_crlb.opt import init_vars
from holo_crlb.scene import SystemConfig, sample_positions


@pytest.fixture(scope="session")
def desk_cfg():
    return SystemConfig.desk()


@pytest.fixture(scope="session")
def desk_tables(desk_cfg):
    return build_tables(desk_cfg)


@pytest.fixture(scope="session")
def desk_samples(desk_cfg):
    return sample_positions(desk_cfg.roi, 3, 11)


def random_bf(cfg, seed):
    """Random strictly feasible beamforming with non-constant combiners."""
    rng = np.random.default_rng(seed)
    bf = init_vars(cfg, seed)
    s = rng.standard_normal(bf.S.shape) + 1j * rng.standard_normal(bf.S.shape)
    power = np.sum(np.abs(s) ** 2, axis=(1, 3), keepdims=True)
    return Beamforming(bf.C, s * np.sqrt(cfg.max_power / power))


@pytest.fixture
def desk_bf(desk_cfg):
    return random_bf(desk_cfg, 5)


ACCEPTANCE_LINES = []


def report_criterion(number, passed, detail):
    """Record one acceptance line; printed again in the terminal summary."""
    line = f"[{'PASS' if passed else 'FAIL'}] criterion {number:>2}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return passed


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[2].rstrip(":"))
                           if s.split()[1] == "criterion" else 99):
            terminalreporter.write_line(line)
