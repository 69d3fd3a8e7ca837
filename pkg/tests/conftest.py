import numpy as np
import pytest

from d2dsched.scenario import ScenarioConfig


@pytest.fixture
def small_cfg():
    # 5 pairs, short links so most slots have a feasible rate
    return ScenarioConfig(
        n_pairs=5,
        d_min_m=10.0,
        d_max_m=40.0,
        k1_override=2,
        k2_override=6,
        gamma_th_db=10.0,
        v_weight=1e17,
        mc_samples=200,
        path_loss_model="power_law",
    )


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
