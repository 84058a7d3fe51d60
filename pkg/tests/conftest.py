import numpy as np
import pytest
from hypothesis import settings

from aeris.channel import ChannelParams
from aeris.config import load_config
from aeris.scenario import AreaGrid, ClusterSpec, generate_scenario, make_ris

# timing-sensitive deadlines are noisy on a shared single core
settings.register_profile("default", deadline=None)
settings.load_profile("default")

_REPORT: list[tuple[str, bool, str]] = []


@pytest.fixture
def criterion():
    """Record one acceptance line: ``criterion(name, passed, detail)``."""

    def record(name: str, passed: bool, detail: str = "") -> bool:
        _REPORT.append((name, bool(passed), detail))
        print(f"{'PASS' if passed else 'FAIL'}  {name}  {detail}")
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if not _REPORT:
        return
    terminalreporter.section("acceptance criteria")
    for name, ok, detail in _REPORT:
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {name}  {detail}")


@pytest.fixture(scope="session")
def desk_cfg():
    return load_config("desk", environ={})


@pytest.fixture(scope="session")
def desk_scenario(desk_cfg):
    return desk_cfg.build_scenario()


@pytest.fixture
def small_scenario():
    """3x3 grid, 12 UEs, 2 UAVs, one 4-element RIS."""
    area = AreaGrid(120.0, 120.0, 40.0)
    ris = make_ris([(60.0, 110.0, 15.0)], 4, 2)
    return generate_scenario(3, area, 12, ClusterSpec(2, 2.0, 20.0), 2, ris)


@pytest.fixture
def desk_channel(desk_cfg):
    return desk_cfg.channel


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def default_channel():
    return ChannelParams()


MICRO = {
    "training": {"episodes": 8, "batch_size": 8}, "env": {"horizon": 3},
    "joint": {"rounds": 1, "refresh_episodes": 2, "rollout_seeds": 1},
    "pso": {"npop": 4, "itrmax": 3}, "brute_force": {"cap": 81, "phase_samples": 8},
    "methods": ["drl_dqn", "drl_ac", "brute_force", "rwp"], "seeds": [0, 1],
}


@pytest.fixture
def micro_cfg():
    """Sub-second experiment config on the desk scenario: ``micro_cfg(**section_overrides)``."""
    from aeris.config import build_config, deep_merge, load_config_dict

    def make(**over):
        return build_config(deep_merge(deep_merge(load_config_dict("tiny", environ={}), MICRO), over))

    return make
