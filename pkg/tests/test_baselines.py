import itertools

import numpy as np
import pytest

from aeris.baselines import (
    BruteForcePlanner, RandomWaypointPolicy, SearchTooLargeError, brute_force_paths, lookahead_depth,
    replay_actions,
)
from aeris.channel import ChannelParams
from aeris.environment import EAST, HOVER, EnvConfig, UavSwarmEnv, run_episode
from aeris.scenario import AreaGrid, ClusterSpec, generate_scenario

# weak transmitter: only cells 0, 1 and 3 (around the corner UE) cover it
WEAK = ChannelParams(tx_power_w=3e-13)


@pytest.fixture
def corner_env():
    area = AreaGrid(120.0, 120.0, 40.0)
    s = generate_scenario(0, area, 1, ClusterSpec(1, 2.0, 1.0, centers=((20.0, 20.0),)), 1)
    env = UavSwarmEnv(s, WEAK, config=EnvConfig(horizon=2))
    assert [int(c) for c in env.coverage_model.covered[:, 0]] == [1, 1, 0, 1, 0, 0, 0, 0, 0]
    return env


def test_rwp_hovers_and_redraws_on_arrival(small_scenario):
    env = UavSwarmEnv(small_scenario, config=EnvConfig(horizon=3))
    env.reset(0)
    pol = RandomWaypointPolicy(np.random.default_rng(0))
    pol.waypoints[0] = env.cells[0]
    assert pol(env) == HOVER and 0 in pol.waypoints


def test_rwp_follows_straight_line(small_scenario):
    env = UavSwarmEnv(small_scenario, config=EnvConfig(horizon=3))
    env.reset(0)
    env.cells = (3, 8)
    pol = RandomWaypointPolicy(np.random.default_rng(0))
    pol.waypoints[0] = 5
    assert pol(env) == EAST


def test_rwp_waypoints_are_uniform(small_scenario):
    env = UavSwarmEnv(small_scenario)
    pol = RandomWaypointPolicy(np.random.default_rng(1))
    counts = np.bincount([pol.draw(env) for _ in range(10_000)], minlength=9)
    p = 1 / 9
    sigma = np.sqrt(10_000 * p * (1 - p))
    assert np.all(np.abs(counts - 10_000 * p) <= 3 * sigma)


def test_rwp_rollouts_stay_valid(small_scenario):
    env = UavSwarmEnv(small_scenario, config=EnvConfig(horizon=30))
    pol = RandomWaypointPolicy(np.random.default_rng(2))
    res = run_episode(env, pol, seed=3, check_constraints=True)
    assert res.constraint_violations == 0 and len(res.placements) == 30


def test_brute_force_horizon_one_is_single_step_argmax(corner_env):
    env = corner_env
    env.reset(None)
    for start in range(9):
        env.reset(None)
        env.cells = (start,)
        plan = brute_force_paths(env, 1, 9)
        outcomes = env.candidate_outcomes()
        assert plan.coverage == max(v for v in outcomes if v is not None)
        assert plan.actions[0] == outcomes.index(plan.coverage)


def test_brute_force_matches_enumeration_of_81_sequences(corner_env):
    env = corner_env
    for seed in range(4):
        env.reset(seed)
        plan = brute_force_paths(env, 2, 81)
        best = max(replay_actions(env, seq, seed) for seq in itertools.product(range(9), repeat=2))
        assert plan.coverage == best
        assert replay_actions(env, plan.actions, seed) == best


def test_brute_force_bounds_other_policies(small_scenario):
    env = UavSwarmEnv(small_scenario, config=EnvConfig(horizon=2))
    for seed in range(3):
        env.reset(seed)
        plan = brute_force_paths(env, 2, 9 ** 4)
        for k in range(3):
            rwp = run_episode(env, RandomWaypointPolicy(np.random.default_rng(k)), seed=seed)
            assert plan.coverage >= rwp.total_coverage
        assert plan.coverage >= run_episode(env, lambda e, o: HOVER, seed=seed).total_coverage


def test_brute_force_refuses_oversized_instances(small_scenario):
    env = UavSwarmEnv(small_scenario, config=EnvConfig(horizon=5))
    env.reset(0)
    with pytest.raises(SearchTooLargeError):
        brute_force_paths(env, 2, 1000)  # 9^(2*2) = 6561
    with pytest.raises(ValueError):
        brute_force_paths(env, 0, 1000)


def test_brute_force_is_deterministic_and_pure(small_scenario):
    env = UavSwarmEnv(small_scenario, config=EnvConfig(horizon=3))
    env.reset(1)
    before = (env.cells, env.batteries, env.current)
    a = brute_force_paths(env, 1, 81)
    b = brute_force_paths(env, 1, 81)
    assert a == b and (env.cells, env.batteries, env.current) == before


def test_lookahead_planner(corner_env):
    assert lookahead_depth(1000) == 3 and lookahead_depth(81, 2) == 1 and lookahead_depth(8) == 0
    with pytest.raises(SearchTooLargeError):
        BruteForcePlanner(8)
    res = run_episode(corner_env, BruteForcePlanner(1000), seed=2)
    assert res.total_coverage == 2
