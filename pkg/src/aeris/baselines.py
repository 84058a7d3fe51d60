"""Comparison planners: random-waypoint mobility and exact brute-force path search."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .environment import ACTION_DELTAS, HOVER, N_ACTIONS, UavSwarmEnv


class SearchTooLargeError(ValueError):
    """The exhaustive search would exceed the configured combinatorial cap."""


def _action_toward(env: UavSwarmEnv, cell: int, target: int) -> int:
    col, row = env.area.col_row(cell)
    tcol, trow = env.area.col_row(target)
    step = (int(np.sign(tcol - col)), int(np.sign(trow - row)))
    return ACTION_DELTAS.index(step)


class RandomWaypointPolicy:
    """Each UAV walks one cell per slot toward a uniformly drawn waypoint cell.

    A fresh waypoint is drawn on arrival, and that step is a hover.
    """

    def __init__(self, rng: np.random.Generator):
        self.rng = rng
        self.waypoints: dict[int, int] = {}

    def reset(self) -> None:
        self.waypoints.clear()

    def draw(self, env: UavSwarmEnv) -> int:
        return int(self.rng.integers(env.area.n_cells))

    def __call__(self, env: UavSwarmEnv, obs=None) -> int:
        uav = env.current
        cell = env.cells[uav]
        target = self.waypoints.get(uav)
        if target is None:
            target = self.waypoints[uav] = self.draw(env)
        if target == cell:
            self.waypoints[uav] = self.draw(env)
            return HOVER
        return _action_toward(env, cell, target)


def rwp_policy(env: UavSwarmEnv, rng: np.random.Generator) -> RandomWaypointPolicy:
    return RandomWaypointPolicy(rng)


@dataclass
class BruteForceResult:
    actions: tuple[int, ...]  # actions in MDP step order (round-robin over the movers)
    coverage: int  # cumulative coverage over the searched slots
    evaluated: int


def brute_force_paths(env: UavSwarmEnv, horizon: int, cap: int,
                      movers: Sequence[int] | None = None) -> BruteForceResult:
    """Exact maximiser of cumulative slot-end coverage over ``horizon`` slots.

    Starts from the environment's current state without modifying it. Only
    ``movers`` act (default: all UAVs); the others hover. Sequences whose
    moves are invalid or would breach the battery reserve are excluded, so
    every returned plan satisfies the constraints at every step. Ties are
    broken by lexicographic action order.
    """
    movers = tuple(range(env.n_uavs)) if movers is None else tuple(movers)
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    size = N_ACTIONS ** (horizon * len(movers))
    if size > cap:
        raise SearchTooLargeError(f"9^({horizon}*{len(movers)}) = {size} sequences exceed cap {cap}; "
                                  "use a smaller instance or horizon")
    if env.done:
        raise ValueError("environment episode has finished")
    horizon = min(horizon, env.config.horizon - env.slot)
    if horizon < 1:
        raise ValueError("no slots left in the episode")
    # moves of the non-movers inside a slot are hovers; collapse to the mover order
    order = [u for u in range(env.n_uavs) if u in movers]
    if env.current in order:
        start = order.index(env.current)
        order = order[start:] + order[:start]
    cov = env.coverage_model
    evaluated = 0
    best_cov = -1
    best_seq: tuple[int, ...] = ()

    def search(cells, batts, depth, acc, seq):
        nonlocal evaluated, best_cov, best_seq
        slot, k = divmod(depth, len(order))
        if slot == horizon:
            evaluated += 1
            if acc > best_cov:
                best_cov, best_seq = acc, seq
            return
        uav = order[k]
        for a in range(N_ACTIONS):
            valid, nc, nb, ok = env.resolve(cells, batts, uav, a)
            if not (valid and ok):
                continue
            gained = acc + cov.coverage(nc) if k == len(order) - 1 else acc
            search(nc, nb, depth + 1, gained, seq + (a,))

    search(env.cells, env.batteries, 0, 0, ())
    if best_cov < 0:
        return BruteForceResult((), 0, evaluated)
    return BruteForceResult(best_seq, best_cov, evaluated)


def lookahead_depth(cap: int, movers: int = 1) -> int:
    """Largest horizon whose joint action space stays within ``cap``."""
    h = 0
    while N_ACTIONS ** ((h + 1) * movers) <= cap:
        h += 1
    return h


class BruteForcePlanner:
    """Receding-horizon planner: each UAV, when it acts, runs an exact search over its own
    next ``depth`` moves (others frozen) with ``9**depth <= cap``, and executes the first move.
    """

    def __init__(self, cap: int = 1000):
        self.depth = lookahead_depth(cap, 1)
        if self.depth < 1:
            raise SearchTooLargeError(f"cap {cap} admits no lookahead")
        self.cap = cap

    def __call__(self, env: UavSwarmEnv, obs=None) -> int:
        depth = min(self.depth, env.config.horizon - env.slot)
        plan = brute_force_paths(env, depth, self.cap, movers=(env.current,))
        return plan.actions[0] if plan.actions else HOVER


def replay_actions(env: UavSwarmEnv, actions: Sequence[int], seed=None) -> int:
    """Run an action sequence from ``reset(seed)`` and return cumulative slot-end coverage."""
    env.reset(seed)
    total = 0
    for a in actions:
        if env.done:
            break
        _, _, _ = env.step(a)
        if env.current == 0:
            total += env.coverage()
    return total
