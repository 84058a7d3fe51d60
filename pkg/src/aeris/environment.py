"""Grid-world MDP for swarm path planning.

UAVs sit at cell centers at constant altitude and act round-robin within a
time slot. Coverage of a placement is the union of per-cell coverage sets,
which are precomputed as Python-int bitsets for the current phase
configuration, so scoring the nine candidate moves is a handful of ORs.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import kernels
from .channel import ChannelParams, covered_mask, data_rate, link_tensors, phase_matrix
from .energy import EnergyParams, step_energy
from .scenario import SERVICE_CLASSES, ScenarioError, ScenarioState

HOVER, NORTH, NORTH_EAST, EAST, SOUTH_EAST, SOUTH, SOUTH_WEST, WEST, NORTH_WEST = range(9)
N_ACTIONS = 9
ACTION_NAMES = ("hover", "N", "NE", "E", "SE", "S", "SW", "W", "NW")
# (dcol, drow); north is increasing row / y
ACTION_DELTAS = ((0, 0), (0, 1), (1, 1), (1, 0), (1, -1), (0, -1), (-1, -1), (-1, 0), (-1, 1))


class EpisodeFinishedError(RuntimeError):
    """step() called on an episode that already ended."""


@dataclass(frozen=True)
class EnvConfig:
    horizon: int = 100  # slots per episode
    dt_s: float = 1.0
    d_max_m: float = 20.0
    shaped_reward: bool = False

    def __post_init__(self):
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")
        if not self.dt_s > 0:
            raise ValueError("dt_s must be positive")
        if self.d_max_m < 0:
            raise ValueError("d_max_m must be non-negative")


@dataclass(frozen=True)
class MdpState:
    cells: tuple[int, ...]
    batteries: tuple[float, ...]
    current_uav: int
    slot: int
    vector: np.ndarray = field(compare=False, repr=False)


@dataclass(frozen=True)
class MdpTransition:
    state: np.ndarray
    action: int
    reward: float
    next_state: np.ndarray
    terminal: bool


@dataclass(frozen=True)
class ConstraintReport:
    ok: bool
    low_battery: tuple[int, ...] = ()
    too_close: tuple[tuple[int, int], ...] = ()

    def __bool__(self):
        return self.ok


def constraints_ok(positions, batteries, battery_min_j: float, d_max_m: float) -> ConstraintReport:
    """Battery reserve and pairwise separation (>= 2 * d_max, inclusive) checks."""
    pos = np.asarray(positions, dtype=np.float64).reshape(-1, 3)
    low = tuple(u for u, b in enumerate(batteries) if b < battery_min_j)
    close = []
    for u in range(len(pos)):
        for k in range(u + 1, len(pos)):
            if float(np.sqrt(np.sum((pos[u] - pos[k]) ** 2))) < 2.0 * d_max_m:
                close.append((u, k))
    return ConstraintReport(not low and not close, low, tuple(close))


class CoverageModel:
    """Per-cell SNR table and coverage bitsets for a fixed phase configuration."""

    def __init__(self, scenario: ScenarioState, params: ChannelParams, phases=None,
                 chunk_elems: int = 2_000_000):
        self.scenario = scenario
        self.params = params
        self.phases = phase_matrix(phases, scenario.ris)
        area = scenario.area
        centers = area.centers()
        cells_xyz = np.column_stack([centers, np.full(area.n_cells, scenario.altitude_m)])
        N = scenario.n_ues
        R = len(scenario.ris)
        M = scenario.ris[0].element_count if R else 0
        per_cell = max(1, R * N * max(M, 1))
        step = max(1, chunk_elems // per_cell)
        table = np.zeros((area.n_cells, N))
        if N:
            for lo in range(0, area.n_cells, step):
                hi = min(area.n_cells, lo + step)
                direct, coef = link_tensors(cells_xyz[lo:hi], scenario.ue_positions, scenario.ris, params)
                snr, _, _ = kernels.best_snr(direct[:, None], coef[:, None], self.phases, params.snr_scale)
                table[lo:hi] = snr
        self.snr_table = table
        self.covered = covered_mask(table, scenario.ue_classes, params) if N else np.zeros((area.n_cells, 0), bool)
        self.bits = [_to_bitset(row) for row in self.covered]
        self.class_masks = {j: _to_bitset(np.asarray(scenario.ue_classes) == j) for j in SERVICE_CLASSES}
        self._cache: dict[tuple[int, ...], int] = {}

    def union(self, cells: Sequence[int]) -> int:
        key = tuple(cells)
        got = self._cache.get(key)
        if got is None:
            got = 0
            for c in key:
                got |= self.bits[c]
            if len(self._cache) < 500_000:
                self._cache[key] = got
        return got

    def coverage(self, cells: Sequence[int]) -> int:
        return self.union(cells).bit_count()

    def per_class(self, cells: Sequence[int]) -> dict[int, int]:
        u = self.union(cells)
        return {j: (u & m).bit_count() for j, m in self.class_masks.items()}

    def covered_vector(self, cells: Sequence[int]) -> np.ndarray:
        if not len(cells):
            return np.zeros(self.scenario.n_ues, dtype=bool)
        return self.covered[list(cells)].any(axis=0)

    def best_snr(self, cells: Sequence[int]) -> np.ndarray:
        if not len(cells):
            return np.zeros(self.scenario.n_ues)
        return self.snr_table[list(cells)].max(axis=0)


def _to_bitset(flags) -> int:
    """Bit ``i`` set iff ``flags[i]``."""
    packed = np.packbits(np.asarray(flags, dtype=bool), bitorder="little")
    return int.from_bytes(packed.tobytes(), "little")


def coverage_count(scenario: ScenarioState, phases, params: ChannelParams, uav_positions=None):
    """Covered UEs for the given (or the scenario's) UAV positions: ``(total, per_class)``.

    UAVs may sit anywhere here, not just at cell centers.
    """
    if uav_positions is None:
        uav_positions = [u.position for u in scenario.uavs]
    uav_positions = np.asarray(uav_positions, dtype=np.float64).reshape(-1, 3)
    if uav_positions.shape[0] == 0 or scenario.n_ues == 0:
        return 0, {j: 0 for j in SERVICE_CLASSES}
    direct, coef = link_tensors(uav_positions, scenario.ue_positions, scenario.ris, params)
    snr, _, _ = kernels.best_snr(direct[None], coef[None], phase_matrix(phases, scenario.ris), params.snr_scale)
    mask = covered_mask(snr[0], scenario.ue_classes, params)
    per = {j: int(np.sum(mask & (scenario.ue_classes == j))) for j in SERVICE_CLASSES}
    return int(mask.sum()), per


class UavSwarmEnv:
    """Round-robin multi-UAV grid environment (one MDP step = one UAV move)."""

    def __init__(self, scenario: ScenarioState, channel: ChannelParams = ChannelParams(),
                 energy: EnergyParams = EnergyParams(), config: EnvConfig = EnvConfig(),
                 phases=None, record_trace: bool = False):
        self.scenario = scenario
        self.channel = channel
        self.energy = energy
        self.config = config
        self.area = scenario.area
        self.n_uavs = scenario.n_uavs
        if self.n_uavs > self.area.n_cells:
            raise ScenarioError(f"{self.n_uavs} UAVs do not fit in {self.area.n_cells} cells")
        self.record_trace = record_trace
        self.trace: list[dict] = []
        self.G = self.area.n_cells
        self.obs_dim = 2 + 2 * self.G + 3 * self.G + 1
        self._centers = self.area.centers()
        self._neighbors = self._build_neighbors()
        speed = self.area.cell_size_m / config.dt_s
        self.move_energy = [step_energy(0.0, config.dt_s, energy)]
        for dc, dr in ACTION_DELTAS[1:]:
            v = speed * (math.sqrt(2.0) if dc and dr else 1.0)
            self.move_energy.append(step_energy(v, config.dt_s, energy))
        self._ue_cells = scenario.ue_cells() if scenario.n_ues else np.zeros(0, dtype=np.int64)
        counts = np.zeros((3, self.G))
        for j in SERVICE_CLASSES:
            counts[j - 1] = np.bincount(self._ue_cells[scenario.ue_classes == j], minlength=self.G)
        total = counts.sum(axis=0)
        self._cell_norm = max(1.0, float(total.max()) if self.G else 1.0)
        self._density = (counts / self._cell_norm).ravel()
        self._enc_cache: dict = {}
        self.set_phases(phases)
        self._done = True
        self.cells: tuple[int, ...] = scenario.uav_cells()
        self.batteries: tuple[float, ...] = tuple(u.battery_j for u in scenario.uavs)
        self.current = 0
        self.slot = 0
        self.steps = 0
        self.truncated = False

    def _build_neighbors(self):
        out = []
        cols, rows = self.area.cols, self.area.rows
        for c in range(self.G):
            col, row = self.area.col_row(c)
            row_n = []
            for dc, dr in ACTION_DELTAS:
                nc, nr = col + dc, row + dr
                row_n.append(nr * cols + nc if 0 <= nc < cols and 0 <= nr < rows else -1)
            out.append(tuple(row_n))
        return out

    # phases -------------------------------------------------------------
    def set_phases(self, phases) -> None:
        self.phases = phase_matrix(phases, self.scenario.ris)
        self.coverage_model = CoverageModel(self.scenario, self.channel, self.phases)
        self._enc_cache.clear()

    # bookkeeping --------------------------------------------------------
    @property
    def done(self) -> bool:
        return self._done

    def positions(self, cells: Sequence[int] | None = None) -> np.ndarray:
        cells = self.cells if cells is None else cells
        xy = self._centers[list(cells)] if len(cells) else np.zeros((0, 2))
        return np.column_stack([xy, np.full(len(cells), self.scenario.altitude_m)])

    def reset(self, seed: int | None = None) -> np.ndarray:
        """Start an episode; ``seed`` draws distinct random start cells, ``None`` uses the scenario's."""
        if seed is None:
            cells = self.scenario.uav_cells()
            if len(set(cells)) != len(cells):
                raise ScenarioError("scenario places two UAVs in one cell")
        else:
            # a prefix of one permutation: UAV k starts in the same cell whatever the swarm size
            perm = np.random.default_rng(seed).permutation(self.G)
            cells = tuple(int(c) for c in perm[:self.n_uavs])
        self.cells = cells
        cap = self.scenario.battery_capacity_j
        self.batteries = tuple(cap for _ in range(self.n_uavs))
        self.current = 0
        self.slot = 0
        self.steps = 0
        self.truncated = False
        self._done = self.n_uavs == 0
        self.trace = []
        return self.observe()

    def snapshot(self) -> MdpState:
        return MdpState(self.cells, self.batteries, self.current, self.slot, self.observe())

    def encode(self, cells: Sequence[int], current: int) -> np.ndarray:
        key = (tuple(cells), current)
        vec = self._enc_cache.get(key)
        if vec is not None:
            return vec
        G = self.G
        vec = np.zeros(self.obs_dim)
        if cells:
            col, row = self.area.col_row(cells[current])
            vec[0] = col / (self.area.cols - 1) if self.area.cols > 1 else 0.0
            vec[1] = row / (self.area.rows - 1) if self.area.rows > 1 else 0.0
            occ = np.bincount(np.asarray(cells), minlength=G)
            vec[2:2 + G] = occ / self.n_uavs
            cov = self.coverage_model.covered_vector(cells)
            if cov.any():
                vec[2 + G:2 + 2 * G] = np.bincount(self._ue_cells[cov], minlength=G) / self._cell_norm
        vec[2 + 2 * G:2 + 5 * G] = self._density
        vec[-1] = current / (self.n_uavs - 1) if self.n_uavs > 1 else 0.0
        vec.setflags(write=False)
        if len(self._enc_cache) < 200_000:
            self._enc_cache[key] = vec
        return vec

    def observe(self) -> np.ndarray:
        return self.encode(self.cells, self.current)

    def coverage(self, cells: Sequence[int] | None = None) -> int:
        return self.coverage_model.coverage(self.cells if cells is None else cells)

    # dynamics -----------------------------------------------------------
    def _collides(self, cells: Sequence[int], uav: int, target: int) -> bool:
        limit = 2.0 * self.config.d_max_m
        tx, ty = self._centers[target]
        for k, c in enumerate(cells):
            if k == uav:
                continue
            ox, oy = self._centers[c]
            if math.hypot(tx - ox, ty - oy) < limit:
                return True
        return False

    def resolve(self, cells: Sequence[int], batteries: Sequence[float], uav: int, action: int):
        """Outcome of ``action`` for ``uav``: ``(valid, new_cells, new_batteries, battery_ok)``.

        Invalid moves (off-grid or colliding) become hovers.
        """
        if not 0 <= action < N_ACTIONS:
            raise ValueError(f"action must be in 0..8, got {action}")
        target = self._neighbors[cells[uav]][action]
        valid = target >= 0 and (action == HOVER or not self._collides(cells, uav, target))
        if not valid:
            target = cells[uav]
            spent = self.move_energy[HOVER]
        else:
            spent = self.move_energy[action]
        level = batteries[uav] - spent
        new_cells = tuple(target if k == uav else c for k, c in enumerate(cells))
        new_batt = tuple(level if k == uav else b for k, b in enumerate(batteries))
        return valid, new_cells, new_batt, level >= self.scenario.battery_min_j

    def candidate_outcomes(self, cells=None, batteries=None, uav=None):
        """Coverage after each of the nine moves (None for moves that are invalid or drain the reserve)."""
        cells = self.cells if cells is None else cells
        batteries = self.batteries if batteries is None else batteries
        uav = self.current if uav is None else uav
        out = []
        for a in range(N_ACTIONS):
            valid, nc, _, ok = self.resolve(cells, batteries, uav, a)
            out.append(self.coverage_model.coverage(nc) if valid and ok else None)
        return out

    def reward_for(self, action: int, cells=None, batteries=None, uav=None) -> float:
        cells = self.cells if cells is None else cells
        batteries = self.batteries if batteries is None else batteries
        uav = self.current if uav is None else uav
        valid, nc, _, ok = self.resolve(cells, batteries, uav, action)
        if not (valid and ok):
            return 0.0
        if self.config.shaped_reward:
            return float(self.coverage_model.coverage(nc) - self.coverage_model.coverage(cells))
        outcomes = self.candidate_outcomes(cells, batteries, uav)
        best = max(v for v in outcomes if v is not None)
        return 1.0 if outcomes[action] == best else 0.0

    def step(self, action: int):
        """Move the current UAV; returns ``(observation, reward, done)``."""
        if self._done:
            raise EpisodeFinishedError("episode has finished; call reset()")
        action = int(action)
        uav = self.current
        valid, nc, nb, ok = self.resolve(self.cells, self.batteries, uav, action)
        if not ok:
            # the move would breach the reserve: end the episode instead
            self._done = True
            self.truncated = False
            self.steps += 1
            self._record(uav, action, 0.0, terminated=True)
            return self.observe(), 0.0, True
        reward = self.reward_for(action)
        self.cells, self.batteries = nc, nb
        self.steps += 1
        self.current = (uav + 1) % self.n_uavs
        if self.current == 0:
            self.slot += 1
        if self.slot >= self.config.horizon:
            self._done = True
            self.truncated = True
        self._record(uav, action, reward, terminated=False)
        return self.observe(), reward, self._done

    def _record(self, uav, action, reward, terminated):
        if not self.record_trace:
            return
        row = {"step": self.steps, "slot": self.slot, "uav": uav, "action": ACTION_NAMES[action],
               "reward": reward, "coverage": self.coverage(), "terminated": int(terminated)}
        pos = self.positions()
        for k in range(self.n_uavs):
            row[f"uav{k}_x"] = float(pos[k, 0])
            row[f"uav{k}_y"] = float(pos[k, 1])
            row[f"uav{k}_battery_j"] = float(self.batteries[k])
        self.trace.append(row)

    def write_trace(self, path) -> None:
        if not self.trace:
            raise ValueError("no trace recorded")
        with open(path, "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=list(self.trace[0]))
            writer.writeheader()
            writer.writerows(self.trace)

    def check_constraints(self) -> ConstraintReport:
        return constraints_ok(self.positions(), self.batteries, self.scenario.battery_min_j, self.config.d_max_m)


Policy = Callable[[UavSwarmEnv, np.ndarray], int]


@dataclass
class EpisodeResult:
    placements: list[tuple[int, ...]]  # UAV cells at the end of every slot
    rewards: list[float]
    slot_coverage: list[int]
    batteries: tuple[float, ...]
    steps: int
    terminated_early: bool
    constraint_violations: int = 0

    @property
    def total_coverage(self) -> int:
        return int(sum(self.slot_coverage))


def run_episode(env: UavSwarmEnv, policy: Policy, seed: int | None = None,
                check_constraints: bool = False) -> EpisodeResult:
    obs = env.reset(seed)
    placements, rewards, slot_cov = [], [], []
    violations = 0
    done = env.done
    while not done:
        slot_before = env.slot
        obs, r, done = env.step(policy(env, obs))
        rewards.append(r)
        if check_constraints and not env.check_constraints():
            violations += 1
        if env.slot != slot_before or (done and env.current != 0):
            placements.append(env.cells)
            slot_cov.append(env.coverage())
    return EpisodeResult(placements, rewards, slot_cov, env.batteries, env.steps,
                         not env.truncated, violations)


def placement_metrics(scenario: ScenarioState, params: ChannelParams, placements, phases):
    """Slot-averaged QoS satisfaction (%), throughput (bps) and per-class satisfaction for a path.

    Throughput counts only UEs whose class threshold is met, as in the phase cost.
    """
    if not placements or scenario.n_ues == 0:
        return {"qos_pct": 0.0, "throughput_bps": 0.0, "per_class_pct": {j: 0.0 for j in SERVICE_CLASSES}}
    uniq: dict[tuple[int, ...], int] = {}
    for p in placements:
        uniq[tuple(p)] = uniq.get(tuple(p), 0) + 1
    keys = list(uniq)
    weights = np.array([uniq[k] for k in keys], dtype=np.float64)
    direct, coef = placement_tensors(scenario, params, keys)
    snr, _, _ = kernels.best_snr(direct, coef, phase_matrix(phases, scenario.ris), params.snr_scale)
    mask = covered_mask(snr, scenario.ue_classes, params)
    rates = np.where(mask, data_rate(snr, params), 0.0).sum(axis=1)
    total = weights.sum()
    N = scenario.n_ues
    per = {}
    for j in SERVICE_CLASSES:
        sel = scenario.ue_classes == j
        per[j] = 100.0 * float(weights @ mask[:, sel].sum(axis=1)) / (total * max(1, int(sel.sum())))
    return {
        "qos_pct": 100.0 * float(weights @ mask.sum(axis=1)) / (total * N),
        "throughput_bps": float(weights @ rates) / total,
        "per_class_pct": per,
    }


def placement_tensors(scenario: ScenarioState, params: ChannelParams, placements):
    """Stack link tensors for a list of cell placements: ``direct[S,U,N]``, ``coef[S,U,R,N,M]``."""
    area = scenario.area
    cells = sorted({c for p in placements for c in p})
    centers = np.array([area.cell_center(c) for c in cells]).reshape(-1, 2)
    xyz = np.column_stack([centers, np.full(len(cells), scenario.altitude_m)])
    d_all, c_all = link_tensors(xyz, scenario.ue_positions, scenario.ris, params)
    where = {c: k for k, c in enumerate(cells)}
    idx = np.array([[where[c] for c in p] for p in placements], dtype=np.int64)
    return d_all[idx], c_all[idx]
