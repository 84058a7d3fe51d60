"""RIS phase-shift search: constricted PSO over quantized phases, plus the exhaustive oracle."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import kernels
from .channel import ChannelParams, link_tensors, ue_thresholds
from .environment import placement_tensors
from .scenario import ScenarioState

TWO_PI = 2.0 * math.pi


def phase_levels(bits: int) -> np.ndarray:
    """The feasible phase set ``{0, 2pi/W, ..., 2pi(W-1)/W}`` with ``W = 2**bits``."""
    W = 2 ** bits
    return np.arange(W) * (TWO_PI / W)


@dataclass(frozen=True, eq=False)
class PhaseConfig:
    """Quantized phases for every RIS: ``levels[r, m]`` indexes :func:`phase_levels`."""

    levels: np.ndarray
    bits: int

    def __post_init__(self):
        lv = np.asarray(self.levels, dtype=np.int64)
        if lv.ndim != 2:
            raise ValueError("levels must be a [R, M] array")
        if lv.size and (lv.min() < 0 or lv.max() >= 2 ** self.bits):
            raise ValueError("phase level outside 0..W-1")
        lv.setflags(write=False)
        object.__setattr__(self, "levels", lv)

    @property
    def phases_rad(self) -> np.ndarray:
        return phase_levels(self.bits)[self.levels]

    @classmethod
    def zeros(cls, n_ris: int, elements: int, bits: int) -> "PhaseConfig":
        return cls(np.zeros((n_ris, elements), dtype=np.int64), bits)

    def to_dict(self) -> dict:
        return {"bits": self.bits, "levels": self.levels.tolist()}

    @classmethod
    def from_dict(cls, doc: dict) -> "PhaseConfig":
        levels = np.asarray(doc["levels"], dtype=np.int64)
        return cls(levels.reshape(len(doc["levels"]), -1), int(doc["bits"]))

    def __eq__(self, other):
        if not isinstance(other, PhaseConfig):
            return NotImplemented
        return self.bits == other.bits and np.array_equal(self.levels, other.levels)


def wrap(phases):
    return np.mod(phases, TWO_PI)


def quantize(raw, bits: int, shape: tuple[int, int] | None = None) -> PhaseConfig:
    """Map each phase to the circularly nearest member of the feasible set."""
    raw = np.asarray(raw, dtype=np.float64)
    W = 2 ** bits
    step = TWO_PI / W
    k = np.rint(wrap(raw) / step).astype(np.int64) % W
    if shape is not None:
        k = k.reshape(shape)
    elif k.ndim != 2:
        k = k.reshape(1, -1)
    return PhaseConfig(k, bits)


def random_phases(n_ris: int, elements: int, bits: int, rng: np.random.Generator) -> PhaseConfig:
    return PhaseConfig(rng.integers(0, 2 ** bits, size=(n_ris, elements)), bits)


class PhaseProblem:
    """A fixed snapshot (one or more weighted UAV placements) to tune phases for.

    Cost is the weighted sum, over placements, of the best-link rates of the
    UEs that meet their service threshold. ``served_bonus`` (bps) is added
    per served UE; a large value ranks configurations by served count first
    and throughput second.
    """

    def __init__(self, direct, coef, params: ChannelParams, bits: int, service_classes,
                 weights=None, count_all: bool = False, served_bonus: float = 0.0):
        self.direct = np.ascontiguousarray(direct, dtype=np.float64)
        self.coef = np.ascontiguousarray(coef, dtype=np.complex128)
        self.params = params
        self.bits = int(bits)
        self.n_ris = self.coef.shape[2]
        self.elements = self.coef.shape[4]
        S = self.direct.shape[0]
        self.weights = np.ones(S) if weights is None else np.asarray(weights, dtype=np.float64)
        N = self.direct.shape[2]
        self.thresholds = np.zeros(N) if count_all else ue_thresholds(service_classes, params)
        if served_bonus < 0:
            raise ValueError("served_bonus must be non-negative")
        self.served_bonus = float(served_bonus)
        self._levels = phase_levels(self.bits)

    @property
    def shape(self) -> tuple[int, int]:
        return (self.n_ris, self.elements)

    @property
    def dim(self) -> int:
        return self.n_ris * self.elements

    @property
    def space_size(self) -> int:
        return (2 ** self.bits) ** self.dim

    @classmethod
    def from_placements(cls, scenario: ScenarioState, params: ChannelParams,
                        placements: Sequence[Sequence[int]], weights=None, **kw) -> "PhaseProblem":
        """Snapshot from cell placements; duplicates are merged into weights."""
        if weights is None:
            counts: dict[tuple[int, ...], float] = {}
            for p in placements:
                counts[tuple(p)] = counts.get(tuple(p), 0.0) + 1.0
            placements = list(counts)
            weights = [counts[p] for p in placements]
        direct, coef = placement_tensors(scenario, params, placements)
        return cls(direct, coef, params, _bits_of(scenario), scenario.ue_classes, weights, **kw)

    @classmethod
    def from_positions(cls, scenario: ScenarioState, params: ChannelParams, uav_positions=None,
                       **kw) -> "PhaseProblem":
        """Snapshot with UAVs at explicit positions (default: the scenario's)."""
        if uav_positions is None:
            uav_positions = [u.position for u in scenario.uavs]
        pos = np.asarray(uav_positions, dtype=np.float64).reshape(-1, 3)
        direct, coef = link_tensors(pos, scenario.ue_positions, scenario.ris, params)
        return cls(direct[None], coef[None], params, _bits_of(scenario), scenario.ue_classes, **kw)

    def cost_of_levels(self, levels) -> np.ndarray:
        """Costs for a batch of level arrays ``[P, R, M]`` (or a single ``[R, M]``)."""
        return self._rates(levels, self.served_bonus)

    def throughput_of_levels(self, levels) -> np.ndarray:
        """Like :meth:`cost_of_levels` but without the served-UE bonus (pure bits/s)."""
        return self._rates(levels, 0.0)

    def _rates(self, levels, bonus: float) -> np.ndarray:
        levels = np.asarray(levels, dtype=np.int64).reshape(-1, self.n_ris, self.elements)
        phases = self._levels[levels]
        return kernels.rate_sum_batch(self.direct, self.coef, phases, self.params.snr_scale,
                                      self.params.bandwidth_hz, self.weights, self.thresholds, bonus)

    def quantized_levels(self, raw) -> np.ndarray:
        W = 2 ** self.bits
        return np.rint(wrap(raw) / (TWO_PI / W)).astype(np.int64) % W

    def evaluate(self, config: PhaseConfig) -> float:
        return float(self.cost_of_levels(config.levels)[0])

    def throughput(self, config: PhaseConfig) -> float:
        return float(self.throughput_of_levels(config.levels)[0])


def _bits_of(scenario: ScenarioState) -> int:
    if not scenario.ris:
        raise ValueError("scenario has no RIS to configure")
    return scenario.ris[0].phase_bits


def evaluate_cost(position, problem: PhaseProblem) -> float:
    """Cost (bits/s) of a raw phase position after quantization."""
    return float(problem.cost_of_levels(problem.quantized_levels(position))[0])


@dataclass(frozen=True)
class PsoConfig:
    npop: int = 30
    itrmax: int = 100
    c1: float = 2.05
    c2: float = 2.05
    constriction_mode: str = "clerc"  # or "paper_formula"
    strict_paper: bool = False  # both attraction terms use the global best
    velocity_clamp: float = math.pi
    seed: int = 0

    def __post_init__(self):
        if self.npop < 1 or self.itrmax < 1:
            raise ValueError("npop and itrmax must be >= 1")
        if self.constriction_mode not in ("clerc", "paper_formula"):
            raise ValueError(f"unknown constriction mode {self.constriction_mode!r}")
        if self.constriction_mode == "clerc" and self.c1 + self.c2 <= 4:
            raise ValueError("clerc constriction needs c1 + c2 > 4")


def constriction(c1: float, c2: float, mode: str = "clerc") -> float:
    if not (c1 > 0 and c2 > 0):
        raise ValueError("acceleration coefficients must be positive")
    c = c1 + c2
    if mode == "paper_formula":
        return 1.0 - 1.0 / c + math.sqrt(abs(c * c - 4.0 * c)) / 2.0
    if mode == "clerc":
        if c <= 4:
            raise ValueError(f"clerc constriction needs c1 + c2 > 4, got {c}")
        return 2.0 / abs(2.0 - c - math.sqrt(c * c - 4.0 * c))
    raise ValueError(f"unknown constriction mode {mode!r}")


@dataclass(frozen=True)
class SwarmParticle:
    position: np.ndarray
    velocity: np.ndarray
    personal_best_position: np.ndarray
    personal_best_cost: float


@dataclass
class Swarm:
    positions: np.ndarray  # [npop, D], wrapped to [0, 2pi)
    velocities: np.ndarray
    pbest_positions: np.ndarray
    pbest_costs: np.ndarray
    gbest_position: np.ndarray
    gbest_cost: float

    def particle(self, i: int) -> SwarmParticle:
        return SwarmParticle(self.positions[i].copy(), self.velocities[i].copy(),
                             self.pbest_positions[i].copy(), float(self.pbest_costs[i]))

    def update_bests(self, costs: np.ndarray) -> None:
        better = costs > self.pbest_costs
        self.pbest_positions[better] = self.positions[better]
        self.pbest_costs[better] = costs[better]
        best = int(np.argmax(self.pbest_costs))  # first index on ties
        if self.pbest_costs[best] > self.gbest_cost:
            self.gbest_cost = float(self.pbest_costs[best])
            self.gbest_position = self.pbest_positions[best].copy()


def circular_diff(target, source):
    """Shortest signed arc from ``source`` to ``target`` in (-pi, pi]."""
    d = np.mod(np.asarray(target) - np.asarray(source) + math.pi, TWO_PI) - math.pi
    return np.where(d == -math.pi, math.pi, d)


def pso_step(swarm: Swarm, chi: float, config: PsoConfig, rng: np.random.Generator,
             j1=None, j2=None) -> Swarm:
    """One velocity/position update of every particle (bests are not touched here).

    ``j1``/``j2`` override the element-wise uniform random factors.
    """
    shape = swarm.positions.shape
    j1 = rng.random(shape) if j1 is None else np.broadcast_to(j1, shape)
    j2 = rng.random(shape) if j2 is None else np.broadcast_to(j2, shape)
    cognitive_anchor = swarm.gbest_position[None, :] if config.strict_paper else swarm.pbest_positions
    v = chi * (swarm.velocities
               + config.c1 * j1 * circular_diff(cognitive_anchor, swarm.positions)
               + config.c2 * j2 * circular_diff(swarm.gbest_position[None, :], swarm.positions))
    if config.velocity_clamp is not None:
        v = np.clip(v, -config.velocity_clamp, config.velocity_clamp)
    swarm.velocities = v
    swarm.positions = wrap(swarm.positions + v)
    return swarm


@dataclass
class PsoResult:
    best: PhaseConfig
    cost: float
    trace: list[float] = field(default_factory=list)  # global best cost after each iteration
    evaluations: int = 0


def optimize(problem: PhaseProblem, config: PsoConfig = PsoConfig(), initial: PhaseConfig | None = None,
             rng: np.random.Generator | None = None) -> PsoResult:
    """Constricted PSO; particles fly in continuous phase space, costs use quantized phases.

    ``initial`` seeds particle 0 (e.g. the incumbent configuration).
    """
    rng = np.random.default_rng(config.seed) if rng is None else rng
    D = problem.dim
    chi = constriction(config.c1, config.c2, config.constriction_mode)
    pos = rng.uniform(0.0, TWO_PI, size=(config.npop, D))
    if initial is not None:
        pos[0] = initial.phases_rad.ravel()
    costs = problem.cost_of_levels(problem.quantized_levels(pos))
    first = int(np.argmax(costs))
    swarm = Swarm(pos, np.zeros_like(pos), pos.copy(), costs.copy(), pos[first].copy(), float(costs[first]))
    trace = []
    evals = config.npop
    for _ in range(config.itrmax):
        pso_step(swarm, chi, config, rng)
        costs = problem.cost_of_levels(problem.quantized_levels(swarm.positions))
        evals += config.npop
        swarm.update_bests(costs)
        trace.append(swarm.gbest_cost)
    best = PhaseConfig(problem.quantized_levels(swarm.gbest_position).reshape(problem.shape), problem.bits)
    return PsoResult(best, swarm.gbest_cost, trace, evals)


@dataclass
class ExhaustiveResult:
    best: PhaseConfig
    cost: float
    evaluated: int
    exact: bool


def exhaustive_best(problem: PhaseProblem, sample_cap: int = 1000, seed: int = 0,
                    batch: int = 4096) -> ExhaustiveResult:
    """Full enumeration when the space fits in ``sample_cap``; otherwise best of ``sample_cap`` uniform draws."""
    if sample_cap < 1:
        raise ValueError("sample_cap must be >= 1")
    W = 2 ** problem.bits
    D = problem.dim
    total = W ** D
    best_cost = -math.inf
    best_levels = None
    if total <= sample_cap:
        exact = True
        n = total
        for lo in range(0, total, batch):
            idx = np.arange(lo, min(total, lo + batch))
            # lexicographic: element 0 is the most significant digit
            levels = np.stack(np.unravel_index(idx, (W,) * D), axis=1) if D else np.zeros((len(idx), 0), int)
            costs = problem.cost_of_levels(levels)
            k = int(np.argmax(costs))
            if costs[k] > best_cost:
                best_cost, best_levels = float(costs[k]), levels[k]
    else:
        exact = False
        n = sample_cap
        rng = np.random.default_rng(seed)
        draws = rng.integers(0, W, size=(sample_cap, D))
        for lo in range(0, sample_cap, batch):
            costs = problem.cost_of_levels(draws[lo:lo + batch])
            k = int(np.argmax(costs))
            if costs[k] > best_cost:
                best_cost, best_levels = float(costs[k]), draws[lo + k]
    return ExhaustiveResult(PhaseConfig(np.asarray(best_levels).reshape(problem.shape), problem.bits),
                            best_cost, n, exact)
