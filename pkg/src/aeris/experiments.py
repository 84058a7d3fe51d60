"""Joint DRL/PSO optimisation, per-method evaluation and parameter sweeps."""
from __future__ import annotations

import csv
import io
import json
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .baselines import BruteForcePlanner, RandomWaypointPolicy
from .channel import ChannelParams
from .config import ExperimentConfig, JointConfig
from .environment import UavSwarmEnv, placement_metrics, run_episode
from .learning import Approximator, EpisodeMetrics, TrainConfig, greedy_policy, train
from .phaseopt import PhaseConfig, PhaseProblem, PsoConfig, exhaustive_best, optimize, random_phases
from .scenario import ScenarioState

log = logging.getLogger(__name__)

METRICS_HEADER = (
    "method", "seed", "sweep_axis", "sweep_value", "qos_satisfaction_pct", "coverage_pct",
    "throughput_bps", "random_phase_throughput_bps", "train_episodes", "pso_iterations",
    "status", "error",
)
METRIC_FIELDS = ("qos_satisfaction_pct", "coverage_pct", "throughput_bps", "random_phase_throughput_bps")
_VARIANT = {"drl_dqn": "dqn", "drl_ac": "actor_critic"}
CHAINED_METHODS = ("drl_dqn", "drl_ac", "brute_force")  # methods whose sweep values run as one warm chain


class ExperimentError(RuntimeError):
    """A module error re-raised with experiment context (method, round, phase)."""


@dataclass
class MetricsRow:
    method: str
    seed: int
    sweep_axis: str
    sweep_value: float | None
    qos_satisfaction_pct: float = math.nan
    coverage_pct: float = math.nan
    throughput_bps: float = math.nan
    random_phase_throughput_bps: float = math.nan
    train_episodes: int = 0
    pso_iterations: int = 0
    status: str = "ok"
    error: str = ""

    def __post_init__(self):
        if self.status == "ok":
            for name in ("qos_satisfaction_pct", "coverage_pct"):
                v = getattr(self, name)
                if not 0.0 <= v <= 100.0:
                    raise ValueError(f"{name}={v} outside [0, 100]")
            for name in ("throughput_bps", "random_phase_throughput_bps"):
                if not getattr(self, name) >= 0.0:
                    raise ValueError(f"{name} must be non-negative")


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return "" if math.isnan(v) else f"{v:.10g}"
    return str(v)


def format_metrics(rows: Sequence[MetricsRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(METRICS_HEADER)
    for r in rows:
        d = asdict(r)
        w.writerow([_fmt(d[k]) for k in METRICS_HEADER])
    return buf.getvalue()


def read_metrics(path) -> list[dict]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if rows and tuple(rows[0].keys()) != METRICS_HEADER:
        raise ValueError(f"{path}: unexpected metrics header {list(rows[0].keys())}")
    out = []
    for r in rows:
        d: dict = dict(r)
        d["seed"] = int(d["seed"])
        d["sweep_value"] = float(d["sweep_value"]) if d["sweep_value"] else None
        for k in METRIC_FIELDS:
            d[k] = float(d[k]) if d[k] else math.nan
        d["train_episodes"] = int(d["train_episodes"])
        d["pso_iterations"] = int(d["pso_iterations"])
        out.append(d)
    return out


# ---------------------------------------------------------------------------
# joint optimisation


@dataclass
class RoundRecord:
    round: int
    coverage_pct: float
    throughput_bps: float
    accepted: bool
    train_episodes: int


@dataclass
class JointResult:
    approximator: Approximator
    phases: PhaseConfig
    rounds: list[RoundRecord] = field(default_factory=list)
    training: list[EpisodeMetrics] = field(default_factory=list)

    @property
    def trace(self) -> list[tuple[float, float]]:
        """Incumbent (coverage %, throughput) after every round."""
        out = []
        best = None
        for r in self.rounds:
            if r.accepted:
                best = (r.coverage_pct, r.throughput_bps)
            out.append(best)
        return out

    @property
    def train_episodes(self) -> int:
        return sum(r.train_episodes for r in self.rounds)


def greedy_rollouts(env: UavSwarmEnv, approx: Approximator, seeds: Sequence[int]):
    """Slot placements and mean coverage (% of UEs) of the greedy policy from several starts."""
    policy = greedy_policy(approx)
    placements, covered = [], []
    for s in seeds:
        ep = run_episode(env, policy, int(s))
        placements.extend(ep.placements)
        covered.extend(ep.slot_coverage)
    n = max(1, env.scenario.n_ues)
    pct = 100.0 * float(np.mean(covered)) / n if covered else 0.0
    return placements, pct


def _gain(new: float, old: float) -> float:
    return (new - old) / abs(old) if old else (math.inf if new > old else 0.0)


def run_joint_optimization(scenario: ScenarioState, channel: ChannelParams, energy, env_config,
                           train_config: TrainConfig, pso_config: PsoConfig,
                           joint: JointConfig = JointConfig(), variant: str = "dqn",
                           rollout_seeds: Sequence[int] | None = None,
                           approximator: Approximator | None = None,
                           phases: PhaseConfig | None = None, served_bonus: float = 0.0) -> JointResult:
    """Alternate path planning (phases fixed) and phase optimisation (placements fixed).

    Round k trains or refreshes the planner against the incumbent phases, rolls
    out the greedy policy from fixed starts, then runs PSO on the resulting
    slot placements, seeded with the incumbent phases. A round is kept only if
    neither coverage nor throughput gets worse; the loop stops after
    ``joint.rounds`` or once neither objective improves by more than
    ``joint.tolerance``.

    ``approximator`` and ``phases`` warm-start the loop: the incumbent is
    first scored as-is (round 0, no training) and every refresh round must
    match or beat it.
    """
    ris = scenario.ris
    if not ris:
        raise ExperimentError("joint optimisation needs at least one RIS")
    env = UavSwarmEnv(scenario, channel, energy, env_config)
    if rollout_seeds is None:
        ss = np.random.SeedSequence([train_config.seed, 7919])
        rollout_seeds = [int(s) for s in ss.generate_state(joint.rollout_seeds)]
    shape = (len(ris), ris[0].element_count)
    if phases is None or phases.levels.shape != shape or phases.bits != ris[0].phase_bits:
        phases = PhaseConfig.zeros(*shape, ris[0].phase_bits)
    approx = approximator
    result: JointResult | None = None
    best_cov = best_thr = -math.inf
    first = 0 if approx is None else -1
    for k in range(first, joint.rounds):
        if k == -1:
            cfg = replace(train_config, episodes=0)
            start = approx
        elif k == 0 and approx is None:
            cfg = train_config
            start = None
        else:
            cfg = replace(train_config, episodes=joint.refresh_episodes, seed=train_config.seed + 1000 * (k + 1),
                          eps_start=joint.refresh_eps_start)
            start = approx.copy()
        env.set_phases(phases)
        try:
            tr = train(env, cfg, variant, start)
        except Exception as exc:
            raise ExperimentError(f"round {k + 1}, path planning: {exc}") from exc
        placements, cov = greedy_rollouts(env, tr.approximator, rollout_seeds)
        try:
            problem = PhaseProblem.from_placements(scenario, channel, placements, served_bonus=served_bonus)
            pso = optimize(problem, replace(pso_config, seed=pso_config.seed + k + 1), initial=phases)
        except Exception as exc:
            raise ExperimentError(f"round {k + 1}, phase optimisation: {exc}") from exc
        thr = problem.throughput(pso.best) / float(problem.weights.sum())
        accepted = k == first or (cov >= best_cov and thr >= best_thr)
        rec = RoundRecord(k + 1, cov, thr, accepted, cfg.episodes)
        log.info("joint round %d: coverage %.2f%% throughput %.4g bps %s", k + 1, cov, thr,
                 "accepted" if accepted else "rejected")
        if result is None:
            result = JointResult(tr.approximator, pso.best)
        result.rounds.append(rec)
        result.training.extend(tr.metrics)
        if not accepted:
            break
        improved = max(_gain(cov, best_cov), _gain(thr, best_thr)) if k > first else math.inf
        approx, phases = tr.approximator, pso.best
        result.approximator, result.phases = approx, phases
        best_cov, best_thr = cov, thr
        if k > max(first, 0) and improved <= joint.tolerance:
            break
    return result


# ---------------------------------------------------------------------------
# evaluation of one method


def _coverage_pct(ep, scenario) -> float:
    if not ep.slot_coverage:
        return 0.0
    return 100.0 * float(np.mean(ep.slot_coverage)) / max(1, scenario.n_ues)


def _seed_for(*parts: int) -> int:
    return int(np.random.SeedSequence([int(p) for p in parts]).generate_state(1)[0])


def _stream(cfg: ExperimentConfig, method_index: int) -> int:
    # keyed by method only: every sweep value sees the same random numbers
    return _seed_for(cfg.seed, method_index)


class _Recorder:
    """Policy wrapper that remembers the action taken by each UAV in each slot."""

    def __init__(self, policy):
        self.policy = policy
        self.actions: dict[tuple[int, int], int] = {}

    def __call__(self, env, obs):
        a = int(self.policy(env, obs))
        self.actions[(env.current, env.slot)] = a
        return a


class _Replay:
    """Replays recorded actions; UAVs or slots without a record fall back to ``policy``."""

    def __init__(self, actions, policy):
        self.actions = actions
        self.policy = policy

    def __call__(self, env, obs):
        a = self.actions.get((env.current, env.slot))
        return self.policy(env, obs) if a is None else a


@dataclass
class SeedSolution:
    """One evaluation seed's path and phases, carried along a warm-started sweep."""

    actions: dict
    planning: PhaseConfig  # phases the path was flown under
    final: PhaseConfig  # phases after optimisation
    row: dict


def _fit(phases: PhaseConfig | None, scenario) -> PhaseConfig | None:
    """``phases`` resized to the scenario's RIS (extra elements at level 0), or None if incompatible."""
    ris = scenario.ris
    if phases is None or phases.bits != ris[0].phase_bits or phases.levels.shape[0] != len(ris):
        return None
    M = ris[0].element_count
    lv = phases.levels[:, :M]
    if lv.shape[1] < M:
        lv = np.pad(lv, ((0, 0), (0, M - lv.shape[1])))
    return PhaseConfig(lv, phases.bits)


def _dominates(a: dict, b: dict) -> bool:
    return all(a[k] >= b[k] for k in ("coverage_pct", "qos_satisfaction_pct", "throughput_bps"))


def _solve_seed(cfg, scenario, channel, policy, planning, tune, s, stream, extra,
                keep: PhaseConfig | None = None) -> SeedSolution:
    """Fly ``policy`` under ``planning`` phases from seed ``s``, then tune the final phases.

    ``tune(problem, initial)`` returns phases; with ``keep`` the tuned phases
    are used only if they are no worse than ``keep`` in QoS and throughput.
    """
    env = UavSwarmEnv(scenario, channel, cfg.energy, cfg.env, phases=planning)
    rec = _Recorder(policy)
    ep = run_episode(env, rec, s)
    problem = PhaseProblem.from_placements(scenario, channel, ep.placements,
                                           served_bonus=cfg.objective.served_bonus_bps)
    final = tune(problem, keep)
    m = placement_metrics(scenario, channel, ep.placements, final)
    if keep is not None:
        k = placement_metrics(scenario, channel, ep.placements, keep)
        if m["qos_pct"] < k["qos_pct"] or m["throughput_bps"] < k["throughput_bps"]:
            final, m = keep, k
    ris = scenario.ris
    rand = random_phases(len(ris), ris[0].element_count, ris[0].phase_bits,
                         np.random.default_rng(_seed_for(stream, s, 1)))
    rthr = placement_metrics(scenario, channel, ep.placements, rand)["throughput_bps"]
    row = dict(seed=s, qos_satisfaction_pct=m["qos_pct"], coverage_pct=_coverage_pct(ep, scenario),
               throughput_bps=m["throughput_bps"], random_phase_throughput_bps=rthr, **extra)
    return SeedSolution(rec.actions, planning, final, row)


def _carry(cfg, scenario, channel, policy, planning, tune, s, stream, extra,
           incumbent: SeedSolution | None) -> SeedSolution:
    """Fresh solution for seed ``s``, unless the carried incumbent is better in some metric.

    The incumbent replays its recorded actions (UAVs it did not have follow
    ``policy``) under its own planning phases, and keeps its final phases
    unless re-tuning is no worse. The fresh solution replaces it only if it
    is at least as good in coverage, QoS and throughput.
    """
    fresh = _solve_seed(cfg, scenario, channel, policy, planning, tune, s, stream, extra)
    if incumbent is None:
        return fresh
    kept = _solve_seed(cfg, scenario, channel, _Replay(incumbent.actions, policy),
                       _fit(incumbent.planning, scenario) or planning, tune, s, stream, extra,
                       keep=_fit(incumbent.final, scenario))
    return fresh if _dominates(fresh.row, kept.row) else kept


def _drl_cell(cfg, method_index, scenario, channel, warm: JointResult | None, carried: dict):
    method = cfg.methods[method_index]
    stream = _stream(cfg, method_index)
    tcfg = replace(cfg.training, seed=stream % 2**31)
    joint = run_joint_optimization(scenario, channel, cfg.energy, cfg.env, tcfg, cfg.pso, cfg.joint,
                                   _VARIANT[method],
                                   approximator=warm.approximator if warm else None,
                                   phases=warm.phases if warm else None,
                                   served_bonus=cfg.objective.served_bonus_bps)
    policy = greedy_policy(joint.approximator)
    extra = dict(train_episodes=joint.train_episodes, pso_iterations=cfg.pso.itrmax)
    solutions = {}
    for s in cfg.seeds:
        def tune(problem, initial, s=s):
            pso_cfg = replace(cfg.pso, seed=_seed_for(stream, s) % 2**31)
            return optimize(problem, pso_cfg, initial=joint.phases if initial is None else initial).best

        solutions[s] = _carry(cfg, scenario, channel, policy, joint.phases, tune, s, stream, extra,
                              carried.get(s))
    return solutions, joint


def _baseline_cell(cfg, method_index, scenario, channel, carried: dict):
    method = cfg.methods[method_index]
    stream = _stream(cfg, method_index)
    ris = scenario.ris
    R, M, b = len(ris), ris[0].element_count, ris[0].phase_bits
    solutions = {}
    if method == "brute_force":
        planner = BruteForcePlanner(cfg.brute_force.cap)
        planned = PhaseConfig.zeros(R, M, b)  # the configuration the paths are planned under
        for s in cfg.seeds:
            def tune(problem, initial, s=s):
                cands = [exhaustive_best(problem, cfg.brute_force.phase_samples, seed=_seed_for(stream, s)).best,
                         planned]
                if initial is not None:
                    cands.append(initial)
                costs = [problem.evaluate(c) for c in cands]
                return cands[int(np.argmax(costs))]

            solutions[s] = _carry(cfg, scenario, channel, planner, planned, tune, s, stream, {}, carried.get(s))
    elif method == "rwp":
        for s in cfg.seeds:
            rng = np.random.default_rng(_seed_for(stream, s))
            rand = random_phases(R, M, b, rng)
            env = UavSwarmEnv(scenario, channel, cfg.energy, cfg.env, phases=rand)
            ep = run_episode(env, RandomWaypointPolicy(rng), s)
            m = placement_metrics(scenario, channel, ep.placements, rand)
            row = dict(seed=s, qos_satisfaction_pct=m["qos_pct"], coverage_pct=_coverage_pct(ep, scenario),
                       throughput_bps=m["throughput_bps"], random_phase_throughput_bps=m["throughput_bps"])
            solutions[s] = SeedSolution({}, rand, rand, row)
    else:
        raise ExperimentError(f"unknown method {method!r}")
    return solutions


@dataclass
class CellResult:
    key: tuple[int, int]
    rows: list[MetricsRow]
    seconds: float
    joint: list[RoundRecord] = field(default_factory=list)


def _rows_for(cfg, method_index, value_index, raw) -> list[MetricsRow]:
    value = cfg.sweep_values()[value_index]
    return [MetricsRow(cfg.methods[method_index], int(r.pop("seed")), cfg.sweep.axis or "",
                       None if value is None else float(value), **r) for r in raw]


def _error_rows(cfg, method_index, value_index, exc) -> list[MetricsRow]:
    value = cfg.sweep_values()[value_index]
    msg = f"{type(exc).__name__}: {exc}".replace("\n", " ")
    return [MetricsRow(cfg.methods[method_index], s, cfg.sweep.axis or "", None if value is None else float(value),
                       status="error", error=msg) for s in cfg.seeds]


def evaluate_chain(cfg: ExperimentConfig, method_index: int, value_indices: Sequence[int]) -> list[CellResult]:
    """Evaluate one method at several sweep values, in order.

    With ``sweep.warm_start`` a learned planner starts from the previous
    value's policy and phases, and each seed's previous solution is carried
    forward as a candidate (see :func:`_carry`). A failed value is recorded
    with an error marker and the chain continues.
    """
    method = cfg.methods[method_index]
    base = cfg.build_scenario()
    out = []
    warm = None
    carried: dict[int, SeedSolution] = {}
    for vi in value_indices:
        t0 = time.perf_counter()
        try:
            scenario, channel = cfg.at(cfg.sweep_values()[vi], base)
            if not scenario.ris:
                raise ExperimentError("evaluation needs at least one RIS")
            records = []
            if method in _VARIANT:
                solutions, joint = _drl_cell(cfg, method_index, scenario, channel, warm, carried)
                records = joint.rounds
                if cfg.sweep.warm_start:
                    warm = joint
            else:
                solutions = _baseline_cell(cfg, method_index, scenario, channel, carried)
            if cfg.sweep.warm_start and method in CHAINED_METHODS:
                carried = solutions
            raw = [dict(solutions[s].row) for s in cfg.seeds]
            out.append(CellResult((method_index, vi), _rows_for(cfg, method_index, vi, raw),
                                  time.perf_counter() - t0, records))
        except Exception as exc:  # partial-failure policy: mark the cell, keep going
            log.error("cell %s/%s failed: %s", method, cfg.sweep_values()[vi], exc)
            out.append(CellResult((method_index, vi), _error_rows(cfg, method_index, vi, exc),
                                  time.perf_counter() - t0))
    return out


def evaluate_cell(cfg: ExperimentConfig, method_index: int, value_index: int) -> CellResult:
    """All evaluation seeds for one (method, sweep value) cell, without warm start."""
    return evaluate_chain(replace(cfg, sweep=replace(cfg.sweep, warm_start=False)), method_index,
                          [value_index])[0]


def _run_job(args) -> list[CellResult]:
    cfg, mi, vis = args
    return evaluate_chain(cfg, mi, vis)


# ---------------------------------------------------------------------------
# sweeps


@dataclass
class SweepResult:
    rows: list[MetricsRow]
    plot_data: dict
    failed_cells: int
    files: dict[str, Path] = field(default_factory=dict)
    joint: dict = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return self.failed_cells == 0


def aggregate(rows: Sequence[MetricsRow], axis: str, figure: str) -> dict:
    """Mean and sample standard deviation across seeds, per method and sweep value."""
    methods: dict[str, dict] = {}
    for r in rows:
        methods.setdefault(r.method, {})
    values = sorted({r.sweep_value for r in rows}, key=lambda v: -math.inf if v is None else v)
    out = {"figure": figure, "axis": axis or None, "values": values, "series": {}}
    for m in methods:
        series: dict = {"n": []}
        for k in METRIC_FIELDS:
            series[k] = {"mean": [], "std": []}
        for v in values:
            sel = [r for r in rows if r.method == m and r.sweep_value == v and r.status == "ok"]
            series["n"].append(len(sel))
            for k in METRIC_FIELDS:
                xs = np.array([getattr(r, k) for r in sel], dtype=np.float64)
                series[k]["mean"].append(float(xs.mean()) if len(xs) else None)
                series[k]["std"].append(float(xs.std(ddof=1)) if len(xs) > 1 else 0.0 if len(xs) else None)
        out["series"][m] = series
    return out


def run_sweep(cfg: ExperimentConfig, out_dir=None, write: bool = True) -> SweepResult:
    """Evaluate every (method, sweep value) cell and write metrics and plot data.

    Cells run in a process pool when ``cfg.workers > 1``; results are merged
    by cell id, so files do not depend on scheduling. Random streams are keyed
    by (master seed, method, evaluation seed), so every sweep value sees the
    same start cells, waypoints and phase samples.
    """
    values = range(len(cfg.sweep_values()))
    jobs = []
    for mi, method in enumerate(cfg.methods):
        if cfg.sweep.warm_start and method in CHAINED_METHODS:
            jobs.append((cfg, mi, list(values)))  # a warm-started chain is sequential
        else:
            jobs.extend((cfg, mi, [vi]) for vi in values)
    if cfg.workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            cells = [c for chunk in pool.map(_run_job, jobs) for c in chunk]
    else:
        cells = [c for j in jobs for c in _run_job(j)]
    cells.sort(key=lambda c: c.key)
    rows = [r for c in cells for r in sorted(c.rows, key=lambda r: r.seed)]
    failed = sum(1 for c in cells if any(r.status != "ok" for r in c.rows))
    plot = aggregate(rows, cfg.sweep.axis or "", cfg.figure)
    joint = {f"{cfg.methods[c.key[0]]}@{_fmt(cfg.sweep_values()[c.key[1]])}": [asdict(r) for r in c.joint]
             for c in cells if c.joint}
    result = SweepResult(rows, plot, failed, joint=joint)
    if write:
        out = Path(out_dir if out_dir is not None else cfg.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        fig = cfg.figure
        files = {
            "metrics": out / f"metrics_{fig}.csv",
            "plot": out / f"plot_{fig}.json",
            "joint": out / f"joint_{fig}.json",
            "timings": out / f"timings_{fig}.csv",
        }
        files["metrics"].write_text(format_metrics(rows))
        files["plot"].write_text(json.dumps(plot, indent=2, sort_keys=True) + "\n")
        files["joint"].write_text(json.dumps(joint, indent=2, sort_keys=True) + "\n")
        lines = ["method,sweep_value,seconds"]
        for c in cells:
            lines.append(f"{cfg.methods[c.key[0]]},{_fmt(cfg.sweep_values()[c.key[1]])},{c.seconds:.3f}")
        files["timings"].write_text("\n".join(lines) + "\n")
        result.files = files
    return result
