"""Acceptance criteria: one PASS/FAIL line per criterion (see the terminal summary)."""
import inspect
import itertools
import math
import time

import numpy as np
import pytest
from scipy import stats

import test_channel
from aeris.baselines import RandomWaypointPolicy, brute_force_paths
from aeris.channel import ChannelParams, snr
from aeris.config import load_config
from aeris.environment import N_ACTIONS, EnvConfig, UavSwarmEnv, run_episode
from aeris.experiments import run_sweep
from aeris.learning import (
    Approximator, TrainConfig, greedy_policy, loss_and_grads, output_dim, td_targets, train,
)
from aeris.phaseopt import PhaseProblem, PsoConfig, exhaustive_best, optimize, phase_levels
from aeris.scenario import AreaGrid, ClusterSpec, generate_scenario, make_ris


def test_channel_unit_suite(criterion):
    cases = [f for n, f in inspect.getmembers(test_channel, inspect.isfunction) if n.startswith("test_")]
    t0 = time.perf_counter()
    failures = []
    for f in cases:
        try:
            f()
        except Exception as exc:  # noqa: BLE001 - every failing example is reported
            failures.append(f"{f.__name__}: {exc}")
    dt = time.perf_counter() - t0
    ok = criterion("channel math unit suite", not failures and dt < 1.0,
                   f"{len(cases)} groups, {len(failures)} failed, {dt:.2f}s (limit 1s)")
    assert ok, failures


def test_coherent_gain_law(criterion):
    t0 = time.perf_counter()
    p = ChannelParams()
    g = 1e-3 * np.exp(1j * 0.7)
    base = snr(0.0, [g], [g], [0.0], p)
    worst = 0.0
    for M in (1, 2, 4, 8, 16):
        rng = np.random.default_rng(M)
        hu = g * np.exp(1j * rng.uniform(0, 2 * np.pi, M))
        hi = g * np.exp(1j * rng.uniform(0, 2 * np.pi, M))
        co = -np.angle(np.conj(hu) * hi)  # aligns every cascade term
        worst = max(worst, abs(snr(0.0, hu, hi, co, p) / base / M ** 2 - 1.0))
    dt = time.perf_counter() - t0
    ok = criterion("M^2 coherent-gain law", worst <= 1e-9 and dt < 1.0, f"max rel err {worst:.1e}, {dt:.3f}s")
    assert ok


def _phase_problem(scenario, channel, placements, R, M, bits, **kw):
    ris = make_ris([r.position for r in scenario.ris[:R]], M, bits, scenario.ris[0].element_spacing_m)
    return PhaseProblem.from_placements(scenario.with_ris(ris), channel, placements, **kw)


def test_phase_oracle_equivalence(criterion, desk_scenario, desk_channel):
    t0 = time.perf_counter()
    rng = np.random.default_rng(0)
    G = desk_scenario.area.n_cells
    placements = [tuple(int(c) for c in rng.choice(G, 2, replace=False)) for _ in range(4)]
    # every (R, M, bits) with at most 16 configurations
    small = [(R, M, b) for R in (1, 2) for M in range(1, 5) for b in (1, 2, 3, 4) if (2 ** b) ** (R * M) <= 16]
    exact_fail = []
    for (R, M, b), bonus in itertools.product(small, (0.0, 1e9)):
        prob = _phase_problem(desk_scenario, desk_channel, placements, R, M, b, served_bonus=bonus)
        ex = exhaustive_best(prob)
        assert ex.exact
        for seed in range(10):
            if optimize(prob, PsoConfig(seed=seed)).cost != ex.cost:
                exact_fail.append((R, M, b, bonus, seed))
    ratios = []
    for bonus in (0.0, 1e9):
        prob = _phase_problem(desk_scenario, desk_channel, placements, 1, 4, 2, served_bonus=bonus)
        ex = exhaustive_best(prob, sample_cap=256)
        assert ex.exact and ex.evaluated == 256
        for seed in range(10):
            ratios.append(optimize(prob, PsoConfig(seed=seed)).cost / ex.cost)
    dt = time.perf_counter() - t0
    ok = criterion("phase oracle equivalence",
                   not exact_fail and min(ratios) >= 0.99 and dt < 30.0,
                   f"{len(small)} shapes <=16 configs x2 objectives x10 seeds exact ({len(exact_fail)} misses); "
                   f"256-config min ratio {min(ratios):.4f} over {len(ratios)} runs; {dt:.1f}s")
    assert ok, exact_fail


def test_quantization_closure(criterion, desk_scenario, desk_channel):
    t0 = time.perf_counter()
    rng = np.random.default_rng(1)
    G = desk_scenario.area.n_cells
    problems = {}
    for bits in (1, 2, 3):
        placements = [tuple(int(c) for c in rng.choice(G, 2, replace=False))]
        problems[bits] = _phase_problem(desk_scenario, desk_channel, placements, 2, 3, bits)
    bad = 0
    entries = 0
    for k in range(10_000):
        bits = int(rng.integers(1, 4))
        res = optimize(problems[bits], PsoConfig(npop=2, itrmax=1, seed=k))
        got = res.best.phases_rad.ravel()
        grid = phase_levels(bits)
        bad += int(np.sum(~np.isin(got, grid)))  # exact float equality, no tolerance
        entries += got.size
    dt = time.perf_counter() - t0
    ok = criterion("quantization closure", bad == 0 and dt < 5.0,
                   f"10000 outputs, {entries} entries, {bad} off-grid, {dt:.2f}s (limit 5s)")
    assert ok


def test_gradient_correctness(criterion):
    t0 = time.perf_counter()
    rng = np.random.default_rng(2)
    errors = []
    for k in range(100):
        variant = ("dqn", "actor_critic")[k % 2]
        dims = [int(rng.integers(3, 12)), *[int(rng.integers(4, 16)) for _ in range(int(rng.integers(1, 3)))],
                output_dim(variant)]
        net, snap = Approximator(dims), Approximator(dims)
        # random weights and biases: zero biases would park dead units exactly on the ReLU kink
        net.set_flat(rng.normal(0.0, 0.5, net.n_params))
        snap.set_flat(rng.normal(0.0, 0.5, snap.n_params))
        B = int(rng.integers(1, 12))
        s, s2 = rng.normal(size=(B, dims[0])), rng.normal(size=(B, dims[0]))
        a = rng.integers(0, N_ACTIONS, B)
        r = rng.normal(size=B)
        term = rng.random(B) < 0.3
        batch = (s, a, r, s2, term)
        delta = None
        if variant == "actor_critic":
            delta = td_targets(snap, r, s2, term, 0.9, variant) - net.forward(s)[:, N_ACTIONS]
        _, gw, gb = loss_and_grads(net, batch, 0.9, variant, snap, delta)
        ana = Approximator.flatten_grads(gw, gb)
        v = rng.normal(size=ana.size)  # random probe direction
        flat = net.get_flat()
        h = 1e-6
        net.set_flat(flat + h * v)
        up = loss_and_grads(net, batch, 0.9, variant, snap, delta)[0]
        net.set_flat(flat - h * v)
        down = loss_and_grads(net, batch, 0.9, variant, snap, delta)[0]
        net.set_flat(flat)
        num = (up - down) / (2 * h)
        want = float(ana @ v)
        errors.append(abs(num - want) / max(abs(num), abs(want), 1e-12))
    dt = time.perf_counter() - t0
    worst = max(errors)
    ok = criterion("gradient correctness", worst <= 1e-4 and dt < 10.0,
                   f"100 probes, max rel err {worst:.2e}, {dt:.2f}s")
    assert ok


def _tiny_mdp(channel):
    area = AreaGrid(160.0, 160.0, 80.0)
    s = generate_scenario(0, area, 1, ClusterSpec(1, 2.0, 1.0, centers=((40.0, 40.0),)), 1)
    from dataclasses import replace
    s = replace(s, uavs=(replace(s.uavs[0], position=(120.0, 120.0, s.altitude_m)),))  # opposite corner
    return UavSwarmEnv(s, channel, config=EnvConfig(horizon=3))


def test_tiny_mdp_optimality(criterion, desk_channel):
    t0 = time.perf_counter()
    env = _tiny_mdp(desk_channel)
    assert list(env.coverage_model.covered[:, 0]) == [True, False, False, False]
    env.reset(None)
    best = brute_force_paths(env, 3, N_ACTIONS ** 3)
    hits = []
    for seed in range(10):
        cfg = TrainConfig(episodes=300, batch_size=16, hidden=(32,), lr=0.03, updates_per_step=4, seed=seed)
        res = train(env, cfg, "dqn")
        hits.append(run_episode(env, greedy_policy(res.approximator), None).total_coverage == best.coverage)
    dt = time.perf_counter() - t0
    ok = criterion("tiny-MDP optimality", sum(hits) >= 9 and dt < 120.0,
                   f"{sum(hits)}/10 seeds match optimum {best.coverage}, {dt:.1f}s")
    assert ok


def test_constraint_enforcement(criterion, desk_scenario, desk_cfg):
    from dataclasses import replace
    t0 = time.perf_counter()
    # a small battery makes the reserve bind inside the horizon
    scenario = replace(desk_scenario, battery_init_j=8000.0, battery_min_j=20000.0)
    env = UavSwarmEnv(scenario, desk_cfg.channel, desk_cfg.energy, desk_cfg.env)
    too_close = low = early = steps = 0
    for ep in range(100):
        rng = np.random.default_rng(ep)
        if ep % 2:
            policy = RandomWaypointPolicy(rng)
        else:
            policy = lambda e, o, rng=rng: int(rng.integers(N_ACTIONS))  # noqa: E731
        env.reset(ep)
        done = env.done
        while not done:
            _, _, done = env.step(policy(env, None))
            steps += 1
            rep = env.check_constraints()
            too_close += len(rep.too_close)
            low += len(rep.low_battery)
        early += int(not env.truncated)
    dt = time.perf_counter() - t0
    ok = criterion("constraint enforcement", too_close == 0 and low == 0 and early > 0 and dt < 60.0,
                   f"100 episodes, {steps} steps, {too_close} separation and {low} battery violations, "
                   f"{early} ended at the reserve, {dt:.1f}s")
    assert ok


def _paired(a, b):
    return float(stats.ttest_rel(a, b, alternative="greater").pvalue)


@pytest.mark.slow
def test_baseline_ordering(criterion, desk_cfg, tmp_path):
    t0 = time.perf_counter()
    assert desk_cfg.training.episodes == 2000 and len(desk_cfg.seeds) == 20 and desk_cfg.brute_force.cap == 1000
    res = run_sweep(desk_cfg, tmp_path)
    dt = time.perf_counter() - t0
    q = {m: np.array([r.qos_satisfaction_pct for r in res.rows if r.method == m]) for m in desk_cfg.methods}
    p1 = _paired(q["drl_dqn"], q["brute_force"])
    p2 = _paired(q["brute_force"], q["rwp"])
    means = " > ".join(f"{m} {q[m].mean():.2f}%" for m in ("drl_dqn", "brute_force", "rwp"))
    ok = criterion("baseline ordering",
                   res.ok and q["drl_dqn"].mean() > q["brute_force"].mean() > q["rwp"].mean()
                   and p1 < 0.05 and p2 < 0.05 and dt < 900.0,
                   f"{means}; paired one-sided p {p1:.2g}, {p2:.2g}; {dt:.0f}s")
    assert ok


def _per_seed_drops(rows, method, key, tol):
    by = {}
    for r in rows:
        if r.method == method:
            by.setdefault(r.seed, []).append((r.sweep_value, getattr(r, key)))
    bad = []
    for s, xs in by.items():
        v = [x for _, x in sorted(xs)]
        t = tol(v)
        bad += [(s, i) for i in range(len(v) - 1) if v[i] - v[i + 1] > t]
    return bad


@pytest.mark.slow
def test_trend_reproduction(criterion, tmp_path):
    t0 = time.perf_counter()
    pp = lambda v: 1.0  # noqa: E731 - percentage points
    rel = lambda v: 0.01 * max(v)  # noqa: E731 - 1% of the series maximum
    checks = []
    fig2 = run_sweep(load_config("fig2"), tmp_path / "fig2")
    for m in load_config("fig2").methods:
        checks.append((f"fig2 {m} qos", _per_seed_drops(fig2.rows, m, "qos_satisfaction_pct", pp)))
    fig3 = run_sweep(load_config("fig3"), tmp_path / "fig3")
    for m in ("drl_dqn", "brute_force"):
        checks.append((f"fig3 {m} coverage", _per_seed_drops(fig3.rows, m, "coverage_pct", pp)))
    fig4 = run_sweep(load_config("fig4"), tmp_path / "fig4")
    checks.append(("fig4 drl_dqn throughput", _per_seed_drops(fig4.rows, "drl_dqn", "throughput_bps", rel)))
    below = [(r.seed, r.sweep_value) for r in fig4.rows
             if r.method == "drl_dqn" and not r.throughput_bps > r.random_phase_throughput_bps]
    checks.append(("fig4 drl_dqn above random phases", below))
    dt = time.perf_counter() - t0
    failed = [(name, bad) for name, bad in checks if bad]
    all_ok = fig2.ok and fig3.ok and fig4.ok
    summary = "; ".join(f"{name}: {len(bad)} drops" for name, bad in checks)
    ok = criterion("trend reproduction", all_ok and not failed and dt < 1200.0, f"{summary}; {dt:.0f}s")
    assert ok, failed


def test_determinism(criterion, tmp_path, micro_cfg):
    from dataclasses import replace
    t0 = time.perf_counter()
    cfg = micro_cfg(sweep={"axis": "tx_power", "values": [20, 26], "warm_start": True})
    a = run_sweep(cfg, tmp_path / "a")
    b = run_sweep(cfg, tmp_path / "b")
    c = run_sweep(replace(cfg, workers=2), tmp_path / "c")
    tiny = load_config("tiny", environ={})
    d = run_sweep(tiny, tmp_path / "d")
    e = run_sweep(replace(tiny, workers=2), tmp_path / "e")
    same = True
    for x, ys in ((a, (b, c)), (d, (e,))):
        for key in ("metrics", "plot", "joint"):
            for y in ys:
                same &= x.files[key].read_bytes() == y.files[key].read_bytes()
    dt = time.perf_counter() - t0
    ok = criterion("determinism", same, f"reruns and 1 vs 2 workers byte-identical: {same}; {dt:.1f}s")
    assert ok
