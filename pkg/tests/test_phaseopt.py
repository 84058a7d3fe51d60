import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from aeris import kernels
from aeris.channel import ChannelParams, data_rate, link_tensors
from aeris.phaseopt import (
    PhaseConfig, PhaseProblem, PsoConfig, Swarm, circular_diff, constriction, evaluate_cost, exhaustive_best,
    optimize, phase_levels, pso_step, quantize, random_phases,
)
from aeris.scenario import make_ris

CH = ChannelParams()


def problem(M, bits, n_ues=5, n_ris=1, seed=0, count_all=True, **kw):
    rng = np.random.default_rng(seed)
    ris = make_ris([(60.0 + 40 * r, 80.0, 15.0) for r in range(n_ris)], M, bits)
    ues = np.column_stack([rng.uniform(0, 200, (n_ues, 2)), np.zeros(n_ues)])
    uavs = [(100.0, 100.0, 100.0)]
    direct, coef = link_tensors(uavs, ues, ris, CH)
    classes = rng.integers(1, 4, size=n_ues)
    return PhaseProblem(direct[None], coef[None], CH, bits, classes, count_all=count_all, **kw)


def test_phase_levels_are_exact_grid():
    assert np.array_equal(phase_levels(1), [0.0, math.pi])
    assert np.array_equal(phase_levels(2), [0.0, math.pi / 2, math.pi, 3 * math.pi / 2])


def test_constriction_examples():
    assert math.isclose(constriction(2.05, 2.05, "paper_formula"), 1.0762537728472522, rel_tol=1e-12)
    assert math.isclose(constriction(2.05, 2.05, "clerc"), 0.7298437881283576, rel_tol=1e-12)
    assert constriction(2.0, 2.0, "paper_formula") == 0.75
    with pytest.raises(ValueError):
        constriction(2.0, 2.0, "clerc")
    with pytest.raises(ValueError):
        constriction(0.0, 5.0, "paper_formula")
    with pytest.raises(ValueError):
        PsoConfig(c1=1.0, c2=1.0)


def test_quantize_examples():
    assert quantize([1.0], 1).phases_rad[0, 0] == 0.0
    assert quantize([1.0], 2).phases_rad[0, 0] == math.pi / 2
    assert quantize([2 * math.pi - 0.1], 2).phases_rad[0, 0] == 0.0
    levels = phase_levels(3)
    assert np.array_equal(quantize(levels, 3).phases_rad[0], levels)


@given(x=st.floats(-50, 50), bits=st.integers(1, 4))
def test_quantize_is_circular_nearest(x, bits):
    got = quantize([x], bits).phases_rad[0, 0]
    dist = lambda p: abs(float(circular_diff(p, x)))
    assert dist(got) <= min(dist(p) for p in phase_levels(bits)) + 1e-12


def test_circular_diff_range():
    assert circular_diff(0.1, 2 * math.pi - 0.1) == pytest.approx(0.2)
    assert circular_diff(math.pi, 0.0) == math.pi
    assert circular_diff(0.0, math.pi) == math.pi


def _swarm(pos, vel, pbest, gbest):
    pos = np.atleast_2d(np.asarray(pos, float))
    return Swarm(pos, np.atleast_2d(np.asarray(vel, float)), np.atleast_2d(np.asarray(pbest, float)),
                 np.zeros(len(pos)), np.asarray(gbest, float), 0.0)


def test_pso_step_examples():
    cfg = PsoConfig(c1=1.0, c2=1.0, constriction_mode="paper_formula")
    rng = np.random.default_rng(0)
    s = pso_step(_swarm([1.0, 2.0], [0.0, 0.0], [1.0, 2.0], [1.0, 2.0]), 0.73, PsoConfig(), rng)
    assert np.array_equal(s.velocities, [[0.0, 0.0]]) and np.array_equal(s.positions, [[1.0, 2.0]])
    s = pso_step(_swarm([1.0], [0.7], [2.0], [3.0]), 0.0, PsoConfig(), rng)
    assert np.array_equal(s.velocities, [[0.0]])
    s = pso_step(_swarm([1.0], [0.0], [1.5], [1.5]), 1.0, cfg, rng, j1=1.0, j2=1.0)
    assert np.allclose(s.velocities, [[1.0]]) and np.allclose(s.positions, [[2.0]])


def test_pso_step_clamps_and_wraps():
    s = pso_step(_swarm([6.0], [4.0], [6.0], [6.0]), 1.0, PsoConfig(), np.random.default_rng(0))
    assert s.velocities[0, 0] == math.pi
    assert 0.0 <= s.positions[0, 0] < 2 * math.pi


def test_strict_paper_mode_uses_global_best_twice():
    cfg = PsoConfig(strict_paper=True, c1=1.0, c2=1.0, constriction_mode="paper_formula")
    s = pso_step(_swarm([1.0], [0.0], [0.5], [1.25]), 1.0, cfg, np.random.default_rng(0), j1=1.0, j2=1.0)
    assert np.allclose(s.velocities, [[0.5]])


def test_evaluate_cost_examples():
    p = problem(2, 1, n_ues=3)
    empty = PhaseProblem(p.direct[:, :, :0], p.coef[:, :, :, :0], CH, 1, np.zeros(0, int))
    assert empty.evaluate(PhaseConfig.zeros(1, 2, 1)) == 0.0
    wide = PhaseProblem(p.direct, p.coef, ChannelParams(bandwidth_hz=2e6), 1, np.ones(3, int), count_all=True)
    cfg = PhaseConfig.zeros(1, 2, 1)
    assert math.isclose(wide.evaluate(cfg), 2 * p.evaluate(cfg), rel_tol=1e-12)
    assert evaluate_cost(np.array([0.1, 3.2]), p) == p.evaluate(PhaseConfig(np.array([[0, 1]]), 1))


def test_single_element_cost_matches_scalar_evaluation():
    p = problem(1, 2, n_ues=1)
    a = p.direct[0, 0, 0]
    c = p.coef[0, 0, 0, 0, 0]
    scalar = [float(data_rate(CH.snr_scale * abs(a + c * np.exp(1j * ph)) ** 2, CH)) for ph in phase_levels(2)]
    costs = [p.evaluate(PhaseConfig(np.array([[k]]), 2)) for k in range(4)]
    assert np.allclose(costs, scalar, rtol=1e-12)
    assert optimize(p, PsoConfig(npop=5, itrmax=10)).cost == max(scalar)


def test_served_bonus_adds_per_served_ue():
    plain = problem(3, 1, n_ues=8, count_all=False)
    bonus = problem(3, 1, n_ues=8, count_all=False, served_bonus=1e9)
    for seed in range(4):
        cfg = random_phases(1, 3, 1, np.random.default_rng(seed))
        snr, _, _ = kernels.best_snr(plain.direct, plain.coef, cfg.phases_rad, CH.snr_scale)
        served = int(np.sum(snr[0] >= plain.thresholds))
        assert math.isclose(bonus.evaluate(cfg), plain.evaluate(cfg) + 1e9 * served, rel_tol=1e-12)
        assert bonus.throughput(cfg) == plain.evaluate(cfg)
    with pytest.raises(ValueError):
        problem(2, 1, served_bonus=-1.0)


def test_optimize_matches_exhaustive_on_four_configs():
    p = problem(2, 1)
    ex = exhaustive_best(p)
    assert ex.exact and ex.evaluated == 4
    for seed in range(5):
        assert optimize(p, PsoConfig(seed=seed)).cost == ex.cost


def test_optimize_trace_and_closure():
    p = problem(4, 2, n_ris=2)
    res = optimize(p, PsoConfig(npop=10, itrmax=20, seed=3))
    assert len(res.trace) == 20 and all(b >= a for a, b in zip(res.trace, res.trace[1:]))
    assert res.cost == res.trace[-1] == p.evaluate(res.best)
    assert set(np.unique(res.best.phases_rad)) <= set(phase_levels(2))
    assert res.evaluations == 10 * 21


def test_degenerate_swarm():
    p = problem(3, 2)
    cfg = PsoConfig(npop=1, itrmax=1, seed=4)
    res = optimize(p, cfg)
    start = np.random.default_rng(4).uniform(0, 2 * math.pi, size=(1, 3))
    assert res.cost >= evaluate_cost(start[0], p)


def test_initial_configuration_is_never_lost():
    p = problem(4, 2)
    ex = exhaustive_best(p, sample_cap=256)
    res = optimize(p, PsoConfig(npop=2, itrmax=1, seed=0), initial=ex.best)
    assert res.cost == ex.cost


def test_exhaustive_sampled_mode():
    p = problem(4, 2)
    one = exhaustive_best(p, sample_cap=1, seed=5)
    draw = np.random.default_rng(5).integers(0, 4, size=(1, 4))
    assert not one.exact and one.cost == p.cost_of_levels(draw)[0]
    a, b = exhaustive_best(p, 50, seed=2), exhaustive_best(p, 50, seed=2)
    assert a.best == b.best and a.cost == b.cost
    with pytest.raises(ValueError):
        exhaustive_best(p, 0)


def test_phase_config_round_trip_and_errors():
    cfg = PhaseConfig(np.array([[0, 3], [1, 2]]), 2)
    assert PhaseConfig.from_dict(cfg.to_dict()) == cfg
    with pytest.raises(ValueError):
        PhaseConfig(np.array([[4]]), 2)
    with pytest.raises(ValueError):
        PhaseConfig(np.array([0, 1]), 2)
