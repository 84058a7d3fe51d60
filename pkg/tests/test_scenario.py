import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from aeris.scenario import (
    AreaGrid, ClusterSpec, OutOfBoundsError, ScenarioError, generate_scenario, load_scenario, make_ris,
    power_law_counts, save_scenario, scenario_from_dict, scenario_to_dict,
)

AREA = AreaGrid(400.0, 400.0, 40.0)


def _festival(seed=7):
    return generate_scenario(seed, AREA, 400, ClusterSpec(4, 2.0), 4, make_ris([(100, 300, 20)], 16, 2))


def test_generation_is_deterministic():
    a, b = _festival(), _festival()
    assert a == b
    assert json.dumps(scenario_to_dict(a)) == json.dumps(scenario_to_dict(b))
    assert a != _festival(8)


def test_single_cluster_stays_in_bounds():
    for seed in range(5):
        s = generate_scenario(seed, AREA, 200, ClusterSpec(1, 2.0, 80.0), 1)
        assert np.all(s.cluster_ids == 0)
        assert np.all((s.ue_positions[:, :2] >= 0) & (s.ue_positions[:, :2] <= 400))


def test_power_law_cluster_shares():
    s = _festival()
    counts = np.bincount(s.cluster_ids, minlength=4)
    # rank^-2 weights 1, 1/4, 1/9, 1/16 normalised by their sum 205/144
    shares = np.array([144, 36, 16, 9]) / 205.0
    assert np.all(np.abs(counts - shares * 400) <= 1.0)
    assert counts[0] == counts.max()
    assert counts.sum() == 400


@given(n=st.integers(1, 2000), c=st.integers(1, 12), p=st.floats(1.01, 4.0))
def test_power_law_counts_within_one(n, c, p):
    counts = power_law_counts(n, c, p)
    w = np.arange(1, c + 1, dtype=float) ** -p
    assert counts.sum() == n
    assert np.all(np.abs(counts - n * w / w.sum()) < 1.0)


def test_z_coordinates_and_altitude():
    s = _festival()
    assert np.all(s.ue_positions[:, 2] == 0.0)
    assert all(u.position[2] == s.altitude_m for u in s.uavs)
    assert len(set(s.uav_cells())) == len(s.uavs)


def test_class_mix_defaults_to_thirds():
    s = generate_scenario(1, AREA, 300, ClusterSpec(), 1)
    assert np.array_equal(np.bincount(s.ue_classes, minlength=4)[1:], [100, 100, 100])


def test_generation_errors():
    with pytest.raises(OutOfBoundsError):
        generate_scenario(0, AREA, 10, ClusterSpec(1, 2.0, centers=((500.0, 10.0),)), 1)
    with pytest.raises(ScenarioError):
        AreaGrid(0.0, 400.0, 40.0)
    with pytest.raises(ScenarioError):
        generate_scenario(0, AREA, 0, ClusterSpec(), 1)
    with pytest.raises(ScenarioError):
        ClusterSpec(2, 1.0)


def test_cell_geometry():
    assert AREA.cell_center(0) == (20.0, 20.0)
    assert AREA.cell_of((20.0, 20.0)) == 0
    assert AREA.cell_of((399.9, 399.9)) == 99
    assert AREA.col_row(99) == (9, 9)
    with pytest.raises(OutOfBoundsError):
        AREA.cell_of((-1.0, 5.0))


@given(w=st.floats(10, 1000), h=st.floats(10, 1000), frac=st.floats(0.05, 1.0))
@settings(max_examples=50)
def test_cell_round_trip(w, h, frac):
    area = AreaGrid(w, h, frac * min(w, h))
    for i in range(area.n_cells):
        assert area.cell_of(area.cell_center(i)) == i


def test_save_load_round_trip(tmp_path):
    s = _festival()
    p = tmp_path / "s.json"
    save_scenario(s, p)
    t = load_scenario(p)
    assert t == s
    assert np.array_equal(t.ue_positions, s.ue_positions)  # bit-exact


def test_load_errors(tmp_path):
    p = tmp_path / "s.json"
    save_scenario(_festival(), p)
    p.write_text(p.read_text()[:200])
    with pytest.raises(ScenarioError, match="corrupt or truncated"):
        load_scenario(p)
    doc = scenario_to_dict(_festival())
    doc["ues"][0]["x"] = -1.0
    doc["ues"][0]["y"] = 0.0
    with pytest.raises(OutOfBoundsError):
        scenario_from_dict(doc)
    doc = scenario_to_dict(_festival())
    doc["schema_version"] = 99
    with pytest.raises(ScenarioError, match="schema_version"):
        scenario_from_dict(doc)
    with pytest.raises(ScenarioError, match="not found"):
        load_scenario(tmp_path / "missing.json")


def test_with_uav_count_keeps_prefix_free_layout():
    s = _festival()
    t = s.with_uav_count(6, 3)
    assert t.n_uavs == 6 and len(set(t.uav_cells())) == 6
