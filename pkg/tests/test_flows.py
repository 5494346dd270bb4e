from __future__ import annotations

import csv
import json

import numpy as np
import pytest

from denselight.flows import (FlowSynthesisSpec, RouteError, arrival_stats, entry_roads, exit_roads, reachable_pairs,
                              route_between, synthesize_flow)
from denselight.network import build_grid_network
from denselight.runner import generate_flow
from denselight.simulator import FlowSchedule


def test_resample_zero_is_base(grid3):
    for factor in (0, 1, 3):
        sched, stats = synthesize_flow(grid3, FlowSynthesisSpec(total_vehicles=300, resample_fraction=0.0,
                                                                fluctuation_factor=factor, seed=2))
        assert len(sched) == 300 and stats["base"] == stats["flow"]
    base, _ = synthesize_flow(grid3, FlowSynthesisSpec(total_vehicles=300, fluctuation_factor=0,
                                                       resample_fraction=0.5, seed=2))
    assert len(base) == 300


def test_fluctuation_adds_vehicles_and_variance(grid3):
    spec = FlowSynthesisSpec(pattern="peaked-od", total_vehicles=1000, resample_fraction=0.3,
                             fluctuation_factor=2, seed=4)
    sched, stats = synthesize_flow(grid3, spec)
    assert len(sched) == 1000 + 2 * 300
    assert stats["flow"]["std"] >= stats["base"]["std"]
    lo, hi = spec.window
    extra = np.array([e.enter_s for e in sched.entries])
    assert np.sum((extra >= lo) & (extra < hi)) >= 600


def test_schedule_valid_and_deterministic(grid3):
    spec = FlowSynthesisSpec(pattern="rush-hour", total_vehicles=200, seed=5)
    a, _ = synthesize_flow(grid3, spec)
    b, _ = synthesize_flow(grid3, spec)
    a.validate(grid3)
    assert [(e.enter_s, e.route) for e in a.entries] == [(e.enter_s, e.route) for e in b.entries]
    times = [e.enter_s for e in a.entries]
    assert times == sorted(times) and 0 <= times[0] and times[-1] < 3600


def test_routes_connect_entry_to_exit(grid3):
    rng = np.random.default_rng(0)
    pairs = reachable_pairs(grid3)
    assert pairs
    for e, x in pairs[:: max(1, len(pairs) // 15)]:
        route = route_between(grid3, e, x, rng)
        assert route[0] in grid3.roads[e] and route[-1] in grid3.roads[x]
    assert set(e for e, _ in pairs) <= set(entry_roads(grid3))
    assert set(x for _, x in pairs) <= set(exit_roads(grid3))
    with pytest.raises(RouteError):
        route_between(grid3, exit_roads(grid3)[0], exit_roads(grid3)[0], rng)


def test_arrival_stats_table():
    st = arrival_stats(FlowSchedule([]), 3600)
    assert (st.mean, st.std, st.max, st.min) == (0.0, 0.0, 0, 0)
    assert list(st.as_row()) == ["Mean", "Std.", "Max", "Min"]


def test_generate_flow_files_round_trip(tmp_path):
    (tmp_path / "net.txt").write_text("grid 3 3 300\n")
    spec = FlowSynthesisSpec(pattern="peaked-od", total_vehicles=500, resample_fraction=0.3, seed=1)
    stats = generate_flow(tmp_path / "net.txt", spec, tmp_path / "flow.csv")
    sched = FlowSchedule.read_csv(tmp_path / "flow.csv")
    assert len(sched) == stats["vehicles"] == 650
    with open(tmp_path / "flow.stats.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert list(rows[0]) == ["flow", "Mean", "Std.", "Max", "Min"]
    recomputed = arrival_stats(sched, 3600)
    assert float(rows[1]["Mean"]) == pytest.approx(recomputed.mean)
    assert float(rows[1]["Std."]) == pytest.approx(recomputed.std)
    assert int(rows[1]["Max"]) == recomputed.max and int(rows[1]["Min"]) == recomputed.min
    saved = json.loads((tmp_path / "flow.stats.json").read_text())
    assert saved["flow"]["max"] == recomputed.max


def test_spec_validation():
    with pytest.raises(ValueError):
        FlowSynthesisSpec(pattern="weird")
    with pytest.raises(ValueError):
        FlowSynthesisSpec(resample_fraction=1.5)
    with pytest.raises(ValueError):
        FlowSynthesisSpec(window_start=3000, window_end=100).window
    spec = FlowSynthesisSpec(total_vehicles=7)
    assert FlowSynthesisSpec.from_json(spec.to_json()) == spec


def test_single_intersection_flow():
    net = build_grid_network(1, 1, 300)
    sched, _ = synthesize_flow(net, FlowSynthesisSpec(total_vehicles=50, seed=0))
    sched.validate(net)
    assert len(sched) == 50
