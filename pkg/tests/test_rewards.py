from __future__ import annotations

import csv
from collections import defaultdict

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from denselight.controllers import Controller
from denselight.env import run_controller_episode
from denselight.features import pressure, queue_length
from denselight.network import Direction, Turn, build_grid_network
from denselight.rewards import (SERIES, UNDEFINED, ifdg_reward, ifdg_rewards, ifdg_travel_time_identity,
                                pressure_reward, queue_reward, read_ledger_csv, reward_correlation_report,
                                stt_reward, stt_travel_time_identity, timeloss_reward, write_correlation_csv)
from denselight.simulator import FlowEntry, FlowSchedule, SimConfig, Simulation, StepRecord

from conftest import desk_flow, place, random_state


def record(samples=(), visits=(), t0=0, t1=15):
    samples = np.array(samples, dtype=float).reshape(-1, 4)
    return StepRecord(t0, t1, samples[:, 0].astype(int), samples[:, 1].astype(int),
                      samples[:, 2].astype(int), samples[:, 3],
                      np.array(visits, dtype=np.int64).reshape(-1, 4), [], [])


def test_ifdg_closed_forms():
    assert ifdg_reward(record(), 0, 11.11) == 0
    moving = record([(t, 0, 0, 11.11) for t in range(15)])
    assert ifdg_reward(moving, 0, 11.11) == 0
    stopped = record([(t, 0, 0, 0.0) for t in range(15)])
    assert ifdg_reward(stopped, 0, 11.11) == pytest.approx(-166.65)
    assert ifdg_reward(stopped, 1, 11.11) == 0


def test_ifdg_stopped_vehicle_in_simulation():
    net = build_grid_network(1, 1, 300)
    sim = Simulation(net, FlowSchedule([]), SimConfig())
    entry = net.roads[net.in_road(0, Direction.N)][Turn.THROUGH]
    place(sim, entry, 300.0, 0.0, route=(entry, net.roads[net.out_road(0, Direction.S)][Turn.THROUGH]))
    rec = sim.run_decision_step([2])
    assert ifdg_rewards(rec, 1, 11.11)[0] == pytest.approx(-166.65)


@settings(max_examples=30, deadline=None)
@given(speeds=st.lists(st.floats(0.01, 11.11), min_size=15, max_size=15), k=st.integers(0, 14),
       cut=st.floats(0.01, 1.0))
def test_ifdg_monotone_in_speed(speeds, k, cut):
    base = record([(t, 0, 0, s) for t, s in enumerate(speeds)])
    slower = list(speeds)
    slower[k] = slower[k] * (1 - cut)
    assert ifdg_reward(record([(t, 0, 0, s) for t, s in enumerate(slower)]), 0, 11.11) < ifdg_reward(base, 0, 11.11)


def test_ifdg_trace_replay(tmp_path, grid2):
    sched = desk_flow(grid2, total=300, seed=7)
    cfg = SimConfig(t_tsc_s=900)
    env = run_controller_episode(grid2, sched, Controller("advancedmp"), cfg, trace=True)
    path = tmp_path / "trace.csv"
    env.sim.write_trace(path)
    replay = defaultdict(float)
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            d = int(row["tick"]) // cfg.t_phase_s
            j = grid2.lanes[int(row["lane"])].jurisdiction
            replay[d, j] += -(cfg.v_max_mps - float(row["speed"]))
    series = env.ledger.series("r_ifdg")
    assert series.shape == (cfg.n_decisions, 4)
    for d in range(cfg.n_decisions):
        for j in range(4):
            assert series[d, j] == pytest.approx(replay.get((d, j), 0.0), rel=1e-12, abs=1e-9)


def test_identity_empty_and_free_flow():
    net = build_grid_network(1, 1, 300)
    cfg = SimConfig(v_max_mps=10.0, t_tsc_s=90)
    env = run_controller_episode(net, FlowSchedule([]), Controller("fixed"), cfg)
    assert ifdg_travel_time_identity(env.ledger, env.summary()) == (0.0, 0.0, 0.0)
    route = (net.roads[net.in_road(0, Direction.N)][Turn.RIGHT], net.roads[net.out_road(0, Direction.W)][Turn.RIGHT])
    env = run_controller_episode(net, FlowSchedule([FlowEntry(0, route)]), Controller("fixed"), cfg)
    lhs, rhs, diff = ifdg_travel_time_identity(env.ledger, env.summary())
    assert lhs == 0.0 and rhs == pytest.approx(0.0, abs=1e-9)
    assert env.summary().travel_times == [60.0]


def test_identity_and_stt_on_3x3(grid3):
    env = run_controller_episode(grid3, desk_flow(grid3, total=500, seed=11), Controller("maxpressure"))
    summ = env.summary()
    assert summ.inserted >= 500
    lhs, rhs, diff = ifdg_travel_time_identity(env.ledger, summ)
    assert diff / abs(rhs) <= 1e-6
    # per-vehicle gap integral also matches
    per_vehicle = sum(env.ledger.vehicle_gap.values())
    assert -per_vehicle == pytest.approx(lhs, rel=1e-9)
    neg_stt, total = stt_travel_time_identity(env.ledger, summ)
    assert neg_stt == total == sum(summ.travel_times)


def test_stt_leaver_and_stayer():
    assert stt_reward(record(visits=[(0, 0, 8, 12)]), 0) == -4
    assert stt_reward(record(visits=[(0, 0, -5, -1)]), 0) == -15
    assert stt_reward(record(visits=[(0, 0, 8, -1)], t0=0, t1=15), 0) == -7


def test_intervals_tile_lifetimes(grid2):
    env = run_controller_episode(grid2, desk_flow(grid2, total=300, seed=3), Controller("fixed"),
                                 SimConfig(t_tsc_s=900))
    by_id = {v.id: v for v in env.sim.vehicles}
    intervals = env.ledger.vehicle_intervals()
    for vid, ivs in intervals.items():
        v = by_id[vid]
        leave = v.leave_s if v.leave_s is not None else env.sim.clock_s
        assert ivs[0][1] == v.actual_enter_s and ivs[-1][2] == leave
        for (j0, a0, b0), (j1, a1, b1) in zip(ivs, ivs[1:]):
            assert b0 == a1 and j0 != j1
        ticks = env.ledger.vehicle_ticks[vid]
        assert ticks == leave - v.actual_enter_s


def test_rewards_non_positive(grid2):
    env = run_controller_episode(grid2, desk_flow(grid2, total=300, seed=5), Controller("maxpressure"),
                                 SimConfig(t_tsc_s=900))
    for name in SERIES:
        assert np.all(env.ledger.series(name) <= 0), name


def test_timeloss_examples(grid3):
    sim = Simulation(grid3, FlowSchedule([]), SimConfig())
    lanes = grid3.intersections[0].entering_lanes
    place(sim, lanes[0], 100.0, 11.11)
    assert timeloss_reward(sim, 0) == pytest.approx(0.0)
    place(sim, lanes[1], 300.0, 0.0)
    place(sim, lanes[2], 300.0, 0.0)
    assert timeloss_reward(sim, 0) == pytest.approx(-2.0)


@pytest.mark.parametrize("seed", range(4))
def test_state_rewards_match_scans(grid3, seed):
    sim = random_state(grid3, np.random.default_rng(seed))
    for node in grid3.intersections:
        scan = -sum(1 - v.speed_mps / 11.11 for v in sim.vehicles if v.lane in node.entering_lanes)
        assert timeloss_reward(sim, node.id) == pytest.approx(scan)
        assert queue_reward(sim, node.id) == -queue_length(sim, node.id)
        assert pressure_reward(sim, node.id) == -abs(pressure(sim, node.id))
        assert pressure_reward(sim, node.id, signed=True) == -pressure(sim, node.id)


def test_queue_pressure_examples(grid3):
    sim = Simulation(grid3, FlowSchedule([]), SimConfig())
    assert (queue_reward(sim, 4), pressure_reward(sim, 4)) == (0, 0)
    node = grid3.intersections[4]
    for k in range(4):
        place(sim, node.entering_lanes[k], 300.0, 0.0)
    place(sim, node.exiting_lanes[0], 300.0, 0.0)
    assert (queue_reward(sim, 4), pressure_reward(sim, 4)) == (-4, -3)


def test_correlation_report(tmp_path, grid3):
    env = run_controller_episode(grid3, desk_flow(grid3, total=2500, seed=1), Controller("fixed"))
    table = reward_correlation_report(env.ledger)
    lookup = {(a, b): r for a, b, r in table}
    for name in SERIES:
        assert lookup[name, name] == pytest.approx(1.0)
    assert lookup["r_ifdg", "r_queue"] > 0
    path = tmp_path / "ledger.csv"
    env.ledger.to_csv(path)
    data = read_ledger_csv(path)
    for (a, b), r in lookup.items():
        assert r == pytest.approx(np.corrcoef(data[a], data[b])[0, 1], abs=1e-9)
    assert reward_correlation_report(data) == pytest.approx(table)
    text = write_correlation_csv(table, tmp_path / "corr.csv")
    assert text.startswith("# normalization")


def test_correlation_constant_series_and_short_ledger(grid2):
    env = run_controller_episode(grid2, FlowSchedule([]), Controller("fixed"), SimConfig(t_tsc_s=60))
    table = reward_correlation_report(env.ledger)
    assert all(r is None for _, _, r in table)
    assert UNDEFINED in write_correlation_csv(table)
    short = run_controller_episode(grid2, FlowSchedule([]), Controller("fixed"), SimConfig(t_tsc_s=15))
    with pytest.raises(ValueError):
        reward_correlation_report(short.ledger)
