from __future__ import annotations

import itertools

import numpy as np
import pytest

from denselight.features import (AUG_DIM, RAW_DIM, augment, default_range, efficient_pressure,
                                 network_encodings, position_encoding, pressure, queue_length,
                                 raw_observations, running_in_range, split_augmented)
from denselight.network import build_grid_network
from denselight.simulator import FlowSchedule, SimConfig, Simulation

from conftest import place, random_state


def empty_sim(net):
    return Simulation(net, FlowSchedule([]), SimConfig())


def brute_waiting(sim, lane_ids):
    return sum(1 for v in sim.vehicles if v.leave_s is None and v.actual_enter_s is not None
               and v.lane in lane_ids and v.speed_mps < 0.1)


def test_queue_length_examples(grid3):
    sim = empty_sim(grid3)
    assert queue_length(sim, 4) == 0
    lanes = grid3.intersections[4].entering_lanes
    for k in range(3):
        place(sim, lanes[k], 300.0, 0.0)
    place(sim, lanes[5], 100.0, 5.0)
    place(sim, lanes[6], 100.0, 5.0)
    assert queue_length(sim, 4) == 3


def test_pressure_examples(grid3):
    sim = empty_sim(grid3)
    assert pressure(sim, 4) == 0
    node = grid3.intersections[4]
    for k in range(5):
        place(sim, node.entering_lanes[k], 300.0, 0.0)
    for k in range(2):
        place(sim, node.exiting_lanes[k], 300.0, 0.0)
    assert pressure(sim, 4) == 3


def test_efficient_pressure_single_lane(grid3):
    sim = empty_sim(grid3)
    mv = grid3.intersections[4].movements[1]
    assert efficient_pressure(sim, mv) == 0
    for k in range(4):
        place(sim, mv.from_lane, 300.0 - 7.5 * k, 0.0)
    place(sim, mv.to_lane, 200.0, 0.0)
    assert efficient_pressure(sim, mv) == 3


def test_running_in_range_examples(grid3):
    sim = empty_sim(grid3)
    mv = grid3.intersections[4].movements[4]
    assert running_in_range(sim, mv, 166.65) == 0
    place(sim, mv.from_lane, 100.0, 8.0)  # 200 m from the stop line
    assert running_in_range(sim, mv, 166.65) == 0
    place(sim, mv.from_lane, 150.0, 8.0)  # 150 m away, running
    place(sim, mv.from_lane, 250.0, 0.0)  # close but waiting
    assert running_in_range(sim, mv, 166.65) == 1
    with pytest.raises(ValueError):
        running_in_range(sim, mv, 0.0)


@pytest.mark.parametrize("seed", range(8))
def test_features_match_exhaustive_scan(grid3, seed):
    rng = np.random.default_rng(seed)
    sim = random_state(grid3, rng)
    rng_m = default_range(sim)
    assert rng_m == pytest.approx(11.11 * 15)
    obs = raw_observations(sim)
    for node in grid3.intersections:
        assert queue_length(sim, node.id) == brute_waiting(sim, set(node.entering_lanes))
        assert pressure(sim, node.id) == (brute_waiting(sim, set(node.entering_lanes))
                                          - brute_waiting(sim, set(node.exiting_lanes)))
        row = obs[node.id]
        assert row[:4].sum() == 1 and row[sim.phase[node.id]] == 1
        for mv in node.movements:
            ep = brute_waiting(sim, {mv.from_lane}) - brute_waiting(sim, {mv.to_lane})
            assert efficient_pressure(sim, mv) == ep
            assert row[4 + mv.index] == ep
            run = sum(1 for v in sim.vehicles if v.lane == mv.from_lane and v.speed_mps >= 0.1
                      and 300.0 - v.pos_m <= rng_m)
            assert running_in_range(sim, mv, rng_m) == run
            assert row[16 + mv.index] == run >= 0


def test_features_pure(grid3):
    sim = random_state(grid3, np.random.default_rng(3))
    assert np.array_equal(raw_observations(sim), raw_observations(sim))


def test_position_encoding_origin():
    p = position_encoding((0, 0))
    assert np.all(p[0::2] == 0.0) and np.all(p[1::2] == 1.0)


def test_position_encoding_separable():
    a, b = position_encoding((0, 0)), position_encoding((1, 0))
    assert np.array_equal(a[8:], b[8:])
    assert not np.array_equal(a[:8], b[:8])


def test_position_encoding_distinct_on_4x4():
    enc = network_encodings(build_grid_network(4, 4, 300))
    for i, j in itertools.combinations(range(16), 2):
        assert np.linalg.norm(enc[i] - enc[j]) > 1e-3


def test_position_encoding_dim_check():
    with pytest.raises(ValueError):
        position_encoding((1, 1), 10)


def test_augment_layout(grid3):
    sim = random_state(grid3, np.random.default_rng(5))
    s0 = raw_observations(sim)
    enc = network_encodings(grid3)
    aug = augment(s0, None, enc)
    assert aug.shape == (9, AUG_DIM) and AUG_DIM == 72
    cur, prev, pe = split_augmented(aug)
    assert np.array_equal(cur, s0) and np.all(prev == 0) and np.array_equal(pe, enc)
    dup = augment(s0, None, enc, first_step="duplicate")
    assert np.array_equal(dup[:, RAW_DIM:2 * RAW_DIM], s0)
    s1 = s0 + 1
    assert np.array_equal(split_augmented(augment(s1, s0, enc))[1], s0)
    with pytest.raises(ValueError):
        augment(s0[:3], None, enc)
    with pytest.raises(ValueError):
        augment(s0, None, enc, first_step="repeat")


def test_encoding_independent_of_traffic(grid3):
    a = random_state(grid3, np.random.default_rng(0))
    b = random_state(grid3, np.random.default_rng(1))
    ea = augment(raw_observations(a), None, network_encodings(grid3))[:, 56:]
    eb = augment(raw_observations(b), None, network_encodings(grid3))[:, 56:]
    assert np.array_equal(ea, eb)
