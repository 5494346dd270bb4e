"""Per-intersection observations.

The raw observation (28 values) is the current phase one-hot, the
efficient pressure of each of the 12 movements and the number of running
vehicles within the effective range of each movement's stop line. The
augmented observation appends the previous raw observation and a 2-D
sinusoidal position encoding.
"""
from __future__ import annotations

import numpy as np

from .network import N_MOVEMENTS, N_PHASES, Movement, RoadNetwork
from .simulator import Simulation

WAITING_SPEED_MPS = 0.1
RAW_DIM = N_PHASES + 2 * N_MOVEMENTS
POS_DIM = 16
AUG_DIM = 2 * RAW_DIM + POS_DIM


def lane_waiting(sim: Simulation) -> np.ndarray:
    return np.array([sum(1 for v in q if v.speed_mps < WAITING_SPEED_MPS) for q in sim.lanes],
                    dtype=np.float64)


def lane_running_in_range(sim: Simulation, range_m: float) -> np.ndarray:
    if not range_m > 0:
        raise ValueError("range_m must be positive")
    out = np.zeros(len(sim.lanes))
    lengths = sim.network.lane_length
    for lane_id, q in enumerate(sim.lanes):
        if q:
            front = lengths[lane_id] - range_m
            out[lane_id] = sum(1 for v in q if v.speed_mps >= WAITING_SPEED_MPS and v.pos_m >= front)
    return out


def default_range(sim_or_config) -> float:
    cfg = getattr(sim_or_config, "config", sim_or_config)
    return cfg.v_max_mps * cfg.t_phase_s


def queue_length(sim: Simulation, intersection: int) -> int:
    lanes = sim.network.intersections[intersection].entering_lanes
    return sum(1 for lid in lanes for v in sim.lanes[lid] if v.speed_mps < WAITING_SPEED_MPS)


def pressure(sim: Simulation, intersection: int) -> int:
    node = sim.network.intersections[intersection]
    up = sum(1 for lid in node.entering_lanes for v in sim.lanes[lid] if v.speed_mps < WAITING_SPEED_MPS)
    down = sum(1 for lid in node.exiting_lanes for v in sim.lanes[lid] if v.speed_mps < WAITING_SPEED_MPS)
    return up - down


def efficient_pressure(sim: Simulation, movement: Movement) -> float:
    # one dedicated lane per side of the movement, so the lane averages are the lane queues
    def q(lid):
        return sum(1 for v in sim.lanes[lid] if v.speed_mps < WAITING_SPEED_MPS)
    return float(q(movement.from_lane) - q(movement.to_lane))


def running_in_range(sim: Simulation, movement: Movement, range_m: float) -> int:
    if not range_m > 0:
        raise ValueError("range_m must be positive")
    length = sim.network.lane_length[movement.from_lane]
    return sum(1 for v in sim.lanes[movement.from_lane]
               if v.speed_mps >= WAITING_SPEED_MPS and length - v.pos_m <= range_m)


def raw_observations(sim: Simulation, range_m: float | None = None,
                     waiting: np.ndarray | None = None) -> np.ndarray:
    """(n_intersections, 28) matrix of raw observations."""
    net = sim.network
    range_m = default_range(sim) if range_m is None else range_m
    if waiting is None:
        waiting = lane_waiting(sim)
    running = lane_running_in_range(sim, range_m)
    n = net.n_intersections
    obs = np.zeros((n, RAW_DIM))
    obs[np.arange(n), sim.phase] = 1.0
    obs[:, N_PHASES:N_PHASES + N_MOVEMENTS] = waiting[net.movement_from] - waiting[net.movement_to]
    obs[:, N_PHASES + N_MOVEMENTS:] = running[net.movement_from]
    return obs


def position_encoding(grid_pos: tuple[int, int], dim: int = POS_DIM) -> np.ndarray:
    """2-D sin/cos encoding: first half encodes the row, second half the column."""
    if dim <= 0 or dim % 4:
        raise ValueError(f"position encoding dim must be a positive multiple of 4, got {dim}")
    quarter = dim // 4
    omega = 1.0 / 10000.0 ** (np.arange(quarter) / quarter)
    out = np.empty(dim)
    for half, coord in enumerate(grid_pos):
        angles = coord * omega
        seg = out[half * dim // 2:(half + 1) * dim // 2]
        seg[0::2] = np.sin(angles)
        seg[1::2] = np.cos(angles)
    return out


def network_encodings(network: RoadNetwork, dim: int = POS_DIM) -> np.ndarray:
    return np.stack([position_encoding(node.grid_pos, dim) for node in network.intersections])


def augment(s_d: np.ndarray, s_prev: np.ndarray | None, encodings: np.ndarray,
            first_step: str = "zeros") -> np.ndarray:
    """Concatenate current, previous (zeros or a copy at d=0) and position encoding."""
    s_d = np.asarray(s_d, dtype=np.float64)
    encodings = np.asarray(encodings, dtype=np.float64)
    if s_prev is None:
        if first_step == "zeros":
            s_prev = np.zeros_like(s_d)
        elif first_step == "duplicate":
            s_prev = s_d
        else:
            raise ValueError(f"unknown first_step mode {first_step!r}")
    s_prev = np.asarray(s_prev, dtype=np.float64)
    if not (len(s_d) == len(s_prev) == len(encodings)) or s_d.shape != s_prev.shape:
        raise ValueError(
            f"observation lists disagree: {s_d.shape}, {s_prev.shape}, {encodings.shape}")
    return np.concatenate([s_d, s_prev, encodings], axis=1)


def split_augmented(aug: np.ndarray, raw_dim: int = RAW_DIM) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    aug = np.asarray(aug)
    return aug[..., :raw_dim], aug[..., raw_dim:2 * raw_dim], aug[..., 2 * raw_dim:]

