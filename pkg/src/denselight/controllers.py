"""Classical signal controllers: Fixed-Time, MaxPressure, Efficient-MP, Advanced-MP.

All controllers are pure functions of the simulation state (and the
decision index for Fixed-Time). Ties go to the lowest phase id, except
Advanced-MP, which keeps the current phase on an exact tie.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .features import default_range, lane_running_in_range, lane_waiting
from .network import N_PHASES, RoadNetwork
from .simulator import Simulation

CONTROLLERS = ("fixed", "maxpressure", "efficientmp", "advancedmp")
ADVANCED_VARIANTS = ("combined", "running")


def fixed_time(d: int, cycle: tuple[int, ...] = (0, 1, 2, 3)) -> int:
    return cycle[d % len(cycle)]


def _phase_sums(network: RoadNetwork, intersection: int, per_movement: np.ndarray) -> np.ndarray:
    node = network.intersections[intersection]
    return np.array([per_movement[list(ph.movements)].sum() for ph in node.phases])


def max_pressure_scores(network: RoadNetwork, intersection: int, waiting: np.ndarray) -> np.ndarray:
    """Per-phase sum of (waiting on from-lane - waiting on to-lane)."""
    per_mv = waiting[network.movement_from[intersection]] - waiting[network.movement_to[intersection]]
    return _phase_sums(network, intersection, per_mv)


def efficient_pressure_scores(network: RoadNetwork, intersection: int, queues: np.ndarray) -> np.ndarray:
    # dedicated lanes: upstream/downstream average queues are single-lane queues
    per_mv = queues[network.movement_from[intersection]] - queues[network.movement_to[intersection]]
    return _phase_sums(network, intersection, per_mv)


def advanced_mp_scores(network: RoadNetwork, intersection: int, queues: np.ndarray,
                       running: np.ndarray, current: int, variant: str = "combined") -> np.ndarray:
    if variant not in ADVANCED_VARIANTS:
        raise ValueError(f"unknown Advanced-MP variant {variant!r}")
    scores = efficient_pressure_scores(network, intersection, queues)
    run = _phase_sums(network, intersection, running[network.movement_from[intersection]])
    if variant == "combined":
        scores[current] += run[current]
    else:
        scores[current] = run[current]
    return scores


def argmax_lowest(scores: np.ndarray) -> int:
    return int(np.argmax(scores))


def argmax_prefer(scores: np.ndarray, preferred: int) -> int:
    if scores[preferred] >= scores.max():
        return int(preferred)
    return int(np.argmax(scores))


def max_pressure(sim: Simulation, intersection: int) -> int:
    return argmax_lowest(max_pressure_scores(sim.network, intersection, lane_waiting(sim)))


def efficient_mp(sim: Simulation, intersection: int) -> int:
    return argmax_lowest(efficient_pressure_scores(sim.network, intersection, lane_waiting(sim)))


def advanced_mp(sim: Simulation, intersection: int, range_m: float | None = None,
                variant: str = "combined") -> int:
    range_m = default_range(sim) if range_m is None else range_m
    if not range_m > 0:
        raise ValueError("range_m must be positive")
    cur = sim.phase[intersection]
    scores = advanced_mp_scores(sim.network, intersection, lane_waiting(sim),
                                lane_running_in_range(sim, range_m), cur, variant)
    return argmax_prefer(scores, cur)


@dataclass
class Controller:
    """Network-wide controller; ``decide`` returns one phase per intersection."""

    kind: str
    cycle: tuple[int, ...] = (0, 1, 2, 3)
    range_m: float | None = None
    variant: str = "combined"
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in CONTROLLERS:
            raise ValueError(f"controller must be one of {CONTROLLERS}, got {self.kind!r}")
        if sorted(self.cycle) != list(range(N_PHASES)):
            raise ValueError("fixed-time cycle must be a permutation of the 4 phases")
        if self.variant not in ADVANCED_VARIANTS:
            raise ValueError(f"unknown Advanced-MP variant {self.variant!r}")
        self.metadata = {"kind": self.kind, "cycle": list(self.cycle),
                         "range_m": self.range_m, "advanced_variant": self.variant}

    def decide(self, sim: Simulation, d: int) -> list[int]:
        n = sim.network.n_intersections
        if self.kind == "fixed":
            return [fixed_time(d, self.cycle)] * n
        queues = lane_waiting(sim)
        net = sim.network
        if self.kind == "maxpressure":
            return [argmax_lowest(max_pressure_scores(net, i, queues)) for i in range(n)]
        if self.kind == "efficientmp":
            return [argmax_lowest(efficient_pressure_scores(net, i, queues)) for i in range(n)]
        range_m = default_range(sim) if self.range_m is None else self.range_m
        running = lane_running_in_range(sim, range_m)
        out = []
        for i in range(n):
            cur = sim.phase[i]
            out.append(argmax_prefer(advanced_mp_scores(net, i, queues, running, cur, self.variant), cur))
        return out
