"""Episode driver: simulator + observations + reward ledger behind a step/reset interface."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .controllers import Controller
from .features import augment, network_encodings, raw_observations
from .network import RoadNetwork
from .rewards import SERIES, RewardLedger, timeloss_rewards
from .simulator import EpisodeSummary, FlowSchedule, SimConfig, Simulation


@dataclass
class StepResult:
    obs: np.ndarray  # (n, 72) augmented observation after the step
    rewards: np.ndarray  # (5, n) block ordered as rewards.SERIES
    done: bool

    def reward(self, name: str = "r_ifdg") -> np.ndarray:
        return self.rewards[SERIES.index(name)]


class TrafficEnv:
    """One episode at a time over a fixed network and flow schedule."""

    def __init__(self, network: RoadNetwork, schedule: FlowSchedule, config: SimConfig | None = None,
                 range_m: float | None = None, first_step: str = "zeros", signed_pressure: bool = False,
                 trace: bool = False):
        self.network = network
        self.schedule = schedule
        self.config = config or SimConfig()
        self.range_m = range_m
        self.first_step = first_step
        self.signed_pressure = signed_pressure
        self.trace = trace
        self.encodings = network_encodings(network)
        self.sim: Simulation | None = None
        self.ledger: RewardLedger | None = None
        self.d = 0
        self._prev_raw: np.ndarray | None = None
        self._raw: np.ndarray | None = None

    @property
    def n_intersections(self) -> int:
        return self.network.n_intersections

    @property
    def n_decisions(self) -> int:
        return self.config.n_decisions

    def reset(self) -> np.ndarray:
        self.sim = Simulation(self.network, self.schedule, self.config, trace=self.trace)
        self.ledger = RewardLedger(self.network.n_intersections, self.config.v_max_mps)
        self.d = 0
        self._prev_raw = None
        self._raw = raw_observations(self.sim, self.range_m)
        return self.observation()

    def observation(self) -> np.ndarray:
        return augment(self._raw, self._prev_raw, self.encodings, self.first_step)

    def step(self, phases) -> StepResult:
        if self.sim is None:
            raise RuntimeError("reset() must be called before step()")
        timeloss = timeloss_rewards(self.sim)
        rec = self.sim.run_decision_step([int(p) for p in phases])
        block = self.ledger.record(self.d, rec, self.sim, timeloss, self.signed_pressure)
        self.d += 1
        self._prev_raw = self._raw
        self._raw = raw_observations(self.sim, self.range_m)
        return StepResult(self.observation(), block, self.sim.done)

    def summary(self) -> EpisodeSummary:
        return self.sim.summary()


def run_controller_episode(network: RoadNetwork, schedule: FlowSchedule, controller: Controller,
                           config: SimConfig | None = None, trace: bool = False,
                           signed_pressure: bool = False) -> TrafficEnv:
    """Play one full episode with a classical controller; returns the finished env."""
    env = TrafficEnv(network, schedule, config, range_m=controller.range_m, trace=trace,
                     signed_pressure=signed_pressure)
    env.reset()
    done = False
    while not done:
        done = env.step(controller.decide(env.sim, env.d)).done
    return env
