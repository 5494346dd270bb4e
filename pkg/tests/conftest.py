from __future__ import annotations

import numpy as np
import pytest

from denselight.flows import FlowSynthesisSpec, synthesize_flow
from denselight.network import build_grid_network
from denselight.simulator import FlowSchedule, SimConfig, Simulation, Vehicle


def place(sim: Simulation, lane_id: int, pos: float, speed: float, route: tuple[int, ...] | None = None) -> Vehicle:
    """Put a vehicle directly on a lane (queues stay sorted front-to-back)."""
    vid = len(sim.vehicles)
    v = Vehicle(vid, route or (lane_id,), 0)
    v.pos_m, v.speed_mps = float(pos), float(speed)
    v.actual_enter_s = sim.clock_s
    v.jurisdiction = sim.network.lanes[lane_id].jurisdiction
    v.jurisdiction_enter_s = sim.clock_s
    sim.vehicles.append(v)
    q = sim.lanes[lane_id]
    q.append(v)
    q.sort(key=lambda x: -x.pos_m)
    sim.active_count += 1
    sim.inserted_count += 1
    return v


def random_state(network, rng: np.random.Generator, max_per_lane: int = 6) -> Simulation:
    """Empty-schedule simulation with randomly placed vehicles and random phases."""
    sim = Simulation(network, FlowSchedule([]), SimConfig())
    spacing = sim.config.spacing_m
    speeds = np.array([0.0, 0.05, 0.0999, 0.1, 0.5, 5.0, 11.11])
    for lane in network.lanes:
        k = int(rng.integers(0, max_per_lane + 1))
        if k == 0:
            continue
        slots = rng.choice(int(lane.length_m // spacing), size=k, replace=False)
        for s in sorted(slots, reverse=True):
            place(sim, lane.id, s * spacing + rng.uniform(0, 0.5), speeds[rng.integers(len(speeds))])
    sim.phase = [int(p) for p in rng.integers(0, 4, network.n_intersections)]
    return sim


@pytest.fixture(scope="session")
def grid3():
    return build_grid_network(3, 3, 300)


@pytest.fixture(scope="session")
def grid2():
    return build_grid_network(2, 2, 300)


def desk_flow(network, total: int = 400, seed: int = 0, resample: float = 0.3):
    spec = FlowSynthesisSpec(pattern="peaked-od", total_vehicles=total, resample_fraction=resample,
                             fluctuation_factor=1, seed=seed)
    return synthesize_flow(network, spec)[0]


# acceptance outcomes, printed as one line per criterion at the end of the session
ACCEPTANCE: dict[int, tuple[bool, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[k]
        terminalreporter.write_line(f"criterion {k}: {'PASS' if ok else 'FAIL'} - {detail}")
