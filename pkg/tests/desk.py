"""The desk-scale learning task shared by the acceptance checks."""
from __future__ import annotations

from denselight.flows import FlowSynthesisSpec, synthesize_flow
from denselight.network import build_grid_network

DESK_SPEC = FlowSynthesisSpec(pattern="peaked-od", total_vehicles=2500, resample_fraction=0.3,
                              fluctuation_factor=1, seed=1)


def desk_task():
    network = build_grid_network(3, 3, 300)
    schedule, _ = synthesize_flow(network, DESK_SPEC)
    return network, schedule
