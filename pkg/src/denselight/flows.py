"""Routing and synthetic flow generation.

Routes are shortest paths (fewest intersections crossed) between a
boundary entry road and a boundary exit road, with no U-turns. A base
flow is drawn from one of a few temporal/OD patterns; the fluctuating
variant re-samples a fraction of the vehicles and adds copies back with
enter times drawn from a concentrated "rush" window.
"""
from __future__ import annotations

import json
from collections import deque
from dataclasses import dataclass, asdict
from functools import lru_cache

import numpy as np

from .network import Direction, RoadNetwork, Turn, turn_heading
from .simulator import FlowEntry, FlowSchedule

PATTERNS = ("uniform", "peaked-od", "rush-hour")
ARRIVAL_BIN_S = 300


class RouteError(ValueError):
    pass


def entry_roads(network: RoadNetwork) -> list[int]:
    return [r for r, lanes in enumerate(network.roads) if network.lanes[lanes[0]].is_boundary_entry]


def exit_roads(network: RoadNetwork) -> list[int]:
    return [r for r, lanes in enumerate(network.roads) if network.lanes[lanes[0]].is_boundary_exit]


def _road_label(network: RoadNetwork, road: int) -> str:
    lane = network.lanes[network.roads[road][0]]
    if lane.is_boundary_entry:
        return f"entry road {road} into {network.intersections[lane.downstream].grid_pos} heading {lane.heading.name}"
    if lane.is_boundary_exit:
        return f"exit road {road} from {network.intersections[lane.upstream].grid_pos} heading {lane.heading.name}"
    return f"road {road}"


@lru_cache(maxsize=64)
def _distances_to_exit(network: RoadNetwork, exit_road: int) -> dict[tuple[int, int], int]:
    """Intersections still to cross from state (intersection, arrival heading)."""
    rev: dict[tuple[int, int], list[tuple[int, int]]] = {}
    first = []
    for i in range(network.n_intersections):
        for h in Direction:
            for k in Turn:
                h2 = turn_heading(h, k)
                road = network.out_road(i, h2)
                nxt = network.neighbor(i, h2)
                if nxt is None:
                    if road == exit_road:
                        first.append((i, int(h)))
                else:
                    rev.setdefault((nxt, int(h2)), []).append((i, int(h)))
    dist = {s: 1 for s in first}
    queue = deque(first)
    while queue:
        s = queue.popleft()
        for p in rev.get(s, ()):
            if p not in dist:
                dist[p] = dist[s] + 1
                queue.append(p)
    return dist


def route_between(network: RoadNetwork, entry_road: int, exit_road: int,
                  rng: np.random.Generator | None = None) -> tuple[int, ...]:
    """Lane sequence of a shortest route; ties broken by ``rng`` or lowest turn."""
    lane0 = network.lanes[network.roads[entry_road][0]]
    if not lane0.is_boundary_entry:
        raise RouteError(f"{_road_label(network, entry_road)} is not a boundary entry")
    if not network.lanes[network.roads[exit_road][0]].is_boundary_exit:
        raise RouteError(f"{_road_label(network, exit_road)} is not a boundary exit")
    dist = _distances_to_exit(network, exit_road)
    state = (lane0.downstream, int(lane0.heading))
    if state not in dist:
        raise RouteError(
            f"no route from {_road_label(network, entry_road)} to {_road_label(network, exit_road)}")
    roads = [entry_road]
    turns = []
    while True:
        i, h = state
        d = dist[state]
        options = []
        for k in Turn:
            h2 = turn_heading(Direction(h), k)
            nxt = network.neighbor(i, h2)
            if d == 1:
                if nxt is None and network.out_road(i, h2) == exit_road:
                    options.append((k, None))
            elif nxt is not None and dist.get((nxt, int(h2))) == d - 1:
                options.append((k, (nxt, int(h2))))
        k, state2 = options[int(rng.integers(len(options)))] if rng is not None and len(options) > 1 else options[0]
        turns.append(k)
        roads.append(network.out_road(i, turn_heading(Direction(h), k)))
        if state2 is None:
            break
        state = state2
    # lane on each road = turn made at its downstream end; exit lane mirrors the last turn
    lanes = [network.roads[r][k] for r, k in zip(roads[:-1], turns)]
    lanes.append(network.roads[roads[-1]][turns[-1]])
    return tuple(lanes)


def reachable_pairs(network: RoadNetwork) -> list[tuple[int, int]]:
    pairs = []
    for x in exit_roads(network):
        dist = _distances_to_exit(network, x)
        for e in entry_roads(network):
            ln = network.lanes[network.roads[e][0]]
            if (ln.downstream, int(ln.heading)) in dist:
                pairs.append((e, x))
    return pairs


@dataclass
class FlowSynthesisSpec:
    pattern: str = "uniform"
    total_vehicles: int = 1000
    # copies added back per re-sampled vehicle
    fluctuation_factor: int = 1
    resample_fraction: float = 0.0
    seed: int = 0
    horizon_s: int = 3600
    # re-assigned enter times are drawn from [window_start, window_end) seconds;
    # None means the middle third of the horizon
    window_start: float | None = None
    window_end: float | None = None
    hotspot_weight: float = 4.0

    def __post_init__(self):
        if self.pattern not in PATTERNS:
            raise ValueError(f"pattern must be one of {PATTERNS}, got {self.pattern!r}")
        if self.total_vehicles <= 0:
            raise ValueError("total_vehicles must be positive")
        if not 0.0 <= self.resample_fraction <= 1.0:
            raise ValueError("resample_fraction must be in [0, 1]")
        if self.fluctuation_factor < 0:
            raise ValueError("fluctuation_factor must be non-negative")

    @property
    def window(self) -> tuple[float, float]:
        lo = self.horizon_s / 3 if self.window_start is None else self.window_start
        hi = 2 * self.horizon_s / 3 if self.window_end is None else self.window_end
        if not 0 <= lo < hi <= self.horizon_s:
            raise ValueError(f"fluctuation window [{lo}, {hi}) outside [0, {self.horizon_s})")
        return lo, hi

    @classmethod
    def from_json(cls, text: str) -> "FlowSynthesisSpec":
        return cls(**json.loads(text))

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)


@dataclass
class ArrivalStats:
    """Arrivals per 300 s bin, in the layout of a dataset statistics table."""

    mean: float
    std: float
    max: int
    min: int

    def as_row(self) -> dict:
        return {"Mean": round(self.mean, 2), "Std.": round(self.std, 2), "Max": self.max, "Min": self.min}


def arrival_stats(schedule: FlowSchedule, horizon_s: int, bin_s: int = ARRIVAL_BIN_S) -> ArrivalStats:
    n_bins = max(1, int(np.ceil(horizon_s / bin_s)))
    times = np.array([e.enter_s for e in schedule.entries], dtype=np.int64)
    counts = np.bincount(np.minimum(times // bin_s, n_bins - 1), minlength=n_bins) if len(times) else np.zeros(n_bins, int)
    # population std over bins
    return ArrivalStats(float(counts.mean()), float(counts.std()), int(counts.max()), int(counts.min()))


def _od_weights(network: RoadNetwork, roads: list[int], hotspot_weight: float) -> np.ndarray:
    mid_r, mid_c = network.rows // 2, network.cols // 2
    w = []
    for r in roads:
        ln = network.lanes[network.roads[r][0]]
        j = ln.downstream if ln.downstream is not None else ln.upstream
        row, col = network.intersections[j].grid_pos
        hot = (row == mid_r and ln.heading in (Direction.E, Direction.W)) or (
            col == mid_c and ln.heading in (Direction.N, Direction.S))
        w.append(hotspot_weight if hot else 1.0)
    w = np.asarray(w)
    return w / w.sum()


def synthesize_flow(network: RoadNetwork, spec: FlowSynthesisSpec) -> tuple[FlowSchedule, dict]:
    rng = np.random.default_rng(spec.seed)
    pairs = reachable_pairs(network)
    if not pairs:
        raise RouteError("network has no reachable entry/exit pair")
    n = spec.total_vehicles
    if spec.pattern == "peaked-od":
        ents, exs = entry_roads(network), exit_roads(network)
        we = dict(zip(ents, _od_weights(network, ents, spec.hotspot_weight)))
        wx = dict(zip(exs, _od_weights(network, exs, spec.hotspot_weight)))
        w = np.array([we[e] * wx[x] for e, x in pairs])
        w /= w.sum()
    else:
        w = np.full(len(pairs), 1.0 / len(pairs))
    od = rng.choice(len(pairs), size=n, p=w)
    if spec.pattern == "rush-hour":
        times = rng.triangular(0.0, 0.5 * spec.horizon_s, spec.horizon_s, size=n)
    else:
        times = rng.uniform(0.0, spec.horizon_s, size=n)
    times = np.minimum(np.floor(times).astype(np.int64), spec.horizon_s - 1)

    entries = []
    for k in range(n):
        e, x = pairs[od[k]]
        entries.append(FlowEntry(int(times[k]), route_between(network, e, x, rng)))
    base = FlowSchedule(sorted(entries, key=lambda f: f.enter_s))

    n_resample = int(round(spec.resample_fraction * n))
    extra = []
    if n_resample and spec.fluctuation_factor:
        lo, hi = spec.window
        picked = rng.choice(n, size=n_resample, replace=False)
        for idx in picked:
            for _ in range(spec.fluctuation_factor):
                t = int(np.floor(rng.uniform(lo, hi)))
                extra.append(FlowEntry(t, base.entries[idx].route))
    schedule = FlowSchedule(sorted(base.entries + extra, key=lambda f: f.enter_s))
    stats = {
        "base": asdict(arrival_stats(base, spec.horizon_s)),
        "flow": asdict(arrival_stats(schedule, spec.horizon_s)),
        "vehicles": len(schedule),
        "spec": asdict(spec),
    }
    return schedule, stats
