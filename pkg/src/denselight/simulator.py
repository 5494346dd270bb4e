"""Deterministic 1-second-tick microscopic simulator on a grid network.

Dynamics are deliberately simple: speeds adjust instantaneously, vehicles
follow their leader at a fixed jam spacing (``vehicle_len_m + min_gap_m``),
stop at the stop line when their movement is red or yellow, and cross the
intersection instantaneously, carrying any overshoot into the next lane.

Tick ``t`` covers the interval (t, t+1]. Within a tick:

1. pending vehicles whose scheduled time is <= t are inserted at position 0
   of their first lane when the lane tail is at least one jam spacing away
   (``x_e = t``); otherwise they wait outside the network;
2. lanes are processed in the fixed order exits, interior, entries; each
   lane front-to-back, so space freed downstream is usable upstream within
   the same tick at most one lane back;
3. every vehicle that was in the network at the start of the tick produces
   one sample ``(jurisdiction at tick start, displacement)``. Displacement
   over one second is the recorded speed.

A vehicle finishing its last lane during tick t leaves with ``x_l = t+1``.
"""
from __future__ import annotations

import csv
from collections import deque
from dataclasses import dataclass, field, asdict
from itertools import chain
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .network import N_PHASES, RoadNetwork, phase_of_lane, turn_heading


class ContractViolation(RuntimeError):
    """Raised when an operation is called outside its precondition."""


class UndefinedMetricError(ValueError):
    pass


@dataclass(frozen=True)
class SimConfig:
    v_max_mps: float = 11.11
    vehicle_len_m: float = 5.0
    min_gap_m: float = 2.5
    tick_s: int = 1
    t_phase_s: int = 15
    yellow_s: int = 3
    t_tsc_s: int = 3600
    seed: int = 0
    # travel time measured from scheduled rather than actual insertion
    travel_time_from_scheduled: bool = False

    def __post_init__(self):
        if self.tick_s != 1:
            raise ValueError("tick_s is fixed at 1 second")
        if self.v_max_mps <= 0:
            raise ValueError("v_max_mps must be positive")
        if self.vehicle_len_m <= 0 or self.min_gap_m < 0:
            raise ValueError("vehicle_len_m must be positive and min_gap_m non-negative")
        if self.t_phase_s <= 0 or self.t_tsc_s % self.t_phase_s:
            raise ValueError("t_tsc_s must be a positive multiple of t_phase_s")
        if not 0 <= self.yellow_s < self.t_phase_s:
            raise ValueError("yellow_s must be in [0, t_phase_s)")

    @property
    def spacing_m(self) -> float:
        return self.vehicle_len_m + self.min_gap_m

    @property
    def n_decisions(self) -> int:
        return self.t_tsc_s // self.t_phase_s


@dataclass(frozen=True)
class FlowEntry:
    enter_s: int
    route: tuple[int, ...]


@dataclass
class FlowSchedule:
    entries: list[FlowEntry] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.entries)

    def validate(self, network: RoadNetwork) -> None:
        for k, e in enumerate(self.entries):
            route = e.route
            if not route:
                raise ValueError(f"flow entry {k}: empty route")
            if not network.lane(route[0]).is_boundary_entry:
                raise ValueError(f"flow entry {k}: route must start on a boundary entry lane")
            if not network.lane(route[-1]).is_boundary_exit:
                raise ValueError(f"flow entry {k}: route must end on a boundary exit lane")
            for a, b in zip(route, route[1:]):
                la, lb = network.lane(a), network.lane(b)
                if la.downstream is None or lb.upstream != la.downstream:
                    raise ValueError(f"flow entry {k}: lanes {a} -> {b} are not connected")
                if turn_heading(la.heading, la.kind) != lb.heading:
                    raise ValueError(f"flow entry {k}: lane {a} ({la.kind.name}) cannot reach lane {b}")

    # CSV, one vehicle per line: enter_s,lane_0;lane_1;...;lane_k
    def write_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            for e in self.entries:
                w.writerow([e.enter_s, ";".join(map(str, e.route))])

    @classmethod
    def read_csv(cls, path: str | Path) -> "FlowSchedule":
        entries = []
        with open(path, newline="") as fh:
            for lineno, row in enumerate(csv.reader(fh), 1):
                if not row or row[0].startswith("#"):
                    continue
                if len(row) != 2:
                    raise ValueError(f"{path}:{lineno}: expected 'enter_s,lane;lane;...'")
                entries.append(FlowEntry(int(row[0]), tuple(int(x) for x in row[1].split(";"))))
        return cls(entries)


class Vehicle:
    __slots__ = (
        "id", "route", "lane_index", "pos_m", "speed_mps", "scheduled_enter_s",
        "actual_enter_s", "leave_s", "jurisdiction", "jurisdiction_enter_s",
        "distance_m", "moved_tick",
    )

    def __init__(self, vid: int, route: tuple[int, ...], scheduled_enter_s: int):
        self.id = vid
        self.route = route
        self.lane_index = 0
        self.pos_m = 0.0
        self.speed_mps = 0.0
        self.scheduled_enter_s = scheduled_enter_s
        self.actual_enter_s: int | None = None
        self.leave_s: int | None = None
        self.jurisdiction = -1
        self.jurisdiction_enter_s: int | None = None
        self.distance_m = 0.0
        self.moved_tick = -1

    @property
    def lane(self) -> int:
        return self.route[self.lane_index]

    def __repr__(self) -> str:
        return (f"Vehicle({self.id}, lane={self.lane}, pos={self.pos_m:.2f}, "
                f"v={self.speed_mps:.2f})")


@dataclass
class StepRecord:
    """Everything observed during one decision interval (t_start, t_end]."""

    t_start: int
    t_end: int
    # one sample per vehicle per tick
    sample_tick: np.ndarray
    sample_vehicle: np.ndarray
    sample_junction: np.ndarray
    sample_speed: np.ndarray
    # jurisdiction visits overlapping the interval: (vehicle, junction, enter_s, leave_s|-1)
    visits: np.ndarray
    entered: list[tuple[int, int]]  # (vehicle, x_e)
    left: list[tuple[int, int]]  # (vehicle, x_l)

    @property
    def n_samples(self) -> int:
        return len(self.sample_vehicle)


class Simulation:
    """Mutable simulation state plus the tick dynamics.

    One instance per episode; not thread-safe.
    """

    def __init__(self, network: RoadNetwork, schedule: FlowSchedule, config: SimConfig | None = None,
                 trace: bool = False):
        self.network = network
        self.config = config or SimConfig()
        self.clock_s = 0
        n_lanes = network.n_lanes
        self.lanes: list[list[Vehicle]] = [[] for _ in range(n_lanes)]
        n = network.n_intersections
        self.phase = [0] * n
        self.green_from = [0] * n
        self.vehicles: list[Vehicle] = [
            Vehicle(k, tuple(e.route), int(e.enter_s)) for k, e in enumerate(schedule.entries)
        ]
        self._schedule = deque(sorted(self.vehicles, key=lambda v: (v.scheduled_enter_s, v.id)))
        self._waiting: dict[int, deque[Vehicle]] = {}
        self.active_count = 0
        self.departed: list[Vehicle] = []
        self.inserted_count = 0

        self._lane_len = [ln.length_m for ln in network.lanes]
        self._lane_junction = [ln.jurisdiction for ln in network.lanes]
        self._gate_junction = [ln.downstream if ln.downstream is not None else -1 for ln in network.lanes]
        self._gate_phase = [
            -1 if (p := phase_of_lane(network, ln.id)) is None else p for ln in network.lanes
        ]
        exits = [ln.id for ln in network.lanes if ln.is_boundary_exit]
        entries = [ln.id for ln in network.lanes if ln.is_boundary_entry]
        interior = [ln.id for ln in network.lanes if not (ln.is_boundary_exit or ln.is_boundary_entry)]
        self._lane_order = exits + interior + entries

        self._trace_rows: list[tuple] | None = [] if trace else None
        self._reset_step_buffers()

    # -- signals -----------------------------------------------------------

    def set_phase(self, intersection: int, phase: int) -> None:
        if not 0 <= phase < N_PHASES or int(phase) != phase:
            raise ValueError(f"phase id must be in 0..{N_PHASES - 1}, got {phase}")
        if self.clock_s % self.config.t_phase_s:
            raise ContractViolation(f"set_phase at t={self.clock_s}, not a decision boundary")
        if phase != self.phase[intersection]:
            self.phase[intersection] = int(phase)
            self.green_from[intersection] = self.clock_s + self.config.yellow_s

    def in_yellow(self, intersection: int) -> bool:
        return self.clock_s < self.green_from[intersection]

    def is_green(self, lane_id: int) -> bool:
        """Whether a vehicle at the end of ``lane_id`` may cross during the current tick."""
        j = self._gate_junction[lane_id]
        p = self._gate_phase[lane_id]
        if p < 0:
            return True
        return self.clock_s >= self.green_from[j] and self.phase[j] == p

    # -- dynamics ----------------------------------------------------------

    def _reset_step_buffers(self) -> None:
        self._samples: list[tuple[int, int, int, float]] = []  # (tick, vehicle, junction, speed)
        self._closed_visits: list[tuple[int, int, int, int]] = []
        self._entered: list[tuple[int, int]] = []
        self._left: list[tuple[int, int]] = []
        self._step_start = self.clock_s

    def _insert_pending(self, t: int) -> None:
        sched = self._schedule
        while sched and sched[0].scheduled_enter_s <= t:
            v = sched.popleft()
            self._waiting.setdefault(v.route[0], deque()).append(v)
        if not self._waiting:
            return
        spacing = self.config.spacing_m
        emptied = []
        for lane_id, q in self._waiting.items():
            lane = self.lanes[lane_id]
            if lane and lane[-1].pos_m < spacing:
                continue
            v = q.popleft()
            v.actual_enter_s = t
            v.jurisdiction = self._lane_junction[lane_id]
            v.jurisdiction_enter_s = t
            lane.append(v)
            self.active_count += 1
            self.inserted_count += 1
            self._entered.append((v.id, t))
            if not q:
                emptied.append(lane_id)
        for lane_id in emptied:
            del self._waiting[lane_id]

    def advance_tick(self) -> None:
        t = self.clock_s
        if t >= self.config.t_tsc_s:
            raise ContractViolation(f"episode already finished at t={t}")
        self._insert_pending(t)

        vmax = self.config.v_max_mps
        spacing = self.config.spacing_m
        lanes = self.lanes
        lane_len = self._lane_len
        lane_junction = self._lane_junction
        gate_j = self._gate_junction
        gate_p = self._gate_phase
        phase = self.phase
        green_from = self.green_from
        samples = self._samples
        sample = samples.append
        trace = self._trace_rows
        n_before = len(samples)
        t1 = t + 1

        for lane_id in self._lane_order:
            q = lanes[lane_id]
            if not q:
                continue
            length = lane_len[lane_id]
            leader_pos = None  # new position of the vehicle ahead on this lane
            keep = []
            for v in q:
                if v.moved_tick == t:
                    # crossed into this lane earlier in the tick; it is at the tail
                    keep.append(v)
                    leader_pos = v.pos_m
                    continue
                v.moved_tick = t
                pos = v.pos_m
                junc = v.jurisdiction
                if trace is not None:
                    trace.append([t, v.id, lane_id, pos, 0.0])
                target = pos + vmax
                if leader_pos is not None:
                    cap = leader_pos - spacing
                    new = target if target < cap else cap
                elif target < length:
                    new = target
                else:
                    idx = v.lane_index
                    if idx == len(v.route) - 1:
                        # leaves the network during this tick
                        dist = length - pos
                        if dist > vmax:  # rounding guard
                            dist = vmax
                        v.distance_m += dist
                        v.speed_mps = dist
                        v.pos_m = length
                        v.leave_s = t1
                        self._closed_visits.append((v.id, junc, v.jurisdiction_enter_s, t1))
                        self._left.append((v.id, t1))
                        self.departed.append(v)
                        self.active_count -= 1
                        sample((t, v.id, junc, dist))
                        continue
                    p = gate_p[lane_id]
                    crossed = False
                    if p < 0 or (t >= green_from[gate_j[lane_id]] and phase[gate_j[lane_id]] == p):
                        nxt = v.route[idx + 1]
                        tq = lanes[nxt]
                        over = target - length
                        dist = vmax
                        if tq:
                            room = tq[-1].pos_m - spacing
                            if room < over:
                                over = room
                                dist = length - pos + over
                        if over >= 0.0:
                            v.distance_m += dist
                            v.speed_mps = dist
                            v.lane_index = idx + 1
                            v.pos_m = over
                            tq.append(v)
                            nj = lane_junction[nxt]
                            if nj != junc:
                                self._closed_visits.append((v.id, junc, v.jurisdiction_enter_s, t1))
                                v.jurisdiction = nj
                                v.jurisdiction_enter_s = t1
                            sample((t, v.id, junc, dist))
                            crossed = True
                    if crossed:
                        continue
                    new = length
                # an unconstrained move covers exactly v_max metres
                dist = vmax if new == target else new - pos
                v.distance_m += dist
                v.speed_mps = dist
                v.pos_m = new
                leader_pos = new
                keep.append(v)
                sample((t, v.id, junc, dist))
            if len(keep) != len(q):
                lanes[lane_id] = keep
        if trace is not None:
            # trace rows and samples are emitted in the same order
            new = samples[n_before:]
            for row, smp in zip(trace[len(trace) - len(new):], new):
                row[4] = smp[3]
        self.clock_s = t1

    # -- decision steps ----------------------------------------------------

    def run_decision_step(self, joint_phases: Sequence[int]) -> StepRecord:
        if self.clock_s % self.config.t_phase_s:
            raise ContractViolation(f"decision step requested at t={self.clock_s}")
        if self.clock_s >= self.config.t_tsc_s:
            raise ContractViolation("episode already finished")
        if len(joint_phases) != self.network.n_intersections:
            raise ValueError(f"expected {self.network.n_intersections} phases, got {len(joint_phases)}")
        for i, p in enumerate(joint_phases):
            self.set_phase(i, int(p))
        self._reset_step_buffers()
        for _ in range(self.config.t_phase_s):
            self.advance_tick()
        return self._collect_step()

    def _collect_step(self) -> StepRecord:
        t_end = self.clock_s
        open_visits = [
            (v.id, v.jurisdiction, v.jurisdiction_enter_s, -1)
            for q in self.lanes for v in q
        ]
        visits = self._closed_visits + open_visits
        cols = np.fromiter(chain.from_iterable(self._samples), np.float64,
                           count=4 * len(self._samples)).reshape(-1, 4).T
        rec = StepRecord(
            t_start=self._step_start,
            t_end=t_end,
            sample_tick=cols[0].astype(np.int64),
            sample_vehicle=cols[1].astype(np.int64),
            sample_junction=cols[2].astype(np.int64),
            sample_speed=cols[3].copy(),
            visits=np.asarray(visits, dtype=np.int64).reshape(-1, 4),
            entered=list(self._entered),
            left=list(self._left),
        )
        self._reset_step_buffers()
        return rec

    @property
    def done(self) -> bool:
        return self.clock_s >= self.config.t_tsc_s

    # -- queries -----------------------------------------------------------

    def active_vehicles(self) -> Iterable[Vehicle]:
        for q in self.lanes:
            yield from q

    @property
    def pending_count(self) -> int:
        return len(self._schedule) + sum(len(q) for q in self._waiting.values())

    def lane_speeds(self) -> list[list[float]]:
        return [[v.speed_mps for v in q] for q in self.lanes]

    def trace_rows(self) -> list[list]:
        """(tick, vehicle, lane, pos_at_tick_start, speed_during_tick) rows."""
        if self._trace_rows is None:
            raise ContractViolation("simulation was created without trace=True")
        return self._trace_rows

    def write_trace(self, path: str | Path) -> None:
        """Export ``tick,vehicle,lane,pos,speed``; lane/pos at tick start, speed over the tick."""
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["tick", "vehicle", "lane", "pos", "speed"])
            for tick, vid, lane, pos, speed in self.trace_rows():
                w.writerow([tick, vid, lane, repr(pos), repr(speed)])

    def summary(self) -> "EpisodeSummary":
        return summarize(self)


@dataclass
class EpisodeSummary:
    clock_s: int
    inserted: int
    departed: int
    active: int
    unserved: int
    travel_times: list[float]
    in_network_s: list[int]
    distances_m: list[float]  # accumulated per-tick displacement
    route_distances_m: list[float]  # from geometry: completed lanes + position

    @property
    def average_travel_time(self) -> float:
        if not self.travel_times:
            raise UndefinedMetricError("no vehicle entered the network")
        return float(np.mean(self.travel_times))

    def as_dict(self) -> dict:
        d = asdict(self)
        for k in ("travel_times", "in_network_s", "distances_m", "route_distances_m"):
            d.pop(k)
        try:
            d["average_travel_time"] = self.average_travel_time
        except UndefinedMetricError:
            d["average_travel_time"] = None
        d["throughput"] = self.departed
        return d


def summarize(sim: Simulation) -> EpisodeSummary:
    end = sim.clock_s
    from_sched = sim.config.travel_time_from_scheduled
    lengths = sim.network.lane_length
    tts, secs, dists, geo = [], [], [], []
    for v in sim.vehicles:
        if v.actual_enter_s is None:
            continue
        leave = v.leave_s if v.leave_s is not None else end
        start = v.scheduled_enter_s if from_sched else v.actual_enter_s
        tts.append(float(leave - start))
        secs.append(leave - v.actual_enter_s)
        dists.append(v.distance_m)
        geo.append(float(sum(lengths[lid] for lid in v.route[:v.lane_index])) + v.pos_m)
    return EpisodeSummary(
        clock_s=end,
        inserted=sim.inserted_count,
        departed=len(sim.departed),
        active=sim.active_count,
        unserved=sim.pending_count,
        travel_times=tts,
        in_network_s=secs,
        distances_m=dists,
        route_distances_m=geo,
    )


def average_travel_time(vehicles: Iterable[Vehicle], t_end: int) -> float:
    """Mean of (x_l - x_e) over inserted vehicles; still-active ones leave at ``t_end``."""
    tts = [
        (v.leave_s if v.leave_s is not None else t_end) - v.actual_enter_s
        for v in vehicles if v.actual_enter_s is not None
    ]
    if not tts:
        raise UndefinedMetricError("no vehicle entered the network")
    return float(np.mean(tts))
