"""Per-intersection rewards and the episode-level bookkeeping identities.

IFDG (ideal-factual distance gap) integrates ``v_max - v`` over each
vehicle's in-jurisdiction time within a decision step; summed over all
intersections and steps it equals total distance travelled minus
``v_max`` times total in-network time, i.e. an affine function of total
travel time. The step-wise travel time (STT) reward accumulates to minus
the total travel time.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .features import WAITING_SPEED_MPS, pressure, queue_length
from .simulator import EpisodeSummary, Simulation, StepRecord

SERIES = ("r_ifdg", "r_stt", "r_queue", "r_pressure", "r_timeloss")
UNDEFINED = "undefined"


def ifdg_rewards(step: StepRecord, n_intersections: int, v_max: float) -> np.ndarray:
    gap = v_max - step.sample_speed
    return -np.bincount(step.sample_junction, weights=gap, minlength=n_intersections)[:n_intersections]


def ifdg_reward(step: StepRecord, intersection: int, v_max: float) -> float:
    mask = step.sample_junction == intersection
    return -float(np.sum(v_max - step.sample_speed[mask]))


def stt_rewards(step: StepRecord, n_intersections: int) -> np.ndarray:
    """Minus the residence time inside each jurisdiction during (t_d, t_{d+1}]."""
    td, td1 = step.t_start, step.t_end
    v = step.visits
    if len(v) == 0:
        return np.zeros(n_intersections)
    j, enter, leave = v[:, 1], v[:, 2], v[:, 3]
    start = np.maximum(td, enter)
    closed = leave >= 0
    stay = np.where(closed, np.where((leave > td) & (leave <= td1), leave - start, 0),
                    np.where(enter <= td1, td1 - start, 0))
    return -np.bincount(j, weights=stay.astype(np.float64), minlength=n_intersections)[:n_intersections]


def stt_reward(step: StepRecord, intersection: int) -> float:
    return float(stt_rewards(step, intersection + 1)[intersection])


def timeloss_reward(sim: Simulation, intersection: int) -> float:
    vmax = sim.config.v_max_mps
    lanes = sim.network.intersections[intersection].entering_lanes
    return -sum(1.0 - v.speed_mps / vmax for lid in lanes for v in sim.lanes[lid])


def queue_reward(sim: Simulation, intersection: int) -> float:
    return -float(queue_length(sim, intersection))


def pressure_reward(sim: Simulation, intersection: int, signed: bool = False) -> float:
    p = pressure(sim, intersection)
    return -float(p if signed else abs(p))


def timeloss_rewards(sim: Simulation) -> np.ndarray:
    return np.array([timeloss_reward(sim, i) for i in range(sim.network.n_intersections)])


def lane_level_rewards(sim: Simulation, signed_pressure: bool = False) -> tuple[np.ndarray, np.ndarray]:
    """Queue and pressure rewards for all intersections from one lane scan."""
    net = sim.network
    waiting = np.array([sum(1 for v in q if v.speed_mps < WAITING_SPEED_MPS) for q in sim.lanes])
    up = np.array([waiting[list(node.entering_lanes)].sum() for node in net.intersections])
    down = np.array([waiting[list(node.exiting_lanes)].sum() for node in net.intersections])
    p = up - down
    return -up.astype(float), -(p if signed_pressure else np.abs(p)).astype(float)


@dataclass
class RewardLedger:
    n_intersections: int
    v_max: float
    rows: list[tuple[int, np.ndarray]] = field(default_factory=list)  # (d, (5, n) rewards)
    _samples: list[tuple[np.ndarray, np.ndarray]] = field(default_factory=list)  # (vehicle ids, gaps)
    _closed: list[np.ndarray] = field(default_factory=list)  # closed visits per step
    _open: np.ndarray = field(default_factory=lambda: np.zeros((0, 4), dtype=np.int64))
    t_end: int = 0

    def record(self, d: int, step: StepRecord, sim_after: Simulation,
               timeloss_before: np.ndarray | None = None, signed_pressure: bool = False) -> np.ndarray:
        """Append all rewards of decision step ``d``; returns the (5, n) reward block."""
        n = self.n_intersections
        r_ifdg = ifdg_rewards(step, n, self.v_max)
        r_stt = stt_rewards(step, n)
        r_queue, r_press = lane_level_rewards(sim_after, signed_pressure)
        r_tl = np.zeros(n) if timeloss_before is None else np.asarray(timeloss_before, dtype=float)
        block = np.stack([r_ifdg, r_stt, r_queue, r_press, r_tl])
        self.rows.append((d, block))
        self._samples.append((step.sample_vehicle, self.v_max - step.sample_speed))
        closed = step.visits[:, 3] >= 0
        self._closed.append(step.visits[closed])
        self._open = step.visits[~closed]
        self.t_end = step.t_end
        return block

    @property
    def vehicle_gap(self) -> dict[int, float]:
        """Per-vehicle running sum of ``v_max - v`` over all recorded ticks."""
        out: dict[int, float] = {}
        for vids, gaps in self._samples:
            for vid, g in zip(vids.tolist(), gaps.tolist()):
                out[vid] = out.get(vid, 0.0) + g
        return out

    @property
    def vehicle_ticks(self) -> dict[int, int]:
        out: dict[int, int] = {}
        for vids, _ in self._samples:
            for vid in vids.tolist():
                out[vid] = out.get(vid, 0) + 1
        return out

    def vehicle_intervals(self) -> dict[int, list[tuple[int, int, int]]]:
        """Jurisdiction intervals per vehicle, open ones closed at the last step end."""
        out: dict[int, list[tuple[int, int, int]]] = {}
        for block in self._closed:
            for vid, j, enter, leave in block.tolist():
                out.setdefault(vid, []).append((j, enter, leave))
        for vid, j, enter, _ in self._open.tolist():
            out.setdefault(vid, []).append((j, enter, self.t_end))
        for v in out.values():
            v.sort(key=lambda x: x[1])
        return out

    def series(self, name: str) -> np.ndarray:
        """(D, n) array of one reward series."""
        k = SERIES.index(name)
        return np.array([block[k] for _, block in self.rows]) if self.rows else np.zeros((0, self.n_intersections))

    def total(self, name: str) -> float:
        return float(self.series(name).sum())

    def to_csv(self, path: str | Path | None = None) -> str:
        buf = io.StringIO()
        w = csv.writer(buf)
        w.writerow(["d", "intersection", *SERIES])
        for d, block in self.rows:
            for i in range(self.n_intersections):
                w.writerow([d, i, *(repr(float(x)) for x in block[:, i])])
        text = buf.getvalue()
        if path is not None:
            Path(path).write_text(text)
        return text


def read_ledger_csv(path: str | Path) -> dict[str, np.ndarray]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return {k: np.array([float(r[k]) for r in rows]) for k in ("d", "intersection", *SERIES)}


def ifdg_travel_time_identity(ledger: RewardLedger, summary: EpisodeSummary) -> tuple[float, float, float]:
    """(sum of IFDG rewards, distance - v_max * in-network time, |difference|)."""
    lhs = ledger.total("r_ifdg")
    rhs = float(np.sum(summary.route_distances_m)) - ledger.v_max * float(np.sum(summary.in_network_s))
    return lhs, rhs, abs(lhs - rhs)


def stt_travel_time_identity(ledger: RewardLedger, summary: EpisodeSummary) -> tuple[float, int]:
    """(-sum of STT rewards, total in-network seconds)."""
    return -ledger.total("r_stt"), int(np.sum(summary.in_network_s))


def _pearson(a: np.ndarray, b: np.ndarray) -> float | None:
    sa, sb = a.std(), b.std()
    if sa == 0 or sb == 0:
        return None
    za, zb = (a - a.mean()) / sa, (b - b.mean()) / sb
    return float(np.mean(za * zb))


def reward_correlation_report(ledger: RewardLedger | dict[str, np.ndarray]) -> list[tuple[str, str, float | None]]:
    """Pearson correlation of every reward-series pair over (d, intersection) samples.

    Each series is z-scored first; constant series give ``None``.
    """
    if isinstance(ledger, RewardLedger):
        if len(ledger.rows) < 2:
            raise ValueError("correlation report needs at least two decision steps")
        data = {name: ledger.series(name).ravel() for name in SERIES}
    else:
        data = {name: np.asarray(ledger[name], dtype=float) for name in SERIES}
        if len(np.unique(ledger["d"])) < 2:
            raise ValueError("correlation report needs at least two decision steps")
    out = []
    for ia, a in enumerate(SERIES):
        for b in SERIES[ia:]:
            out.append((a, b, _pearson(data[a], data[b])))
    return out


def write_correlation_csv(table: list[tuple[str, str, float | None]], path: str | Path | None = None) -> str:
    buf = io.StringIO()
    buf.write("# normalization: per-series z-score over (d, intersection) samples\n")
    w = csv.writer(buf)
    w.writerow(["series_a", "series_b", "pearson"])
    for a, b, r in table:
        w.writerow([a, b, UNDEFINED if r is None or math.isnan(r) else repr(r)])
    text = buf.getvalue()
    if path is not None:
        Path(path).write_text(text)
    return text
