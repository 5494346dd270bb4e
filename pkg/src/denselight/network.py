"""Static grid road network: intersections, lanes, movements and phases.

Every road carries three dedicated lanes (left, through, right); a lane's
``kind`` is the turn its vehicles make at the downstream intersection.
Lanes are partitioned into intersection jurisdictions so that each
in-network vehicle is attributed to exactly one intersection at a time.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from enum import IntEnum
from pathlib import Path

import numpy as np

DEFAULT_LANE_LENGTH_M = 300.0


class Direction(IntEnum):
    """Compass direction, clockwise. Used both as heading and as side."""

    N = 0
    E = 1
    S = 2
    W = 3

    def opposite(self) -> "Direction":
        return Direction((self + 2) % 4)


class Turn(IntEnum):
    LEFT = 0
    THROUGH = 1
    RIGHT = 2


def turn_heading(heading: Direction, turn: Turn) -> Direction:
    if turn == Turn.LEFT:
        return Direction((heading - 1) % 4)
    if turn == Turn.RIGHT:
        return Direction((heading + 1) % 4)
    return heading


_STEP = {Direction.N: (-1, 0), Direction.E: (0, 1), Direction.S: (1, 0), Direction.W: (0, -1)}

PHASE_NAMES = ("NS-through", "NS-left", "EW-through", "EW-left")
# (approach sides, turn) gated by each phase, in phase-id order
_PHASE_DEF = (
    ((Direction.N, Direction.S), Turn.THROUGH),
    ((Direction.N, Direction.S), Turn.LEFT),
    ((Direction.E, Direction.W), Turn.THROUGH),
    ((Direction.E, Direction.W), Turn.LEFT),
)
N_PHASES = 4
N_MOVEMENTS = 12


class NetworkError(ValueError):
    pass


class LaneNotFound(KeyError):
    pass


@dataclass(frozen=True)
class Lane:
    id: int
    road: int
    kind: Turn
    heading: Direction
    length_m: float
    jurisdiction: int
    upstream: int | None  # intersection id, None for boundary entry lanes
    downstream: int | None  # intersection id, None for boundary exit lanes

    @property
    def is_boundary_entry(self) -> bool:
        return self.upstream is None

    @property
    def is_boundary_exit(self) -> bool:
        return self.downstream is None


@dataclass(frozen=True)
class Movement:
    index: int  # approach * 3 + kind
    from_lane: int
    to_lane: int
    kind: Turn
    approach: Direction  # side of the intersection the traffic arrives from


@dataclass(frozen=True)
class Phase:
    id: int
    name: str
    movements: tuple[int, ...]  # movement indices within the intersection


@dataclass(frozen=True)
class Intersection:
    id: int
    grid_pos: tuple[int, int]
    entering_lanes: tuple[int, ...]  # 12, ordered (side N,E,S,W) x (left, through, right)
    exiting_lanes: tuple[int, ...]  # 12, same ordering by exit side
    movements: tuple[Movement, ...]
    phases: tuple[Phase, ...]


@dataclass(frozen=True)
class RoadNetwork:
    rows: int
    cols: int
    lane_length_m: float
    intersections: tuple[Intersection, ...]
    lanes: tuple[Lane, ...]
    roads: tuple[tuple[int, int, int], ...]  # road id -> (left, through, right) lane ids
    # dense lookup tables, derived in build_grid_network
    lane_length: np.ndarray = field(repr=False, compare=False)
    lane_jurisdiction: np.ndarray = field(repr=False, compare=False)
    movement_from: np.ndarray = field(repr=False, compare=False)  # (n_int, 12)
    movement_to: np.ndarray = field(repr=False, compare=False)  # (n_int, 12)

    @property
    def n_intersections(self) -> int:
        return len(self.intersections)

    @property
    def n_lanes(self) -> int:
        return len(self.lanes)

    def intersection_at(self, row: int, col: int) -> Intersection:
        if not (0 <= row < self.rows and 0 <= col < self.cols):
            raise NetworkError(f"no intersection at ({row}, {col})")
        return self.intersections[row * self.cols + col]

    def neighbor(self, intersection: int, heading: Direction) -> int | None:
        r, c = self.intersections[intersection].grid_pos
        dr, dc = _STEP[Direction(heading)]
        r, c = r + dr, c + dc
        if 0 <= r < self.rows and 0 <= c < self.cols:
            return r * self.cols + c
        return None

    def lane(self, lane_id: int) -> Lane:
        if not 0 <= lane_id < len(self.lanes):
            raise LaneNotFound(lane_id)
        return self.lanes[lane_id]

    def entry_lanes(self) -> list[int]:
        return [ln.id for ln in self.lanes if ln.is_boundary_entry]

    def exit_lanes(self) -> list[int]:
        return [ln.id for ln in self.lanes if ln.is_boundary_exit]

    def out_road(self, intersection: int, heading: Direction) -> int:
        """Road leaving ``intersection`` in ``heading``."""
        return self._out_roads[intersection][heading]

    def in_road(self, intersection: int, side: Direction) -> int:
        """Road arriving at ``intersection`` from ``side``."""
        return self._in_roads[intersection][side]

    def hop_distance(self, a: int, b: int) -> int:
        ra, ca = self.intersections[a].grid_pos
        rb, cb = self.intersections[b].grid_pos
        return abs(ra - rb) + abs(ca - cb)


def jurisdiction_of(network: RoadNetwork, lane_id: int) -> int:
    """Owning intersection of a lane.

    Lanes feeding an intersection belong to it; boundary exit lanes belong
    to the intersection they leave.
    """
    return network.lane(lane_id).jurisdiction


def phase_table(intersection: Intersection) -> list[Phase]:
    return list(intersection.phases)


def build_grid_network(rows: int, cols: int, lane_length_m: float = DEFAULT_LANE_LENGTH_M) -> RoadNetwork:
    if int(rows) != rows or int(cols) != cols or rows < 1 or cols < 1:
        raise NetworkError(f"grid must have at least one row and column, got {rows}x{cols}")
    if not lane_length_m > 0:
        raise NetworkError(f"lane length must be positive, got {lane_length_m}")
    rows, cols = int(rows), int(cols)
    n = rows * cols
    lanes: list[Lane] = []
    roads: list[tuple[int, int, int]] = []
    in_roads = [[-1] * 4 for _ in range(n)]
    out_roads = [[-1] * 4 for _ in range(n)]

    def add_road(upstream: int | None, downstream: int | None, heading: Direction) -> int:
        road_id = len(roads)
        owner = downstream if downstream is not None else upstream
        ids = []
        for kind in Turn:
            lane = Lane(
                id=len(lanes), road=road_id, kind=kind, heading=heading,
                length_m=float(lane_length_m), jurisdiction=owner,
                upstream=upstream, downstream=downstream,
            )
            lanes.append(lane)
            ids.append(lane.id)
        roads.append(tuple(ids))
        if downstream is not None:
            in_roads[downstream][heading.opposite()] = road_id
        if upstream is not None:
            out_roads[upstream][heading] = road_id
        return road_id

    def nb(i: int, heading: Direction) -> int | None:
        r, c = divmod(i, cols)
        dr, dc = _STEP[heading]
        r, c = r + dr, c + dc
        return r * cols + c if 0 <= r < rows and 0 <= c < cols else None

    # interior and boundary-exit roads, keyed by their upstream intersection
    for i in range(n):
        for heading in Direction:
            add_road(i, nb(i, heading), heading)
    # boundary entry roads
    for i in range(n):
        for side in Direction:
            if nb(i, side) is None:
                add_road(None, i, side.opposite())

    intersections = []
    movement_from = np.zeros((n, N_MOVEMENTS), dtype=np.int64)
    movement_to = np.zeros((n, N_MOVEMENTS), dtype=np.int64)
    for i in range(n):
        entering = tuple(lid for side in Direction for lid in roads[in_roads[i][side]])
        exiting = tuple(lid for side in Direction for lid in roads[out_roads[i][side]])
        movements = []
        for side in Direction:
            heading = side.opposite()
            for kind in Turn:
                out_heading = turn_heading(heading, kind)
                # downstream lane of the movement: same-kind lane of the out road
                mv = Movement(
                    index=side * 3 + kind,
                    from_lane=roads[in_roads[i][side]][kind],
                    to_lane=roads[out_roads[i][out_heading]][kind],
                    kind=kind,
                    approach=side,
                )
                movements.append(mv)
                movement_from[i, mv.index] = mv.from_lane
                movement_to[i, mv.index] = mv.to_lane
        phases = tuple(
            Phase(id=p, name=PHASE_NAMES[p], movements=tuple(s * 3 + kind for s in sides))
            for p, (sides, kind) in enumerate(_PHASE_DEF)
        )
        intersections.append(Intersection(
            id=i, grid_pos=divmod(i, cols), entering_lanes=entering,
            exiting_lanes=exiting, movements=tuple(movements), phases=phases,
        ))

    net = RoadNetwork(
        rows=rows, cols=cols, lane_length_m=float(lane_length_m),
        intersections=tuple(intersections), lanes=tuple(lanes), roads=tuple(roads),
        lane_length=np.array([ln.length_m for ln in lanes]),
        lane_jurisdiction=np.array([ln.jurisdiction for ln in lanes], dtype=np.int64),
        movement_from=movement_from, movement_to=movement_to,
    )
    object.__setattr__(net, "_in_roads", tuple(tuple(r) for r in in_roads))
    object.__setattr__(net, "_out_roads", tuple(tuple(r) for r in out_roads))
    return net


def phase_of_lane(network: RoadNetwork, lane_id: int) -> int | None:
    """Phase that gates the lane's movement; None for right turns and exits."""
    lane = network.lane(lane_id)
    if lane.downstream is None or lane.kind == Turn.RIGHT:
        return None
    side = lane.heading.opposite()
    for phase_id, (sides, kind) in enumerate(_PHASE_DEF):
        if kind == lane.kind and side in sides:
            return phase_id
    raise AssertionError("unreachable: every non-right movement has a phase")


# --- network spec file -------------------------------------------------------
#
#   # comment
#   grid <rows> <cols> <lane_length_m>
#
# Blank lines and '#' comments are ignored. Exactly one ``grid`` directive.

def parse_network_spec(text: str) -> RoadNetwork:
    directive = None
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if parts[0] != "grid":
            raise NetworkError(f"line {lineno}: unknown directive {parts[0]!r}")
        if directive is not None:
            raise NetworkError(f"line {lineno}: duplicate grid directive")
        if len(parts) not in (3, 4):
            raise NetworkError(f"line {lineno}: expected 'grid <rows> <cols> [lane_length_m]'")
        try:
            rows, cols = int(parts[1]), int(parts[2])
            length = float(parts[3]) if len(parts) == 4 else DEFAULT_LANE_LENGTH_M
        except ValueError as exc:
            raise NetworkError(f"line {lineno}: {exc}") from None
        directive = (rows, cols, length)
    if directive is None:
        raise NetworkError("network spec has no grid directive")
    return build_grid_network(*directive)


def load_network(path: str | Path) -> RoadNetwork:
    return parse_network_spec(Path(path).read_text())


def format_network_spec(network: RoadNetwork) -> str:
    return f"grid {network.rows} {network.cols} {network.lane_length_m:g}\n"
