"""Shared test scenarios: hand-built fixtures and a seeded random generator
of room-and-corridor layouts."""

from __future__ import annotations

import random

from evacsim.geometry import PathPolyline
from evacsim.scenario import Exit, Scenario, SignPlacement, validate_invariants


def square_room(size=10.0, exit_width=1.0) -> Scenario:
    """One square room with a single exit centered on the east wall."""
    s = size
    gap0 = (s - exit_width) / 2.0
    gap1 = gap0 + exit_width
    walls = (
        ((0.0, 0.0), (s, 0.0)),
        ((s, 0.0), (s, gap0)),
        ((s, gap1), (s, s)),
        ((0.0, s), (s, s)),
        ((0.0, 0.0), (0.0, s)),
    )
    sc = Scenario(
        id="square",
        bounds=((-1.0, -1.0), (s + 1.0, s + 1.0)),
        walls=walls,
        exits=(Exit(id="e", portal=((s, gap0), (s, gap1)), label="exit"),),
        start_positions=((s / 2.0, s / 2.0),),
        guiding_lines={},
        exit_signs=(),
        floor_plan_posts=(),
    )
    validate_invariants(sc)
    return sc


def straight_corridor(length=12.0, width=2.0) -> Scenario:
    """Straight corridor along +x, exit portal spanning the east end."""
    walls = (
        ((0.0, 0.0), (length, 0.0)),
        ((0.0, width), (length, width)),
        ((0.0, 0.0), (0.0, width)),
    )
    sc = Scenario(
        id="corridor",
        bounds=((-0.5, -0.5), (length + 0.5, width + 0.5)),
        walls=walls,
        exits=(Exit(id="end", portal=((length, 0.0), (length, width)), label=""),),
        start_positions=((1.0, width / 2.0),),
        guiding_lines={"end": PathPolyline.from_points([(1.0, width / 2.0), (length, width / 2.0)])},
        exit_signs=(),
        floor_plan_posts=(),
    )
    validate_invariants(sc)
    return sc


def symmetric_two_exit_corridor(length=10.0, width=2.0) -> Scenario:
    """Exits at both ends; the midpoint start is equidistant from both."""
    walls = (
        ((0.0, 0.0), (length, 0.0)),
        ((0.0, width), (length, width)),
    )
    sc = Scenario(
        id="twoexit",
        bounds=((-0.5, -0.5), (length + 0.5, width + 0.5)),
        walls=walls,
        exits=(
            Exit(id="b_east", portal=((length, 0.0), (length, width)), label=""),
            Exit(id="a_west", portal=((0.0, 0.0), (0.0, width)), label=""),
        ),
        start_positions=((length / 2.0, width / 2.0),),
        guiding_lines={},
        exit_signs=(),
        floor_plan_posts=(),
    )
    validate_invariants(sc)
    return sc


def t_junction(stem=6.0, branch=6.0, width=2.0) -> Scenario:
    """Stem from the south meeting an east-west bar; exit at the east end.

    The only interior route decision is at the junction corner, which makes
    the wrong-branch frequency of corrupted route plans directly observable.
    """
    xl, xr = -branch, branch           # bar spans xl..xr, y in [stem, stem+width]
    sx0, sx1 = -width / 2.0, width / 2.0
    y0, y1 = stem, stem + width
    walls = (
        # stem side walls
        ((sx0, 0.0), (sx0, y0)),
        ((sx1, 0.0), (sx1, y0)),
        ((sx0, 0.0), (sx1, 0.0)),
        # bar south wall, interrupted by the stem mouth
        ((xl, y0), (sx0, y0)),
        ((sx1, y0), (xr, y0)),
        # bar north wall
        ((xl, y1), (xr, y1)),
        # west end closed, east end is the exit portal
        ((xl, y0), (xl, y1)),
    )
    sc = Scenario(
        id="tee",
        bounds=((xl - 0.5, -0.5), (xr + 0.5, y1 + 0.5)),
        walls=walls,
        exits=(Exit(id="e", portal=((xr, y0), (xr, y1)), label=""),),
        start_positions=((0.0, 1.0),),
        guiding_lines={},
        exit_signs=(),
        floor_plan_posts=(),
    )
    validate_invariants(sc)
    return sc


def random_rooms_scenario(seed: int) -> tuple[Scenario, tuple[float, float]]:
    """Seeded room-and-corridor layout; returns (scenario, interior start).

    A horizontal corridor crosses the building; rooms hang off both sides
    with randomly placed doors; the exit is at a random corridor end.
    """
    rng = random.Random(seed)
    n_rooms = rng.randint(2, 4)
    room_w = rng.uniform(3.0, 5.0)
    room_d = rng.uniform(3.0, 4.5)
    cw = rng.uniform(1.8, 2.6)          # corridor width
    x0, y0 = 1.0, 1.0
    length = n_rooms * room_w
    yc0 = y0 + room_d                   # corridor band
    yc1 = yc0 + cw
    ytop = yc1 + room_d
    door_w = 1.1

    def door_gap(cx):
        off = rng.uniform(-room_w / 2 + 0.9, room_w / 2 - 0.9)
        return (cx + off - door_w / 2, cx + off + door_w / 2)

    walls = []
    south_gaps, north_gaps = [], []
    for k in range(n_rooms):
        cx = x0 + (k + 0.5) * room_w
        south_gaps.append(door_gap(cx))
        north_gaps.append(door_gap(cx))
    walls += _hw(yc0, x0, x0 + length, south_gaps)
    walls += _hw(yc1, x0, x0 + length, north_gaps)
    walls += _hw(y0, x0, x0 + length)
    walls += _hw(ytop, x0, x0 + length)
    for k in range(1, n_rooms):
        walls += _vw(x0 + k * room_w, y0, yc0)
        walls += _vw(x0 + k * room_w, yc1, ytop)
    exit_end = rng.choice(["west", "east"])
    ex_x = x0 if exit_end == "west" else x0 + length
    p0, p1 = yc0 + 0.3, yc1 - 0.3
    walls += _vw(ex_x, y0, ytop, gaps=[(p0, p1)])
    other_x = x0 + length if exit_end == "west" else x0
    walls += _vw(other_x, y0, ytop)

    room_k = rng.randrange(n_rooms)
    side = rng.choice(["south", "north"])
    sx = x0 + (room_k + 0.5) * room_w + rng.uniform(-room_w / 4, room_w / 4)
    sy = (y0 + room_d / 2) if side == "south" else (yc1 + room_d / 2)
    start = (sx, sy)

    sc = Scenario(
        id=f"rooms-{seed}",
        bounds=((x0 - 1.0, y0 - 1.0), (x0 + length + 1.0, ytop + 1.0)),
        walls=tuple(walls),
        exits=(Exit(id="x", portal=((ex_x, p0), (ex_x, p1)), label=""),),
        start_positions=(start,),
        guiding_lines={},
        exit_signs=(),
        floor_plan_posts=(),
    )
    validate_invariants(sc)
    return sc, start


def _hw(y, a, b, gaps=()):
    segs, xs = [], a
    for g0, g1 in sorted(gaps):
        if g0 > xs:
            segs.append(((xs, y), (g0, y)))
        xs = g1
    if b > xs:
        segs.append(((xs, y), (b, y)))
    return segs


def _vw(x, a, b, gaps=()):
    segs, ys = [], a
    for g0, g1 in sorted(gaps):
        if g0 > ys:
            segs.append(((x, ys), (x, g0)))
        ys = g1
    if b > ys:
        segs.append(((x, ys), (x, b)))
    return segs
