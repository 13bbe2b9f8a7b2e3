"""Bundled hotel scenario: corridor-and-rooms layout with two exits.

The real study building is unpublished, so this fixture reproduces its two
load-bearing properties instead of its floor plan: the nearest-exit geodesic
from the primary start room is 13.5 m, and that exit is not line-of-sight
from the start (the route turns into a side branch).

Layout (meters): building envelope (2,1)-(24,11); central corridor band
y in [5,7]; guest rooms off both sides; a north branch at the east end leads
to the near exit; the far exit opens from the corridor's west end.
"""

from __future__ import annotations

import importlib.resources as resources

from .geometry import PathPolyline, normalize, sub
from .scenario import Exit, Scenario, SignPlacement, validate_invariants

# Primary start position, calibrated so the shortest path to the near exit
# is 13.5 m (see tests/test_acceptance.py::test_pathfinding_oracle).
PRIMARY_START = (15.0, 1.8267)

_SIGN_RANGE = 12.0


def _hwall(y, x0, x1, gaps=()):
    """Horizontal wall from x0 to x1 with (a, b) gap intervals removed."""
    segs = []
    xs = x0
    for a, b in sorted(gaps):
        if a > xs:
            segs.append(((xs, y), (a, y)))
        xs = b
    if x1 > xs:
        segs.append(((xs, y), (x1, y)))
    return segs


def _vwall(x, y0, y1, gaps=()):
    segs = []
    ys = y0
    for a, b in sorted(gaps):
        if a > ys:
            segs.append(((x, ys), (x, a)))
        ys = b
    if y1 > ys:
        segs.append(((x, ys), (x, y1)))
    return segs


def hotel_scenario() -> Scenario:
    walls = []
    # envelope
    walls += _hwall(1.0, 2.0, 24.0)                                   # south
    walls += _hwall(11.0, 2.0, 24.0, gaps=[(22.6, 23.8)])             # north, near-exit portal gap
    walls += _vwall(2.0, 1.0, 11.0, gaps=[(5.4, 6.6)])                # west, far-exit portal gap
    walls += _vwall(24.0, 1.0, 11.0)                                  # east
    # corridor south wall (rooms below), door gap per room
    walls += _hwall(5.0, 2.0, 24.0, gaps=[(3.5, 4.5), (7.5, 8.5), (11.5, 12.5),
                                          (16.4, 17.4), (20.5, 21.5)])
    # corridor north wall (rooms above); x in [22,24] is the open branch mouth
    walls += _hwall(7.0, 2.0, 22.0, gaps=[(4.5, 5.5), (10.5, 11.5),
                                          (15.5, 16.5), (19.5, 20.5)])
    # room partitions, south side
    for x in (6.0, 10.0, 14.0, 18.0):
        walls += _vwall(x, 1.0, 5.0)
    # room partitions, north side (x=22 also walls the branch)
    for x in (8.0, 14.0, 18.0, 22.0):
        walls += _vwall(x, 7.0, 11.0)

    exits = (
        Exit(id="east", portal=((22.6, 11.0), (23.8, 11.0)), label="Emergency exit (north branch)"),
        Exit(id="west", portal=((2.0, 5.4), (2.0, 6.6)), label="Main exit (west corridor)"),
    )

    starts = (
        PRIMARY_START,    # bottom room [14,18]
        (8.0, 3.0),       # bottom room [6,10]
        (11.0, 9.0),      # top room [8,14]
        (21.0, 3.0),      # bottom room [18,24]
        (5.0, 9.0),       # top room [2,8]
        (16.0, 9.0),      # top room [14,18]
    )

    guiding_lines = {
        "east": PathPolyline.from_points([(3.0, 6.0), (23.0, 6.0), (23.0, 11.0)]),
        "west": PathPolyline.from_points([(23.0, 6.0), (2.0, 6.0)]),
    }

    # Standard escape signage: wall-mounted, facing into the corridor; each
    # arrow points along the escape route to the exit nearest the sign.
    sign_spots = [
        ((6.0, 5.0), (0.0, 1.0)),
        ((12.8, 5.0), (0.0, 1.0)),
        ((21.0, 5.0), (0.0, 1.0)),
        ((4.5, 7.0), (0.0, -1.0)),
        ((10.2, 7.0), (0.0, -1.0)),
        ((20.0, 7.0), (0.0, -1.0)),
        ((23.2, 11.0), (0.0, -1.0)),   # above the near-exit portal
        ((2.0, 6.0), (1.0, 0.0)),      # beside the far-exit portal
    ]
    scenario = Scenario(
        id="hotel",
        bounds=((0.0, 0.0), (26.0, 12.0)),
        walls=tuple(walls),
        exits=exits,
        start_positions=starts,
        guiding_lines=guiding_lines,
        exit_signs=(),
        floor_plan_posts=tuple((s[0] + 0.6, 4.4) if s[1] < 5.0 else (s[0] - 0.6, 7.6)
                               for s in starts),
    )
    signs = []
    for pos, facing in sign_spots:
        standpoint = (pos[0] + 0.6 * facing[0], pos[1] + 0.6 * facing[1])
        ex, _ = scenario.nearest_exit(standpoint)
        leg = scenario.shortest_path(standpoint, ex)
        if len(leg.vertices) >= 2:
            arrow = normalize(sub(leg.vertices[1], leg.vertices[0]))
        else:
            arrow = facing
        signs.append(SignPlacement(position=pos, facing=facing,
                                   arrow_direction=arrow, visibility_range=_SIGN_RANGE))
    scenario.exit_signs = tuple(signs)
    validate_invariants(scenario)
    return scenario


def builtin_scenario_json(name: str) -> str:
    """Text of a bundled scenario document (currently only 'hotel')."""
    path = resources.files("evacsim").joinpath("data", f"{name}.json")
    return path.read_text(encoding="utf-8")
