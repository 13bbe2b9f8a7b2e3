"""Building model: walls, exits, signage, and navigable-space queries.

A Scenario is immutable after load; all queries are pure, so concurrent
reads are safe. Shortest paths use a visibility graph over wall endpoints
inflated by the requested clearance.
"""

from __future__ import annotations

import heapq
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .geometry import (
    PathPolyline,
    Point,
    angle_of,
    dist,
    normalize,
    points_walls_distance,
    segment_blocks,
    segments_walls_clearance,
    sub,
    unit,
    walls_array,
)

Segment = tuple[Point, Point]

DEFAULT_CLEARANCE = 0.2

# Sign visibility: line of sight, within range, and within this half-angle
# of the sign's facing direction.
SIGN_VIEW_HALF_ANGLE = math.radians(60.0)


class ScenarioError(Exception):
    pass


class ScenarioParseError(ScenarioError):
    """Malformed scenario document; locus names the offending field or line."""

    def __init__(self, message: str, locus: str = ""):
        self.locus = locus
        super().__init__(f"{message}" + (f" (at {locus})" if locus else ""))


class ScenarioInvariantError(ScenarioError):
    """A structurally valid document that violates a scenario invariant."""

    def __init__(self, invariant: str, detail: str = ""):
        self.invariant = invariant
        super().__init__(f"invariant violated: {invariant}" + (f" — {detail}" if detail else ""))


class OutOfBoundsError(ScenarioError):
    pass


class UnreachableExitError(ScenarioError):
    pass


@dataclass(frozen=True)
class Exit:
    id: str
    portal: Segment
    label: str = ""

    @property
    def midpoint(self) -> Point:
        (x1, y1), (x2, y2) = self.portal
        return ((x1 + x2) / 2.0, (y1 + y2) / 2.0)


@dataclass(frozen=True)
class SignPlacement:
    position: Point
    facing: Point
    arrow_direction: Point
    visibility_range: float


@dataclass
class Scenario:
    id: str
    bounds: tuple[Point, Point]
    walls: tuple[Segment, ...]
    exits: tuple[Exit, ...]
    start_positions: tuple[Point, ...]
    guiding_lines: dict[str, PathPolyline]
    exit_signs: tuple[SignPlacement, ...]
    floor_plan_posts: tuple[Point, ...]

    _walls_np: np.ndarray = field(default=None, repr=False, compare=False)
    _nav_cache: dict = field(default_factory=dict, repr=False, compare=False)
    _exit_field: "ExitDistanceField" = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "_walls_np", walls_array(self.walls))

    # --- basic queries ----------------------------------------------------

    def in_bounds(self, p: Point, tol: float = 1e-9) -> bool:
        (x0, y0), (x1, y1) = self.bounds
        return x0 - tol <= p[0] <= x1 + tol and y0 - tol <= p[1] <= y1 + tol

    def wall_distance(self, p: Point) -> float:
        if self._walls_np.shape[0] == 0:
            return float("inf")
        return float(points_walls_distance(np.asarray([p]), self._walls_np).min())

    def line_of_sight(self, a: Point, b: Point) -> bool:
        """True iff the open segment a-b crosses no wall. Symmetric by construction."""
        if not self.in_bounds(a):
            raise OutOfBoundsError(f"point {a} outside bounds")
        if not self.in_bounds(b):
            raise OutOfBoundsError(f"point {b} outside bounds")
        if a == b:
            return True
        lo, hi = (a, b) if a <= b else (b, a)  # canonical order keeps the test symmetric
        for w in self.walls:
            if segment_blocks(lo, hi, w[0], w[1]):
                return False
        return True

    def sign_visible(self, sign: SignPlacement, viewer: Point) -> bool:
        d = dist(viewer, sign.position)
        if d > sign.visibility_range or d < 1e-9:
            return False
        to_viewer = normalize(sub(viewer, sign.position))
        if to_viewer[0] * sign.facing[0] + to_viewer[1] * sign.facing[1] < math.cos(SIGN_VIEW_HALF_ANGLE):
            return False
        return self.line_of_sight(sign.position, viewer)

    def visible_signs(self, viewer: Point) -> list[SignPlacement]:
        return [s for s in self.exit_signs if self.sign_visible(s, viewer)]

    # --- pathfinding --------------------------------------------------------

    def _nav(self, clearance: float) -> "_NavGraph":
        key = round(clearance, 6)
        g = self._nav_cache.get(key)
        if g is None:
            g = _NavGraph(self, clearance)
            self._nav_cache[key] = g
        return g

    def shortest_path(self, start: Point, to_exit: Exit, clearance: float = DEFAULT_CLEARANCE) -> PathPolyline:
        """Collision-free polyline from start to the exit portal midpoint."""
        if clearance < 0:
            raise ValueError("clearance must be >= 0")
        if not self.in_bounds(start):
            raise OutOfBoundsError(f"start {start} outside bounds")
        goal = to_exit.midpoint
        if dist(start, goal) < 1e-12:
            return PathPolyline((start,), (0.0,))
        verts = self._nav(clearance).solve(start, goal)
        if verts is None:
            raise UnreachableExitError(f"exit {to_exit.id} unreachable from {start}")
        return PathPolyline.from_points(verts)

    def nearest_exit(self, start: Point, clearance: float = DEFAULT_CLEARANCE) -> tuple[Exit, float]:
        """Exit minimizing geodesic distance; ties broken by lexicographic id."""
        best: tuple[Exit, float] | None = None
        for ex in sorted(self.exits, key=lambda e: e.id):
            try:
                length = self.shortest_path(start, ex, clearance).length
            except UnreachableExitError:
                continue
            if best is None or length < best[1] - 1e-9:
                best = (ex, length)
        if best is None:
            raise UnreachableExitError(f"no exit reachable from {start}")
        return best

    def exit_distance(self, p: Point) -> float:
        """Coarse geodesic distance from p to the nearest exit.

        Grid-based field cached on first use; intended for policy-level
        ordering (who is closer to an exit), not exact path lengths.
        """
        if self._exit_field is None:
            object.__setattr__(self, "_exit_field", ExitDistanceField(self))
        return self._exit_field.distance(p)


# --- navigation graph -----------------------------------------------------

_NODE_EPS = 0.01
_N_OFFSETS = 12


class _NavGraph:
    """Visibility graph over wall endpoints inflated by clearance."""

    def __init__(self, scenario: Scenario, clearance: float):
        self.scenario = scenario
        self.clearance = clearance
        self.offset = clearance + 2.0 * _NODE_EPS
        self.node_min = clearance + 0.5 * _NODE_EPS
        self.edge_min = clearance + 1e-4
        walls = scenario._walls_np
        cand: list[Point] = []
        pts = set()
        for w in scenario.walls:
            pts.add(w[0])
            pts.add(w[1])
        for p in sorted(pts):
            for k in range(_N_OFFSETS):
                ang = 2.0 * math.pi * k / _N_OFFSETS
                cand.append((p[0] + self.offset * math.cos(ang), p[1] + self.offset * math.sin(ang)))
        nodes = []
        if cand:
            arr = np.asarray(cand)
            dmin = points_walls_distance(arr, walls).min(axis=1) if walls.shape[0] else np.full(len(cand), np.inf)
            for p, d in zip(cand, dmin):
                if d >= self.node_min and scenario.in_bounds(p, tol=-1e-9):
                    nodes.append(p)
        self.nodes = np.asarray(nodes) if nodes else np.zeros((0, 2))
        self.adj: list[list[tuple[int, float]]] = [[] for _ in range(len(nodes))]
        n = len(nodes)
        if n:
            ii, jj = np.triu_indices(n, k=1)
            starts = self.nodes[ii]
            ends = self.nodes[jj]
            ok = self._edges_clear(starts, ends)
            lens = np.sqrt(((starts - ends) ** 2).sum(axis=1))
            for a, b, good, ln in zip(ii.tolist(), jj.tolist(), ok.tolist(), lens.tolist()):
                if good:
                    self.adj[a].append((b, ln))
                    self.adj[b].append((a, ln))

    def _edges_clear(self, starts: np.ndarray, ends: np.ndarray) -> np.ndarray:
        walls = self.scenario._walls_np
        if walls.shape[0] == 0:
            return np.ones(starts.shape[0], dtype=bool)
        out = np.ones(starts.shape[0], dtype=bool)
        chunk = 4096
        for i in range(0, starts.shape[0], chunk):
            sl = slice(i, i + chunk)
            clear = segments_walls_clearance(starts[sl], ends[sl], walls)
            out[sl] = clear.min(axis=1) >= self.edge_min
        return out

    def _visible_nodes(self, p: Point, soft: bool) -> list[tuple[int, float]]:
        n = self.nodes.shape[0]
        if n == 0:
            return []
        starts = np.repeat(np.asarray([p]), n, axis=0)
        walls = self.scenario._walls_np
        if walls.shape[0]:
            clear = segments_walls_clearance(starts, self.nodes, walls).min(axis=1)
        else:
            clear = np.full(n, np.inf)
        thresh = self.edge_min if not soft else max(self.clearance - 0.02, 1e-4)
        lens = np.sqrt(((self.nodes - np.asarray(p)) ** 2).sum(axis=1))
        return [(int(i), float(l)) for i, l, c in zip(range(n), lens, clear) if c >= thresh]

    def solve(self, start: Point, goal: Point) -> list[Point] | None:
        # direct connection first
        walls = self.scenario._walls_np
        if walls.shape[0] == 0:
            return [start, goal]
        direct = segments_walls_clearance(np.asarray([start]), np.asarray([goal]), walls).min()
        if direct >= max(self.clearance - 0.02, 1e-4) and dist(start, goal) > 1e-12:
            return [start, goal]
        n = len(self.adj)
        s_idx, g_idx = n, n + 1
        extra: dict[int, list[tuple[int, float]]] = {s_idx: self._visible_nodes(start, soft=True),
                                                     g_idx: []}
        goal_links = self._visible_nodes(goal, soft=True)
        # goal links are undirected; register reverse edges
        rev: dict[int, list[tuple[int, float]]] = {}
        for i, ln in goal_links:
            rev.setdefault(i, []).append((g_idx, ln))
        best = {s_idx: 0.0}
        prev: dict[int, int] = {}
        pq = [(0.0, s_idx)]
        while pq:
            d, u = heapq.heappop(pq)
            if d > best.get(u, float("inf")):
                continue
            if u == g_idx:
                break
            neighbors = list(self.adj[u]) if u < n else []
            neighbors.extend(extra.get(u, []))
            neighbors.extend(rev.get(u, []))
            for v, w in neighbors:
                nd = d + w
                if nd < best.get(v, float("inf")) - 1e-15:
                    best[v] = nd
                    prev[v] = u
                    heapq.heappush(pq, (nd, v))
        if g_idx not in best:
            return None
        order = [g_idx]
        while order[-1] != s_idx:
            order.append(prev[order[-1]])
        order.reverse()
        out: list[Point] = []
        for idx in order:
            if idx == s_idx:
                out.append(start)
            elif idx == g_idx:
                out.append(goal)
            else:
                out.append((float(self.nodes[idx][0]), float(self.nodes[idx][1])))
        return out

    def node_points(self) -> list[Point]:
        return [(float(x), float(y)) for x, y in self.nodes.tolist()]


# --- coarse exit distance field --------------------------------------------

class ExitDistanceField:
    """Multi-source grid Dijkstra from all exit portals, on a coarse lattice.

    Used for ordering positions by how close they are to *any* exit; the
    resolution (0.25 m) is deliberately coarse so building it is cheap.
    """

    CELL = 0.25

    def __init__(self, scenario: Scenario, clearance: float = DEFAULT_CLEARANCE):
        (x0, y0), (x1, y1) = scenario.bounds
        h = self.CELL
        self.x0, self.y0, self.h = x0, y0, h
        self.nx = max(2, int(math.ceil((x1 - x0) / h)))
        self.ny = max(2, int(math.ceil((y1 - y0) / h)))
        xs = x0 + (np.arange(self.nx) + 0.5) * h
        ys = y0 + (np.arange(self.ny) + 0.5) * h
        gx, gy = np.meshgrid(xs, ys, indexing="ij")
        centers = np.stack([gx.ravel(), gy.ravel()], axis=1)
        walls = scenario._walls_np
        if walls.shape[0]:
            dmin = points_walls_distance(centers, walls).min(axis=1)
        else:
            dmin = np.full(centers.shape[0], np.inf)
        free = (dmin >= clearance * 0.9).reshape(self.nx, self.ny)
        self.free = free
        dist_grid = np.full((self.nx, self.ny), np.inf)
        pq: list[tuple[float, int, int]] = []
        for ex in scenario.exits:
            for f in np.linspace(0.0, 1.0, 5):
                px = ex.portal[0][0] + f * (ex.portal[1][0] - ex.portal[0][0])
                py = ex.portal[0][1] + f * (ex.portal[1][1] - ex.portal[0][1])
                i, j = self._cell(px, py)
                for di in (-1, 0, 1):
                    for dj in (-1, 0, 1):
                        ii, jj = i + di, j + dj
                        if 0 <= ii < self.nx and 0 <= jj < self.ny and free[ii, jj]:
                            if dist_grid[ii, jj] > 0.0:
                                dist_grid[ii, jj] = 0.0
                                heapq.heappush(pq, (0.0, ii, jj))
        moves = [(di, dj, math.hypot(di, dj) * h)
                 for di in (-1, 0, 1) for dj in (-1, 0, 1) if (di, dj) != (0, 0)]
        while pq:
            d, i, j = heapq.heappop(pq)
            if d > dist_grid[i, j]:
                continue
            for di, dj, w in moves:
                ii, jj = i + di, j + dj
                if not (0 <= ii < self.nx and 0 <= jj < self.ny) or not free[ii, jj]:
                    continue
                if di and dj and not (free[i, jj] and free[ii, j]):
                    continue  # no corner cutting
                nd = d + w
                if nd < dist_grid[ii, jj]:
                    dist_grid[ii, jj] = nd
                    heapq.heappush(pq, (nd, ii, jj))
        self.dist_grid = dist_grid

    def _cell(self, x: float, y: float) -> tuple[int, int]:
        i = min(self.nx - 1, max(0, int((x - self.x0) / self.h)))
        j = min(self.ny - 1, max(0, int((y - self.y0) / self.h)))
        return i, j

    def distance(self, p: Point) -> float:
        i, j = self._cell(p[0], p[1])
        d = self.dist_grid[i, j]
        if not math.isinf(d):
            return float(d)
        # fall back to the nearest resolved cell in a small window
        best = float("inf")
        for r in (1, 2, 3):
            lo_i, hi_i = max(0, i - r), min(self.nx, i + r + 1)
            lo_j, hi_j = max(0, j - r), min(self.ny, j + r + 1)
            window = self.dist_grid[lo_i:hi_i, lo_j:hi_j]
            m = window.min()
            if not math.isinf(m):
                best = float(m) + r * self.h
                break
        return best


# --- document parsing -------------------------------------------------------

_TOP_KEYS = {"id", "bounds", "walls", "exits", "starts", "guiding_lines", "exit_signs", "floor_plan_posts"}


def _point(v, locus: str) -> Point:
    if not isinstance(v, (list, tuple)) or len(v) != 2:
        raise ScenarioParseError("expected [x, y]", locus)
    try:
        return (float(v[0]), float(v[1]))
    except (TypeError, ValueError):
        raise ScenarioParseError("coordinates must be numbers", locus)


def _segment(v, locus: str) -> Segment:
    if not isinstance(v, (list, tuple)) or len(v) != 4:
        raise ScenarioParseError("expected [x1, y1, x2, y2]", locus)
    try:
        return ((float(v[0]), float(v[1])), (float(v[2]), float(v[3])))
    except (TypeError, ValueError):
        raise ScenarioParseError("coordinates must be numbers", locus)


def load_scenario(document: str) -> Scenario:
    """Parse and validate a scenario document (UTF-8 JSON text)."""
    try:
        doc = json.loads(document)
    except json.JSONDecodeError as e:
        raise ScenarioParseError(f"invalid JSON: {e.msg}", f"line {e.lineno}, column {e.colno}")
    if not isinstance(doc, dict):
        raise ScenarioParseError("top level must be an object", "document")
    unknown = set(doc) - _TOP_KEYS
    if unknown:
        raise ScenarioParseError(f"unknown keys: {sorted(unknown)}", "document")
    for key in ("id", "bounds", "walls", "exits", "starts"):
        if key not in doc:
            raise ScenarioParseError(f"missing required key '{key}'", "document")
    if not isinstance(doc["id"], str) or not doc["id"]:
        raise ScenarioParseError("id must be a non-empty string", "id")

    b = doc["bounds"]
    if not isinstance(b, dict) or set(b) != {"min", "max"}:
        raise ScenarioParseError("bounds must have exactly keys min, max", "bounds")
    bounds = (_point(b["min"], "bounds.min"), _point(b["max"], "bounds.max"))

    walls = tuple(_segment(w, f"walls[{i}]") for i, w in enumerate(doc["walls"]))

    exits = []
    for i, e in enumerate(doc["exits"]):
        locus = f"exits[{i}]"
        if not isinstance(e, dict):
            raise ScenarioParseError("exit must be an object", locus)
        unknown = set(e) - {"id", "portal", "label"}
        if unknown:
            raise ScenarioParseError(f"unknown keys: {sorted(unknown)}", locus)
        if "id" not in e or "portal" not in e:
            raise ScenarioParseError("exit needs id and portal", locus)
        exits.append(Exit(id=str(e["id"]), portal=_segment(e["portal"], locus + ".portal"),
                          label=str(e.get("label", ""))))
    exits = tuple(exits)

    starts = tuple(_point(p, f"starts[{i}]") for i, p in enumerate(doc["starts"]))

    guiding_lines = {}
    for exit_id, pts in (doc.get("guiding_lines") or {}).items():
        locus = f"guiding_lines[{exit_id}]"
        if not isinstance(pts, list) or len(pts) < 2:
            raise ScenarioParseError("guiding line needs >= 2 points", locus)
        try:
            guiding_lines[exit_id] = PathPolyline.from_points(
                [_point(p, f"{locus}[{i}]") for i, p in enumerate(pts)])
        except ValueError as e:
            raise ScenarioParseError(str(e), locus)

    signs = []
    for i, s in enumerate(doc.get("exit_signs") or []):
        locus = f"exit_signs[{i}]"
        if not isinstance(s, dict):
            raise ScenarioParseError("sign must be an object", locus)
        unknown = set(s) - {"pos", "facing", "arrow", "range"}
        if unknown:
            raise ScenarioParseError(f"unknown keys: {sorted(unknown)}", locus)
        for key in ("pos", "facing", "arrow", "range"):
            if key not in s:
                raise ScenarioParseError(f"sign needs '{key}'", locus)
        try:
            rng = float(s["range"])
        except (TypeError, ValueError):
            raise ScenarioParseError("range must be a number", locus + ".range")
        signs.append(SignPlacement(position=_point(s["pos"], locus + ".pos"),
                                   facing=_point(s["facing"], locus + ".facing"),
                                   arrow_direction=_point(s["arrow"], locus + ".arrow"),
                                   visibility_range=rng))
    posts = tuple(_point(p, f"floor_plan_posts[{i}]") for i, p in enumerate(doc.get("floor_plan_posts") or []))

    scenario = Scenario(
        id=doc["id"],
        bounds=bounds,
        walls=walls,
        exits=exits,
        start_positions=starts,
        guiding_lines=guiding_lines,
        exit_signs=tuple(signs),
        floor_plan_posts=posts,
    )
    validate_invariants(scenario)
    return scenario


def validate_invariants(sc: Scenario) -> None:
    (x0, y0), (x1, y1) = sc.bounds
    if not (x1 > x0 and y1 > y0):
        raise ScenarioInvariantError("bounds must span a positive area")

    def inside(p: Point) -> bool:
        return x0 - 1e-9 <= p[0] <= x1 + 1e-9 and y0 - 1e-9 <= p[1] <= y1 + 1e-9

    for i, w in enumerate(sc.walls):
        if not (inside(w[0]) and inside(w[1])):
            raise ScenarioInvariantError("bounds contain all geometry", f"walls[{i}]")
        if dist(w[0], w[1]) <= 0:
            raise ScenarioInvariantError("wall segments must have positive length", f"walls[{i}]")

    seen = set()
    for ex in sc.exits:
        if ex.id in seen:
            raise ScenarioInvariantError("exit ids must be unique", ex.id)
        seen.add(ex.id)
        if dist(ex.portal[0], ex.portal[1]) <= 0:
            raise ScenarioInvariantError("portal length > 0", ex.id)
        if not (inside(ex.portal[0]) and inside(ex.portal[1])):
            raise ScenarioInvariantError("bounds contain all geometry", f"exit {ex.id}")
        for endpoint in ex.portal:
            if sc.walls and min(
                    points_walls_distance(np.asarray([endpoint]), sc._walls_np)[0]) > 1e-6:
                raise ScenarioInvariantError(
                    "exit portal endpoints lie on wall geometry", f"exit {ex.id}")

    for i, p in enumerate(sc.start_positions):
        if not inside(p):
            raise ScenarioInvariantError(
                "start position inside navigable space", f"starts[{i}] outside bounds")
        if sc.wall_distance(p) < 1e-6:
            raise ScenarioInvariantError(
                "start position not inside a wall", f"starts[{i}]")

    for exit_id, line in sc.guiding_lines.items():
        ex = next((e for e in sc.exits if e.id == exit_id), None)
        if ex is None:
            raise ScenarioInvariantError("guiding line references a known exit", exit_id)
        line.validate()
        end = line.vertices[-1]
        from .geometry import point_segment_distance
        if point_segment_distance(end, ex.portal[0], ex.portal[1]) > 0.5:
            raise ScenarioInvariantError(
                "guiding line terminates within 0.5 m of its exit", exit_id)
        for v in line.vertices:
            if not inside(v):
                raise ScenarioInvariantError("bounds contain all geometry", f"guiding line {exit_id}")

    for i, s in enumerate(sc.exit_signs):
        for name, v in (("facing", s.facing), ("arrow", s.arrow_direction)):
            if abs(math.hypot(v[0], v[1]) - 1.0) > 1e-6:
                raise ScenarioInvariantError(
                    "sign facing and arrow_direction are unit-norm", f"exit_signs[{i}].{name}")
        if s.visibility_range <= 0:
            raise ScenarioInvariantError("sign visibility_range > 0", f"exit_signs[{i}]")
        if not inside(s.position):
            raise ScenarioInvariantError("bounds contain all geometry", f"exit_signs[{i}]")

    for i, p in enumerate(sc.floor_plan_posts):
        if not inside(p):
            raise ScenarioInvariantError("bounds contain all geometry", f"floor_plan_posts[{i}]")


def scenario_to_json(sc: Scenario) -> str:
    doc = {
        "id": sc.id,
        "bounds": {"min": list(sc.bounds[0]), "max": list(sc.bounds[1])},
        "walls": [[w[0][0], w[0][1], w[1][0], w[1][1]] for w in sc.walls],
        "exits": [{"id": e.id, "portal": [e.portal[0][0], e.portal[0][1], e.portal[1][0], e.portal[1][1]],
                   "label": e.label} for e in sc.exits],
        "starts": [list(p) for p in sc.start_positions],
        "guiding_lines": {k: [list(v) for v in line.vertices] for k, line in sc.guiding_lines.items()},
        "exit_signs": [{"pos": list(s.position), "facing": list(s.facing),
                        "arrow": list(s.arrow_direction), "range": s.visibility_range}
                       for s in sc.exit_signs],
        "floor_plan_posts": [list(p) for p in sc.floor_plan_posts],
    }
    return json.dumps(doc, indent=2)
