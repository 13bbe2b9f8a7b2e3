"""Simulated pedestrians: social-force locomotion and signage-conditioned
route-choice policies.

Locomotion is a circular-specification social force: exponential relaxation
toward the desired velocity plus exponential repulsion from agents and
walls, integrated at a fixed 10 ms substep. Penetration is prevented by a
hard projection after each substep, so the repulsion parameters only shape
avoidance, never guarantee it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from enum import Enum

import numpy as np

from .geometry import (
    Point,
    closest_point_on_segment,
    dist,
    normalize,
    norm,
    points_walls_distance,
    rotate,
    segments_walls_clearance,
    sub,
    PathPolyline,
)
from .scenario import DEFAULT_CLEARANCE, Scenario

TAU = 0.5                    # relaxation time, s
REPULSION_A = 2.0            # m/s^2
REPULSION_B = 0.3            # m
SUBSTEP = 0.01               # s
SPEED_CAP_FACTOR = 1.3
MIN_MOVING_SPEED = 0.1       # m/s, below this an agent does not count as "moving"

WALL_STANDOFF = 0.35         # preferred wall distance while exploring
PROBE_AHEAD = 0.4            # m, lookahead for concave-corner detection
PROBE_HIT = 0.15             # m, a wall this close to the probe is followed next
SIGN_IGNORE_DECISIONS = 30   # decisions spent exploring after a blocked arrow
ARROW_BLOCK_DIST = 0.7       # m, ignore a sign whose arrow points into a wall
WAYPOINT_TOL = 0.35          # m, advance to next route waypoint within this
PURSUIT_LOOKAHEAD = 0.6      # m, guiding-line pursuit


class PolicyKind(str, Enum):
    GUIDING_LINE = "GuidingLine"
    EXIT_SIGNS = "ExitSigns"
    FLOOR_PLAN_MEMORY = "FloorPlanMemory"
    FOLLOW_OTHERS = "FollowOthers"
    SCRIPTED_GOAL = "ScriptedGoal"


@dataclass(frozen=True)
class RouteChoicePolicy:
    kind: PolicyKind
    # per-kind parameters; unknown keys rejected at construction
    p_err: float = 0.0            # FloorPlanMemory: junction corruption probability

    def __post_init__(self):
        if not 0.0 <= self.p_err <= 1.0:
            raise ValueError("p_err must be in [0, 1]")


@dataclass
class AgentState:
    id: int
    position: Point
    velocity: Point
    heading: float
    radius: float
    desired_speed: float
    policy: RouteChoicePolicy
    policy_memory: dict = field(default_factory=dict)
    is_human_avatar: bool = False

    def validate(self) -> None:
        if not 0.15 <= self.radius <= 0.35:
            raise ValueError(f"radius {self.radius} outside [0.15, 0.35]")
        if not 0.0 < self.desired_speed <= 3.0:
            raise ValueError(f"desired_speed {self.desired_speed} outside (0, 3]")
        if norm(self.velocity) > SPEED_CAP_FACTOR * self.desired_speed + 1e-9:
            raise ValueError("velocity exceeds 1.3 x desired_speed")

    @property
    def speed(self) -> float:
        return norm(self.velocity)


# --- route choice -----------------------------------------------------------

def desired_direction(agent: AgentState, scenario: Scenario, world: list[AgentState],
                      rng) -> Point:
    """Unit direction the agent wants to move in; deterministic given inputs.

    May update agent.policy_memory (route progress, exploration state);
    exploration fallbacks guarantee a direction is always returned.
    """
    kind = agent.policy.kind
    if kind == PolicyKind.GUIDING_LINE:
        return _follow_guiding_line(agent, scenario)
    if kind == PolicyKind.EXIT_SIGNS:
        mem = agent.policy_memory
        if mem.get("sign_ignore", 0) > 0:
            mem["sign_ignore"] -= 1
            return _explore(agent, scenario, rng)
        visible = scenario.visible_signs(agent.position)
        usable = [s for s in visible
                  if not _arrow_blocked(agent.position, s.arrow_direction, scenario)]
        if usable:
            best = min(usable, key=lambda s: (dist(agent.position, s.position),
                                              scenario.exit_signs.index(s)))
            return normalize(best.arrow_direction)
        if visible:
            # a sign whose arrow points into a wall is no help here; keep
            # exploring long enough to leave its capture zone
            mem["sign_ignore"] = SIGN_IGNORE_DECISIONS
        return _explore(agent, scenario, rng)
    if kind == PolicyKind.FLOOR_PLAN_MEMORY:
        mem = agent.policy_memory
        if "route" not in mem:
            mem["route"] = plan_floor_plan_memory(scenario, agent.position, rng,
                                                  p_err=agent.policy.p_err)
            mem["wp"] = 0
        return _pursue_route(agent, mem)
    if kind == PolicyKind.FOLLOW_OTHERS:
        target = _pick_leader(agent, scenario, world)
        if target is not None:
            return normalize(sub(target.position, agent.position))
        return _explore(agent, scenario, rng)
    if kind == PolicyKind.SCRIPTED_GOAL:
        mem = agent.policy_memory
        if "route" not in mem:
            ex, _ = scenario.nearest_exit(agent.position)
            mem["route"] = scenario.shortest_path(agent.position, ex)
            mem["wp"] = 0
        return _pursue_route(agent, mem)
    raise ValueError(f"unknown policy kind {kind}")


def _follow_guiding_line(agent: AgentState, scenario: Scenario) -> Point:
    if not scenario.guiding_lines:
        return (math.cos(agent.heading), math.sin(agent.heading))
    best_line = None
    best = (float("inf"), 0.0)
    for exit_id in sorted(scenario.guiding_lines):
        line = scenario.guiding_lines[exit_id]
        s, d = line.project(agent.position)
        if d < best[0]:
            best = (d, s)
            best_line = line
    d, s = best
    if s + PURSUIT_LOOKAHEAD < best_line.length:
        target = best_line.point_at(s + PURSUIT_LOOKAHEAD)
    else:
        target = best_line.vertices[-1]
    if dist(agent.position, target) < 1e-9:
        h = best_line.heading_at(best_line.length)
        return (math.cos(h), math.sin(h))
    return normalize(sub(target, agent.position))


def _pursue_route(agent: AgentState, mem: dict) -> Point:
    route: PathPolyline = mem["route"]
    wp = mem.get("wp", 0)
    while wp < len(route.vertices) - 1 and dist(agent.position, route.vertices[wp]) < WAYPOINT_TOL:
        wp += 1
    mem["wp"] = wp
    target = route.vertices[wp]
    if dist(agent.position, target) < 1e-9:
        return (math.cos(agent.heading), math.sin(agent.heading))
    return normalize(sub(target, agent.position))


def _pick_leader(agent: AgentState, scenario: Scenario, world: list[AgentState]):
    """Nearest visible moving agent strictly closer to an exit; ties by id."""
    my_exit_dist = scenario.exit_distance(agent.position)
    best = None
    best_key = None
    for other in world:
        if other.id == agent.id:
            continue
        if other.speed < MIN_MOVING_SPEED:
            continue
        if scenario.exit_distance(other.position) >= my_exit_dist - 1e-9:
            continue
        if not scenario.line_of_sight(agent.position, other.position):
            continue
        key = (dist(agent.position, other.position), other.id)
        if best_key is None or key < best_key:
            best, best_key = other, key
    return best


def _explore(agent: AgentState, scenario: Scenario, rng) -> Point:
    """Wall following; the hand (wall kept on the right or left) is drawn
    once per agent so different seeds explore in different directions."""
    mem = agent.policy_memory
    if "hand" not in mem:
        mem["hand"] = 1 if rng.random() < 0.5 else -1
    hand = mem["hand"]
    walls = scenario._walls_np
    if walls.shape[0] == 0:
        return (math.cos(agent.heading), math.sin(agent.heading))
    pos = np.asarray([agent.position])
    d_all = points_walls_distance(pos, walls)[0]
    idx = mem.get("wall")
    nearest = int(np.argmin(d_all))
    if idx is None or d_all[idx] > 3.0 * WALL_STANDOFF or d_all[nearest] < 0.5 * d_all[idx]:
        idx = nearest
    # concave corners: if a different wall blocks the tangent within one
    # standoff, follow that wall instead
    for _ in range(3):
        t, n, d = _wall_tangent(agent.position, scenario.walls[idx], hand)
        probe_end = np.asarray([[agent.position[0] + PROBE_AHEAD * t[0],
                                 agent.position[1] + PROBE_AHEAD * t[1]]])
        clear = segments_walls_clearance(pos, probe_end, walls)[0]
        clear[idx] = np.inf
        hit = int(np.argmin(clear))
        if clear[hit] >= PROBE_HIT:
            break
        idx = hit
    mem["wall"] = idx
    t, n, d = _wall_tangent(agent.position, scenario.walls[idx], hand)
    correction = max(-1.2, min(1.2, 2.0 * (WALL_STANDOFF - d)))
    return normalize((t[0] + correction * n[0], t[1] + correction * n[1]))


def _arrow_blocked(position: Point, arrow: Point, scenario: Scenario) -> bool:
    walls = scenario._walls_np
    if walls.shape[0] == 0:
        return False
    end = np.asarray([[position[0] + ARROW_BLOCK_DIST * arrow[0],
                       position[1] + ARROW_BLOCK_DIST * arrow[1]]])
    clear = segments_walls_clearance(np.asarray([position]), end, walls)
    return float(clear.min()) < 0.2


def _wall_tangent(position: Point, wall, hand: int) -> tuple[Point, Point, float]:
    cp = closest_point_on_segment(position, wall[0], wall[1])
    d = dist(position, cp)
    if d < 1e-9:
        n = rotate(normalize(sub(wall[1], wall[0])), math.pi / 2.0)
    else:
        n = normalize(sub(position, cp))
    t = rotate(n, -hand * math.pi / 2.0)
    return t, n, d


# --- memorized floor-plan routes ---------------------------------------------

_MAX_DETOURS = 12


def plan_floor_plan_memory(scenario: Scenario, start: Point, rng, p_err: float = 0.0,
                           clearance: float = DEFAULT_CLEARANCE) -> PathPolyline:
    """Route memorized from the evacuation floor plan.

    The true shortest path to the nearest exit, except that each junction
    decision is independently corrupted with probability p_err; a corrupted
    decision walks into a random other corridor and the remembered route
    continues from there (still aiming at the same exit).
    """
    ex, _ = scenario.nearest_exit(start, clearance)
    wps = list(scenario.shortest_path(start, ex, clearance).vertices)
    route: list[Point] = [wps[0]]
    i = 0
    detours = 0
    while i < len(wps) - 1:
        route.append(wps[i + 1])
        if i + 1 == len(wps) - 1:
            break
        if detours < _MAX_DETOURS and rng.random() < p_err:
            alts = _alternative_corridors(scenario, wps[i + 1], wps[i], wps[i + 2], clearance)
            if alts:
                wrong = alts[rng.randrange(len(alts))]
                route.append(wrong)
                wps = list(scenario.shortest_path(wrong, ex, clearance).vertices)
                i = 0
                detours += 1
                continue
        i += 1
    return PathPolyline.from_points(route, dedup_tol=1e-6)


def _alternative_corridors(scenario: Scenario, junction: Point, came_from: Point,
                           correct_next: Point, clearance: float) -> list[Point]:
    """Navigation nodes reachable from the junction that branch away from
    both the correct continuation and the way we came."""
    graph = scenario._nav(clearance)
    visible = graph._visible_nodes(junction, soft=True)
    to_next = normalize(sub(correct_next, junction))
    to_prev = normalize(sub(came_from, junction))
    out = []
    for idx, length in visible:
        node = (float(graph.nodes[idx][0]), float(graph.nodes[idx][1]))
        if length < 0.8:
            continue
        v = normalize(sub(node, junction))
        if v[0] * to_next[0] + v[1] * to_next[1] > math.cos(math.radians(45)):
            continue
        if v[0] * to_prev[0] + v[1] * to_prev[1] > math.cos(math.radians(45)):
            continue
        out.append(node)
    out.sort()
    return out


# --- locomotion ---------------------------------------------------------------

def social_force_step(agent: AgentState, neighbors: list[AgentState], scenario: Scenario,
                      e_desired: Point, dt: float) -> AgentState:
    """Advance one agent by dt (internally substepped at 10 ms), with the
    given neighbors held fixed. Never leaves the agent inside a wall."""
    if not 0.0 < dt <= 0.1 + 1e-12:
        raise ValueError("dt must be in (0, 0.1]")
    others = [n for n in neighbors if n.id != agent.id]
    pos = np.asarray([agent.position] + [n.position for n in others])
    vel = np.asarray([agent.velocity] + [n.velocity for n in others])
    radii = np.asarray([agent.radius] + [n.radius for n in others])
    vdes = np.asarray([agent.desired_speed] + [n.desired_speed for n in others])
    e = np.zeros_like(pos)
    e[0] = e_desired
    movable = np.zeros(len(radii), dtype=bool)
    movable[0] = True
    p, v = step_world(pos, vel, radii, vdes, e, movable, scenario._walls_np, dt)
    heading = agent.heading
    if float(np.hypot(v[0, 0], v[0, 1])) > 1e-9:
        heading = math.atan2(float(v[0, 1]), float(v[0, 0]))
    return replace(agent, position=(float(p[0, 0]), float(p[0, 1])),
                   velocity=(float(v[0, 0]), float(v[0, 1])), heading=heading)


def step_world(pos: np.ndarray, vel: np.ndarray, radii: np.ndarray, vdes: np.ndarray,
               e_desired: np.ndarray, movable: np.ndarray, walls: np.ndarray,
               dt: float) -> tuple[np.ndarray, np.ndarray]:
    """Synchronous social-force update of all movable rows over dt.

    Forces are evaluated on the pre-substep state for every agent, then
    positions integrate the new velocities (semi-implicit); the relaxation
    term uses its exact exponential solution so free agents match the
    closed-form speed curve to machine precision.
    """
    p = pos.copy()
    v = vel.copy()
    remaining = dt
    while remaining > 1e-12:
        h = min(SUBSTEP, remaining)
        remaining -= h
        decay = math.exp(-h / TAU)
        v_target = vdes[:, None] * e_desired
        v_new = v_target + (v - v_target) * decay

        # agent-agent repulsion along the center line
        diff = p[:, None, :] - p[None, :, :]
        d = np.sqrt((diff ** 2).sum(axis=2))
        np.fill_diagonal(d, np.inf)
        mag = REPULSION_A * np.exp((radii[:, None] + radii[None, :] - d) / REPULSION_B)
        with np.errstate(invalid="ignore"):
            dirs = diff / d[:, :, None]
        force = (mag[:, :, None] * dirs).sum(axis=1)

        # wall repulsion from the closest point of each wall
        if walls.shape[0]:
            a = walls[:, 0:2][None, :, :]
            ab = (walls[:, 2:4] - walls[:, 0:2])[None, :, :]
            len2 = (ab ** 2).sum(axis=2)
            t = ((p[:, None, :] - a) * ab).sum(axis=2) / np.where(len2 > 0, len2, 1.0)
            t = np.clip(t, 0.0, 1.0)
            closest = a + t[:, :, None] * ab
            wdiff = p[:, None, :] - closest
            wd = np.sqrt((wdiff ** 2).sum(axis=2))
            wmag = REPULSION_A * np.exp((radii[:, None] - wd) / REPULSION_B)
            with np.errstate(invalid="ignore", divide="ignore"):
                wdirs = wdiff / np.where(wd > 1e-12, wd, 1.0)[:, :, None]
            force = force + (wmag[:, :, None] * wdirs).sum(axis=1)

        v_new = v_new + force * h
        cap = SPEED_CAP_FACTOR * vdes
        speed = np.sqrt((v_new ** 2).sum(axis=1))
        factor = np.minimum(1.0, cap / np.where(speed > 1e-12, speed, 1.0))
        v_new = v_new * factor[:, None]

        v = np.where(movable[:, None], v_new, v)
        p = np.where(movable[:, None], p + v * h, p)

        if walls.shape[0]:
            _project_out_of_walls(p, v, radii, movable, walls)
        _separate_overlaps(p, radii, movable)
    return p, v


def _project_out_of_walls(p, v, radii, movable, walls):
    for _ in range(2):
        d = points_walls_distance(p, walls)
        pen = (d < radii[:, None] - 1e-9) & movable[:, None]
        if not pen.any():
            return
        rows = np.nonzero(pen.any(axis=1))[0]
        for i in rows:
            for w in np.nonzero(pen[i])[0]:
                a = walls[w, 0:2]
                b = walls[w, 2:4]
                cp = closest_point_on_segment((p[i, 0], p[i, 1]), (a[0], a[1]), (b[0], b[1]))
                nvec = p[i] - np.asarray(cp)
                gap = math.hypot(nvec[0], nvec[1])
                if gap < 1e-12:
                    seg = b - a
                    nvec = np.asarray([-seg[1], seg[0]])
                    nvec = nvec / math.hypot(nvec[0], nvec[1])
                    gap = 0.0
                else:
                    nvec = nvec / gap
                push = radii[i] - gap
                if push > 0:
                    p[i] += push * nvec
                    vn = v[i, 0] * nvec[0] + v[i, 1] * nvec[1]
                    if vn < 0:
                        v[i] -= vn * nvec


def _separate_overlaps(p, radii, movable):
    n = p.shape[0]
    if n < 2:
        return
    for _ in range(2):
        moved = False
        for i in range(n):
            for j in range(i + 1, n):
                dvec = p[i] - p[j]
                d = math.hypot(dvec[0], dvec[1])
                overlap = radii[i] + radii[j] - d
                if overlap <= 1e-9:
                    continue
                if d < 1e-12:
                    dvec = np.asarray([1.0, 0.0])
                    d = 1.0
                ddir = dvec / d
                if movable[i] and movable[j]:
                    p[i] += 0.5 * overlap * ddir
                    p[j] -= 0.5 * overlap * ddir
                elif movable[i]:
                    p[i] += overlap * ddir
                elif movable[j]:
                    p[j] -= overlap * ddir
                moved = True
        if not moved:
            return
