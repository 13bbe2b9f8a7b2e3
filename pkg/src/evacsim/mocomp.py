"""Motion compression: maps target-environment paths into a small physical
workspace while preserving path length and waypoint turning angles.

Each straight target segment becomes one constant-curvature arc of equal
length; discrete turns at waypoints carry over unchanged. Curvatures are
chosen to minimize the sum of squared curvatures subject to the sampled
path staying inside the workspace inset by its safety margin.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .geometry import PathPolyline, Point, dist, sub, unit, wrap_angle

KAPPA_MAX_DEFAULT = 1.0      # 1/m
CROSS_TRACK_GAIN = 0.5       # rad per meter of lateral offset
CROSS_TRACK_CLAMP = 0.2      # rad
SOLVER_BUFFER = 0.002        # m, extra inset while solving so the 1 cm check passes
SOLVE_STEP = 0.025           # m, sampling during the solve
VERIFY_STEP = 0.01           # m, sampling for final verification
MAX_STEP_FORWARD = 0.5       # m, per-tick clamp for map_user_motion


class InfeasiblePathError(Exception):
    """No curvature assignment within |kappa| <= kappa_max fits the workspace."""


@dataclass(frozen=True)
class Pose:
    position: Point
    heading: float

    def __post_init__(self):
        object.__setattr__(self, "heading", wrap_angle(self.heading))


@dataclass(frozen=True)
class Workspace:
    """Bounded physical tracking region. origin is the shape center."""

    kind: str                      # "rectangle" | "disc"
    width: float = 0.0
    height: float = 0.0
    radius: float = 0.0
    origin: Point = (0.0, 0.0)
    margin: float = 0.0

    def __post_init__(self):
        if self.kind not in ("rectangle", "disc"):
            raise ValueError(f"unknown workspace kind {self.kind!r}")
        if self.margin < 0:
            raise ValueError("margin must be >= 0")
        dims = (self.width, self.height) if self.kind == "rectangle" else (2 * self.radius,)
        if any(d <= 2 * self.margin for d in dims):
            raise ValueError("all workspace dimensions must exceed 2 x margin")

    @staticmethod
    def rectangle(width: float, height: float, origin: Point = (0.0, 0.0),
                  margin: float = 0.0) -> "Workspace":
        return Workspace(kind="rectangle", width=width, height=height,
                         origin=origin, margin=margin)

    @staticmethod
    def disc(radius: float, origin: Point = (0.0, 0.0), margin: float = 0.0) -> "Workspace":
        return Workspace(kind="disc", radius=radius, origin=origin, margin=margin)

    def inradius(self, inset: float) -> float:
        if self.kind == "rectangle":
            return min(self.width, self.height) / 2.0 - inset
        return self.radius - inset

    def contains_points(self, points: np.ndarray, inset: float) -> bool:
        ox, oy = self.origin
        if self.kind == "rectangle":
            hw = self.width / 2.0 - inset
            hh = self.height / 2.0 - inset
            return bool((np.abs(points[:, 0] - ox) <= hw).all()
                        and (np.abs(points[:, 1] - oy) <= hh).all())
        r = self.radius - inset
        return bool(((points[:, 0] - ox) ** 2 + (points[:, 1] - oy) ** 2 <= r * r).all())

    def contains_circle(self, center: Point, radius: float, inset: float) -> bool:
        ox, oy = self.origin
        if self.kind == "rectangle":
            hw = self.width / 2.0 - inset - radius
            hh = self.height / 2.0 - inset - radius
            return hw >= 0 and hh >= 0 and abs(center[0] - ox) <= hw and abs(center[1] - oy) <= hh
        return math.hypot(center[0] - ox, center[1] - oy) <= self.radius - inset - radius


@dataclass(frozen=True)
class Arc:
    curvature: float
    length: float
    start_pose: Pose

    def end_pose(self) -> Pose:
        return Pose(self.point_at(self.length), self.start_pose.heading + self.curvature * self.length)

    def point_at(self, s: float) -> Point:
        x, y = self.start_pose.position
        h = self.start_pose.heading
        k = self.curvature
        if abs(k) < 1e-12:
            return (x + s * math.cos(h), y + s * math.sin(h))
        return (x + (math.sin(h + k * s) - math.sin(h)) / k,
                y - (math.cos(h + k * s) - math.cos(h)) / k)

    def sample(self, step: float) -> np.ndarray:
        n = max(2, int(math.ceil(self.length / step)) + 1)
        s = np.linspace(0.0, self.length, n)
        x, y = self.start_pose.position
        h = self.start_pose.heading
        k = self.curvature
        if abs(k) < 1e-12:
            return np.stack([x + s * math.cos(h), y + s * math.sin(h)], axis=1)
        return np.stack([x + (np.sin(h + k * s) - math.sin(h)) / k,
                         y - (np.cos(h + k * s) - math.cos(h)) / k], axis=1)


@dataclass(frozen=True)
class CompressedPath:
    arcs: tuple[Arc, ...]
    total_length: float
    waypoint_turns: tuple[float, ...]

    def _locate(self, s: float) -> tuple[int, float]:
        s = min(max(s, 0.0), self.total_length)
        acc = 0.0
        for i, a in enumerate(self.arcs):
            if s <= acc + a.length or i == len(self.arcs) - 1:
                return i, s - acc
            acc += a.length
        return len(self.arcs) - 1, self.arcs[-1].length

    def point_at(self, s: float) -> Point:
        i, ds = self._locate(s)
        return self.arcs[i].point_at(min(ds, self.arcs[i].length))

    def heading_at(self, s: float) -> float:
        i, ds = self._locate(s)
        a = self.arcs[i]
        return wrap_angle(a.start_pose.heading + a.curvature * min(ds, a.length))

    def curvature_at(self, s: float) -> float:
        i, _ = self._locate(s)
        return self.arcs[i].curvature

    def sample(self, step: float) -> np.ndarray:
        return np.concatenate([a.sample(step) for a in self.arcs], axis=0)

    def validate(self, tol: float = 1e-9) -> None:
        if abs(self.total_length - sum(a.length for a in self.arcs)) > tol:
            raise ValueError("total_length inconsistent with arcs")
        if len(self.waypoint_turns) != max(0, len(self.arcs) - 1):
            raise ValueError("waypoint_turns needs one entry per interior waypoint")


# --- path prediction ----------------------------------------------------------

def predict_target_path(avatar_pose: Pose, current_goal: Point | None, horizon: float,
                        scenario=None) -> PathPolyline:
    """Expected upcoming target-environment path, truncated at horizon.

    With a goal and a scenario, the prediction is the shortest path toward
    the goal; with a goal in open space, the straight line to it; with no
    goal, a straight ray along the current heading.
    """
    if horizon <= 0:
        raise ValueError("horizon must be > 0")
    p = avatar_pose.position
    if current_goal is None:
        d = unit(avatar_pose.heading)
        return PathPolyline.from_points([p, (p[0] + horizon * d[0], p[1] + horizon * d[1])])
    if scenario is None:
        length = dist(p, current_goal)
        if length < 1e-12:
            d = unit(avatar_pose.heading)
            return PathPolyline.from_points([p, (p[0] + horizon * d[0], p[1] + horizon * d[1])])
        f = min(1.0, horizon / length)
        q = (p[0] + f * (current_goal[0] - p[0]), p[1] + f * (current_goal[1] - p[1]))
        return PathPolyline.from_points([p, q])
    verts = scenario._nav(0.2).solve(p, current_goal)
    if verts is None:
        d = unit(avatar_pose.heading)
        return PathPolyline.from_points([p, (p[0] + horizon * d[0], p[1] + horizon * d[1])])
    return truncate_polyline(PathPolyline.from_points(verts), horizon)


def truncate_polyline(path: PathPolyline, max_length: float) -> PathPolyline:
    if path.length <= max_length:
        return path
    pts = []
    for v, c in zip(path.vertices, path.cumulative_arclength):
        if c >= max_length:
            break
        pts.append(v)
    pts.append(path.point_at(max_length))
    return PathPolyline.from_points(pts)


# --- the transform -------------------------------------------------------------

def transform_path(target: PathPolyline, workspace: Workspace, user_start: Pose,
                   kappa_max: float = KAPPA_MAX_DEFAULT) -> CompressedPath:
    """Compress a target path into the workspace.

    Arc i has exactly the length of target segment i; the heading change at
    each interior waypoint equals the target's turning angle there. Among
    assignments satisfying containment and |kappa| <= kappa_max, the solver
    returns a local minimum of sum(kappa^2) found by greedy construction
    plus per-arc shrink bisection.
    """
    if len(target.vertices) < 2:
        raise ValueError("target path needs at least 2 vertices")
    if workspace.inradius(workspace.margin) < 0.5:
        raise ValueError("workspace must admit a disc of radius >= 0.5 m")
    lengths = target.segment_lengths()
    turns = target.turning_angles()
    solver = _Solver(lengths, turns, workspace, user_start, kappa_max)
    kappas = solver.solve()
    if kappas is None:
        raise InfeasiblePathError(
            f"no curvature assignment with |kappa| <= {kappa_max} fits the workspace")
    arcs = _build_arcs(lengths, turns, user_start, kappas)
    path = CompressedPath(arcs=tuple(arcs), total_length=float(sum(lengths)),
                          waypoint_turns=tuple(turns))
    if not workspace.contains_points(path.sample(VERIFY_STEP), workspace.margin - 1e-9):
        raise InfeasiblePathError("solver result failed final containment verification")
    return path


def _build_arcs(lengths, turns, user_start: Pose, kappas) -> list[Arc]:
    arcs = []
    pose = user_start
    for i, (L, k) in enumerate(zip(lengths, kappas)):
        arc = Arc(curvature=float(k), length=float(L), start_pose=pose)
        arcs.append(arc)
        end = arc.end_pose()
        if i < len(turns):
            end = Pose(end.position, end.heading + turns[i])
        pose = end
    return arcs


class _Solver:
    def __init__(self, lengths, turns, workspace: Workspace, user_start: Pose, kappa_max: float):
        self.lengths = lengths
        self.turns = turns
        self.ws = workspace
        self.start = user_start
        self.kmax = kappa_max
        self.inset = workspace.margin + SOLVER_BUFFER
        self.r_min = 1.0 / kappa_max if kappa_max > 0 else float("inf")
        # recoverability only helps if a max-curvature turning circle fits at all
        self.use_recovery = workspace.inradius(self.inset) > self.r_min

    # -- feasibility ------------------------------------------------------

    def _feasible(self, kappas) -> bool:
        arcs = _build_arcs(self.lengths, self.turns, self.start, kappas)
        for a in arcs:
            if not self.ws.contains_points(a.sample(SOLVE_STEP), self.inset):
                return False
        return True

    def _arc_ok(self, pose: Pose, length: float, kappa: float) -> bool:
        return self.ws.contains_points(Arc(kappa, length, pose).sample(SOLVE_STEP), self.inset)

    def _recoverable(self, pose: Pose) -> bool:
        if not self.use_recovery:
            return True
        h = pose.heading
        for side in (1.0, -1.0):
            cx = pose.position[0] - side * self.r_min * math.sin(h)
            cy = pose.position[1] + side * self.r_min * math.cos(h)
            if self.ws.contains_circle((cx, cy), self.r_min, self.inset):
                return True
        return False

    # -- construction -------------------------------------------------------

    def _candidates(self):
        n = 40
        vals = [0.0]
        for k in range(1, n + 1):
            v = self.kmax * k / n
            vals.extend((v, -v))
        return vals

    def _greedy(self, order_center_bias: bool) -> list[float] | None:
        cand = self._candidates()
        n = len(self.lengths)
        kappas: list[float] = []
        poses = [self.start]
        options: list[list[float]] = []
        budget = 6000
        while len(kappas) < n:
            i = len(kappas)
            if len(options) == i:
                pose = poses[-1]
                opts = []
                for k in cand:
                    budget -= 1
                    if budget < 0:
                        return None
                    if not self._arc_ok(pose, self.lengths[i], k):
                        continue
                    end = Arc(k, self.lengths[i], pose).end_pose()
                    if i < len(self.turns):
                        end = Pose(end.position, end.heading + self.turns[i])
                    if i < n - 1 and not self._recoverable(end):
                        continue
                    opts.append(k)
                if order_center_bias:
                    def center_dist(k):
                        end = Arc(k, self.lengths[i], poses[-1]).end_pose()
                        return dist(end.position, self.ws.origin)
                    opts.sort(key=lambda k: (center_dist(k), abs(k)))
                options.append(opts)
            if not options[i]:
                # backtrack
                options.pop()
                if not kappas:
                    return None
                kappas.pop()
                poses.pop()
                continue
            k = options[i].pop(0)
            kappas.append(k)
            end = Arc(k, self.lengths[i], poses[-1]).end_pose()
            if i < len(self.turns):
                end = Pose(end.position, end.heading + self.turns[i])
            poses.append(end)
        return kappas

    def _uniform(self) -> list[float] | None:
        n = len(self.lengths)
        for frac in (1.0, 0.9, 0.75, 0.6, 0.5):
            for sign in (1.0, -1.0):
                kappas = [sign * frac * self.kmax] * n
                if self._feasible(kappas):
                    return kappas
        return None

    # -- refinement ----------------------------------------------------------

    def _descend(self, kappas: list[float]) -> list[float]:
        kappas = list(kappas)
        for _ in range(2):
            improved = False
            for i in range(len(kappas)):
                if kappas[i] == 0.0:
                    continue
                base = kappas[i]
                trial = list(kappas)
                trial[i] = 0.0
                if self._feasible(trial):
                    kappas[i] = 0.0
                    improved = True
                    continue
                lo, hi = 0.0, 1.0  # shrink factor: hi known feasible
                for _ in range(12):
                    mid = 0.5 * (lo + hi)
                    trial[i] = base * mid
                    if self._feasible(trial):
                        hi = mid
                    else:
                        lo = mid
                if hi < 1.0:
                    kappas[i] = base * hi
                    improved = True
            if not improved:
                break
        return kappas

    def solve(self) -> list[float] | None:
        zero = [0.0] * len(self.lengths)
        if self._feasible(zero):
            return zero
        best = None
        for attempt in (lambda: self._greedy(False), lambda: self._greedy(True), self._uniform):
            kappas = attempt()
            if kappas is not None and self._feasible(kappas):
                best = kappas
                break
        if best is None:
            return None
        return self._descend(best)


# --- runtime mapping ------------------------------------------------------------

def guidance_rotation(user_pose: Pose, compressed: CompressedPath, target: PathPolyline,
                      arclength_progress: float, k_p: float = CROSS_TRACK_GAIN) -> float:
    """Angle by which the rendered view is rotated relative to the user's
    physical heading: tangent-heading difference between the two paths plus
    a clamped cross-track correction steering the user back onto the path.
    """
    s = arclength_progress
    if not -1e-9 <= s <= compressed.total_length + 1e-9:
        raise ValueError("arclength_progress outside [0, total_length]")
    base = wrap_angle(compressed.heading_at(s) - target.heading_at(s))
    q = compressed.point_at(s)
    h = compressed.heading_at(s)
    tx, ty = math.cos(h), math.sin(h)
    ex = user_pose.position[0] - q[0]
    ey = user_pose.position[1] - q[1]
    lateral = tx * ey - ty * ex            # >0 when the user is left of the path
    correction = max(-CROSS_TRACK_CLAMP, min(CROSS_TRACK_CLAMP, -k_p * lateral))
    return wrap_angle(base + correction)


def map_user_motion(compressed: CompressedPath, target: PathPolyline,
                    user_step: tuple[float, float], progress: float = 0.0) -> tuple[float, float]:
    """Map one physical step (forward meters, heading change) to avatar motion.

    Forward distance is preserved exactly; the heading change drops the
    turn induced by the workspace path's local curvature at the current
    arc-length progress.
    """
    forward, turn = user_step
    if abs(forward) > MAX_STEP_FORWARD + 1e-12:
        raise ValueError("per-tick forward motion must be <= 0.5 m")
    kappa = compressed.curvature_at(progress)
    return forward, turn - kappa * forward


def hausdorff_distance(a: PathPolyline, b: PathPolyline, step: float = 0.25) -> float:
    pa = a.resample(step)
    pb = b.resample(step)
    d = np.sqrt(((pa[:, None, :] - pb[None, :, :]) ** 2).sum(axis=2))
    return float(max(d.min(axis=1).max(), d.min(axis=0).max()))


class MotionCompressor:
    """Keeps a compressed path in sync with the avatar's predicted motion.

    Replans when the predicted target path drifts more than 0.5 m Hausdorff
    from the remainder of the current plan; arc-length progress carries over.
    """

    REPLAN_HAUSDORFF = 0.5

    def __init__(self, workspace: Workspace, scenario=None, kappa_max: float = KAPPA_MAX_DEFAULT,
                 horizon: float = 8.0):
        self.workspace = workspace
        self.scenario = scenario
        self.kappa_max = kappa_max
        self.horizon = horizon
        self.target: PathPolyline | None = None
        self.compressed: CompressedPath | None = None
        self.progress = 0.0

    def update(self, avatar_pose: Pose, user_pose: Pose, goal: Point | None = None) -> None:
        predicted = predict_target_path(avatar_pose, goal, self.horizon, self.scenario)
        if self.compressed is not None:
            remaining = max(0.0, self.target.length - self.progress)
            if remaining > 0.5 and hausdorff_distance(predicted, _remainder(self.target, self.progress)) <= self.REPLAN_HAUSDORFF:
                return
        self.target = predicted
        self.compressed = transform_path(predicted, self.workspace, user_pose, self.kappa_max)
        self.progress = 0.0

    def step(self, user_step: tuple[float, float]) -> tuple[float, float]:
        if self.compressed is None:
            return user_step
        mapped = map_user_motion(self.compressed, self.target, user_step, self.progress)
        self.progress = min(self.compressed.total_length, self.progress + max(0.0, user_step[0]))
        return mapped

    def guidance(self, user_pose: Pose) -> float:
        if self.compressed is None:
            return 0.0
        return guidance_rotation(user_pose, self.compressed, self.target, self.progress)


def _remainder(path: PathPolyline, s: float) -> PathPolyline:
    if s <= 0:
        return path
    if s >= path.length:
        return PathPolyline((path.vertices[-1],), (0.0,))
    pts = [path.point_at(s)]
    for v, c in zip(path.vertices, path.cumulative_arclength):
        if c > s:
            pts.append(v)
    return PathPolyline.from_points(pts)
