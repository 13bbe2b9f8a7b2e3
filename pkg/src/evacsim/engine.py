"""Session orchestration: the loop coupling the human avatar with simulated
agents, run lifecycle, counterbalanced study plans, and per-tick recording.

One Session is owned by one ticking loop. Physics runs on fixed 10 ms
substeps regardless of the tick size; trajectory samples are recorded at
the configured sampling rate (default 10 Hz).
"""

from __future__ import annotations

import csv
import io
import json
import math
import random
from dataclasses import dataclass, field, replace
from enum import Enum

import numpy as np

from .agents import (
    AgentState,
    PolicyKind,
    RouteChoicePolicy,
    SUBSTEP,
    desired_direction,
    step_world,
)
from .geometry import Point, dist, sub, normalize, unit, wrap_angle
from .mocomp import MotionCompressor, Pose
from .scenario import Scenario

AVATAR_MAX_SPEED = 2.0       # m/s, clamp on live input
AVATAR_MAX_TURN = 3.0        # rad/s
AVATAR_RADIUS = 0.25
DEFAULT_TIMEOUT = 600.0
DEFAULT_SAMPLING_RATE = 10.0
DEFAULT_AGENT_COUNT = 6
SCRIPTED_SPEED = 1.1         # m/s, desired speed of the scripted avatar
EXIT_PROXIMITY = 0.3         # m, recorded end position sits on the portal


class Condition(str, Enum):
    GUIDING_LINES = "GuidingLines"
    SIMULATED_AGENTS = "SimulatedAgents"
    EXIT_SIGNS = "ExitSigns"
    FLOOR_PLAN = "FloorPlan"
    NONE = "None"


STUDY_CONDITIONS = (Condition.GUIDING_LINES, Condition.SIMULATED_AGENTS,
                    Condition.EXIT_SIGNS, Condition.FLOOR_PLAN)

_CONDITION_POLICY = {
    Condition.GUIDING_LINES: PolicyKind.GUIDING_LINE,
    Condition.SIMULATED_AGENTS: PolicyKind.FOLLOW_OTHERS,
    Condition.EXIT_SIGNS: PolicyKind.EXIT_SIGNS,
    Condition.FLOOR_PLAN: PolicyKind.FLOOR_PLAN_MEMORY,
}


class EngineError(Exception):
    pass


class TickAfterEndError(EngineError):
    pass


class CorruptRecordError(EngineError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(message + (f" (line {line})" if line is not None else ""))


@dataclass(frozen=True)
class RunConfig:
    scenario_id: str
    condition: Condition
    start_position_index: int
    participant_id: str
    run_index: int
    seed: int
    timeout: float = DEFAULT_TIMEOUT
    agent_count: int = DEFAULT_AGENT_COUNT

    def __post_init__(self):
        if self.run_index < 1:
            raise ValueError("run_index must be >= 1")
        if self.timeout <= 0:
            raise ValueError("timeout must be > 0")


@dataclass(frozen=True)
class Sample:
    t: float
    avatar: Pose
    avatar_speed: float
    exit_sign_visible: bool
    agents: tuple[tuple[int, Pose], ...]


@dataclass(frozen=True)
class Outcome:
    kind: str                      # "exited" | "timed_out"
    exit_id: str | None = None
    t_exit: float | None = None

    @staticmethod
    def exited(exit_id: str, t_exit: float) -> "Outcome":
        return Outcome("exited", exit_id, t_exit)

    @staticmethod
    def timed_out() -> "Outcome":
        return Outcome("timed_out")


@dataclass
class RunRecord:
    config: RunConfig
    samples: list[Sample]
    outcome: Outcome
    distance_walked: float


@dataclass(frozen=True)
class StudyPlan:
    participants: tuple[str, ...]
    condition_orders: dict[str, tuple[Condition, ...]]
    start_assignments: dict[tuple[str, int], int]


def build_study_plan(participants, scenario: Scenario, seed: int) -> StudyPlan:
    """Counterbalanced plan: condition order rotates cyclically by participant
    index, and each participant draws start positions without replacement."""
    participants = tuple(participants)
    n_starts = len(scenario.start_positions)
    if n_starts < len(STUDY_CONDITIONS):
        raise EngineError(
            f"scenario has {n_starts} start positions; need >= {len(STUDY_CONDITIONS)}")
    rng = random.Random(seed)
    orders = {}
    assignments = {}
    for i, pid in enumerate(participants):
        rot = i % len(STUDY_CONDITIONS)
        orders[pid] = STUDY_CONDITIONS[rot:] + STUDY_CONDITIONS[:rot]
        draws = rng.sample(range(n_starts), len(STUDY_CONDITIONS))
        for run_index, start in enumerate(draws, start=1):
            assignments[(pid, run_index)] = start
    return StudyPlan(participants, orders, assignments)


def _segment_crossing(p0: Point, p1: Point, a: Point, b: Point) -> Point | None:
    """Crossing point where the motion p0->p1 traverses the portal a-b."""
    d1 = sub(p1, p0)
    d2 = sub(b, a)
    denom = d1[0] * d2[1] - d1[1] * d2[0]
    if abs(denom) < 1e-15:
        return None
    rx, ry = a[0] - p0[0], a[1] - p0[1]
    t = (rx * d2[1] - ry * d2[0]) / denom
    u = (rx * d1[1] - ry * d1[0]) / denom
    if 1e-12 < t <= 1.0 and -1e-9 <= u <= 1.0 + 1e-9:
        return (p0[0] + t * d1[0], p0[1] + t * d1[1])
    return None


def _agent_spawns(scenario: Scenario, count: int) -> list[Point]:
    """Deterministic spawn points spread along the main circulation spine."""
    if len(scenario.exits) >= 2:
        a = scenario.exits[0].midpoint
        b = scenario.exits[1].midpoint
    else:
        a = scenario.start_positions[0]
        b = scenario.exits[0].midpoint
    verts = scenario._nav(0.3).solve(a, b)
    if verts is None:
        verts = [a, b]
    from .geometry import PathPolyline
    spine = PathPolyline.from_points(verts)
    pts = []
    for i in range(count):
        f = (i + 1) / (count + 1)
        pts.append(spine.point_at(f * spine.length))
    return pts


class Session:
    """A single run: one avatar (live or scripted), optional agents,
    condition overlays and recording."""

    def __init__(self, config: RunConfig, scenario: Scenario,
                 sampling_rate: float = DEFAULT_SAMPLING_RATE,
                 avatar_policy: RouteChoicePolicy | None = None,
                 workspace=None):
        if config.scenario_id != scenario.id:
            raise EngineError(f"config is for scenario {config.scenario_id!r}, got {scenario.id!r}")
        if not 0 <= config.start_position_index < len(scenario.start_positions):
            raise EngineError(f"invalid start index {config.start_position_index}")
        self.config = config
        self.base_scenario = scenario
        self.sampling_rate = sampling_rate
        self.rng = random.Random(config.seed)
        self.t = 0.0
        self.ended = False
        self.outcome: Outcome | None = None
        self.samples: list[Sample] = []

        start = scenario.start_positions[config.start_position_index]
        self.correct_exit, _ = scenario.nearest_exit(start)
        guide = scenario.shortest_path(start, self.correct_exit, clearance=0.3)

        overlays = {
            "guiding_lines": {self.correct_exit.id: guide} if config.condition == Condition.GUIDING_LINES else {},
            "exit_signs": scenario.exit_signs if config.condition == Condition.EXIT_SIGNS else (),
            "floor_plan_posts": scenario.floor_plan_posts if config.condition == Condition.FLOOR_PLAN else (),
        }
        self.scenario = replace(scenario, **overlays)
        # overlays share wall geometry, so reuse the navigation caches
        self.scenario._nav_cache = scenario._nav_cache
        object.__setattr__(self.scenario, "_exit_field", scenario._exit_field)

        heading = 0.0
        if len(guide.vertices) >= 2:
            heading = math.atan2(guide.vertices[1][1] - start[1], guide.vertices[1][0] - start[0])
        self.avatar = AgentState(
            id=0, position=start, velocity=(0.0, 0.0), heading=heading,
            radius=AVATAR_RADIUS, desired_speed=SCRIPTED_SPEED,
            policy=avatar_policy or RouteChoicePolicy(PolicyKind.SCRIPTED_GOAL),
            is_human_avatar=True)
        self.avatar_policy = avatar_policy
        self._avatar_e_desired: Point | None = None

        self.agents: list[AgentState] = []
        if config.condition == Condition.SIMULATED_AGENTS:
            for i, pos in enumerate(_agent_spawns(scenario, config.agent_count)):
                agent = AgentState(
                    id=i + 1, position=pos, velocity=(0.0, 0.0), heading=0.0,
                    radius=0.25, desired_speed=self.rng.uniform(0.9, 1.3),
                    policy=RouteChoicePolicy(PolicyKind.SCRIPTED_GOAL))
                agent.validate()
                self.agents.append(agent)
        self._agent_e: dict[int, Point] = {}

        self.compressor = None
        if workspace is not None:
            self.compressor = MotionCompressor(workspace, scenario)
        self._last_user_pose: Pose | None = None

        self._next_sample_t = 0.0
        self._decide_and_sample()

    # --- recording --------------------------------------------------------

    def _sample_now(self) -> Sample:
        visible = bool(self.scenario.visible_signs(self.avatar.position))
        return Sample(
            t=self.t,
            avatar=Pose(self.avatar.position, self.avatar.heading),
            avatar_speed=self.avatar.speed,
            exit_sign_visible=visible,
            agents=tuple((a.id, Pose(a.position, a.heading)) for a in self.agents),
        )

    def _decide_and_sample(self):
        # policy decisions are re-evaluated at the sampling rate
        if self.avatar_policy is not None:
            self._avatar_e_desired = desired_direction(
                self.avatar, self.scenario, [self.avatar] + self.agents, self.rng)
        for a in self.agents:
            self._agent_e[a.id] = desired_direction(
                a, self.scenario, [self.avatar] + self.agents, self.rng)
        self.samples.append(self._sample_now())
        self._next_sample_t += 1.0 / self.sampling_rate

    # --- stepping ------------------------------------------------------------

    def tick(self, dt: float, avatar_input=(0.0, 0.0)):
        """Advance by dt. avatar_input is (forward m/s, turn rad/s), or a
        Pose when the session runs in telepresence (workspace) mode."""
        if self.ended:
            raise TickAfterEndError("session already ended")
        if not 0.0 < dt <= 0.1 + 1e-12:
            raise ValueError("dt must be in (0, 0.1]")

        if isinstance(avatar_input, Pose):
            forward_dist, turn_total = self._map_tracked_pose(avatar_input, dt)
            forward_speed = forward_dist / dt
            turn_rate = turn_total / dt
        else:
            forward_speed, turn_rate = avatar_input
        forward_speed = max(-AVATAR_MAX_SPEED, min(AVATAR_MAX_SPEED, forward_speed))
        turn_rate = max(-AVATAR_MAX_TURN, min(AVATAR_MAX_TURN, turn_rate))

        remaining = dt
        while remaining > 1e-12 and not self.ended:
            h = min(SUBSTEP, remaining)
            remaining -= h
            self._substep(h, forward_speed, turn_rate)
            if not self.ended and self.t >= self._next_sample_t - 1e-9:
                self._decide_and_sample()
        return self

    def _substep(self, h: float, forward_speed: float, turn_rate: float):
        prev = self.avatar.position
        if self.avatar_policy is not None and self._avatar_e_desired is not None:
            e = self._avatar_e_desired
            err = wrap_angle(math.atan2(e[1], e[0]) - self.avatar.heading)
            turn = max(-AVATAR_MAX_TURN, min(AVATAR_MAX_TURN, 6.0 * err))
            speed = SCRIPTED_SPEED * max(0.15, math.cos(err))
        else:
            turn = turn_rate
            speed = forward_speed
        heading = self.avatar.heading + turn * h
        vel = (speed * math.cos(heading), speed * math.sin(heading))
        pos = (prev[0] + vel[0] * h, prev[1] + vel[1] * h)
        pos, vel = self._project_avatar(pos, vel)
        self.avatar = replace(self.avatar, position=pos, velocity=vel, heading=wrap_angle(heading))

        if self.agents:
            self._step_agents(h)

        self.t += h

        crossing = self._check_exit(prev, self.avatar.position)
        if crossing is not None:
            exit_obj, point = crossing
            self.avatar = replace(self.avatar, position=point)
            self._finish(Outcome.exited(exit_obj.id, self.t))
        elif self.t >= self.config.timeout - 1e-9:
            self._finish(Outcome.timed_out())

    def _map_tracked_pose(self, user_pose: Pose, dt: float) -> tuple[float, float]:
        """Telepresence input: difference the tracked pose and map it through
        motion compression into avatar motion."""
        if self._last_user_pose is None:
            self._last_user_pose = user_pose
            return 0.0, 0.0
        prev = self._last_user_pose
        step_vec = sub(user_pose.position, prev.position)
        d = math.hypot(step_vec[0], step_vec[1])
        hx, hy = math.cos(prev.heading), math.sin(prev.heading)
        forward = d if step_vec[0] * hx + step_vec[1] * hy >= 0 else -d
        turn = wrap_angle(user_pose.heading - prev.heading)
        self._last_user_pose = user_pose
        if self.compressor is not None:
            self.compressor.update(Pose(self.avatar.position, self.avatar.heading), prev)
            return self.compressor.step((forward, turn))
        return forward, turn

    def _project_avatar(self, pos: Point, vel: Point) -> tuple[Point, Point]:
        walls = self.scenario._walls_np
        if walls.shape[0] == 0:
            return pos, vel
        p = np.asarray([pos], dtype=float)
        v = np.asarray([vel], dtype=float)
        from .agents import _project_out_of_walls
        _project_out_of_walls(p, v, np.asarray([self.avatar.radius]),
                              np.asarray([True]), walls)
        return (float(p[0, 0]), float(p[0, 1])), (float(v[0, 0]), float(v[0, 1]))

    def _step_agents(self, h: float):
        world = [self.avatar] + self.agents
        pos = np.asarray([a.position for a in world])
        vel = np.asarray([a.velocity for a in world])
        radii = np.asarray([a.radius for a in world])
        vdes = np.asarray([a.desired_speed for a in world])
        e = np.zeros_like(pos)
        for i, a in enumerate(world[1:], start=1):
            e[i] = self._agent_e.get(a.id, (0.0, 0.0))
        movable = np.ones(len(world), dtype=bool)
        movable[0] = False  # the avatar follows its own input
        prev_pos = [a.position for a in world]
        p, v = step_world(pos, vel, radii, vdes, e, movable, self.scenario._walls_np, h)
        survivors = []
        for i, a in enumerate(world[1:], start=1):
            new_pos = (float(p[i, 0]), float(p[i, 1]))
            new_vel = (float(v[i, 0]), float(v[i, 1]))
            heading = a.heading
            if math.hypot(*new_vel) > 1e-6:
                heading = math.atan2(new_vel[1], new_vel[0])
            moved = replace(a, position=new_pos, velocity=new_vel, heading=heading)
            exited = False
            for ex in self.scenario.exits:
                if _segment_crossing(prev_pos[i], new_pos, ex.portal[0], ex.portal[1]):
                    exited = True
                    break
            if not exited:
                survivors.append(moved)
            else:
                self._agent_e.pop(a.id, None)
        self.agents = survivors

    def _check_exit(self, prev: Point, new: Point):
        for ex in self.scenario.exits:
            pt = _segment_crossing(prev, new, ex.portal[0], ex.portal[1])
            if pt is not None:
                return ex, pt
        return None

    def _finish(self, outcome: Outcome):
        self.ended = True
        self.outcome = outcome
        last_t = self.samples[-1].t if self.samples else -1.0
        if self.t > last_t + 1e-9:
            # final sample replaces the previous regular one so the count
            # stays at floor(duration * rate) +/- 1
            if len(self.samples) >= 2 and (self.t - last_t) < 1.0 / self.sampling_rate - 1e-9:
                self.samples.pop()
            self.samples.append(self._sample_now())

    def record(self) -> RunRecord:
        if not self.ended:
            raise EngineError("run still active")
        distance = 0.0
        for a, b in zip(self.samples, self.samples[1:]):
            distance += dist(a.avatar.position, b.avatar.position)
        return RunRecord(config=self.config, samples=list(self.samples),
                         outcome=self.outcome, distance_walked=distance)

    def snapshot(self) -> dict:
        """Immutable view of the current state for the gateway."""
        if self.outcome is None:
            run_state = {"state": "active"}
        elif self.outcome.kind == "exited":
            run_state = {"state": "exited", "exit_id": self.outcome.exit_id}
        else:
            run_state = {"state": "timed_out"}
        overlays = {}
        if self.config.condition == Condition.GUIDING_LINES:
            line = self.scenario.guiding_lines[self.correct_exit.id]
            overlays["guiding_line"] = [list(v) for v in line.vertices]
        if self.config.condition == Condition.EXIT_SIGNS:
            overlays["exit_signs"] = [
                {"pos": list(s.position), "facing": list(s.facing),
                 "arrow": list(s.arrow_direction), "range": s.visibility_range}
                for s in self.scenario.exit_signs]
        if self.config.condition == Condition.FLOOR_PLAN:
            overlays["floor_plan_posts"] = [list(p) for p in self.scenario.floor_plan_posts]
        return {
            "t": self.t,
            "avatar": {"x": self.avatar.position[0], "y": self.avatar.position[1],
                       "heading": self.avatar.heading, "speed": self.avatar.speed},
            "agents": [{"id": a.id, "x": a.position[0], "y": a.position[1],
                        "heading": a.heading} for a in self.agents],
            "overlays": overlays,
            "run_state": run_state,
        }


def start_run(config: RunConfig, scenario: Scenario, **kwargs) -> Session:
    return Session(config, scenario, **kwargs)


def run_scripted(config: RunConfig, scenario: Scenario, policy: RouteChoicePolicy,
                 sampling_rate: float = DEFAULT_SAMPLING_RATE) -> RunRecord:
    """Headless stand-in for a human: the avatar follows the policy's
    desired direction at 1.1 m/s until it exits or times out."""
    session = Session(config, scenario, sampling_rate=sampling_rate, avatar_policy=policy)
    while not session.ended:
        session.tick(0.1)
    return session.record()


# --- record files ------------------------------------------------------------

CSV_HEADER = ["t", "x", "y", "heading", "speed", "sign_visible"]


def record_file_stem(config: RunConfig) -> str:
    return f"{config.participant_id}_{config.run_index}_{config.condition.value}"


def record_to_csv(record: RunRecord) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_HEADER)
    for s in record.samples:
        writer.writerow([repr(float(s.t)), repr(float(s.avatar.position[0])),
                         repr(float(s.avatar.position[1])), repr(float(s.avatar.heading)),
                         repr(float(s.avatar_speed)), int(s.exit_sign_visible)])
    return buf.getvalue()


def record_sidecar(record: RunRecord) -> dict:
    return {
        "config": {
            "scenario_id": record.config.scenario_id,
            "condition": record.config.condition.value,
            "start_position_index": record.config.start_position_index,
            "participant_id": record.config.participant_id,
            "run_index": record.config.run_index,
            "seed": record.config.seed,
            "timeout": record.config.timeout,
            "agent_count": record.config.agent_count,
        },
        "outcome": {
            "kind": record.outcome.kind,
            "exit_id": record.outcome.exit_id,
            "t_exit": record.outcome.t_exit,
        },
        "distance_walked": record.distance_walked,
        "agents_per_sample": [
            [[aid, p.position[0], p.position[1], p.heading] for aid, p in s.agents]
            for s in record.samples
        ],
    }


def write_record(record: RunRecord, out_dir) -> tuple[str, str]:
    import pathlib
    out = pathlib.Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    stem = record_file_stem(record.config)
    csv_path = out / f"{stem}.csv"
    json_path = out / f"{stem}.json"
    csv_path.write_text(record_to_csv(record), encoding="utf-8")
    json_path.write_text(json.dumps(record_sidecar(record), indent=1, sort_keys=True),
                         encoding="utf-8")
    return str(csv_path), str(json_path)


def load_record(csv_path) -> RunRecord:
    import pathlib
    csv_path = pathlib.Path(csv_path)
    sidecar_path = csv_path.with_suffix(".json")
    if not sidecar_path.exists():
        raise CorruptRecordError(f"missing sidecar {sidecar_path.name}")
    try:
        meta = json.loads(sidecar_path.read_text(encoding="utf-8"))
        cfg = meta["config"]
        config = RunConfig(
            scenario_id=cfg["scenario_id"], condition=Condition(cfg["condition"]),
            start_position_index=cfg["start_position_index"],
            participant_id=cfg["participant_id"], run_index=cfg["run_index"],
            seed=cfg["seed"], timeout=cfg["timeout"], agent_count=cfg["agent_count"])
        out = meta["outcome"]
        outcome = Outcome(out["kind"], out.get("exit_id"), out.get("t_exit"))
        agent_rows = meta.get("agents_per_sample") or []
    except (KeyError, ValueError, json.JSONDecodeError) as e:
        raise CorruptRecordError(f"corrupt sidecar: {e}")
    samples = []
    text = csv_path.read_text(encoding="utf-8")
    reader = csv.reader(io.StringIO(text))
    try:
        header = next(reader)
    except StopIteration:
        raise CorruptRecordError("empty record file", line=1)
    if header != CSV_HEADER:
        raise CorruptRecordError(f"unexpected header {header}", line=1)
    prev_t = None
    for lineno, row in enumerate(reader, start=2):
        if len(row) != len(CSV_HEADER):
            raise CorruptRecordError(f"expected {len(CSV_HEADER)} fields, got {len(row)}",
                                     line=lineno)
        try:
            t, x, y, heading, speed = (float(v) for v in row[:5])
            visible = bool(int(row[5]))
        except ValueError as e:
            raise CorruptRecordError(f"bad value: {e}", line=lineno)
        if prev_t is not None and t <= prev_t:
            raise CorruptRecordError("timestamps not strictly increasing", line=lineno)
        prev_t = t
        idx = lineno - 2
        agents = tuple((int(a[0]), Pose((a[1], a[2]), a[3]))
                       for a in (agent_rows[idx] if idx < len(agent_rows) else []))
        samples.append(Sample(t=t, avatar=Pose((x, y), heading), avatar_speed=speed,
                              exit_sign_visible=visible, agents=agents))
    if not samples:
        raise CorruptRecordError("record has no samples", line=2)
    distance = 0.0
    for a, b in zip(samples, samples[1:]):
        distance += dist(a.avatar.position, b.avatar.position)
    if abs(distance - meta.get("distance_walked", distance)) > 1e-6:
        raise CorruptRecordError("distance_walked does not match trajectory")
    return RunRecord(config=config, samples=samples, outcome=outcome,
                     distance_walked=meta.get("distance_walked", distance))
