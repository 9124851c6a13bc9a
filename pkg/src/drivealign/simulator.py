"""Deterministic 2D closed-loop driving environment.

Scenarios script every agent as a time-indexed pose table at 10 Hz; the
ego is displacement-following: each step it replans from the current world
state and teleports along the first planned segment, taking its heading
from that segment. TTC uses a longitudinal corridor model, collisions use
separating-axis tests on oriented rectangles (vehicles) and convex
polygons (static obstacles). Rollouts keep simulating after a collision so
collision-rate bookkeeping sees the whole clip; training consumers drop
the frames at and after the first contact.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .consistency import Decision, relative_speed_ratio
from .errors import InvalidInputError, SchemaError, UndefinedRatioError
from .geometry import convex_overlap, from_frame, rect_corners, to_frame
from .kinematics import Trajectory, segment_headings
from .policies import DecisionPolicy, ResidualPlanner, SceneFeatures

SIM_DT = 0.1
EGO_LENGTH = 4.6
EGO_WIDTH = 1.9
LANE_WIDTH = 3.5
#: Longitudinal distance within which an adjacent-lane agent blocks a lane.
LANE_BLOCK_RANGE = 20.0
#: Minimum approach speed toward the other body for fault attribution.
FAULT_APPROACH_SPEED = 0.5


@dataclass(frozen=True)
class BodyState:
    """Pose, velocity and rectangular footprint of one traffic body."""

    x: float
    y: float
    heading: float
    vx: float
    vy: float
    length: float
    width: float

    @property
    def center(self) -> np.ndarray:
        return np.array([self.x, self.y])

    @property
    def velocity(self) -> np.ndarray:
        return np.array([self.vx, self.vy])

    @property
    def speed(self) -> float:
        return math.hypot(self.vx, self.vy)

    def corners(self) -> np.ndarray:
        return rect_corners(self.x, self.y, self.heading, self.length, self.width)


@dataclass
class AgentScript:
    """Scripted agent: footprint plus world poses at every 0.1 s step."""

    length: float
    width: float
    waypoints: np.ndarray  # (M, 3): x, y, heading

    def __post_init__(self):
        wp = np.asarray(self.waypoints, dtype=float)
        if wp.ndim != 2 or wp.shape[1] != 3 or len(wp) < 2:
            raise SchemaError("agent waypoints must be an (M, 3) array, M >= 2")
        if not np.all(np.isfinite(wp)):
            raise SchemaError("agent waypoints must be finite")
        self.waypoints = wp

    def state_at(self, k: int) -> BodyState:
        if k < 0 or k >= len(self.waypoints):
            raise InvalidInputError(
                f"agent script covers {len(self.waypoints)} frames, asked for {k}"
            )
        x, y, heading = self.waypoints[k]
        j = max(k, 1)
        vel = (self.waypoints[j, :2] - self.waypoints[j - 1, :2]) / SIM_DT
        return BodyState(x, y, heading, vel[0], vel[1], self.length, self.width)


@dataclass(frozen=True)
class EgoInit:
    x: float
    y: float
    heading: float
    speed: float


@dataclass
class Scenario:
    """One closed-loop clip: ego start, scripted traffic, expert reference."""

    id: str
    duration_s: float
    ego_init: EgoInit
    agents: list[AgentScript]
    static_obstacles: list[np.ndarray]
    navigation_command: str
    speed_limit_mps: float
    expert_trajectory: Trajectory
    lane_centerlines: list[np.ndarray] = field(default_factory=list)
    kind: str = ""

    def __post_init__(self):
        if self.duration_s <= 0:
            raise SchemaError("scenario duration must be positive")
        needed = self.n_steps + 1
        for i, agent in enumerate(self.agents):
            if len(agent.waypoints) < needed:
                raise SchemaError(
                    f"agent {i} script covers {len(agent.waypoints)} frames, "
                    f"scenario needs {needed}"
                )
        if len(self.expert_trajectory) < needed:
            raise SchemaError("expert trajectory must cover the full clip")

    @property
    def n_steps(self) -> int:
        return round(self.duration_s / SIM_DT)

    def expert_mean_speed(self) -> float:
        steps = np.diff(self.expert_trajectory.points, axis=0)
        return float(np.mean(np.linalg.norm(steps, axis=1)) / SIM_DT)


def default_corridor_width() -> float:
    return EGO_WIDTH + 1.0


def ttc(ego: BodyState, others, corridor_width: float | None = None) -> float:
    """Corridor time-to-collision under constant-velocity extrapolation.

    Considers bodies whose center lies ahead of the ego within
    `corridor_width` lateral offset of the heading line; for those with
    positive closing speed, TTC = (center gap - half lengths) / closing.
    Returns 0 when footprints already overlap and inf when nothing
    qualifies.
    """
    if corridor_width is None:
        corridor_width = default_corridor_width()
    ego_poly = ego.corners()
    heading_dir = np.array([math.cos(ego.heading), math.sin(ego.heading)])
    best = math.inf
    for other in others:
        if convex_overlap(ego_poly, other.corners()):
            return 0.0
        rel = other.center - ego.center
        gap = float(rel @ heading_dir)
        lateral = float(-heading_dir[1] * rel[0] + heading_dir[0] * rel[1])
        if gap <= 0 or abs(lateral) > corridor_width:
            continue
        closing = float((ego.velocity - other.velocity) @ heading_dir)
        if closing <= 0:
            continue
        t = (gap - (ego.length + other.length) / 2.0) / closing
        best = min(best, max(t, 0.0))
    return best


def contact_point(ego: BodyState, other_poly: np.ndarray) -> np.ndarray:
    """Representative contact location for two overlapping footprints:
    the mean of the mutually contained corners, or the centroid midpoint
    when no corner penetrates (edge-through-edge crossings)."""
    ego_poly = ego.corners()
    inside = [p for p in other_poly if _point_in_convex(p, ego_poly)]
    inside += [p for p in ego_poly if _point_in_convex(p, other_poly)]
    if inside:
        return np.mean(inside, axis=0)
    return (ego.center + np.mean(other_poly, axis=0)) / 2.0


def _point_in_convex(p, poly) -> bool:
    n = len(poly)
    sign = 0.0
    for i in range(n):
        a, b = poly[i], poly[(i + 1) % n]
        cross = (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0])
        if abs(cross) < 1e-12:
            continue
        if sign == 0.0:
            sign = math.copysign(1.0, cross)
        elif math.copysign(1.0, cross) != sign:
            return False
    return True


def at_fault(
    contact_world: np.ndarray,
    ego: BodyState,
    other_center: np.ndarray,
    other_velocity: np.ndarray,
) -> bool:
    """Fault attribution for a contact.

    The ego is at fault iff the contact point lies on the front half of its
    footprint, or its velocity component toward the other body's center
    exceeds 0.5 m/s. Being struck from behind while not reversing never
    attributes fault (rear contact, no approach).
    """
    local = to_frame(contact_world, ego.center, ego.heading)
    if local[0] >= 0.0:
        return True
    toward = np.asarray(other_center, dtype=float) - ego.center
    norm = float(np.linalg.norm(toward))
    if norm < 1e-9:
        return False
    approach = float(ego.velocity @ (toward / norm))
    return approach > FAULT_APPROACH_SPEED


@dataclass(frozen=True)
class CollisionEvent:
    frame: int
    t: float
    kind: str  # "dynamic" | "static"
    other: int  # agent or obstacle index
    at_fault: bool


@dataclass
class FrameTrace:
    """Per-step training context retained when keep_trace is on."""

    features: SceneFeatures
    decision: Decision
    distribution: object
    plan: Trajectory
    ego: BodyState


@dataclass
class RolloutConfig:
    seed: int = 0
    decision_mode: str = "argmax"  # or "sample"
    fixed_decision: Decision | None = None
    corridor_width: float | None = None
    max_steps: int | None = None
    keep_trace: bool = False


@dataclass
class RolloutLog:
    """Closed-loop log: one row per executed 0.1 s step (post-step state)."""

    scenario_id: str
    t: np.ndarray
    x: np.ndarray
    y: np.ndarray
    heading: np.ndarray
    speed: np.ndarray
    min_ttc: np.ndarray
    collided: np.ndarray
    at_fault: np.ndarray
    decision_speed: list[str]
    decision_direction: list[str]
    rel_speed_ratio: np.ndarray
    events: list[CollisionEvent]
    termination: str
    first_collision_frame: int | None = None
    trace: list[FrameTrace] | None = None

    def __len__(self) -> int:
        return len(self.t)

    @property
    def any_collision(self) -> bool:
        return bool(self.collided.any())

    @property
    def any_at_fault(self) -> bool:
        return bool(self.at_fault.any())

    @property
    def min_ttc_overall(self) -> float:
        return float(self.min_ttc.min()) if len(self.min_ttc) else math.inf

    @property
    def mileage(self) -> float:
        return float(np.sum(self.speed) * SIM_DT)


def scene_features(
    scenario: Scenario, ego: BodyState, agents, corridor_width: float | None = None
) -> SceneFeatures:
    """Summarize the world state around the ego into policy features."""
    if corridor_width is None:
        corridor_width = default_corridor_width()
    heading_dir = np.array([math.cos(ego.heading), math.sin(ego.heading)])
    lead_gap = math.inf
    lead_closing = 0.0
    left_free = True
    right_free = True
    for other in agents:
        rel = other.center - ego.center
        dx = float(rel @ heading_dir)
        dy = float(-heading_dir[1] * rel[0] + heading_dir[0] * rel[1])
        if dx > 0 and abs(dy) <= corridor_width:
            gap = dx - (ego.length + other.length) / 2.0
            if gap < lead_gap:
                lead_gap = max(gap, 0.0)
                lead_closing = float((ego.velocity - other.velocity) @ heading_dir)
        if abs(dx) <= LANE_BLOCK_RANGE:
            if 0.5 * LANE_WIDTH < dy <= 1.5 * LANE_WIDTH:
                left_free = False
            elif -1.5 * LANE_WIDTH <= dy < -0.5 * LANE_WIDTH:
                right_free = False
    return SceneFeatures(
        ego_speed=ego.speed,
        lead_gap=lead_gap,
        lead_closing_speed=lead_closing if math.isfinite(lead_gap) else 0.0,
        left_lane_free=left_free,
        right_lane_free=right_free,
        navigation_command=scenario.navigation_command,
        speed_limit=scenario.speed_limit_mps,
    )


def _check_collisions(ego: BodyState, agents, statics, frame: int):
    events = []
    ego_poly = ego.corners()
    for i, other in enumerate(agents):
        poly = other.corners()
        if convex_overlap(ego_poly, poly):
            contact = contact_point(ego, poly)
            events.append(
                CollisionEvent(
                    frame=frame,
                    t=(frame + 1) * SIM_DT,
                    kind="dynamic",
                    other=i,
                    at_fault=at_fault(contact, ego, other.center, other.velocity),
                )
            )
    for i, poly in enumerate(statics):
        if convex_overlap(ego_poly, poly):
            contact = contact_point(ego, np.asarray(poly, dtype=float))
            center = np.mean(poly, axis=0)
            events.append(
                CollisionEvent(
                    frame=frame,
                    t=(frame + 1) * SIM_DT,
                    kind="static",
                    other=i,
                    at_fault=at_fault(contact, ego, center, np.zeros(2)),
                )
            )
    return events


def rollout(
    scenario: Scenario,
    policy: DecisionPolicy,
    planner: ResidualPlanner,
    config: RolloutConfig | None = None,
) -> RolloutLog:
    """Closed-loop execution of the dual policy in a scenario.

    Replans every step (10 Hz): build features, decide, plan, execute the
    first planned displacement, advance the scripted agents, then record
    speed, corridor TTC, collision flags and the plan's relative speed
    ratio. `config.fixed_decision` overrides the policy for the whole
    rollout (the fixed-decision evaluation protocol).
    """
    config = config or RolloutConfig()
    rng = np.random.default_rng(config.seed)
    n_steps = scenario.n_steps
    if config.max_steps is not None:
        n_steps = min(n_steps, config.max_steps)

    ego_pos = np.array([scenario.ego_init.x, scenario.ego_init.y])
    ego_heading = scenario.ego_init.heading
    ego_speed = scenario.ego_init.speed

    rows = {name: [] for name in ("t", "x", "y", "heading", "speed", "min_ttc", "ratio")}
    collided_rows = []
    fault_rows = []
    dec_speed: list[str] = []
    dec_dir: list[str] = []
    events: list[CollisionEvent] = []
    trace: list[FrameTrace] | None = [] if config.keep_trace else None
    first_collision = None

    for k in range(n_steps):
        vel = ego_speed * np.array([math.cos(ego_heading), math.sin(ego_heading)])
        ego = BodyState(
            ego_pos[0], ego_pos[1], ego_heading, vel[0], vel[1], EGO_LENGTH, EGO_WIDTH
        )
        agents_now = [a.state_at(k) for a in scenario.agents]
        features = scene_features(scenario, ego, agents_now, config.corridor_width)
        if config.fixed_decision is not None:
            decision = config.fixed_decision.coarse()
            dist = policy.distribution(features)
        else:
            decision, dist = policy.decide(features, config.decision_mode, rng)
        plan = planner.plan(features, decision)

        step_local = plan.points[1]
        step_world = from_frame(step_local, np.zeros(2), ego_heading)
        new_pos = ego_pos + step_world
        step_len = float(np.linalg.norm(step_world))
        if step_len > 1e-9:
            new_heading = math.atan2(step_world[1], step_world[0])
        else:
            new_heading = ego_heading
        new_speed = step_len / SIM_DT

        agents_next = [a.state_at(k + 1) for a in scenario.agents]
        new_vel = step_world / SIM_DT
        ego_next = BodyState(
            new_pos[0], new_pos[1], new_heading, new_vel[0], new_vel[1],
            EGO_LENGTH, EGO_WIDTH,
        )
        frame_events = _check_collisions(
            ego_next, agents_next, scenario.static_obstacles, k
        )
        events.extend(frame_events)
        if frame_events and first_collision is None:
            first_collision = k

        try:
            ratio = relative_speed_ratio(plan)
        except (UndefinedRatioError, InvalidInputError):
            ratio = math.nan

        rows["t"].append((k + 1) * SIM_DT)
        rows["x"].append(new_pos[0])
        rows["y"].append(new_pos[1])
        rows["heading"].append(new_heading)
        rows["speed"].append(new_speed)
        rows["min_ttc"].append(ttc(ego_next, agents_next, config.corridor_width))
        rows["ratio"].append(ratio)
        collided_rows.append(bool(frame_events))
        fault_rows.append(any(e.at_fault for e in frame_events))
        dc = decision.coarse()
        dec_speed.append(dc.speed.value)
        dec_dir.append(dc.direction.value)
        if trace is not None:
            trace.append(
                FrameTrace(
                    features=features, decision=decision, distribution=dist,
                    plan=plan, ego=ego,
                )
            )

        ego_pos = new_pos
        ego_heading = new_heading
        ego_speed = new_speed

    return RolloutLog(
        scenario_id=scenario.id,
        t=np.array(rows["t"]),
        x=np.array(rows["x"]),
        y=np.array(rows["y"]),
        heading=np.array(rows["heading"]),
        speed=np.array(rows["speed"]),
        min_ttc=np.array(rows["min_ttc"]),
        collided=np.array(collided_rows, dtype=bool),
        at_fault=np.array(fault_rows, dtype=bool),
        decision_speed=dec_speed,
        decision_direction=dec_dir,
        rel_speed_ratio=np.array(rows["ratio"]),
        events=events,
        termination="duration" if n_steps == scenario.n_steps else "max_steps",
        first_collision_frame=first_collision,
        trace=trace,
    )


def replay_expert(scenario: Scenario) -> RolloutLog:
    """Drive the expert trajectory verbatim and log collisions/TTC."""
    n_steps = scenario.n_steps
    pts = scenario.expert_trajectory.points
    headings = segment_headings(pts, fallback=scenario.ego_init.heading)

    rows = {name: [] for name in ("t", "x", "y", "heading", "speed", "min_ttc")}
    collided_rows = []
    fault_rows = []
    events: list[CollisionEvent] = []
    first_collision = None
    for k in range(n_steps):
        pos = pts[k + 1]
        heading = headings[k]
        vel = (pts[k + 1] - pts[k]) / SIM_DT
        ego = BodyState(pos[0], pos[1], heading, vel[0], vel[1], EGO_LENGTH, EGO_WIDTH)
        agents_next = [a.state_at(k + 1) for a in scenario.agents]
        frame_events = _check_collisions(ego, agents_next, scenario.static_obstacles, k)
        events.extend(frame_events)
        if frame_events and first_collision is None:
            first_collision = k
        rows["t"].append((k + 1) * SIM_DT)
        rows["x"].append(pos[0])
        rows["y"].append(pos[1])
        rows["heading"].append(heading)
        rows["speed"].append(float(np.linalg.norm(vel)))
        rows["min_ttc"].append(ttc(ego, agents_next))
        collided_rows.append(bool(frame_events))
        fault_rows.append(any(e.at_fault for e in frame_events))

    n = len(rows["t"])
    return RolloutLog(
        scenario_id=scenario.id,
        t=np.array(rows["t"]),
        x=np.array(rows["x"]),
        y=np.array(rows["y"]),
        heading=np.array(rows["heading"]),
        speed=np.array(rows["speed"]),
        min_ttc=np.array(rows["min_ttc"]),
        collided=np.array(collided_rows, dtype=bool),
        at_fault=np.array(fault_rows, dtype=bool),
        decision_speed=["expert"] * n,
        decision_direction=["expert"] * n,
        rel_speed_ratio=np.full(n, math.nan),
        events=events,
        termination="duration",
        first_collision_frame=first_collision,
    )
