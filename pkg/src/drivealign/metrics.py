"""Open-loop and closed-loop evaluation metrics.

Open-loop: displacement errors against the expert plus a swept-footprint
collision check of each plan against the time-aligned scene. Closed-loop:
per-clip collision rates, at-fault rates and Safety@k over rollout logs.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from .errors import InvalidInputError
from .geometry import convex_overlap, from_frame, rect_corners
from .kinematics import Trajectory, segment_headings
from .simulator import EGO_LENGTH, EGO_WIDTH, BodyState, RolloutLog, Scenario


def fde_ade(planned: Trajectory, expert: Trajectory) -> tuple[float, float]:
    """Final and average displacement error between two trajectories."""
    if len(planned) != len(expert):
        raise InvalidInputError(
            f"length mismatch: planned {len(planned)} vs expert {len(expert)}"
        )
    dists = np.linalg.norm(planned.points - expert.points, axis=1)
    return float(dists[-1]), float(dists.mean())


class CollisionKind(enum.Enum):
    NONE = "none"
    DYNAMIC = "dynamic"
    STATIC = "static"
    BOTH = "both"


@dataclass
class ScenarioSnapshot:
    """Time-aligned scene over one plan horizon: per-step agent states and
    the static obstacle set."""

    agents_per_step: list[list[BodyState]]
    static_obstacles: list[np.ndarray]
    ego_length: float = EGO_LENGTH
    ego_width: float = EGO_WIDTH


def snapshot_at(scenario: Scenario, frame: int, horizon_steps: int) -> ScenarioSnapshot:
    """Scripted agent states for frames frame..frame+horizon_steps."""
    last_needed = frame + horizon_steps
    for i, agent in enumerate(scenario.agents):
        if last_needed >= len(agent.waypoints):
            raise InvalidInputError(
                f"plan horizon exceeds agent {i} script coverage "
                f"(needs frame {last_needed})"
            )
    steps = [
        [a.state_at(frame + k) for a in scenario.agents]
        for k in range(horizon_steps + 1)
    ]
    return ScenarioSnapshot(steps, scenario.static_obstacles)


def open_loop_collisions(
    planned_world: np.ndarray,
    snapshot: ScenarioSnapshot,
    initial_heading: float = 0.0,
) -> CollisionKind:
    """Sweep the ego footprint along a world-frame plan against the scene.

    Each plan point is checked against the agents scripted for the same
    step and against every static polygon. Returns which categories were
    hit.
    """
    planned_world = np.asarray(planned_world, dtype=float)
    if len(planned_world) > len(snapshot.agents_per_step):
        raise InvalidInputError("plan horizon exceeds the snapshot's agent coverage")
    headings = segment_headings(planned_world, fallback=initial_heading)
    hit_dynamic = False
    hit_static = False
    for k, point in enumerate(planned_world):
        heading = initial_heading if k == 0 else headings[k - 1]
        ego_poly = rect_corners(
            point[0], point[1], heading, snapshot.ego_length, snapshot.ego_width
        )
        if not hit_dynamic:
            for other in snapshot.agents_per_step[k]:
                if convex_overlap(ego_poly, other.corners()):
                    hit_dynamic = True
                    break
        if not hit_static:
            for poly in snapshot.static_obstacles:
                if convex_overlap(ego_poly, poly):
                    hit_static = True
                    break
        if hit_dynamic and hit_static:
            break
    if hit_dynamic and hit_static:
        return CollisionKind.BOTH
    if hit_dynamic:
        return CollisionKind.DYNAMIC
    if hit_static:
        return CollisionKind.STATIC
    return CollisionKind.NONE


def plan_to_world(plan: Trajectory, ego_pos, ego_heading: float) -> np.ndarray:
    """Transform an ego-frame plan into world coordinates."""
    return from_frame(plan.points, np.asarray(ego_pos, dtype=float), ego_heading)


@dataclass(frozen=True)
class OpenLoopSample:
    fde: float
    ade: float
    collision: CollisionKind


@dataclass(frozen=True)
class OpenLoopReport:
    """Aggregated open-loop metrics.

    cr counts plans that hit anything; dcr counts plans with any dynamic
    contact (pure or mixed), scr any static contact, and `both` the mixed
    bucket on its own, so dcr + scr can exceed cr.
    """

    fde: float
    ade: float
    cr: float
    dcr: float
    scr: float
    both: float
    sample_count: int

    def to_dict(self) -> dict:
        return {
            "fde_m": self.fde,
            "ade_m": self.ade,
            "cr": self.cr,
            "dcr": self.dcr,
            "scr": self.scr,
            "both": self.both,
            "samples": self.sample_count,
        }


def open_loop_report(samples) -> OpenLoopReport:
    samples = list(samples)
    if not samples:
        raise InvalidInputError("open-loop report needs at least one sample")
    n = len(samples)
    hits = [s.collision for s in samples]
    return OpenLoopReport(
        fde=float(np.mean([s.fde for s in samples])),
        ade=float(np.mean([s.ade for s in samples])),
        cr=sum(1 for h in hits if h is not CollisionKind.NONE) / n,
        dcr=sum(1 for h in hits if h in (CollisionKind.DYNAMIC, CollisionKind.BOTH)) / n,
        scr=sum(1 for h in hits if h in (CollisionKind.STATIC, CollisionKind.BOTH)) / n,
        both=sum(1 for h in hits if h is CollisionKind.BOTH) / n,
        sample_count=n,
    )


@dataclass(frozen=True)
class ClosedLoopReport:
    """Per-clip closed-loop metrics.

    Safety@k counts clips that had no collision and whose minimum rollout
    TTC strictly exceeds k seconds.
    """

    cr: float
    af_cr: float
    safety1: float
    safety2: float
    clip_count: int

    def to_dict(self) -> dict:
        return {
            "cr": self.cr,
            "af_cr": self.af_cr,
            "safety_at_1": self.safety1,
            "safety_at_2": self.safety2,
            "clips": self.clip_count,
        }


def closed_loop_report(logs) -> ClosedLoopReport:
    logs = list(logs)
    if not logs:
        raise InvalidInputError("closed-loop report needs at least one rollout log")
    n = len(logs)

    def safe_at(log: RolloutLog, k: float) -> bool:
        return (not log.any_collision) and log.min_ttc_overall > k

    return ClosedLoopReport(
        cr=sum(1 for log in logs if log.any_collision) / n,
        af_cr=sum(1 for log in logs if log.any_at_fault) / n,
        safety1=sum(1 for log in logs if safe_at(log, 1.0)) / n,
        safety2=sum(1 for log in logs if safe_at(log, 2.0)) / n,
        clip_count=n,
    )
