"""Decisions, the plan/decision consistency check, and F1 scoring.

A decision pairs a speed meta-action with a direction meta-action. The
direction comes in a fine 5-way vocabulary (turns and lane changes) used
for labels and reporting, and a coarse 3-way vocabulary used everywhere
geometry is involved; lane changes project onto plain left/right.

Consistency between a planned trajectory and a decision is the binary
indicator: both the speed class and the (coarse) direction class derived
from the trajectory must equal the decision's components.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from .errors import InvalidInputError, UndefinedRatioError
from .kinematics import DirectionCoarse, SpeedClass, Trajectory, kinematic_map


class DirectionFine(enum.Enum):
    GO_STRAIGHT = "go_straight"
    TURN_LEFT = "turn_left"
    TURN_RIGHT = "turn_right"
    CHANGE_LANE_LEFT = "change_lane_left"
    CHANGE_LANE_RIGHT = "change_lane_right"


#: Canonical orderings of the trainable decision vocabularies; these fix
#: the row order of policy heads and of serialized reports.
SPEED_ORDER = (
    SpeedClass.ACCELERATE,
    SpeedClass.DECELERATE,
    SpeedClass.KEEP,
    SpeedClass.STOP,
)
DIRECTION_ORDER = (
    DirectionCoarse.LEFT,
    DirectionCoarse.RIGHT,
    DirectionCoarse.STRAIGHT,
)
SPEED_INDEX = {c: i for i, c in enumerate(SPEED_ORDER)}
DIRECTION_INDEX = {c: i for i, c in enumerate(DIRECTION_ORDER)}

_FINE_TO_COARSE = {
    DirectionFine.GO_STRAIGHT: DirectionCoarse.STRAIGHT,
    DirectionFine.TURN_LEFT: DirectionCoarse.LEFT,
    DirectionFine.CHANGE_LANE_LEFT: DirectionCoarse.LEFT,
    DirectionFine.TURN_RIGHT: DirectionCoarse.RIGHT,
    DirectionFine.CHANGE_LANE_RIGHT: DirectionCoarse.RIGHT,
}


def project_fine_to_coarse(d: DirectionFine) -> DirectionCoarse:
    """Project a fine direction class onto {left, right, straight}."""
    return _FINE_TO_COARSE[d]


@dataclass(frozen=True)
class Decision:
    """A (speed, direction) meta-action pair. Speed is never UNKNOWN."""

    speed: SpeedClass
    direction: DirectionFine | DirectionCoarse

    def __post_init__(self):
        if self.speed is SpeedClass.UNKNOWN:
            raise InvalidInputError("a decision cannot carry an unknown speed class")
        if not isinstance(self.direction, (DirectionFine, DirectionCoarse)):
            raise InvalidInputError("direction must be a fine or coarse class")

    @property
    def is_fine(self) -> bool:
        return isinstance(self.direction, DirectionFine)

    def coarse(self) -> "Decision":
        """The same decision with the direction projected to coarse form."""
        if isinstance(self.direction, DirectionCoarse):
            return self
        return Decision(self.speed, project_fine_to_coarse(self.direction))


@dataclass(frozen=True)
class ConsistencyRecord:
    """Outcome of comparing a decision against a planned trajectory.

    `excluded` marks records whose planned trajectory has an UNKNOWN speed
    class; those never count as consistent and are dropped from scoring.
    """

    decision: Decision
    planned_speed: SpeedClass
    planned_direction: DirectionCoarse
    consistent_speed: bool
    consistent_direction: bool
    excluded: bool = False

    @property
    def consistent(self) -> bool:
        return self.consistent_speed and self.consistent_direction


def consistency(traj: Trajectory, d: Decision) -> ConsistencyRecord:
    """Binary consistency indicator between a plan and a decision.

    The trajectory is mapped to its meta-action pair and compared
    component-wise with the (coarsened) decision; the overall flag is the
    conjunction. An UNKNOWN planned speed yields an excluded record that is
    never consistent.
    """
    dc = d.coarse()
    planned_speed, planned_dir = kinematic_map(traj)
    if planned_speed is SpeedClass.UNKNOWN:
        return ConsistencyRecord(
            decision=dc,
            planned_speed=planned_speed,
            planned_direction=planned_dir,
            consistent_speed=False,
            consistent_direction=planned_dir is dc.direction,
            excluded=True,
        )
    return ConsistencyRecord(
        decision=dc,
        planned_speed=planned_speed,
        planned_direction=planned_dir,
        consistent_speed=planned_speed is dc.speed,
        consistent_direction=planned_dir is dc.direction,
    )


def _class_key(c) -> str:
    return c.value if isinstance(c, enum.Enum) else str(c)


def f1_report(pairs) -> dict[str, float]:
    """Per-class one-vs-rest F1 plus unweighted macro average.

    `pairs` is a sequence of (predicted, reference) labels from one class
    family. Classes absent from both columns are omitted; the "avg" entry
    is the unweighted mean of the reported per-class scores. Empty input
    yields an empty report.
    """
    pairs = [( _class_key(p), _class_key(r)) for p, r in pairs]
    if not pairs:
        return {}
    classes = sorted({p for p, _ in pairs} | {r for _, r in pairs})
    report: dict[str, float] = {}
    for c in classes:
        tp = sum(1 for p, r in pairs if p == c and r == c)
        fp = sum(1 for p, r in pairs if p == c and r != c)
        fn = sum(1 for p, r in pairs if p != c and r == c)
        report[c] = 2 * tp / (2 * tp + fp + fn)
    report["avg"] = sum(report.values()) / len(classes)
    return report


#: Serialization order of the seven-class consistency table.
TABLE_COLUMNS = ("straight", "left", "right", "keep", "accelerate", "decelerate", "stop")


def consistency_table(records) -> dict[str, float]:
    """Seven-class consistency F1 table (3 path + 4 speed classes + avg).

    Predictions are the decision components, references the classes derived
    from the planned trajectories. Excluded records are dropped. The "avg"
    is the unweighted mean over the per-class scores that are present.
    """
    kept = [r for r in records if not r.excluded]
    dir_pairs = [(r.decision.direction, r.planned_direction) for r in kept]
    spd_pairs = [(r.decision.speed, r.planned_speed) for r in kept]
    dir_f1 = f1_report(dir_pairs)
    spd_f1 = f1_report(spd_pairs)
    table: dict[str, float] = {}
    for col in TABLE_COLUMNS:
        if col in dir_f1:
            table[col] = dir_f1[col]
        elif col in spd_f1:
            table[col] = spd_f1[col]
    if table:
        table["avg"] = sum(table.values()) / len(table)
    return table


def relative_speed_ratio(traj: Trajectory) -> float:
    """Speed at the 3-second mark divided by the initial speed.

    The 3 s speed comes from the backward difference at the step index
    closest to 3.0 s; the initial speed from the first difference, falling
    back to the trajectory's t0_speed when the first step is degenerate.
    """
    if traj.horizon < 3.0 - 1e-9:
        raise InvalidInputError(
            f"relative speed ratio needs a >= 3 s horizon, got {traj.horizon:.2f} s"
        )
    idx = round(3.0 / traj.dt)
    pts = traj.points
    v3 = float(np.linalg.norm(pts[idx] - pts[idx - 1]) / traj.dt)
    v0 = float(np.linalg.norm(pts[1] - pts[0]) / traj.dt)
    if v0 < 1e-9:
        v0 = float(traj.t0_speed)
    if v0 <= 0.1:
        raise UndefinedRatioError(
            f"initial speed {v0:.3f} m/s is too small for a speed ratio"
        )
    if not math.isfinite(v3 / v0):
        raise UndefinedRatioError("speed ratio is not finite")
    return v3 / v0
