"""Training objectives with analytic gradients.

Every loss returns a LossValue carrying the scalar and a dict of gradients
keyed by the differentiated object ("planned"/"points" for trajectory
coordinates, "speed_logits"/"direction_logits" for the decision head). All
gradients are exact derivatives of the returned value, so central finite
differences reproduce them.

The two longitudinal penalties share one algebraic form, a sum of squared
distances between consecutive plan points over gated steps, and differ only
in which operand is frozen by the stop-gradient: the safety penalty
differentiates the later point of each pair (a descent step contracts the
trajectory), the efficiency penalty the earlier point (a descent step
extends the motion covered early in the plan).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .consistency import DIRECTION_INDEX, SPEED_INDEX, Decision, consistency
from .errors import InvalidInputError
from .kinematics import SpeedClass, Trajectory, kinematic_map

#: Probabilities are floored at this value inside logs; in the clamped
#: regime the loss is constant, so its gradient is exactly zero.
PROB_FLOOR = 1e-2


@dataclass
class LossValue:
    """A nonnegative scalar plus its gradients.

    grads maps object names to arrays of partial derivatives matching the
    differentiated object's shape. flags carries bookkeeping such as
    "clamped" (probability floor hit) or "skipped" (sample excluded).
    """

    value: float
    grads: dict[str, np.ndarray] = field(default_factory=dict)
    flags: dict[str, bool] = field(default_factory=dict)

    def __post_init__(self):
        if not math.isfinite(self.value):
            raise InvalidInputError("loss value must be finite")
        for name, g in self.grads.items():
            if not np.all(np.isfinite(g)):
                raise InvalidInputError(f"gradient {name!r} must be finite")


@dataclass(frozen=True)
class DecisionDistribution:
    """Categorical output of a decision head: probabilities plus the logits
    that produced them (softmax at the stated temperature)."""

    speed_probs: np.ndarray
    direction_probs: np.ndarray
    speed_logits: np.ndarray
    direction_logits: np.ndarray
    temperature: float = 1.0


@dataclass(frozen=True)
class PenaltyGates:
    """Per-step penalty activation flags for one planned trajectory.

    Both flag arrays align with the plan's steps (one flag per consecutive
    point pair, length N - 1). ttc_threshold / speed_threshold record the
    gating thresholds that produced the flags.
    """

    safety: np.ndarray
    efficiency: np.ndarray
    ttc_threshold: float = 3.0
    speed_threshold: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "safety", np.asarray(self.safety, dtype=bool))
        object.__setattr__(self, "efficiency", np.asarray(self.efficiency, dtype=bool))
        if self.ttc_threshold <= 0 or self.speed_threshold < 0:
            raise InvalidInputError("penalty thresholds must be positive")

    @classmethod
    def uniform(cls, n_steps: int, safety: bool, efficiency: bool, **kw) -> "PenaltyGates":
        return cls(np.full(n_steps, safety), np.full(n_steps, efficiency), **kw)


def imitation_loss(planned: Trajectory, expert: Trajectory) -> LossValue:
    """Mean squared pointwise error between planned and expert residuals.

    Both residuals are taken against the same constant-velocity reference,
    which cancels, leaving the mean over points of the squared Euclidean
    distance between planned and expert positions. Gradient w.r.t. the
    planned points is 2 * (planned - expert) / N.
    """
    if len(planned) != len(expert):
        raise InvalidInputError(
            f"length mismatch: planned {len(planned)} vs expert {len(expert)}"
        )
    if abs(planned.dt - expert.dt) > 1e-12:
        raise InvalidInputError("planned and expert trajectories must share dt")
    diff = planned.points - expert.points
    n = len(planned)
    value = float(np.mean(np.sum(diff**2, axis=1)))
    return LossValue(value, {"planned": 2.0 * diff / n})


def _component_nll(probs: np.ndarray, idx: int, temperature: float):
    p = float(probs[idx])
    if p < PROB_FLOOR:
        # Clamped regime: the loss is the constant -log(floor), gradient 0.
        return -math.log(PROB_FLOOR), np.zeros_like(probs), True
    grad = probs.copy()
    grad[idx] -= 1.0
    return -math.log(p), grad / temperature, False


def decision_nll(dist: DecisionDistribution, label: Decision) -> LossValue:
    """Negative log-likelihood of a decision under a categorical head.

    Sums the speed and direction terms. Probabilities are floored at
    PROB_FLOOR inside the logs (flagged "clamped" when the floor is hit);
    gradients are w.r.t. the logits through the softmax at the stored
    temperature.
    """
    lc = label.coarse()
    for name, probs in (("speed", dist.speed_probs), ("direction", dist.direction_probs)):
        if np.any(probs <= 0) or abs(float(probs.sum()) - 1.0) > 1e-9:
            raise InvalidInputError(f"{name} probabilities must be positive and normalized")
    sv, sg, s_clamped = _component_nll(
        dist.speed_probs, SPEED_INDEX[lc.speed], dist.temperature
    )
    dv, dg, d_clamped = _component_nll(
        dist.direction_probs, DIRECTION_INDEX[lc.direction], dist.temperature
    )
    flags = {"clamped": True} if (s_clamped or d_clamped) else {}
    return LossValue(sv + dv, {"speed_logits": sg, "direction_logits": dg}, flags)


def _scaled_sum(terms) -> dict[str, np.ndarray]:
    out: dict[str, np.ndarray] = {}
    for scale, grads in terms:
        if scale == 0.0:
            continue
        for name, g in grads.items():
            if name in out:
                out[name] = out[name] + scale * g
            else:
                out[name] = scale * g
    return out


def stage2_loss(
    traj: Trajectory,
    d: Decision,
    e2e_term: LossValue,
    vlm_term: LossValue,
    gamma: float = 1.0,
) -> LossValue:
    """Consistency-gated open-loop alignment loss.

    (1 - C(traj, d)) * (e2e + gamma * vlm): consistent samples contribute
    exactly zero value and gradient; samples whose plan has an unknown
    speed class are skipped (flagged) and also contribute nothing.
    """
    record = consistency(traj, d)
    if record.excluded:
        return LossValue(0.0, {}, {"skipped": True})
    if record.consistent:
        return LossValue(0.0, {})
    value = e2e_term.value + gamma * vlm_term.value
    grads = _scaled_sum([(1.0, e2e_term.grads), (gamma, vlm_term.grads)])
    return LossValue(value, grads)


def _gated_segments(traj: Trajectory, flags: np.ndarray):
    pts = traj.points
    if len(flags) != len(pts) - 1:
        raise InvalidInputError(
            f"gate length {len(flags)} does not match {len(pts) - 1} steps"
        )
    return pts, pts[1:] - pts[:-1]


def safety_penalty(traj: Trajectory, gates: PenaltyGates) -> LossValue:
    """Longitudinal contraction penalty over safety-gated steps.

    sum over gated t of ||p_{t+1} - sg(p_t)||^2. Gradient flows only into
    the later point of each pair; a descent step pulls later points toward
    earlier ones, shortening the trajectory.
    """
    pts, diffs = _gated_segments(traj, gates.safety)
    active = gates.safety
    value = float(np.sum(diffs[active] ** 2))
    grad = np.zeros_like(pts)
    grad[1:][active] += 2.0 * diffs[active]
    return LossValue(value, {"points": grad})


def efficiency_penalty(traj: Trajectory, gates: PenaltyGates) -> LossValue:
    """Longitudinal extension penalty over efficiency-gated steps.

    sum over gated t of ||p_t - sg(p_{t+1})||^2. Gradient flows only into
    the earlier point of each pair; a descent step advances earlier points
    toward later ones, extending the motion covered per unit time.
    """
    pts, diffs = _gated_segments(traj, gates.efficiency)
    active = gates.efficiency
    value = float(np.sum(diffs[active] ** 2))
    grad = np.zeros_like(pts)
    grad[:-1][active] += -2.0 * diffs[active]
    return LossValue(value, {"points": grad})


def low_level_loss(traj: Trajectory, gates: PenaltyGates) -> LossValue:
    """Sum of the safety and efficiency penalties with merged gradients."""
    safe = safety_penalty(traj, gates)
    eff = efficiency_penalty(traj, gates)
    return LossValue(
        safe.value + eff.value,
        _scaled_sum([(1.0, safe.grads), (1.0, eff.grads)]),
    )


def high_level_loss(
    dist: DecisionDistribution, traj: Trajectory, decision: Decision
) -> LossValue:
    """Decision-head alignment toward the class implied by a refined plan.

    The target is the trajectory's meta-action pair. When the (coarsened)
    policy decision already equals the target the loss is zero; when the
    trajectory's speed class is unknown the sample is skipped (flagged).
    Otherwise this is the decision NLL against the target.
    """
    speed_cls, dir_cls = kinematic_map(traj)
    if speed_cls is SpeedClass.UNKNOWN:
        return LossValue(0.0, {}, {"skipped": True})
    target = Decision(speed_cls, dir_cls)
    dc = decision.coarse()
    if dc.speed is target.speed and dc.direction is target.direction:
        return LossValue(0.0, {})
    return decision_nll(dist, target)


def stage3_loss(high: LossValue, low: LossValue, beta: float = 1.0) -> LossValue:
    """Closed-loop alignment loss: high + beta * low, gradients merged."""
    return LossValue(
        high.value + beta * low.value,
        _scaled_sum([(1.0, high.grads), (beta, low.grads)]),
        dict(high.flags),
    )
