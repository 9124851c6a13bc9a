"""Toy decision policy and decision-conditioned residual planner.

The decision policy is a pair of linear heads (speed, coarse direction)
over a fixed scene-feature basis with a softmax at a configurable
temperature. The planner keeps a residual bank indexed by (navigation
command, speed decision, direction decision); a plan is the straight
constant-velocity extrapolation of the current ego speed plus the bank
entry applied to the 30 future points, the first point pinned at the
origin. Both have closed-form gradients and train with plain full-batch
gradient descent for exact reproducibility.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .consistency import (
    DIRECTION_INDEX,
    DIRECTION_ORDER,
    SPEED_INDEX,
    SPEED_ORDER,
    Decision,
)
from .errors import ConfigurationError, InvalidInputError
from .kinematics import SpeedClass, Trajectory, kinematic_map
from .losses import DecisionDistribution, decision_nll

NAV_COMMANDS = ("straight", "left", "right")

#: Feature basis: bias plus the raw scene features (scaled for optimizer
#: conditioning; the lead-gap infinity sentinel is capped before encoding).
FEATURE_NAMES = (
    "bias",
    "ego_speed",
    "lead_gap",
    "lead_closing_speed",
    "left_lane_free",
    "right_lane_free",
    "nav_straight",
    "nav_left",
    "nav_right",
    "speed_limit",
)
LEAD_GAP_CAP = 60.0
N_FEATURES = len(FEATURE_NAMES)

PLAN_STEPS = 30
PLAN_DT = 0.1


@dataclass(frozen=True)
class SceneFeatures:
    """Compact world-state summary fed to the decision policy."""

    ego_speed: float
    lead_gap: float = math.inf
    lead_closing_speed: float = 0.0
    left_lane_free: bool = True
    right_lane_free: bool = True
    navigation_command: str = "straight"
    speed_limit: float = 15.0

    def __post_init__(self):
        if self.navigation_command not in NAV_COMMANDS:
            raise InvalidInputError(
                f"navigation command must be one of {NAV_COMMANDS}, "
                f"got {self.navigation_command!r}"
            )
        for name in ("ego_speed", "speed_limit"):
            val = getattr(self, name)
            if not (math.isfinite(val) and val >= 0):
                raise InvalidInputError(f"{name} must be finite and nonnegative")
        if math.isnan(self.lead_gap) or self.lead_gap < 0:
            raise InvalidInputError("lead_gap must be nonnegative (inf for no lead)")
        if not math.isfinite(self.lead_closing_speed):
            raise InvalidInputError("lead_closing_speed must be finite")


def feature_vector(f: SceneFeatures) -> np.ndarray:
    gap = min(f.lead_gap, LEAD_GAP_CAP)
    nav = [float(f.navigation_command == c) for c in NAV_COMMANDS]
    return np.array(
        [
            1.0,
            f.ego_speed / 10.0,
            gap / 10.0,
            f.lead_closing_speed / 5.0,
            float(f.left_lane_free),
            float(f.right_lane_free),
            *nav,
            f.speed_limit / 10.0,
        ]
    )


def _softmax(logits: np.ndarray, temperature: float) -> np.ndarray:
    z = logits / temperature
    z = z - z.max()
    e = np.exp(z)
    return e / e.sum()


def _argmax_lexicographic(probs: np.ndarray, order) -> int:
    best = probs.max()
    tied = [i for i, p in enumerate(probs) if p == best]
    return min(tied, key=lambda i: order[i].value)


@dataclass
class DecisionPolicy:
    """Linear-softmax decision heads over the scene-feature basis."""

    speed_weights: np.ndarray
    direction_weights: np.ndarray
    temperature: float = 1.0

    def __post_init__(self):
        self.speed_weights = np.asarray(self.speed_weights, dtype=float)
        self.direction_weights = np.asarray(self.direction_weights, dtype=float)
        if self.speed_weights.shape != (len(SPEED_ORDER), N_FEATURES):
            raise ConfigurationError("speed head must be (4, F)")
        if self.direction_weights.shape != (len(DIRECTION_ORDER), N_FEATURES):
            raise ConfigurationError("direction head must be (3, F)")
        if not (
            np.all(np.isfinite(self.speed_weights))
            and np.all(np.isfinite(self.direction_weights))
            and math.isfinite(self.temperature)
            and self.temperature > 0
        ):
            raise ConfigurationError("policy parameters must be finite, temperature > 0")

    @classmethod
    def zeros(cls, temperature: float = 1.0) -> "DecisionPolicy":
        return cls(
            np.zeros((len(SPEED_ORDER), N_FEATURES)),
            np.zeros((len(DIRECTION_ORDER), N_FEATURES)),
            temperature,
        )

    def copy(self) -> "DecisionPolicy":
        return DecisionPolicy(
            self.speed_weights.copy(), self.direction_weights.copy(), self.temperature
        )

    def distribution(self, f: SceneFeatures) -> DecisionDistribution:
        x = feature_vector(f)
        if not np.all(np.isfinite(x)):
            raise InvalidInputError("scene features encode to non-finite values")
        sz = self.speed_weights @ x
        dz = self.direction_weights @ x
        return DecisionDistribution(
            speed_probs=_softmax(sz, self.temperature),
            direction_probs=_softmax(dz, self.temperature),
            speed_logits=sz,
            direction_logits=dz,
            temperature=self.temperature,
        )

    def decide(
        self, f: SceneFeatures, mode: str = "argmax", rng: np.random.Generator | None = None
    ) -> tuple[Decision, DecisionDistribution]:
        """Pick a decision. argmax ties break to the lexicographically first
        class name; sampling requires a seeded generator and is reproducible."""
        dist = self.distribution(f)
        if mode == "argmax":
            si = _argmax_lexicographic(dist.speed_probs, SPEED_ORDER)
            di = _argmax_lexicographic(dist.direction_probs, DIRECTION_ORDER)
        elif mode == "sample":
            if rng is None:
                raise InvalidInputError("sampling mode needs a random generator")
            si = int(rng.choice(len(SPEED_ORDER), p=dist.speed_probs))
            di = int(rng.choice(len(DIRECTION_ORDER), p=dist.direction_probs))
        else:
            raise InvalidInputError(f"unknown decision mode {mode!r}")
        return Decision(SPEED_ORDER[si], DIRECTION_ORDER[di]), dist


def bank_keys():
    """All (navigation, speed, direction) condition combinations."""
    return [
        (nav, s.value, d.value)
        for nav in NAV_COMMANDS
        for s in SPEED_ORDER
        for d in DIRECTION_ORDER
    ]


@dataclass
class ResidualPlanner:
    """Residual bank over decision conditions plus a constant-velocity
    reference. The bank holds one (PLAN_STEPS, 2) offset array per
    (navigation, speed, direction) combination."""

    bank: dict[tuple[str, str, str], np.ndarray]
    dt: float = PLAN_DT
    horizon_steps: int = PLAN_STEPS

    def __post_init__(self):
        for key in bank_keys():
            if key not in self.bank:
                raise ConfigurationError(f"residual bank is missing entry {key}")
            entry = np.asarray(self.bank[key], dtype=float)
            if entry.shape != (self.horizon_steps, 2) or not np.all(np.isfinite(entry)):
                raise ConfigurationError(f"bank entry {key} must be a finite (H, 2) array")
            self.bank[key] = entry

    @classmethod
    def zeros(cls) -> "ResidualPlanner":
        return cls({key: np.zeros((PLAN_STEPS, 2)) for key in bank_keys()})

    def copy(self) -> "ResidualPlanner":
        return ResidualPlanner(
            {k: v.copy() for k, v in self.bank.items()}, self.dt, self.horizon_steps
        )

    def key_for(self, f: SceneFeatures, d: Decision) -> tuple[str, str, str]:
        dc = d.coarse()
        return (f.navigation_command, dc.speed.value, dc.direction.value)

    def reference(self, ego_speed: float) -> np.ndarray:
        """Straight constant-velocity extrapolation, origin included."""
        k = np.arange(self.horizon_steps + 1)
        ref = np.zeros((self.horizon_steps + 1, 2))
        ref[:, 0] = ego_speed * self.dt * k
        return ref

    def plan(self, f: SceneFeatures, d: Decision) -> Trajectory:
        """Reference plus the conditioned residual; first point at origin."""
        key = self.key_for(f, d)
        if key not in self.bank:
            raise ConfigurationError(f"residual bank is missing entry {key}")
        pts = self.reference(f.ego_speed)
        pts[1:] += self.bank[key]
        return Trajectory(pts, dt=self.dt, t0_speed=f.ego_speed)


@dataclass(frozen=True)
class TrainingSample:
    """One open-loop supervision pair: scene features and the expert's
    ego-frame trajectory over the planning horizon."""

    features: SceneFeatures
    expert: Trajectory
    scenario_id: str = ""
    frame: int = 0


@dataclass
class Stage1Result:
    policy: DecisionPolicy
    planner: ResidualPlanner
    trace: list[dict] = field(default_factory=list)
    dropped: int = 0


def expert_label(sample: TrainingSample) -> Decision | None:
    """Meta-action label of the expert trajectory; None when unknown."""
    speed_cls, dir_cls = kinematic_map(sample.expert)
    if speed_cls is SpeedClass.UNKNOWN:
        return None
    return Decision(speed_cls, dir_cls)


def nll_weight_grads(policy: DecisionPolicy, f: SceneFeatures, label: Decision):
    """Decision NLL and its gradients w.r.t. the policy weight matrices."""
    dist = policy.distribution(f)
    loss = decision_nll(dist, label)
    x = feature_vector(f)
    g_speed = np.outer(loss.grads["speed_logits"], x)
    g_dir = np.outer(loss.grads["direction_logits"], x)
    return loss.value, g_speed, g_dir


def _mean_nll_step(policy, samples, labels, lr):
    gs = np.zeros_like(policy.speed_weights)
    gd = np.zeros_like(policy.direction_weights)
    total = 0.0
    for sample, label in zip(samples, labels):
        val, g1, g2 = nll_weight_grads(policy, sample.features, label)
        total += val
        gs += g1
        gd += g2
    n = len(samples)
    policy.speed_weights -= lr * gs / n
    policy.direction_weights -= lr * gd / n
    return total / n


def fit_stage1(
    planner: ResidualPlanner,
    policy: DecisionPolicy,
    dataset,
    steps: int = 300,
    lr_policy: float = 0.5,
    lr_planner: float = 8.0,
) -> Stage1Result:
    """Driving pre-training on expert pairs.

    Labels come from the kinematic map of each expert trajectory; samples
    with an unknown speed class are dropped and counted. The decision
    policy minimizes the mean decision NLL by gradient descent; each
    residual bank entry minimizes the mean imitation loss of the samples
    carrying its condition (a convex quadratic whose optimum is the mean
    expert residual).
    """
    if not dataset:
        raise InvalidInputError("stage-1 fitting needs a nonempty dataset")
    policy = policy.copy()
    planner = planner.copy()

    labeled = []
    dropped = 0
    for sample in dataset:
        label = expert_label(sample)
        if label is None:
            dropped += 1
            continue
        labeled.append((sample, label))
    if not labeled:
        raise InvalidInputError("every sample in the dataset has an unknown speed class")
    samples = [s for s, _ in labeled]
    labels = [l for _, l in labeled]

    # Per-condition mean expert residual: the imitation-loss optimum. The
    # spread of the per-sample residuals around it is a constant loss floor.
    residual_targets: dict[tuple, list[np.ndarray]] = {}
    for sample, label in labeled:
        key = planner.key_for(sample.features, label)
        ref = planner.reference(sample.features.ego_speed)
        residual_targets.setdefault(key, []).append(sample.expert.points - ref)
    n_points = planner.horizon_steps + 1
    target_mean = {}
    loss_floor = {}
    for key, residuals in residual_targets.items():
        mean = np.mean(residuals, axis=0)
        target_mean[key] = mean
        loss_floor[key] = float(
            np.mean([np.mean(np.sum((r - mean) ** 2, axis=1)) for r in residuals])
        )

    trace = []
    for step in range(steps):
        nll = _mean_nll_step(policy, samples, labels, lr_policy)
        mse = 0.0
        for key, target in sorted(target_mean.items()):
            entry = planner.bank[key]
            gap = entry - target[1:]
            per_key = float(np.sum(gap**2)) / n_points + loss_floor[key]
            mse += per_key * len(residual_targets[key])
            planner.bank[key] = entry - lr_planner * 2.0 * gap / n_points
        trace.append(
            {"step": step, "decision_nll": nll, "imitation_mse": mse / len(labeled)}
        )
    return Stage1Result(policy=policy, planner=planner, trace=trace, dropped=dropped)
