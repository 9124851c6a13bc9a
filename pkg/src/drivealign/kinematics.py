"""Trajectories and the kinematic rules mapping them to meta-action classes.

A trajectory is a sequence of 2D ego-frame positions at a fixed 0.1 s step
(x forward, y left). Classification looks only at the first 1.5 s (15
points): speeds are first differences of positions, accelerations first
differences of speeds, and both series are smoothed with a centered
length-5 average filter before any threshold is applied.

Speed classes are decided by threshold tests in a fixed order
(accelerate, decelerate, stop, keep speed); the acceleration thresholds for
keep-speed scale with a speed-banded factor. Direction classes compare the
maximum yaw variation and the lateral displacement envelope (both relative
to the initial pose) against a fixed yaw gate and a speed-banded lateral
gate.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from .errors import InvalidInputError

#: Number of leading points used by the classifiers (1.5 s at 0.1 s).
CLASSIFY_POINTS = 15
#: Smoothing window for speed/acceleration series.
SMOOTH_WINDOW = 5
#: Yaw gate for direction classification, radians.
YAW_GATE = math.pi / 36.0
#: Mean-speed bound below which a non-accelerating trajectory is a stop.
STOP_MEAN_SPEED = 0.5
#: Segments shorter than this inherit the previous heading, meters.
HEADING_EPS = 1e-6


class SpeedClass(enum.Enum):
    ACCELERATE = "accelerate"
    DECELERATE = "decelerate"
    KEEP = "keep"
    STOP = "stop"
    UNKNOWN = "unknown"


class DirectionCoarse(enum.Enum):
    LEFT = "left"
    RIGHT = "right"
    STRAIGHT = "straight"


@dataclass
class Trajectory:
    """Time-indexed 2D positions at a fixed step.

    points: (N, 2) array of ego-frame positions in meters, N >= 2.
    dt: time step in seconds (0.1 for every producer in this package).
    t0_speed: scalar speed at the first point, used where the first
        position difference is degenerate (e.g. a plan starting at rest).
    """

    points: np.ndarray
    dt: float = 0.1
    t0_speed: float = 0.0

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        if pts.ndim != 2 or pts.shape[1] != 2 or pts.shape[0] < 2:
            raise InvalidInputError("trajectory requires an (N, 2) array with N >= 2")
        if not np.all(np.isfinite(pts)):
            raise InvalidInputError("trajectory coordinates must be finite")
        if not (np.isfinite(self.dt) and self.dt > 0):
            raise InvalidInputError(f"dt must be positive, got {self.dt}")
        if not np.isfinite(self.t0_speed):
            raise InvalidInputError("t0_speed must be finite")
        pts = pts.copy()
        pts.setflags(write=False)
        self.points = pts

    def __len__(self) -> int:
        return len(self.points)

    @property
    def horizon(self) -> float:
        """Time spanned by the points, seconds."""
        return (len(self.points) - 1) * self.dt


@dataclass(frozen=True)
class ScalarSeries:
    """A unit-tagged scalar time series sampled at a fixed step."""

    values: np.ndarray
    unit: str
    dt: float

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        if vals.ndim != 1 or len(vals) == 0:
            raise InvalidInputError("series must be a nonempty 1-D array")
        if not np.all(np.isfinite(vals)):
            raise InvalidInputError("series values must be finite")
        vals = vals.copy()
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)

    def __len__(self) -> int:
        return len(self.values)


def speeds(traj: Trajectory) -> ScalarSeries:
    """Per-step speeds: ||p_t - p_{t-1}|| / dt for t >= 1. Length N - 1."""
    if len(traj) < 2:
        raise InvalidInputError("speeds need at least 2 points")
    steps = np.diff(traj.points, axis=0)
    return ScalarSeries(np.linalg.norm(steps, axis=1) / traj.dt, "m/s", traj.dt)


def accelerations(v: ScalarSeries) -> ScalarSeries:
    """Forward-difference accelerations of a speed series. Length len(v) - 1."""
    if len(v) < 2:
        raise InvalidInputError("accelerations need at least 2 speed samples")
    return ScalarSeries(np.diff(v.values) / v.dt, "m/s^2", v.dt)


def moving_average(s: ScalarSeries, w: int = SMOOTH_WINDOW) -> ScalarSeries:
    """Centered moving average, windows truncated at the boundaries.

    Keeps the series length; each output is the mean of the values inside
    the centered window that actually exist, so constants are fixed points
    and the output never leaves [min(s), max(s)].
    """
    if w < 1 or w % 2 == 0:
        raise InvalidInputError(f"window must be a positive odd integer, got {w}")
    x = s.values
    kernel = np.ones(w)
    sums = np.convolve(x, kernel, mode="same")
    counts = np.convolve(np.ones_like(x), kernel, mode="same")
    return ScalarSeries(sums / counts, s.unit, s.dt)


def longest_true_run(flags) -> int:
    """Length of the longest run of consecutive True values."""
    best = 0
    run = 0
    for f in flags:
        if f:
            run += 1
            if run > best:
                best = run
        else:
            run = 0
    return best


def rms(s: ScalarSeries, mode: str = "root") -> float:
    """Spread statistic of a series.

    mode="root" is the root-mean-square (default); mode="mean_square"
    returns the mean of squares without the root.
    """
    if mode not in ("root", "mean_square"):
        raise InvalidInputError(f"unknown rms mode {mode!r}")
    ms = float(np.mean(s.values**2))
    return math.sqrt(ms) if mode == "root" else ms


def accel_scale(mean_speed: float) -> float:
    """Speed-banded scale factor for the keep-speed acceleration gates."""
    if mean_speed > 25:
        return 2.5
    if mean_speed > 20:
        return 2.0
    if mean_speed > 10:
        return 1.5
    if mean_speed > 5:
        return 1.25
    return 1.0


def lateral_gate(mean_speed: float) -> float:
    """Speed-banded lateral displacement gate for direction classification."""
    if mean_speed > 15:
        return 3.0
    if mean_speed > 10:
        return 2.4
    if mean_speed > 5:
        return 1.5
    if mean_speed > 3:
        return 0.9
    return 0.45


def _classify_window(traj: Trajectory) -> np.ndarray:
    if len(traj) < CLASSIFY_POINTS:
        raise InvalidInputError(
            f"classification needs >= {CLASSIFY_POINTS} points, got {len(traj)}"
        )
    return traj.points[:CLASSIFY_POINTS]


def classify_speed(traj: Trajectory, rms_mode: str = "root") -> SpeedClass:
    """Classify the first 1.5 s of a trajectory into a speed meta-action.

    Tests, in order, on the smoothed acceleration series a and smoothed
    speed series v (window 5):

    accelerate: a[0] > 0, longest run of a > 0.3 lasts >= 8 steps,
                max(a) > 0.6, rms(a) > 0.4
    decelerate: mirrored with negated thresholds
    stop:       mean(v) < 0.5
    keep speed: |mean(a)| < 0.3*s and max(|a|) < 0.6*s, with s the
                speed-banded scale at mean(v)
    otherwise:  UNKNOWN (never a usable training label)
    """
    pts = _classify_window(traj)
    window = Trajectory(pts, dt=traj.dt, t0_speed=traj.t0_speed)
    v_raw = speeds(window)
    a_raw = accelerations(v_raw)
    v = moving_average(v_raw).values
    a = moving_average(a_raw).values
    a_series = ScalarSeries(a, "m/s^2", traj.dt)

    if (
        a[0] > 0
        and longest_true_run(a > 0.3) >= 8
        and a.max() > 0.6
        and rms(a_series, rms_mode) > 0.4
    ):
        return SpeedClass.ACCELERATE
    if (
        a[0] < 0
        and longest_true_run(a < -0.3) >= 8
        and a.min() < -0.6
        and rms(a_series, rms_mode) > 0.4
    ):
        return SpeedClass.DECELERATE

    v_bar = float(v.mean())
    a_bar = float(a.mean())
    if v_bar < STOP_MEAN_SPEED:
        return SpeedClass.STOP
    s = accel_scale(v_bar)
    if abs(a_bar) < 0.3 * s and np.abs(a).max() < 0.6 * s:
        return SpeedClass.KEEP
    return SpeedClass.UNKNOWN


def segment_headings(points: np.ndarray, fallback: float = 0.0) -> np.ndarray:
    """Heading of each segment p_t - p_{t-1}; degenerate segments inherit.

    Returns one heading per segment (len(points) - 1). A segment shorter
    than HEADING_EPS takes the previous segment's heading; a degenerate
    first segment takes `fallback` (+x by default).
    """
    steps = np.diff(points, axis=0)
    headings = np.empty(len(steps))
    prev = fallback
    for i, (dx, dy) in enumerate(steps):
        if math.hypot(dx, dy) >= HEADING_EPS:
            prev = math.atan2(dy, dx)
        headings[i] = prev
    return headings


def wrap_angle(a):
    """Wrap angles to (-pi, pi]."""
    return np.arctan2(np.sin(a), np.cos(a))


def classify_direction(traj: Trajectory) -> DirectionCoarse:
    """Classify the first 1.5 s into left / right / straight.

    Uses the mean speed, the signed lateral displacement envelope in the
    frame of the initial pose (left positive), and the maximum absolute
    heading change relative to the initial heading. Left requires both the
    yaw gate (pi/36) and a positive lateral excursion beyond the
    speed-banded gate; right is the mirrored test; everything else is
    straight.
    """
    pts = _classify_window(traj)
    v_raw = np.linalg.norm(np.diff(pts, axis=0), axis=1) / traj.dt
    v_bar = float(v_raw.mean())

    headings = segment_headings(pts)
    h0 = headings[0]
    dpsi_max = float(np.abs(wrap_angle(headings - h0)).max())

    rel = pts - pts[0]
    lateral = -math.sin(h0) * rel[:, 0] + math.cos(h0) * rel[:, 1]
    dy_max = float(lateral.max())
    dy_min = float(lateral.min())

    s_y = lateral_gate(v_bar)
    if dpsi_max > YAW_GATE and dy_max > s_y:
        return DirectionCoarse.LEFT
    if dpsi_max > YAW_GATE and dy_min < -s_y:
        return DirectionCoarse.RIGHT
    return DirectionCoarse.STRAIGHT


def kinematic_map(traj: Trajectory) -> tuple[SpeedClass, DirectionCoarse]:
    """Map a trajectory to its (speed, direction) meta-action pair."""
    return classify_speed(traj), classify_direction(traj)
