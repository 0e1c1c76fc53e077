"""Route classification, kinematic thresholds and critical-timestamp selection."""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .errors import EmptyImuStream
from .trace import SensorTrace

# standard kinematic baselines: deg/s, m/s^2, deg/s
BASELINE_ANGULAR_VELOCITY = 10.0
BASELINE_LINEAR_ACCEL = 8.0
BASELINE_YAW_RATE = 10.0

HIGH_SPEED_CUTOFF = 6.0  # m/s
DEFAULT_REFRACTORY = 0.5  # s


class RouteCategory(str, Enum):
    R1 = "r1"  # high speed, low complexity
    R2 = "r2"  # medium speed, medium complexity
    R3 = "r3"  # variable speed, high complexity


CATEGORY_SCALE = {RouteCategory.R1: 1.0, RouteCategory.R2: 0.8, RouteCategory.R3: 0.6}


class Factor(str, Enum):
    TURNING = "Turning"
    ACCEL_BRAKE = "AccelBrake"
    ORIENTATION_CHANGE = "OrientationChange"


# On an exact tie the more specific signal names the event: yaw rate is one
# component of the angular-velocity vector, so a pure yaw motion ties the two.
_TIE_PRIORITY = (Factor.ORIENTATION_CHANGE, Factor.ACCEL_BRAKE, Factor.TURNING)
_TIE_RTOL = 1e-12


@dataclass(frozen=True)
class ThresholdSet:
    angular_velocity_max: float
    linear_accel_max: float
    yaw_rate_max: float

    def problems(self) -> list[str]:
        out = []
        for name in ("angular_velocity_max", "linear_accel_max", "yaw_rate_max"):
            v = getattr(self, name)
            if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v) or v <= 0:
                out.append(f"{name} must be finite and > 0, got {v!r}")
        return out


BASELINE_THRESHOLDS = ThresholdSet(BASELINE_ANGULAR_VELOCITY, BASELINE_LINEAR_ACCEL, BASELINE_YAW_RATE)


@dataclass(frozen=True)
class RoutePlan:
    """Output of the filtration agent: route category plus its thresholds."""

    category: RouteCategory
    thresholds: ThresholdSet


@dataclass(frozen=True)
class CriticalEvent:
    t: float
    factor: Factor
    exceedance: float


def classify_route(avg_speed: float, complexity: int) -> RouteCategory:
    if avg_speed < 0:
        raise ValueError("avg_speed must be >= 0")
    if complexity >= 2:
        return RouteCategory.R3
    if complexity == 1:
        return RouteCategory.R2
    return RouteCategory.R1 if avg_speed >= HIGH_SPEED_CUTOFF else RouteCategory.R2


def derive_thresholds(avg_speed: float, complexity: int, category: RouteCategory) -> ThresholdSet:
    # speed and complexity only act through the category
    k = CATEGORY_SCALE[RouteCategory(category)]
    return ThresholdSet(
        BASELINE_ANGULAR_VELOCITY * k,
        BASELINE_LINEAR_ACCEL * k,
        BASELINE_YAW_RATE * k,
    )


def plan_route(avg_speed: float, complexity: int) -> RoutePlan:
    category = classify_route(avg_speed, complexity)
    return RoutePlan(category, derive_thresholds(avg_speed, complexity, category))


def exceedance_ratios(trace: SensorTrace, thresholds: ThresholdSet) -> tuple[np.ndarray, np.ndarray]:
    """Return IMU times and an (n, 3) array of signal/threshold ratios.

    Columns follow ``Factor`` order: angular-velocity magnitude, horizontal
    linear-acceleration magnitude, absolute yaw rate.
    """
    if not trace.imu:
        raise EmptyImuStream()
    t = np.fromiter((s.t for s in trace.imu), dtype=float, count=len(trace.imu))
    w = np.array([s.angular_velocity for s in trace.imu], dtype=float)
    a = np.array([s.linear_acceleration for s in trace.imu], dtype=float)
    yaw = np.fromiter((s.yaw_rate for s in trace.imu), dtype=float, count=len(trace.imu))
    ratios = np.column_stack(
        [
            np.linalg.norm(w, axis=1) / thresholds.angular_velocity_max,
            np.hypot(a[:, 0], a[:, 1]) / thresholds.linear_accel_max,
            np.abs(yaw) / thresholds.yaw_rate_max,
        ]
    )
    return t, ratios


def dominant_factor(ratios: np.ndarray) -> tuple[Factor, float]:
    """Factor with the largest ratio; near-exact ties resolved by specificity."""
    order = list(Factor)
    best = float(np.max(ratios))
    for factor in _TIE_PRIORITY:
        r = float(ratios[order.index(factor)])
        if r >= best * (1 - _TIE_RTOL):
            return factor, best
    raise AssertionError("unreachable")


def select_critical_timestamps(
    trace: SensorTrace, thresholds: ThresholdSet, refractory: float = DEFAULT_REFRACTORY
) -> list[CriticalEvent]:
    """Select IMU sample times whose strongest signal reaches its threshold.

    Exceeding samples closer than ``refractory`` seconds to their predecessor
    are merged into one cluster, represented by its largest exceedance
    (earliest time on ties).
    """
    if refractory < 0:
        raise ValueError("refractory must be >= 0")
    t, ratios = exceedance_ratios(trace, thresholds)
    peak = ratios.max(axis=1)
    hits = np.flatnonzero(peak >= 1.0)
    if hits.size == 0:
        return []

    events = []
    start = 0
    for k in range(1, hits.size + 1):
        if k < hits.size and t[hits[k]] - t[hits[k - 1]] <= refractory:
            continue
        cluster = hits[start:k]
        # argmax returns the first maximum, i.e. the earliest on ties
        idx = int(cluster[np.argmax(peak[cluster])])
        factor, exceedance = dominant_factor(ratios[idx])
        events.append(CriticalEvent(float(t[idx]), factor, exceedance))
        start = k
    return events
