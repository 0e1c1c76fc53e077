"""Per-object motion descriptions and LiDAR/camera cross-checks.

Vision and LiDAR descriptors summarise how each object moved between two
consecutive frames.  The analyzer gates LiDAR objects by range, measures
the Euclidean gap between each object's LiDAR and camera positions, and
turns the result into sensor-health flags.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Mapping, Sequence

from .errors import TimestampMismatch
from .trace import (
    CORRESPONDENCE_GATE,
    ObjectDetection,
    SensorFrame,
    Vec3,
    correspond,
    norm,
    sub,
    unique_camera_detections,
)

log = logging.getLogger(__name__)

DEFAULT_RANGE_LIMIT = 100.0
DEFAULT_TAU_OBJ = 2.0
DEFAULT_MAJORITY = 0.5
DEFAULT_EXPECTED_MIN_OBJECTS = 1

ZERO: Vec3 = (0.0, 0.0, 0.0)


class MotionStatus(str, Enum):
    TRACKED = "tracked"
    APPEARED = "appeared"
    DISAPPEARED = "disappeared"


class DescriptionSource(str, Enum):
    VISION = "vision"
    LIDAR = "lidar"


class DiagnosisFlag(str, Enum):
    OK = "ok"
    LIDAR_FAULT = "lidar_fault"
    CAMERA_FAULT = "camera_fault"
    SENSOR_MISALIGNMENT = "sensor_misalignment"


@dataclass(frozen=True)
class ObjectMotion:
    object_id: int
    position_before: Vec3 | None
    position_after: Vec3 | None
    displacement: Vec3
    status: MotionStatus

    def problems(self) -> list[str]:
        status = MotionStatus(self.status)
        if status is MotionStatus.TRACKED:
            if self.position_before is None or self.position_after is None:
                return [f"object {self.object_id}: tracked motion needs both positions"]
            if tuple(self.displacement) != sub(self.position_after, self.position_before):
                return [f"object {self.object_id}: displacement != after - before"]
        elif status is MotionStatus.APPEARED and (self.position_after is None or self.position_before is not None):
            return [f"object {self.object_id}: appeared motion has only an after position"]
        elif status is MotionStatus.DISAPPEARED and (self.position_before is None or self.position_after is not None):
            return [f"object {self.object_id}: disappeared motion has only a before position"]
        return []


@dataclass(frozen=True)
class MotionDescription:
    t: float
    t_next: float
    source: DescriptionSource
    motions: tuple[ObjectMotion, ...]
    mean_displacement: Vec3

    def positions_at_t(self) -> dict[int, Vec3]:
        return {m.object_id: m.position_before for m in self.motions if m.position_before is not None}

    def problems(self) -> list[str]:
        out = []
        if not self.t < self.t_next:
            out.append(f"t={self.t} must precede t_next={self.t_next}")
        for m in self.motions:
            out += m.problems()
        expected = mean_of(m.displacement for m in self.motions if m.status == MotionStatus.TRACKED)
        if any(abs(a - b) > 1e-9 for a, b in zip(expected, self.mean_displacement)):
            out.append(f"mean_displacement {self.mean_displacement} != mean of tracked {expected}")
        return out


@dataclass(frozen=True)
class VehicleDiagnosis:
    t: float
    gated_ids: frozenset[int]
    per_object_delta: dict[int, float]
    flags: frozenset[DiagnosisFlag]
    summary: str = ""

    def problems(self) -> list[str]:
        out = []
        for oid, d in self.per_object_delta.items():
            if oid not in self.gated_ids:
                out.append(f"delta for object {oid} outside the gated set")
            if not (isinstance(d, (int, float)) and math.isfinite(d) and d >= 0):
                out.append(f"delta for object {oid} must be finite and >= 0, got {d!r}")
        flags = {DiagnosisFlag(f) for f in self.flags}
        if not flags:
            out.append("flags must be non-empty")
        if DiagnosisFlag.OK in flags and len(flags) > 1:
            out.append("'ok' cannot be combined with fault flags")
        return out


def mean_of(vectors: Iterable[Sequence[float]]) -> Vec3:
    vs = list(vectors)
    if not vs:
        return ZERO
    n = len(vs)
    return tuple(math.fsum(v[k] for v in vs) / n for k in range(3))  # type: ignore[return-value]


def _describe(
    before: Sequence[ObjectDetection],
    after: Sequence[ObjectDetection],
    t: float,
    t_next: float,
    source: DescriptionSource,
    **match,
) -> MotionDescription:
    corr = correspond(before, after, **match)
    motions: list[ObjectMotion] = []
    paired_before = {id(a): b for a, b in corr.pairs}
    for det in before:
        other = paired_before.get(id(det))
        if other is not None:
            motions.append(
                ObjectMotion(det.object_id, det.position, other.position,
                             sub(other.position, det.position), MotionStatus.TRACKED)
            )
        else:
            motions.append(ObjectMotion(det.object_id, det.position, None, ZERO, MotionStatus.DISAPPEARED))
    for det in corr.only_second:
        motions.append(ObjectMotion(det.object_id, None, det.position, ZERO, MotionStatus.APPEARED))
    mean = mean_of(m.displacement for m in motions if m.status is MotionStatus.TRACKED)
    return MotionDescription(t, t_next, source, tuple(motions), mean)


def describe_vision(frame_t: SensorFrame, frame_t1: SensorFrame) -> MotionDescription:
    if not frame_t.t < frame_t1.t:
        raise ValueError("frame_t must precede frame_t1")
    return _describe(
        unique_camera_detections(frame_t),
        unique_camera_detections(frame_t1),
        frame_t.t,
        frame_t1.t,
        DescriptionSource.VISION,
    )


def describe_lidar(
    frame_t: SensorFrame, frame_t1: SensorFrame, gate: float = CORRESPONDENCE_GATE
) -> MotionDescription:
    """LiDAR motion summary.

    Distinct ids stay distinct even when labels repeat.  Colliding ids are
    resolved by greedy nearest neighbour, and any pairing longer than
    ``gate`` metres is split into a disappearance plus an appearance.
    """
    if not frame_t.t < frame_t1.t:
        raise ValueError("frame_t must precede frame_t1")
    return _describe(
        frame_t.lidar_detections,
        frame_t1.lidar_detections,
        frame_t.t,
        frame_t1.t,
        DescriptionSource.LIDAR,
        gate=gate,
        gate_ids=True,
    )


def gate_range(lidar_detections: Iterable[ObjectDetection], range_limit: float = DEFAULT_RANGE_LIMIT) -> frozenset[int]:
    if range_limit <= 0:
        raise ValueError("range_limit must be positive")
    return frozenset(d.object_id for d in lidar_detections if norm(d.position) <= range_limit)


def cross_sensor_consistency(
    gated: Iterable[int],
    lidar_pos: Mapping[int, Sequence[float]],
    camera_pos: Mapping[int, Sequence[float]],
    missing: list[int] | None = None,
) -> dict[int, float]:
    """Euclidean LiDAR-camera gap per gated object.

    Gated ids absent from either map are skipped; they are logged and, when
    ``missing`` is given, appended to it.
    """
    out: dict[int, float] = {}
    for oid in sorted(gated):
        if oid in lidar_pos and oid in camera_pos:
            out[oid] = math.dist(lidar_pos[oid], camera_pos[oid])
        else:
            log.debug("object %s has no lidar/camera pair; skipped", oid)
            if missing is not None:
                missing.append(oid)
    return out


@dataclass(frozen=True)
class DiagnosisRules:
    tau_obj: float = DEFAULT_TAU_OBJ
    majority: float = DEFAULT_MAJORITY
    range_limit: float = DEFAULT_RANGE_LIMIT


def diagnose(
    vision: MotionDescription,
    lidar: MotionDescription,
    deltas: Mapping[int, float],
    expected_min_objects: int = DEFAULT_EXPECTED_MIN_OBJECTS,
    *,
    gated: Iterable[int] | None = None,
    rules: DiagnosisRules = DiagnosisRules(),
) -> VehicleDiagnosis:
    if vision.t != lidar.t:
        raise TimestampMismatch(vision.t, lidar.t)

    lidar_now = lidar.positions_at_t()
    if gated is None:
        omega = frozenset(oid for oid, p in lidar_now.items() if norm(p) <= rules.range_limit)
    else:
        omega = frozenset(gated)
    per_object = {oid: float(deltas[oid]) for oid in sorted(deltas) if oid in omega}
    camera_now = vision.positions_at_t()

    flags: set[DiagnosisFlag] = set()
    lines = [f"{len(omega)} lidar object(s) within {rules.range_limit:g} m; {len(per_object)} matched to camera."]

    if not omega and len(camera_now) >= expected_min_objects:
        flags.add(DiagnosisFlag.LIDAR_FAULT)
        lines.append(
            f"lidar_fault: no lidar objects in range while the camera reports {len(camera_now)} object(s)."
        )

    discrepant = [oid for oid, d in per_object.items() if d > rules.tau_obj]
    for oid in discrepant:
        lines.append(f"discrepancy: object {oid} lidar/camera gap {per_object[oid]:.3f} m > {rules.tau_obj:g} m.")
    if per_object and len(discrepant) / len(per_object) >= rules.majority:
        flags.add(DiagnosisFlag.SENSOR_MISALIGNMENT)
        lines.append(
            f"sensor_misalignment: {len(discrepant)} of {len(per_object)} matched object(s) exceed {rules.tau_obj:g} m."
        )

    tracked = [m.object_id for m in vision.motions if m.status == MotionStatus.TRACKED]
    if omega and tracked:
        orphans = [oid for oid in tracked if oid not in lidar_now and oid not in per_object]
        if len(orphans) / len(tracked) >= rules.majority:
            flags.add(DiagnosisFlag.CAMERA_FAULT)
            lines.append(
                f"camera_fault: {len(orphans)} of {len(tracked)} camera-tracked object(s) have no lidar counterpart."
            )

    if not flags:
        flags.add(DiagnosisFlag.OK)
        lines.append("ok: sensors consistent.")
    return VehicleDiagnosis(vision.t, omega, per_object, frozenset(flags), "\n".join(lines))
