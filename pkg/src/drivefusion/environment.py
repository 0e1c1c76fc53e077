"""Environmental change detection and causal assessment between critical timestamps."""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import Iterable, Mapping, Sequence

from .errors import MissingHistory
from .trace import (
    Category,
    ObjectDetection,
    Vec3,
    correspond,
    norm,
    sub,
)

DEFAULT_MOVE_EPSILON = 0.1
DEFAULT_SIGMA_SIG = 0.5
DEFAULT_SEVERITY_BANDS = (0.5, 2.0)
DEFAULT_COSINE_MIN = 0.5
DEFAULT_PROXIMITY = 10.0
DEFAULT_SUB_INTERVALS = 4

_TIME_TOL = 1e-9


class ChangeKind(str, Enum):
    APPEARED = "appeared"
    DISAPPEARED = "disappeared"
    MOVED = "moved"


class ObjectClass(str, Enum):
    STATIC = "static"
    DYNAMIC = "dynamic"


class Severity(str, Enum):
    LOW = "low"
    MEDIUM = "medium"
    HIGH = "high"


class Origin(str, Enum):
    SELF_MOVING = "self-moving"
    EXTERNALLY_INFLUENCED = "externally-influenced"


@dataclass(frozen=True)
class EnvironmentRules:
    move_epsilon: float = DEFAULT_MOVE_EPSILON
    sigma_sig: float = DEFAULT_SIGMA_SIG
    severity_bands: tuple[float, float] = DEFAULT_SEVERITY_BANDS
    cosine_min: float = DEFAULT_COSINE_MIN
    proximity: float = DEFAULT_PROXIMITY
    sub_intervals: int = DEFAULT_SUB_INTERVALS


def severity_for(magnitude: float, bands: tuple[float, float] = DEFAULT_SEVERITY_BANDS) -> Severity:
    low, high = bands
    if magnitude < low:
        return Severity.LOW
    if magnitude < high:
        return Severity.MEDIUM
    return Severity.HIGH


def class_of(category: Category | str) -> ObjectClass:
    return ObjectClass.DYNAMIC if Category(category).is_dynamic else ObjectClass.STATIC


@dataclass(frozen=True)
class EnvironmentalChange:
    object_id: int
    kind: ChangeKind
    magnitude: float
    object_class: ObjectClass
    severity: Severity

    def problems(self, bands: tuple[float, float] = DEFAULT_SEVERITY_BANDS) -> list[str]:
        out = []
        if not (math.isfinite(self.magnitude) and self.magnitude >= 0):
            out.append(f"object {self.object_id}: magnitude must be >= 0")
        elif (self.magnitude > 0) != (ChangeKind(self.kind) is ChangeKind.MOVED):
            out.append(f"object {self.object_id}: magnitude > 0 iff kind is moved")
        elif Severity(self.severity) is not severity_for(self.magnitude, bands):
            out.append(f"object {self.object_id}: severity inconsistent with magnitude")
        return out


@dataclass(frozen=True)
class ChangeReport:
    t_from: float
    t_to: float
    changes: tuple[EnvironmentalChange, ...]
    agreements: dict[tuple[int, int], float]

    def problems(self, bands: tuple[float, float] = DEFAULT_SEVERITY_BANDS) -> list[str]:
        out = []
        if not self.t_from < self.t_to:
            out.append(f"t_from={self.t_from} must precede t_to={self.t_to}")
        for c in self.changes:
            out += c.problems(bands)
        for key, d in self.agreements.items():
            if not (isinstance(d, (int, float)) and math.isfinite(d) and d >= 0):
                out.append(f"agreement {key} must be finite and >= 0, got {d!r}")
        return out


@dataclass(frozen=True)
class CausalAssessment:
    object_id: int
    origin: Origin
    confidence: float
    caution: bool
    rationale: str
    delta_over_window: Vec3

    def problems(self) -> list[str]:
        out = []
        if not (isinstance(self.confidence, (int, float)) and 0.0 <= self.confidence <= 1.0):
            out.append(f"object {self.object_id}: confidence must lie in [0, 1], got {self.confidence!r}")
        if Origin(self.origin) is Origin.EXTERNALLY_INFLUENCED and not self.caution:
            out.append(f"object {self.object_id}: externally-influenced objects require caution")
        return out


def _by_id(dets: Iterable[ObjectDetection]) -> dict[int, ObjectDetection]:
    out: dict[int, ObjectDetection] = {}
    for d in dets:
        out.setdefault(d.object_id, d)
    return out


def classify_source_changes(
    prev: Iterable[ObjectDetection], cur: Iterable[ObjectDetection], move_epsilon: float = DEFAULT_MOVE_EPSILON
) -> dict[int, str]:
    """Per-id verdict for one source: appeared, disappeared, moved or unchanged."""
    a, b = _by_id(prev), _by_id(cur)
    out = {}
    for oid in sorted(a.keys() | b.keys()):
        if oid not in a:
            out[oid] = ChangeKind.APPEARED.value
        elif oid not in b:
            out[oid] = ChangeKind.DISAPPEARED.value
        elif math.dist(a[oid].position, b[oid].position) > move_epsilon:
            out[oid] = ChangeKind.MOVED.value
        else:
            out[oid] = "unchanged"
    return out


def _source_changes(
    prev: Iterable[ObjectDetection], cur: Iterable[ObjectDetection], rules: EnvironmentRules
) -> dict[int, EnvironmentalChange]:
    a, b = _by_id(prev), _by_id(cur)
    out = {}
    for oid, verdict in classify_source_changes(a.values(), b.values(), rules.move_epsilon).items():
        if verdict == "unchanged":
            continue
        det = a.get(oid) or b[oid]
        magnitude = math.dist(a[oid].position, b[oid].position) if verdict == ChangeKind.MOVED.value else 0.0
        out[oid] = EnvironmentalChange(
            oid, ChangeKind(verdict), magnitude, class_of(det.category), severity_for(magnitude, rules.severity_bands)
        )
    return out


def cross_sensor_agreement(vision_det, lidar_det) -> float:
    """Euclidean distance between the camera and LiDAR estimates of one object."""
    v = getattr(vision_det, "position", vision_det)
    ell = getattr(lidar_det, "position", lidar_det)
    return math.dist(v, ell)


def detect_changes(
    v_prev: Iterable[ObjectDetection],
    v_cur: Iterable[ObjectDetection],
    l_prev: Iterable[ObjectDetection],
    l_cur: Iterable[ObjectDetection],
    *,
    t_from: float,
    t_to: float,
    rules: EnvironmentRules = EnvironmentRules(),
) -> ChangeReport:
    """Compare two frames per source and merge the per-source changes.

    LiDAR is authoritative for every object it observed in either frame;
    camera verdicts only cover objects the LiDAR never saw.
    """
    if not t_from < t_to:
        raise ValueError("t_from must precede t_to")
    v_prev, v_cur, l_prev, l_cur = (list(x) for x in (v_prev, v_cur, l_prev, l_cur))
    lidar = _source_changes(l_prev, l_cur, rules)
    camera = _source_changes(v_prev, v_cur, rules)
    lidar_seen = {d.object_id for d in (*l_prev, *l_cur)}
    merged = dict(lidar)
    for oid, change in camera.items():
        if oid not in lidar_seen:
            merged[oid] = change
    changes = tuple(merged[oid] for oid in sorted(merged))

    corr = correspond(list(_by_id(v_cur).values()), list(_by_id(l_cur).values()), match_leftovers=True)
    agreements = {
        (v.object_id, ell.object_id): cross_sensor_agreement(v, ell) for v, ell in corr.pairs
    }
    return ChangeReport(t_from, t_to, changes, agreements)


def _window(samples: Sequence[tuple[float, Sequence[float]]], t: float, delta_t: float, k: int):
    inside = sorted(
        ((ts, tuple(p)) for ts, p in samples if t - delta_t - _TIME_TOL <= ts <= t + _TIME_TOL),
        key=lambda s: s[0],
    )
    if len(inside) <= k + 1:
        return inside
    # resample at k evenly spaced sub-interval boundaries, nearest sample each
    times = [s[0] for s in inside]
    picked: list[int] = []
    for j in range(k + 1):
        target = t - delta_t + delta_t * j / k
        idx = min(range(len(times)), key=lambda i: (abs(times[i] - target), i))
        if not picked or idx != picked[-1]:
            picked.append(idx)
    return [inside[i] for i in picked]


def _cosine(a: Vec3, b: Vec3) -> float:
    na, nb = norm(a), norm(b)
    if na == 0 or nb == 0:
        return 0.0
    return (a[0] * b[0] + a[1] * b[1] + a[2] * b[2]) / (na * nb)


def assess_causes(
    report: ChangeReport,
    history: Mapping[int, Sequence[tuple[float, Sequence[float]]]],
    delta_t: float,
    *,
    rules: EnvironmentRules = EnvironmentRules(),
    skipped: list[MissingHistory] | None = None,
) -> list[CausalAssessment]:
    """Explain each significant change as self-moving or externally influenced.

    ``history`` maps object ids to ``(t, position)`` samples.  Objects with
    no sample inside ``[t_to - delta_t, t_to]`` are skipped and recorded in
    ``skipped`` as :class:`MissingHistory`.
    """
    if delta_t <= 0:
        raise ValueError("delta_t must be positive")
    t = report.t_to
    out = []
    for change in report.changes:
        oid = change.object_id
        samples = _window(history.get(oid, ()), t, delta_t, rules.sub_intervals)
        if not samples:
            if skipped is not None:
                skipped.append(MissingHistory(oid, t, delta_t))
            continue
        start, end = samples[0][1], samples[-1][1]
        delta = sub(end, start)
        if norm(delta) <= rules.sigma_sig:
            continue

        steps = [sub(b[1], a[1]) for a, b in zip(samples, samples[1:])]
        steps = [s for s in steps if norm(s) > rules.move_epsilon]
        cosines = [_cosine(a, b) for a, b in zip(steps, steps[1:])]
        agree = sum(c >= rules.cosine_min for c in cosines)
        consistent = len(steps) >= 2 and agree >= 0.5 * len(cosines)
        dynamic = ObjectClass(change.object_class) is ObjectClass.DYNAMIC

        if dynamic and consistent:
            origin = Origin.SELF_MOVING
            confidence = agree / len(cosines)
        else:
            origin = Origin.EXTERNALLY_INFLUENCED
            confidence = (len(cosines) - agree) / len(cosines) if cosines else 0.5
        if not cosines:
            confidence = 0.5

        range_now = norm(end)
        caution = origin is Origin.EXTERNALLY_INFLUENCED or range_now < rules.proximity
        if origin is Origin.SELF_MOVING:
            why = f"dynamic object moving consistently over {len(steps)} sub-interval(s)"
        elif dynamic:
            why = "dynamic object with abrupt or inconsistent motion"
        else:
            why = "static-class object displaced"
        rationale = (
            f"object {oid}: {why}; displacement {norm(delta):.3f} m over {delta_t:g} s; "
            f"range {range_now:.2f} m"
        )
        out.append(CausalAssessment(oid, origin, confidence, caution, rationale, delta))
    return out
