"""Synchronized multimodal sensor traces: types, JSONL I/O and validation.

All positions are metres in the ego-vehicle body frame (x forward, y left,
z up), for LiDAR and camera detections alike.

Trace files are newline-delimited JSON.  The first line is the single
``meta`` record; ``imu``, ``gps`` and ``frame`` records follow in any
interleaving, each stream strictly increasing in ``t``::

    {"kind": "meta", "name": "R1", "length": 1277.76, "max_speed": 13.9,
     "avg_speed": 7.3, "dynamic_level": "small", "has_side_cameras": false,
     "has_roadside_obstructions": false}
    {"kind": "imu", "t": 0.0, "angular_velocity": [0, 0, 0],
     "linear_acceleration": [0, 0, 9.81], "yaw_rate": 0.0}
    {"kind": "gps", "t": 0.0, "latitude": 34.2, "longitude": 108.9,
     "altitude": 400.0, "speed": 7.3}
    {"kind": "frame", "t": 0.0, "camera": [...], "lidar": [...]}

Detection objects carry ``id``, ``label``, ``category``, ``pos``,
``source`` and ``conf``.
"""

from __future__ import annotations

import bisect
import io
import json
import math
import os
from dataclasses import dataclass, field
from enum import Enum
from functools import cached_property
from typing import IO, Iterable, Iterator, Sequence, Union

from .errors import (
    DuplicateDetection,
    MalformedRecord,
    NoFrameInWindow,
    NonMonotonicTimestamp,
    UnknownCategory,
)

Vec3 = tuple[float, float, float]

YAW_TOLERANCE = 1e-6
CORRESPONDENCE_GATE = 5.0


class Category(str, Enum):
    FOUR_WHEEL_VEHICLE = "four-wheel vehicle"
    NON_FOUR_WHEEL_VEHICLE = "non-four-wheel vehicle"
    PEDESTRIAN = "pedestrian"
    SIGN = "sign"
    FIXED_INSTALLATION = "fixed installation"
    PLANT = "plant"
    MONITOR = "monitor"

    @property
    def is_dynamic(self) -> bool:
        return self in DYNAMIC_CATEGORIES


DYNAMIC_CATEGORIES = frozenset(
    {Category.FOUR_WHEEL_VEHICLE, Category.NON_FOUR_WHEEL_VEHICLE, Category.PEDESTRIAN}
)


class Source(str, Enum):
    CAMERA_FRONT = "camera-front"
    CAMERA_LEFT = "camera-left"
    CAMERA_RIGHT = "camera-right"
    LIDAR = "lidar"

    @property
    def is_camera(self) -> bool:
        return self is not Source.LIDAR


CAMERA_SOURCES = (Source.CAMERA_FRONT, Source.CAMERA_LEFT, Source.CAMERA_RIGHT)


class DynamicLevel(str, Enum):
    SMALL = "small"
    MEDIUM = "medium"
    LARGE = "large"

    @property
    def complexity(self) -> int:
        """Ordinal urban-complexity indicator used by route classification."""
        return {"small": 0, "medium": 1, "large": 2}[self.value]


@dataclass(frozen=True)
class ImuSample:
    t: float
    angular_velocity: Vec3  # deg/s
    linear_acceleration: Vec3  # m/s^2, gravity included on z
    yaw_rate: float  # deg/s


@dataclass(frozen=True)
class GpsSample:
    t: float
    latitude: float
    longitude: float
    altitude: float
    speed: float


@dataclass(frozen=True)
class ObjectDetection:
    object_id: int
    label: str
    category: Category
    position: Vec3
    source: Source
    confidence: float = 1.0


@dataclass(frozen=True)
class SensorFrame:
    t: float
    camera_detections: tuple[ObjectDetection, ...] = ()
    lidar_detections: tuple[ObjectDetection, ...] = ()


@dataclass(frozen=True)
class RouteMeta:
    name: str
    length: float
    max_speed: float
    avg_speed: float
    dynamic_level: DynamicLevel
    has_side_cameras: bool = False
    has_roadside_obstructions: bool = False

    @property
    def complexity(self) -> int:
        return DynamicLevel(self.dynamic_level).complexity


@dataclass(frozen=True)
class SensorTrace:
    meta: RouteMeta
    imu: tuple[ImuSample, ...] = ()
    gps: tuple[GpsSample, ...] = ()
    frames: tuple[SensorFrame, ...] = ()

    @cached_property
    def frame_times(self) -> list[float]:
        return [f.t for f in self.frames]


@dataclass(frozen=True)
class Violation:
    stream: str
    index: int
    rule: str
    detail: str = ""

    def __str__(self) -> str:
        return f"{self.stream}[{self.index}] {self.rule}: {self.detail}"


# --------------------------------------------------------------------------
# geometry helpers


def distance(a: Sequence[float], b: Sequence[float]) -> float:
    return math.dist(a, b)


def norm(v: Sequence[float]) -> float:
    return math.hypot(*v)


def sub(a: Sequence[float], b: Sequence[float]) -> Vec3:
    return (a[0] - b[0], a[1] - b[1], a[2] - b[2])


def add(a: Sequence[float], b: Sequence[float]) -> Vec3:
    return (a[0] + b[0], a[1] + b[1], a[2] + b[2])


def _finite(v: Iterable[float]) -> bool:
    return all(math.isfinite(x) for x in v)


# --------------------------------------------------------------------------
# correspondence


@dataclass
class Correspondence:
    pairs: list[tuple[ObjectDetection, ObjectDetection]] = field(default_factory=list)
    only_first: list[ObjectDetection] = field(default_factory=list)
    only_second: list[ObjectDetection] = field(default_factory=list)


def greedy_nearest(
    first: Sequence[Sequence[float]], second: Sequence[Sequence[float]], gate: float
) -> list[tuple[int, int]]:
    """Greedy nearest-neighbour assignment; pairs farther apart than ``gate`` are never made."""
    candidates = sorted(
        (math.dist(p, q), i, j)
        for i, p in enumerate(first)
        for j, q in enumerate(second)
        if math.dist(p, q) <= gate
    )
    used_i: set[int] = set()
    used_j: set[int] = set()
    out = []
    for _, i, j in candidates:
        if i in used_i or j in used_j:
            continue
        used_i.add(i)
        used_j.add(j)
        out.append((i, j))
    return sorted(out)


def correspond(
    first: Sequence[ObjectDetection],
    second: Sequence[ObjectDetection],
    *,
    gate: float = CORRESPONDENCE_GATE,
    gate_ids: bool = False,
    match_leftovers: bool = False,
) -> Correspondence:
    """Pair detections of the same physical object.

    Ids that occur once on each side pair directly (rejected beyond ``gate``
    when ``gate_ids``).  Colliding ids are resolved by greedy nearest
    neighbour inside the id group.  With ``match_leftovers`` the remaining
    unpaired detections are matched by greedy nearest neighbour as well.
    """
    by_id_a: dict[int, list[int]] = {}
    by_id_b: dict[int, list[int]] = {}
    for i, d in enumerate(first):
        by_id_a.setdefault(d.object_id, []).append(i)
    for j, d in enumerate(second):
        by_id_b.setdefault(d.object_id, []).append(j)

    paired: list[tuple[int, int]] = []
    for oid, idx_a in by_id_a.items():
        idx_b = by_id_b.get(oid)
        if not idx_b:
            continue
        if len(idx_a) == 1 and len(idx_b) == 1:
            i, j = idx_a[0], idx_b[0]
            if not gate_ids or distance(first[i].position, second[j].position) <= gate:
                paired.append((i, j))
            continue
        local = greedy_nearest(
            [first[i].position for i in idx_a], [second[j].position for j in idx_b], gate
        )
        paired.extend((idx_a[a], idx_b[b]) for a, b in local)

    if match_leftovers:
        used_a = {i for i, _ in paired}
        used_b = {j for _, j in paired}
        rest_a = [i for i in range(len(first)) if i not in used_a and first[i].object_id not in by_id_b]
        rest_b = [j for j in range(len(second)) if j not in used_b and second[j].object_id not in by_id_a]
        local = greedy_nearest(
            [first[i].position for i in rest_a], [second[j].position for j in rest_b], gate
        )
        paired.extend((rest_a[a], rest_b[b]) for a, b in local)

    paired.sort()
    used_a = {i for i, _ in paired}
    used_b = {j for _, j in paired}
    return Correspondence(
        pairs=[(first[i], second[j]) for i, j in paired],
        only_first=[d for i, d in enumerate(first) if i not in used_a],
        only_second=[d for j, d in enumerate(second) if j not in used_b],
    )


def unique_camera_detections(frame: SensorFrame) -> list[ObjectDetection]:
    """Camera detections with one entry per object id (earliest view wins)."""
    seen: dict[int, ObjectDetection] = {}
    for det in frame.camera_detections:
        seen.setdefault(det.object_id, det)
    return list(seen.values())


def camera_positions_for(frame: SensorFrame, gate: float = CORRESPONDENCE_GATE) -> dict[int, Vec3]:
    """Camera position of each lidar object, keyed by the lidar object id."""
    corr = correspond(
        frame.lidar_detections, unique_camera_detections(frame), gate=gate, match_leftovers=True
    )
    return {lid.object_id: cam.position for lid, cam in corr.pairs}


# --------------------------------------------------------------------------
# lookup


def nearest_frame(trace: SensorTrace, t: float, window: float) -> SensorFrame:
    return trace.frames[nearest_frame_index(trace, t, window)]


def nearest_frame_index(trace: SensorTrace, t: float, window: float) -> int:
    if not trace.frames:
        raise NoFrameInWindow(t, window)
    if window <= 0:
        raise ValueError("window must be positive")
    times = trace.frame_times
    k = bisect.bisect_left(times, t)
    best = None
    for idx in (k - 1, k):
        if 0 <= idx < len(times):
            d = abs(times[idx] - t)
            # earlier index visited first, so strict < keeps it on ties
            if best is None or d < best[0]:
                best = (d, idx)
    assert best is not None
    if best[0] > window:
        raise NoFrameInWindow(t, window)
    return best[1]


# --------------------------------------------------------------------------
# validation


def validate_trace(trace: SensorTrace) -> list[Violation]:
    out: list[Violation] = []
    m = trace.meta
    if not (math.isfinite(m.length) and m.length > 0):
        out.append(Violation("meta", 0, "RouteMeta.length_positive", f"length={m.length}"))
    if not (_finite((m.max_speed, m.avg_speed)) and m.max_speed >= 0 and m.avg_speed >= 0):
        out.append(Violation("meta", 0, "RouteMeta.speed_nonnegative", "speeds must be finite and >= 0"))
    elif m.avg_speed > m.max_speed:
        out.append(
            Violation("meta", 0, "RouteMeta.avg_le_max", f"avg_speed={m.avg_speed} > max_speed={m.max_speed}")
        )
    try:
        DynamicLevel(m.dynamic_level)
    except ValueError:
        out.append(Violation("meta", 0, "RouteMeta.dynamic_level", repr(m.dynamic_level)))

    out += _monotonic("imu", [s.t for s in trace.imu])
    for i, s in enumerate(trace.imu):
        if not _finite((*s.angular_velocity, *s.linear_acceleration, s.yaw_rate)):
            out.append(Violation("imu", i, "ImuSample.finite"))
        elif abs(s.yaw_rate - s.angular_velocity[2]) > YAW_TOLERANCE:
            out.append(
                Violation("imu", i, "ImuSample.yaw_consistency", f"yaw_rate={s.yaw_rate} vs wz={s.angular_velocity[2]}")
            )

    out += _monotonic("gps", [s.t for s in trace.gps])
    for i, s in enumerate(trace.gps):
        if not (math.isfinite(s.latitude) and -90 <= s.latitude <= 90):
            out.append(Violation("gps", i, "GpsSample.latitude_range", str(s.latitude)))
        if not (math.isfinite(s.longitude) and -180 <= s.longitude <= 180):
            out.append(Violation("gps", i, "GpsSample.longitude_range", str(s.longitude)))
        if not (math.isfinite(s.speed) and s.speed >= 0):
            out.append(Violation("gps", i, "GpsSample.speed_nonnegative", str(s.speed)))
        if not math.isfinite(s.altitude):
            out.append(Violation("gps", i, "GpsSample.finite"))

    out += _monotonic("frames", [f.t for f in trace.frames])
    for i, frame in enumerate(trace.frames):
        seen: set[tuple[int, str]] = set()
        for group, want_camera in ((frame.camera_detections, True), (frame.lidar_detections, False)):
            for det in group:
                key = (det.object_id, Source(det.source).value)
                if key in seen:
                    out.append(
                        Violation("frames", i, "DuplicateDetection", f"t={frame.t} id={det.object_id} source={key[1]}")
                    )
                seen.add(key)
                if Source(det.source).is_camera != want_camera:
                    out.append(Violation("frames", i, "ObjectDetection.source_kind", f"id={det.object_id}"))
                if not isinstance(det.category, Category):
                    out.append(Violation("frames", i, "ObjectDetection.category", repr(det.category)))
                if not _finite(det.position):
                    out.append(Violation("frames", i, "ObjectDetection.position_finite", f"id={det.object_id}"))
                if not (0.0 <= det.confidence <= 1.0):
                    out.append(Violation("frames", i, "ObjectDetection.confidence_range", f"id={det.object_id}"))
    return out


def _monotonic(stream: str, times: list[float]) -> list[Violation]:
    out = []
    prev = None
    for i, t in enumerate(times):
        if not (math.isfinite(t) and t >= 0):
            out.append(Violation(stream, i, "Timestamp.nonnegative", f"t={t}"))
        if prev is not None and not t > prev:
            out.append(Violation(stream, i, "Timestamp.monotonic", f"t={t} after {prev}"))
        prev = t
    return out


# --------------------------------------------------------------------------
# parsing

_META_KEYS = {"kind", "name", "length", "max_speed", "avg_speed", "dynamic_level",
              "has_side_cameras", "has_roadside_obstructions"}
_IMU_KEYS = {"kind", "t", "angular_velocity", "linear_acceleration", "yaw_rate"}
_GPS_KEYS = {"kind", "t", "latitude", "longitude", "altitude", "speed"}
_FRAME_KEYS = {"kind", "t", "camera", "lidar"}
_DET_KEYS = {"id", "label", "category", "pos", "source", "conf"}


def _num(rec: dict, key: str, line: int) -> float:
    if key not in rec:
        raise MalformedRecord(line, f"missing field {key!r}")
    v = rec[key]
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise MalformedRecord(line, f"field {key!r} must be a number")
    return float(v)


def _vec(value: object, key: str, line: int) -> Vec3:
    if (
        not isinstance(value, list)
        or len(value) != 3
        or any(isinstance(x, bool) or not isinstance(x, (int, float)) for x in value)
    ):
        raise MalformedRecord(line, f"field {key!r} must be a list of 3 numbers")
    return (float(value[0]), float(value[1]), float(value[2]))


def _check_keys(rec: dict, allowed: set[str], line: int, required: Iterable[str] = ()) -> None:
    extra = set(rec) - allowed
    if extra:
        raise MalformedRecord(line, f"unknown field(s) {sorted(extra)}")
    for key in required:
        if key not in rec:
            raise MalformedRecord(line, f"missing field {key!r}")


def _parse_detection(raw: object, line: int) -> ObjectDetection:
    if not isinstance(raw, dict):
        raise MalformedRecord(line, "detection must be an object")
    _check_keys(raw, _DET_KEYS, line, required=("id", "category", "pos", "source"))
    oid = raw["id"]
    if isinstance(oid, bool) or not isinstance(oid, int):
        raise MalformedRecord(line, "detection id must be an integer")
    try:
        category = Category(raw["category"])
    except (ValueError, TypeError):
        raise UnknownCategory(raw["category"], line) from None
    try:
        source = Source(raw["source"])
    except (ValueError, TypeError):
        raise MalformedRecord(line, f"unknown source {raw['source']!r}") from None
    label = raw.get("label", category.value)
    if not isinstance(label, str):
        raise MalformedRecord(line, "label must be a string")
    conf = _num(raw, "conf", line) if "conf" in raw else 1.0
    return ObjectDetection(oid, label, category, _vec(raw["pos"], "pos", line), source, conf)


def _iter_lines(source: Union[IO, bytes, Iterable]) -> Iterator[Union[str, bytes]]:
    if isinstance(source, bytes):
        source = io.BytesIO(source)
    yield from source


def parse_trace(source: Union[IO, bytes, Iterable]) -> SensorTrace:
    """Parse and fully validate a trace from a binary/text stream, bytes, or lines."""
    meta = None
    imu, gps, frames = [], [], []
    lines: dict[str, list[int]] = {"imu": [], "gps": [], "frames": []}
    lineno = 0
    for lineno, text in enumerate(_iter_lines(source), start=1):
        if isinstance(text, bytes):
            try:
                text = text.decode("utf-8")
            except UnicodeDecodeError as exc:
                raise MalformedRecord(lineno, f"invalid UTF-8: {exc.reason}") from None
        if not text.strip():
            continue
        try:
            rec = json.loads(text)
        except json.JSONDecodeError as exc:
            raise MalformedRecord(lineno, f"invalid JSON: {exc.msg}") from None
        if not isinstance(rec, dict) or "kind" not in rec:
            raise MalformedRecord(lineno, "record must be an object with a 'kind' field")
        kind = rec["kind"]
        if meta is None and kind != "meta":
            raise MalformedRecord(lineno, "first record must be the meta record")
        if kind == "meta":
            if meta is not None:
                raise MalformedRecord(lineno, "duplicate meta record")
            _check_keys(rec, _META_KEYS, lineno, required=("name", "length", "max_speed", "avg_speed", "dynamic_level"))
            try:
                level = DynamicLevel(rec["dynamic_level"])
            except (ValueError, TypeError):
                raise MalformedRecord(lineno, f"unknown dynamic_level {rec['dynamic_level']!r}") from None
            if not isinstance(rec["name"], str):
                raise MalformedRecord(lineno, "name must be a string")
            flags = [rec.get(k, False) for k in ("has_side_cameras", "has_roadside_obstructions")]
            if any(not isinstance(f, bool) for f in flags):
                raise MalformedRecord(lineno, "boolean route flags must be true/false")
            meta = RouteMeta(
                rec["name"], _num(rec, "length", lineno), _num(rec, "max_speed", lineno),
                _num(rec, "avg_speed", lineno), level, *flags,
            )
        elif kind == "imu":
            _check_keys(rec, _IMU_KEYS, lineno, required=("t", "angular_velocity", "linear_acceleration"))
            w = _vec(rec["angular_velocity"], "angular_velocity", lineno)
            yaw = _num(rec, "yaw_rate", lineno) if "yaw_rate" in rec else w[2]
            imu.append(ImuSample(_num(rec, "t", lineno), w, _vec(rec["linear_acceleration"], "linear_acceleration", lineno), yaw))
            lines["imu"].append(lineno)
        elif kind == "gps":
            _check_keys(rec, _GPS_KEYS, lineno, required=_GPS_KEYS - {"kind"})
            gps.append(GpsSample(*(_num(rec, k, lineno) for k in ("t", "latitude", "longitude", "altitude", "speed"))))
            lines["gps"].append(lineno)
        elif kind == "frame":
            frames.append(frame_from_record(rec, lineno))
            lines["frames"].append(lineno)
        else:
            raise MalformedRecord(lineno, f"unknown record kind {kind!r}")
    if meta is None:
        raise MalformedRecord(max(lineno, 1), "trace has no meta record")

    trace = SensorTrace(meta, tuple(imu), tuple(gps), tuple(frames))
    problems = validate_trace(trace)
    if problems:
        v = problems[0]
        line = 1 if v.stream == "meta" else lines[v.stream][v.index]
        if v.rule == "Timestamp.monotonic":
            raise NonMonotonicTimestamp(v.stream, v.index, line)
        if v.rule == "DuplicateDetection":
            frame = frames[v.index]
            dup = _first_duplicate(frame)
            raise DuplicateDetection(frame.t, dup[0], dup[1])
        raise MalformedRecord(line, str(v))
    return trace


def _first_duplicate(frame: SensorFrame) -> tuple[int, str]:
    seen = set()
    for det in (*frame.camera_detections, *frame.lidar_detections):
        key = (det.object_id, Source(det.source).value)
        if key in seen:
            return key
        seen.add(key)
    raise AssertionError("no duplicate in frame")


def read_trace(path: Union[str, os.PathLike]) -> SensorTrace:
    with open(path, "rb") as fh:
        return parse_trace(fh)


# --------------------------------------------------------------------------
# serialization


def _det_record(d: ObjectDetection) -> dict:
    return {
        "id": d.object_id,
        "label": d.label,
        "category": Category(d.category).value,
        "pos": list(d.position),
        "source": Source(d.source).value,
        "conf": d.confidence,
    }


def frame_to_record(frame: SensorFrame) -> dict:
    return {
        "kind": "frame",
        "t": frame.t,
        "camera": [_det_record(d) for d in frame.camera_detections],
        "lidar": [_det_record(d) for d in frame.lidar_detections],
    }


def frame_from_record(rec: object, line: int = 0) -> SensorFrame:
    """Inverse of :func:`frame_to_record`; raises the usual parse errors."""
    if not isinstance(rec, dict):
        raise MalformedRecord(line, "frame record must be an object")
    _check_keys(rec, _FRAME_KEYS, line, required=("t",))
    groups = []
    for key in ("camera", "lidar"):
        raw = rec.get(key, [])
        if not isinstance(raw, list):
            raise MalformedRecord(line, f"{key!r} must be an array")
        groups.append(tuple(_parse_detection(d, line) for d in raw))
    return SensorFrame(_num(rec, "t", line), groups[0], groups[1])


def trace_records(trace: SensorTrace) -> Iterator[dict]:
    m = trace.meta
    yield {
        "kind": "meta",
        "name": m.name,
        "length": m.length,
        "max_speed": m.max_speed,
        "avg_speed": m.avg_speed,
        "dynamic_level": DynamicLevel(m.dynamic_level).value,
        "has_side_cameras": m.has_side_cameras,
        "has_roadside_obstructions": m.has_roadside_obstructions,
    }
    for s in trace.imu:
        yield {
            "kind": "imu",
            "t": s.t,
            "angular_velocity": list(s.angular_velocity),
            "linear_acceleration": list(s.linear_acceleration),
            "yaw_rate": s.yaw_rate,
        }
    for g in trace.gps:
        yield {"kind": "gps", "t": g.t, "latitude": g.latitude, "longitude": g.longitude,
               "altitude": g.altitude, "speed": g.speed}
    for f in trace.frames:
        yield frame_to_record(f)


def serialize_trace(trace: SensorTrace) -> str:
    return "".join(json.dumps(r, separators=(",", ":")) + "\n" for r in trace_records(trace))


def write_trace(trace: SensorTrace, path: Union[str, os.PathLike]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(serialize_trace(trace))
