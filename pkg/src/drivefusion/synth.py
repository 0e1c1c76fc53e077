"""Seeded synthetic traces with fault injection and ground-truth labels.

Object trajectories are given in the ego frame, so ego motion does not move
static objects; maneuvers only shape the IMU stream.  Detections are
noiseless unless a ``LidarNoise`` fault is active.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import ClassVar, Union

import numpy as np

from . import codec
from .errors import InvalidSpec, OutOfRange, StructuredOutputError
from .filtration import BASELINE_ANGULAR_VELOCITY, BASELINE_LINEAR_ACCEL, BASELINE_YAW_RATE, Factor
from .trace import (
    Category,
    GpsSample,
    ImuSample,
    ObjectDetection,
    RouteMeta,
    SensorFrame,
    SensorTrace,
    Source,
    Vec3,
    add,
    norm,
    write_trace,
)

GRAVITY = 9.81
PULSE_WIDTH = 1.0  # s, raised-cosine support
LIDAR_MAX_RANGE = 230.0
TURN_ROLL_SHARE = 0.6  # turning pulses split angular rate 0.6 roll / 0.8 yaw
TURN_YAW_SHARE = 0.8
BASE_LATITUDE = 34.37
BASE_LONGITUDE = 108.90
METERS_PER_DEGREE = 111_320.0


# ---- trajectories ----------------------------------------------------------


@dataclass(frozen=True)
class Stationary:
    KIND: ClassVar[str] = "stationary"


@dataclass(frozen=True)
class Linear:
    velocity: Vec3
    KIND: ClassVar[str] = "linear"


@dataclass(frozen=True)
class Waypoints:
    """Piecewise-linear path through ``(t, position)`` points, held after the last."""

    points: tuple[tuple[float, Vec3], ...]
    KIND: ClassVar[str] = "waypoints"


Trajectory = Union[Stationary, Linear, Waypoints]


@dataclass(frozen=True)
class ObjectSpec:
    object_id: int
    category: Category
    position: Vec3
    trajectory: Trajectory = Stationary()
    label: str = ""

    def position_at(self, t: float) -> Vec3:
        traj = self.trajectory
        if isinstance(traj, Linear):
            v = traj.velocity
            return (self.position[0] + v[0] * t, self.position[1] + v[1] * t, self.position[2] + v[2] * t)
        if isinstance(traj, Waypoints):
            path = [(0.0, self.position), *traj.points]
            if t <= path[0][0]:
                return tuple(path[0][1])  # type: ignore[return-value]
            for (t0, p0), (t1, p1) in zip(path, path[1:]):
                if t <= t1:
                    w = (t - t0) / (t1 - t0)
                    return tuple(a + (b - a) * w for a, b in zip(p0, p1))  # type: ignore[return-value]
            return tuple(path[-1][1])  # type: ignore[return-value]
        return self.position

    @property
    def moves(self) -> bool:
        traj = self.trajectory
        if isinstance(traj, Linear):
            return any(v != 0 for v in traj.velocity)
        if isinstance(traj, Waypoints):
            return any(tuple(p) != tuple(self.position) for _, p in traj.points)
        return False


# ---- faults ----------------------------------------------------------------


@dataclass(frozen=True)
class CameraMisalignment:
    view: Source
    offset: Vec3
    start: float
    end: float
    KIND: ClassVar[str] = "camera_misalignment"


@dataclass(frozen=True)
class LidarNoise:
    sigma: float
    start: float
    end: float
    KIND: ClassVar[str] = "lidar_noise"


@dataclass(frozen=True)
class LidarDropout:
    start: float
    end: float
    KIND: ClassVar[str] = "lidar_dropout"


@dataclass(frozen=True)
class DisplacedStaticObject:
    object_id: int
    offset: Vec3
    at: float
    KIND: ClassVar[str] = "displaced_static_object"


FaultSpec = Union[CameraMisalignment, LidarNoise, LidarDropout, DisplacedStaticObject]


def _active(fault, t: float) -> bool:
    return fault.start <= t < fault.end


@dataclass(frozen=True)
class Maneuver:
    t: float
    factor: Factor
    intensity: float  # multiple of the kinematic baseline


@dataclass(frozen=True)
class ScenarioSpec:
    duration: float
    frame_rate: float
    route_profile: RouteMeta
    objects: tuple[ObjectSpec, ...] = ()
    faults: tuple[FaultSpec, ...] = ()
    seed: int = 0
    maneuvers: tuple[Maneuver, ...] = ()
    imu_rate: float = 400.0
    gps_rate: float = 4.0

    def to_json(self) -> str:
        return codec.dumps(self, indent=2)

    @classmethod
    def from_json(cls, text: str) -> "ScenarioSpec":
        return codec.loads(cls, text)


# ---- ground truth ----------------------------------------------------------


class VehicleStatus(str, Enum):
    OK = "ok"
    MISALIGNED = "misaligned"
    LIDAR_FAULT = "lidar_fault"


class GroundTruthOrigin(str, Enum):
    SELF_MOVING = "self-moving"
    EXTERNALLY_INFLUENCED = "externally-influenced"
    STATIC = "static"


@dataclass(frozen=True)
class FrameLabel:
    t: float
    status: VehicleStatus
    view: Source | None = None
    active_faults: tuple[str, ...] = ()


@dataclass(frozen=True)
class GroundTruth:
    frames: tuple[FrameLabel, ...]
    origins: dict[int, GroundTruthOrigin]
    maneuvers: tuple[Maneuver, ...] = field(default_factory=tuple)

    def label_at(self, t: float) -> FrameLabel:
        return min(self.frames, key=lambda f: (abs(f.t - t), f.t))

    def to_json(self) -> str:
        return codec.dumps(self, indent=2)

    @classmethod
    def from_json(cls, text: str) -> "GroundTruth":
        return codec.loads(cls, text)


# ---- construction ----------------------------------------------------------


def validate_spec(spec: ScenarioSpec) -> list[str]:
    out = []
    for name in ("duration", "frame_rate", "imu_rate", "gps_rate"):
        v = getattr(spec, name)
        if not (math.isfinite(v) and v > 0):
            out.append(f"{name} must be > 0")
    if isinstance(spec.seed, bool) or not isinstance(spec.seed, int) or not (-(2**63) <= spec.seed < 2**64):
        out.append("seed must be a 64-bit integer")
    ids = [o.object_id for o in spec.objects]
    if len(set(ids)) != len(ids):
        out.append("object ids must be unique")
    for f in spec.faults:
        if isinstance(f, (CameraMisalignment, LidarNoise, LidarDropout)) and not f.start < f.end:
            out.append(f"{f.KIND}: start must precede end")
        if isinstance(f, LidarNoise) and not f.sigma >= 0:
            out.append("lidar_noise: sigma must be >= 0")
        if isinstance(f, CameraMisalignment) and not Source(f.view).is_camera:
            out.append("camera_misalignment: view must be a camera source")
        if isinstance(f, DisplacedStaticObject) and f.object_id not in ids:
            out.append(f"displaced_static_object: unknown object {f.object_id}")
    for m in spec.maneuvers:
        if not 0 <= m.t <= spec.duration:
            out.append(f"maneuver at t={m.t} outside the scenario")
        if not m.intensity > 0:
            out.append("maneuver intensity must be > 0")
    return out


def inject_maneuver(spec: ScenarioSpec, t: float, factor: Factor | str, intensity: float) -> ScenarioSpec:
    if not 0 <= t <= spec.duration:
        raise OutOfRange(t, spec.duration)
    if not intensity > 0:
        raise InvalidSpec("maneuver intensity must be > 0")
    return replace(spec, maneuvers=(*spec.maneuvers, Maneuver(t, Factor(factor), intensity)))


def camera_view(position: Vec3, has_side_cameras: bool) -> Source | None:
    """Camera that sees ``position``: front within +-45 deg, sides to +-135 deg."""
    bearing = math.degrees(math.atan2(position[1], position[0]))
    if -45.0 <= bearing <= 45.0:
        return Source.CAMERA_FRONT
    if not has_side_cameras:
        return None
    if 45.0 < bearing <= 135.0:
        return Source.CAMERA_LEFT
    if -135.0 <= bearing < -45.0:
        return Source.CAMERA_RIGHT
    return None


def _times(duration: float, rate: float) -> np.ndarray:
    n = max(1, int(round(duration * rate)))
    return np.arange(n) / rate


def _imu_stream(spec: ScenarioSpec) -> tuple[ImuSample, ...]:
    ts = _times(spec.duration, spec.imu_rate)
    w = np.zeros((ts.size, 3))
    acc = np.zeros((ts.size, 3))
    acc[:, 2] = GRAVITY
    for m in spec.maneuvers:
        u = ts - m.t
        shape = np.where(np.abs(u) <= PULSE_WIDTH / 2, 0.5 * (1 + np.cos(2 * np.pi * u / PULSE_WIDTH)), 0.0)
        factor = Factor(m.factor)
        if factor is Factor.TURNING:
            peak = m.intensity * BASELINE_ANGULAR_VELOCITY
            w[:, 0] += TURN_ROLL_SHARE * peak * shape
            w[:, 2] += TURN_YAW_SHARE * peak * shape
        elif factor is Factor.ACCEL_BRAKE:
            acc[:, 0] -= m.intensity * BASELINE_LINEAR_ACCEL * shape
        else:
            w[:, 2] += m.intensity * BASELINE_YAW_RATE * shape
    return tuple(
        ImuSample(float(t), tuple(map(float, wi)), tuple(map(float, ai)), float(wi[2]))  # type: ignore[arg-type]
        for t, wi, ai in zip(ts, w, acc)
    )


def _gps_stream(spec: ScenarioSpec) -> tuple[GpsSample, ...]:
    speed = spec.route_profile.avg_speed
    return tuple(
        GpsSample(float(t), BASE_LATITUDE + speed * float(t) / METERS_PER_DEGREE, BASE_LONGITUDE, 400.0, speed)
        for t in _times(spec.duration, spec.gps_rate)
    )


def _label(spec: ScenarioSpec, t: float) -> FrameLabel:
    active = [f for f in spec.faults if not isinstance(f, DisplacedStaticObject) and _active(f, t)]
    names = tuple(f.KIND for f in active)
    if any(isinstance(f, LidarDropout) for f in active):
        return FrameLabel(t, VehicleStatus.LIDAR_FAULT, None, names)
    mis = [f for f in active if isinstance(f, CameraMisalignment)]
    if mis:
        return FrameLabel(t, VehicleStatus.MISALIGNED, Source(mis[0].view), names)
    return FrameLabel(t, VehicleStatus.OK, None, names)


def _origins(spec: ScenarioSpec) -> dict[int, GroundTruthOrigin]:
    displaced = {f.object_id for f in spec.faults if isinstance(f, DisplacedStaticObject)}
    out = {}
    for o in spec.objects:
        if o.object_id in displaced:
            out[o.object_id] = GroundTruthOrigin.EXTERNALLY_INFLUENCED
        elif o.moves:
            dynamic = Category(o.category).is_dynamic
            out[o.object_id] = GroundTruthOrigin.SELF_MOVING if dynamic else GroundTruthOrigin.EXTERNALLY_INFLUENCED
        else:
            out[o.object_id] = GroundTruthOrigin.STATIC
    return out


def generate_trace(spec: ScenarioSpec) -> tuple[SensorTrace, GroundTruth]:
    problems = validate_spec(spec)
    if problems:
        raise InvalidSpec("; ".join(problems))
    rng = np.random.default_rng(spec.seed)
    side = spec.route_profile.has_side_cameras
    displacements = [f for f in spec.faults if isinstance(f, DisplacedStaticObject)]

    frames = []
    labels = []
    for t in _times(spec.duration, spec.frame_rate):
        t = float(t)
        dropout = any(isinstance(f, LidarDropout) and _active(f, t) for f in spec.faults)
        noise = [f.sigma for f in spec.faults if isinstance(f, LidarNoise) and _active(f, t)]
        camera, lidar = [], []
        for obj in spec.objects:
            p = obj.position_at(t)
            for d in displacements:
                if d.object_id == obj.object_id and t >= d.at:
                    p = add(p, d.offset)
            label = obj.label or Category(obj.category).value
            if not dropout and norm(p) <= LIDAR_MAX_RANGE:
                q = p
                for sigma in noise:
                    q = add(q, tuple(float(x) for x in rng.normal(0.0, sigma, 3)))
                lidar.append(ObjectDetection(obj.object_id, label, Category(obj.category), q, Source.LIDAR, 1.0))
            view = camera_view(p, side)
            if view is not None:
                q = p
                for f in spec.faults:
                    if isinstance(f, CameraMisalignment) and Source(f.view) is view and _active(f, t):
                        q = add(q, f.offset)
                camera.append(ObjectDetection(obj.object_id, label, Category(obj.category), q, view, 1.0))
        frames.append(SensorFrame(t, tuple(camera), tuple(lidar)))
        labels.append(_label(spec, t))

    trace = SensorTrace(spec.route_profile, _imu_stream(spec), _gps_stream(spec), tuple(frames))
    truth = GroundTruth(tuple(labels), _origins(spec), tuple(spec.maneuvers))
    return trace, truth


def write_outputs(
    trace: SensorTrace, truth: GroundTruth, directory: str | os.PathLike, stem: str = "scenario"
) -> tuple[Path, Path]:
    """Write ``<stem>.jsonl`` and the sibling ``<stem>.truth.json``."""
    out = Path(directory)
    out.mkdir(parents=True, exist_ok=True)
    trace_path = out / f"{stem}.jsonl"
    truth_path = out / f"{stem}.truth.json"
    write_trace(trace, trace_path)
    truth_path.write_text(truth.to_json() + "\n", encoding="utf-8")
    return trace_path, truth_path


def load_spec(path: str | os.PathLike) -> ScenarioSpec:
    text = Path(path).read_text(encoding="utf-8")
    try:
        return ScenarioSpec.from_json(text)
    except json.JSONDecodeError as exc:
        raise InvalidSpec(f"scenario spec is not valid JSON: {exc}") from None
    except StructuredOutputError as exc:
        raise InvalidSpec(str(exc)) from None
