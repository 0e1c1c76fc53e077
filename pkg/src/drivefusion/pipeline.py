"""End-to-end run: filtration, vehicle reasoning, environmental reasoning, response.

Every agent call goes through an :class:`AgentRunner`, so the same dataflow
serves the rule-based backend and a remote model.  Within a stage the
per-event calls are independent and may run concurrently; stages themselves
run in dataflow order.
"""

from __future__ import annotations

import hashlib
import json
import os
import time
from contextlib import contextmanager
from dataclasses import dataclass
from pathlib import Path

from . import codec
from .agents import roles
from .agents.backends import AgentRunner
from .agents.roles import AgentRole
from .config import PipelineConfig
from .environment import CausalAssessment, ChangeReport
from .errors import DriveFusionError
from .filtration import CriticalEvent, RoutePlan, select_critical_timestamps
from .response import FinalResponse, Insight, InsightCategory
from .trace import SensorFrame, SensorTrace, Vec3, camera_positions_for, nearest_frame_index, parse_trace
from .vehicle import DiagnosisFlag, MotionDescription, VehicleDiagnosis, cross_sensor_consistency, gate_range


@dataclass(frozen=True)
class EventReport:
    index: int
    event: CriticalEvent
    frame_t: float
    lidar_description: MotionDescription
    vision_description: MotionDescription
    diagnosis: VehicleDiagnosis
    changes: ChangeReport | None
    assessments: tuple[CausalAssessment, ...]
    skipped_history: tuple[int, ...]
    insights: tuple[Insight, ...]
    response: FinalResponse


@dataclass(frozen=True)
class RunMetadata:
    config_hash: str
    trace_hash: str
    trace_name: str
    backend: str
    backend_counts: dict[str, int]
    fallback_count: int
    schema_violations: int
    transport_failures: int
    credential_missing: int
    errors: tuple[str, ...]
    wall_time: float


@dataclass(frozen=True)
class PipelineReport:
    route_plan: RoutePlan
    events: tuple[EventReport, ...]
    metadata: RunMetadata
    config: PipelineConfig

    def to_json(self) -> str:
        return json.dumps(codec.to_jsonable(self), sort_keys=True, indent=2, allow_nan=False) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "PipelineReport":
        return codec.loads(cls, text)


def without_wall_time(report_json: str) -> dict:
    """Parsed report with the wall-time field removed, for golden comparisons."""
    data = json.loads(report_json)
    data["metadata"].pop("wall_time", None)
    return data


def trace_digest(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


# ---- per-stage helpers -----------------------------------------------------


def _pair_indices(trace: SensorTrace, k: int) -> tuple[int, int]:
    """Frame pair used to describe motion at frame ``k``."""
    if k + 1 < len(trace.frames):
        return k, k + 1
    if k > 0:
        return k - 1, k
    raise DriveFusionError("vehicle reasoning needs at least two frames")


def _deltas(frame: SensorFrame, range_limit: float, gate: float) -> tuple[frozenset[int], dict[int, float]]:
    gated = gate_range(frame.lidar_detections, range_limit)
    lidar = {d.object_id: d.position for d in frame.lidar_detections}
    camera = camera_positions_for(frame, gate)
    return gated, cross_sensor_consistency(gated, lidar, camera)


def _history(trace: SensorTrace, lo: int, hi: int, ids: set[int]) -> dict[int, list[tuple[float, Vec3]]]:
    """Per-object positions over frames ``lo..hi``; LiDAR preferred over camera."""
    out: dict[int, list[tuple[float, Vec3]]] = {}
    for frame in trace.frames[lo : hi + 1]:
        seen = {}
        for d in frame.camera_detections:
            if d.object_id in ids:
                seen.setdefault(d.object_id, d.position)
        for d in frame.lidar_detections:
            if d.object_id in ids:
                seen[d.object_id] = d.position
        for oid, pos in seen.items():
            out.setdefault(oid, []).append((frame.t, pos))
    return out


def derive_insights(
    index: int,
    event: CriticalEvent,
    diagnosis: VehicleDiagnosis,
    assessments: tuple[CausalAssessment, ...],
    config: PipelineConfig,
) -> list[Insight]:
    """Turn stage outputs into categorized insights for the response stage.

    The kinematic event itself is a comfort insight, sensor faults are
    maintenance insights, cautioned causal assessments are safety insights and
    the remaining assessments are efficiency insights.
    """
    t = event.t
    out = [
        Insight(
            f"e{index}-kinematic",
            f"{event.factor.value} event, {event.exceedance:.2f}x threshold",
            InsightCategory.COMFORT,
            max(0.0, event.exceedance - 1.0),
            t,
        )
    ]
    tau = config.vehicle.tau_obj
    flags = set(diagnosis.flags)
    if DiagnosisFlag.SENSOR_MISALIGNMENT in flags:
        worst = max(diagnosis.per_object_delta.values(), default=tau)
        out.append(
            Insight(f"e{index}-misalignment", "camera and lidar positions disagree",
                    InsightCategory.MAINTENANCE, max(0.0, worst / tau - 1.0), t)
        )
    if DiagnosisFlag.LIDAR_FAULT in flags:
        out.append(Insight(f"e{index}-lidar-fault", "lidar reports no objects in range",
                           InsightCategory.MAINTENANCE, 1.0, t))
    if DiagnosisFlag.CAMERA_FAULT in flags:
        out.append(Insight(f"e{index}-camera-fault", "camera objects missing from lidar",
                           InsightCategory.MAINTENANCE, 1.0, t))
    scale = config.environment.severity_bands[1] or 1.0
    for a in assessments:
        magnitude = sum(x * x for x in a.delta_over_window) ** 0.5 / scale
        category = InsightCategory.SAFETY if a.caution else InsightCategory.EFFICIENCY
        out.append(Insight(f"e{index}-object-{a.object_id}", a.rationale, category, magnitude, t))
    return out


# ---- stages ----------------------------------------------------------------


@contextmanager
def _stage(name: str):
    """Tag errors raised inside a stage with the stage name."""
    try:
        yield
    except DriveFusionError as exc:
        if exc.stage is None or exc.stage == "agent":
            exc.stage = name
        raise


@dataclass(frozen=True)
class FiltrationResult:
    plan: RoutePlan
    events: tuple[CriticalEvent, ...]
    frame_indices: tuple[int, ...]


@dataclass(frozen=True)
class VehicleResult:
    pairs: tuple[tuple[int, int], ...]
    lidar: tuple[MotionDescription, ...]
    vision: tuple[MotionDescription, ...]
    diagnoses: tuple[VehicleDiagnosis, ...]


@dataclass(frozen=True)
class EnvironmentResult:
    reports: tuple[ChangeReport | None, ...]
    assessments: tuple[tuple[CausalAssessment, ...], ...]
    skipped: tuple[tuple[int, ...], ...]


def filtration_stage(trace: SensorTrace, config: PipelineConfig, runner: AgentRunner) -> FiltrationResult:
    meta = trace.meta
    with _stage("filtration"):
        plan: RoutePlan = runner.value(
            AgentRole.FILTRATION, roles.filtration_context(meta.avg_speed, meta.complexity, meta.name)
        )
        thresholds = config.filtration.thresholds or plan.thresholds
        events = select_critical_timestamps(trace, thresholds, config.filtration.refractory)
        idx = [nearest_frame_index(trace, e.t, config.filtration.frame_window) for e in events]
    return FiltrationResult(plan, tuple(events), tuple(idx))


def vehicle_stage(
    trace: SensorTrace, config: PipelineConfig, runner: AgentRunner, frame_indices: tuple[int, ...]
) -> VehicleResult:
    """Describe motion per sensor around each event and diagnose the sensors."""
    with _stage("vehicle"):
        pairs = [_pair_indices(trace, k) for k in frame_indices]
        ctx = [roles.descriptor_context(trace.frames[a], trace.frames[b]) for a, b in pairs]
        lidar = [r.structured for r in runner.map(AgentRole.LIDAR_DESCRIPTOR, ctx)]
        vision = [r.structured for r in runner.map(AgentRole.VISION_DESCRIPTOR, ctx)]
        analyzer_ctx = []
        for (a, _), ld, vd in zip(pairs, lidar, vision):
            gated, deltas = _deltas(trace.frames[a], config.vehicle.range_limit, config.correspondence_gate)
            analyzer_ctx.append(roles.analyzer_context(vd, ld, deltas, gated, config.vehicle.expected_min_objects))
        diagnoses = [r.structured for r in runner.map(AgentRole.VEHICLE_ANALYZER, analyzer_ctx)]
    return VehicleResult(tuple(pairs), tuple(lidar), tuple(vision), tuple(diagnoses))


def environment_stage(
    trace: SensorTrace, config: PipelineConfig, runner: AgentRunner, frame_indices: tuple[int, ...]
) -> EnvironmentResult:
    """Changes and their causes over each interval ending at a critical timestamp.

    The first interval starts at the first frame of the trace; an event whose
    frame coincides with the interval start gets no change report.
    """
    n = len(frame_indices)
    with _stage("environment"):
        intervals: list[tuple[int, int] | None] = []
        prev = 0
        for k in frame_indices:
            intervals.append((prev, k) if k > prev else None)
            prev = k
        jobs = [(i, iv) for i, iv in enumerate(intervals) if iv is not None]
        ctx = [roles.change_context(trace.frames[lo], trace.frames[hi]) for _, (lo, hi) in jobs]
        reports: list[ChangeReport | None] = [None] * n
        for (i, _), r in zip(jobs, runner.map(AgentRole.ENV_CHANGE_DETECTOR, ctx)):
            reports[i] = r.structured

        causal_jobs = []
        skipped: list[tuple[int, ...]] = [()] * n
        for i, iv in enumerate(intervals):
            report = reports[i]
            if report is None or not report.changes:
                continue
            ids = {c.object_id for c in report.changes}
            history = _history(trace, iv[0], iv[1], ids)
            skipped[i] = tuple(sorted(ids - history.keys()))
            causal_jobs.append((i, roles.causal_context(report, history, report.t_to - report.t_from)))
        assessments: list[tuple[CausalAssessment, ...]] = [()] * n
        for (i, _), r in zip(causal_jobs, runner.map(AgentRole.CAUSAL_ANALYST, [c for _, c in causal_jobs])):
            assessments[i] = tuple(r.structured)
    return EnvironmentResult(tuple(reports), tuple(assessments), tuple(skipped))


def response_stage(
    config: PipelineConfig,
    runner: AgentRunner,
    events: tuple[CriticalEvent, ...],
    diagnoses: tuple[VehicleDiagnosis, ...],
    assessments: tuple[tuple[CausalAssessment, ...], ...],
) -> tuple[list[list[Insight]], list[FinalResponse]]:
    with _stage("response"):
        insights = [
            derive_insights(i, e, d, a, config) for i, (e, d, a) in enumerate(zip(events, diagnoses, assessments))
        ]
        ctx = [roles.response_context(x) for x in insights]
        responses = [r.structured for r in runner.map(AgentRole.RESPONSE_AGGREGATOR, ctx)]
    return insights, responses


def run_metadata(config: PipelineConfig, runner: AgentRunner, trace: SensorTrace, trace_hash: str, wall: float) -> RunMetadata:
    stats = runner.stats.as_dict()
    return RunMetadata(
        config_hash=config.config_hash(),
        trace_hash=trace_hash,
        trace_name=trace.meta.name,
        backend=config.backend.value,
        backend_counts=stats["backend_counts"],
        fallback_count=stats["fallback_count"],
        schema_violations=stats["schema_violations"],
        transport_failures=stats["transport_failures"],
        credential_missing=stats["credential_missing"],
        errors=tuple(f"{type(e).__name__}: {e}" for e in runner.errors),
        wall_time=wall,
    )


def analyze(
    trace: SensorTrace,
    config: PipelineConfig,
    runner: AgentRunner,
    *,
    trace_hash: str = "",
) -> PipelineReport:
    """Run the four stages in dataflow order and assemble the report."""
    started = time.perf_counter()
    filt = filtration_stage(trace, config, runner)
    veh = vehicle_stage(trace, config, runner, filt.frame_indices)
    env = environment_stage(trace, config, runner, filt.frame_indices)
    insights, responses = response_stage(config, runner, filt.events, veh.diagnoses, env.assessments)
    entries = tuple(
        EventReport(
            i, filt.events[i], trace.frames[veh.pairs[i][0]].t, veh.lidar[i], veh.vision[i], veh.diagnoses[i],
            env.reports[i], env.assessments[i], env.skipped[i], tuple(insights[i]), responses[i],
        )
        for i in range(len(filt.events))
    )
    metadata = run_metadata(config, runner, trace, trace_hash, time.perf_counter() - started)
    return PipelineReport(filt.plan, entries, metadata, config)


def report_path(output_dir: str | os.PathLike, config_hash: str, trace_hash: str) -> Path:
    """First free ``report-<config>-<trace>[-n].json`` name; reports are never overwritten."""
    base = f"report-{config_hash[:12]}-{trace_hash[:12]}"
    out = Path(output_dir)
    candidate = out / f"{base}.json"
    n = 1
    while candidate.exists():
        candidate = out / f"{base}-{n}.json"
        n += 1
    return candidate


def write_report(report: PipelineReport, output_dir: str | os.PathLike) -> Path:
    Path(output_dir).mkdir(parents=True, exist_ok=True)
    text = report.to_json()
    path = report_path(output_dir, report.metadata.config_hash, report.metadata.trace_hash)
    with open(path, "x", encoding="utf-8") as fh:
        fh.write(text)
    return path


def run_pipeline(
    trace_path: str | os.PathLike,
    config: PipelineConfig = PipelineConfig(),
    *,
    runner: AgentRunner | None = None,
    output_dir: str | os.PathLike | None = None,
    write: bool = True,
) -> tuple[PipelineReport, Path | None]:
    """Parse the trace, run every stage and write the report."""
    data = Path(trace_path).read_bytes()
    trace = parse_trace(data)
    runner = runner or config.runner()
    report = analyze(trace, config, runner, trace_hash=trace_digest(data))
    path = write_report(report, output_dir or config.output_dir) if write else None
    return report, path
