"""Agent roles, their context payloads, output types and rule-based handlers.

Contexts are plain JSON values.  Frames inside a context use the trace-file
record layout; every other domain object uses :mod:`drivefusion.codec`.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Callable, Mapping, Sequence

from .. import codec
from ..environment import (
    CausalAssessment,
    ChangeReport,
    EnvironmentRules,
    assess_causes,
    detect_changes,
)
from ..errors import MissingContextField
from ..filtration import RoutePlan, plan_route
from ..response import DEFAULT_POLICY, FinalResponse, Insight, ResponsePolicy, generate_response
from ..trace import CORRESPONDENCE_GATE, SensorFrame, Vec3, frame_from_record, frame_to_record
from ..vehicle import (
    DEFAULT_EXPECTED_MIN_OBJECTS,
    DiagnosisRules,
    MotionDescription,
    VehicleDiagnosis,
    describe_lidar,
    describe_vision,
    diagnose,
)


class AgentRole(str, Enum):
    FILTRATION = "Filtration"
    LIDAR_DESCRIPTOR = "LidarDescriptor"
    VISION_DESCRIPTOR = "VisionDescriptor"
    VEHICLE_ANALYZER = "VehicleAnalyzer"
    ENV_CHANGE_DETECTOR = "EnvChangeDetector"
    CAUSAL_ANALYST = "CausalAnalyst"
    RESPONSE_AGGREGATOR = "ResponseAggregator"


OUTPUT_TYPES: dict[AgentRole, Any] = {
    AgentRole.FILTRATION: RoutePlan,
    AgentRole.LIDAR_DESCRIPTOR: MotionDescription,
    AgentRole.VISION_DESCRIPTOR: MotionDescription,
    AgentRole.VEHICLE_ANALYZER: VehicleDiagnosis,
    AgentRole.ENV_CHANGE_DETECTOR: ChangeReport,
    AgentRole.CAUSAL_ANALYST: list[CausalAssessment],
    AgentRole.RESPONSE_AGGREGATOR: FinalResponse,
}

REQUIRED_FIELDS: dict[AgentRole, tuple[str, ...]] = {
    AgentRole.FILTRATION: ("avg_speed", "complexity"),
    AgentRole.LIDAR_DESCRIPTOR: ("frame_t", "frame_t1"),
    AgentRole.VISION_DESCRIPTOR: ("frame_t", "frame_t1"),
    AgentRole.VEHICLE_ANALYZER: ("vision", "lidar", "deltas", "gated", "expected_min_objects"),
    AgentRole.ENV_CHANGE_DETECTOR: ("frame_prev", "frame_cur"),
    AgentRole.CAUSAL_ANALYST: ("report", "history", "delta_t"),
    AgentRole.RESPONSE_AGGREGATOR: ("insights",),
}

History = Mapping[int, Sequence[tuple[float, Vec3]]]


def require(role: AgentRole, context: Mapping[str, Any]) -> None:
    for name in REQUIRED_FIELDS[AgentRole(role)]:
        if name not in context:
            raise MissingContextField(AgentRole(role).value, name)


# ---- context builders ------------------------------------------------------


def filtration_context(avg_speed: float, complexity: int, route_name: str = "") -> dict:
    return {"route": route_name, "avg_speed": avg_speed, "complexity": complexity}


def descriptor_context(frame_t: SensorFrame, frame_t1: SensorFrame) -> dict:
    return {"frame_t": frame_to_record(frame_t), "frame_t1": frame_to_record(frame_t1)}


def analyzer_context(
    vision: MotionDescription,
    lidar: MotionDescription,
    deltas: Mapping[int, float],
    gated: Sequence[int],
    expected_min_objects: int = DEFAULT_EXPECTED_MIN_OBJECTS,
) -> dict:
    return {
        "vision": codec.to_jsonable(vision),
        "lidar": codec.to_jsonable(lidar),
        "deltas": codec.to_jsonable(dict(deltas)),
        "gated": sorted(gated),
        "expected_min_objects": expected_min_objects,
    }


def change_context(frame_prev: SensorFrame, frame_cur: SensorFrame) -> dict:
    return {"frame_prev": frame_to_record(frame_prev), "frame_cur": frame_to_record(frame_cur)}


def causal_context(report: ChangeReport, history: History, delta_t: float) -> dict:
    return {
        "report": codec.to_jsonable(report),
        "history": {str(k): [[t, list(p)] for t, p in v] for k, v in sorted(history.items())},
        "delta_t": delta_t,
    }


def response_context(insights: Sequence[Insight]) -> dict:
    return {"insights": codec.to_jsonable(list(insights))}


# ---- rule-based handlers ---------------------------------------------------


@dataclass(frozen=True)
class RuleSet:
    """Tunables shared by the deterministic handlers."""

    vehicle: DiagnosisRules = DiagnosisRules()
    environment: EnvironmentRules = EnvironmentRules()
    policy: ResponsePolicy = field(default_factory=lambda: DEFAULT_POLICY)
    correspondence_gate: float = CORRESPONDENCE_GATE


def _frames(ctx, a, b):
    return frame_from_record(ctx[a]), frame_from_record(ctx[b])


def _filtration(ctx, rules: RuleSet):
    return plan_route(float(ctx["avg_speed"]), int(ctx["complexity"]))


def _lidar(ctx, rules: RuleSet):
    return describe_lidar(*_frames(ctx, "frame_t", "frame_t1"), gate=rules.correspondence_gate)


def _vision(ctx, rules: RuleSet):
    return describe_vision(*_frames(ctx, "frame_t", "frame_t1"))


def _analyzer(ctx, rules: RuleSet):
    return diagnose(
        codec.from_jsonable(MotionDescription, ctx["vision"], "$.vision"),
        codec.from_jsonable(MotionDescription, ctx["lidar"], "$.lidar"),
        codec.from_jsonable(dict[int, float], ctx["deltas"], "$.deltas"),
        int(ctx["expected_min_objects"]),
        gated=codec.from_jsonable(list[int], ctx["gated"], "$.gated"),
        rules=rules.vehicle,
    )


def _changes(ctx, rules: RuleSet):
    prev, cur = _frames(ctx, "frame_prev", "frame_cur")
    return detect_changes(
        prev.camera_detections,
        cur.camera_detections,
        prev.lidar_detections,
        cur.lidar_detections,
        t_from=prev.t,
        t_to=cur.t,
        rules=rules.environment,
    )


def _causal(ctx, rules: RuleSet):
    history = codec.from_jsonable(dict[int, list[tuple[float, tuple[float, float, float]]]], ctx["history"], "$.history")
    return assess_causes(
        codec.from_jsonable(ChangeReport, ctx["report"], "$.report"),
        history,
        float(ctx["delta_t"]),
        rules=rules.environment,
    )


def _aggregate(ctx, rules: RuleSet):
    return generate_response(codec.from_jsonable(list[Insight], ctx["insights"], "$.insights"), rules.policy)


HANDLERS: dict[AgentRole, Callable[[Mapping[str, Any], RuleSet], Any]] = {
    AgentRole.FILTRATION: _filtration,
    AgentRole.LIDAR_DESCRIPTOR: _lidar,
    AgentRole.VISION_DESCRIPTOR: _vision,
    AgentRole.VEHICLE_ANALYZER: _analyzer,
    AgentRole.ENV_CHANGE_DETECTOR: _changes,
    AgentRole.CAUSAL_ANALYST: _causal,
    AgentRole.RESPONSE_AGGREGATOR: _aggregate,
}


def run_rules(role: AgentRole, context: Mapping[str, Any], rules: RuleSet = RuleSet()) -> Any:
    role = AgentRole(role)
    require(role, context)
    return HANDLERS[role](context, rules)


def output_problems(role: AgentRole, output: Any, rules: RuleSet = RuleSet()) -> list[str]:
    """Domain-invariant violations of a role's typed output."""
    role = AgentRole(role)
    if role is AgentRole.FILTRATION:
        return output.thresholds.problems()
    if role is AgentRole.CAUSAL_ANALYST:
        return [p for a in output for p in a.problems()]
    if role is AgentRole.RESPONSE_AGGREGATOR:
        return output.problems(rules.policy)
    if role is AgentRole.ENV_CHANGE_DETECTOR:
        return output.problems(rules.environment.severity_bands)
    return output.problems()
