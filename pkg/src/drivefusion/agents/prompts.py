"""Deterministic prompt templates for every agent role.

A prompt has four parts: shared reasoning guidelines, a role-specific task
statement with a human-readable summary of the context, the full context as
canonical JSON between sentinel lines, and an output-schema footer telling
the model how to format its structured reply.
"""

from __future__ import annotations

import json
from typing import Any, Mapping

from ..errors import MissingContextField
from .roles import REQUIRED_FIELDS, AgentRole, require
from .structured import BEGIN, END

CONTEXT_BEGIN = "<<<CONTEXT>>>"
CONTEXT_END = "<<<END_CONTEXT>>>"
NO_CHANGES = "NO CHANGES DETECTED"

GUIDELINES = (
    "You are one agent in a multi-sensor driving analysis pipeline. Follow these rules:\n"
    "- Identify dynamic traffic elements (vehicles, cyclists, pedestrians) and how they move.\n"
    "- Account for static infrastructure (signs, fixed installations, plants, monitors).\n"
    "- Keep statements objective and concise; avoid subjective or speculative wording."
)

TASKS: dict[AgentRole, str] = {
    AgentRole.FILTRATION: (
        "Classify the route from its average speed and complexity, and derive the kinematic "
        "thresholds (angular velocity deg/s, linear acceleration m/s^2, yaw rate deg/s)."
    ),
    AgentRole.LIDAR_DESCRIPTOR: (
        "Describe how each LiDAR-detected object moves between the two frames. Match objects by "
        "id and proximity; report appeared and disappeared objects and the mean displacement."
    ),
    AgentRole.VISION_DESCRIPTOR: (
        "Describe how each camera-detected object moves between the two frames, matching by id. "
        "Report appeared and disappeared objects and the mean displacement."
    ),
    AgentRole.VEHICLE_ANALYZER: (
        "Compare the LiDAR and camera descriptions. Flag per-object discrepancies above the "
        "tolerance and diagnose sensor faults (lidar_fault, camera_fault, sensor_misalignment) "
        "or report ok."
    ),
    AgentRole.ENV_CHANGE_DETECTOR: (
        "List objects that appeared, disappeared or moved between the two frames, with magnitude, "
        "static/dynamic class and severity, plus the camera/LiDAR agreement at the later frame."
    ),
    AgentRole.CAUSAL_ANALYST: (
        "For every significant change decide whether the object is self-moving or externally "
        "influenced, with a confidence in [0, 1], a caution flag and a one-sentence rationale."
    ),
    AgentRole.RESPONSE_AGGREGATOR: (
        "Rank the insights by urgency, pick the most urgent one and choose the best response "
        "from the catalog for its category."
    ),
}

SCHEMAS: dict[AgentRole, str] = {
    AgentRole.FILTRATION: (
        '{"category": "r1|r2|r3", "thresholds": {"angular_velocity_max": number, '
        '"linear_accel_max": number, "yaw_rate_max": number}}'
    ),
    AgentRole.LIDAR_DESCRIPTOR: (
        '{"t": number, "t_next": number, "source": "lidar", "motions": [{"object_id": int, '
        '"position_before": [x,y,z]|null, "position_after": [x,y,z]|null, "displacement": [x,y,z], '
        '"status": "tracked|appeared|disappeared"}], "mean_displacement": [x,y,z]}'
    ),
    AgentRole.VISION_DESCRIPTOR: (
        '{"t": number, "t_next": number, "source": "vision", "motions": [{"object_id": int, '
        '"position_before": [x,y,z]|null, "position_after": [x,y,z]|null, "displacement": [x,y,z], '
        '"status": "tracked|appeared|disappeared"}], "mean_displacement": [x,y,z]}'
    ),
    AgentRole.VEHICLE_ANALYZER: (
        '{"t": number, "gated_ids": [int], "per_object_delta": {"<id>": number >= 0}, '
        '"flags": ["ok"|"lidar_fault"|"camera_fault"|"sensor_misalignment"], "summary": string}'
    ),
    AgentRole.ENV_CHANGE_DETECTOR: (
        '{"t_from": number, "t_to": number, "changes": [{"object_id": int, '
        '"kind": "appeared|disappeared|moved", "magnitude": number >= 0, '
        '"object_class": "static|dynamic", "severity": "low|medium|high"}], '
        '"agreements": [[[vision_id, lidar_id], number >= 0]]}'
    ),
    AgentRole.CAUSAL_ANALYST: (
        '[{"object_id": int, "origin": "self-moving|externally-influenced", '
        '"confidence": number in [0,1], "caution": bool, "rationale": string, '
        '"delta_over_window": [x,y,z]}]'
    ),
    AgentRole.RESPONSE_AGGREGATOR: (
        '{"top_insight": Insight, "chosen_response": {"id": string, "action": string, '
        '"intrusiveness": number, "risk_reduction": number}, "secondary": [Insight]} where '
        'Insight = {"id": string, "description": string, "category": '
        '"safety|maintenance|efficiency|comfort", "magnitude": number >= 0, "t": number}'
    ),
}


def _fmt(v: Any) -> str:
    if isinstance(v, (list, tuple)):
        return "(" + ", ".join(_fmt(x) for x in v) + ")"
    if isinstance(v, float):
        return f"{v:.3f}"
    return str(v)


def _frame_lines(frame: Mapping[str, Any], label: str) -> list[str]:
    out = [f"{label} t={_fmt(frame['t'])}:"]
    for sensor in ("camera", "lidar"):
        dets = frame.get(sensor, [])
        if not dets:
            out.append(f"  {sensor}: no detections")
        for d in dets:
            out.append(
                f"  {sensor} #{d['id']} {d.get('label') or d['category']} [{d['category']}] "
                f"at {_fmt(d['pos'])} via {d['source']}"
            )
    return out


def _summary(role: AgentRole, ctx: Mapping[str, Any]) -> list[str]:
    if role is AgentRole.FILTRATION:
        return [f"Route {ctx.get('route') or '(unnamed)'}: average speed {_fmt(ctx['avg_speed'])} m/s, "
                f"complexity {ctx['complexity']}."]
    if role in (AgentRole.LIDAR_DESCRIPTOR, AgentRole.VISION_DESCRIPTOR):
        return _frame_lines(ctx["frame_t"], "Frame") + _frame_lines(ctx["frame_t1"], "Next frame")
    if role is AgentRole.ENV_CHANGE_DETECTOR:
        return _frame_lines(ctx["frame_prev"], "Earlier frame") + _frame_lines(ctx["frame_cur"], "Later frame")
    if role is AgentRole.VEHICLE_ANALYZER:
        out = [f"Objects within range: {', '.join(map(str, ctx['gated'])) or 'none'}."]
        for oid, d in sorted(ctx["deltas"].items(), key=lambda kv: int(kv[0])):
            out.append(f"  object {oid}: lidar/camera gap {_fmt(d)} m")
        for key in ("lidar", "vision"):
            motions = ctx[key].get("motions", [])
            out.append(f"{key} description: {len(motions)} object motion(s).")
        return out
    if role is AgentRole.CAUSAL_ANALYST:
        changes = ctx["report"].get("changes", [])
        if not changes:
            return [NO_CHANGES]
        out = [f"Window of {_fmt(ctx['delta_t'])} s ending at t={_fmt(ctx['report']['t_to'])}."]
        for c in changes:
            out.append(
                f"  object {c['object_id']} {c['kind']} ({c['object_class']}), "
                f"magnitude {_fmt(c['magnitude'])} m, severity {c['severity']}"
            )
        return out
    if role is AgentRole.RESPONSE_AGGREGATOR:
        return [
            f"  [{i['category']}] {i['id']}: {i['description']} (magnitude {_fmt(i['magnitude'])}, t={_fmt(i['t'])})"
            for i in ctx["insights"]
        ] or ["no insights"]
    raise ValueError(role)


def render_prompt(role: AgentRole, context: Mapping[str, Any]) -> str:
    """Expand the role template; identical inputs give byte-identical output."""
    role = AgentRole(role)
    require(role, context)
    try:
        summary = _summary(role, context)
    except KeyError as exc:
        raise MissingContextField(role.value, str(exc.args[0])) from None
    payload = json.dumps(context, sort_keys=True, separators=(",", ":"), allow_nan=False)
    parts = [
        GUIDELINES,
        "",
        f"ROLE: {role.value}",
        f"TASK: {TASKS[role]}",
        "",
        "SUMMARY:",
        *summary,
        "",
        CONTEXT_BEGIN,
        payload,
        CONTEXT_END,
        "",
        "OUTPUT SCHEMA:",
        f"Reply with free text if useful, then exactly one JSON document between the lines {BEGIN} and {END}.",
        "Unknown fields are rejected. Schema:",
        SCHEMAS[role],
    ]
    return "\n".join(parts) + "\n"


def extract_role(prompt: str) -> AgentRole:
    for line in prompt.splitlines():
        if line.startswith("ROLE: "):
            return AgentRole(line[len("ROLE: "):].strip())
    raise ValueError("prompt has no ROLE line")


def extract_context(prompt: str) -> dict:
    lines = prompt.splitlines()
    start = lines.index(CONTEXT_BEGIN)
    stop = lines.index(CONTEXT_END, start + 1)
    return json.loads("\n".join(lines[start + 1 : stop]))


assert set(TASKS) == set(SCHEMAS) == set(REQUIRED_FIELDS) == set(AgentRole)
