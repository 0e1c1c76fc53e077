"""Sentinel-delimited structured sections inside free-text agent replies."""

from __future__ import annotations

import json
import math
from typing import Any

from .. import codec
from ..errors import FieldTypeMismatch, InvariantViolation, MissingSection
from .roles import OUTPUT_TYPES, AgentRole, RuleSet, output_problems

BEGIN = "<<<STRUCTURED_OUTPUT>>>"
END = "<<<END_STRUCTURED_OUTPUT>>>"


def serialize_structured(role: AgentRole, typed: Any, preamble: str = "") -> str:
    """Render a typed output the way a well-behaved agent is asked to reply."""
    AgentRole(role)
    body = codec.dumps(typed, sort_keys=True, indent=2)
    head = f"{preamble.rstrip()}\n" if preamble else ""
    return f"{head}{BEGIN}\n{body}\n{END}\n"


def extract_section(raw: str) -> str:
    """Text between the first pair of sentinel lines."""
    lines = raw.splitlines()
    stripped = [ln.strip() for ln in lines]
    try:
        start = stripped.index(BEGIN)
        stop = stripped.index(END, start + 1)
    except ValueError:
        raise MissingSection() from None
    return "\n".join(lines[start + 1 : stop])


def _reject_constant(name: str):
    raise ValueError(f"non-finite number {name}")


def _finite_float(text: str) -> float:
    value = float(text)
    if not math.isfinite(value):
        raise ValueError(f"number {text} overflows")
    return value


def parse_structured(role: AgentRole, raw: str, rules: RuleSet = RuleSet()) -> Any:
    """Decode, type-check and invariant-check a role's structured section."""
    role = AgentRole(role)
    section = extract_section(raw)
    try:
        data = json.loads(section, parse_constant=_reject_constant, parse_float=_finite_float)
    except ValueError as exc:
        raise FieldTypeMismatch("$", f"invalid JSON: {exc}") from None
    typed = codec.from_jsonable(OUTPUT_TYPES[role], data)
    problems = output_problems(role, typed, rules)
    if problems:
        raise InvariantViolation(problems)
    return typed
