"""Agent roles behind a single backend contract."""

from .backends import (
    AgentRequest,
    AgentResponse,
    AgentRunner,
    BackendKind,
    DeterministicBackend,
    RemoteBackend,
    RetryPolicy,
    invoke,
    make_request,
)
from .prompts import render_prompt
from .roles import AgentRole, RuleSet, run_rules
from .structured import parse_structured, serialize_structured

__all__ = [
    "AgentRequest",
    "AgentResponse",
    "AgentRole",
    "AgentRunner",
    "BackendKind",
    "DeterministicBackend",
    "RemoteBackend",
    "RetryPolicy",
    "RuleSet",
    "invoke",
    "make_request",
    "parse_structured",
    "render_prompt",
    "run_rules",
    "serialize_structured",
]
