"""One invocation contract for every role, with a rule-based and a remote backend.

The remote backend posts a chat-completion style request and expects the
reply to carry a sentinel-delimited structured section.  Transport errors and
unusable replies are retried; when the attempts are spent the deterministic
backend answers instead and the failure is recorded on the response.
"""

from __future__ import annotations

import hashlib
import itertools
import logging
import os
import threading
import time
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Callable, Mapping, Sequence

import httpx

from ..errors import (
    AgentError,
    CredentialMissing,
    SchemaViolation,
    StructuredOutputError,
    TransportFailure,
)
from .prompts import render_prompt
from .roles import AgentRole, RuleSet, run_rules
from .structured import parse_structured, serialize_structured

log = logging.getLogger(__name__)

API_KEY_VARIABLE = "DRIVEAGENT_API_KEY"
DEFAULT_MAX_IN_FLIGHT = 4


class BackendKind(str, Enum):
    DETERMINISTIC = "deterministic"
    REMOTE = "remote"


@dataclass(frozen=True)
class RetryPolicy:
    attempts: int = 3
    backoff: float = 0.5  # first delay; doubles after each failed attempt
    timeout: float = 30.0  # per request, seconds

    def delay(self, attempt: int) -> float:
        return self.backoff * (2**attempt)


@dataclass(frozen=True)
class AgentRequest:
    role: AgentRole
    context: Mapping[str, Any]
    instruction: str
    correlation_id: str


_sequence = itertools.count()


def make_request(role: AgentRole, context: Mapping[str, Any]) -> AgentRequest:
    role = AgentRole(role)
    instruction = render_prompt(role, context)
    digest = hashlib.sha256(instruction.encode()).hexdigest()[:12]
    return AgentRequest(role, context, instruction, f"{role.value}-{digest}-{next(_sequence)}")


@dataclass(frozen=True)
class AgentResponse:
    role: AgentRole
    structured: Any
    raw: str
    backend: BackendKind
    latency: float
    correlation_id: str = ""
    errors: tuple[AgentError, ...] = ()
    fallback: bool = False


class DeterministicBackend:
    """Rule-based answers computed by the owning module's operations."""

    kind = BackendKind.DETERMINISTIC

    def __init__(self, rules: RuleSet = RuleSet()):
        self.rules = rules

    def answer(self, request: AgentRequest) -> tuple[Any, str]:
        typed = run_rules(request.role, request.context, self.rules)
        return typed, serialize_structured(request.role, typed)


class _Unusable(Exception):
    """Reply arrived but carries no usable message text."""


class RemoteBackend:
    """Chat-completion client.  The credential comes from DRIVEAGENT_API_KEY."""

    kind = BackendKind.REMOTE

    def __init__(
        self,
        endpoint: str,
        model: str,
        temperature: float = 0.0,
        *,
        api_key: str | None = None,
        rules: RuleSet = RuleSet(),
        transport: httpx.BaseTransport | None = None,
    ):
        self.endpoint = endpoint
        self.model = model
        self.temperature = temperature
        self._api_key = api_key
        self.rules = rules
        self._transport = transport

    def credential(self) -> str:
        key = self._api_key if self._api_key is not None else os.environ.get(API_KEY_VARIABLE)
        if not key:
            raise CredentialMissing(API_KEY_VARIABLE)
        return key

    def body(self, request: AgentRequest) -> dict:
        return {
            "model": self.model,
            "messages": [{"role": "user", "content": request.instruction}],
            "temperature": self.temperature,
        }

    def send(self, request: AgentRequest, timeout: float) -> str:
        headers = {
            "Authorization": f"Bearer {self.credential()}",
            "X-Correlation-ID": request.correlation_id,
        }
        with httpx.Client(timeout=timeout, transport=self._transport) as client:
            resp = client.post(self.endpoint, json=self.body(request), headers=headers)
        resp.raise_for_status()
        echoed = resp.headers.get("X-Correlation-ID")
        if echoed is not None and echoed != request.correlation_id:
            raise _Unusable(f"correlation id mismatch: sent {request.correlation_id}, got {echoed}")
        try:
            return resp.json()["choices"][0]["message"]["content"]
        except (ValueError, KeyError, IndexError, TypeError) as exc:
            raise _Unusable(f"reply is not a chat completion: {exc!r}") from None


Backend = DeterministicBackend | RemoteBackend


def invoke(
    backend: Backend,
    request: AgentRequest,
    policy: RetryPolicy = RetryPolicy(),
    *,
    fallback: DeterministicBackend | None = None,
    sleep: Callable[[float], None] = time.sleep,
) -> AgentResponse:
    """Answer one request; never raises while a fallback backend is available.

    Without a fallback, an exhausted remote backend raises the last
    :class:`SchemaViolation` or a :class:`TransportFailure`.
    """
    start = time.perf_counter()
    if isinstance(backend, DeterministicBackend):
        typed, raw = backend.answer(request)
        return AgentResponse(
            request.role, typed, raw, backend.kind, time.perf_counter() - start, request.correlation_id
        )

    errors: list[AgentError] = []
    try:
        backend.credential()
    except CredentialMissing as exc:
        if fallback is None:
            raise
        errors.append(exc)
    else:
        transport_detail = None
        for attempt in range(policy.attempts):
            try:
                raw = backend.send(request, policy.timeout)
                typed = parse_structured(request.role, raw, backend.rules)
                return AgentResponse(
                    request.role, typed, raw, backend.kind, time.perf_counter() - start,
                    request.correlation_id, tuple(errors),
                )
            except (StructuredOutputError, _Unusable) as exc:
                errors.append(SchemaViolation(request.role.value, str(exc)))
                transport_detail = None
            except httpx.HTTPError as exc:
                transport_detail = f"{type(exc).__name__}: {exc}"
                log.info("attempt %d for %s failed: %s", attempt + 1, request.correlation_id, transport_detail)
            if attempt + 1 < policy.attempts:
                sleep(policy.delay(attempt))
        if transport_detail is not None:
            errors.append(TransportFailure(transport_detail, policy.attempts))
        if fallback is None:
            raise errors[-1]

    log.warning("%s: falling back to deterministic rules after %d error(s)", request.correlation_id, len(errors))
    typed, raw = fallback.answer(request)
    return AgentResponse(
        request.role, typed, raw, BackendKind.DETERMINISTIC, time.perf_counter() - start,
        request.correlation_id, tuple(errors), fallback=True,
    )


@dataclass
class RunnerStats:
    backend_counts: Counter = field(default_factory=Counter)
    fallback_count: int = 0
    schema_violations: int = 0
    transport_failures: int = 0
    credential_missing: int = 0

    def as_dict(self) -> dict:
        return {
            "backend_counts": {k: self.backend_counts.get(k, 0) for k in (b.value for b in BackendKind)},
            "fallback_count": self.fallback_count,
            "schema_violations": self.schema_violations,
            "transport_failures": self.transport_failures,
            "credential_missing": self.credential_missing,
        }


class AgentRunner:
    """Dispatches role requests to a backend and keeps usage statistics.

    Remote calls in :meth:`map` run concurrently, bounded by ``max_in_flight``.
    """

    def __init__(
        self,
        backend: Backend,
        *,
        policy: RetryPolicy = RetryPolicy(),
        fallback_enabled: bool = True,
        max_in_flight: int = DEFAULT_MAX_IN_FLIGHT,
        sleep: Callable[[float], None] = time.sleep,
    ):
        if max_in_flight < 1:
            raise ValueError("max_in_flight must be >= 1")
        self.backend = backend
        self.rules = backend.rules
        self.policy = policy
        self.fallback = DeterministicBackend(backend.rules) if fallback_enabled else None
        self.max_in_flight = max_in_flight
        self.sleep = sleep
        self.stats = RunnerStats()
        self.errors: list[AgentError] = []
        self._lock = threading.Lock()

    def _record(self, response: AgentResponse) -> AgentResponse:
        with self._lock:
            self.stats.backend_counts[response.backend.value] += 1
            self.stats.fallback_count += response.fallback
            for err in response.errors:
                self.errors.append(err)
                if isinstance(err, SchemaViolation):
                    self.stats.schema_violations += 1
                elif isinstance(err, TransportFailure):
                    self.stats.transport_failures += 1
                elif isinstance(err, CredentialMissing):
                    self.stats.credential_missing += 1
        return response

    def call(self, role: AgentRole, context: Mapping[str, Any]) -> AgentResponse:
        request = make_request(role, context)
        response = invoke(self.backend, request, self.policy, fallback=self.fallback, sleep=self.sleep)
        return self._record(response)

    def map(self, role: AgentRole, contexts: Sequence[Mapping[str, Any]]) -> list[AgentResponse]:
        if isinstance(self.backend, DeterministicBackend) or self.max_in_flight == 1 or len(contexts) < 2:
            return [self.call(role, c) for c in contexts]
        requests = [make_request(role, c) for c in contexts]
        with ThreadPoolExecutor(max_workers=self.max_in_flight) as pool:
            futures = {
                r.correlation_id: pool.submit(
                    invoke, self.backend, r, self.policy, fallback=self.fallback, sleep=self.sleep
                )
                for r in requests
            }
            by_id = {cid: f.result() for cid, f in futures.items()}
        return [self._record(by_id[r.correlation_id]) for r in requests]

    def value(self, role: AgentRole, context: Mapping[str, Any]) -> Any:
        return self.call(role, context).structured
