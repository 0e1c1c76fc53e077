"""Pipeline configuration: a JSON document mirroring :class:`PipelineConfig`.

Missing keys take their defaults; unknown keys are rejected.  The config hash
covers every tunable (everything except ``output_dir``) so reports can be
named by content.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import math
import os
from dataclasses import dataclass, field

from . import codec
from .agents.backends import AgentRunner, BackendKind, DeterministicBackend, RemoteBackend, RetryPolicy
from .agents.roles import RuleSet
from .environment import EnvironmentRules
from .errors import ConfigError, StructuredOutputError
from .filtration import DEFAULT_REFRACTORY, ThresholdSet
from .response import DEFAULT_CATALOG, CandidateResponse, DEFAULT_WEIGHTS, InsightCategory, ResponsePolicy
from .trace import CORRESPONDENCE_GATE
from .vehicle import DEFAULT_EXPECTED_MIN_OBJECTS, DiagnosisRules


@dataclass(frozen=True)
class RemoteConfig:
    endpoint: str = "http://127.0.0.1:8080/v1/chat/completions"
    model: str = "default"
    temperature: float = 0.0
    attempts: int = 3
    backoff: float = 0.5
    timeout: float = 30.0
    max_in_flight: int = 4
    fallback: bool = True


@dataclass(frozen=True)
class FiltrationConfig:
    refractory: float = DEFAULT_REFRACTORY
    thresholds: ThresholdSet | None = None  # overrides the route-derived set
    frame_window: float = 0.5  # max distance from a critical time to its frame


@dataclass(frozen=True)
class VehicleConfig:
    tau_obj: float = DiagnosisRules.tau_obj
    majority: float = DiagnosisRules.majority
    range_limit: float = DiagnosisRules.range_limit
    expected_min_objects: int = DEFAULT_EXPECTED_MIN_OBJECTS


@dataclass(frozen=True)
class ResponseConfig:
    weights: dict[InsightCategory, float] = field(default_factory=lambda: dict(DEFAULT_WEIGHTS))
    catalog: dict[InsightCategory, tuple[CandidateResponse, ...]] = field(default_factory=lambda: dict(DEFAULT_CATALOG))


@dataclass(frozen=True)
class EvalConfig:
    match_radius: float = 2.0


@dataclass(frozen=True)
class PipelineConfig:
    backend: BackendKind = BackendKind.DETERMINISTIC
    remote: RemoteConfig = RemoteConfig()
    filtration: FiltrationConfig = FiltrationConfig()
    vehicle: VehicleConfig = VehicleConfig()
    environment: EnvironmentRules = EnvironmentRules()
    response: ResponseConfig = field(default_factory=ResponseConfig)
    evaluation: EvalConfig = EvalConfig()
    correspondence_gate: float = CORRESPONDENCE_GATE
    seed: int | None = None
    output_dir: str = "reports"

    # ---- validation --------------------------------------------------------

    def problems(self) -> list[str]:
        out = []

        def positive(name, v):
            if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v) or v <= 0:
                out.append(f"{name} must be finite and > 0, got {v!r}")

        def unit(name, v, *, open_low=False):
            ok = isinstance(v, (int, float)) and (0 < v <= 1 if open_low else 0 <= v <= 1)
            if not ok:
                out.append(f"{name} must lie in {'(0, 1]' if open_low else '[0, 1]'}, got {v!r}")

        r = self.remote
        if not r.endpoint.startswith(("http://", "https://")):
            out.append(f"remote.endpoint must be an http(s) URL, got {r.endpoint!r}")
        if not (0.0 <= r.temperature <= 2.0):
            out.append(f"remote.temperature must lie in [0, 2], got {r.temperature!r}")
        if r.attempts < 1:
            out.append("remote.attempts must be >= 1")
        if r.backoff < 0:
            out.append("remote.backoff must be >= 0")
        positive("remote.timeout", r.timeout)
        if r.max_in_flight < 1:
            out.append("remote.max_in_flight must be >= 1")

        f = self.filtration
        if f.refractory < 0:
            out.append("filtration.refractory must be >= 0")
        positive("filtration.frame_window", f.frame_window)
        if f.thresholds is not None:
            out += [f"filtration.thresholds: {p}" for p in f.thresholds.problems()]

        v = self.vehicle
        positive("vehicle.tau_obj", v.tau_obj)
        unit("vehicle.majority", v.majority, open_low=True)
        positive("vehicle.range_limit", v.range_limit)
        if v.expected_min_objects < 0:
            out.append("vehicle.expected_min_objects must be >= 0")

        e = self.environment
        if e.move_epsilon < 0:
            out.append("environment.move_epsilon must be >= 0")
        if e.sigma_sig < 0:
            out.append("environment.sigma_sig must be >= 0")
        low, high = e.severity_bands
        if not (0 <= low <= high):
            out.append("environment.severity_bands must satisfy 0 <= low <= high")
        if not (-1.0 <= e.cosine_min <= 1.0):
            out.append("environment.cosine_min must lie in [-1, 1]")
        positive("environment.proximity", e.proximity)
        if e.sub_intervals < 1:
            out.append("environment.sub_intervals must be >= 1")

        resp = self.response
        for cat in InsightCategory:
            if cat not in resp.weights:
                out.append(f"response.weights missing category {cat.value}")
            elif resp.weights[cat] < 0:
                out.append(f"response.weights.{cat.value} must be >= 0")
            if not resp.catalog.get(cat):
                out.append(f"response.catalog must list at least one candidate for {cat.value}")
            for c in resp.catalog.get(cat, ()):
                out += [f"response.catalog.{cat.value}: {p}" for p in c.problems()]

        positive("evaluation.match_radius", self.evaluation.match_radius)
        positive("correspondence_gate", self.correspondence_gate)
        return out

    def validate(self) -> "PipelineConfig":
        problems = self.problems()
        if problems:
            raise ConfigError("invalid configuration: " + "; ".join(problems))
        return self

    # ---- derived objects ---------------------------------------------------

    def rules(self) -> RuleSet:
        v = self.vehicle
        return RuleSet(
            vehicle=DiagnosisRules(v.tau_obj, v.majority, v.range_limit),
            environment=self.environment,
            policy=ResponsePolicy(dict(self.response.weights), {k: tuple(c) for k, c in self.response.catalog.items()}),
            correspondence_gate=self.correspondence_gate,
        )

    def runner(self, **kw) -> AgentRunner:
        rules = self.rules()
        if self.backend is BackendKind.DETERMINISTIC:
            return AgentRunner(DeterministicBackend(rules), **kw)
        r = self.remote
        backend = RemoteBackend(r.endpoint, r.model, r.temperature, rules=rules)
        return AgentRunner(
            backend,
            policy=RetryPolicy(r.attempts, r.backoff, r.timeout),
            fallback_enabled=r.fallback,
            max_in_flight=r.max_in_flight,
            **kw,
        )

    def replace(self, **changes) -> "PipelineConfig":
        return dataclasses.replace(self, **changes)

    # ---- serialization -----------------------------------------------------

    def to_jsonable(self) -> dict:
        return codec.to_jsonable(self)

    def to_json(self) -> str:
        return json.dumps(self.to_jsonable(), sort_keys=True, indent=2)

    def config_hash(self) -> str:
        data = self.to_jsonable()
        data.pop("output_dir")
        canonical = json.dumps(data, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode()).hexdigest()

    @classmethod
    def from_json(cls, text: str) -> "PipelineConfig":
        try:
            data = json.loads(text)
        except ValueError as exc:
            raise ConfigError(f"configuration is not valid JSON: {exc}") from None
        try:
            cfg = codec.from_jsonable(cls, data, "config")
        except StructuredOutputError as exc:
            raise ConfigError(str(exc)) from None
        return cfg.validate()


def load_config(path: str | os.PathLike | None) -> PipelineConfig:
    if path is None:
        return PipelineConfig()
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read configuration {path}: {exc}") from None
    return PipelineConfig.from_json(text)
