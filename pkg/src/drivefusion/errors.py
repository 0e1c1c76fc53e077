"""Exception hierarchy shared by every stage of the pipeline."""

from __future__ import annotations


class DriveFusionError(Exception):
    """Base class; ``stage`` names the pipeline stage that raised, when known."""

    stage: str | None = None


# ---- trace ingestion -------------------------------------------------------


class TraceError(DriveFusionError):
    stage = "trace"


class MalformedRecord(TraceError):
    def __init__(self, line: int, detail: str):
        self.line = line
        self.detail = detail
        super().__init__(f"malformed record at line {line}: {detail}")


class NonMonotonicTimestamp(TraceError):
    def __init__(self, stream: str, index: int, line: int | None = None):
        self.stream = stream
        self.index = index
        self.line = line
        where = f" (line {line})" if line is not None else ""
        super().__init__(f"non-monotonic timestamp in {stream} stream at index {index}{where}")


class UnknownCategory(TraceError):
    def __init__(self, value: object, line: int | None = None):
        self.value = value
        self.line = line
        super().__init__(f"unknown object category {value!r}")


class DuplicateDetection(TraceError):
    def __init__(self, t: float, object_id: int, source: str):
        self.t = t
        self.object_id = object_id
        self.source = source
        super().__init__(f"duplicate detection id={object_id} source={source} in frame t={t}")


class NoFrameInWindow(TraceError):
    def __init__(self, t: float, window: float):
        self.t = t
        self.window = window
        super().__init__(f"no frame within {window}s of t={t}")


# ---- filtration ------------------------------------------------------------


class EmptyImuStream(DriveFusionError):
    stage = "filtration"

    def __init__(self):
        super().__init__("trace has no IMU samples")


# ---- vehicle reasoning -----------------------------------------------------


class TimestampMismatch(DriveFusionError):
    stage = "vehicle"

    def __init__(self, vision_t: float, lidar_t: float):
        self.vision_t = vision_t
        self.lidar_t = lidar_t
        super().__init__(f"vision description at t={vision_t} but lidar at t={lidar_t}")


# ---- environmental reasoning -----------------------------------------------


class MissingHistory(DriveFusionError):
    stage = "environment"

    def __init__(self, object_id: int, t: float, delta_t: float):
        self.object_id = object_id
        self.t = t
        self.delta_t = delta_t
        super().__init__(f"object {object_id} has no history sample within [{t - delta_t}, {t}]")

    def __eq__(self, other):
        return (
            isinstance(other, MissingHistory)
            and (self.object_id, self.t, self.delta_t) == (other.object_id, other.t, other.delta_t)
        )

    def __hash__(self):
        return hash((self.object_id, self.t, self.delta_t))


# ---- response generation ---------------------------------------------------


class EmptyInsightSet(DriveFusionError):
    stage = "response"

    def __init__(self):
        super().__init__("at least one insight is required")


# ---- agent layer -----------------------------------------------------------


class AgentError(DriveFusionError):
    stage = "agent"


class MissingContextField(AgentError):
    def __init__(self, role: str, field: str):
        self.role = role
        self.field = field
        super().__init__(f"{role} prompt requires context field {field!r}")


class StructuredOutputError(AgentError):
    """Raised when a structured agent payload cannot be accepted."""


class MissingSection(StructuredOutputError):
    def __init__(self, detail: str = "structured section delimiters not found"):
        super().__init__(detail)


class FieldTypeMismatch(StructuredOutputError):
    def __init__(self, path: str, detail: str):
        self.path = path
        super().__init__(f"{path}: {detail}")


class InvariantViolation(StructuredOutputError):
    def __init__(self, problems: list[str]):
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))


class SchemaViolation(AgentError):
    def __init__(self, role: str, details: str):
        self.role = role
        self.details = details
        super().__init__(f"{role}: {details}")


class TransportFailure(AgentError):
    def __init__(self, detail: str, attempts: int):
        self.detail = detail
        self.attempts = attempts
        super().__init__(f"remote backend failed after {attempts} attempt(s): {detail}")


class CredentialMissing(AgentError):
    def __init__(self, variable: str):
        self.variable = variable
        super().__init__(f"environment variable {variable} is not set")


# ---- synthesis / evaluation / config ---------------------------------------


class InvalidSpec(DriveFusionError):
    stage = "synth"

    def __init__(self, details: str):
        self.details = details
        super().__init__(details)


class OutOfRange(DriveFusionError):
    stage = "synth"

    def __init__(self, t: float, duration: float):
        self.t = t
        self.duration = duration
        super().__init__(f"maneuver time {t} outside [0, {duration}]")


class CaseMismatch(DriveFusionError):
    stage = "eval"

    def __init__(self, missing_predictions: list, missing_gold: list):
        self.missing_predictions = missing_predictions
        self.missing_gold = missing_gold
        super().__init__(
            f"unaligned case ids: no prediction for {missing_predictions}, no gold for {missing_gold}"
        )


class ConfigError(DriveFusionError):
    stage = "config"
