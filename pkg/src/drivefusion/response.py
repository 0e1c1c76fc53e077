"""Urgency scoring, top-insight selection and maneuver choice."""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Mapping, Sequence

from .errors import EmptyInsightSet


class InsightCategory(str, Enum):
    SAFETY = "safety"
    MAINTENANCE = "maintenance"
    EFFICIENCY = "efficiency"
    COMFORT = "comfort"


# highest priority first
CATEGORY_PRIORITY = (
    InsightCategory.SAFETY,
    InsightCategory.MAINTENANCE,
    InsightCategory.EFFICIENCY,
    InsightCategory.COMFORT,
)

DEFAULT_WEIGHTS: dict[InsightCategory, float] = {
    InsightCategory.SAFETY: 3.0,
    InsightCategory.MAINTENANCE: 2.0,
    InsightCategory.EFFICIENCY: 1.0,
    InsightCategory.COMFORT: 0.0,
}

INTRUSIVENESS_PENALTY = 0.5


@dataclass(frozen=True)
class Insight:
    id: str
    description: str
    category: InsightCategory
    magnitude: float
    t: float

    def problems(self) -> list[str]:
        if not (isinstance(self.magnitude, (int, float)) and self.magnitude >= 0):
            return [f"insight {self.id}: magnitude must be >= 0"]
        return []


@dataclass(frozen=True)
class CandidateResponse:
    id: str
    action: str
    intrusiveness: float
    risk_reduction: float

    def problems(self) -> list[str]:
        out = []
        for name in ("intrusiveness", "risk_reduction"):
            v = getattr(self, name)
            if not (isinstance(v, (int, float)) and 0.0 <= v <= 1.0):
                out.append(f"candidate {self.id}: {name} must lie in [0, 1], got {v!r}")
        return out


def _c(id_: str, action: str, risk_reduction: float, intrusiveness: float) -> CandidateResponse:
    return CandidateResponse(id_, action, intrusiveness, risk_reduction)


DEFAULT_CATALOG: dict[InsightCategory, tuple[CandidateResponse, ...]] = {
    InsightCategory.SAFETY: (
        _c("emergency-brake", "apply emergency braking", 0.9, 0.9),
        _c("slow-down", "reduce speed and increase headway", 0.6, 0.4),
        _c("yield", "yield to the hazard and hold position", 0.5, 0.3),
    ),
    InsightCategory.MAINTENANCE: (
        _c("pull-over-inspect", "pull over and inspect the sensors", 0.7, 0.8),
        _c("schedule-service", "schedule a sensor service", 0.3, 0.1),
    ),
    InsightCategory.EFFICIENCY: (
        _c("reroute", "reroute around the disturbance", 0.4, 0.3),
        _c("adjust-speed", "adjust cruising speed", 0.3, 0.2),
    ),
    InsightCategory.COMFORT: (
        _c("smooth-acceleration", "smooth acceleration and steering inputs", 0.2, 0.1),
    ),
}


@dataclass(frozen=True)
class ResponsePolicy:
    """Weight table and candidate catalog; defaults are embedded."""

    weights: Mapping[InsightCategory, float] = field(default_factory=lambda: dict(DEFAULT_WEIGHTS))
    catalog: Mapping[InsightCategory, Sequence[CandidateResponse]] = field(
        default_factory=lambda: dict(DEFAULT_CATALOG)
    )

    def weight(self, category: InsightCategory | str) -> float:
        return self.weights[InsightCategory(category)]


DEFAULT_POLICY = ResponsePolicy()


@dataclass(frozen=True)
class FinalResponse:
    top_insight: Insight
    chosen_response: CandidateResponse
    secondary: tuple[Insight, ...]

    def problems(self, policy: ResponsePolicy = DEFAULT_POLICY) -> list[str]:
        out = self.chosen_response.problems()
        for ins in (self.top_insight, *self.secondary):
            out += ins.problems()
        if self.top_insight in self.secondary:
            out.append("top insight repeated among secondary insights")
        keys = [_rank_key(i, policy) for i in self.secondary]
        if keys != sorted(keys):
            out.append("secondary insights not in urgency order")
        allowed = policy.catalog.get(InsightCategory(self.top_insight.category), ())
        if self.chosen_response not in tuple(allowed):
            out.append(f"chosen response {self.chosen_response.id!r} not in the catalog for the top insight")
        return out


def score_urgency(insight: Insight, policy: ResponsePolicy = DEFAULT_POLICY) -> float:
    return policy.weight(insight.category) + min(insight.magnitude, 1.0)


def _rank_key(insight: Insight, policy: ResponsePolicy) -> tuple:
    return (
        -score_urgency(insight, policy),
        CATEGORY_PRIORITY.index(InsightCategory(insight.category)),
        insight.t,
        insight.id,
        insight.magnitude,
        insight.description,
    )


def select_top(
    insights: Iterable[Insight], policy: ResponsePolicy = DEFAULT_POLICY
) -> tuple[Insight, tuple[Insight, ...]]:
    ranked = sorted(insights, key=lambda i: _rank_key(i, policy))
    if not ranked:
        raise EmptyInsightSet()
    return ranked[0], tuple(ranked[1:])


def enumerate_candidates(top: Insight, policy: ResponsePolicy = DEFAULT_POLICY) -> list[CandidateResponse]:
    return list(policy.catalog[InsightCategory(top.category)])


def score_response(phi: CandidateResponse, top: Insight, policy: ResponsePolicy = DEFAULT_POLICY) -> float:
    urgency = min(1.0, policy.weight(top.category) / 3.0 + min(top.magnitude, 1.0))
    return phi.risk_reduction * urgency - INTRUSIVENESS_PENALTY * phi.intrusiveness


def generate_response(insights: Iterable[Insight], policy: ResponsePolicy = DEFAULT_POLICY) -> FinalResponse:
    top, rest = select_top(insights, policy)
    candidates = enumerate_candidates(top, policy)
    if not candidates:
        raise ValueError(f"catalog has no candidates for {top.category}")
    best = candidates[0]
    best_score = score_response(best, top, policy)
    for phi in candidates[1:]:
        s = score_response(phi, top, policy)
        if s > best_score:  # earlier catalog entry wins ties
            best, best_score = phi, s
    return FinalResponse(top, best, rest)
