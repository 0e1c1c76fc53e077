"""Detection precision/recall/F1 and per-partition reasoning accuracy."""

from __future__ import annotations

import math
from collections import defaultdict
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Mapping, Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment

from . import codec
from .errors import CaseMismatch
from .trace import Category

DEFAULT_MATCH_RADIUS = 2.0

Detection = tuple[Category, Sequence[float]]


class Aggregation(str, Enum):
    MICRO = "micro"
    MACRO = "macro"


class MatchStrategy(str, Enum):
    OPTIMAL = "optimal"  # maximum matched pairs, then minimum total distance
    GREEDY = "greedy"  # ascending distance, first come first served


@dataclass(frozen=True)
class Counts:
    tp: int = 0
    fp: int = 0
    fn: int = 0

    def __add__(self, other: "Counts") -> "Counts":
        return Counts(self.tp + other.tp, self.fp + other.fp, self.fn + other.fn)

    def problems(self) -> list[str]:
        return [f"{k} must be a non-negative integer" for k in ("tp", "fp", "fn")
                if not isinstance(getattr(self, k), int) or getattr(self, k) < 0]


@dataclass(frozen=True)
class ConfusionCounts:
    per_category: dict[Category, Counts] = field(default_factory=dict)

    def __add__(self, other: "ConfusionCounts") -> "ConfusionCounts":
        merged = dict(self.per_category)
        for cat, c in other.per_category.items():
            merged[cat] = merged.get(cat, Counts()) + c
        return ConfusionCounts(merged)

    def total(self) -> Counts:
        out = Counts()
        for c in self.per_category.values():
            out = out + c
        return out

    def problems(self) -> list[str]:
        return [f"{Category(cat).value}: {p}" for cat, c in self.per_category.items() for p in c.problems()]


@dataclass(frozen=True)
class Scores:
    precision: float
    recall: float
    f1: float


@dataclass(frozen=True)
class DetectionMetrics:
    per_category: dict[Category, Scores]
    aggregate: Scores
    mode: Aggregation


def _ratio(num: int, den: int) -> float:
    return num / den if den else 0.0


def scores_for(c: Counts) -> Scores:
    p = _ratio(c.tp, c.tp + c.fp)
    r = _ratio(c.tp, c.tp + c.fn)
    f1 = 2 * p * r / (p + r) if p + r > 0 else 0.0
    return Scores(p, r, f1)


def compute_metrics(counts: ConfusionCounts, mode: Aggregation | str = Aggregation.MICRO) -> DetectionMetrics:
    """Per-category scores plus a micro (pooled counts) or macro (mean of scores) aggregate."""
    mode = Aggregation(mode)
    per = {Category(cat): scores_for(c) for cat, c in sorted(counts.per_category.items(), key=lambda kv: Category(kv[0]).value)}
    if mode is Aggregation.MICRO:
        agg = scores_for(counts.total())
    elif per:
        n = len(per)
        agg = Scores(
            math.fsum(s.precision for s in per.values()) / n,
            math.fsum(s.recall for s in per.values()) / n,
            math.fsum(s.f1 for s in per.values()) / n,
        )
    else:
        agg = Scores(0.0, 0.0, 0.0)
    return DetectionMetrics(per, agg, mode)


def _distances(pred: Sequence[Sequence[float]], gold: Sequence[Sequence[float]]) -> np.ndarray:
    if not pred or not gold:
        return np.zeros((len(pred), len(gold)))
    a = np.asarray(pred, dtype=float)
    b = np.asarray(gold, dtype=float)
    return np.sqrt(((a[:, None, :] - b[None, :, :]) ** 2).sum(axis=2))


def optimal_pairs(pred, gold, radius: float) -> list[tuple[int, int]]:
    """Maximum-cardinality matching within ``radius``, ties broken by total distance."""
    d = _distances(pred, gold)
    if d.size == 0:
        return []
    # any out-of-radius pair costs more than every feasible pair combined, so the
    # minimum-cost assignment first maximizes the number of feasible pairs
    big = radius * (min(d.shape) + 1) + 1.0
    cost = np.where(d <= radius, d, big)
    rows, cols = linear_sum_assignment(cost)
    return [(int(i), int(j)) for i, j in zip(rows, cols) if d[i, j] <= radius]


def greedy_pairs(pred, gold, radius: float) -> list[tuple[int, int]]:
    d = _distances(pred, gold)
    candidates = sorted((d[i, j], i, j) for i in range(d.shape[0]) for j in range(d.shape[1]) if d[i, j] <= radius)
    used_p, used_g, out = set(), set(), []
    for _, i, j in candidates:
        if i not in used_p and j not in used_g:
            used_p.add(i)
            used_g.add(j)
            out.append((i, j))
    return out


def match_detections(
    predicted: Iterable[Detection],
    gold: Iterable[Detection],
    radius: float = DEFAULT_MATCH_RADIUS,
    strategy: MatchStrategy | str = MatchStrategy.OPTIMAL,
) -> ConfusionCounts:
    """Within-category matching of predicted to gold positions."""
    if radius <= 0:
        raise ValueError("radius must be positive")
    pairer = optimal_pairs if MatchStrategy(strategy) is MatchStrategy.OPTIMAL else greedy_pairs
    by_cat_p: dict[Category, list] = defaultdict(list)
    by_cat_g: dict[Category, list] = defaultdict(list)
    for cat, pos in predicted:
        by_cat_p[Category(cat)].append(tuple(pos))
    for cat, pos in gold:
        by_cat_g[Category(cat)].append(tuple(pos))
    out = {}
    for cat in sorted(by_cat_p.keys() | by_cat_g.keys(), key=lambda c: c.value):
        p, g = by_cat_p[cat], by_cat_g[cat]
        tp = len(pairer(p, g, radius))
        out[cat] = Counts(tp, len(p) - tp, len(g) - tp)
    return ConfusionCounts(out)


# ---- reasoning accuracy ----------------------------------------------------


class ReasoningTask(str, Enum):
    VEHICLE_LIDAR = "vehicle-lidar"
    VEHICLE_VISION = "vehicle-vision"
    ENVIRONMENTAL = "environmental"


@dataclass(frozen=True)
class TaskAccuracy:
    task: ReasoningTask
    partition: str
    correct: int
    total: int

    @property
    def accuracy(self) -> float:
        return self.correct / self.total

    def problems(self) -> list[str]:
        out = []
        if self.total <= 0:
            out.append("total must be > 0")
        if not 0 <= self.correct <= self.total:
            out.append("correct must lie in [0, total]")
        return out


def reasoning_accuracy(
    predictions: Mapping[str, str],
    gold: Mapping[str, str],
    task: ReasoningTask | str,
    partition: str,
) -> TaskAccuracy:
    """Exact-match accuracy of per-case verdicts keyed by case id."""
    missing_pred = sorted(gold.keys() - predictions.keys())
    missing_gold = sorted(predictions.keys() - gold.keys())
    if missing_pred or missing_gold:
        raise CaseMismatch(missing_pred, missing_gold)
    if not gold:
        raise ValueError("at least one case is required")
    correct = sum(predictions[k] == gold[k] for k in gold)
    return TaskAccuracy(ReasoningTask(task), partition, correct, len(gold))


# ---- evaluation documents --------------------------------------------------


@dataclass(frozen=True)
class DetectionRecord:
    frame: str
    category: Category
    position: tuple[float, float, float]


@dataclass(frozen=True)
class CaseRecord:
    task: ReasoningTask
    partition: str
    case: str
    verdict: str


@dataclass(frozen=True)
class EvalDocument:
    """Predictions or gold labels: detections per frame and per-case verdicts."""

    detections: tuple[DetectionRecord, ...] = ()
    cases: tuple[CaseRecord, ...] = ()


@dataclass(frozen=True)
class EvalReport:
    counts: ConfusionCounts
    micro: DetectionMetrics
    macro: DetectionMetrics
    accuracies: tuple[TaskAccuracy, ...]
    match_radius: float
    strategy: MatchStrategy


def evaluate(
    predicted: EvalDocument,
    gold: EvalDocument,
    radius: float = DEFAULT_MATCH_RADIUS,
    strategy: MatchStrategy | str = MatchStrategy.OPTIMAL,
) -> EvalReport:
    """Detection metrics (frame by frame, both aggregations) and reasoning accuracies."""
    frames_p: dict[str, list] = defaultdict(list)
    frames_g: dict[str, list] = defaultdict(list)
    for d in predicted.detections:
        frames_p[d.frame].append((d.category, d.position))
    for d in gold.detections:
        frames_g[d.frame].append((d.category, d.position))
    counts = ConfusionCounts()
    for frame in sorted(frames_p.keys() | frames_g.keys()):
        counts = counts + match_detections(frames_p[frame], frames_g[frame], radius, strategy)

    groups_p: dict[tuple, dict[str, str]] = defaultdict(dict)
    groups_g: dict[tuple, dict[str, str]] = defaultdict(dict)
    for c in predicted.cases:
        groups_p[(ReasoningTask(c.task), c.partition)][c.case] = c.verdict
    for c in gold.cases:
        groups_g[(ReasoningTask(c.task), c.partition)][c.case] = c.verdict
    accuracies = tuple(
        reasoning_accuracy(groups_p[key], groups_g[key], *key)
        for key in sorted(groups_p.keys() | groups_g.keys(), key=lambda k: (k[0].value, k[1]))
    )
    return EvalReport(
        counts,
        compute_metrics(counts, Aggregation.MICRO),
        compute_metrics(counts, Aggregation.MACRO),
        accuracies,
        radius,
        MatchStrategy(strategy),
    )


def report_to_jsonable(report: EvalReport) -> dict:
    """Report JSON with accuracies spelled out next to their counts."""
    data = codec.to_jsonable(report)
    for item, acc in zip(data["accuracies"], report.accuracies):
        item["accuracy"] = acc.accuracy
    return data


def documents_from_run(report, truth) -> tuple[EvalDocument, EvalDocument]:
    """Prediction and gold documents for a pipeline report on a synthetic trace.

    ``report`` is a :class:`~drivefusion.pipeline.PipelineReport` and ``truth``
    the scenario's :class:`~drivefusion.synth.GroundTruth`.  Cases are the
    critical events (both vehicle tasks) and the causal assessments
    (environmental task), partitioned by route name.
    """
    from .vehicle import DiagnosisFlag

    partition = report.metadata.trace_name or "route"
    pred, gold = [], []
    for entry in report.events:
        case = f"e{entry.index}"
        label = truth.label_at(entry.frame_t)
        flags = set(entry.diagnosis.flags)
        status = label.status.value
        pred.append(CaseRecord(ReasoningTask.VEHICLE_VISION, partition, case,
                               "misaligned" if DiagnosisFlag.SENSOR_MISALIGNMENT in flags else "ok"))
        gold.append(CaseRecord(ReasoningTask.VEHICLE_VISION, partition, case,
                               "misaligned" if status == "misaligned" else "ok"))
        pred.append(CaseRecord(ReasoningTask.VEHICLE_LIDAR, partition, case,
                               "lidar_fault" if DiagnosisFlag.LIDAR_FAULT in flags else "ok"))
        gold.append(CaseRecord(ReasoningTask.VEHICLE_LIDAR, partition, case,
                               "lidar_fault" if status == "lidar_fault" else "ok"))
        for a in entry.assessments:
            obj_case = f"{case}-object-{a.object_id}"
            expected = truth.origins.get(a.object_id)
            pred.append(CaseRecord(ReasoningTask.ENVIRONMENTAL, partition, obj_case, a.origin.value))
            gold.append(CaseRecord(ReasoningTask.ENVIRONMENTAL, partition, obj_case,
                                   expected.value if expected is not None else "unknown"))
    return EvalDocument(cases=tuple(pred)), EvalDocument(cases=tuple(gold))
