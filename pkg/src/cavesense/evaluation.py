"""Group-rank analysis of match scores and classification metrics."""

from __future__ import annotations

from dataclasses import dataclass
from typing import TYPE_CHECKING, Optional, Sequence

from .errors import ValidationError
from .matching import MatchScore
from .model import ObjectLabel, Taxonomy

if TYPE_CHECKING:
    from .simulate import SimulationLibrary

# Label used for events no simulation is compatible with.
UNKNOWN_LABEL = "Unknown"

TIE_POLICY = "lexicographic-smallest"


@dataclass(frozen=True)
class RankedGroup:
    rank: int
    sdist: int
    record_ids: tuple[str, ...]
    labels: tuple[ObjectLabel, ...]


@dataclass(frozen=True)
class GroupRanking:
    """Scored simulations grouped by identical dissimilarity, best group first."""

    groups: tuple[RankedGroup, ...]

    def rank_of_record(self, record_id: str) -> Optional[int]:
        for group in self.groups:
            if record_id in group.record_ids:
                return group.rank
        return None


def group_ranks(scores: Sequence[MatchScore], lib: "SimulationLibrary") -> GroupRanking:
    """Group scores by exact sdist value; rank 1 is the smallest dissimilarity."""
    if not scores:
        raise ValidationError("group_ranks needs at least one score")
    by_value: dict[int, list[str]] = {}
    for score in scores:
        by_value.setdefault(score.sdist, []).append(score.simulation_id)
    groups = []
    for rank, value in enumerate(sorted(by_value), start=1):
        ids = tuple(sorted(by_value[value]))
        labels = tuple(lib.record_by_id(rid).hypothesis.label for rid in ids)
        groups.append(RankedGroup(rank=rank, sdist=value, record_ids=ids, labels=labels))
    return GroupRanking(groups=tuple(groups))


def true_class_rank(
    ranking: GroupRanking, truth: ObjectLabel, level: str, taxonomy: Taxonomy
) -> Optional[int]:
    """Smallest rank whose group contains the true class at the given level.

    ``level`` is either "type" or a taxonomy scheme name. None when no group
    contains the truth at all.
    """
    if level not in taxonomy.levels():
        raise ValidationError(f"unknown taxonomy level {level!r}; know {taxonomy.levels()}")
    target = taxonomy.project(truth, level)
    if target is None:
        raise ValidationError(f"truth label {truth} cannot be projected to level {level!r}")
    for group in ranking.groups:
        for label in group.labels:
            if taxonomy.project(label, level) == target:
                return group.rank
    return None


@dataclass(frozen=True)
class ClassMetrics:
    label: str
    support: int
    tp: int
    fp: int
    fn: int
    precision: float
    recall: float
    f1: float


@dataclass(frozen=True)
class EvalReport:
    """Per-class and support-weighted macro classification scores."""

    classes: tuple[ClassMetrics, ...]
    weighted_precision: float
    weighted_recall: float
    weighted_f1: float
    accuracy: float
    total: int
    tie_policy: str = TIE_POLICY
    rank_histogram: tuple[tuple[int, int], ...] = ()
    unranked: int = 0


def resolve_prediction(predicted: Sequence[str]) -> str:
    """Collapse a tied prediction set to one deterministic label."""
    if not predicted:
        return UNKNOWN_LABEL
    return min(predicted)


def classification_metrics(
    predictions: Sequence[tuple[Sequence[str], str]],
    ranks: Sequence[Optional[int]] = (),
) -> EvalReport:
    """Weighted macro precision/recall/F1 over (predicted label set, truth) pairs.

    Tied prediction sets collapse to their lexicographically smallest member;
    an empty set becomes the Unknown label. ``ranks``, when given, must align
    with ``predictions`` and fills the group-rank histogram of the report.
    """
    if not predictions:
        raise ValidationError("classification_metrics needs at least one labeled example")
    if ranks and len(ranks) != len(predictions):
        raise ValidationError("ranks must align one-to-one with predictions")

    pairs = [(resolve_prediction(pred), truth) for pred, truth in predictions]
    labels = sorted({t for _, t in pairs} | {p for p, _ in pairs})
    per_class: list[ClassMetrics] = []
    total = len(pairs)
    correct = sum(1 for p, t in pairs if p == t)
    w_precision = w_recall = w_f1 = 0.0
    for label in labels:
        tp = sum(1 for p, t in pairs if p == label and t == label)
        fp = sum(1 for p, t in pairs if p == label and t != label)
        fn = sum(1 for p, t in pairs if p != label and t == label)
        support = tp + fn
        precision = tp / (tp + fp) if tp + fp else 0.0
        recall = tp / (tp + fn) if tp + fn else 0.0
        f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
        per_class.append(
            ClassMetrics(
                label=label, support=support, tp=tp, fp=fp, fn=fn,
                precision=precision, recall=recall, f1=f1,
            )
        )
        weight = support / total
        w_precision += weight * precision
        w_recall += weight * recall
        w_f1 += weight * f1

    histogram: dict[int, int] = {}
    unranked = 0
    for rank in ranks:
        if rank is None:
            unranked += 1
        else:
            histogram[rank] = histogram.get(rank, 0) + 1

    return EvalReport(
        classes=tuple(per_class),
        weighted_precision=w_precision,
        weighted_recall=w_recall,
        weighted_f1=w_f1,
        accuracy=correct / total,
        total=total,
        rank_histogram=tuple(sorted(histogram.items())),
        unranked=unranked,
    )
