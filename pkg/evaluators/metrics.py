import math
from dataclasses import dataclass, field
from typing import Any, Dict, List, Sequence, Tuple

import numpy as np

from helpers.errors import ContractError, UndefinedMetricError

Point = Tuple[float, float]


@dataclass
class MetricsReport:
    tp: int
    fp: int
    tn: int
    fn: int
    f1: float
    auc: float
    sensitivity: float
    specificity: float
    average_precision: float
    threshold: float = 0.5
    roc_points: List[Point] = field(default_factory=list)
    pr_points: List[Point] = field(default_factory=list)

    def metrics_scores(self) -> Dict[str, Any]:
        """Scalar metrics keyed by name, as written to history and ablation tables"""
        return {
            'f1': self.f1,
            'auc': self.auc,
            'sens': self.sensitivity,
            'spec': self.specificity,
            'ap': self.average_precision,
            'tp': self.tp,
            'fp': self.fp,
            'tn': self.tn,
            'fn': self.fn,
        }


def _ratio(numerator: int, denominator: int) -> float:
    return numerator / denominator if denominator else 0.0


def curve_points(scores: np.ndarray, labels: np.ndarray) -> Tuple[List[Point], List[Point]]:
    """
    ROC (fpr, tpr) and PR (recall, precision) points swept over every distinct
    score, highest first; tied scores move together
    """
    positives = int(labels.sum())
    negatives = int(labels.size - positives)
    order = np.argsort(-scores, kind='stable')
    sorted_scores = scores[order]
    sorted_labels = labels[order]

    # Last index of each run of equal scores
    boundaries = np.flatnonzero(np.diff(sorted_scores) != 0)
    boundaries = np.append(boundaries, sorted_scores.size - 1)
    tps = np.cumsum(sorted_labels)[boundaries]
    fps = (boundaries + 1) - tps

    roc = [(0.0, 0.0)]
    pr = [(0.0, 1.0)]
    for tp, fp in zip(tps, fps):
        roc.append((_ratio(int(fp), negatives), _ratio(int(tp), positives)))
        pr.append((_ratio(int(tp), positives), _ratio(int(tp), int(tp + fp))))
    return roc, pr


def trapezoid_area(points: Sequence[Point]) -> float:
    area = 0.0
    for (x0, y0), (x1, y1) in zip(points[:-1], points[1:]):
        area += (x1 - x0) * (y0 + y1) / 2.0
    return area


def step_area(points: Sequence[Point]) -> float:
    """Right-continuous step integral, i.e. average precision over PR points"""
    area = 0.0
    for (r0, _), (r1, p1) in zip(points[:-1], points[1:]):
        area += (r1 - r0) * p1
    return area


def compute_metrics(scores: Sequence[float], labels: Sequence[int], threshold: float = 0.5) -> MetricsReport:
    """
    Confusion-based metrics at a threshold plus threshold-free ROC/PR summaries

    Args:
        scores (Sequence[float]): Positive-class probability per patient
        labels (Sequence[int]): Binary ground truth
        threshold (float): Scores at or above it count as positive

    Returns:
        MetricsReport

    Raises:
        ContractError: If lengths differ or labels are not binary
        UndefinedMetricError: If only one class is present; the exception
            carries the report with auc and average precision set to NaN
    """
    scores = np.asarray(scores, dtype=np.float64).reshape(-1)
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    if scores.size != labels.size:
        raise ContractError(f"{scores.size} scores but {labels.size} labels")
    if not np.isin(labels, (0, 1)).all():
        raise ContractError("labels must be 0 or 1")

    predicted = scores >= threshold
    tp = int(np.sum(predicted & (labels == 1)))
    fp = int(np.sum(predicted & (labels == 0)))
    tn = int(np.sum(~predicted & (labels == 0)))
    fn = int(np.sum(~predicted & (labels == 1)))

    report = MetricsReport(
        tp=tp, fp=fp, tn=tn, fn=fn,
        f1=_ratio(2 * tp, 2 * tp + fp + fn),
        auc=math.nan,
        sensitivity=_ratio(tp, tp + fn),
        specificity=_ratio(tn, tn + fp),
        average_precision=math.nan,
        threshold=threshold,
    )

    if labels.size == 0 or labels.min() == labels.max():
        raise UndefinedMetricError("AUC is undefined when only one class is present", report=report)

    report.roc_points, report.pr_points = curve_points(scores, labels)
    report.auc = trapezoid_area(report.roc_points)
    report.average_precision = step_area(report.pr_points)
    return report
