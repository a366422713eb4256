"""
Score extraction and evaluation metrics.

Bin i of a score histogram carries score value i (1..10). Correlations are
computed on mean scores in double precision.
"""
import logging
from dataclasses import dataclass, field
from typing import List, Sequence, Union

import numpy as np
from scipy.stats import pearsonr, rankdata

from gatiaa.graph.feature_graph import NUM_BINS, ScoreHistogram
from gatiaa.utils.errors import MetricError

logger = logging.getLogger(__name__)

SCORE_VALUES = np.arange(1, NUM_BINS + 1, dtype=np.float64)
DEFAULT_THRESHOLD = 5.0

HistogramLike = Union[ScoreHistogram, Sequence[float], np.ndarray]


def mean_score(histogram: HistogramLike) -> float:
    """Weighted average sum(i * h_i) of a normalised histogram."""
    bins = histogram.bins if isinstance(histogram, ScoreHistogram) else np.asarray(histogram, np.float64)
    if bins.shape != (NUM_BINS,):
        raise MetricError(f"histogram needs {NUM_BINS} bins, got shape {bins.shape}")
    if np.any(bins < 0) or abs(bins.sum() - 1.0) > 1e-6:
        raise MetricError(f"histogram is not normalised (sum={bins.sum():.6f})",
                          {'sum': float(bins.sum())})
    return float(np.dot(SCORE_VALUES, bins))


def _pair(x, y, name: str):
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    if x.shape != y.shape:
        raise MetricError(f"{name}: length mismatch {x.size} vs {y.size}")
    if x.size < 2:
        raise MetricError(f"{name}: needs at least 2 samples, got {x.size}")
    return x, y


def plcc(x, y) -> float:
    """Pearson linear correlation; zero variance in either argument is an error."""
    x, y = _pair(x, y, 'plcc')
    for label, values in (('x', x), ('y', y)):
        if np.all(values == values[0]):
            raise MetricError(f"plcc: {label} has zero variance", {'argument': label})
    statistic, _ = pearsonr(x, y)
    return float(statistic)


def srcc(x, y) -> float:
    """Spearman rank correlation; ties receive average ranks."""
    x, y = _pair(x, y, 'srcc')
    for label, values in (('x', x), ('y', y)):
        if np.all(values == values[0]):
            raise MetricError(f"srcc: all values of {label} are equal", {'argument': label})
    return plcc(rankdata(x, method='average'), rankdata(y, method='average'))


@dataclass
class ThresholdMetrics:
    acc: float
    balanced_acc: float
    confusion: np.ndarray
    absent_classes: List[int] = field(default_factory=list)


def threshold_metrics(pred_scores, gt_scores, tau: float = DEFAULT_THRESHOLD) -> ThresholdMetrics:
    """
    Accuracy, balanced accuracy and the 2x2 confusion matrix of the binary
    labelling score >= tau. confusion[g, p] counts ground truth g predicted p.
    """
    pred_scores = np.asarray(pred_scores, dtype=np.float64).reshape(-1)
    gt_scores = np.asarray(gt_scores, dtype=np.float64).reshape(-1)
    if pred_scores.shape != gt_scores.shape:
        raise MetricError(f"threshold_metrics: length mismatch {pred_scores.size} vs {gt_scores.size}")
    if pred_scores.size == 0:
        raise MetricError("threshold_metrics: no samples")

    pred = (pred_scores >= tau).astype(np.int64)
    gt = (gt_scores >= tau).astype(np.int64)
    confusion = np.zeros((2, 2), dtype=np.int64)
    np.add.at(confusion, (gt, pred), 1)

    recalls = []
    absent = []
    for cls in (0, 1):
        support = confusion[cls].sum()
        if support == 0:
            absent.append(cls)
            continue
        recalls.append(confusion[cls, cls] / support)
    if absent:
        logger.warning(f"balanced accuracy computed without absent class(es) {absent}")

    return ThresholdMetrics(
        acc=float(np.trace(confusion) / confusion.sum()),
        balanced_acc=float(np.mean(recalls)),
        confusion=confusion,
        absent_classes=absent
    )
