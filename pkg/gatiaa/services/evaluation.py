"""
Test-set evaluation: per-shard collection, exact merging and reports.
"""
import csv
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np

from gatiaa.graph.feature_graph import NUM_BINS, FeatureGraph
from gatiaa.metrics import DEFAULT_THRESHOLD, SCORE_VALUES, plcc, srcc, threshold_metrics
from gatiaa.models import Model
from gatiaa.services.training import predict_outputs, to_histogram
from gatiaa.utils.errors import GatiaaError, MetricError

logger = logging.getLogger(__name__)


@dataclass
class EvalShard:
    """Per-sample results of one slice of the test set."""

    ids: List[str]
    pred_scores: np.ndarray
    gt_scores: np.ndarray
    pred_hists: Optional[np.ndarray]
    gt_hists: np.ndarray

    @property
    def count(self) -> int:
        return len(self.ids)


@dataclass
class EvalReport:
    plcc: float
    srcc: float
    acc: float
    balanced_acc: float
    confusion: np.ndarray
    mean_pred_dist: Optional[np.ndarray]
    mean_gt_dist: np.ndarray
    count: int
    tau: float = DEFAULT_THRESHOLD
    absent_classes: List[int] = field(default_factory=list)
    metric_errors: Dict[str, str] = field(default_factory=dict)

    def scalar_metrics(self) -> Dict[str, float]:
        return {
            'plcc': self.plcc,
            'srcc': self.srcc,
            'acc': self.acc,
            'balanced_acc': self.balanced_acc,
            'count': self.count,
            'tau': self.tau
        }


def collect(model: Optional[Model], graphs: Sequence[FeatureGraph], augmented: bool = True,
            oracle_replay: bool = False, batch_size: int = 256) -> EvalShard:
    """Predict one shard; `oracle_replay` substitutes the ground truth for predictions."""
    missing = [g.id for g in graphs if g.label is None]
    if missing:
        raise GatiaaError(f"evaluation needs labeled graphs; {missing[0]!r} has no label",
                          {'ids': missing[:10]})
    gt_hists = np.stack([g.label.bins for g in graphs]) if graphs else np.zeros((0, NUM_BINS))
    gt_scores = gt_hists @ SCORE_VALUES
    if oracle_replay:
        return EvalShard([g.id for g in graphs], gt_scores.copy(), gt_scores, gt_hists.copy(), gt_hists)
    if not graphs:
        return EvalShard([], np.zeros(0), gt_scores, np.zeros((0, NUM_BINS)), gt_hists)

    outputs = predict_outputs(model, graphs, augmented=augmented, batch_size=batch_size)
    if model.spec.head_mode == 'score':
        return EvalShard([g.id for g in graphs], outputs[:, 0].copy(), gt_scores, None, gt_hists)
    pred_hists = np.stack([to_histogram(row).bins for row in outputs])
    return EvalShard([g.id for g in graphs], pred_hists @ SCORE_VALUES, gt_scores, pred_hists, gt_hists)


def merge(shards: Sequence[EvalShard]) -> EvalShard:
    """Concatenate shards in order."""
    if not shards:
        raise MetricError("nothing to merge")
    pred_hists = None
    if all(s.pred_hists is not None for s in shards):
        pred_hists = np.concatenate([s.pred_hists for s in shards], axis=0)
    return EvalShard(
        ids=[i for s in shards for i in s.ids],
        pred_scores=np.concatenate([s.pred_scores for s in shards]),
        gt_scores=np.concatenate([s.gt_scores for s in shards]),
        pred_hists=pred_hists,
        gt_hists=np.concatenate([s.gt_hists for s in shards], axis=0)
    )


def report_from(shard: EvalShard, tau: float = DEFAULT_THRESHOLD) -> EvalReport:
    if shard.count == 0:
        raise MetricError("cannot evaluate an empty test set")
    errors = {}
    correlations = {}
    for metric in (plcc, srcc):
        try:
            correlations[metric.__name__] = metric(shard.pred_scores, shard.gt_scores)
        except MetricError as e:
            logger.warning(f"{metric.__name__} undefined: {e.message}")
            errors[metric.__name__] = e.message
            correlations[metric.__name__] = float('nan')
    thresholds = threshold_metrics(shard.pred_scores, shard.gt_scores, tau)
    return EvalReport(
        plcc=correlations['plcc'],
        srcc=correlations['srcc'],
        acc=thresholds.acc,
        balanced_acc=thresholds.balanced_acc,
        confusion=thresholds.confusion,
        mean_pred_dist=shard.pred_hists.mean(axis=0) if shard.pred_hists is not None else None,
        mean_gt_dist=shard.gt_hists.mean(axis=0),
        count=shard.count,
        tau=tau,
        absent_classes=thresholds.absent_classes,
        metric_errors=errors
    )


def evaluate(model: Optional[Model], test_set: Sequence[FeatureGraph], tau: float = DEFAULT_THRESHOLD,
             augmented: bool = True, oracle_replay: bool = False, workers: int = 1,
             batch_size: int = 256) -> EvalReport:
    """
    Augmentation-averaged predictions over the test set and every metric.

    Undefined correlations are reported as NaN (listed in `metric_errors`);
    threshold metrics are always computed.
    """
    if not test_set:
        raise MetricError("cannot evaluate an empty test set")
    workers = max(1, min(workers, len(test_set)))
    if workers == 1:
        shard = collect(model, test_set, augmented, oracle_replay, batch_size)
    else:
        bounds = np.linspace(0, len(test_set), workers + 1).astype(int)
        slices = [test_set[bounds[i]:bounds[i + 1]] for i in range(workers)]
        with ThreadPoolExecutor(max_workers=workers, thread_name_prefix='gatiaa-eval') as pool:
            shards = list(pool.map(lambda part: collect(model, part, augmented, oracle_replay, batch_size),
                                   slices))
        shard = merge(shards)
    report = report_from(shard, tau)
    logger.info(f"evaluated {report.count} graphs: plcc={report.plcc:.4f} srcc={report.srcc:.4f} "
                f"acc={report.acc:.4f} balanced_acc={report.balanced_acc:.4f}")
    return report


def write_report_csv(report: EvalReport, path) -> Path:
    """Blocks `metric,value`, `gt,pred,count` and `bin,mean_pred,mean_gt`, separated by blank lines."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open('w', newline='', encoding='utf-8') as fh:
        writer = csv.writer(fh, lineterminator='\n')
        writer.writerow(['metric', 'value'])
        for name, value in report.scalar_metrics().items():
            writer.writerow([name, repr(value) if isinstance(value, float) else value])
        writer.writerow([])
        writer.writerow(['gt', 'pred', 'count'])
        for gt in (0, 1):
            for pred in (0, 1):
                writer.writerow([gt, pred, int(report.confusion[gt, pred])])
        writer.writerow([])
        writer.writerow(['bin', 'mean_pred', 'mean_gt'])
        for i in range(NUM_BINS):
            mean_pred = repr(float(report.mean_pred_dist[i])) if report.mean_pred_dist is not None else ''
            writer.writerow([i + 1, mean_pred, repr(float(report.mean_gt_dist[i]))])
    logger.info(f"report written: {path}")
    return path


def read_report_metrics(path) -> Dict[str, float]:
    """Scalar block of a report CSV."""
    metrics = {}
    with Path(path).open('r', newline='', encoding='utf-8') as fh:
        reader = csv.reader(fh)
        next(reader, None)
        for row in reader:
            if not row:
                break
            metrics[row[0]] = float(row[1])
    return metrics
