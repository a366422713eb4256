"""
Ablation runs: every architecture variant trained on the same data and budget.
"""
import csv
import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Dict, List, Sequence

import numpy as np

from gatiaa.graph.feature_graph import FeatureGraph
from gatiaa.models import VARIANTS, ModelSpec, build_model
from gatiaa.services.evaluation import EvalReport, evaluate
from gatiaa.services.training import TrainConfig, TrainingService

logger = logging.getLogger(__name__)

CONFUSION_RUNS = (
    ('AvgPoolFC-bce', 'AvgPoolFC', 'bce_binary'),
    ('AvgPoolFC-mse', 'AvgPoolFC', 'mse_histogram'),
    ('GAT3_GATP-mse', 'GAT3_GATP', 'mse_histogram')
)


@dataclass
class AblationRun:
    variant: str
    seed: int
    report: EvalReport
    parameters: int


@dataclass
class AblationResult:
    runs: List[AblationRun] = field(default_factory=list)
    confusion: Dict[str, np.ndarray] = field(default_factory=dict)

    def table(self) -> List[Dict[str, float]]:
        """Mean PLCC/SRCC over seeds, one row per variant in run order."""
        rows = []
        for variant in dict.fromkeys(run.variant for run in self.runs):
            selected = [run.report for run in self.runs if run.variant == variant]
            rows.append({
                'variant': variant,
                'plcc': float(np.mean([r.plcc for r in selected])),
                'srcc': float(np.mean([r.srcc for r in selected]))
            })
        return rows

    def distributions(self) -> List[Dict[str, object]]:
        """Per variant and score bin, the seed-averaged mean predicted and ground-truth mass."""
        rows = []
        for variant in dict.fromkeys(run.variant for run in self.runs):
            selected = [run.report for run in self.runs if run.variant == variant]
            gt = np.mean([r.mean_gt_dist for r in selected], axis=0)
            preds = [r.mean_pred_dist for r in selected if r.mean_pred_dist is not None]
            pred = np.mean(preds, axis=0) if preds else None
            for i, mass in enumerate(gt):
                rows.append({
                    'variant': variant,
                    'bin': i + 1,
                    'mean_pred': None if pred is None else float(pred[i]),
                    'mean_gt': float(mass)
                })
        return rows


def _train_and_evaluate(spec: ModelSpec, seed: int, cfg: TrainConfig, train_set, val_set, test_set,
                        tau: float, workers: int) -> AblationRun:
    model = build_model(spec, seed=seed)
    service = TrainingService(model, replace(cfg, seed=seed, checkpoint_dir=None), workers)
    service.train(train_set, val_set)
    report = evaluate(model, test_set, tau=tau, augmented=cfg.augment, workers=workers,
                      batch_size=cfg.eval_batch_size)
    return AblationRun(spec.variant, seed, report, model.parameter_count())


def run_ablation(base_spec: ModelSpec, cfg: TrainConfig, train_set: Sequence[FeatureGraph],
                 val_set: Sequence[FeatureGraph], test_set: Sequence[FeatureGraph],
                 seeds: Sequence[int], variants: Sequence[str] = VARIANTS, tau: float = 5.0,
                 confusion: bool = False, workers: int = 1) -> AblationResult:
    result = AblationResult()
    for variant in variants:
        spec = base_spec.replace(variant=variant)
        for seed in seeds:
            run = _train_and_evaluate(spec, seed, cfg, train_set, val_set, test_set, tau, workers)
            result.runs.append(run)
            logger.info(f"ablation {variant} seed={seed}: plcc={run.report.plcc:.4f} "
                        f"srcc={run.report.srcc:.4f} ({run.parameters} parameters)")

    if confusion:
        for label, variant, loss in CONFUSION_RUNS:
            head_mode = 'score' if loss == 'bce_binary' else 'distribution'
            spec = base_spec.replace(variant=variant, head_mode=head_mode)
            run = _train_and_evaluate(spec, seeds[0], replace(cfg, loss=loss), train_set, val_set,
                                      test_set, tau, workers)
            result.confusion[label] = run.report.confusion
            logger.info(f"confusion {label}: acc={run.report.acc:.4f} "
                        f"balanced_acc={run.report.balanced_acc:.4f}")
    return result


def _fmt(value: float) -> str:
    return repr(float(value)) if math.isfinite(value) else 'nan'


def write_ablation_csv(result: AblationResult, out_dir) -> List[Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = [out_dir / 'ablation.csv', out_dir / 'ablation_runs.csv']
    with paths[0].open('w', newline='', encoding='utf-8') as fh:
        writer = csv.writer(fh, lineterminator='\n')
        writer.writerow(['variant', 'plcc', 'srcc'])
        for row in result.table():
            writer.writerow([row['variant'], _fmt(row['plcc']), _fmt(row['srcc'])])
    with paths[1].open('w', newline='', encoding='utf-8') as fh:
        writer = csv.writer(fh, lineterminator='\n')
        writer.writerow(['variant', 'seed', 'plcc', 'srcc', 'acc', 'balanced_acc', 'parameters'])
        for run in result.runs:
            writer.writerow([run.variant, run.seed, _fmt(run.report.plcc), _fmt(run.report.srcc),
                             _fmt(run.report.acc), _fmt(run.report.balanced_acc), run.parameters])
    paths.append(out_dir / 'ablation_distributions.csv')
    with paths[-1].open('w', newline='', encoding='utf-8') as fh:
        writer = csv.writer(fh, lineterminator='\n')
        writer.writerow(['variant', 'bin', 'mean_pred', 'mean_gt'])
        for row in result.distributions():
            pred = '' if row['mean_pred'] is None else _fmt(row['mean_pred'])
            writer.writerow([row['variant'], row['bin'], pred, _fmt(row['mean_gt'])])
    if result.confusion:
        paths.append(out_dir / 'confusion.csv')
        with paths[-1].open('w', newline='', encoding='utf-8') as fh:
            writer = csv.writer(fh, lineterminator='\n')
            writer.writerow(['model', 'gt', 'pred', 'count'])
            for label, matrix in result.confusion.items():
                for gt in (0, 1):
                    for pred in (0, 1):
                        writer.writerow([label, gt, pred, int(matrix[gt, pred])])
    for path in paths:
        logger.info(f"ablation table written: {path}")
    return paths


def default_seeds(base_seed: int, count: int) -> List[int]:
    return [base_seed + i for i in range(count)]
