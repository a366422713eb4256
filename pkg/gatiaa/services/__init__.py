"""
Services module initialization.
"""
from .training import (
    AdamOptimizer,
    TrainConfig,
    TrainingService,
    adam_step,
    bce_binary_loss,
    lr_at,
    mse_histogram_loss,
    predict_augmented,
    train
)
from .evaluation import EvalReport, collect, evaluate, merge, write_report_csv
from .checkpoint import load_checkpoint, save_checkpoint
from .ablation import run_ablation, write_ablation_csv
from .verification import run_gradcheck_suite

__all__ = [
    'AdamOptimizer', 'TrainConfig', 'TrainingService', 'adam_step', 'bce_binary_loss', 'lr_at',
    'mse_histogram_loss', 'predict_augmented', 'train', 'EvalReport', 'collect', 'evaluate', 'merge',
    'write_report_csv', 'load_checkpoint', 'save_checkpoint', 'run_ablation', 'write_ablation_csv',
    'run_gradcheck_suite'
]
