"""
Losses, optimizer, learning-rate schedule, the training loop and
augmentation-averaged inference.
"""
import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from gatiaa.autodiff import ops
from gatiaa.autodiff.tensor import DiffValue, Tape, backward, constant
from gatiaa.graph.batching import GraphBatch, batch
from gatiaa.graph.feature_graph import ALL_POLICIES, FeatureGraph, ScoreHistogram, augment, augment_all
from gatiaa.metrics import DEFAULT_THRESHOLD, SCORE_VALUES, plcc, srcc
from gatiaa.models import Model
from gatiaa.nn.layers import EVAL, TRAIN
from gatiaa.services.checkpoint import copy_checkpoint, save_checkpoint
from gatiaa.tasks.prefetch import prefetch
from gatiaa.utils.errors import MetricError, ShapeError, TrainingError

logger = logging.getLogger(__name__)

LOSSES = ('mse_histogram', 'bce_binary')
EPOCH_LOG_HEADER = ['epoch', 'lr', 'train_loss', 'val_plcc', 'val_srcc']
EPOCH_LOG_NAME = 'epochs.csv'
BEST_CHECKPOINT = 'best.ckpt'
PROBABILITY_CLAMP = 1e-7


@dataclass(frozen=True)
class TrainConfig:
    lr0: float = 1e-4
    decay_power: float = 2.5
    epochs: int = 30
    batch_size: int = 64
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon_adam: float = 1e-8
    loss: str = 'mse_histogram'
    seed: int = 0
    checkpoint_dir: Optional[str] = 'checkpoints'
    augment: bool = True
    eval_batch_size: int = 256
    tau: float = DEFAULT_THRESHOLD

    def __post_init__(self):
        if self.lr0 <= 0:
            raise TrainingError(f"lr0 must be positive, got {self.lr0}", {'field': 'lr0'})
        # train-mode batch norm has no statistics for a one-graph batch
        if self.batch_size < 2:
            raise TrainingError(f"batch_size must be >= 2, got {self.batch_size}", {'field': 'batch_size'})
        if self.epochs < 1:
            raise TrainingError(f"epochs must be >= 1, got {self.epochs}", {'field': 'epochs'})
        if self.loss not in LOSSES:
            raise TrainingError(f"loss must be one of {LOSSES}, got {self.loss!r}", {'field': 'loss'})


# ------------------------------------------------------------------- losses

def mse_histogram_loss(pred: DiffValue, target) -> DiffValue:
    """Mean over batch and bins of the squared difference."""
    target = target if isinstance(target, DiffValue) else constant(np.asarray(target, dtype=pred.dtype))
    if pred.shape != target.shape:
        raise ShapeError('mse_histogram_loss', pred.shape, target.shape)
    diff = ops.subtract(pred, target)
    return ops.mean_all(ops.multiply(diff, diff))


def bce_binary_loss(prob: DiffValue, labels) -> DiffValue:
    """Mean binary cross-entropy of probabilities against {0, 1} labels."""
    labels = np.asarray(labels, dtype=prob.dtype).reshape(prob.shape)
    if not np.all((labels == 0) | (labels == 1)):
        raise TrainingError("binary labels must be 0 or 1", {'labels': np.unique(labels).tolist()})
    p = ops.clip(prob, PROBABILITY_CLAMP, 1 - PROBABILITY_CLAMP)
    ones = constant(np.ones(prob.shape, dtype=prob.dtype))
    positive = ops.multiply(constant(labels), ops.log(p))
    negative = ops.multiply(constant(1 - labels), ops.log(ops.subtract(ones, p)))
    return ops.scale(ops.mean_all(ops.add(positive, negative)), -1.0)


def score_probability(output: DiffValue, tau: float = DEFAULT_THRESHOLD) -> DiffValue:
    """Logistic of (predicted mean score - tau); a one-wide output is the score itself."""
    if output.shape[1] == 1:
        score = output
    else:
        score = ops.matmul(output, constant(SCORE_VALUES.reshape(-1, 1).astype(output.dtype)))
    shift = constant(np.full(score.shape, -tau, dtype=output.dtype))
    return ops.sigmoid(ops.add(score, shift))


def binary_labels(histograms: np.ndarray, tau: float = DEFAULT_THRESHOLD) -> np.ndarray:
    return (histograms @ SCORE_VALUES >= tau).astype(np.float64)


def compute_loss(model: Model, output: DiffValue, graph_batch: GraphBatch, cfg: TrainConfig) -> DiffValue:
    targets = graph_batch.label_matrix()
    if cfg.loss == 'mse_histogram':
        if model.spec.head_mode != 'distribution':
            raise TrainingError("mse_histogram loss needs a distribution head", {'head_mode': model.spec.head_mode})
        return mse_histogram_loss(output, targets)
    return bce_binary_loss(score_probability(output, cfg.tau), binary_labels(targets, cfg.tau))


# ------------------------------------------------------------------ schedule

def lr_at(epoch: float, cfg: TrainConfig) -> float:
    """lr0 * (1 - e / E) ** decay_power."""
    if not 0 <= epoch <= cfg.epochs:
        raise TrainingError(f"epoch {epoch} outside [0, {cfg.epochs}]", {'epoch': epoch})
    return cfg.lr0 * (1.0 - epoch / cfg.epochs) ** cfg.decay_power


# ---------------------------------------------------------------- optimizer

@dataclass
class OptimizerState:
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    step: int = 0
    first_moments: Dict[str, np.ndarray] = field(default_factory=dict)
    second_moments: Dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(state: OptimizerState, params: Dict[str, np.ndarray], grads: Dict[str, np.ndarray],
              lr: float) -> Dict[str, np.ndarray]:
    """
    One bias-corrected Adam update; returns the new parameter arrays.

    Non-finite gradients refuse the step and leave state untouched.
    """
    for name, g in grads.items():
        if name not in params or params[name].shape != g.shape:
            raise ShapeError('adam_step', params[name].shape if name in params else (), g.shape)
        if not np.all(np.isfinite(g)):
            raise TrainingError(f"non-finite gradient for {name}; step refused", {'parameter': name})

    state.step += 1
    b1, b2 = state.beta1, state.beta2
    correction1 = 1 - b1 ** state.step
    correction2 = 1 - b2 ** state.step
    updated = {}
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            updated[name] = p
            continue
        m = state.first_moments.get(name)
        v = state.second_moments.get(name)
        m = b1 * m + (1 - b1) * g if m is not None else (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g if v is not None else (1 - b2) * g * g
        state.first_moments[name] = m.astype(p.dtype)
        state.second_moments[name] = v.astype(p.dtype)
        step = lr * (m / correction1) / (np.sqrt(v / correction2) + state.epsilon)
        updated[name] = (p - step).astype(p.dtype)
    return updated


class AdamOptimizer:
    """Applies adam_step in place to a model's named parameters."""

    def __init__(self, params: Dict[str, DiffValue], beta1: float = 0.9, beta2: float = 0.999,
                 epsilon: float = 1e-8):
        self.params = params
        self.state = OptimizerState(beta1, beta2, epsilon)

    @classmethod
    def for_config(cls, model: Model, cfg: TrainConfig) -> 'AdamOptimizer':
        return cls(model.named_parameters(), cfg.beta1, cfg.beta2, cfg.epsilon_adam)

    def restore(self, step: int, first_moments: Dict[str, np.ndarray], second_moments: Dict[str, np.ndarray]):
        for name, m in first_moments.items():
            if name not in self.params or self.params[name].shape != m.shape:
                raise TrainingError(f"optimizer moment {name} does not match the model", {'parameter': name})
        self.state.step = step
        self.state.first_moments = {k: v.astype(self.params[k].dtype) for k, v in first_moments.items()}
        self.state.second_moments = {k: v.astype(self.params[k].dtype) for k, v in second_moments.items()}

    def step(self, lr: float):
        values = {name: p.value for name, p in self.params.items()}
        grads = {name: p.grad for name, p in self.params.items()}
        updated = adam_step(self.state, values, grads, lr)
        for name, p in self.params.items():
            p.value[...] = updated[name]

    def zero_grad(self):
        for p in self.params.values():
            p.zero_grad()


# ---------------------------------------------------------------- inference

def to_histogram(row: np.ndarray) -> ScoreHistogram:
    """Nonnegative part of an output row, renormalised; all-zero rows become uniform."""
    row = np.clip(np.asarray(row, dtype=np.float64), 0, None)
    total = row.sum()
    if total <= 0:
        return ScoreHistogram(np.full(row.size, 1.0 / row.size))
    return ScoreHistogram(row / total)


def predict_outputs(model: Model, graphs: Sequence[FeatureGraph], augmented: bool = True,
                    batch_size: int = 256) -> np.ndarray:
    """
    Eval-mode outputs (G, width); with `augmented` every graph is predicted
    under all 8 crop/flip policies and the rows are averaged.
    """
    if not graphs:
        raise TrainingError("no graphs to predict")
    views = [augment_all(g) for g in graphs] if augmented else [[g] for g in graphs]
    total = None
    for v in range(len(views[0])):
        outputs = []
        for start in range(0, len(graphs), batch_size):
            chunk = batch([views[i][v] for i in range(start, min(start + batch_size, len(graphs)))])
            outputs.append(model.forward(chunk, EVAL).value.astype(np.float64))
        stacked = np.concatenate(outputs, axis=0)
        total = stacked if total is None else total + stacked
    return total / len(views[0])


def predicted_scores(model: Model, outputs: np.ndarray) -> np.ndarray:
    if model.spec.head_mode == 'score':
        return outputs[:, 0]
    return np.array([to_histogram(row).mean_score for row in outputs])


def predict_augmented(model: Model, graph: FeatureGraph) -> ScoreHistogram:
    """Bin-wise average of the predictions for all 8 augmentations, renormalised."""
    return to_histogram(predict_outputs(model, [graph], augmented=True)[0])


def validation_scores(model: Model, graphs: Sequence[FeatureGraph], cfg: TrainConfig
                      ) -> Tuple[float, float]:
    """(PLCC, SRCC) of mean scores; NaN when a correlation is undefined."""
    outputs = predict_outputs(model, graphs, augmented=cfg.augment, batch_size=cfg.eval_batch_size)
    pred = predicted_scores(model, outputs)
    gt = np.array([g.label.mean_score for g in graphs])
    results = []
    for metric in (plcc, srcc):
        try:
            results.append(metric(pred, gt))
        except MetricError as e:
            logger.warning(f"validation {metric.__name__} undefined: {e.message}")
            results.append(float('nan'))
    return results[0], results[1]


# ----------------------------------------------------------------- training

@dataclass
class EpochRecord:
    epoch: int
    lr: float
    train_loss: float
    val_plcc: float
    val_srcc: float

    def row(self) -> List[str]:
        return [str(self.epoch), repr(self.lr), repr(self.train_loss), repr(self.val_plcc), repr(self.val_srcc)]


@dataclass
class TrainingResult:
    model: Model
    log: List[EpochRecord]
    optimizer: AdamOptimizer
    best_val_plcc: float = float('nan')
    steps: int = 0


@dataclass(frozen=True)
class PreparedBatch:
    ordinal: int
    graph_batch: GraphBatch
    dropout_seed: Tuple[int, ...]


def _require_labeled(graphs: Sequence[FeatureGraph], name: str):
    if not graphs:
        raise TrainingError(f"{name} set is empty", {'set': name})
    unlabeled = [g.id for g in graphs if g.label is None]
    if unlabeled:
        raise TrainingError(f"{name} set has {len(unlabeled)} unlabeled graphs, e.g. {unlabeled[0]!r}",
                            {'set': name, 'ids': unlabeled[:10]})


class TrainingService:
    """Owns one model and its optimizer for the duration of a run."""

    def __init__(self, model: Model, cfg: TrainConfig, workers: int = 1,
                 on_epoch: Optional[Callable[[EpochRecord], None]] = None):
        self.model = model
        self.cfg = cfg
        self.workers = max(1, workers)
        self.on_epoch = on_epoch
        self.optimizer = AdamOptimizer.for_config(model, cfg)
        self.start_epoch = 0
        self.best_val_plcc = float('-inf')

    def resume_from(self, checkpoint) -> None:
        """Continue after a saved epoch with its optimizer moments."""
        if checkpoint.model is not self.model:
            raise TrainingError("resume checkpoint must carry the model being trained")
        self.optimizer.restore(checkpoint.optimizer_step, checkpoint.first_moments, checkpoint.second_moments)
        self.start_epoch = (checkpoint.epoch + 1) if checkpoint.epoch is not None else 0
        if checkpoint.val_plcc is not None and math.isfinite(checkpoint.val_plcc):
            self.best_val_plcc = checkpoint.val_plcc
        logger.info(f"resuming at epoch {self.start_epoch} (optimizer step {checkpoint.optimizer_step})")

    def epoch_batches(self, size: int, epoch: int) -> List[np.ndarray]:
        """Shuffled index batches; a trailing single-graph batch is dropped."""
        order = np.random.default_rng([self.cfg.seed, epoch]).permutation(size)
        batches = [order[i:i + self.cfg.batch_size] for i in range(0, size, self.cfg.batch_size)]
        if len(batches[-1]) == 1:
            logger.warning(f"epoch {epoch}: dropping trailing single-graph batch")
            batches = batches[:-1]
        return batches

    def prepare_batch(self, graphs: Sequence[FeatureGraph], epoch: int, ordinal: int,
                      indices: np.ndarray) -> PreparedBatch:
        rng = np.random.default_rng([self.cfg.seed, epoch, ordinal])
        selected = [graphs[i] for i in indices]
        if self.cfg.augment:
            selected = [augment(g, ALL_POLICIES[int(rng.integers(len(ALL_POLICIES)))]) for g in selected]
        return PreparedBatch(ordinal, batch(selected), (self.cfg.seed, epoch, ordinal, 1))

    def train_step(self, prepared: PreparedBatch, lr: float) -> float:
        self.optimizer.zero_grad()
        rng = np.random.default_rng(list(prepared.dropout_seed))
        with Tape() as tape:
            output = self.model.forward(prepared.graph_batch, TRAIN, rng=rng)
            loss = compute_loss(self.model, output, prepared.graph_batch, self.cfg)
            backward(loss)
        tape.release()
        value = float(loss.value)
        if not math.isfinite(value):
            raise TrainingError(f"non-finite training loss at batch {prepared.ordinal}", {'loss': value})
        self.optimizer.step(lr)
        return value

    def train(self, train_set: Sequence[FeatureGraph], val_set: Sequence[FeatureGraph]) -> TrainingResult:
        _require_labeled(train_set, 'train')
        _require_labeled(val_set, 'val')
        if len(train_set) < 2:
            raise TrainingError("training needs at least 2 graphs (batch normalisation)",
                                {'size': len(train_set)})
        if self.cfg.loss == 'mse_histogram' and self.model.spec.head_mode != 'distribution':
            raise TrainingError("mse_histogram loss needs a distribution head")

        log_path = None
        ckpt_dir = Path(self.cfg.checkpoint_dir) if self.cfg.checkpoint_dir else None
        if ckpt_dir is not None:
            ckpt_dir.mkdir(parents=True, exist_ok=True)
            log_path = ckpt_dir / EPOCH_LOG_NAME
            if self.start_epoch == 0 or not log_path.exists():
                with log_path.open('w', newline='', encoding='utf-8') as fh:
                    csv.writer(fh, lineterminator='\n').writerow(EPOCH_LOG_HEADER)

        result = TrainingResult(self.model, [], self.optimizer)
        logger.info(f"training {self.model.spec.variant} on {len(train_set)} graphs, "
                    f"epochs {self.start_epoch}..{self.cfg.epochs - 1}, batch {self.cfg.batch_size}")
        for epoch in range(self.start_epoch, self.cfg.epochs):
            lr = lr_at(epoch, self.cfg)
            jobs = list(enumerate(self.epoch_batches(len(train_set), epoch)))
            losses = []
            for prepared in prefetch(jobs, lambda job: self.prepare_batch(train_set, epoch, *job), self.workers):
                losses.append(self.train_step(prepared, lr))
                logger.debug(f"epoch {epoch} batch {prepared.ordinal}: loss {losses[-1]:.6f}")
            result.steps += len(losses)

            val_plcc, val_srcc = validation_scores(self.model, val_set, self.cfg)
            record = EpochRecord(epoch, lr, float(np.mean(losses)), val_plcc, val_srcc)
            result.log.append(record)
            logger.info(f"epoch {epoch}: lr={lr:.3e} loss={record.train_loss:.6f} "
                        f"val_plcc={val_plcc:.4f} val_srcc={val_srcc:.4f}")

            if ckpt_dir is not None:
                path = save_checkpoint(ckpt_dir / f"epoch-{epoch:03d}.ckpt", self.model, self.optimizer,
                                       epoch, val_plcc)
                if math.isfinite(val_plcc) and val_plcc > self.best_val_plcc:
                    copy_checkpoint(path, ckpt_dir / BEST_CHECKPOINT)
                    logger.info(f"new best checkpoint at epoch {epoch} (val_plcc={val_plcc:.4f})")
                with log_path.open('a', newline='', encoding='utf-8') as fh:
                    csv.writer(fh, lineterminator='\n').writerow(record.row())
            if math.isfinite(val_plcc):
                self.best_val_plcc = max(self.best_val_plcc, val_plcc)
            if self.on_epoch is not None:
                self.on_epoch(record)

        result.best_val_plcc = self.best_val_plcc
        return result


def train(model: Model, train_set: Sequence[FeatureGraph], val_set: Sequence[FeatureGraph],
          cfg: TrainConfig, workers: int = 1) -> TrainingResult:
    return TrainingService(model, cfg, workers).train(train_set, val_set)
