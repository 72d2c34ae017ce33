"""
Training Service

Segment-level training of the CNN for one cross-validation fold: class
weighting, shuffled mini-batches with Adam, per-epoch validation, model
selection on the best validation accuracy and early stopping. Also the
batched inference helpers used for segment and utterance predictions.
"""

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from cnn_model import (ADAM_BETA1, ADAM_BETA2, ADAM_EPSILON, ADAM_LR, ModelConfig, ModelState,
                       TrainingAbortedError, adam_step, backward, model_forward)
from dataset_manifest import FoldPlan
from evaluation import aggregate_utterance, evaluate, mean_posterior
from feature_extraction import FeatureIndex
from spectrograms import FeatureKind

# Configure logging
logger = logging.getLogger("sffspec_logger")

HISTORY_FIELDS = ["epoch", "train_loss", "train_wa", "val_wa"]
DEFAULT_PATIENCE = 5


class TrainingError(Exception):
    """Custom exception for training data errors."""
    pass


class TrainingConfigurationError(TrainingError):
    """Raised when a training setting is outside its allowed range."""
    pass


def class_weights(counts: Sequence[int]) -> np.ndarray:
    """Inverse-frequency weights normalized to mean one: w_c = (total / C) / count_c.

    Raises:
        TrainingError: If any class has no samples
    """
    counts = np.asarray(counts, dtype=np.float64)
    if counts.ndim != 1 or counts.size == 0:
        raise TrainingError("Class counts must be a non-empty vector")
    if np.any(counts <= 0):
        missing = [int(c) for c in np.flatnonzero(counts <= 0)]
        raise TrainingError(f"Classes {missing} have no training samples")
    return (counts.sum() / counts.size) / counts


class EarlyStopping:
    """Tracks the best validation metric; stops after `patience` epochs without strict improvement."""

    def __init__(self, patience: int = DEFAULT_PATIENCE):
        if patience < 1:
            raise TrainingConfigurationError(f"Patience must be at least 1, got {patience}")
        self.patience = patience
        self.best_metric = -np.inf
        self.best_epoch = 0
        self.epochs_without_improvement = 0

    def update(self, epoch: int, metric: float) -> bool:
        """Record one epoch; returns True when it is the new best."""
        if metric > self.best_metric:
            self.best_metric = metric
            self.best_epoch = epoch
            self.epochs_without_improvement = 0
            return True
        self.epochs_without_improvement += 1
        return False

    @property
    def should_stop(self) -> bool:
        return self.epochs_without_improvement >= self.patience


@dataclass(frozen=True)
class TrainingConfig:
    max_epochs: int = 100
    batch_size: int = 32
    learning_rate: float = ADAM_LR
    beta1: float = ADAM_BETA1
    beta2: float = ADAM_BETA2
    epsilon: float = ADAM_EPSILON
    patience: int = DEFAULT_PATIENCE
    seed: int = 0
    selection_metric: str = "wa"
    weighted_loss: bool = True

    def __post_init__(self):
        if self.max_epochs < 1 or self.batch_size < 2:
            raise TrainingConfigurationError("Need at least one epoch and a batch size of at least 2")
        if self.selection_metric not in ("wa", "uwa"):
            raise TrainingConfigurationError(f"Selection metric must be 'wa' or 'uwa', got '{self.selection_metric}'")


@dataclass
class SegmentSet:
    """Stacked segment features with their labels and parent utterance ids."""
    features: np.ndarray
    labels: np.ndarray
    utterance_ids: List[str]

    def __len__(self) -> int:
        return int(self.labels.size)

    @classmethod
    def from_index(cls, index: FeatureIndex, kind: FeatureKind, speakers: Sequence[str]) -> 'SegmentSet':
        entries = index.select(kind, speakers)
        features, labels, ids = FeatureIndex.load_arrays(entries)
        if np.any(labels < 0):
            raise TrainingError("Every training segment needs a label")
        return cls(features, labels, ids)


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    train_wa: float
    val_wa: float


@dataclass
class TrainResult:
    best_state: ModelState
    final_state: ModelState
    best_epoch: int
    history: List[EpochRecord] = field(default_factory=list)


def write_history(path: Union[str, Path], history: Sequence[EpochRecord]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(HISTORY_FIELDS)
        for r in history:
            writer.writerow([r.epoch, f"{r.train_loss:.6f}", f"{r.train_wa:.4f}", f"{r.val_wa:.4f}"])


def batch_slices(n: int, batch_size: int) -> List[slice]:
    """Consecutive batches; a trailing batch of one sample joins the previous batch."""
    slices = [slice(start, min(start + batch_size, n)) for start in range(0, n, batch_size)]
    if len(slices) > 1 and slices[-1].stop - slices[-1].start == 1:
        last = slices.pop()
        slices[-1] = slice(slices[-1].start, last.stop)
    return slices


def predict_segments(config: ModelConfig, state: ModelState, features: np.ndarray,
                     batch_size: int = 64) -> np.ndarray:
    """Infer-mode class probabilities for every segment."""
    if len(features) == 0:
        return np.zeros((0, config.num_classes))
    parts = [model_forward(config, state, features[s], mode="infer")[0]
             for s in batch_slices(len(features), batch_size)]
    return np.concatenate(parts)


def predict_utterances(config: ModelConfig, state: ModelState, segments: SegmentSet,
                       batch_size: int = 64) -> Dict[str, Tuple[int, int, np.ndarray]]:
    """Per utterance: (label, predicted class, mean posterior), in first-seen order."""
    probs = predict_segments(config, state, segments.features, batch_size)
    grouped: Dict[str, List[int]] = {}
    for i, utterance_id in enumerate(segments.utterance_ids):
        grouped.setdefault(utterance_id, []).append(i)
    results = {}
    for utterance_id, rows in grouped.items():
        posteriors = probs[rows]
        results[utterance_id] = (int(segments.labels[rows[0]]), aggregate_utterance(posteriors),
                                 mean_posterior(posteriors))
    return results


def _selection_score(config: ModelConfig, state: ModelState, val: SegmentSet,
                     metric: str) -> Tuple[float, float]:
    probs = predict_segments(config, state, val.features)
    report = evaluate(probs.argmax(axis=1), val.labels, config.num_classes)
    return report.wa, (report.wa if metric == "wa" else report.uwa)


def fit(model_config: ModelConfig, training_config: TrainingConfig, train: SegmentSet, val: SegmentSet,
        seed: Optional[int] = None, label: str = "") -> TrainResult:
    """Train on `train`, selecting the epoch with the best accuracy on `val`.

    Raises:
        TrainingError: If either set is empty or a class is missing from `train`
        TrainingAbortedError: If a batch loss is not finite
    """
    if len(train) < 2:
        raise TrainingError(f"Need at least 2 training segments, got {len(train)}")
    if len(val) == 0:
        raise TrainingError("Validation set is empty")

    seed = training_config.seed if seed is None else seed
    rng = np.random.default_rng(seed)
    state = ModelState.init(model_config, seed=seed)
    counts = np.bincount(train.labels, minlength=model_config.num_classes)
    weights = class_weights(counts) if training_config.weighted_loss else np.ones(model_config.num_classes)
    logger.info(f"{label}Training on {len(train)} segments, validating on {len(val)}; "
                f"class counts {counts.tolist()}, weights {np.round(weights, 3).tolist()}")

    stopper = EarlyStopping(training_config.patience)
    best_state = state.copy()
    history: List[EpochRecord] = []

    for epoch in range(1, training_config.max_epochs + 1):
        order = rng.permutation(len(train))
        loss_sum = 0.0
        correct = 0
        for batch_id, s in enumerate(batch_slices(len(train), training_config.batch_size)):
            idx = order[s]
            probs, cache = model_forward(model_config, state, train.features[idx], mode="train", rng=rng)
            loss, grads = backward(model_config, state, cache, train.labels[idx], weights)
            if not np.isfinite(loss):
                raise TrainingAbortedError(f"{label}Non-finite loss in epoch {epoch}, batch {batch_id}")
            adam_step(state, grads, training_config.learning_rate, training_config.beta1,
                      training_config.beta2, training_config.epsilon)
            loss_sum += loss * idx.size
            correct += int(np.count_nonzero(probs.argmax(axis=1) == train.labels[idx]))

        val_wa, score = _selection_score(model_config, state, val, training_config.selection_metric)
        record = EpochRecord(epoch, loss_sum / len(train), correct / len(train) * 100.0, val_wa)
        history.append(record)
        if stopper.update(epoch, score):
            best_state = state.copy()
        logger.info(f"{label}epoch {epoch}: loss {record.train_loss:.4f}, train WA {record.train_wa:.2f}, "
                    f"val WA {record.val_wa:.2f}")
        if stopper.should_stop:
            logger.info(f"{label}No improvement for {stopper.patience} epochs; stopping after epoch {epoch}")
            break

    logger.info(f"{label}Best epoch {stopper.best_epoch} ({training_config.selection_metric} {stopper.best_metric:.2f})")
    return TrainResult(best_state, state, stopper.best_epoch, history)


def train_fold(fold: FoldPlan, index: FeatureIndex, model_config: ModelConfig,
               training_config: TrainingConfig, kind: FeatureKind = FeatureKind.PITCH_SYNC_SFF) -> TrainResult:
    """Train one fold from extracted features; the run seed is seed + fold index."""
    train = SegmentSet.from_index(index, kind, fold.train_speakers)
    val = SegmentSet.from_index(index, kind, [fold.validation_speaker])
    return fit(model_config, training_config, train, val, seed=training_config.seed + fold.index,
               label=f"[fold {fold.index}] ")
