"""
Evaluation Library

Utterance-level decisions from segment posteriors, confusion matrices with
weighted (WA) and unweighted (UWA) accuracy, pooling of per-fold reports and
the predictions CSV exchanged between training and evaluation.
"""

import csv
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from sklearn.metrics import confusion_matrix

from dataset_manifest import LABELS

# Configure logging
logger = logging.getLogger("sffspec_logger")


class EvaluationError(Exception):
    """Custom exception for evaluation errors."""
    pass


def mean_posterior(posteriors: Sequence[np.ndarray]) -> np.ndarray:
    if len(posteriors) == 0:
        raise EvaluationError("Cannot aggregate an utterance without segments")
    stacked = np.asarray(posteriors, dtype=np.float64)
    if stacked.ndim != 2:
        raise EvaluationError(f"Segment posteriors must be equal-length vectors, got shape {stacked.shape}")
    return stacked.mean(axis=0)


def aggregate_utterance(posteriors: Sequence[np.ndarray]) -> int:
    """Average segment posteriors and return the most probable class.

    Exact ties go to the lowest class index.
    """
    return int(np.argmax(mean_posterior(posteriors)))


@dataclass
class EvalReport:
    """Confusion counts (rows are true classes) and the accuracies derived from them."""
    counts: np.ndarray
    class_names: Tuple[str, ...] = LABELS
    name: str = ""

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    @property
    def class_totals(self) -> np.ndarray:
        return self.counts.sum(axis=1)

    @property
    def percentages(self) -> np.ndarray:
        """Row-normalized confusion in percent; rows of absent classes are zero."""
        totals = self.class_totals.astype(np.float64)
        safe = np.where(totals > 0, totals, 1.0)
        return self.counts / safe[:, None] * 100.0

    @property
    def recalls(self) -> np.ndarray:
        return np.diag(self.percentages)

    @property
    def wa(self) -> float:
        if self.total == 0:
            return 0.0
        return float(np.trace(self.counts)) / self.total * 100.0

    @property
    def uwa(self) -> float:
        """Mean recall over the classes that occur in the reference labels."""
        present = self.class_totals > 0
        if not np.any(present):
            return 0.0
        return float(self.recalls[present].mean())

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "classes": list(self.class_names),
            "counts": self.counts.astype(int).tolist(),
            "percentages": np.round(self.percentages, 4).tolist(),
            "wa": self.wa,
            "uwa": self.uwa,
            "total": self.total,
        }

    def to_json(self, indent: Optional[int] = 2) -> str:
        return json.dumps(self.to_dict(), indent=indent)

    def format_table(self) -> str:
        """Row-normalized confusion table followed by WA and UWA."""
        width = max(8, max(len(n) for n in self.class_names) + 1)
        header = "true\\pred".ljust(width) + "".join(n.rjust(width) for n in self.class_names) + "n".rjust(6)
        lines = [f"== {self.name} ==" if self.name else "", header]
        for name, row, total in zip(self.class_names, self.percentages, self.class_totals):
            lines.append(name.ljust(width) + "".join(f"{v:{width}.2f}" for v in row) + f"{int(total):6d}")
        lines.append(f"WA  {self.wa:.2f}")
        lines.append(f"UWA {self.uwa:.2f}")
        return "\n".join(line for line in lines if line)


def evaluate(predictions: Sequence[int], labels: Sequence[int], num_classes: int = len(LABELS),
             class_names: Optional[Sequence[str]] = None, name: str = "") -> EvalReport:
    """Confusion matrix of predicted against reference classes.

    Raises:
        EvaluationError: On unequal lengths or a class index outside the label set
    """
    predictions = np.asarray(predictions, dtype=np.int64).reshape(-1)
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    if predictions.size != labels.size:
        raise EvaluationError(f"{predictions.size} predictions for {labels.size} labels")
    for what, values in (("label", labels), ("prediction", predictions)):
        bad = values[(values < 0) | (values >= num_classes)]
        if bad.size:
            raise EvaluationError(f"Unseen {what} {int(bad[0])}; expected 0..{num_classes - 1}")

    if labels.size:
        counts = confusion_matrix(labels, predictions, labels=list(range(num_classes))).astype(np.int64)
    else:
        counts = np.zeros((num_classes, num_classes), dtype=np.int64)
    names = tuple(class_names) if class_names is not None else tuple(LABELS[:num_classes])
    if len(names) != num_classes:
        names = tuple(str(c) for c in range(num_classes))
    return EvalReport(counts, names, name)


def pool_reports(reports: Sequence[EvalReport], name: str = "pooled") -> EvalReport:
    """Sum confusion counts over folds."""
    if not reports:
        raise EvaluationError("No reports to pool")
    counts = np.sum([r.counts for r in reports], axis=0)
    return EvalReport(counts, reports[0].class_names, name)


def average_reports(reports: Sequence[EvalReport]) -> Dict[str, float]:
    """Mean and standard deviation of per-fold WA and UWA."""
    if not reports:
        raise EvaluationError("No reports to average")
    was = np.array([r.wa for r in reports])
    uwas = np.array([r.uwa for r in reports])
    return {
        "folds": len(reports),
        "wa_mean": float(was.mean()),
        "wa_std": float(was.std()),
        "uwa_mean": float(uwas.mean()),
        "uwa_std": float(uwas.std()),
    }


@dataclass
class PredictionRecord:
    utterance_id: str
    label: int
    predicted: int
    posterior: Optional[np.ndarray] = field(default=None)


def write_predictions(path: Union[str, Path], records: Sequence[PredictionRecord],
                      class_names: Sequence[str] = LABELS) -> None:
    """CSV with id,label,predicted and, when known, one p_<class> column per class."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with_posteriors = bool(records) and all(r.posterior is not None for r in records)
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        header = ["id", "label", "predicted"]
        if with_posteriors:
            header += [f"p_{name}" for name in class_names]
        writer.writerow(header)
        for r in records:
            row = [r.utterance_id, class_names[r.label], class_names[r.predicted]]
            if with_posteriors:
                row += [f"{p:.6f}" for p in r.posterior]
            writer.writerow(row)


def _class_of(value: str, class_names: Sequence[str]) -> int:
    value = value.strip()
    lowered = [n.lower() for n in class_names]
    if value.lower() in lowered:
        return lowered.index(value.lower())
    try:
        return int(value)
    except ValueError:
        raise EvaluationError(f"Unseen label '{value}'")


def read_predictions(path: Union[str, Path], class_names: Sequence[str] = LABELS) -> List[PredictionRecord]:
    path = Path(path)
    if not path.is_file():
        raise EvaluationError(f"Predictions file not found: {path}")
    records = []
    with open(path, newline="", encoding="utf-8") as f:
        reader = csv.DictReader(f)
        if not reader.fieldnames or not {"id", "label", "predicted"} <= set(reader.fieldnames):
            raise EvaluationError(f"{path} needs id,label,predicted columns")
        p_columns = [f"p_{n}" for n in class_names]
        has_p = all(c in reader.fieldnames for c in p_columns)
        for row in reader:
            posterior = np.array([float(row[c]) for c in p_columns]) if has_p else None
            records.append(PredictionRecord(row["id"], _class_of(row["label"], class_names),
                                            _class_of(row["predicted"], class_names), posterior))
    return records


def report_from_predictions(path: Union[str, Path], class_names: Sequence[str] = LABELS) -> EvalReport:
    records = read_predictions(path, class_names)
    report = evaluate([r.predicted for r in records], [r.label for r in records], len(class_names),
                      class_names, name=Path(path).stem)
    logger.info(f"{Path(path).name}: WA {report.wa:.2f}, UWA {report.uwa:.2f} over {report.total} utterances")
    return report
