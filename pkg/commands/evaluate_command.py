import json
import logging
from pathlib import Path

from cnn_model import load_checkpoint
from dataset_manifest import LABELS, Manifest
from evaluation import (PredictionRecord, average_reports, pool_reports, report_from_predictions,
                        write_predictions)
from feature_extraction import FeatureIndex
from run_config import CommandUsageError, RunConfig
from training_service import SegmentSet, predict_utterances

# Configure logging
logger = logging.getLogger("sffspec_logger")


def _prediction_files(inputs):
    files = []
    for item in inputs:
        p = Path(item)
        if p.is_dir():
            files.extend(sorted(p.glob("*predictions.csv")))
        elif p.is_file():
            files.append(p)
        else:
            logger.warning(f"Input {p} does not exist")
    return files


def _predict_with_checkpoint(config: RunConfig, out_dir: Path) -> Path:
    """Predict every utterance of the feature index with a checkpoint; returns the predictions file."""
    if not config.features:
        raise CommandUsageError("--checkpoint needs --features")
    model_config, state = load_checkpoint(config.checkpoint)
    index = FeatureIndex.load(config.features)
    speakers = sorted({e.speaker for e in index.entries})
    if config.manifest:
        speakers = sorted({e.speaker for e in Manifest.load(config.manifest)})
    segments = SegmentSet.from_index(index, config.feature_kinds[0], speakers)
    utterances = predict_utterances(model_config, state, segments)
    records = [PredictionRecord(uid, label, predicted, posterior)
               for uid, (label, predicted, posterior) in utterances.items()]
    path = out_dir / f"{Path(config.checkpoint).stem}_predictions.csv"
    write_predictions(path, records, LABELS)
    return path


def evaluate_command(config: RunConfig) -> int:
    """Confusion tables with WA and UWA per predictions file, pooled and averaged over files."""
    out_dir = Path(config.output)
    files = _prediction_files(config.inputs)
    if config.checkpoint:
        files.append(_predict_with_checkpoint(config, out_dir))
    if not files:
        raise CommandUsageError("no predictions files")

    reports = [report_from_predictions(f) for f in files]
    for report in reports:
        print(report.format_table())
        print()
    summary = {"reports": [r.to_dict() for r in reports]}
    if len(reports) > 1:
        pooled = pool_reports(reports)
        averaged = average_reports(reports)
        print(pooled.format_table())
        print(f"Per-fold mean: WA {averaged['wa_mean']:.2f} (sd {averaged['wa_std']:.2f}), "
              f"UWA {averaged['uwa_mean']:.2f} (sd {averaged['uwa_std']:.2f})")
        summary["pooled"] = pooled.to_dict()
        summary["average"] = averaged

    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "report.json", "w", encoding="utf-8") as f:
        json.dump(summary, f, indent=2)
    return 0


def register(subparsers, options) -> None:
    parser = subparsers.add_parser("evaluate", parents=[options],
                                   help="confusion matrices, WA and UWA from predictions")
    parser.add_argument("inputs", nargs="*", help="predictions CSV files or directories")
    parser.set_defaults(handler=evaluate_command, command_defaults=None)
