import logging
from pathlib import Path

from cnn_model import save_checkpoint
from dataset_manifest import LABELS, Manifest, build_folds
from evaluation import PredictionRecord, evaluate, write_predictions
from feature_extraction import FeatureIndex, ExtractionError
from run_config import CommandUsageError, RunConfig
from training_service import SegmentSet, predict_utterances, train_fold, write_history

# Configure logging
logger = logging.getLogger("sffspec_logger")


def train_command(config: RunConfig) -> int:
    """Train every selected fold and write checkpoint, history and test predictions per fold."""
    if not config.manifest or not config.features:
        raise CommandUsageError("train needs --manifest and --features")
    manifest = Manifest.load(config.manifest)
    if config.improvised_only:
        manifest = manifest.improvised_only()
    folds = build_folds(manifest, both_orders=config.both_orders)
    selected = config.fold_indices
    if selected is not None:
        unknown = [i for i in selected if not 0 <= i < len(folds)]
        if unknown:
            raise CommandUsageError(f"Unknown folds {unknown}; there are {len(folds)}")
        folds = [folds[i] for i in selected]

    index = FeatureIndex.load(config.features)
    wanted = {entry.utterance_id for entry in manifest}
    index.entries = [e for e in index.entries if e.utterance_id in wanted]
    kind = config.feature_kinds[0]
    entries = index.select(kind)
    if not entries:
        raise ExtractionError(f"No {kind.label} features in {config.features}")
    input_shape = FeatureIndex.load_arrays(entries[:1])[0].shape[1:]
    model_config = config.to_model_config(input_shape)
    training_config = config.to_training_config()

    out_dir = Path(config.output)
    out_dir.mkdir(parents=True, exist_ok=True)
    config.save(out_dir / "run_config.json")

    for fold in folds:
        logger.info(f"Fold {fold.index}: held-out {fold.held_out_session}, validation {fold.validation_speaker}, "
                    f"test {fold.test_speaker}")
        result = train_fold(fold, index, model_config, training_config, kind)
        save_checkpoint(out_dir / f"fold{fold.index}_best.sffn", model_config, result.best_state)
        write_history(out_dir / f"fold{fold.index}_history.csv", result.history)

        test = SegmentSet.from_index(index, kind, [fold.test_speaker])
        utterances = predict_utterances(model_config, result.best_state, test)
        records = [PredictionRecord(uid, label, predicted, posterior)
                   for uid, (label, predicted, posterior) in utterances.items()]
        write_predictions(out_dir / f"fold{fold.index}_predictions.csv", records, LABELS)
        if records:
            report = evaluate([r.predicted for r in records], [r.label for r in records])
            logger.info(f"Fold {fold.index} test: WA {report.wa:.2f}, UWA {report.uwa:.2f} "
                        f"on {report.total} utterances (best epoch {result.best_epoch})")
    return 0


def register(subparsers, options) -> None:
    parser = subparsers.add_parser("train", parents=[options], help="train the classifier per fold")
    parser.set_defaults(handler=train_command, command_defaults=None, inputs=[])
