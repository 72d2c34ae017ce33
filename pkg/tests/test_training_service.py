import csv

import numpy as np
import pytest

from cnn_model import ModelConfig, ModelState, parse_blocks
from dataset_manifest import build_folds
from evaluation import evaluate
from feature_extraction import ExtractionSettings, FeatureIndex, extract_corpus
from spectrograms import FeatureKind
from synthetic_corpus import generate_emotion_corpus
from training_service import (EarlyStopping, EpochRecord, SegmentSet, TrainingConfig, TrainingError,
                              batch_slices, class_weights, fit, predict_segments, predict_utterances,
                              train_fold, write_history)

SMALL_BLOCKS = parse_blocks("5x5:4:12x26,3x3:8:4x6")
PATTERN_CONFIG = ModelConfig((16, 24), parse_blocks("3x3:4:6x8,3x3:4:2x3"), dense_units=16, dropout_rate=0.0)


def pattern_set(rng, per_class=10, noise=0.3):
    """Four classes, each a bright horizontal band at its own height."""
    labels = np.repeat(np.arange(4), per_class)
    features = noise * rng.standard_normal((labels.size, 16, 24))
    for i, c in enumerate(labels):
        features[i, 4 * c:4 * c + 4, :] += 2.0
    ids = [f"u{i // 2}" for i in range(labels.size)]
    return SegmentSet(features, labels, ids)


@pytest.fixture(scope="module")
def synthetic_features(tmp_path_factory):
    """Synthetic two-session corpus extracted to 40 x 200 pitch-synchronous matrices."""
    root = tmp_path_factory.mktemp("corpus")
    manifest = generate_emotion_corpus(root / "audio", sessions=2, utterances_per_speaker=10)
    settings = ExtractionSettings(spacing_hz=100.0, pad_width=200)
    extract_corpus([e.to_job() for e in manifest], settings, root / "features")
    return manifest, FeatureIndex.load(root / "features")


class TestClassWeights:

    def test_balanced(self):
        np.testing.assert_array_equal(class_weights([10, 10, 10, 10]), [1.0, 1.0, 1.0, 1.0])

    def test_two_classes(self):
        np.testing.assert_allclose(class_weights([100, 50]), [0.75, 1.5])

    def test_corpus_counts(self):
        counts = np.array([289, 284, 1099, 608])
        weights = class_weights(counts)
        np.testing.assert_allclose(weights * counts, counts.sum() / 4)
        np.testing.assert_allclose(np.sum(weights * counts) / counts.sum(), 1.0)
        assert np.argmax(weights) == 1 and np.argmin(weights) == 2

    def test_empty_class(self):
        with pytest.raises(TrainingError):
            class_weights([5, 0, 3, 1])


class TestEarlyStopping:

    def test_patience_sequence(self):
        stopper = EarlyStopping(patience=5)
        stopped_after = None
        for epoch, metric in enumerate([50, 60, 59, 58, 57, 56, 55, 70], start=1):
            stopper.update(epoch, metric)
            if stopper.should_stop:
                stopped_after = epoch
                break
        assert stopped_after == 7
        assert stopper.best_epoch == 2 and stopper.best_metric == 60

    def test_equal_metric_is_not_improvement(self):
        stopper = EarlyStopping(patience=2)
        assert stopper.update(1, 40.0)
        assert not stopper.update(2, 40.0)
        assert not stopper.should_stop
        assert not stopper.update(3, 40.0)
        assert stopper.should_stop
        assert stopper.best_epoch == 1

    def test_rejects_zero_patience(self):
        with pytest.raises(TrainingError):
            EarlyStopping(patience=0)


class TestBatchSlices:

    @pytest.mark.parametrize("n, size, expected", [
        (10, 4, [(0, 4), (4, 8), (8, 10)]),
        (9, 4, [(0, 4), (4, 9)]),
        (8, 4, [(0, 4), (4, 8)]),
        (1, 4, [(0, 1)]),
    ])
    def test_slices(self, n, size, expected):
        assert [(s.start, s.stop) for s in batch_slices(n, size)] == expected


class TestTrainingConfig:

    @pytest.mark.parametrize("kwargs", [{"max_epochs": 0}, {"batch_size": 1}, {"selection_metric": "f1"}])
    def test_invalid(self, kwargs):
        with pytest.raises(TrainingError):
            TrainingConfig(**kwargs)


class TestFit:

    def test_single_epoch_budget(self, rng):
        data = pattern_set(rng)
        result = fit(PATTERN_CONFIG, TrainingConfig(max_epochs=1, batch_size=8), data, data)
        assert result.best_epoch == 1
        assert len(result.history) == 1
        assert result.final_state.t == 5

    def test_learns_separable_patterns(self, rng):
        train, val = pattern_set(rng), pattern_set(rng)
        config = TrainingConfig(max_epochs=40, batch_size=8, learning_rate=1e-2, patience=40, seed=1)
        result = fit(PATTERN_CONFIG, config, train, val)
        probs = predict_segments(PATTERN_CONFIG, result.final_state, train.features)
        assert evaluate(probs.argmax(axis=1), train.labels).wa >= 95.0
        best = max(r.val_wa for r in result.history)
        assert result.best_epoch == next(r.epoch for r in result.history if r.val_wa == best)

    def test_seeded_runs_are_identical(self, rng):
        data = pattern_set(rng)
        config = TrainingConfig(max_epochs=3, batch_size=8, seed=7)
        first = fit(PATTERN_CONFIG, config, data, data)
        second = fit(PATTERN_CONFIG, config, data, data)
        assert [(r.train_loss, r.val_wa) for r in first.history] == [(r.train_loss, r.val_wa) for r in second.history]
        for name, value in first.final_state.params.items():
            assert value.tobytes() == second.final_state.params[name].tobytes()

    def test_missing_class(self, rng):
        data = pattern_set(rng)
        keep = data.labels != 3
        partial = SegmentSet(data.features[keep], data.labels[keep], [u for u, k in zip(data.utterance_ids, keep) if k])
        with pytest.raises(TrainingError):
            fit(PATTERN_CONFIG, TrainingConfig(max_epochs=1), partial, data)

    def test_empty_validation(self, rng):
        data = pattern_set(rng)
        empty = SegmentSet(data.features[:0], data.labels[:0], [])
        with pytest.raises(TrainingError):
            fit(PATTERN_CONFIG, TrainingConfig(max_epochs=1), data, empty)


def test_predict_utterances(rng):
    segments = SegmentSet(rng.standard_normal((5, 16, 24)), np.array([2, 2, 0, 1, 1]), ["a", "a", "b", "c", "c"])
    state = ModelState.init(PATTERN_CONFIG, seed=0)
    results = predict_utterances(PATTERN_CONFIG, state, segments, batch_size=2)
    assert list(results) == ["a", "b", "c"]
    label, predicted, posterior = results["a"]
    assert label == 2
    np.testing.assert_allclose(posterior.sum(), 1.0)
    assert predicted == int(np.argmax(posterior))


def test_write_history(tmp_path):
    path = tmp_path / "history.csv"
    write_history(path, [EpochRecord(1, 1.25, 50.0, 40.0), EpochRecord(2, 0.5, 75.0, 62.5)])
    with open(path, newline="") as f:
        rows = list(csv.reader(f))
    assert rows[0] == ["epoch", "train_loss", "train_wa", "val_wa"]
    assert rows[2] == ["2", "0.500000", "75.0000", "62.5000"]


class TestTrainFold:

    def test_few_epochs(self, synthetic_features):
        manifest, index = synthetic_features
        fold = build_folds(manifest)[0]
        model_config = ModelConfig((40, 200), SMALL_BLOCKS, dense_units=16)
        config = TrainingConfig(max_epochs=3, batch_size=8, learning_rate=2e-3)
        result = train_fold(fold, index, model_config, config)
        assert len(result.history) == 3
        assert 1 <= result.best_epoch <= 3

        again = train_fold(fold, index, model_config, config)
        assert [r.train_loss for r in again.history] == [r.train_loss for r in result.history]

    @pytest.mark.slow
    def test_synthetic_corpus_end_to_end(self, synthetic_features):
        manifest, index = synthetic_features
        fold = build_folds(manifest)[0]
        model_config = ModelConfig((40, 200), SMALL_BLOCKS, dense_units=16, dropout_rate=0.25)
        config = TrainingConfig(max_epochs=200, batch_size=8, learning_rate=2e-3, patience=200)
        result = train_fold(fold, index, model_config, config)

        train = SegmentSet.from_index(index, FeatureKind.PITCH_SYNC_SFF, fold.train_speakers)
        train_probs = predict_segments(model_config, result.final_state, train.features)
        assert evaluate(train_probs.argmax(axis=1), train.labels).wa >= 95.0

        test = SegmentSet.from_index(index, FeatureKind.PITCH_SYNC_SFF, [fold.test_speaker])
        decisions = predict_utterances(model_config, result.best_state, test)
        report = evaluate([d[1] for d in decisions.values()], [d[0] for d in decisions.values()])
        assert report.wa >= 80.0
