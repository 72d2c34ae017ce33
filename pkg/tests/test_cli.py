import json

import numpy as np
import pytest

from all_commands import EXIT_FAILURE, EXIT_USAGE, dispatch
from cnn_model import ModelConfigurationError
from evaluation import PredictionRecord, write_predictions
from feature_io import read_pgm
from main import main
from neural_layers import ShapeError
from run_config import RunConfig
from training_service import TrainingConfigurationError, TrainingError
from tests.helpers import BASELINE_CONFUSION, expand

TINY_MODEL = ["--blocks", "5x5:4:12x26,3x3:8:4x6", "--dense-units", "16"]


@pytest.fixture
def vowel_wav(vowel_120, wav_factory):
    signal, truth = vowel_120
    return wav_factory("vowel.wav", signal.samples), truth


class TestUsage:

    def test_help(self, capsys):
        assert main(["--help"]) == 0
        assert "extract" in capsys.readouterr().out

    def test_unknown_command(self):
        assert main(["transcribe"]) == 2

    def test_no_inputs(self):
        assert main(["gci"]) == 2

    def test_empty_directory(self, tmp_path):
        assert main(["extract", str(tmp_path)]) == 2

    def test_bad_flag_value(self, tmp_path):
        assert main(["extract", "--spacing-hz", "wide", str(tmp_path)]) == 2

    def test_bad_config_file(self, tmp_path, vowel_wav):
        conf = tmp_path / "run.conf"
        conf.write_text("colour = red\n")
        assert main(["gci", "--config", str(conf), str(vowel_wav[0])]) == 2

    def test_invalid_filterbank(self, tmp_path, vowel_wav):
        assert main(["render", "--pole-radius", "1.5", "--output", str(tmp_path / "r"), str(vowel_wav[0])]) == 2

    def test_train_needs_manifest(self):
        assert main(["train"]) == 2


class TestDispatch:

    @pytest.mark.parametrize("error, code", [
        (TrainingError("Classes [1] have no training samples"), EXIT_FAILURE),
        (ShapeError("input: expected 1x40x200"), EXIT_FAILURE),
        (TrainingConfigurationError("Selection metric must be 'wa' or 'uwa'"), EXIT_USAGE),
        (ModelConfigurationError("block1.conv: kernel 5x5 does not fit input 3x3"), EXIT_USAGE),
    ])
    def test_exit_codes(self, error, code):
        def handler(config):
            raise error
        assert dispatch(handler, RunConfig()) == code


class TestGci:

    def test_listing_to_stdout(self, capsys, vowel_wav):
        path, truth = vowel_wav
        assert main(["gci", "--output", "-", str(path)]) == 0
        lines = capsys.readouterr().out.split()
        assert abs(len(lines) - len(truth)) <= 3
        assert all(line.isdigit() for line in lines)

    def test_listing_files_in_seconds(self, tmp_path, vowel_wav):
        path, _ = vowel_wav
        out = tmp_path / "gci"
        assert main(["gci", "--seconds", "--output", str(out), str(path)]) == 0
        values = np.loadtxt(out / "vowel.gci")
        assert np.all(np.diff(values) > 0)
        assert values.max() < 1.0

    def test_unreadable_file(self, tmp_path):
        bad = tmp_path / "bad.wav"
        bad.write_bytes(b"RIFF")
        assert main(["gci", "--output", str(tmp_path / "out"), str(bad)]) == 1


def test_render_matching_images(tmp_path, vowel_wav):
    out = tmp_path / "render"
    assert main(["render", "--output", str(out), str(vowel_wav[0])]) == 0
    pitch_sync = read_pgm(out / "vowel_pitch_sync_sff.pgm")
    stft = read_pgm(out / "vowel_stft.pgm")
    assert pitch_sync.shape == stft.shape == (200, 1077)
    assert (out / "vowel_stft.csv").is_file()


class TestEvaluate:

    def write_fold(self, path, predictions, labels):
        records = [PredictionRecord(f"u{i}", label, predicted) for i, (predicted, label)
                   in enumerate(zip(predictions, labels))]
        write_predictions(path, records)

    def test_single_file(self, tmp_path, capsys):
        path = tmp_path / "fold0_predictions.csv"
        self.write_fold(path, *expand(BASELINE_CONFUSION))
        assert main(["evaluate", "--output", str(tmp_path / "report"), str(path)]) == 0
        out = capsys.readouterr().out
        assert "UWA 58.55" in out
        assert "WA  62.67" in out
        report = json.loads((tmp_path / "report" / "report.json").read_text())
        assert report["reports"][0]["counts"] == BASELINE_CONFUSION.tolist()

    def test_pooled_folds(self, tmp_path, capsys):
        predictions, labels = expand(BASELINE_CONFUSION)
        self.write_fold(tmp_path / "fold0_predictions.csv", predictions, labels)
        self.write_fold(tmp_path / "fold1_predictions.csv", labels, labels)
        assert main(["evaluate", "--output", str(tmp_path / "report"), str(tmp_path)]) == 0
        out = capsys.readouterr().out
        assert "== pooled ==" in out
        assert "Per-fold mean" in out
        report = json.loads((tmp_path / "report" / "report.json").read_text())
        assert report["average"]["folds"] == 2

    def test_nothing_to_evaluate(self, tmp_path):
        assert main(["evaluate", str(tmp_path)]) == 2


def test_synthetic_workflow(tmp_path, capsys):
    corpus, features, runs = tmp_path / "corpus", tmp_path / "features", tmp_path / "runs"
    assert main(["synth", "--output", str(corpus), "--sessions", "2", "--utterances-per-speaker", "4"]) == 0
    manifest = corpus / "manifest.csv"
    assert capsys.readouterr().out.strip() == str(manifest)

    assert main(["scan", "--manifest", str(manifest), "--seg-seconds", "3"]) == 0
    assert int(capsys.readouterr().out) > 0

    assert main(["extract", "--manifest", str(manifest), "--output", str(features),
                 "--spacing-hz", "100", "--pad-width", "200"]) == 0
    assert "utterances=16 failed=0" in capsys.readouterr().out

    assert main(["train", "--manifest", str(manifest), "--features", str(features), "--output", str(runs),
                 "--epochs", "1", "--batch-size", "4", "--folds", "0"] + TINY_MODEL) == 0
    for name in ("fold0_best.sffn", "fold0_history.csv", "fold0_predictions.csv", "run_config.json"):
        assert (runs / name).is_file()
    assert not (runs / "fold1_best.sffn").exists()

    assert main(["evaluate", "--checkpoint", str(runs / "fold0_best.sffn"), "--features", str(features),
                 "--output", str(tmp_path / "eval")]) == 0
    assert "UWA" in capsys.readouterr().out
    assert (tmp_path / "eval" / "fold0_best_predictions.csv").is_file()

    assert main(["train", "--manifest", str(manifest), "--features", str(features), "--output", str(runs),
                 "--folds", "5"] + TINY_MODEL) == 2
