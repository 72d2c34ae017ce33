import pytest

from dataset_manifest import (LABELS, Manifest, ManifestEntry, ManifestError, build_folds,
                              build_iemocap_manifest, label_index, scan_max_gci)
from synthetic_corpus import impulse_train
from zff_gci import ZffConfig


def corpus(sessions=5, per_speaker=4):
    entries = []
    for s in range(1, sessions + 1):
        for gender in "FM":
            for u in range(per_speaker):
                uid = f"Ses{s:02d}{gender}_{u}"
                entries.append(ManifestEntry(uid, f"audio/{uid}.wav", u % 4, f"Session{s}", f"Session{s}{gender}"))
    return Manifest(entries)


class TestLabels:

    @pytest.mark.parametrize("label, index", [("anger", 0), ("Happy", 1), (" neutral ", 2), ("sad", 3), (2, 2)])
    def test_label_index(self, label, index):
        assert label_index(label) == index

    @pytest.mark.parametrize("label", ["fear", 4, -1])
    def test_unknown_label(self, label):
        with pytest.raises(ManifestError):
            label_index(label)


class TestManifest:

    def test_duplicate_ids(self):
        entry = ManifestEntry("a", "a.wav", 0, "S1", "S1F")
        with pytest.raises(ManifestError):
            Manifest([entry, entry])

    def test_save_and_load(self, tmp_path):
        audio = tmp_path / "wav" / "u1.wav"
        manifest = Manifest([ManifestEntry("u1", audio, 3, "S1", "S1F", improvised=True),
                             ManifestEntry("u2", tmp_path / "wav" / "u2.wav", 1, "S1", "S1M")])
        path = tmp_path / "manifest.csv"
        manifest.save(path)
        lines = path.read_text().splitlines()
        assert lines[0] == "id,path,label,session,speaker,improvised"
        assert lines[1] == "u1,wav/u1.wav,sad,S1,S1F,true"

        loaded = Manifest.load(path)
        assert [e.utterance_id for e in loaded] == ["u1", "u2"]
        assert loaded.entries[0].path == tmp_path / "wav" / "u1.wav"
        assert loaded.entries[0].label_name == "sad"
        assert loaded.improvised_only().entries[0].utterance_id == "u1"
        assert len(loaded.improvised_only()) == 1

    def test_improvised_column_is_optional(self, tmp_path):
        path = tmp_path / "m.csv"
        path.write_text("id,path,label,session,speaker\nx,x.wav,anger,S1,S1F\n")
        loaded = Manifest.load(path)
        assert loaded.entries[0].improvised is False
        assert loaded.class_counts() == [1, 0, 0, 0]

    def test_bad_label_names_line(self, tmp_path):
        path = tmp_path / "m.csv"
        path.write_text("id,path,label,session,speaker\nx,x.wav,anger,S1,S1F\ny,y.wav,bored,S1,S1M\n")
        with pytest.raises(ManifestError, match=":3:"):
            Manifest.load(path)

    def test_missing_columns(self, tmp_path):
        path = tmp_path / "m.csv"
        path.write_text("id,path,label\nx,x.wav,anger\n")
        with pytest.raises(ManifestError):
            Manifest.load(path)

    def test_validate_paths(self, tmp_path):
        manifest = Manifest([ManifestEntry("x", tmp_path / "missing.wav", 0, "S1", "S1F")])
        with pytest.raises(ManifestError):
            manifest.validate_paths()


class TestBuildFolds:

    def test_five_sessions(self):
        folds = build_folds(corpus(5))
        assert len(folds) == 5
        for fold in folds:
            assert len(fold.train_speakers) == 8
            assert fold.held_out_session not in fold.train_sessions
            roles = set(fold.train_speakers) | {fold.validation_speaker, fold.test_speaker}
            assert len(roles) == 10
            assert fold.validation_speaker < fold.test_speaker
        assert folds[0].validation_speaker == "Session1F"
        assert folds[0].test_speaker == "Session1M"

    def test_both_orders(self):
        folds = build_folds(corpus(5), both_orders=True)
        assert len(folds) == 10
        assert [f.index for f in folds] == list(range(10))
        assert (folds[1].validation_speaker, folds[1].test_speaker) == ("Session1M", "Session1F")

    def test_two_sessions(self):
        assert len(build_folds(corpus(2))) == 2

    def test_single_session(self):
        with pytest.raises(ManifestError):
            build_folds(corpus(1))

    def test_speaker_in_two_sessions(self):
        manifest = corpus(2)
        moved = ManifestEntry("extra", "extra.wav", 0, "Session2", "Session1F")
        with pytest.raises(ManifestError, match="Session1F"):
            build_folds(Manifest(manifest.entries + [moved]))

    def test_three_speakers_in_session(self):
        manifest = corpus(2)
        extra = ManifestEntry("extra", "extra.wav", 0, "Session2", "Session2X")
        with pytest.raises(ManifestError):
            build_folds(Manifest(manifest.entries + [extra]))


class TestScanMaxGci:

    def test_impulse_trains(self, tmp_path, wav_factory):
        entries = []
        for i, f0 in enumerate((100.0, 80.0)):
            signal, _ = impulse_train(f0, 3.0, 16000, start_s=0.005)
            path = wav_factory(f"train{i}.wav", 0.5 * signal.samples)
            entries.append(ManifestEntry(f"t{i}", path, 0, "S1", "S1F"))
        assert abs(scan_max_gci(Manifest(entries), ZffConfig()) - 299) <= 2

    def test_empty_corpus(self):
        assert scan_max_gci(Manifest([])) == 0

    def test_unreadable_file_is_skipped(self, tmp_path):
        bad = tmp_path / "bad.wav"
        bad.write_bytes(b"garbage")
        assert scan_max_gci(Manifest([ManifestEntry("b", bad, 0, "S1", "S1F")])) == 0


def test_iemocap_manifest(tmp_path):
    session = tmp_path / "Session1"
    labels = session / "dialog" / "EmoEvaluation"
    labels.mkdir(parents=True)
    (labels / "Ses01F_impro01.txt").write_text(
        "% header\n"
        "[6.2901 - 8.2357]\tSes01F_impro01_F000\tneu\t[2.5000, 2.5000, 2.5000]\n"
        "[10.0100 - 11.3925]\tSes01F_impro01_M001\tfru\t[2.5000, 3.5000, 2.0000]\n"
        "[14.8872 - 18.0175]\tSes01F_impro01_M002\tang\t[2.5000, 3.5000, 3.5000]\n")
    (labels / "Ses01F_script01_1.txt").write_text(
        "[1.0 - 2.0]\tSes01F_script01_1_F003\thap\t[3.0, 3.0, 3.0]\n")

    manifest = build_iemocap_manifest(tmp_path)
    assert [e.utterance_id for e in manifest] == ["Ses01F_impro01_F000", "Ses01F_impro01_M002",
                                                  "Ses01F_script01_1_F003"]
    first = manifest.entries[0]
    assert first.label == LABELS.index("neutral")
    assert first.speaker == "Session1F" and first.improvised
    assert first.path == session / "sentences" / "wav" / "Ses01F_impro01" / "Ses01F_impro01_F000.wav"
    assert manifest.entries[1].speaker == "Session1M"
    assert not manifest.entries[2].improvised
