"""
Feature Extraction Service

Turns utterances into per-segment feature matrices of the requested kinds,
following the fixed stage order envelope -> subsample -> log -> pad. Corpus
extraction writes one .sffm file per segment and kind plus an index.csv that
the training pipeline reads instead of touching audio again.
"""

import csv
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

import feature_io
from sff_filterbank import FilterBank, make_filterbank, sff_envelope
from signal_core import SampledSignal, SignalError, load_wav, pre_emphasize, segment_utterance
from spectrograms import (DEFAULT_DFT_LENGTH, DEFAULT_LOG_FLOOR, DEFAULT_PAD_WIDTH,
                          DEFAULT_SFF_FRAME_MS, DEFAULT_SFF_OVERLAP, DEFAULT_STFT_FRAME_MS,
                          DEFAULT_STFT_HOP_MS, FeatureKind, FeatureMatrix, fixed_frame_subsample,
                          fixed_frame_times, log_compress, pad_to_width, pitch_sync_subsample,
                          stft_spectrogram, whole_segment_column)
from zff_gci import (FALLBACK_PITCH_MS, InsufficientDataError, ZffConfig, detect_gci,
                     estimate_pitch_period)

# Configure logging
logger = logging.getLogger("sffspec_logger")

INDEX_FILE = "index.csv"
INDEX_FIELDS = ["id", "segment", "kind", "path", "label", "session", "speaker", "columns"]


class ExtractionError(Exception):
    """Custom exception for feature extraction errors."""
    pass


@dataclass(frozen=True)
class ExtractionSettings:
    """Everything needed to turn one utterance into feature matrices."""
    band_lo_hz: float = 0.0
    band_hi_hz: float = 4000.0
    spacing_hz: float = 20.0
    pole_radius: float = 0.9394
    zff: ZffConfig = field(default_factory=ZffConfig)
    seg_seconds: float = 3.0
    pad_width: int = DEFAULT_PAD_WIDTH
    kinds: Tuple[FeatureKind, ...] = (FeatureKind.PITCH_SYNC_SFF,)
    sff_frame_ms: float = DEFAULT_SFF_FRAME_MS
    sff_overlap: float = DEFAULT_SFF_OVERLAP
    stft_frame_ms: float = DEFAULT_STFT_FRAME_MS
    stft_hop_ms: float = DEFAULT_STFT_HOP_MS
    dft_length: int = DEFAULT_DFT_LENGTH
    inclusive_gci_sum: bool = False
    log_floor: float = DEFAULT_LOG_FLOOR

    def filterbank(self, sample_rate_hz: int) -> FilterBank:
        return make_filterbank(sample_rate_hz, self.band_lo_hz, self.band_hi_hz,
                               self.spacing_hz, self.pole_radius)


@dataclass
class SegmentFeatures:
    """Feature matrices of one segment, keyed by kind."""
    utterance_id: str
    segment_index: int
    label: Optional[int]
    features: Dict[FeatureKind, FeatureMatrix]
    gci_count: int = 0


def utterance_pitch_period(signal: SampledSignal) -> int:
    """Pitch period of the whole utterance, or the 10 ms fallback if it is too short."""
    try:
        return estimate_pitch_period(signal)
    except InsufficientDataError:
        logger.warning(f"Utterance too short for pitch estimation; using {FALLBACK_PITCH_MS} ms")
        return int(round(FALLBACK_PITCH_MS * signal.sample_rate_hz / 1000.0))


def pitch_sync_feature(segment: SampledSignal, envelope, settings: ExtractionSettings,
                       pitch_period: Optional[int]) -> Tuple[FeatureMatrix, int]:
    """Pitch-synchronous SFF spectrogram of a segment and its GCI count."""
    gcis = detect_gci(segment, settings.zff, pitch_period)
    fs = segment.sample_rate_hz
    if len(gcis) >= 2:
        columns = pitch_sync_subsample(envelope, gcis, inclusive=settings.inclusive_gci_sum)
        locations = gcis.locations
        times = (locations[:-1] + locations[1:]) / 2.0 / fs
    else:
        logger.warning(f"Only {len(gcis)} GCIs in segment; using the whole-segment mean")
        columns = whole_segment_column(envelope)
        times = np.array([segment.duration_s / 2.0])
    fm = pad_to_width(log_compress(columns, settings.log_floor), settings.pad_width,
                      FeatureKind.PITCH_SYNC_SFF, envelope.filterbank.bin_freqs_hz, times)
    return fm, len(gcis)


def extract_segment(segment: SampledSignal, settings: ExtractionSettings,
                    pitch_period: Optional[int] = None,
                    bank: Optional[FilterBank] = None) -> Tuple[Dict[FeatureKind, FeatureMatrix], int]:
    """Compute every requested kind for one segment; the envelope is shared."""
    features: Dict[FeatureKind, FeatureMatrix] = {}
    gci_count = 0
    needs_envelope = any(k in settings.kinds for k in (FeatureKind.PITCH_SYNC_SFF, FeatureKind.SFF_FIXED_FRAME))
    bank = bank or settings.filterbank(segment.sample_rate_hz)
    envelope = sff_envelope(pre_emphasize(segment), bank) if needs_envelope else None

    for kind in settings.kinds:
        if kind is FeatureKind.PITCH_SYNC_SFF:
            features[kind], gci_count = pitch_sync_feature(segment, envelope, settings, pitch_period)
        elif kind is FeatureKind.SFF_FIXED_FRAME:
            columns = fixed_frame_subsample(envelope, settings.sff_frame_ms, settings.sff_overlap)
            times = fixed_frame_times(envelope.n_samples, segment.sample_rate_hz,
                                      settings.sff_frame_ms, settings.sff_overlap)
            features[kind] = pad_to_width(log_compress(columns, settings.log_floor), settings.pad_width,
                                          kind, bank.bin_freqs_hz, times)
        elif kind is FeatureKind.STFT:
            mags, freqs, times = stft_spectrogram(segment, settings.stft_frame_ms, settings.stft_hop_ms,
                                                  settings.dft_length, settings.band_lo_hz,
                                                  settings.band_hi_hz)
            features[kind] = pad_to_width(log_compress(mags, settings.log_floor), settings.pad_width,
                                          kind, freqs, times)
    return features, gci_count


def extract_utterance(signal: SampledSignal, utterance_id: str, label: Optional[int],
                      settings: ExtractionSettings) -> List[SegmentFeatures]:
    """Segment an utterance and extract every requested kind per segment.

    The trend window for GCI detection uses the pitch period of the whole
    utterance so that short tail segments share it.
    """
    pitch_period = utterance_pitch_period(signal)
    bank = settings.filterbank(signal.sample_rate_hz)
    results = []
    for segment in segment_utterance(signal, settings.seg_seconds, utterance_id, label):
        features, gci_count = extract_segment(segment.signal, settings, pitch_period, bank)
        results.append(SegmentFeatures(utterance_id, segment.index, label, features, gci_count))
    return results


def feature_path(out_dir: Path, kind: FeatureKind, utterance_id: str, segment_index: int) -> Path:
    return Path(out_dir) / kind.label / f"{utterance_id}__seg{segment_index:03d}.sffm"


@dataclass(frozen=True)
class UtteranceJob:
    """One utterance to extract: id, audio path and metadata copied into the index."""
    utterance_id: str
    path: Path
    label: Optional[int] = None
    session: str = ""
    speaker: str = ""
    channel: Optional[int] = None


@dataclass
class ExtractionSummary:
    """Counts reported after a corpus extraction."""
    utterances: int = 0
    failed: int = 0
    segments: int = 0
    files: int = 0
    max_gci_columns: int = 0
    elapsed_s: float = 0.0
    failures: List[Tuple[str, str]] = field(default_factory=list)


def _extract_job(job: UtteranceJob, settings: ExtractionSettings, out_dir: Path) -> List[dict]:
    signal = load_wav(job.path, channel=job.channel)
    rows = []
    for seg in extract_utterance(signal, job.utterance_id, job.label, settings):
        for kind, fm in seg.features.items():
            path = feature_path(out_dir, kind, job.utterance_id, seg.segment_index)
            feature_io.save_feature_matrix(fm, path)
            rows.append({
                "id": job.utterance_id,
                "segment": seg.segment_index,
                "kind": kind.label,
                "path": str(path.relative_to(out_dir)),
                "label": "" if job.label is None else job.label,
                "session": job.session,
                "speaker": job.speaker,
                "columns": fm.used_columns if kind is not FeatureKind.PITCH_SYNC_SFF else max(0, seg.gci_count - 1),
            })
    return rows


def extract_corpus(jobs: Sequence[UtteranceJob], settings: ExtractionSettings, out_dir: Path,
                   workers: int = 1) -> ExtractionSummary:
    """Extract features for many utterances and write the index.

    Utterances are processed on a thread pool of `workers` threads; results
    are written to the index in input order. A failing utterance is logged
    and skipped.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    summary = ExtractionSummary()
    started = time.perf_counter()

    def run(job: UtteranceJob):
        try:
            return job, _extract_job(job, settings, out_dir), None
        except (SignalError, ExtractionError, ValueError, OSError) as e:
            return job, [], e
        except Exception as e:
            logger.error(f"Unexpected failure extracting {job.utterance_id}: {e}")
            return job, [], e

    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        outcomes = list(pool.map(run, jobs))

    index_rows = []
    for job, rows, error in outcomes:
        if error is not None:
            summary.failed += 1
            summary.failures.append((job.utterance_id, str(error)))
            logger.error(f"Skipping {job.path}: {error}")
            continue
        summary.utterances += 1
        index_rows.extend(rows)
        summary.segments += len({row["segment"] for row in rows})
        summary.files += len(rows)
        for row in rows:
            if row["kind"] == FeatureKind.PITCH_SYNC_SFF.label:
                summary.max_gci_columns = max(summary.max_gci_columns, int(row["columns"]))

    with open(out_dir / INDEX_FILE, "w", newline="", encoding="utf-8") as f:
        writer = csv.DictWriter(f, fieldnames=INDEX_FIELDS)
        writer.writeheader()
        writer.writerows(index_rows)

    summary.elapsed_s = time.perf_counter() - started
    logger.info(f"Extracted {summary.files} feature files from {summary.segments} segments of "
                f"{summary.utterances} utterances ({summary.failed} failed) in {summary.elapsed_s:.1f} s")
    return summary


@dataclass(frozen=True)
class IndexEntry:
    utterance_id: str
    segment: int
    kind: FeatureKind
    path: Path
    label: Optional[int]
    session: str
    speaker: str


class FeatureIndex:
    """Feature files of one extraction run, as listed in its index.csv."""

    def __init__(self, root: Path, entries: List[IndexEntry]):
        self.root = Path(root)
        self.entries = entries

    @classmethod
    def load(cls, root: Path) -> 'FeatureIndex':
        root = Path(root)
        index_path = root / INDEX_FILE
        if not index_path.is_file():
            raise ExtractionError(f"No {INDEX_FILE} in {root}")
        entries = []
        with open(index_path, newline="", encoding="utf-8") as f:
            for row in csv.DictReader(f):
                entries.append(IndexEntry(
                    utterance_id=row["id"],
                    segment=int(row["segment"]),
                    kind=FeatureKind.from_label(row["kind"]),
                    path=root / row["path"],
                    label=int(row["label"]) if row["label"] != "" else None,
                    session=row["session"],
                    speaker=row["speaker"],
                ))
        return cls(root, entries)

    def select(self, kind: FeatureKind, speakers: Optional[Sequence[str]] = None) -> List[IndexEntry]:
        """Entries of one kind, optionally restricted to some speakers, in index order."""
        wanted = set(speakers) if speakers is not None else None
        return [e for e in self.entries
                if e.kind is kind and (wanted is None or e.speaker in wanted)]

    @staticmethod
    def load_arrays(entries: Sequence[IndexEntry]) -> Tuple[np.ndarray, np.ndarray, List[str]]:
        """Stack matrices into an (n, K, W) array with labels and utterance ids."""
        if not entries:
            return np.zeros((0, 0, 0)), np.zeros(0, dtype=np.int64), []
        matrices = [feature_io.load_feature_matrix(e.path).values for e in entries]
        shapes = {m.shape for m in matrices}
        if len(shapes) != 1:
            raise ExtractionError(f"Feature matrices have mixed shapes: {sorted(shapes)}")
        labels = np.array([-1 if e.label is None else e.label for e in entries], dtype=np.int64)
        return np.stack(matrices), labels, [e.utterance_id for e in entries]
