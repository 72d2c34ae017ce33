"""
Dataset Manifest Library

This module reads and writes the utterance manifest (a CSV listing audio
files with their emotion label, session and speaker), builds the
leave-one-speaker-out fold plans and scans a corpus for the largest number of
pitch-synchronous columns in a segment, which sets the pad width.
"""

import csv
import logging
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Union

from feature_extraction import UtteranceJob, utterance_pitch_period
from signal_core import SignalError, load_wav, segment_utterance
from zff_gci import ZffConfig, detect_gci

# Configure logging
logger = logging.getLogger("sffspec_logger")

LABELS = ("anger", "happy", "neutral", "sad")
LABEL_INDEX = {name: i for i, name in enumerate(LABELS)}
MANIFEST_FIELDS = ["id", "path", "label", "session", "speaker", "improvised"]

# Category codes used in IEMOCAP EmoEvaluation files
IEMOCAP_CODES = {"ang": "anger", "hap": "happy", "neu": "neutral", "sad": "sad"}
_IEMOCAP_LINE = re.compile(r"^\[[\d.]+\s*-\s*[\d.]+\]\s+(\S+)\s+(\w+)\s+\[")


class ManifestError(Exception):
    """Custom exception for manifest and fold construction errors."""
    pass


def label_index(label: Union[str, int]) -> int:
    """Map a label name (or an already numeric label) to its class index."""
    if isinstance(label, int):
        if 0 <= label < len(LABELS):
            return label
        raise ManifestError(f"Label index {label} outside 0..{len(LABELS) - 1}")
    key = str(label).strip().lower()
    if key in LABEL_INDEX:
        return LABEL_INDEX[key]
    raise ManifestError(f"Unknown label '{label}'; expected one of {', '.join(LABELS)}")


def _parse_bool(value: str) -> bool:
    return str(value).strip().lower() in ("1", "true", "yes", "y")


@dataclass(frozen=True)
class ManifestEntry:
    utterance_id: str
    path: Path
    label: int
    session: str
    speaker: str
    improvised: bool = False

    @property
    def label_name(self) -> str:
        return LABELS[self.label]

    def to_job(self, channel: Optional[int] = None) -> UtteranceJob:
        return UtteranceJob(self.utterance_id, self.path, self.label, self.session, self.speaker, channel)


@dataclass
class Manifest:
    """Labelled utterances with unique ids."""
    entries: List[ManifestEntry] = field(default_factory=list)

    def __post_init__(self):
        seen = set()
        for entry in self.entries:
            if entry.utterance_id in seen:
                raise ManifestError(f"Duplicate utterance id '{entry.utterance_id}'")
            seen.add(entry.utterance_id)

    def __len__(self) -> int:
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    @property
    def sessions(self) -> List[str]:
        return sorted({e.session for e in self.entries})

    def speakers_of(self, session: str) -> List[str]:
        return sorted({e.speaker for e in self.entries if e.session == session})

    def improvised_only(self) -> 'Manifest':
        return Manifest([e for e in self.entries if e.improvised])

    def for_speakers(self, speakers: Sequence[str]) -> List[ManifestEntry]:
        wanted = set(speakers)
        return [e for e in self.entries if e.speaker in wanted]

    def class_counts(self) -> List[int]:
        counts = [0] * len(LABELS)
        for entry in self.entries:
            counts[entry.label] += 1
        return counts

    def validate_paths(self) -> None:
        """Raise ManifestError listing the first missing audio files."""
        missing = [str(e.path) for e in self.entries if not Path(e.path).is_file()]
        if missing:
            shown = ", ".join(missing[:5])
            raise ManifestError(f"{len(missing)} audio files not found (e.g. {shown})")

    @classmethod
    def load(cls, path: Union[str, Path]) -> 'Manifest':
        """Read a manifest CSV; relative audio paths resolve against its directory."""
        path = Path(path)
        if not path.is_file():
            raise ManifestError(f"Manifest not found: {path}")
        base = path.parent
        entries = []
        with open(path, newline="", encoding="utf-8") as f:
            reader = csv.DictReader(f)
            missing = [c for c in MANIFEST_FIELDS[:-1] if c not in (reader.fieldnames or [])]
            if missing:
                raise ManifestError(f"Manifest {path} lacks columns: {', '.join(missing)}")
            for line_no, row in enumerate(reader, start=2):
                try:
                    label = label_index(row["label"])
                except ManifestError as e:
                    raise ManifestError(f"{path}:{line_no}: {e}")
                audio = Path(row["path"])
                entries.append(ManifestEntry(
                    utterance_id=row["id"].strip(),
                    path=audio if audio.is_absolute() else base / audio,
                    label=label,
                    session=row["session"].strip(),
                    speaker=row["speaker"].strip(),
                    improvised=_parse_bool(row.get("improvised", "")),
                ))
        logger.info(f"Loaded manifest {path} with {len(entries)} utterances")
        return cls(entries)

    def save(self, path: Union[str, Path]) -> None:
        """Write the manifest, storing paths relative to its directory when possible."""
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        base = path.parent.resolve()
        with open(path, "w", newline="", encoding="utf-8") as f:
            writer = csv.writer(f)
            writer.writerow(MANIFEST_FIELDS)
            for e in self.entries:
                audio = Path(e.path)
                try:
                    audio = audio.resolve().relative_to(base)
                except ValueError:
                    pass
                writer.writerow([e.utterance_id, audio.as_posix(), e.label_name, e.session,
                                 e.speaker, "true" if e.improvised else "false"])


@dataclass(frozen=True)
class FoldPlan:
    """Speaker roles of one cross-validation fold."""
    index: int
    held_out_session: str
    train_sessions: List[str]
    train_speakers: List[str]
    validation_speaker: str
    test_speaker: str


def build_folds(manifest: Manifest, both_orders: bool = False) -> List[FoldPlan]:
    """One fold per session: that session's two speakers are held out.

    The lexicographically first speaker of the held-out session validates and
    the other is tested; with both_orders the roles are also swapped, doubling
    the folds.

    Raises:
        ManifestError: With fewer than 2 sessions, a held-out session that does not
            have exactly 2 speakers, or a speaker recorded in two sessions
    """
    sessions_of: Dict[str, set] = {}
    for entry in manifest:
        sessions_of.setdefault(entry.speaker, set()).add(entry.session)
    for speaker, sessions in sessions_of.items():
        if len(sessions) > 1:
            raise ManifestError(f"Speaker '{speaker}' appears in sessions {', '.join(sorted(sessions))}")

    sessions = manifest.sessions
    if len(sessions) < 2:
        raise ManifestError(f"Need at least 2 sessions for cross-validation, got {len(sessions)}")

    folds: List[FoldPlan] = []
    for session in sessions:
        speakers = manifest.speakers_of(session)
        if len(speakers) != 2:
            raise ManifestError(f"Session '{session}' has {len(speakers)} speakers; expected 2")
        train_sessions = [s for s in sessions if s != session]
        train_speakers = sorted({e.speaker for e in manifest if e.session != session})
        orders = [(speakers[0], speakers[1])]
        if both_orders:
            orders.append((speakers[1], speakers[0]))
        for validation, test in orders:
            folds.append(FoldPlan(len(folds), session, train_sessions, train_speakers, validation, test))

    logger.info(f"Built {len(folds)} folds over {len(sessions)} sessions")
    return folds


def _segment_gci_columns(entry: ManifestEntry, zff_config: ZffConfig, seg_seconds: float) -> int:
    signal = load_wav(entry.path)
    pitch_period = utterance_pitch_period(signal)
    best = 0
    for segment in segment_utterance(signal, seg_seconds, entry.utterance_id):
        gcis = detect_gci(segment.signal, zff_config, pitch_period)
        best = max(best, len(gcis) - 1)
    return best


def scan_max_gci(manifest: Manifest, zff_config: Optional[ZffConfig] = None,
                 seg_seconds: float = 3.0, workers: int = 1) -> int:
    """Largest pitch-synchronous column count (#GCIs - 1) over all segments.

    Unreadable files are logged and skipped. An empty corpus gives 0.
    """
    zff_config = zff_config or ZffConfig()

    def scan(entry: ManifestEntry) -> int:
        try:
            return _segment_gci_columns(entry, zff_config, seg_seconds)
        except SignalError as e:
            logger.error(f"Skipping {entry.path} during GCI scan: {e}")
            return 0

    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        counts = list(pool.map(scan, manifest.entries))
    result = max(counts, default=0)
    logger.info(f"Maximum pitch-synchronous columns per {seg_seconds:g} s segment: {result}")
    return max(0, result)


def build_iemocap_manifest(root: Union[str, Path]) -> Manifest:
    """Build a manifest from an IEMOCAP release directory.

    Reads the utterance-level label lines of every
    Session*/dialog/EmoEvaluation/*.txt, keeps anger, happy, neutral and sad,
    and points at Session*/sentences/wav/<dialog>/<id>.wav. The speaker is the
    session plus the gender letter of the utterance id.
    """
    root = Path(root)
    entries = []
    for session_dir in sorted(root.glob("Session*")):
        session = session_dir.name
        for label_file in sorted((session_dir / "dialog" / "EmoEvaluation").glob("*.txt")):
            dialog = label_file.stem
            for line in label_file.read_text(encoding="utf-8", errors="replace").splitlines():
                match = _IEMOCAP_LINE.match(line)
                if not match:
                    continue
                utterance_id, code = match.groups()
                if code not in IEMOCAP_CODES:
                    continue
                gender = utterance_id.split("_")[-1][0]
                entries.append(ManifestEntry(
                    utterance_id=utterance_id,
                    path=session_dir / "sentences" / "wav" / dialog / f"{utterance_id}.wav",
                    label=LABEL_INDEX[IEMOCAP_CODES[code]],
                    session=session,
                    speaker=f"{session}{gender}",
                    improvised="impro" in dialog,
                ))
    if not entries:
        raise ManifestError(f"No labelled utterances found under {root}")
    logger.info(f"Collected {len(entries)} IEMOCAP utterances from {root}")
    return Manifest(entries)
