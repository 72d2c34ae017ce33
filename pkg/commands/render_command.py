import logging
from pathlib import Path

import feature_io
from feature_extraction import extract_segment, utterance_pitch_period
from run_config import CommandUsageError, RunConfig
from signal_core import SignalError, find_wav_files, load_wav, segment_utterance

# Configure logging
logger = logging.getLogger("sffspec_logger")


def render_command(config: RunConfig) -> int:
    """Render the first segment of every input as one PGM (and CSV) per feature kind."""
    files = find_wav_files(config.inputs)
    if not files:
        raise CommandUsageError("no input files")
    settings = config.to_extraction_settings()
    out_dir = Path(config.output)

    done = 0
    for path in files:
        try:
            signal = load_wav(path, channel=config.channel_index)
        except SignalError as e:
            logger.error(f"Skipping {path}: {e}")
            continue
        segment = segment_utterance(signal, settings.seg_seconds, path.stem)[0]
        features, _ = extract_segment(segment.signal, settings, utterance_pitch_period(signal))
        for kind, fm in features.items():
            feature_io.export_pgm(fm, out_dir / f"{path.stem}_{kind.label}.pgm")
            feature_io.export_csv(fm, out_dir / f"{path.stem}_{kind.label}.csv")
            logger.info(f"{path.name}: {kind.label} {fm.shape[0]}x{fm.shape[1]} ({fm.used_columns} used columns)")
        done += 1
    return 0 if done else 1


def register(subparsers, options) -> None:
    parser = subparsers.add_parser("render", parents=[options],
                                   help="render spectrogram images for side-by-side comparison")
    parser.add_argument("inputs", nargs="*", help="WAV files or directories")
    parser.set_defaults(handler=render_command, command_defaults={"kinds": "pitch_sync_sff,stft"})
