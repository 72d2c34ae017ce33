import logging
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from run_config import CommandUsageError, RunConfig
from signal_core import SignalError, find_wav_files, load_wav
from zff_gci import detect_gci, write_gci_listing

# Configure logging
logger = logging.getLogger("sffspec_logger")


def gci_command(config: RunConfig) -> int:
    """Write one GCI listing per input file, or to standard output with --output -."""
    files = find_wav_files(config.inputs)
    if not files:
        raise CommandUsageError("no input files")
    to_stdout = config.output == "-"
    if to_stdout and len(files) > 1:
        raise CommandUsageError("--output - takes a single input file")
    zff_config = config.to_zff_config()

    def run(path: Path):
        try:
            signal = load_wav(path, channel=config.channel_index)
            return path, detect_gci(signal, zff_config), None
        except SignalError as e:
            return path, None, e

    with ThreadPoolExecutor(max_workers=max(1, config.jobs)) as pool:
        outcomes = list(pool.map(run, files))

    done = 0
    for path, gcis, error in outcomes:
        if error is not None:
            logger.error(f"Skipping {path}: {error}")
            continue
        if len(gcis) > 1:
            median_ms = float(np.median(np.diff(gcis.locations))) * 1000.0 / gcis.sample_rate_hz
            logger.info(f"{path.name}: {len(gcis)} GCIs, median interval {median_ms:.2f} ms")
        if to_stdout:
            write_gci_listing(gcis, sys.stdout, seconds=config.seconds)
        else:
            write_gci_listing(gcis, Path(config.output) / f"{path.stem}.gci", seconds=config.seconds)
        done += 1
    return 0 if done else 1


def register(subparsers, options) -> None:
    parser = subparsers.add_parser("gci", parents=[options], help="list glottal closure instants")
    parser.add_argument("inputs", nargs="*", help="WAV files or directories")
    parser.set_defaults(handler=gci_command, command_defaults=None)
