import logging
from pathlib import Path

from dataset_manifest import Manifest
from feature_extraction import UtteranceJob, extract_corpus
from run_config import CommandUsageError, RunConfig
from signal_core import find_wav_files

# Configure logging
logger = logging.getLogger("sffspec_logger")


def collect_jobs(config: RunConfig):
    """Utterances named by --manifest, or every WAV under the positional inputs."""
    if config.manifest:
        manifest = Manifest.load(config.manifest)
        if config.improvised_only:
            manifest = manifest.improvised_only()
        return [entry.to_job(config.channel_index) for entry in manifest]
    return [UtteranceJob(path.stem, path, channel=config.channel_index)
            for path in find_wav_files(config.inputs)]


def extract_command(config: RunConfig) -> int:
    """Extract feature matrices of the requested kinds for every segment of every input."""
    settings = config.to_extraction_settings()
    jobs = collect_jobs(config)
    if not jobs:
        raise CommandUsageError("no input files")

    summary = extract_corpus(jobs, settings, Path(config.output), workers=config.jobs)
    print(f"utterances={summary.utterances} failed={summary.failed} segments={summary.segments} "
          f"files={summary.files} max_gci_columns={summary.max_gci_columns} seconds={summary.elapsed_s:.2f}")
    if summary.utterances == 0:
        logger.error("Every input failed")
        return 1
    return 0


def register(subparsers, options) -> None:
    parser = subparsers.add_parser("extract", parents=[options],
                                   help="extract feature matrices per segment")
    parser.add_argument("inputs", nargs="*", help="WAV files or directories")
    parser.set_defaults(handler=extract_command, command_defaults=None)
