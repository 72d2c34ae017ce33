from dataset_manifest import Manifest, scan_max_gci
from run_config import CommandUsageError, RunConfig


def scan_command(config: RunConfig) -> int:
    """Print the largest pitch-synchronous column count of the corpus (a pad width candidate)."""
    if not config.manifest:
        raise CommandUsageError("scan needs --manifest")
    manifest = Manifest.load(config.manifest)
    if config.improvised_only:
        manifest = manifest.improvised_only()
    print(scan_max_gci(manifest, config.to_zff_config(), config.seg_seconds, workers=config.jobs))
    return 0


def register(subparsers, options) -> None:
    parser = subparsers.add_parser("scan", parents=[options],
                                   help="largest GCI column count per segment over a manifest")
    parser.set_defaults(handler=scan_command, command_defaults=None, inputs=[])
