from pathlib import Path

from run_config import RunConfig
from synthetic_corpus import generate_emotion_corpus


def synth_command(config: RunConfig) -> int:
    """Write a synthetic four-class corpus and print the manifest path."""
    out_dir = Path(config.output)
    generate_emotion_corpus(out_dir, config.sessions, config.utterances_per_speaker, config.duration_s,
                            config.sample_rate_hz, config.seed)
    print(out_dir / "manifest.csv")
    return 0


def register(subparsers, options) -> None:
    parser = subparsers.add_parser("synth", parents=[options], help="generate a synthetic labelled corpus")
    parser.set_defaults(handler=synth_command, command_defaults=None, inputs=[])
