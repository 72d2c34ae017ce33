"""Registry of all command-line subcommands and the exit-code mapping."""

import logging
import sys
from typing import Callable

from cnn_model import ModelConfigurationError
from commands.evaluate_command import register as register_evaluate
from commands.extract_command import register as register_extract
from commands.gci_command import register as register_gci
from commands.render_command import register as register_render
from commands.scan_command import register as register_scan
from commands.synth_command import register as register_synth
from commands.train_command import register as register_train
from dataset_manifest import ManifestError
from evaluation import EvaluationError
from feature_extraction import ExtractionError
from feature_io import FeatureFormatError
from neural_layers import NeuralError
from run_config import RunConfig, RunConfigError
from sff_filterbank import FilterBankError
from signal_core import SignalError
from spectrograms import SpectrogramConfigurationError, SpectrogramError
from synthetic_corpus import SynthesisError
from training_service import TrainingConfigurationError, TrainingError
from zff_gci import ZffConfigurationError, ZffError

# Configure logging
logger = logging.getLogger("sffspec_logger")

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_USAGE = 2

# Errors that mean the request itself is wrong
USAGE_ERRORS = (RunConfigError, FilterBankError, ZffConfigurationError, SpectrogramConfigurationError,
                ModelConfigurationError, TrainingConfigurationError)
RUNTIME_ERRORS = (SignalError, ZffError, SpectrogramError, FeatureFormatError, ExtractionError, NeuralError,
                  TrainingError, ManifestError, EvaluationError, SynthesisError, OSError)


def register(subparsers, options) -> None:
    register_extract(subparsers, options)
    register_gci(subparsers, options)
    register_render(subparsers, options)
    register_train(subparsers, options)
    register_evaluate(subparsers, options)
    register_scan(subparsers, options)
    register_synth(subparsers, options)


def _qualified(e: Exception) -> str:
    return f"{type(e).__module__}: {e}"


def dispatch(handler: Callable[[RunConfig], int], config: RunConfig) -> int:
    """Run a command handler and turn its exceptions into exit codes."""
    try:
        return handler(config)
    except USAGE_ERRORS as e:
        print(_qualified(e), file=sys.stderr)
        return EXIT_USAGE
    except RUNTIME_ERRORS as e:
        logger.error(_qualified(e))
        return EXIT_FAILURE
