"""
Run Configuration

RunConfig holds every tunable of the toolkit with its default. Values come
from three layers: built-in defaults, an optional config file (key = value
lines or a JSON object) and command-line flags, each overriding the one
before. Converters build the per-module configuration objects, which
validate their own ranges.
"""

import json
import logging
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple, Union

from cnn_model import STANDARD_BLOCKS, ModelConfig, format_blocks, parse_blocks
from feature_extraction import ExtractionSettings
from spectrograms import FeatureKind, SpectrogramConfigurationError
from training_service import TrainingConfig
from zff_gci import AUTO_PITCH, FIXED_MS, ZffConfig

# Configure logging
logger = logging.getLogger("sffspec_logger")

FIELD_HELP = {
    "inputs": "input WAV files, directories or predictions CSVs",
    "output": "output directory ('-' writes GCI listings to standard output)",
    "manifest": "manifest CSV (id,path,label,session,speaker,improvised)",
    "features": "feature directory holding index.csv",
    "checkpoint": "model checkpoint to evaluate",
    "config": "config file of key = value lines or a JSON object",
    "band_lo_hz": "lower edge of the analysis band in Hz (excluded)",
    "band_hi_hz": "upper edge of the analysis band in Hz (included)",
    "spacing_hz": "SFF bin spacing in Hz",
    "pole_radius": "SFF pole radius r, inside (0, 1)",
    "channel": "channel to read from multichannel WAV files (-1: mono only)",
    "seg_seconds": "segment length in seconds",
    "trend_window": f"ZFF trend window mode, {AUTO_PITCH} or {FIXED_MS}",
    "trend_window_ms": f"trend window length in ms for {FIXED_MS}",
    "trend_passes": "number of trend-removal passes after each resonator pass",
    "resonator_passes": "number of zero frequency resonator passes in cascade",
    "smoothing_passes": "moving-mean passes that smooth formant ripple out of the ZFF signal",
    "kinds": "feature kinds: pitch_sync_sff, sff_fixed_frame, stft (comma-separated) or all",
    "pad_width": "feature matrix width after zero padding",
    "sff_frame_ms": "frame length of the fixed-frame SFF spectrogram in ms",
    "sff_overlap": "frame overlap fraction of the fixed-frame SFF spectrogram",
    "stft_frame_ms": "STFT frame length in ms",
    "stft_hop_ms": "STFT hop in ms",
    "dft_length": "STFT DFT length in samples",
    "inclusive_gci_sum": "sum both bounding GCIs in every pitch-synchronous column",
    "blocks": "CNN blocks as KHxKW:CHANNELS:PHxPW, comma-separated",
    "dense_units": "width of the fully connected layer",
    "dropout": "dropout rate after the fully connected layer",
    "epochs": "maximum number of training epochs",
    "batch_size": "mini-batch size",
    "lr": "Adam learning rate",
    "beta1": "Adam first-moment decay",
    "beta2": "Adam second-moment decay",
    "epsilon": "Adam epsilon",
    "patience": "epochs without validation improvement before stopping",
    "selection_metric": "validation metric for model selection, wa or uwa",
    "weighted_loss": "weight the loss by inverse class frequency",
    "both_orders": "also swap validation and test speakers (doubles the folds)",
    "improvised_only": "keep only utterances marked improvised",
    "folds": "comma-separated fold indices to run (default: all)",
    "sessions": "sessions in a synthetic corpus",
    "utterances_per_speaker": "utterances per speaker in a synthetic corpus",
    "duration_s": "utterance length of a synthetic corpus in seconds",
    "sample_rate_hz": "sample rate of a synthetic corpus",
    "seed": "random seed",
    "jobs": "worker threads for per-utterance work",
    "seconds": "write GCI listings in seconds instead of samples",
}


class RunConfigError(Exception):
    """Custom exception for configuration errors."""
    pass


class CommandUsageError(RunConfigError):
    """Raised when a command is missing required inputs."""
    pass


@dataclass
class RunConfig:
    # Paths
    inputs: List[str] = field(default_factory=list)
    output: str = "out"
    manifest: str = ""
    features: str = ""
    checkpoint: str = ""
    config: str = ""
    # Signal and filter bank
    band_lo_hz: float = 0.0
    band_hi_hz: float = 4000.0
    spacing_hz: float = 20.0
    pole_radius: float = 0.9394
    channel: int = -1
    seg_seconds: float = 3.0
    # GCI detection
    trend_window: str = AUTO_PITCH
    trend_window_ms: float = 10.0
    trend_passes: int = 2
    resonator_passes: int = 1
    smoothing_passes: int = 3
    # Spectrograms
    kinds: str = "pitch_sync_sff"
    pad_width: int = 1077
    sff_frame_ms: float = 20.0
    sff_overlap: float = 0.5
    stft_frame_ms: float = 40.0
    stft_hop_ms: float = 10.0
    dft_length: int = 800
    inclusive_gci_sum: bool = False
    # Model
    blocks: str = format_blocks(STANDARD_BLOCKS)
    dense_units: int = 64
    dropout: float = 0.5
    # Training
    epochs: int = 100
    batch_size: int = 32
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    patience: int = 5
    selection_metric: str = "wa"
    weighted_loss: bool = True
    both_orders: bool = False
    improvised_only: bool = False
    folds: str = ""
    # Synthetic corpus
    sessions: int = 2
    utterances_per_speaker: int = 10
    duration_s: float = 0.6
    sample_rate_hz: int = 8000
    # Run
    seed: int = 0
    jobs: int = 1
    seconds: bool = False

    @classmethod
    def field_names(cls) -> List[str]:
        return [f.name for f in fields(cls)]

    @classmethod
    def from_sources(cls, *layers: Optional[Dict[str, Any]]) -> 'RunConfig':
        """Built-in defaults overridden by each layer in turn (e.g. file values, then flags)."""
        config = cls()
        for source in layers:
            if not source:
                continue
            updates = {}
            for key, value in source.items():
                name = key.replace("-", "_")
                if name not in config.__dataclass_fields__:
                    raise RunConfigError(f"Unknown configuration key '{key}'")
                updates[name] = _coerce(cls.__dataclass_fields__[name].type, value, key)
            config = replace(config, **updates)
        return config

    @property
    def feature_kinds(self) -> Tuple[FeatureKind, ...]:
        text = self.kinds.strip().lower()
        if text == "all":
            return tuple(FeatureKind)
        try:
            kinds = tuple(FeatureKind.from_label(part) for part in text.split(",") if part.strip())
        except SpectrogramConfigurationError as e:
            raise RunConfigError(str(e))
        if not kinds:
            raise RunConfigError("No feature kind selected")
        return kinds

    @property
    def fold_indices(self) -> Optional[List[int]]:
        if not self.folds.strip():
            return None
        try:
            return [int(v) for v in self.folds.split(",")]
        except ValueError:
            raise RunConfigError(f"Folds must be comma-separated integers, got '{self.folds}'")

    def to_filterbank_args(self) -> Dict[str, float]:
        return {"band_lo_hz": self.band_lo_hz, "band_hi_hz": self.band_hi_hz,
                "spacing_hz": self.spacing_hz, "pole_radius": self.pole_radius}

    def to_zff_config(self) -> ZffConfig:
        if self.trend_window not in (AUTO_PITCH, FIXED_MS):
            raise RunConfigError(f"trend_window must be '{AUTO_PITCH}' or '{FIXED_MS}', got '{self.trend_window}'")
        return ZffConfig(self.trend_window, self.trend_window_ms, self.trend_passes, self.resonator_passes,
                         self.smoothing_passes)

    def to_extraction_settings(self) -> ExtractionSettings:
        if self.seg_seconds <= 0:
            raise RunConfigError(f"seg_seconds must be positive, got {self.seg_seconds}")
        if self.pad_width < 1:
            raise RunConfigError(f"pad_width must be positive, got {self.pad_width}")
        return ExtractionSettings(
            zff=self.to_zff_config(),
            seg_seconds=self.seg_seconds,
            pad_width=self.pad_width,
            kinds=self.feature_kinds,
            sff_frame_ms=self.sff_frame_ms,
            sff_overlap=self.sff_overlap,
            stft_frame_ms=self.stft_frame_ms,
            stft_hop_ms=self.stft_hop_ms,
            dft_length=self.dft_length,
            inclusive_gci_sum=self.inclusive_gci_sum,
            **self.to_filterbank_args(),
        )

    def to_model_config(self, input_shape: Tuple[int, int]) -> ModelConfig:
        return ModelConfig(tuple(input_shape), parse_blocks(self.blocks), self.dense_units, 4, self.dropout)

    def to_training_config(self) -> TrainingConfig:
        return TrainingConfig(self.epochs, self.batch_size, self.lr, self.beta1, self.beta2, self.epsilon,
                              self.patience, self.seed, self.selection_metric, self.weighted_loss)

    @property
    def channel_index(self) -> Optional[int]:
        return None if self.channel < 0 else self.channel

    def to_dict(self) -> Dict[str, Any]:
        return {name: getattr(self, name) for name in self.field_names()}

    def save(self, path: Union[str, Path]) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8") as f:
            json.dump(self.to_dict(), f, indent=2)


def _coerce(kind, value: Any, key: str) -> Any:
    try:
        if kind is bool or kind == "bool":
            if isinstance(value, bool):
                return value
            text = str(value).strip().lower()
            if text in ("1", "true", "yes", "on"):
                return True
            if text in ("0", "false", "no", "off"):
                return False
            raise ValueError(value)
        if kind is int or kind == "int":
            if isinstance(value, float) and not value.is_integer():
                raise ValueError(value)
            return int(value)
        if kind is float or kind == "float":
            return float(value)
        if kind is str or kind == "str":
            return str(value)
        # List[str]
        if isinstance(value, (list, tuple)):
            return [str(v) for v in value]
        return [v.strip() for v in str(value).split(",") if v.strip()]
    except (TypeError, ValueError):
        raise RunConfigError(f"Invalid value '{value}' for '{key}'")


def load_config_file(path: Union[str, Path]) -> Dict[str, Any]:
    """Read `key = value` lines (# comments allowed) or, for .json files, one object."""
    path = Path(path)
    if not path.is_file():
        raise RunConfigError(f"Config file not found: {path}")
    text = path.read_text(encoding="utf-8")
    if path.suffix.lower() == ".json":
        try:
            data = json.loads(text)
        except json.JSONDecodeError as e:
            raise RunConfigError(f"Invalid JSON in {path}: {e}")
        if not isinstance(data, dict):
            raise RunConfigError(f"{path} must hold a JSON object")
        return data

    values: Dict[str, Any] = {}
    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise RunConfigError(f"{path}:{line_no}: expected 'key = value'")
        key, value = (part.strip() for part in line.split("=", 1))
        values[key] = value
    logger.debug(f"Read {len(values)} settings from {path}")
    return values
