"""
CNN Model Library

Block-stacked convolutional classifier: every block is convolution, batch
normalization, ReLU and adaptive max pooling; the blocks are followed by a
ReLU dense layer, dropout and a softmax output layer. This module owns the
model configuration, the parameter state with its Adam moments, the full
forward and backward passes, the Adam update and the checkpoint format.
"""

import json
import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Tuple, Union

import numpy as np
import xxhash

from neural_layers import (NeuralError, ShapeError, adaptive_maxpool_backward, adaptive_maxpool_forward,
                           batchnorm_backward, batchnorm_forward, conv2d_backward, conv2d_forward,
                           dense_backward, dense_forward, dropout_backward, dropout_forward, relu_backward,
                           relu_forward, softmax, weighted_cross_entropy)

# Configure logging
logger = logging.getLogger("sffspec_logger")

CHECKPOINT_MAGIC = b"SFFN"
CHECKPOINT_VERSION = 1

ADAM_LR = 1e-3
ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPSILON = 1e-8


class ModelUsageError(NeuralError):
    """Raised when model functions are called out of order."""
    pass


class ModelConfigurationError(ShapeError):
    """Raised when a block stack or layer setting cannot form a valid model."""
    pass


class TrainingAbortedError(NeuralError):
    """Raised when a loss or gradient stops being finite."""
    pass


class CheckpointError(NeuralError):
    """Raised when a checkpoint file cannot be read or does not match its config."""
    pass


@dataclass(frozen=True)
class BlockConfig:
    """Convolution kernel, channel count and pooled output size of one block."""
    kernel: Tuple[int, int]
    channels: int
    pool: Tuple[int, int]

    def spec(self) -> str:
        return f"{self.kernel[0]}x{self.kernel[1]}:{self.channels}:{self.pool[0]}x{self.pool[1]}"

    @classmethod
    def parse(cls, text: str) -> 'BlockConfig':
        """Parse 'KHxKW:CHANNELS:PHxPW', e.g. '12x16:16:90x135'."""
        try:
            kernel, channels, pool = text.strip().split(":")
            kh, kw = (int(v) for v in kernel.lower().split("x"))
            ph, pw = (int(v) for v in pool.lower().split("x"))
            return cls((kh, kw), int(channels), (ph, pw))
        except ValueError:
            raise ModelConfigurationError(f"Bad block spec '{text}'; expected KHxKW:CHANNELS:PHxPW")


def parse_blocks(text: str) -> Tuple[BlockConfig, ...]:
    return tuple(BlockConfig.parse(part) for part in text.split(",") if part.strip())


def format_blocks(blocks: Tuple[BlockConfig, ...]) -> str:
    return ",".join(b.spec() for b in blocks)


STANDARD_BLOCKS = (
    BlockConfig((12, 16), 16, (90, 135)),
    BlockConfig((8, 12), 24, (34, 50)),
    BlockConfig((5, 7), 32, (6, 8)),
)


@dataclass(frozen=True)
class ModelConfig:
    input_shape: Tuple[int, int]
    blocks: Tuple[BlockConfig, ...] = STANDARD_BLOCKS
    dense_units: int = 64
    num_classes: int = 4
    dropout_rate: float = 0.5

    def __post_init__(self):
        if not (0.0 <= self.dropout_rate < 1.0):
            raise ModelConfigurationError(f"Dropout rate must be in [0, 1), got {self.dropout_rate}")
        if self.dense_units < 1 or self.num_classes < 2 or not self.blocks:
            raise ModelConfigurationError("Model needs at least one block, one dense unit and two classes")
        trace_shapes(self)

    @classmethod
    def standard(cls, input_shape: Tuple[int, int] = (200, 1077), **kwargs) -> 'ModelConfig':
        return cls(tuple(input_shape), STANDARD_BLOCKS, **kwargs)

    def to_dict(self) -> dict:
        return {
            "input_shape": list(self.input_shape),
            "blocks": format_blocks(self.blocks),
            "dense_units": self.dense_units,
            "num_classes": self.num_classes,
            "dropout_rate": self.dropout_rate,
        }

    @classmethod
    def from_dict(cls, data: dict) -> 'ModelConfig':
        return cls(tuple(data["input_shape"]), parse_blocks(data["blocks"]), int(data["dense_units"]),
                   int(data["num_classes"]), float(data["dropout_rate"]))

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    def digest(self) -> int:
        return xxhash.xxh3_64_intdigest(self.to_json().encode("utf-8"))


def trace_shapes(config: ModelConfig) -> List[Tuple[str, Tuple[int, ...]]]:
    """Per-stage output shapes (channels, height, width) derived from the config.

    Raises:
        ModelConfigurationError: If a kernel does not fit its input or a pool does not shrink it
    """
    H, W = config.input_shape
    channels = 1
    stages: List[Tuple[str, Tuple[int, ...]]] = [("input", (channels, H, W))]
    for i, block in enumerate(config.blocks, start=1):
        kh, kw = block.kernel
        if kh < 1 or kw < 1 or block.channels < 1:
            raise ModelConfigurationError(f"block{i}: kernel and channel count must be positive")
        if kh > H or kw > W:
            raise ModelConfigurationError(f"block{i}.conv: kernel {kh}x{kw} does not fit input {H}x{W}")
        H, W = H - kh + 1, W - kw + 1
        channels = block.channels
        stages.append((f"block{i}.conv", (channels, H, W)))
        ph, pw = block.pool
        if not (1 <= ph <= H and 1 <= pw <= W) or (ph, pw) == (H, W):
            raise ModelConfigurationError(f"block{i}.pool: output {ph}x{pw} must be smaller than input {H}x{W}")
        H, W = ph, pw
        stages.append((f"block{i}.pool", (channels, H, W)))
    stages.append(("flatten", (channels * H * W,)))
    stages.append(("dense", (config.dense_units,)))
    stages.append(("output", (config.num_classes,)))
    return stages


def _flat_size(config: ModelConfig) -> int:
    return trace_shapes(config)[-3][1][0]


@dataclass
class ModelState:
    """Parameters, batch-norm running statistics, Adam moments and step count."""
    params: Dict[str, np.ndarray]
    running: Dict[str, np.ndarray]
    adam_m: Dict[str, np.ndarray] = field(default_factory=dict)
    adam_v: Dict[str, np.ndarray] = field(default_factory=dict)
    t: int = 0

    def __post_init__(self):
        for name, value in self.params.items():
            self.adam_m.setdefault(name, np.zeros_like(value))
            self.adam_v.setdefault(name, np.zeros_like(value))
            if self.adam_m[name].shape != value.shape or self.adam_v[name].shape != value.shape:
                raise ShapeError(f"Adam moments of {name} do not match its shape {value.shape}")
        if self.t < 0:
            raise ModelUsageError(f"Step counter must be nonnegative, got {self.t}")

    @classmethod
    def init(cls, config: ModelConfig, seed: int = 0) -> 'ModelState':
        """Fan-in scaled uniform weights U(-sqrt(6/fan_in), sqrt(6/fan_in)), zero biases, unit BN scale."""
        rng = np.random.default_rng(seed)
        params: Dict[str, np.ndarray] = {}
        running: Dict[str, np.ndarray] = {}

        def uniform(shape, fan_in):
            bound = np.sqrt(6.0 / fan_in)
            return rng.uniform(-bound, bound, size=shape)

        in_channels = 1
        for i, block in enumerate(config.blocks, start=1):
            kh, kw = block.kernel
            F = block.channels
            params[f"block{i}.conv.weight"] = uniform((F, in_channels, kh, kw), in_channels * kh * kw)
            params[f"block{i}.conv.bias"] = np.zeros(F)
            params[f"block{i}.bn.gamma"] = np.ones(F)
            params[f"block{i}.bn.beta"] = np.zeros(F)
            running[f"block{i}.bn.running_mean"] = np.zeros(F)
            running[f"block{i}.bn.running_var"] = np.ones(F)
            in_channels = F

        flat = _flat_size(config)
        params["dense.weight"] = uniform((flat, config.dense_units), flat)
        params["dense.bias"] = np.zeros(config.dense_units)
        params["output.weight"] = uniform((config.dense_units, config.num_classes), config.dense_units)
        params["output.bias"] = np.zeros(config.num_classes)
        return cls(params, running)

    def copy(self) -> 'ModelState':
        return ModelState(
            {k: v.copy() for k, v in self.params.items()},
            {k: v.copy() for k, v in self.running.items()},
            {k: v.copy() for k, v in self.adam_m.items()},
            {k: v.copy() for k, v in self.adam_v.items()},
            self.t,
        )

    @property
    def num_parameters(self) -> int:
        return int(sum(v.size for v in self.params.values()))


@dataclass
class ForwardCache:
    """Activations of a train-mode forward pass, consumed by backward()."""
    layers: List[Tuple[str, object]]
    probs: np.ndarray
    shapes: List[Tuple[str, Tuple[int, ...]]]


def as_batch(batch) -> np.ndarray:
    """Stack FeatureMatrix objects or K x W arrays into an (N, 1, K, W) array."""
    if isinstance(batch, np.ndarray):
        x = batch
    else:
        x = np.stack([getattr(item, "values", item) for item in batch])
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 3:
        x = x[:, None, :, :]
    if x.ndim != 4:
        raise ShapeError(f"input: expected (N, K, W) or (N, 1, K, W), got {x.shape}")
    return x


def model_forward(config: ModelConfig, state: ModelState, batch, mode: str = "infer",
                  rng: Optional[np.random.Generator] = None) -> Tuple[np.ndarray, Optional[ForwardCache]]:
    """Run the block stack and return class probabilities.

    Args:
        config: Model configuration
        state: Parameters and running statistics (BN statistics update in train mode)
        batch: FeatureMatrix list, (N, K, W) or (N, 1, K, W) array
        mode: "train" or "infer"
        rng: Generator for dropout draws, required in train mode with dropout

    Returns:
        Tuple of (N x classes probabilities, cache for backward() in train mode or None)

    Raises:
        ShapeError: Naming the stage whose input shape does not fit
    """
    if mode not in ("train", "infer"):
        raise ModelUsageError(f"Unknown mode '{mode}'")
    train = mode == "train"
    x = as_batch(batch)
    if x.shape[1:] != (1,) + tuple(config.input_shape):
        raise ShapeError(f"input: expected 1x{config.input_shape[0]}x{config.input_shape[1]}, got {x.shape[1:]}")
    if train and config.dropout_rate > 0 and rng is None:
        raise ModelUsageError("Train mode with dropout needs a seeded generator")

    p = state.params
    layers: List[Tuple[str, object]] = []
    shapes = [("input", x.shape[1:])]
    for i, block in enumerate(config.blocks, start=1):
        try:
            x, conv_cache = conv2d_forward(x, p[f"block{i}.conv.weight"], p[f"block{i}.conv.bias"])
            shapes.append((f"block{i}.conv", x.shape[1:]))
            x, bn_cache = batchnorm_forward(x, p[f"block{i}.bn.gamma"], p[f"block{i}.bn.beta"],
                                            state.running[f"block{i}.bn.running_mean"],
                                            state.running[f"block{i}.bn.running_var"], mode)
            x, relu_cache = relu_forward(x)
            x, pool_cache = adaptive_maxpool_forward(x, *block.pool)
            shapes.append((f"block{i}.pool", x.shape[1:]))
        except ShapeError as e:
            raise ShapeError(f"block{i}: {e}")
        layers.append((f"block{i}", (conv_cache, bn_cache, relu_cache, pool_cache, x.shape)))

    pooled_shape = x.shape
    x = x.reshape(x.shape[0], -1)
    shapes.append(("flatten", x.shape[1:]))
    try:
        x, dense_cache = dense_forward(x, p["dense.weight"], p["dense.bias"])
    except ShapeError as e:
        raise ShapeError(f"dense: {e}")
    x, dense_relu_cache = relu_forward(x)
    shapes.append(("dense", x.shape[1:]))
    x, dropout_mask = dropout_forward(x, config.dropout_rate, rng, train)
    logits, output_cache = dense_forward(x, p["output.weight"], p["output.bias"])
    shapes.append(("output", logits.shape[1:]))
    probs = softmax(logits)

    if not train:
        return probs, None
    layers.append(("head", (pooled_shape, dense_cache, dense_relu_cache, dropout_mask, output_cache)))
    return probs, ForwardCache(layers, probs, shapes)


def backward(config: ModelConfig, state: ModelState, cache: Optional[ForwardCache], targets,
             class_weights: Optional[np.ndarray] = None) -> Tuple[float, Dict[str, np.ndarray]]:
    """Weighted cross-entropy loss and its exact gradient for every parameter.

    Raises:
        ModelUsageError: If there is no train-mode forward cache
    """
    if cache is None:
        raise ModelUsageError("backward() needs the cache of a train-mode forward pass")
    loss, dlogits = weighted_cross_entropy(cache.probs, targets, class_weights)
    grads: Dict[str, np.ndarray] = {}

    _, (pooled_shape, dense_cache, dense_relu_cache, dropout_mask, output_cache) = cache.layers[-1]
    dx, grads["output.weight"], grads["output.bias"] = dense_backward(dlogits, output_cache)
    dx = dropout_backward(dx, dropout_mask)
    dx = relu_backward(dx, dense_relu_cache)
    dx, grads["dense.weight"], grads["dense.bias"] = dense_backward(dx, dense_cache)
    dx = dx.reshape(pooled_shape)

    for i in range(len(config.blocks), 0, -1):
        _, (conv_cache, bn_cache, relu_cache, pool_cache, _) = cache.layers[i - 1]
        dx = adaptive_maxpool_backward(dx, pool_cache)
        dx = relu_backward(dx, relu_cache)
        dx, grads[f"block{i}.bn.gamma"], grads[f"block{i}.bn.beta"] = batchnorm_backward(dx, bn_cache)
        dx, grads[f"block{i}.conv.weight"], grads[f"block{i}.conv.bias"] = conv2d_backward(dx, conv_cache)
    return loss, grads


def adam_step(state: ModelState, grads: Dict[str, np.ndarray], lr: float = ADAM_LR,
              beta1: float = ADAM_BETA1, beta2: float = ADAM_BETA2, eps: float = ADAM_EPSILON) -> ModelState:
    """One bias-corrected Adam update of every parameter; mutates and returns state.

    Raises:
        TrainingAbortedError: If any gradient is not finite (nothing is updated)
    """
    if lr <= 0 or eps <= 0 or not (0.0 <= beta1 < 1.0) or not (0.0 <= beta2 < 1.0):
        raise NeuralError(f"Invalid Adam hyperparameters lr={lr}, beta1={beta1}, beta2={beta2}, eps={eps}")
    for name, g in grads.items():
        if name not in state.params:
            raise ModelUsageError(f"Gradient for unknown parameter '{name}'")
        if g.shape != state.params[name].shape:
            raise ShapeError(f"Gradient of {name} has shape {g.shape}, parameter has {state.params[name].shape}")
        if not np.all(np.isfinite(g)):
            bad = int(np.count_nonzero(~np.isfinite(g)))
            raise TrainingAbortedError(f"Non-finite gradient in {name} ({bad} entries) at step {state.t + 1}")

    state.t += 1
    correction1 = 1.0 - beta1 ** state.t
    correction2 = 1.0 - beta2 ** state.t
    for name, g in grads.items():
        m = state.adam_m[name]
        v = state.adam_v[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        state.params[name] -= lr * (m / correction1) / (np.sqrt(v / correction2) + eps)
    return state


_U16 = struct.Struct("<H")
_U32 = struct.Struct("<I")
_U64 = struct.Struct("<Q")


def _tensor_groups(state: ModelState) -> List[Tuple[str, Dict[str, np.ndarray]]]:
    return [("param", state.params), ("running", state.running), ("adam_m", state.adam_m), ("adam_v", state.adam_v)]


def encode_checkpoint(config: ModelConfig, state: ModelState) -> bytes:
    """Serialize config and state.

    Layout, little-endian: magic "SFFN" | version u16 | config digest u64 |
    config JSON length u32 + bytes | t u64 | tensor count u32 | per tensor:
    name length u16 + UTF-8 name | ndim u8 | dims u32 each | float64 data.
    """
    config_json = config.to_json().encode("utf-8")
    tensors = [(f"{group}/{name}", values[name]) for group, values in _tensor_groups(state)
               for name in sorted(values)]
    parts = [CHECKPOINT_MAGIC, _U16.pack(CHECKPOINT_VERSION), _U64.pack(config.digest()),
             _U32.pack(len(config_json)), config_json, _U64.pack(state.t), _U32.pack(len(tensors))]
    for name, array in tensors:
        encoded = name.encode("utf-8")
        parts.append(_U16.pack(len(encoded)))
        parts.append(encoded)
        parts.append(struct.pack("<B", array.ndim))
        parts.append(struct.pack(f"<{array.ndim}I", *array.shape))
        parts.append(np.ascontiguousarray(array, dtype="<f8").tobytes())
    return b"".join(parts)


class _Reader:
    def __init__(self, blob: bytes):
        self.blob = blob
        self.offset = 0

    def take(self, n: int) -> bytes:
        if self.offset + n > len(self.blob):
            raise CheckpointError("Checkpoint is truncated")
        chunk = self.blob[self.offset:self.offset + n]
        self.offset += n
        return chunk

    def unpack(self, fmt: struct.Struct):
        return fmt.unpack(self.take(fmt.size))[0]


def decode_checkpoint(blob: bytes) -> Tuple[ModelConfig, ModelState]:
    reader = _Reader(blob)
    if reader.take(4) != CHECKPOINT_MAGIC:
        raise CheckpointError("Not a model checkpoint (bad magic)")
    version = reader.unpack(_U16)
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"Unsupported checkpoint version {version}")
    digest = reader.unpack(_U64)
    config_json = reader.take(reader.unpack(_U32))
    try:
        config = ModelConfig.from_dict(json.loads(config_json.decode("utf-8")))
    except (KeyError, TypeError, ValueError, ModelConfigurationError) as e:
        raise CheckpointError(f"Checkpoint config is unreadable: {e}") from e
    if config.digest() != digest:
        raise CheckpointError("Checkpoint config digest mismatch")
    t = reader.unpack(_U64)

    groups: Dict[str, Dict[str, np.ndarray]] = {"param": {}, "running": {}, "adam_m": {}, "adam_v": {}}
    for _ in range(reader.unpack(_U32)):
        name = reader.take(reader.unpack(_U16)).decode("utf-8")
        ndim = reader.take(1)[0]
        dims = struct.unpack(f"<{ndim}I", reader.take(4 * ndim))
        count = int(np.prod(dims)) if ndim else 1
        data = np.frombuffer(reader.take(8 * count), dtype="<f8").astype(np.float64).reshape(dims)
        group, _, tensor = name.partition("/")
        if group not in groups:
            raise CheckpointError(f"Unknown tensor group in '{name}'")
        groups[group][tensor] = data
    if reader.offset != len(blob):
        raise CheckpointError(f"{len(blob) - reader.offset} trailing bytes after the last tensor")

    expected = ModelState.init(config)
    for name, value in expected.params.items():
        if name not in groups["param"] or groups["param"][name].shape != value.shape:
            raise CheckpointError(f"Checkpoint parameter {name} missing or misshaped")
    for name, value in expected.running.items():
        if name not in groups["running"] or groups["running"][name].shape != value.shape:
            raise CheckpointError(f"Checkpoint running statistic {name} missing or misshaped")
    try:
        state = ModelState(groups["param"], groups["running"], groups["adam_m"], groups["adam_v"], t)
    except ShapeError as e:
        raise CheckpointError(f"Checkpoint optimizer state is inconsistent: {e}") from e
    return config, state


def save_checkpoint(path: Union[str, Path], config: ModelConfig, state: ModelState) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(encode_checkpoint(config, state))
    logger.debug(f"Saved checkpoint to {path} (step {state.t})")


def load_checkpoint(path: Union[str, Path]) -> Tuple[ModelConfig, ModelState]:
    path = Path(path)
    try:
        blob = path.read_bytes()
    except OSError as e:
        raise CheckpointError(f"Cannot read checkpoint {path}: {e}")
    return decode_checkpoint(blob)
