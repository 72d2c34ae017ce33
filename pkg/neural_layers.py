"""
Neural Layer Library

Forward and backward passes of the layers used by the classifier, on numpy
arrays laid out as (batch, channels, height, width). Every forward function
returns (out, cache) and the matching backward function takes the upstream
gradient and that cache.
"""

import logging
from typing import Optional, Tuple

import numpy as np

# Configure logging
logger = logging.getLogger("sffspec_logger")

BN_EPSILON = 1e-5
BN_MOMENTUM = 0.9
LOG_FLOOR = 1e-12


class NeuralError(Exception):
    """Custom exception for neural network errors."""
    pass


class ShapeError(NeuralError):
    """Raised when tensor shapes do not fit the operation."""
    pass


class DegenerateBatchError(NeuralError):
    """Raised when batch normalization cannot estimate batch statistics."""
    pass


def conv2d_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray) -> Tuple[np.ndarray, tuple]:
    """Valid cross-correlation with stride 1.

    Args:
        x: Input of shape (N, C, H, W)
        w: Kernels of shape (F, C, kh, kw)
        b: Bias of shape (F,)

    Returns:
        Output of shape (N, F, H - kh + 1, W - kw + 1) and the cache
    """
    if x.ndim != 4 or w.ndim != 4:
        raise ShapeError(f"conv2d expects 4-D input and kernels, got {x.shape} and {w.shape}")
    N, C, H, W = x.shape
    F, Ck, kh, kw = w.shape
    if Ck != C:
        raise ShapeError(f"Kernels expect {Ck} channels, input has {C}")
    if kh > H or kw > W:
        raise ShapeError(f"Kernel {kh}x{kw} does not fit input {H}x{W}")
    if b.shape != (F,):
        raise ShapeError(f"Bias shape {b.shape} does not match {F} kernels")

    Ho, Wo = H - kh + 1, W - kw + 1
    out = np.empty((N, F, Ho, Wo))
    out[...] = b[None, :, None, None]
    # Accumulate one kernel tap at a time; each tap is a channel mix
    for i in range(kh):
        for j in range(kw):
            out += np.einsum("nchw,fc->nfhw", x[:, :, i:i + Ho, j:j + Wo], w[:, :, i, j])
    return out, (x, w)


def conv2d_backward(dout: np.ndarray, cache: tuple) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Gradients (dx, dw, db) of the valid convolution."""
    x, w = cache
    _, _, kh, kw = w.shape
    Ho, Wo = dout.shape[2], dout.shape[3]
    dx = np.zeros_like(x)
    dw = np.empty_like(w)
    for i in range(kh):
        for j in range(kw):
            window = x[:, :, i:i + Ho, j:j + Wo]
            dw[:, :, i, j] = np.einsum("nfhw,nchw->fc", dout, window)
            dx[:, :, i:i + Ho, j:j + Wo] += np.einsum("nfhw,fc->nchw", dout, w[:, :, i, j])
    db = dout.sum(axis=(0, 2, 3))
    return dx, dw, db


def batchnorm_forward(x: np.ndarray, gamma: np.ndarray, beta: np.ndarray,
                      running_mean: np.ndarray, running_var: np.ndarray, mode: str = "train",
                      momentum: float = BN_MOMENTUM, eps: float = BN_EPSILON) -> Tuple[np.ndarray, tuple]:
    """Per-channel batch normalization over batch and spatial axes.

    In train mode the batch statistics are used and running_mean/running_var
    are updated in place as running = momentum * running + (1 - momentum) * batch
    (biased variance). In infer mode the running statistics are used.

    Raises:
        DegenerateBatchError: For a batch of one sample in train mode
    """
    if x.ndim != 4 or gamma.shape != (x.shape[1],) or beta.shape != (x.shape[1],):
        raise ShapeError(f"batchnorm: input {x.shape} does not match scale {gamma.shape} / shift {beta.shape}")

    if mode == "train":
        if x.shape[0] < 2:
            raise DegenerateBatchError(f"Batch normalization needs at least 2 samples in train mode, got {x.shape[0]}")
        mean = x.mean(axis=(0, 2, 3))
        var = x.var(axis=(0, 2, 3))
        running_mean *= momentum
        running_mean += (1.0 - momentum) * mean
        running_var *= momentum
        running_var += (1.0 - momentum) * var
    elif mode == "infer":
        mean, var = running_mean, running_var
    else:
        raise NeuralError(f"Unknown mode '{mode}'")

    inv_std = 1.0 / np.sqrt(var + eps)
    x_hat = (x - mean[None, :, None, None]) * inv_std[None, :, None, None]
    out = gamma[None, :, None, None] * x_hat + beta[None, :, None, None]
    return out, (x_hat, gamma, inv_std, mode)


def batchnorm_backward(dout: np.ndarray, cache: tuple) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Gradients (dx, dgamma, dbeta) of batch normalization."""
    x_hat, gamma, inv_std, mode = cache
    dgamma = np.sum(dout * x_hat, axis=(0, 2, 3))
    dbeta = dout.sum(axis=(0, 2, 3))
    dx_hat = dout * gamma[None, :, None, None]
    scale = inv_std[None, :, None, None]
    if mode == "infer":
        return dx_hat * scale, dgamma, dbeta

    m = x_hat.shape[0] * x_hat.shape[2] * x_hat.shape[3]
    sum_dx_hat = dx_hat.sum(axis=(0, 2, 3))[None, :, None, None]
    sum_dx_hat_x_hat = np.sum(dx_hat * x_hat, axis=(0, 2, 3))[None, :, None, None]
    dx = scale / m * (m * dx_hat - sum_dx_hat - x_hat * sum_dx_hat_x_hat)
    return dx, dgamma, dbeta


def relu_forward(x: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    return np.maximum(x, 0.0), x


def relu_backward(dout: np.ndarray, cache: np.ndarray) -> np.ndarray:
    return dout * (cache > 0)


def pool_boundaries(size: int, out_size: int) -> np.ndarray:
    """Patch edges floor(i * size / out_size) for i = 0..out_size."""
    return (np.arange(out_size + 1) * size) // out_size


def adaptive_maxpool_forward(x: np.ndarray, out_h: int, out_w: int) -> Tuple[np.ndarray, tuple]:
    """Max over an out_h x out_w grid of contiguous, non-overlapping patches.

    The flat spatial index of each patch maximum is kept for the backward
    pass; on ties the first element in row-major order wins.
    """
    if x.ndim != 4:
        raise ShapeError(f"Pooling expects 4-D input, got {x.shape}")
    N, C, H, W = x.shape
    if out_h < 1 or out_w < 1:
        raise ShapeError(f"Pool output must be at least 1x1, got {out_h}x{out_w}")
    if out_h > H or out_w > W:
        raise ShapeError(f"Pool output {out_h}x{out_w} exceeds input {H}x{W}")

    rows = pool_boundaries(H, out_h)
    cols = pool_boundaries(W, out_w)
    out = np.empty((N, C, out_h, out_w))
    argmax = np.empty((N, C, out_h, out_w), dtype=np.int64)
    for i in range(out_h):
        r0, r1 = rows[i], rows[i + 1]
        for j in range(out_w):
            c0, c1 = cols[j], cols[j + 1]
            patch = x[:, :, r0:r1, c0:c1].reshape(N, C, -1)
            a = patch.argmax(axis=2)
            out[:, :, i, j] = np.take_along_axis(patch, a[..., None], axis=2)[..., 0]
            pw = c1 - c0
            argmax[:, :, i, j] = (r0 + a // pw) * W + c0 + a % pw
    return out, (x.shape, argmax)


def adaptive_maxpool_backward(dout: np.ndarray, cache: tuple) -> np.ndarray:
    shape, argmax = cache
    N, C, H, W = shape
    dx = np.zeros((N, C, H * W))
    np.add.at(dx, (np.arange(N)[:, None, None], np.arange(C)[None, :, None], argmax.reshape(N, C, -1)),
              dout.reshape(N, C, -1))
    return dx.reshape(shape)


def dense_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray) -> Tuple[np.ndarray, tuple]:
    """Fully connected layer on (N, D) input with weights (D, M)."""
    if x.ndim != 2 or w.ndim != 2 or x.shape[1] != w.shape[0] or b.shape != (w.shape[1],):
        raise ShapeError(f"dense: input {x.shape} does not match weights {w.shape} / bias {b.shape}")
    return x @ w + b, (x, w)


def dense_backward(dout: np.ndarray, cache: tuple) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    x, w = cache
    return dout @ w.T, x.T @ dout, dout.sum(axis=0)


def dropout_forward(x: np.ndarray, rate: float, rng: Optional[np.random.Generator],
                    train: bool) -> Tuple[np.ndarray, Optional[np.ndarray]]:
    """Inverted dropout: kept units are scaled by 1 / (1 - rate) in train mode only."""
    if not train or rate <= 0.0:
        return x, None
    if rng is None:
        raise NeuralError("Dropout in train mode needs a random generator")
    mask = (rng.random(x.shape) >= rate) / (1.0 - rate)
    return x * mask, mask


def dropout_backward(dout: np.ndarray, mask: Optional[np.ndarray]) -> np.ndarray:
    return dout if mask is None else dout * mask


def softmax(logits: np.ndarray) -> np.ndarray:
    """Row-wise softmax with the row maximum subtracted first."""
    shifted = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def _target_indices(targets: np.ndarray, num_classes: int) -> np.ndarray:
    targets = np.asarray(targets)
    if targets.ndim == 2:
        if targets.shape[1] != num_classes:
            raise ShapeError(f"One-hot targets have {targets.shape[1]} classes, expected {num_classes}")
        return targets.argmax(axis=1)
    return targets.astype(np.int64)


def weighted_cross_entropy(probs: np.ndarray, targets: np.ndarray,
                           class_weights: Optional[np.ndarray] = None) -> Tuple[float, np.ndarray]:
    """Mean over the batch of -w[y] * log p[y], and its gradient w.r.t. the logits.

    Args:
        probs: Softmax output of shape (N, C)
        targets: Class indices (N,) or one-hot rows (N, C)
        class_weights: Nonnegative weight per class; all ones when omitted

    Returns:
        Tuple of (loss, dlogits)
    """
    N, C = probs.shape
    y = _target_indices(targets, C)
    if y.shape != (N,) or np.any(y < 0) or np.any(y >= C):
        raise ShapeError(f"Targets must be {N} class indices in [0, {C})")
    weights = np.ones(C) if class_weights is None else np.asarray(class_weights, dtype=np.float64)
    if weights.shape != (C,) or np.any(weights < 0):
        raise NeuralError(f"Class weights must be {C} nonnegative values, got {weights}")

    w = weights[y]
    picked = probs[np.arange(N), y]
    loss = float(np.mean(-w * np.log(np.maximum(picked, LOG_FLOOR))))
    dlogits = probs.copy()
    dlogits[np.arange(N), y] -= 1.0
    dlogits *= (w / N)[:, None]
    return loss, dlogits
