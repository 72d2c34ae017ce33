"""
Feature Matrix File Formats

Binary (.sffm) storage for FeatureMatrix objects plus CSV and 8-bit PGM
exports for inspecting spectrograms outside the toolkit.

Binary layout, little-endian throughout:
    magic "SFFM" | version u16 | kind u8 | K u32 | W u32 | pad_columns u32
    K*W float64 values, row-major | K float64 bin frequencies | W float64 column times
"""

import logging
import struct
from pathlib import Path
from typing import Union

import numpy as np

from spectrograms import FeatureKind, FeatureMatrix

# Configure logging
logger = logging.getLogger("sffspec_logger")

MAGIC = b"SFFM"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<4sHBIII")


class FeatureFormatError(Exception):
    """Custom exception for feature file errors."""
    pass


def encode_feature_matrix(fm: FeatureMatrix) -> bytes:
    K, W = fm.shape
    header = _HEADER.pack(MAGIC, FORMAT_VERSION, fm.kind.value, K, W, fm.pad_columns)
    body = (np.ascontiguousarray(fm.values, dtype="<f8").tobytes()
            + np.ascontiguousarray(fm.bin_freqs_hz, dtype="<f8").tobytes()
            + np.ascontiguousarray(fm.column_times_s, dtype="<f8").tobytes())
    return header + body


def decode_feature_matrix(blob: bytes) -> FeatureMatrix:
    """Parse the binary layout back into a FeatureMatrix.

    Raises:
        FeatureFormatError: On a bad magic, version, kind or truncated payload
    """
    if len(blob) < _HEADER.size:
        raise FeatureFormatError("Feature file shorter than its header")
    magic, version, kind_code, K, W, pad = _HEADER.unpack_from(blob, 0)
    if magic != MAGIC:
        raise FeatureFormatError(f"Bad magic {magic!r}, expected {MAGIC!r}")
    if version != FORMAT_VERSION:
        raise FeatureFormatError(f"Unsupported feature format version {version}")
    try:
        kind = FeatureKind(kind_code)
    except ValueError:
        raise FeatureFormatError(f"Unknown feature kind code {kind_code}")

    expected = _HEADER.size + 8 * (K * W + K + W)
    if len(blob) != expected:
        raise FeatureFormatError(f"Feature payload is {len(blob)} bytes, expected {expected}")

    offset = _HEADER.size
    values = np.frombuffer(blob, dtype="<f8", count=K * W, offset=offset).reshape(K, W)
    offset += 8 * K * W
    freqs = np.frombuffer(blob, dtype="<f8", count=K, offset=offset)
    offset += 8 * K
    times = np.frombuffer(blob, dtype="<f8", count=W, offset=offset)
    return FeatureMatrix(values.astype(np.float64), kind, freqs.astype(np.float64),
                         times.astype(np.float64), pad_columns=pad)


def save_feature_matrix(fm: FeatureMatrix, path: Union[str, Path]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(encode_feature_matrix(fm))


def load_feature_matrix(path: Union[str, Path]) -> FeatureMatrix:
    path = Path(path)
    try:
        blob = path.read_bytes()
    except OSError as e:
        raise FeatureFormatError(f"Cannot read feature file {path}: {e}")
    return decode_feature_matrix(blob)


def export_csv(fm: FeatureMatrix, path: Union[str, Path]) -> None:
    """One row per frequency bin: bin frequency followed by the W values."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    rows = np.column_stack((fm.bin_freqs_hz, fm.values))
    header = "freq_hz," + ",".join(f"{t:.6f}" for t in fm.column_times_s)
    np.savetxt(path, rows, delimiter=",", header=header, comments="", fmt="%.17g")


def to_gray_image(fm: FeatureMatrix) -> np.ndarray:
    """Min-max scale to 0..255 with low frequencies on the bottom row."""
    values = fm.values
    lo, hi = float(values.min()), float(values.max())
    if hi > lo:
        scaled = (values - lo) / (hi - lo) * 255.0
    else:
        scaled = np.zeros_like(values)
    return np.flipud(np.rint(scaled).astype(np.uint8))


def export_pgm(fm: FeatureMatrix, path: Union[str, Path]) -> None:
    """Write a binary (P5) 8-bit PGM image of the matrix."""
    image = to_gray_image(fm)
    height, width = image.shape
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as f:
        f.write(f"P5\n{width} {height}\n255\n".encode("ascii"))
        f.write(image.tobytes())
    logger.debug(f"Wrote {width}x{height} PGM to {path}")


def read_pgm(path: Union[str, Path]) -> np.ndarray:
    """Read back a P5 image written by export_pgm."""
    blob = Path(path).read_bytes()
    parts = blob.split(maxsplit=4)
    if len(parts) < 5 or parts[0] != b"P5":
        raise FeatureFormatError(f"{path} is not a binary PGM file")
    width, height, maxval = int(parts[1]), int(parts[2]), int(parts[3])
    if maxval != 255:
        raise FeatureFormatError(f"Unsupported PGM max value {maxval}")
    pixels = np.frombuffer(blob[len(blob) - width * height:], dtype=np.uint8)
    return pixels.reshape(height, width)
