"""Desk-scale data sources: synthetic Gaussian mixtures, IDX image files,
and quantization onto the 256-level training grid in [-1, 1].
"""

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import (
    BadMagic,
    DataExhausted,
    DimensionOverflow,
    LengthMismatch,
    NoCenters,
    OutOfRange,
    TruncatedFile,
)
from .forward import GRID_LEVELS, GRID_STEP
from .numerics import RngStream

# refuse to allocate beyond this many pixels from an untrusted header
MAX_IDX_ELEMENTS = 1 << 28

_IDX_IMAGE_MAGIC = 0x00000803
_IDX_LABEL_MAGIC = 0x00000801


@dataclass(frozen=True)
class Dataset:
    """Immutable sample matrix with optional class labels."""

    name: str
    samples: np.ndarray
    labels: np.ndarray | None = None
    num_classes: int = 0
    image_shape: tuple[int, int] | None = None

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.float64)
        if samples.ndim != 2:
            raise OutOfRange(f"samples must be (count, d), got {samples.shape}")
        if not np.all(np.isfinite(samples)):
            raise OutOfRange("samples must be finite")
        object.__setattr__(self, "samples", samples)
        if self.labels is not None:
            labels = np.asarray(self.labels, dtype=np.int64)
            if labels.shape != (samples.shape[0],):
                raise LengthMismatch(
                    f"{labels.shape[0]} labels for {samples.shape[0]} samples")
            if labels.size and (labels.min() < 0 or labels.max() >= self.num_classes):
                raise OutOfRange(f"labels must lie in 0..{self.num_classes - 1}")
            object.__setattr__(self, "labels", labels)

    @property
    def count(self) -> int:
        return self.samples.shape[0]

    @property
    def d(self) -> int:
        return self.samples.shape[1]


class DatasetCursor:
    """Sequential reader over a dataset for the training loop."""

    def __init__(self, dataset: Dataset):
        self.dataset = dataset
        self.pos = 0

    def take(self, k: int):
        if self.pos + k > self.dataset.count:
            raise DataExhausted(
                f"need {k} points, {self.dataset.count - self.pos} left")
        sl = slice(self.pos, self.pos + k)
        self.pos += k
        labels = None if self.dataset.labels is None else self.dataset.labels[sl].copy()
        return self.dataset.samples[sl].copy(), labels


class MixtureSampler:
    """Endless stream from an isotropic Gaussian mixture with uniform weights."""

    def __init__(self, centers, sigma: float, rng: RngStream):
        centers = np.asarray(centers, dtype=np.float64)
        if centers.ndim != 2 or centers.shape[0] < 1:
            raise NoCenters("mixture needs at least one center point")
        if sigma <= 0.0:
            raise OutOfRange(f"mixture scale must be > 0, got {sigma}")
        self.centers = centers
        self.sigma = float(sigma)
        self.rng = rng

    def take(self, k: int):
        c = self.centers.shape[0]
        d = self.centers.shape[1]
        idx = self.rng.integers(k, low=0, high=c)
        noise = self.rng.normals(k * d).reshape(k, d)
        return self.centers[idx] + self.sigma * noise, idx


def make_gaussian_mixture(centers, sigma: float, n: int, rng: RngStream) -> Dataset:
    """n draws with uniformly chosen centers; labels are the center indices."""
    if n < 1:
        raise OutOfRange(f"sample count must be >= 1, got {n}")
    sampler = MixtureSampler(centers, sigma, rng)
    x, labels = sampler.take(n)
    return Dataset("mixture", x, labels, num_classes=sampler.centers.shape[0])


# ------------------------------------------------------------ quantization


def quantize_to_grid(x: np.ndarray) -> np.ndarray:
    """Snap values in [-1, 1] to the nearest of the 256 byte levels."""
    x = np.asarray(x, dtype=np.float64)
    if np.any(x < -1.0) or np.any(x > 1.0) or not np.all(np.isfinite(x)):
        raise OutOfRange("quantization input must lie in [-1, 1]")
    k = np.rint((x + 1.0) * ((GRID_LEVELS - 1) / 2.0))
    return -1.0 + GRID_STEP * k


# ------------------------------------------------------------ IDX files


def _read_header(raw: bytes, path: str, expected_magic: int):
    if len(raw) < 4:
        raise TruncatedFile(f"{path}: shorter than its magic number")
    magic = struct.unpack(">I", raw[:4])[0]
    if magic != expected_magic:
        raise BadMagic(f"{path}: magic {raw[:4].hex()} not a supported layout")
    ndim = magic & 0xFF
    header_len = 4 + 4 * ndim
    if len(raw) < header_len:
        raise TruncatedFile(f"{path}: header needs {header_len} bytes, file has {len(raw)}")
    dims = struct.unpack(f">{ndim}I", raw[4:header_len])
    total = 1
    for dim in dims:
        total *= dim
    if total > MAX_IDX_ELEMENTS:
        raise DimensionOverflow(f"{path}: {total} elements exceed the {MAX_IDX_ELEMENTS} cap")
    if len(raw) != header_len + total:
        raise TruncatedFile(
            f"{path}: payload is {len(raw) - header_len} bytes, header promises {total}")
    return dims, raw[header_len:]


def idx_read(path: str, labels_path: str | None = None) -> Dataset:
    """Load an IDX image file, mapping bytes onto the [-1, 1] grid exactly."""
    raw = Path(path).read_bytes()
    dims, payload = _read_header(raw, path, _IDX_IMAGE_MAGIC)
    count, rows, cols = dims
    pixels = np.frombuffer(payload, dtype=np.uint8).astype(np.float64)
    samples = (-1.0 + GRID_STEP * pixels).reshape(count, rows * cols)

    labels = None
    num_classes = 0
    if labels_path is not None:
        lraw = Path(labels_path).read_bytes()
        (lcount,), lpayload = _read_header(lraw, labels_path, _IDX_LABEL_MAGIC)
        if lcount != count:
            raise LengthMismatch(f"{lcount} labels for {count} images")
        labels = np.frombuffer(lpayload, dtype=np.uint8).astype(np.int64)
        num_classes = int(labels.max()) + 1 if labels.size else 0
    return Dataset(Path(path).stem, samples, labels, num_classes, (rows, cols))


def idx_write(path: str, samples: np.ndarray, rows: int, cols: int) -> None:
    """Write grid-valued samples back to IDX bytes (inverse of idx_read)."""
    samples = np.asarray(samples, dtype=np.float64)
    if samples.ndim != 2 or samples.shape[1] != rows * cols:
        raise LengthMismatch(f"samples {samples.shape} do not tile {rows}x{cols} images")
    onto = quantize_to_grid(samples)
    pixels = np.rint((onto + 1.0) * ((GRID_LEVELS - 1) / 2.0)).astype(np.uint8)
    with open(path, "wb") as f:
        f.write(struct.pack(">IIII", _IDX_IMAGE_MAGIC, samples.shape[0], rows, cols))
        f.write(pixels.tobytes())


def idx_write_labels(path: str, labels: np.ndarray) -> None:
    labels = np.asarray(labels)
    if labels.size and (labels.min() < 0 or labels.max() > 255):
        raise OutOfRange("IDX labels must fit one byte")
    with open(path, "wb") as f:
        f.write(struct.pack(">II", _IDX_LABEL_MAGIC, labels.size))
        f.write(labels.astype(np.uint8).tobytes())
