"""8-bit min-max quantization of channel groups and tiling into mosaics."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from privfan.errors import FormatError, ValidationError
from privfan.tensor import FeatureTensor

BITS = 8
LEVELS = (1 << BITS) - 1


def round_half_away(x):
    """Round to nearest integer, ties away from zero (np.round rounds ties to even)."""
    x = np.asarray(x, dtype=np.float64)
    return np.sign(x) * np.floor(np.abs(x) + 0.5)


@dataclass(frozen=True)
class QuantParams:
    min: float
    max: float
    bits: int = BITS

    def __post_init__(self):
        # Stored as float32 so that the container round-trips them exactly.
        lo, hi = float(np.float32(self.min)), float(np.float32(self.max))
        if not (math.isfinite(lo) and math.isfinite(hi)) or lo > hi:
            raise ValidationError(f"invalid quantization range [{self.min}, {self.max}]")
        if self.bits != BITS:
            raise ValidationError(f"only {BITS}-bit quantization is supported")
        object.__setattr__(self, "min", lo)
        object.__setattr__(self, "max", hi)


@dataclass(frozen=True, eq=False)
class Mosaic:
    """Channels of equal size laid out row-major on a grid, 8-bit pixels."""

    grid_rows: int
    grid_cols: int
    tile_height: int
    tile_width: int
    pixels: np.ndarray
    occupied: int

    def __post_init__(self):
        pixels = np.ascontiguousarray(self.pixels, dtype=np.uint8)
        if min(self.grid_rows, self.grid_cols, self.tile_height, self.tile_width) < 1:
            raise FormatError("mosaic dimensions must be positive")
        if pixels.shape != (self.grid_rows * self.tile_height, self.grid_cols * self.tile_width):
            raise FormatError(f"mosaic pixels {pixels.shape} disagree with grid/tile dimensions")
        if not 0 <= self.occupied <= self.grid_rows * self.grid_cols:
            raise FormatError(f"occupied={self.occupied} exceeds {self.grid_rows}x{self.grid_cols} grid")
        object.__setattr__(self, "pixels", pixels)

    @property
    def shape(self) -> tuple[int, int]:
        return self.pixels.shape

    def __eq__(self, other):
        if not isinstance(other, Mosaic):
            return NotImplemented
        return (
            (self.grid_rows, self.grid_cols, self.tile_height, self.tile_width, self.occupied)
            == (other.grid_rows, other.grid_cols, other.tile_height, other.tile_width, other.occupied)
            and np.array_equal(self.pixels, other.pixels)
        )

    __hash__ = None


def _check_indices(indices, channels):
    indices = [int(i) for i in indices]
    if not indices:
        raise ValueError("channel index list is empty")
    if len(set(indices)) != len(indices):
        raise ValidationError("channel indices contain duplicates")
    if min(indices) < 0 or max(indices) >= channels:
        raise IndexError(f"channel index out of range for {channels} channels")
    return indices


def quantize_values(values: np.ndarray, params: QuantParams) -> np.ndarray:
    values = np.asarray(values, dtype=np.float64)
    span = params.max - params.min
    if span == 0:
        return np.zeros(values.shape, dtype=np.uint8)
    codes = round_half_away((values - params.min) / span * LEVELS)
    return np.clip(codes, 0, LEVELS).astype(np.uint8)


def quantize_group(tensor: FeatureTensor, indices, per_channel: bool = False):
    """Quantize the selected channels to 8-bit codes.

    Returns ``(codes, params)`` where ``codes`` has shape (n, H, W). With the
    default group mode one ``QuantParams`` covers every selected channel; with
    ``per_channel=True`` a list with one entry per channel is returned.
    """
    indices = _check_indices(indices, tensor.channels)
    values = tensor.data[indices]
    if per_channel:
        params = [QuantParams(float(v.min()), float(v.max())) for v in values]
        codes = np.stack([quantize_values(v, p) for v, p in zip(values, params)])
        return codes, params
    params = QuantParams(float(values.min()), float(values.max()))
    return quantize_values(values, params), params


def dequantize_group(codes, params, dtype=np.float32) -> np.ndarray:
    """Map codes back to values. Tensors are float32; pass ``dtype=np.float64``
    to see the reconstruction before the storage rounding."""
    codes = np.asarray(codes)
    if isinstance(params, QuantParams):
        return _dequantize(codes, params, dtype)
    return np.stack([_dequantize(c, p, dtype) for c, p in zip(codes, params)])


def _dequantize(codes, params, dtype=np.float32):
    if params.max == params.min:
        return np.full(codes.shape, params.min, dtype=dtype)
    span = params.max - params.min
    return (params.min + codes.astype(np.float64) / LEVELS * span).astype(dtype)


def grid_shape(n: int) -> tuple[int, int]:
    cols = math.isqrt(n - 1) + 1 if n > 1 else 1
    rows = -(-n // cols)
    return rows, cols


def tile(codes) -> Mosaic:
    """Lay out ``codes`` (n, h, w) on a near-square grid, padding with zero tiles."""
    codes = np.asarray(codes, dtype=np.uint8)
    if codes.ndim != 3:
        raise ValueError(f"codes must be (n, h, w), got {codes.shape}")
    n, th, tw = codes.shape
    if n == 0:
        raise ValueError("cannot tile zero channels")
    rows, cols = grid_shape(n)
    padded = np.zeros((rows * cols, th, tw), dtype=np.uint8)
    padded[:n] = codes
    pixels = padded.reshape(rows, cols, th, tw).transpose(0, 2, 1, 3).reshape(rows * th, cols * tw)
    return Mosaic(rows, cols, th, tw, pixels, n)


def untile(mosaic: Mosaic) -> np.ndarray:
    rows, cols = mosaic.grid_rows, mosaic.grid_cols
    if mosaic.occupied < 1 or grid_shape(mosaic.occupied) != (rows, cols):
        raise FormatError(f"occupied count {mosaic.occupied} inconsistent with {rows}x{cols} grid")
    th, tw = mosaic.tile_height, mosaic.tile_width
    tiles = mosaic.pixels.reshape(rows, th, cols, tw).transpose(0, 2, 1, 3).reshape(rows * cols, th, tw)
    return tiles[: mosaic.occupied].copy()
