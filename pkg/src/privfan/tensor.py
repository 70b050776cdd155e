"""Feature tensors, images and task labels, plus the PFT1 array file format.

PFT1 layout (little-endian)::

    magic   4 bytes  b"PFT1"
    version u8       1
    dtype   u8       0 (float32)
    height  u16
    width   u16
    channels u16
    payload channels*height*width float32, channel-major outermost
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from privfan.errors import FormatError, LengthError, ValidationError

PFT_MAGIC = b"PFT1"
PFT_VERSION = 1
_DTYPE_FLOAT32 = 0
_HEADER = struct.Struct("<4sBBHHH")

DEFAULT_IGNORE_ID = 255


def _frozen(array: np.ndarray) -> np.ndarray:
    array.flags.writeable = False
    return array


@dataclass(frozen=True, eq=False)
class FeatureTensor:
    """Latent tensor of shape (channels, height, width), float32.

    ``data[c]`` is one contiguous channel. Instances are read-only.
    """

    data: np.ndarray

    def __post_init__(self):
        data = np.array(self.data, dtype="<f4", order="C", copy=True)
        if data.ndim != 3 or min(data.shape) < 1:
            raise ValidationError(f"feature tensor must be (C, H, W) with positive dims, got {data.shape}")
        if not np.all(np.isfinite(data)):
            raise ValidationError("feature tensor contains non-finite values")
        object.__setattr__(self, "data", _frozen(data))

    @property
    def channels(self) -> int:
        return self.data.shape[0]

    @property
    def height(self) -> int:
        return self.data.shape[1]

    @property
    def width(self) -> int:
        return self.data.shape[2]

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.data.shape

    def __eq__(self, other):
        if not isinstance(other, FeatureTensor):
            return NotImplemented
        return self.shape == other.shape and self.data.tobytes() == other.data.tobytes()

    __hash__ = None


@dataclass(frozen=True, eq=False)
class Image:
    """Image with planes outermost, shape (planes, height, width), values clamped to [0, 1]."""

    data: np.ndarray

    def __post_init__(self):
        data = np.array(self.data, dtype=np.float32, copy=True)
        if data.ndim == 2:
            data = data[None]
        if data.ndim != 3 or data.shape[0] not in (1, 3) or min(data.shape) < 1:
            raise ValidationError(f"image must be (H, W) or (1|3, H, W), got {data.shape}")
        if not np.all(np.isfinite(data)):
            raise ValidationError("image contains non-finite values")
        np.clip(data, 0.0, 1.0, out=data)
        object.__setattr__(self, "data", _frozen(data))

    @property
    def planes(self) -> int:
        return self.data.shape[0]

    @property
    def height(self) -> int:
        return self.data.shape[1]

    @property
    def width(self) -> int:
        return self.data.shape[2]

    def __eq__(self, other):
        if not isinstance(other, Image):
            return NotImplemented
        return self.data.shape == other.data.shape and np.array_equal(self.data, other.data)

    __hash__ = None


@dataclass(frozen=True, eq=False)
class TaskLabels:
    """Ground truth for the non-private tasks: a class map and a disparity map."""

    segmentation: np.ndarray
    disparity: np.ndarray
    num_classes: int
    ignore_id: int = DEFAULT_IGNORE_ID

    def __post_init__(self):
        seg = np.array(self.segmentation, dtype=np.int32, copy=True)
        disp = np.array(self.disparity, dtype=np.float32, copy=True)
        if seg.ndim != 2 or seg.shape != disp.shape:
            raise ValidationError(f"segmentation {seg.shape} and disparity {disp.shape} must be equal 2-D shapes")
        valid = seg != self.ignore_id
        if np.any((seg[valid] < 0) | (seg[valid] >= self.num_classes)):
            raise ValidationError(f"segmentation ids must be in [0, {self.num_classes}) or {self.ignore_id}")
        if not np.all(np.isfinite(disp)) or np.any(disp < 0):
            raise ValidationError("disparity must be finite and non-negative")
        object.__setattr__(self, "segmentation", _frozen(seg))
        object.__setattr__(self, "disparity", _frozen(disp))

    @property
    def valid_mask(self) -> np.ndarray:
        return self.segmentation != self.ignore_id


def tensor_to_bytes(tensor: FeatureTensor) -> bytes:
    c, h, w = tensor.shape
    if max(c, h, w) > 0xFFFF:
        raise ValidationError("PFT1 dimensions are limited to 65535")
    header = _HEADER.pack(PFT_MAGIC, PFT_VERSION, _DTYPE_FLOAT32, h, w, c)
    return header + tensor.data.astype("<f4", copy=False).tobytes()


def tensor_from_bytes(blob: bytes) -> FeatureTensor:
    if len(blob) < _HEADER.size:
        if blob[:4] != PFT_MAGIC[: len(blob[:4])]:
            raise FormatError("not a PFT1 file (bad magic)")
        raise LengthError(f"PFT1 header truncated: {len(blob)} bytes")
    magic, version, dtype, h, w, c = _HEADER.unpack_from(blob)
    if magic != PFT_MAGIC:
        raise FormatError(f"not a PFT1 file (magic {magic!r})")
    if version != PFT_VERSION:
        raise FormatError(f"unsupported PFT1 version {version}")
    if dtype != _DTYPE_FLOAT32:
        raise FormatError(f"unsupported PFT1 dtype code {dtype}")
    expected = c * h * w * 4
    payload = blob[_HEADER.size:]
    if len(payload) != expected:
        raise LengthError(f"PFT1 payload is {len(payload)} bytes, header announces {expected}")
    data = np.frombuffer(payload, dtype="<f4").reshape(c, h, w)
    return FeatureTensor(data)


def save_tensor(tensor: FeatureTensor, path) -> None:
    Path(path).write_bytes(tensor_to_bytes(tensor))


def load_tensor(path) -> FeatureTensor:
    """Load a PFT1 file, or a rank-3 float32 ``.npy`` v1.0 file laid out as (C, H, W)."""
    blob = Path(path).read_bytes()
    if blob[:6] == b"\x93NUMPY":
        return _tensor_from_npy(blob)
    return tensor_from_bytes(blob)


def _tensor_from_npy(blob: bytes) -> FeatureTensor:
    import io

    fp = io.BytesIO(blob)
    major, minor = np.lib.format.read_magic(fp)
    if (major, minor) != (1, 0):
        raise FormatError(f"only .npy v1.0 is supported, got {major}.{minor}")
    shape, fortran, dtype = np.lib.format.read_array_header_1_0(fp)
    if dtype != np.dtype("<f4") and dtype != np.dtype(">f4"):
        raise FormatError(f".npy dtype must be float32, got {dtype}")
    if len(shape) != 3:
        raise FormatError(f".npy array must be rank 3, got shape {shape}")
    count = int(np.prod(shape))
    payload = fp.read()
    if len(payload) != count * 4:
        raise LengthError(f".npy payload is {len(payload)} bytes, expected {count * 4}")
    data = np.frombuffer(payload, dtype=dtype)
    data = data.reshape(shape[::-1]).transpose() if fortran else data.reshape(shape)
    return FeatureTensor(data)


def zero_channel(tensor: FeatureTensor, i: int) -> FeatureTensor:
    if not 0 <= i < tensor.channels:
        raise IndexError(f"channel {i} out of range for {tensor.channels} channels")
    data = tensor.data.copy()
    data[i] = 0.0
    return FeatureTensor(data)


def save_image(image: Image, path) -> None:
    """Images are stored as PFT1 files with one channel per plane."""
    save_tensor(FeatureTensor(image.data), path)


def load_image(path) -> Image:
    return Image(load_tensor(path).data)
