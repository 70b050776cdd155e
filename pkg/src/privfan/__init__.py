"""Layered feature compression with channel-level privacy control."""

from privfan.errors import (
    CodecUnavailableError,
    DecodeError,
    FormatError,
    LengthError,
    PrivfanError,
    ValidationError,
)
from privfan.tensor import FeatureTensor, Image, TaskLabels, load_tensor, save_tensor, zero_channel

__version__ = "0.1.0"

__all__ = [
    "CodecUnavailableError",
    "DecodeError",
    "FeatureTensor",
    "FormatError",
    "Image",
    "LengthError",
    "PrivfanError",
    "TaskLabels",
    "ValidationError",
    "load_tensor",
    "save_tensor",
    "zero_channel",
]
