"""Tensor <-> layered bitstream: quantize, tile and code the base and enhancement groups."""

from __future__ import annotations

import numpy as np

from privfan.codec import CodecId, CodecParams, Layer, LayeredBitstream, decode_mosaic, encode_mosaic
from privfan.quant import QuantParams, dequantize_group, quantize_group, tile, untile
from privfan.scoring import Partition
from privfan.tensor import FeatureTensor

_EMPTY = QuantParams(0.0, 0.0)


def _encode_layer(tensor, channels, qp, codec_id, template):
    params = CodecParams(qp, codec_id)
    if not channels:
        return Layer(_EMPTY, params, b"")
    codes, quant = quantize_group(tensor, channels)
    return Layer(quant, params, encode_mosaic(tile(codes), params, template))


def encode_tensor(
    tensor: FeatureTensor,
    part: Partition,
    base_qp: int,
    enhancement_qp: int,
    codec_id: CodecId = CodecId.INTERNAL_DCT,
    template: str | None = None,
) -> LayeredBitstream:
    if part.channels != tensor.channels:
        raise ValueError(f"partition covers {part.channels} channels, tensor has {tensor.channels}")
    return LayeredBitstream(
        tensor.height,
        tensor.width,
        tensor.channels,
        part.base,
        part.enhancement,
        _encode_layer(tensor, part.base, base_qp, codec_id, template),
        _encode_layer(tensor, part.enhancement, enhancement_qp, codec_id, template),
    )


def decode_layer_codes(stream: LayeredBitstream, which: str, template: str | None = None) -> np.ndarray:
    channels = stream.base if which == "base" else stream.enhancement
    layer = stream.base_layer if which == "base" else stream.enhancement_layer
    mosaic = decode_mosaic(layer.payload, layer.codec, (len(channels), stream.height, stream.width), template)
    return untile(mosaic)


def decode_stream(stream: LayeredBitstream, template: str | None = None) -> FeatureTensor:
    data = np.zeros((stream.channels, stream.height, stream.width), dtype=np.float32)
    for which, channels, layer in (
        ("base", stream.base, stream.base_layer),
        ("enhancement", stream.enhancement, stream.enhancement_layer),
    ):
        if not channels:
            continue
        codes = decode_layer_codes(stream, which, template)
        data[list(channels)] = dequantize_group(codes, layer.quant)
    return FeatureTensor(data)


def partition_of(stream: LayeredBitstream) -> Partition:
    return Partition(stream.base, stream.enhancement)
