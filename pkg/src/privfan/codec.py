"""Mosaic coding and the layered PFAN container.

The internal codec is a block-transform image coder: 8x8 DCT-II, uniform
scalar quantization with ``Qstep = 2 ** ((qp - 4) / 6)``, zigzag scan and a
deflate back end. For ``qp <= 4`` (Qstep <= 1) the integer-reversible DCT is
used and coding is lossless; above that the orthonormal float DCT is used,
whose reconstruction does not carry the lifting rounding noise.
"""

from __future__ import annotations

import enum
import os
import shlex
import shutil
import struct
import subprocess
import tempfile
import zlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from privfan import intdct
from privfan.errors import CodecUnavailableError, DecodeError, FormatError, LengthError, PrivfanError
from privfan.quant import Mosaic, QuantParams, grid_shape, round_half_away

BLOCK = 8
QP_MIN, QP_MAX = 0, 51

ENCODER_ENV = "PRIVFAN_EXTERNAL_ENCODER"
DECODER_ENV = "PRIVFAN_EXTERNAL_DECODER"


class CodecId(enum.IntEnum):
    INTERNAL_DCT = 0
    EXTERNAL = 1


@dataclass(frozen=True)
class CodecParams:
    qp: int
    codec_id: CodecId = CodecId.INTERNAL_DCT

    def __post_init__(self):
        if not QP_MIN <= int(self.qp) <= QP_MAX:
            raise ValueError(f"qp must be in [{QP_MIN}, {QP_MAX}], got {self.qp}")
        object.__setattr__(self, "qp", int(self.qp))
        object.__setattr__(self, "codec_id", CodecId(self.codec_id))

    @property
    def qstep(self) -> float:
        return qstep(self.qp)


def qstep(qp: int) -> float:
    return 2.0 ** ((qp - 4) / 6)


def zigzag_order(n: int = BLOCK) -> np.ndarray:
    """Flat indices of an n x n block in JPEG zigzag order."""
    cells = sorted(
        ((r, c) for r in range(n) for c in range(n)),
        key=lambda rc: (rc[0] + rc[1], rc[0] if (rc[0] + rc[1]) % 2 else rc[1]),
    )
    return np.array([r * n + c for r, c in cells])


_ZIGZAG = zigzag_order()
_INTERNAL_MAGIC = b"D8"
_INTERNAL_HEADER = struct.Struct("<2sHH")


def _to_blocks(pixels: np.ndarray):
    h, w = pixels.shape
    ph, pw = -(-h // BLOCK) * BLOCK, -(-w // BLOCK) * BLOCK
    padded = np.pad(pixels, ((0, ph - h), (0, pw - w)), mode="edge")
    blocks = padded.reshape(ph // BLOCK, BLOCK, pw // BLOCK, BLOCK).transpose(0, 2, 1, 3)
    return blocks.reshape(-1, BLOCK, BLOCK), (ph, pw)


def _from_blocks(blocks: np.ndarray, padded_shape, shape) -> np.ndarray:
    ph, pw = padded_shape
    img = blocks.reshape(ph // BLOCK, pw // BLOCK, BLOCK, BLOCK).transpose(0, 2, 1, 3).reshape(ph, pw)
    return img[: shape[0], : shape[1]]


LOSSLESS_QP = 4


def _float_dct(blocks, inverse=False):
    m = intdct.dct_matrix()
    if inverse:
        m = m.T
    return np.einsum("ij,bjk,lk->bil", m, blocks, m)


def encode_pixels(pixels: np.ndarray, qp: int) -> bytes:
    pixels = np.asarray(pixels, dtype=np.uint8)
    h, w = pixels.shape
    blocks, _ = _to_blocks(pixels.astype(np.float64) - 128.0)
    coeffs = intdct.forward(blocks) if qp <= LOSSLESS_QP else _float_dct(blocks)
    levels = round_half_away(coeffs / qstep(qp)).reshape(-1, BLOCK * BLOCK)[:, _ZIGZAG]
    # Scan-position-major so runs of zero high-frequency levels sit together.
    stream = np.ascontiguousarray(levels.T).astype("<i2").tobytes()
    return _INTERNAL_HEADER.pack(_INTERNAL_MAGIC, h, w) + zlib.compress(stream, 9)


def decode_pixels(payload: bytes, qp: int, shape) -> np.ndarray:
    h, w = shape
    if len(payload) < _INTERNAL_HEADER.size:
        raise DecodeError("internal codec payload truncated")
    magic, ph, pw = _INTERNAL_HEADER.unpack_from(payload)
    if magic != _INTERNAL_MAGIC or (ph, pw) != (h, w):
        raise DecodeError(f"internal codec header mismatch: {magic!r} {ph}x{pw}, expected {h}x{w}")
    nblocks = (-(-h // BLOCK)) * (-(-w // BLOCK))
    expected = nblocks * BLOCK * BLOCK * 2
    try:
        inflater = zlib.decompressobj()
        stream = inflater.decompress(payload[_INTERNAL_HEADER.size:], expected + 1)
        if not inflater.eof:
            raise DecodeError("internal codec payload truncated")
    except zlib.error as exc:
        raise DecodeError(f"corrupt internal codec payload: {exc}") from exc
    if len(stream) != expected or inflater.unused_data:
        raise DecodeError(f"internal codec payload decodes to {len(stream)} bytes, expected {expected}")
    levels = np.frombuffer(stream, dtype="<i2").reshape(BLOCK * BLOCK, nblocks).T
    coeffs = np.empty((nblocks, BLOCK * BLOCK))
    coeffs[:, _ZIGZAG] = levels * qstep(qp)
    coeffs = coeffs.reshape(nblocks, BLOCK, BLOCK)
    if qp <= LOSSLESS_QP:
        # Qstep <= 1: rounding the dequantized levels recovers the integer coefficients
        blocks = intdct.inverse(round_half_away(coeffs)) + 128.0
    else:
        blocks = _float_dct(coeffs, inverse=True) + 128.0
    padded = (-(-h // BLOCK) * BLOCK, -(-w // BLOCK) * BLOCK)
    pixels = _from_blocks(round_half_away(blocks), padded, (h, w))
    return np.clip(pixels, 0, 255).astype(np.uint8)


def mosaic_geometry(occupied: int, tile_height: int, tile_width: int):
    rows, cols = grid_shape(occupied)
    return rows, cols, rows * tile_height, cols * tile_width


def encode_mosaic(mosaic: Mosaic, params: CodecParams, template: str | None = None) -> bytes:
    if params.codec_id == CodecId.EXTERNAL:
        return external_encode(mosaic, params.qp, template)
    return encode_pixels(mosaic.pixels, params.qp)


def decode_mosaic(payload: bytes, params: CodecParams, dims, template: str | None = None) -> Mosaic:
    """Decode a payload into a mosaic; ``dims`` is (occupied, tile_height, tile_width)."""
    occupied, th, tw = dims
    rows, cols, h, w = mosaic_geometry(occupied, th, tw)
    if params.codec_id == CodecId.EXTERNAL:
        pixels = external_decode(payload, params.qp, (h, w), template)
    else:
        pixels = decode_pixels(payload, params.qp, (h, w))
    return Mosaic(rows, cols, th, tw, pixels, occupied)


# --- external codec bridge -------------------------------------------------


class ExternalCodecError(PrivfanError, RuntimeError):
    def __init__(self, command, returncode, stderr):
        super().__init__(f"external codec exited with {returncode}: {' '.join(command)}\n{stderr}")
        self.command = command
        self.returncode = returncode
        self.stderr = stderr


def write_pgm(path, pixels: np.ndarray) -> None:
    h, w = pixels.shape
    Path(path).write_bytes(b"P5\n%d %d\n255\n" % (w, h) + np.ascontiguousarray(pixels, dtype=np.uint8).tobytes())


def read_gray(path, shape) -> np.ndarray:
    """Read an 8-bit PGM (P5) or a raw 8-bit grayscale file of the given shape."""
    blob = Path(path).read_bytes()
    h, w = shape
    if blob[:2] == b"P5":
        fields, pos = [], 2
        while len(fields) < 3:
            while pos < len(blob) and blob[pos : pos + 1].isspace():
                pos += 1
            if blob[pos : pos + 1] == b"#":
                pos = blob.index(b"\n", pos) + 1
                continue
            end = pos
            while end < len(blob) and not blob[end : end + 1].isspace():
                end += 1
            fields.append(int(blob[pos:end]))
            pos = end
        pos += 1
        pw, ph, maxval = fields
        if (ph, pw) != (h, w) or maxval != 255:
            raise DecodeError(f"external decoder produced {pw}x{ph} maxval {maxval}, expected {w}x{h}")
        blob = blob[pos:]
    if len(blob) != h * w:
        raise DecodeError(f"external decoder produced {len(blob)} bytes, expected {h * w}")
    return np.frombuffer(blob, dtype=np.uint8).reshape(h, w).copy()


def _resolve_template(template, env, role):
    template = template or os.environ.get(env)
    if not template:
        raise CodecUnavailableError(f"no external {role} command configured (set {env})")
    return template


def _run(template: str, substitutions: dict) -> None:
    argv = shlex.split(template)
    argv = [_substitute(arg, substitutions) for arg in argv]
    if not argv or shutil.which(argv[0]) is None:
        raise CodecUnavailableError("external codec binary not found", argv)
    try:
        proc = subprocess.run(argv, capture_output=True, check=False)
    except OSError as exc:
        raise CodecUnavailableError(f"cannot run external codec ({exc})", argv) from exc
    if proc.returncode != 0:
        raise ExternalCodecError(argv, proc.returncode, proc.stderr.decode(errors="replace"))


def _substitute(arg: str, substitutions: dict) -> str:
    for key, value in substitutions.items():
        arg = arg.replace("{" + key + "}", str(value))
    return arg


def external_encode(mosaic: Mosaic, qp: int, template: str | None = None) -> bytes:
    """Run an external encoder on the mosaic and return the bytes it writes.

    Template placeholders: ``{IN}`` (8-bit PGM), ``{IN_RAW}`` (headerless 8-bit
    gray), ``{OUT}``, ``{QP}``, ``{W}``, ``{H}``.
    """
    template = _resolve_template(template, ENCODER_ENV, "encoder")
    h, w = mosaic.pixels.shape
    with tempfile.TemporaryDirectory(prefix="privfan-enc-") as tmp:
        tmp = Path(tmp)
        write_pgm(tmp / "in.pgm", mosaic.pixels)
        (tmp / "in.gray").write_bytes(mosaic.pixels.tobytes())
        out = tmp / "out.bin"
        _run(template, {"IN": tmp / "in.pgm", "IN_RAW": tmp / "in.gray", "OUT": out, "QP": qp, "W": w, "H": h})
        if not out.exists():
            raise ExternalCodecError(shlex.split(template), 0, "encoder wrote no output file")
        return out.read_bytes()


def external_decode(payload: bytes, qp: int, shape, template: str | None = None) -> np.ndarray:
    """Counterpart of :func:`external_encode`; ``{OUT}`` may be PGM or raw gray."""
    template = _resolve_template(template, DECODER_ENV, "decoder")
    h, w = shape
    with tempfile.TemporaryDirectory(prefix="privfan-dec-") as tmp:
        tmp = Path(tmp)
        (tmp / "in.bin").write_bytes(payload)
        out = tmp / "out.pgm"
        _run(template, {"IN": tmp / "in.bin", "OUT": out, "QP": qp, "W": w, "H": h})
        if not out.exists():
            raise ExternalCodecError(shlex.split(template), 0, "decoder wrote no output file")
        return read_gray(out, shape)


# --- layered container -----------------------------------------------------

PFAN_MAGIC = b"PFAN"
PFAN_VERSION = 1
_PFAN_HEAD = struct.Struct("<4sBHHHH")
_LAYER_HEAD = struct.Struct("<ffBBI")


@dataclass(frozen=True)
class Layer:
    quant: QuantParams
    codec: CodecParams
    payload: bytes


@dataclass(frozen=True)
class LayeredBitstream:
    height: int
    width: int
    channels: int
    base: tuple
    enhancement: tuple
    base_layer: Layer
    enhancement_layer: Layer

    def __post_init__(self):
        object.__setattr__(self, "base", tuple(int(i) for i in self.base))
        object.__setattr__(self, "enhancement", tuple(int(i) for i in self.enhancement))
        if sorted(self.base + self.enhancement) != list(range(self.channels)):
            raise FormatError("base and enhancement lists must partition the channel range")
        if not self.base:
            raise FormatError("base layer must hold at least one channel")

    @property
    def layers(self):
        return (self.base_layer, self.enhancement_layer)

    @property
    def total_bytes(self) -> int:
        return len(self.to_bytes())

    def to_bytes(self) -> bytes:
        return pack(self)

    @classmethod
    def from_bytes(cls, blob: bytes) -> "LayeredBitstream":
        return unpack(blob)


def pack(stream: LayeredBitstream) -> bytes:
    parts = [
        _PFAN_HEAD.pack(PFAN_MAGIC, PFAN_VERSION, stream.height, stream.width, stream.channels, len(stream.base)),
        struct.pack(f"<{stream.channels}H", *(stream.base + stream.enhancement)),
    ]
    for layer in stream.layers:
        parts.append(
            _LAYER_HEAD.pack(layer.quant.min, layer.quant.max, layer.codec.qp, int(layer.codec.codec_id), len(layer.payload))
        )
        parts.append(layer.payload)
    return b"".join(parts)


def unpack(blob: bytes) -> LayeredBitstream:
    blob = bytes(blob)
    if len(blob) < _PFAN_HEAD.size:
        if blob[:4] != PFAN_MAGIC[: len(blob[:4])]:
            raise FormatError("not a PFAN stream (bad magic)")
        raise LengthError("PFAN header truncated")
    magic, version, h, w, c, base_count = _PFAN_HEAD.unpack_from(blob)
    if magic != PFAN_MAGIC:
        raise FormatError(f"not a PFAN stream (magic {magic!r})")
    if version != PFAN_VERSION:
        raise FormatError(f"unsupported PFAN version {version}")
    if min(h, w, c) < 1 or base_count > c:
        raise FormatError(f"invalid PFAN dimensions {h}x{w}x{c}, base {base_count}")
    pos = _PFAN_HEAD.size
    if len(blob) < pos + 2 * c:
        raise LengthError("PFAN channel lists truncated")
    indices = struct.unpack_from(f"<{c}H", blob, pos)
    pos += 2 * c
    layers = []
    for _ in range(2):
        if len(blob) < pos + _LAYER_HEAD.size:
            raise LengthError("PFAN layer header truncated")
        lo, hi, qp, codec_id, length = _LAYER_HEAD.unpack_from(blob, pos)
        pos += _LAYER_HEAD.size
        if len(blob) < pos + length:
            raise LengthError(f"PFAN layer payload truncated: need {length} bytes")
        try:
            layer = Layer(QuantParams(lo, hi), CodecParams(qp, codec_id), blob[pos : pos + length])
        except ValueError as exc:
            raise FormatError(f"invalid PFAN layer header: {exc}") from exc
        layers.append(layer)
        pos += length
    if pos != len(blob):
        raise LengthError(f"{len(blob) - pos} trailing bytes after PFAN stream")
    return LayeredBitstream(h, w, c, indices[:base_count], indices[base_count:], *layers)
