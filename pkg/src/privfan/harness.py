"""Synthetic stand-in for a split multi-task network.

Scenes are Voronoi region maps (one gray level and one disparity per class)
with digit plates composited on top. A plate is white with a black 1-pixel
frame; glyphs are printed in a lighter ink, so the frame sets the dynamic
range of the detail channels and the glyph strokes sit well inside it.

The "edge encoder" is a 2-level Haar analysis whose subbands are packed
polyphase into 16 channels at H/4 x W/4; the decoder inverts it exactly.
Task heads only read the coarse-average channel, so segmentation and
disparity are blind to the detail channels that carry the plate glyphs.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from privfan.metrics import PlateAnnotation, PlatePrediction
from privfan.tensor import DEFAULT_IGNORE_ID, FeatureTensor, Image, TaskLabels

LEVELS = 2
FACTOR = 1 << LEVELS

COARSE_CHANNELS = (0,)
LEVEL2_DETAIL_CHANNELS = (1, 2, 3)
FINEST_DETAIL_CHANNELS = tuple(range(4, 16))
NUM_CHANNELS = 16

_FONT = {
    "0": ("01110", "10001", "10011", "10101", "11001", "10001", "01110"),
    "1": ("00100", "01100", "00100", "00100", "00100", "00100", "01110"),
    "2": ("01110", "10001", "00001", "00010", "00100", "01000", "11111"),
    "3": ("11111", "00010", "00100", "00010", "00001", "10001", "01110"),
    "4": ("00010", "00110", "01010", "10010", "11111", "00010", "00010"),
    "5": ("11111", "10000", "11110", "00001", "00001", "10001", "01110"),
    "6": ("00110", "01000", "10000", "11110", "10001", "10001", "01110"),
    "7": ("11111", "00001", "00010", "00100", "01000", "01000", "01000"),
}
ALPHABET = "".join(sorted(_FONT))
GLYPH_SCALE = 2
GLYPH_H, GLYPH_W = 7 * GLYPH_SCALE, 5 * GLYPH_SCALE
GLYPH_PITCH = GLYPH_W + 2
PLATE_MARGIN = 3
PLATE_H = GLYPH_H + 2 * PLATE_MARGIN
PLATE_BG, FRAME = 1.0, 0.0
DEFAULT_INK = 0.75
MATCH_THRESHOLD = 0.6


def glyph_bitmap(symbol: str) -> np.ndarray:
    """Ink mask (1 = ink) of a glyph at render scale."""
    rows = np.array([[c == "1" for c in row] for row in _FONT[symbol]], dtype=np.float64)
    return np.kron(rows, np.ones((GLYPH_SCALE, GLYPH_SCALE)))


# NCC is invariant to gain and offset, so templates are plain ink masks.
TEMPLATES = {s: 1.0 - glyph_bitmap(s) for s in ALPHABET}


def plate_width(n_glyphs: int) -> int:
    return 2 * PLATE_MARGIN + n_glyphs * GLYPH_PITCH - (GLYPH_PITCH - GLYPH_W)


def glyph_slots(bbox):
    """Top-left corners of the glyph cells inside a plate box."""
    x, y, w, _ = bbox
    n = (w - 2 * PLATE_MARGIN + GLYPH_PITCH - GLYPH_W) // GLYPH_PITCH
    return [(x + PLATE_MARGIN + k * GLYPH_PITCH, y + PLATE_MARGIN) for k in range(n)]


class PlacementError(RuntimeError):
    pass


@dataclass(frozen=True)
class SceneSpec:
    seed: int
    size: tuple = (128, 256)
    regions: int = 4
    plates: int = 2
    ink: float = DEFAULT_INK

    def __post_init__(self):
        h, w = self.size
        if h % FACTOR or w % FACTOR or h <= 0 or w <= 0:
            raise ValueError(f"scene size must be positive multiples of {FACTOR}, got {self.size}")
        if self.regions < 2:
            raise ValueError("need at least two region classes")


def class_grays(k: int) -> np.ndarray:
    return np.linspace(0.2, 0.8, k)


def gray_to_disparity(gray):
    return 0.1 + 0.9 * (np.asarray(gray, dtype=np.float64) - 0.2) / 0.6


def generate_scene(spec: SceneSpec):
    """Return (Image, TaskLabels, [PlateAnnotation]) for ``spec``; deterministic per seed."""
    rng = np.random.default_rng(spec.seed)
    h, w = spec.size
    bh, bw = h // FACTOR, w // FACTOR
    k = spec.regions

    # Voronoi cells on the block lattice: each 4x4 block is single-class.
    n_points = 2 * k
    flat = rng.choice(bh * bw, size=n_points, replace=False)
    py, px = np.divmod(flat, bw)
    classes = np.arange(n_points) % k
    yy, xx = np.mgrid[0:bh, 0:bw]
    d2 = (yy[None] - py[:, None, None]) ** 2 + (xx[None] - px[:, None, None]) ** 2
    block_class = classes[np.argmin(d2, axis=0)]

    grays = class_grays(k)
    seg = np.kron(block_class, np.ones((FACTOR, FACTOR), dtype=np.int64))
    pixels = grays[seg]
    disparity = gray_to_disparity(pixels)

    annotations = []
    occupied = np.zeros((bh, bw), dtype=bool)
    occupied[py, px] = True  # keep every seed block visible so all classes survive
    image_id = f"scene_{spec.seed:06d}"
    for _ in range(spec.plates):
        n = int(rng.integers(4, 7))
        text = "".join(rng.choice(list(ALPHABET), size=n))
        pw = plate_width(n)
        pbw, pbh = pw // FACTOR, PLATE_H // FACTOR
        # Pick uniformly among positions whose 1-block neighbourhood is free.
        if pbh > bh or pbw > bw:
            raise PlacementError(f"plate {text!r} does not fit in a {h}x{w} scene")
        padded = np.pad(occupied, 1, constant_values=False)
        windows = np.lib.stride_tricks.sliding_window_view(padded, (pbh + 2, pbw + 2))
        free = np.argwhere(~windows.any(axis=(2, 3)))
        if not len(free):
            raise PlacementError(f"cannot place plate {text!r} in a {h}x{w} scene")
        by, bx = (int(v) for v in free[rng.integers(len(free))])
        occupied[by : by + pbh, bx : bx + pbw] = True
        x, y = bx * FACTOR, by * FACTOR
        plate = pixels[y : y + PLATE_H, x : x + pw]
        plate[:] = PLATE_BG
        plate[1, 1:-1] = plate[-2, 1:-1] = plate[1:-1, 1] = plate[1:-1, -2] = FRAME
        for symbol, (gx, gy) in zip(text, glyph_slots((x, y, pw, PLATE_H))):
            pixels[gy : gy + GLYPH_H, gx : gx + GLYPH_W] = PLATE_BG + (spec.ink - PLATE_BG) * glyph_bitmap(symbol)
        seg[y : y + PLATE_H, x : x + pw] = DEFAULT_IGNORE_ID
        annotations.append(PlateAnnotation(image_id, (x, y, pw, PLATE_H), text, True))

    labels = TaskLabels(seg, disparity, num_classes=k, ignore_id=DEFAULT_IGNORE_ID)
    return Image(pixels), labels, annotations


def _haar_analysis(x):
    a, b = x[0::2, 0::2], x[0::2, 1::2]
    c, d = x[1::2, 0::2], x[1::2, 1::2]
    ll = (a + b + c + d) / 4
    hl = (a - b + c - d) / 4
    lh = (a + b - c - d) / 4
    hh = (a - b - c + d) / 4
    return ll, hl, lh, hh


def _haar_synthesis(ll, hl, lh, hh):
    out = np.empty((2 * ll.shape[0], 2 * ll.shape[1]), dtype=np.float64)
    out[0::2, 0::2] = ll + hl + lh + hh
    out[0::2, 1::2] = ll - hl + lh - hh
    out[1::2, 0::2] = ll + hl - lh - hh
    out[1::2, 1::2] = ll - hl - lh + hh
    return out


def _phases(band):
    return [band[0::2, 0::2], band[0::2, 1::2], band[1::2, 0::2], band[1::2, 1::2]]


def _unphase(parts):
    h, w = parts[0].shape
    band = np.empty((2 * h, 2 * w), dtype=np.float64)
    band[0::2, 0::2], band[0::2, 1::2], band[1::2, 0::2], band[1::2, 1::2] = parts
    return band


def encode(img: Image) -> FeatureTensor:
    if img.planes != 1:
        raise ValueError("the harness encoder takes grayscale images")
    x = img.data[0].astype(np.float64)
    h, w = x.shape
    if h % FACTOR or w % FACTOR:
        raise ValueError(f"image dims must be multiples of {FACTOR}, got {h}x{w}")
    ll1, hl1, lh1, hh1 = _haar_analysis(x)
    ll2, hl2, lh2, hh2 = _haar_analysis(ll1)
    channels = [ll2, hl2, lh2, hh2, *_phases(hl1), *_phases(lh1), *_phases(hh1)]
    return FeatureTensor(np.stack(channels))


def decode_array(t: FeatureTensor) -> np.ndarray:
    if t.channels != NUM_CHANNELS:
        raise ValueError(f"harness decoder expects {NUM_CHANNELS} channels, got {t.channels}")
    c = t.data.astype(np.float64)
    ll1 = _haar_synthesis(c[0], c[1], c[2], c[3])
    hl1, lh1, hh1 = _unphase(c[4:8]), _unphase(c[8:12]), _unphase(c[12:16])
    return _haar_synthesis(ll1, hl1, lh1, hh1)


def decode(t: FeatureTensor) -> Image:
    return Image(decode_array(t))


def _upsample(block_map):
    return np.kron(block_map, np.ones((FACTOR, FACTOR), dtype=block_map.dtype))


def seg_head(t: FeatureTensor, num_classes: int) -> np.ndarray:
    """Class of the nearest gray anchor to the coarse intensity, at image resolution."""
    coarse = t.data[COARSE_CHANNELS[0]].astype(np.float64)
    grays = class_grays(num_classes)
    block_class = np.argmin(np.abs(coarse[..., None] - grays), axis=-1)
    return _upsample(block_class)


def disp_head(t: FeatureTensor) -> np.ndarray:
    coarse = t.data[COARSE_CHANNELS[0]].astype(np.float64)
    return _upsample(gray_to_disparity(coarse))


def _ncc(patch, template):
    p = patch - patch.mean()
    q = template - template.mean()
    denom = np.sqrt((p * p).sum() * (q * q).sum())
    return float((p * q).sum() / denom) if denom > 0 else 0.0


def read_plate(plane: np.ndarray, bbox) -> str:
    out = []
    for gx, gy in glyph_slots(bbox):
        patch = plane[gy : gy + GLYPH_H, gx : gx + GLYPH_W]
        if patch.shape != (GLYPH_H, GLYPH_W) or patch.std() == 0:
            continue
        scores = [_ncc(patch, TEMPLATES[s]) for s in ALPHABET]
        best = int(np.argmax(scores))
        if scores[best] >= MATCH_THRESHOLD:
            out.append(ALPHABET[best])
    return "".join(out)


def recognize_glyphs(img: Image, boxes) -> list[str]:
    """Template-match every glyph slot of every box; weak matches are dropped."""
    plane = img.data[0].astype(np.float64)
    return [read_plate(plane, box) for box in boxes]


def recognize_plates(img: Image, annotations) -> list[PlatePrediction]:
    boxes = [a.bbox for a in annotations]
    return [PlatePrediction(b, s) for b, s in zip(boxes, recognize_glyphs(img, boxes))]
