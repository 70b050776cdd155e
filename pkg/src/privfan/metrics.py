"""Evaluation metrics: MSE/PSNR, mIoU, RMSE, Levenshtein distance and CRA."""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from rapidfuzz.distance.Levenshtein import distance as _lev_distance

from privfan.errors import ValidationError
from privfan.tensor import Image


class NoValidPixelsError(ValueError):
    """mIoU is undefined because every ground-truth pixel is ignored."""


@dataclass(frozen=True)
class PlateAnnotation:
    image_id: str
    bbox: tuple  # (x, y, w, h) in pixels
    text: str = ""
    readable: bool = True

    def __post_init__(self):
        bbox = tuple(int(v) for v in self.bbox)
        if len(bbox) != 4 or bbox[2] <= 0 or bbox[3] <= 0 or bbox[0] < 0 or bbox[1] < 0:
            raise ValidationError(f"bbox must be (x, y, w, h) with positive size, got {self.bbox}")
        if not self.readable and self.text:
            raise ValidationError("unreadable plates carry no text")
        if self.readable and not self.text:
            raise ValidationError("readable plates need ground-truth text")
        object.__setattr__(self, "bbox", bbox)

    def within(self, height: int, width: int) -> bool:
        x, y, w, h = self.bbox
        return x + w <= width and y + h <= height


@dataclass(frozen=True)
class PlatePrediction:
    bbox: tuple
    text: str


@dataclass(frozen=True)
class CRAReport:
    plates: int
    total_chars: int
    distance_sum: int
    cra: float
    per_plate: list = field(default_factory=list, compare=False, repr=False)


def save_annotations(annotations, path) -> None:
    doc = [
        {"image_id": a.image_id, "bbox": list(a.bbox), "text": a.text, "readable": a.readable}
        for a in annotations
    ]
    Path(path).write_text(json.dumps(doc, indent=1))


def load_annotations(path) -> list[PlateAnnotation]:
    doc = json.loads(Path(path).read_text())
    return [PlateAnnotation(d["image_id"], tuple(d["bbox"]), d.get("text", ""), bool(d.get("readable", True))) for d in doc]


def levenshtein(a: str, b: str) -> int:
    """Unit-cost edit distance (insert, delete, substitute)."""
    return _lev_distance(a, b)


def bbox_iou(a, b) -> float:
    ax, ay, aw, ah = a
    bx, by, bw, bh = b
    iw = max(0, min(ax + aw, bx + bw) - max(ax, bx))
    ih = max(0, min(ay + ah, by + bh) - max(ay, by))
    inter = iw * ih
    union = aw * ah + bw * bh - inter
    return inter / union if union > 0 else 0.0


def match_plates(annotations, predictions, threshold: float = 0.5):
    """Greedy one-to-one matching by descending bbox IoU. Returns {annotation index: prediction index}."""
    pairs = []
    for i, ann in enumerate(annotations):
        for j, pred in enumerate(predictions):
            iou = bbox_iou(ann.bbox, pred.bbox)
            if iou >= threshold:
                pairs.append((-iou, i, j))
    pairs.sort()
    used_a, used_p, matches = set(), set(), {}
    for _, i, j in pairs:
        if i not in used_a and j not in used_p:
            matches[i] = j
            used_a.add(i)
            used_p.add(j)
    return matches


def cra(ground, predicted, iou_threshold: float = 0.5) -> CRAReport:
    """Character recognition accuracy over all readable plates.

    ``predicted`` maps image_id to a list of :class:`PlatePrediction`. A readable
    plate without a matching prediction counts as fully deleted. Unreadable
    plates are excluded. The result is not clamped and can be negative.
    """
    by_image: dict[str, list[PlateAnnotation]] = {}
    for ann in ground:
        by_image.setdefault(ann.image_id, []).append(ann)
    for image_id in predicted:
        if image_id not in by_image:
            warnings.warn(f"predictions for unknown image {image_id!r} ignored", stacklevel=2)

    plates = total = dist = 0
    per_plate = []
    for image_id, anns in by_image.items():
        preds = list(predicted.get(image_id, ()))
        matches = match_plates(anns, preds, iou_threshold)
        for i, ann in enumerate(anns):
            if not ann.readable:
                continue
            guess = preds[matches[i]].text if i in matches else ""
            d = levenshtein(ann.text, guess)
            plates += 1
            total += len(ann.text)
            dist += d
            per_plate.append((image_id, ann.text, guess, d))
    if total == 0:
        raise ValueError("CRA is undefined without readable ground-truth characters")
    return CRAReport(plates, total, dist, (1.0 - dist / total) * 100.0, per_plate)


def confusion_matrix(pred, gt, num_classes: int, ignore_id: int) -> np.ndarray:
    pred = np.asarray(pred)
    gt = np.asarray(gt)
    if pred.shape != gt.shape:
        raise ValueError(f"shape mismatch: pred {pred.shape} vs gt {gt.shape}")
    valid = gt != ignore_id
    p = pred[valid].astype(np.int64)
    g = gt[valid].astype(np.int64)
    # Predictions outside [0, K) count as wrong for the gt class only.
    p = np.where((p >= 0) & (p < num_classes), p, num_classes)
    counts = np.bincount(g * (num_classes + 1) + p, minlength=num_classes * (num_classes + 1))
    return counts.reshape(num_classes, num_classes + 1)


def miou(pred, gt, num_classes: int, ignore_id: int = 255) -> float:
    """Mean IoU over classes present in the ground truth."""
    cm = confusion_matrix(pred, gt, num_classes, ignore_id)
    if cm.sum() == 0:
        raise NoValidPixelsError("no valid pixels")
    tp = np.diag(cm[:, :num_classes]).astype(np.float64)
    gt_count = cm.sum(axis=1)
    pred_count = cm[:, :num_classes].sum(axis=0)
    present = gt_count > 0
    iou = tp[present] / (gt_count[present] + pred_count[present] - tp[present])
    return float(iou.mean())


def rmse(pred, gt, mask=None) -> float:
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape:
        raise ValueError(f"shape mismatch: pred {pred.shape} vs gt {gt.shape}")
    diff = pred - gt
    if mask is not None:
        diff = diff[np.asarray(mask, dtype=bool)]
    if diff.size == 0:
        raise ValueError("rmse of empty maps")
    return float(np.sqrt(np.mean(diff**2)))


def mse_psnr(a, b) -> tuple[float, float]:
    """MSE and PSNR (dB, unit peak) between two images; identical images give PSNR=inf."""
    da = a.data if isinstance(a, Image) else np.asarray(a)
    db = b.data if isinstance(b, Image) else np.asarray(b)
    if da.shape != db.shape:
        raise ValueError(f"image dimensions differ: {da.shape} vs {db.shape}")
    mse = float(np.mean((da.astype(np.float64) - db.astype(np.float64)) ** 2))
    psnr = math.inf if mse == 0 else 10.0 * math.log10(1.0 / mse)
    return mse, psnr


@dataclass
class MetricRow:
    config_id: str
    file_size_bytes: int
    miou: float | None = None
    rmse: float | None = None
    cra: float | None = None

    def as_dict(self):
        return asdict(self)
