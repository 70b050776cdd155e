"""Channel scoring and base/enhancement selection.

Each channel i gets a cost ``|dMSE_i| - beta * (I(T_i; seg) + I(T_i; disp))``;
the ``base_size`` channels with the lowest cost form the lightly-coded base
layer, everything else goes to the enhancement layer.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from privfan.errors import ValidationError
from privfan.tensor import FeatureTensor, Image, TaskLabels, zero_channel

DEFAULT_BETA = 10.0
DEFAULT_BINS = 32
PRIVATE_TASKS = frozenset({"reconstruction"})


@dataclass(frozen=True)
class ChannelScore:
    channel: int
    mi_seg: float
    mi_disp: float
    delta_mse: float
    lagrangian: float

    @classmethod
    def build(cls, channel, mi_seg, mi_disp, delta_mse, beta):
        return cls(int(channel), float(mi_seg), float(mi_disp), float(delta_mse),
                   lagrangian(delta_mse, mi_seg, mi_disp, beta))


@dataclass(frozen=True)
class PrivacyFanConfig:
    beta: float = DEFAULT_BETA
    base_size: int = 179
    private_tasks: frozenset = PRIVATE_TASKS
    mi_bins: int = DEFAULT_BINS
    label_bins: int = DEFAULT_BINS

    def __post_init__(self):
        if not self.beta >= 0:
            raise ValueError(f"beta must be non-negative, got {self.beta}")
        if self.base_size < 1:
            raise ValueError(f"base_size must be positive, got {self.base_size}")
        if frozenset(self.private_tasks) != PRIVATE_TASKS:
            raise ValueError("only input reconstruction is supported as the private task")


@dataclass(frozen=True)
class Partition:
    base: tuple
    enhancement: tuple

    def __post_init__(self):
        base = tuple(sorted(int(i) for i in self.base))
        enh = tuple(sorted(int(i) for i in self.enhancement))
        if set(base) & set(enh):
            raise ValidationError("base and enhancement overlap")
        if sorted(base + enh) != list(range(len(base) + len(enh))):
            raise ValidationError("partition does not cover the channel range exactly once")
        object.__setattr__(self, "base", base)
        object.__setattr__(self, "enhancement", enh)

    @property
    def channels(self) -> int:
        return len(self.base) + len(self.enhancement)


def lagrangian(delta_mse: float, mi_seg: float, mi_disp: float, beta: float) -> float:
    return abs(float(delta_mse)) - float(beta) * (float(mi_seg) + float(mi_disp))


def _bin_equal_width(values: np.ndarray, bins: int) -> np.ndarray | None:
    lo, hi = values.min(), values.max()
    if lo == hi:
        return None
    idx = np.floor((values - lo) / (hi - lo) * bins).astype(np.int64)
    return np.clip(idx, 0, bins - 1)


def quantile_bins(values: np.ndarray, bins: int) -> np.ndarray:
    """Bin continuous labels into (at most) ``bins`` equal-population bins."""
    values = np.asarray(values, dtype=np.float64).ravel()
    edges = np.unique(np.quantile(values, np.linspace(0, 1, bins + 1)[1:-1]))
    return np.searchsorted(edges, values, side="right")


def estimate_mi(features, labels, bins: int = DEFAULT_BINS, label_bins: int | None = None, mask=None) -> float:
    """Plug-in mutual information (bits) between binned feature values and labels.

    ``features`` and ``labels`` are aligned arrays (samples x H x W, or any equal
    shape). Labels are treated as discrete ids unless ``label_bins`` is given,
    in which case they are quantile-binned. ``mask`` selects locations to use.
    """
    features = np.asarray(features, dtype=np.float64)
    labels = np.asarray(labels)
    if features.shape != labels.shape:
        raise ValueError(f"features {features.shape} and labels {labels.shape} are not aligned")
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != features.shape:
            raise ValueError("mask must match the feature shape")
        features, labels = features[mask], labels[mask]
    features, labels = features.ravel(), labels.ravel()
    if features.size < 2:
        raise ValueError("need at least two samples")
    t = _bin_equal_width(features, bins)
    if t is None:
        return 0.0
    if label_bins is not None:
        y = quantile_bins(labels, label_bins)
    else:
        _, y = np.unique(labels, return_inverse=True)
    ny = int(y.max()) + 1
    joint = np.bincount(t * ny + y, minlength=bins * ny).reshape(bins, ny).astype(np.float64)
    joint /= joint.sum()
    pt = joint.sum(axis=1, keepdims=True)
    py = joint.sum(axis=0, keepdims=True)
    nz = joint > 0
    mi = float(np.sum(joint[nz] * np.log2(joint[nz] / (pt @ py)[nz])))
    return max(mi, 0.0)


def align_labels(labels: TaskLabels, factor: int):
    """Bring labels to feature resolution: nearest-neighbour class ids, block-mean disparity.

    Returns (segmentation, disparity, valid) at (H/factor, W/factor); a block is
    invalid when its nearest-neighbour class sample is the ignore id.
    """
    seg = labels.segmentation
    h, w = seg.shape
    if h % factor or w % factor:
        raise ValueError(f"label shape {seg.shape} is not divisible by {factor}")
    off = factor // 2
    seg_small = seg[off::factor, off::factor]
    disp_small = labels.disparity.reshape(h // factor, factor, w // factor, factor).mean(axis=(1, 3))
    return seg_small, disp_small, seg_small != labels.ignore_id


def channel_mi(tensors: Sequence[FeatureTensor], labels: Sequence[TaskLabels], bins: int = DEFAULT_BINS,
               label_bins: int = DEFAULT_BINS):
    """Per-channel (mi_seg, mi_disp) over a corpus. Returns two arrays of length C."""
    if not tensors or len(tensors) != len(labels):
        raise ValueError("need the same non-zero number of tensors and label sets")
    h, w = tensors[0].height, tensors[0].width
    factor = labels[0].segmentation.shape[0] // h
    aligned = [align_labels(lab, factor) for lab in labels]
    seg = np.stack([a[0] for a in aligned])
    disp = np.stack([a[1] for a in aligned])
    valid = np.stack([a[2] for a in aligned])
    if seg.shape[1:] != (h, w):
        raise ValueError(f"labels align to {seg.shape[1:]}, features are {h}x{w}")
    data = np.stack([t.data for t in tensors])
    mi_seg = np.array([estimate_mi(data[:, c], seg, bins, mask=valid) for c in range(data.shape[1])])
    mi_disp = np.array([estimate_mi(data[:, c], disp, bins, label_bins=label_bins, mask=valid)
                        for c in range(data.shape[1])])
    return mi_seg, mi_disp


def _image_array(out):
    return out.data if isinstance(out, Image) else np.asarray(out)


def delta_mse(reconstructor: Callable, calibration: Sequence[FeatureTensor], i: int) -> float:
    """Mean MSE between reconstructions with and without channel ``i``.

    The sum is exact (``math.fsum``), so the result does not depend on the order
    of the calibration set.
    """
    if not calibration:
        raise ValueError("calibration set is empty")
    errors = []
    for t in calibration:
        full = np.asarray(_image_array(reconstructor(t)), dtype=np.float64)
        ablated = np.asarray(_image_array(reconstructor(zero_channel(t, i))), dtype=np.float64)
        if full.shape != ablated.shape:
            raise ValueError(f"reconstructor returned {full.shape} and {ablated.shape} for the same tensor")
        errors.append(math.fsum(((full - ablated) ** 2).ravel()) / full.size)
    return math.fsum(errors) / len(errors)


def score_channels(tensors, labels, reconstructor, config: PrivacyFanConfig) -> list[ChannelScore]:
    mi_seg, mi_disp = channel_mi(tensors, labels, config.mi_bins, config.label_bins)
    return [
        ChannelScore.build(c, mi_seg[c], mi_disp[c], delta_mse(reconstructor, tensors, c), config.beta)
        for c in range(tensors[0].channels)
    ]


def partition(scores: Sequence[ChannelScore], config: PrivacyFanConfig) -> Partition:
    """Take the ``base_size`` channels with the smallest Lagrangian (ties: lower index)."""
    ids = [s.channel for s in scores]
    if len(set(ids)) != len(ids):
        raise ValidationError("duplicate channel ids in score table")
    if sorted(ids) != list(range(len(ids))):
        raise ValidationError("score table must cover channels 0..C-1")
    if config.base_size > len(scores):
        raise ValueError(f"base_size {config.base_size} exceeds {len(scores)} channels")
    ranked = sorted(scores, key=lambda s: (s.lagrangian, s.channel))
    base = [s.channel for s in ranked[: config.base_size]]
    enh = [s.channel for s in ranked[config.base_size :]]
    return Partition(tuple(base), tuple(enh))


SCORE_COLUMNS = ("channel", "mi_seg", "mi_disp", "delta_mse", "lagrangian")


def write_scores(scores, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(SCORE_COLUMNS)
        for s in scores:
            writer.writerow([s.channel] + [f"{v:.6g}" for v in (s.mi_seg, s.mi_disp, s.delta_mse, s.lagrangian)])


def read_scores(path, beta: float | None = None) -> list[ChannelScore]:
    """Read a score table. With ``beta`` the Lagrangian column is recomputed (and may be blank)."""
    rows = []
    with open(Path(path), newline="") as fh:
        reader = csv.DictReader(fh)
        missing = set(SCORE_COLUMNS[:4]) - set(reader.fieldnames or ())
        if missing:
            raise ValidationError(f"score table lacks columns {sorted(missing)}")
        for row in reader:
            mi_seg, mi_disp, dm = float(row["mi_seg"]), float(row["mi_disp"]), abs(float(row["delta_mse"]))
            if mi_seg < 0 or mi_disp < 0:
                raise ValidationError(f"negative mutual information for channel {row['channel']}")
            if beta is not None:
                rows.append(ChannelScore.build(int(row["channel"]), mi_seg, mi_disp, dm, beta))
            else:
                if not row.get("lagrangian"):
                    raise ValidationError("lagrangian column is empty; pass beta to recompute it")
                rows.append(ChannelScore(int(row["channel"]), mi_seg, mi_disp, dm, float(row["lagrangian"])))
    return rows
