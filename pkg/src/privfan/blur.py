"""Gaussian blur probe: how much blur (measured as MSE) destroys character recognition."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass

import numpy as np

from privfan.tensor import Image

log = logging.getLogger(__name__)

KERNEL_SIZE = 11
DEFAULT_SIGMAS = (0.5, 1.0, 2.0, 3.0, 4.0, 5.0)


@dataclass(frozen=True)
class BlurParams:
    sigma: float
    kernel_size: int = KERNEL_SIZE

    def __post_init__(self):
        if not self.sigma > 0:
            raise ValueError(f"sigma must be positive, got {self.sigma}")
        if self.kernel_size < 1 or self.kernel_size % 2 == 0:
            raise ValueError(f"kernel size must be odd, got {self.kernel_size}")


def gaussian_taps(params: BlurParams) -> np.ndarray:
    r = params.kernel_size // 2
    x = np.arange(-r, r + 1, dtype=np.float64)
    g = np.exp(-(x**2) / (2.0 * params.sigma**2))
    return g / g.sum()


def gaussian_kernel(params: BlurParams) -> np.ndarray:
    r = params.kernel_size // 2
    x = np.arange(-r, r + 1, dtype=np.float64)
    w = np.exp(-(x[:, None] ** 2 + x[None, :] ** 2) / (2.0 * params.sigma**2))
    return w / w.sum()


def _convolve_axis(plane: np.ndarray, taps: np.ndarray, axis: int) -> np.ndarray:
    r = len(taps) // 2
    pad = [(0, 0), (0, 0)]
    pad[axis] = (r, r)
    padded = np.pad(plane, pad, mode="edge")
    out = np.zeros_like(plane)
    n = plane.shape[axis]
    for k, t in enumerate(taps):
        out += t * (padded[k : k + n] if axis == 0 else padded[:, k : k + n])
    return out


def blur_plane(plane: np.ndarray, params: BlurParams) -> np.ndarray:
    """Separable Gaussian blur of a 2-D array with replicated borders (float64)."""
    taps = gaussian_taps(params)
    plane = np.asarray(plane, dtype=np.float64)
    return _convolve_axis(_convolve_axis(plane, taps, 0), taps, 1)


def blur_plane_direct(plane: np.ndarray, params: BlurParams) -> np.ndarray:
    """Reference 2-D convolution with the full kernel; slow, used for checking."""
    kernel = gaussian_kernel(params)
    r = params.kernel_size // 2
    plane = np.asarray(plane, dtype=np.float64)
    padded = np.pad(plane, r, mode="edge")
    h, w = plane.shape
    out = np.zeros_like(plane)
    for dy in range(params.kernel_size):
        for dx in range(params.kernel_size):
            out += kernel[dy, dx] * padded[dy : dy + h, dx : dx + w]
    return out


def blur_image(img: Image, params: BlurParams) -> Image:
    return Image(np.stack([blur_plane(p, params) for p in img.data]))


def blur_sweep(corpus, sigmas, recognizer, cra_fn=None):
    """Blur every scene at each sigma and score recognition.

    ``corpus`` is a sequence of ``(image_id, Image, annotations)``;
    ``recognizer(image, annotations)`` returns a list of PlatePrediction.
    Returns rows ``{"sigma", "mse", "cra"}`` sorted by sigma.
    """
    from privfan.metrics import cra as _cra, mse_psnr

    cra_fn = cra_fn or _cra
    corpus = list(corpus)
    if not corpus:
        raise ValueError("blur sweep needs a non-empty corpus")
    ground = [a for _, _, anns in corpus for a in anns]
    rows = []
    for sigma in sorted(float(s) for s in sigmas):
        params = BlurParams(sigma)
        mses, predicted = [], {}
        for image_id, img, anns in corpus:
            blurred = blur_image(img, params)
            mses.append(mse_psnr(img, blurred)[0])
            try:
                predicted[image_id] = recognizer(blurred, anns)
            except Exception as exc:  # noqa: BLE001 - a failed read is an empty read
                log.warning("recognizer failed on %s at sigma=%g: %s", image_id, sigma, exc)
                predicted[image_id] = []
        rows.append({"sigma": sigma, "mse": float(np.mean(mses)), "cra": cra_fn(ground, predicted).cra})
    return rows


def write_sweep_csv(rows, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=["sigma", "mse", "cra"])
        writer.writeheader()
        for row in rows:
            writer.writerow({"sigma": f"{row['sigma']:g}", "mse": f"{row['mse']:.6g}", "cra": f"{row['cra']:.4f}"})
