"""Perturbation mask from a saliency map and a blurred Sobel flatness map."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .core import check_image, check_mask, ensure_finite, to_gray

# values within this relative distance of the mean count as "at the mean"
MEAN_RTOL = 1e-9


@dataclass(frozen=True)
class SobelConfig:
    blur_sigma: float = 10.0
    kernel_radius: int | None = None

    def __post_init__(self):
        if not self.blur_sigma > 0:
            raise ValueError(f"blur_sigma must be positive, got {self.blur_sigma}")
        if self.kernel_radius is not None and self.kernel_radius < 1:
            raise ValueError(f"kernel_radius must be >= 1, got {self.kernel_radius}")

    @property
    def radius(self):
        if self.kernel_radius is not None:
            return int(self.kernel_radius)
        return max(1, math.ceil(3 * self.blur_sigma))


def gaussian_kernel(sigma, radius):
    offsets = np.arange(-radius, radius + 1, dtype=np.float64)
    weights = np.exp(-(offsets**2) / (2.0 * sigma * sigma))
    return weights / weights.sum()


def sobel_map(image):
    """Gradient magnitude of the luma image under the 3x3 Sobel pair, edges replicated."""
    gray = to_gray(check_image(image))
    gx = ndimage.sobel(gray, axis=1, mode="nearest")
    gy = ndimage.sobel(gray, axis=0, mode="nearest")
    return np.hypot(gx, gy)


def gaussian_blur(field, config=None):
    """Separable normalized Gaussian blur of a 2-D field, or per channel of an (H, W, C) image."""
    config = config or SobelConfig()
    field = ensure_finite(field)
    kernel = gaussian_kernel(config.blur_sigma, config.radius)
    out = ndimage.correlate1d(field, kernel, axis=0, mode="nearest")
    return ndimage.correlate1d(out, kernel, axis=1, mode="nearest")


def flatness_keep_mask(sobel_blurred):
    """1 where the blurred edge response is at or above its spatial mean, else 0."""
    field = ensure_finite(sobel_blurred)
    mean = field.mean()
    return (field >= mean - MEAN_RTOL * abs(mean)).astype(np.float64)


def reverse_saliency(saliency):
    return 1.0 - check_mask(saliency, what="saliency")


def defence_panels(image, saliency, config=None):
    """All intermediate maps of the mask construction, keyed by name."""
    image = check_image(image)
    sal = check_mask(saliency.predict_saliency(image), image.shape[:2], "saliency")
    sobel = sobel_map(image)
    blurred = gaussian_blur(sobel, config)
    keep = flatness_keep_mask(blurred)
    rev = reverse_saliency(sal)
    return {
        "saliency": sal,
        "sobel": sobel,
        "sobel_blurred": blurred,
        "flatness_keep": keep,
        "reverse_saliency": rev,
        "mask": rev * keep,
    }


def build_defence_mask(image, saliency, config=None):
    """Reverse saliency times the binary flatness mask; zero on salient or flat pixels."""
    return defence_panels(image, saliency, config)["mask"]
