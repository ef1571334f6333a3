"""Shared domain types and elementwise array helpers.

Images are ``float64`` arrays of shape ``(H, W, 3)`` with values in [0, 1].
Gradient fields share the image shape; masks are ``(H, W)``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class CloakError(Exception):
    """Base class for every error raised by this package."""


class NonFiniteError(CloakError, ValueError):
    pass


class ShapeError(CloakError, ValueError):
    pass


class ConfigError(CloakError):
    pass


class AdapterLoadError(CloakError):
    pass


class DataError(CloakError):
    pass


MIN_SIDE = 3


def ensure_finite(field, what="field"):
    arr = np.asarray(field, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        bad = int(np.size(arr) - np.count_nonzero(np.isfinite(arr)))
        raise NonFiniteError(f"{what} contains {bad} non-finite value(s)")
    return arr


def check_image(image, what="image"):
    """Validate an RGB image and return it as a float64 array."""
    arr = ensure_finite(image, what)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise ShapeError(f"{what} must have shape (H, W, 3), got {arr.shape}")
    if arr.shape[0] < MIN_SIDE or arr.shape[1] < MIN_SIDE:
        raise ShapeError(f"{what} must be at least {MIN_SIDE}x{MIN_SIDE}, got {arr.shape[:2]}")
    if arr.min() < 0.0 or arr.max() > 1.0:
        raise ValueError(f"{what} values must lie in [0, 1], got [{arr.min()}, {arr.max()}]")
    return arr


def check_gradient(grad, image_shape, what="gradient"):
    arr = ensure_finite(grad, what)
    if arr.shape != tuple(image_shape):
        raise ShapeError(f"{what} shape {arr.shape} does not match image shape {tuple(image_shape)}")
    return arr


def check_mask(mask, hw=None, what="mask"):
    arr = ensure_finite(mask, what)
    if arr.ndim != 2:
        raise ShapeError(f"{what} must be single-channel (H, W), got {arr.shape}")
    if hw is not None and arr.shape != tuple(hw):
        raise ShapeError(f"{what} shape {arr.shape} does not match {tuple(hw)}")
    if arr.size and (arr.min() < 0.0 or arr.max() > 1.0):
        raise ValueError(f"{what} values must lie in [0, 1], got [{arr.min()}, {arr.max()}]")
    return arr


def check_epsilon(eps):
    eps = float(eps)
    if not np.isfinite(eps) or not 0.0 <= eps <= 1.0:
        raise ValueError(f"epsilon must lie in [0, 1], got {eps}")
    return eps


def sign(field):
    """Elementwise sign with sign(0) = 0."""
    return np.sign(ensure_finite(field))


def clip01(image):
    return np.clip(ensure_finite(image, "image"), 0.0, 1.0)


def minmax_scale(field):
    """Affinely map the whole field onto [0, 1].

    A constant field carries no direction, so it maps to all zeros.
    """
    arr = ensure_finite(field)
    lo, hi = arr.min(), arr.max()
    if hi == lo:
        return np.zeros_like(arr)
    return (arr - lo) / (hi - lo)


def maxabs_scale(field):
    """Divide by the largest magnitude, keeping signs. All-zero stays all-zero."""
    arr = ensure_finite(field)
    peak = np.abs(arr).max()
    if peak == 0:
        return np.zeros_like(arr)
    return arr / peak


def to_gray(image):
    """Luma conversion with ITU-R BT.601 weights."""
    image = np.asarray(image, dtype=np.float64)
    return image @ np.array([0.299, 0.587, 0.114])


@dataclass(frozen=True)
class LabeledImage:
    image: np.ndarray
    label: int
    identifier: str

    def __post_init__(self):
        object.__setattr__(self, "image", check_image(self.image, f"image {self.identifier!r}"))
        if int(self.label) < 0:
            raise ValueError(f"label must be non-negative, got {self.label}")
        object.__setattr__(self, "label", int(self.label))
