"""PNG/JPEG loading and lossless PNG writing on the unit intensity scale."""
from __future__ import annotations

import os
from pathlib import Path

import numpy as np
from PIL import Image

from .core import DataError, check_image

IMAGE_SUFFIXES = {".png", ".jpg", ".jpeg", ".bmp", ".tif", ".tiff", ".webp"}


def load_image(path):
    """Read an image file as float64 RGB in [0, 1] (8-bit values divided by 255)."""
    try:
        with Image.open(path) as im:
            arr = np.asarray(im.convert("RGB"), dtype=np.float64)
    except (OSError, ValueError) as exc:
        raise DataError(f"cannot read image {path}: {exc}") from exc
    return arr / 255.0


def to_uint8(values):
    return np.round(np.clip(values, 0.0, 1.0) * 255.0).astype(np.uint8)


def _atomic_save(im, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(f".{path.name}.tmp")
    im.save(tmp, format="PNG")
    os.replace(tmp, path)


def save_png(image, path):
    check_image(image)
    _atomic_save(Image.fromarray(to_uint8(image), mode="RGB"), path)


def save_gray_png(field, path, normalize=True):
    """Write a single-channel field; ``normalize`` stretches it by its maximum."""
    field = np.asarray(field, dtype=np.float64)
    if normalize and field.max() > 0:
        field = field / field.max()
    _atomic_save(Image.fromarray(to_uint8(field), mode="L"), path)
