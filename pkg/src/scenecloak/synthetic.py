"""Seeded four-class synthetic "scene" images for desk-scale experiments."""
from __future__ import annotations

import numpy as np

from .core import LabeledImage

CLASS_NAMES = ("gradient", "checkerboard", "blobs", "stripes")
NUM_CLASSES = len(CLASS_NAMES)


def _two_colors(rng):
    a = rng.uniform(0.05, 0.95, 3)
    b = rng.uniform(0.05, 0.95, 3)
    while np.abs(a - b).mean() < 0.25:
        b = rng.uniform(0.05, 0.95, 3)
    return a, b


def _blend(t, a, b):
    return t[..., None] * a + (1 - t[..., None]) * b


def _gradient(rng, size):
    yy, xx = np.mgrid[0:size, 0:size] / (size - 1)
    theta = rng.uniform(0, 2 * np.pi)
    t = np.cos(theta) * xx + np.sin(theta) * yy
    t = (t - t.min()) / (t.max() - t.min())
    return _blend(t, *_two_colors(rng))


def _checkerboard(rng, size):
    cell = int(rng.integers(3, 7))
    oy, ox = rng.integers(0, cell, 2)
    yy, xx = np.mgrid[0:size, 0:size]
    t = (((yy + oy) // cell + (xx + ox) // cell) % 2).astype(float)
    return _blend(t, *_two_colors(rng))


def _blobs(rng, size):
    yy, xx = np.mgrid[0:size, 0:size]
    t = np.zeros((size, size))
    for _ in range(int(rng.integers(2, 5))):
        cy, cx = rng.uniform(0, size, 2)
        r = rng.uniform(0.1, 0.25) * size
        t = np.maximum(t, np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * r * r)))
    return _blend(t, *_two_colors(rng))


def _stripes(rng, size):
    yy, xx = np.mgrid[0:size, 0:size]
    period = rng.uniform(4, 9)
    theta = rng.uniform(0, np.pi)
    phase = rng.uniform(0, 2 * np.pi)
    t = 0.5 + 0.5 * np.sin(2 * np.pi * (np.cos(theta) * xx + np.sin(theta) * yy) / period + phase)
    return _blend(t, *_two_colors(rng))


_GENERATORS = (_gradient, _checkerboard, _blobs, _stripes)


def synthetic_image(label, rng, size=32, noise=0.02):
    img = _GENERATORS[label](rng, size) + rng.normal(0, noise, (size, size, 3))
    return np.clip(img, 0.0, 1.0)


def make_synthetic_set(n_per_class, size=32, seed=0, noise=0.02):
    """Return ``n_per_class`` images of every class, ordered by identifier."""
    rng = np.random.default_rng(seed)
    items = []
    for i in range(n_per_class):
        for label, cls in enumerate(CLASS_NAMES):
            img = synthetic_image(label, rng, size, noise)
            items.append(LabeledImage(img, label, f"{cls}_{i:04d}"))
    return sorted(items, key=lambda it: it.identifier)
