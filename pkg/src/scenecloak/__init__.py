"""Masked and coupled FGSM perturbations that hide images from scene classifiers."""

__version__ = "0.1.0"

from .core import LabeledImage, clip01, minmax_scale, sign
from .engines import (
    Adapters,
    Method,
    MethodConfig,
    PerturbationResult,
    TiltShiftConfig,
    apply_method,
    coupled_optimization,
    fgsm_vanilla,
    salient_defence,
    tilt_shift,
)
from .maps import SobelConfig, build_defence_mask, flatness_keep_mask, gaussian_blur, reverse_saliency, sobel_map

__all__ = [
    "Adapters",
    "LabeledImage",
    "Method",
    "MethodConfig",
    "PerturbationResult",
    "SobelConfig",
    "TiltShiftConfig",
    "apply_method",
    "build_defence_mask",
    "clip01",
    "coupled_optimization",
    "fgsm_vanilla",
    "flatness_keep_mask",
    "gaussian_blur",
    "minmax_scale",
    "reverse_saliency",
    "salient_defence",
    "sign",
    "sobel_map",
    "tilt_shift",
]
