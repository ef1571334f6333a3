"""Single-step image transforms: vanilla FGSM, saliency-masked FGSM,
coupled attack/aesthetics FGSM, and a saliency-driven tilt-shift filter.

Every perturbation is clipped back into [0, 1] after it is added. The
pre-clip step is kept on the result so budgets can be audited.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from .core import (
    CloakError,
    ConfigError,
    LabeledImage,
    check_epsilon,
    check_image,
    check_mask,
    clip01,
    maxabs_scale,
    minmax_scale,
    sign,
)
from .maps import SobelConfig, build_defence_mask, gaussian_blur
from .models import aesthetics_gradient, attack_loss_gradient

BUDGET_TOL = 1e-9


class BudgetViolation(CloakError):
    pass


class Method(str, enum.Enum):
    VANILLA_FGSM = "vanilla_fgsm"
    SALIENT_DEFENCE = "salient_defence"
    SALIENT_DEFENCE_TILTSHIFT = "salient_defence_tiltshift"
    COUPLED_OPTIMIZATION = "coupled_optimization"

    @classmethod
    def parse(cls, value):
        if isinstance(value, cls):
            return value
        try:
            return cls(value)
        except ValueError:
            valid = ", ".join(m.value for m in cls)
            raise ConfigError(f"unknown method {value!r}; valid methods: {valid}") from None


SCALING_MODES = ("range01", "signed_maxabs")
TILTSHIFT_ORDERS = ("perturb_then_filter", "filter_then_perturb")


@dataclass(frozen=True)
class TiltShiftConfig:
    blur_sigma: float = 4.0
    intensify_sigma: float = 2.0
    strength: float = 0.5

    def __post_init__(self):
        if not self.blur_sigma > 0 or not self.intensify_sigma > 0:
            raise ValueError("tilt-shift sigmas must be positive")
        if self.strength < 0:
            raise ValueError("tilt-shift strength must be non-negative")


@dataclass(frozen=True)
class MethodConfig:
    sobel: SobelConfig = field(default_factory=SobelConfig)
    tilt_shift: TiltShiftConfig = field(default_factory=TiltShiftConfig)
    scaling_mode: str = "range01"
    tiltshift_order: str = "perturb_then_filter"

    def __post_init__(self):
        if self.scaling_mode not in SCALING_MODES:
            raise ConfigError(f"scaling_mode must be one of {SCALING_MODES}, got {self.scaling_mode!r}")
        if self.tiltshift_order not in TILTSHIFT_ORDERS:
            raise ConfigError(f"tiltshift_order must be one of {TILTSHIFT_ORDERS}, got {self.tiltshift_order!r}")


@dataclass
class Adapters:
    attack: object
    saliency: object = None
    aesthetics: object = None


@dataclass
class PerturbationResult:
    modified: np.ndarray
    epsilon: float
    method: Method
    perturbation: np.ndarray
    mask_used: np.ndarray | None = None

    @property
    def linf_delta(self):
        """Largest absolute pre-clip step."""
        return float(np.abs(self.perturbation).max()) if self.perturbation.size else 0.0


def _apply_step(image, step, eps, method, mask=None):
    return PerturbationResult(clip01(image + step), eps, method, step, mask)


def fgsm_vanilla(item, model, eps):
    eps = check_epsilon(eps)
    step = eps * sign(attack_loss_gradient(model, item))
    return _apply_step(item.image, step, eps, Method.VANILLA_FGSM)


def salient_defence(item, model, saliency, config=None, eps=0.0):
    """FGSM whose step at each pixel is scaled by the defence mask."""
    eps = check_epsilon(eps)
    mask = build_defence_mask(item.image, saliency, config)
    step = mask[..., None] * sign(attack_loss_gradient(model, item)) * eps
    return _apply_step(item.image, step, eps, Method.SALIENT_DEFENCE, mask)


def coupled_direction(attack_grad, aesthetics_grad, scaling_mode="range01"):
    """Sign of the scaled attack gradient minus the scaled aesthetics gradient.

    ``range01`` maps each field onto [0, 1] (which drops the gradient's own
    sign); ``signed_maxabs`` divides each by its peak magnitude instead.
    """
    if scaling_mode == "range01":
        scale = minmax_scale
    elif scaling_mode == "signed_maxabs":
        scale = maxabs_scale
    else:
        raise ConfigError(f"scaling_mode must be one of {SCALING_MODES}, got {scaling_mode!r}")
    return sign(scale(attack_grad) - scale(aesthetics_grad))


def coupled_optimization(item, attack, aesthetics, eps, scaling_mode="range01"):
    eps = check_epsilon(eps)
    g_attack = attack_loss_gradient(attack, item)
    g_aesthetics = aesthetics_gradient(aesthetics, item.image)
    step = eps * coupled_direction(g_attack, g_aesthetics, scaling_mode)
    return _apply_step(item.image, step, eps, Method.COUPLED_OPTIMIZATION)


def tilt_shift(image, saliency, blur_sigma=4.0, intensify_strength=0.5, intensify_sigma=2.0):
    """Sharpen the salient foreground, blur the rest, blend by the saliency map.

    ``saliency`` is an adapter or a precomputed (H, W) map in [0, 1].
    """
    image = check_image(image)
    if intensify_strength < 0:
        raise ValueError("intensify_strength must be non-negative")
    if hasattr(saliency, "predict_saliency"):
        saliency = saliency.predict_saliency(image)
    s = check_mask(saliency, image.shape[:2], "saliency")[..., None]
    background = gaussian_blur(image, SobelConfig(blur_sigma))
    detail = image - gaussian_blur(image, SobelConfig(intensify_sigma))
    foreground = clip01(image + intensify_strength * detail)
    return clip01(s * foreground + (1.0 - s) * background)


def _tilt_shift_with(image, saliency, cfg):
    return tilt_shift(image, saliency, cfg.blur_sigma, cfg.strength, cfg.intensify_sigma)


def _require(adapters, role, method):
    adapter = getattr(adapters, role)
    if adapter is None:
        raise ConfigError(f"method {method.value!r} needs a {role} adapter")
    return adapter


def apply_method(method, item, adapters, config=None, eps=0.0):
    """Dispatch ``method`` on one image."""
    method = Method.parse(method)
    config = config or MethodConfig()
    attack = _require(adapters, "attack", method)
    if method is Method.VANILLA_FGSM:
        return fgsm_vanilla(item, attack, eps)
    if method is Method.COUPLED_OPTIMIZATION:
        aesthetics = _require(adapters, "aesthetics", method)
        return coupled_optimization(item, attack, aesthetics, eps, config.scaling_mode)
    saliency = _require(adapters, "saliency", method)
    if method is Method.SALIENT_DEFENCE:
        return salient_defence(item, attack, saliency, config.sobel, eps)
    # salient_defence_tiltshift
    if config.tiltshift_order == "perturb_then_filter":
        res = salient_defence(item, attack, saliency, config.sobel, eps)
        res.modified = _tilt_shift_with(res.modified, saliency, config.tilt_shift)
    else:
        filtered = LabeledImage(_tilt_shift_with(item.image, saliency, config.tilt_shift), item.label, item.identifier)
        res = salient_defence(filtered, attack, saliency, config.sobel, eps)
    res.method = Method.SALIENT_DEFENCE_TILTSHIFT
    return res


def check_budget(result, original=None, tol=BUDGET_TOL):
    """Raise if the pre-clip step (or, for pure perturbations, the output) exceeds epsilon."""
    limit = result.epsilon + tol
    if result.mask_used is not None:
        if np.any(np.abs(result.perturbation) > result.mask_used[..., None] * result.epsilon + tol):
            raise BudgetViolation("masked step exceeds mask * epsilon")
    if result.linf_delta > limit:
        raise BudgetViolation(f"step {result.linf_delta} exceeds epsilon {result.epsilon}")
    if original is not None and result.method is not Method.SALIENT_DEFENCE_TILTSHIFT:
        moved = float(np.abs(result.modified - original).max())
        if moved > limit:
            raise BudgetViolation(f"output moved {moved} > epsilon {result.epsilon}")
