"""Model adapters: attack classifier, saliency predictor, aesthetics scorer.

Every adapter consumes and produces numpy arrays on the unit intensity scale;
torch is only used internally for autograd. The small reference models here
are deterministic and cheap enough for tests and desk-scale experiments.
Pretrained networks (Places365 ResNet50, NIMA, a saliency net) are loaded as
optional plug-ins through :func:`load_adapter`.
"""
from __future__ import annotations

import functools
import threading
from typing import Callable, Protocol

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .core import (
    AdapterLoadError,
    LabeledImage,
    check_gradient,
    check_image,
    ensure_finite,
    to_gray,
)

DTYPE = torch.float64


class AttackModel(Protocol):
    name: str
    num_classes: int
    white_box: bool
    thread_safe: bool

    def predict(self, image: np.ndarray) -> np.ndarray: ...

    def loss_gradient(self, image: np.ndarray, label: int | None = None) -> np.ndarray: ...


class SaliencyModel(Protocol):
    name: str
    thread_safe: bool

    def predict_saliency(self, image: np.ndarray) -> np.ndarray: ...


class AestheticsModel(Protocol):
    name: str
    thread_safe: bool

    def score(self, image: np.ndarray) -> float: ...

    def score_gradient(self, image: np.ndarray) -> np.ndarray: ...


def _to_tensor(image, device="cpu", requires_grad=False):
    x = torch.as_tensor(np.ascontiguousarray(image.transpose(2, 0, 1)), dtype=DTYPE, device=device)
    x = x.unsqueeze(0)
    if requires_grad:
        x.requires_grad_(True)
    return x


def _input_gradient(output, x):
    """d output / d x as an (H, W, 3) array; zero when output ignores x."""
    (grad,) = torch.autograd.grad(output, x, allow_unused=True)
    if grad is None:
        return np.zeros(tuple(x.shape[2:]) + (3,))
    return grad[0].detach().cpu().numpy().transpose(1, 2, 0)


# ---------------------------------------------------------------------------
# Attack classifiers
# ---------------------------------------------------------------------------


class TorchClassifier:
    """Wrap a logits-producing ``nn.Module`` taking ``(N, 3, H, W)`` in [0, 1].

    ``normalize`` optionally maps unit-scale pixels to the module's expected
    input statistics; gradients are always taken w.r.t. the unit-scale image.
    """

    white_box = True

    def __init__(self, module, num_classes, name="torch", normalize=None, device="cpu", thread_safe=True):
        self.module = module.to(device=device, dtype=DTYPE).eval()
        for p in self.module.parameters():
            p.requires_grad_(False)
        self.num_classes = int(num_classes)
        self.name = name
        self.normalize = normalize
        self.device = device
        self.thread_safe = thread_safe

    def _logits(self, x):
        if self.normalize is not None:
            x = self.normalize(x)
        return self.module(x)

    def predict(self, image):
        image = check_image(image)
        with torch.no_grad():
            logits = self._logits(_to_tensor(image, self.device))
        return torch.softmax(logits, dim=1)[0].cpu().numpy()

    def loss(self, image, label):
        """Cross-entropy of the predicted distribution against ``label``."""
        image = check_image(image)
        with torch.no_grad():
            logits = self._logits(_to_tensor(image, self.device))
            return float(F.cross_entropy(logits, torch.tensor([int(label)], device=self.device)))

    def loss_gradient(self, image, label=None):
        image = check_image(image)
        x = _to_tensor(image, self.device, requires_grad=True)
        logits = self._logits(x)
        if label is None:
            # untargeted: attack the model's own top-1 decision
            label = int(torch.argmax(logits[0]))
        loss = F.cross_entropy(logits, torch.tensor([int(label)], device=self.device))
        if not loss.requires_grad:
            return np.zeros(image.shape)
        return _input_gradient(loss, x)


class LinearSoftmax(nn.Module):
    """Logits are a linear function of the per-channel mean intensity."""

    def __init__(self, weight, bias):
        super().__init__()
        self.weight = nn.Parameter(torch.as_tensor(weight, dtype=DTYPE))
        self.bias = nn.Parameter(torch.as_tensor(bias, dtype=DTYPE))

    def forward(self, x):
        return x.mean(dim=(2, 3)) @ self.weight.T + self.bias


class TinyConvNet(nn.Module):
    """Two smooth conv layers, mean+std spatial pooling, linear head.

    Works at any input size; tanh keeps the loss smooth for finite differences.
    """

    def __init__(self, num_classes=4, width=8):
        super().__init__()
        self.conv1 = nn.Conv2d(3, width, 3, padding=1)
        self.conv2 = nn.Conv2d(width, 2 * width, 3, padding=1)
        self.head = nn.Linear(4 * width, num_classes)

    def forward(self, x):
        x = torch.tanh(self.conv1(x - 0.5))
        x = F.avg_pool2d(x, 2, ceil_mode=True)
        x = torch.tanh(self.conv2(x))
        spread = (x.var(dim=(2, 3)) + 1e-6).sqrt()
        return self.head(torch.cat([x.mean(dim=(2, 3)), spread], dim=1))


def linear_classifier(num_classes=4, seed=0, scale=4.0, weight=None, bias=None):
    """Linear-softmax reference classifier with seeded weights."""
    rng = np.random.default_rng(seed)
    if weight is None:
        weight = rng.normal(0.0, scale, size=(num_classes, 3))
    if bias is None:
        bias = rng.normal(0.0, 0.1, size=num_classes)
    weight = np.asarray(weight, dtype=np.float64)
    return TorchClassifier(LinearSoftmax(weight, bias), weight.shape[0], name="linear")


def train_tiny_conv(items, num_classes, seed=0, epochs=40, lr=0.02, batch_size=32, width=8):
    """Fit a :class:`TinyConvNet` with Adam and return it wrapped as a classifier."""
    torch.manual_seed(seed)
    net = TinyConvNet(num_classes, width)
    xs = torch.as_tensor(np.stack([it.image.transpose(2, 0, 1) for it in items]), dtype=torch.float32)
    ys = torch.as_tensor([it.label for it in items])
    gen = torch.Generator().manual_seed(seed)
    opt = torch.optim.Adam(net.parameters(), lr=lr)
    sched = torch.optim.lr_scheduler.CosineAnnealingLR(opt, epochs)
    net.train()
    for _ in range(epochs):
        order = torch.randperm(len(xs), generator=gen)
        for start in range(0, len(xs), batch_size):
            idx = order[start:start + batch_size]
            opt.zero_grad()
            F.cross_entropy(net(xs[idx]), ys[idx]).backward()
            opt.step()
        sched.step()
    return TorchClassifier(net, num_classes, name="tiny_conv")


@functools.lru_cache(maxsize=8)
def _reference_conv_state(seed, size, n_per_class):
    from .synthetic import NUM_CLASSES, make_synthetic_set

    # training images use a disjoint seed stream from evaluation sets
    train = make_synthetic_set(n_per_class, size=size, seed=10_000 + seed)
    clf = train_tiny_conv(train, NUM_CLASSES, seed=seed)
    return {k: v.clone() for k, v in clf.module.state_dict().items()}


def reference_conv_classifier(seed=0, size=32, n_per_class=200, weights=None):
    """Tiny conv classifier trained on the synthetic scene set.

    Training is cached per process. If ``weights`` names an existing file the
    state dict is loaded from it; a missing file is written after training.
    """
    from pathlib import Path

    from .synthetic import NUM_CLASSES

    net = TinyConvNet(NUM_CLASSES)
    if weights is not None and Path(weights).exists():
        net.load_state_dict(torch.load(weights, map_location="cpu"))
    else:
        net.load_state_dict(_reference_conv_state(seed, size, n_per_class))
        if weights is not None:
            Path(weights).parent.mkdir(parents=True, exist_ok=True)
            torch.save(net.state_dict(), weights)
    return TorchClassifier(net, NUM_CLASSES, name="tiny_conv")


def attack_loss_gradient(model, item: LabeledImage):
    """Gradient of the cross-entropy loss w.r.t. the pixels of ``item.image``."""
    if not 0 <= item.label < model.num_classes:
        raise ValueError(f"label {item.label} outside [0, {model.num_classes}) for model {model.name!r}")
    grad = model.loss_gradient(item.image, item.label)
    return check_gradient(grad, item.image.shape, f"{model.name} loss gradient")


def top1_predict(model, image):
    """Argmax class; ties go to the lowest index."""
    return int(np.argmax(model.predict(image)))


# ---------------------------------------------------------------------------
# Aesthetics scorers
# ---------------------------------------------------------------------------


class TorchAesthetics:
    """Aesthetics scorer from a differentiable ``(1, 3, H, W) -> scalar`` function."""

    def __init__(self, fn, name, device="cpu", thread_safe=True):
        self.fn = fn
        self.name = name
        self.device = device
        self.thread_safe = thread_safe

    def score(self, image):
        image = check_image(image)
        with torch.no_grad():
            return float(self.fn(_to_tensor(image, self.device)))

    def score_gradient(self, image):
        image = check_image(image)
        x = _to_tensor(image, self.device, requires_grad=True)
        out = self.fn(x)
        if not out.requires_grad:
            return np.zeros(image.shape)
        return _input_gradient(out, x)


def mean_intensity_aesthetics():
    return TorchAesthetics(lambda x: x.mean(), "mean_intensity")


def total_variation(x, delta=0.01):
    """Mean neighbour difference magnitude, Charbonnier-smoothed so it is differentiable at 0."""

    def soft_abs(d):
        return (d * d + delta * delta).sqrt() - delta

    return soft_abs(x[..., 1:, :] - x[..., :-1, :]).mean() + soft_abs(x[..., :, 1:] - x[..., :, :-1]).mean()


def neg_total_variation_aesthetics(delta=0.01):
    """Score is minus the (smoothed, anisotropic) total variation."""
    return TorchAesthetics(lambda x: -total_variation(x, delta), "neg_total_variation")


def aesthetics_gradient(model, image):
    """Gradient of the scalar aesthetics score (not a loss) w.r.t. pixels."""
    image = check_image(image)
    grad = model.score_gradient(image)
    return check_gradient(grad, image.shape, f"{model.name} score gradient")


class NIMAHead(nn.Module):
    """Backbone features -> 10-bin rating distribution -> expected rating in [1, 10]."""

    def __init__(self, backbone, in_features, dropout=0.75):
        super().__init__()
        self.base = backbone
        self.head = nn.Sequential(nn.Dropout(dropout), nn.Linear(in_features, 10), nn.Softmax(dim=-1))

    def forward(self, x):
        dist = self.head(self.base(x))
        return (dist * torch.arange(1, 11, dtype=dist.dtype, device=dist.device)).sum(dim=-1)


# ---------------------------------------------------------------------------
# Saliency predictors
# ---------------------------------------------------------------------------


def normalize_saliency(raw, shape=None):
    """Clamp negatives and divide by the maximum; an all-zero map stays zero."""
    raw = np.maximum(ensure_finite(raw, "saliency"), 0.0)
    if shape is not None and raw.shape != tuple(shape):
        raise ValueError(f"saliency shape {raw.shape} does not match image {tuple(shape)}")
    peak = raw.max()
    return raw / peak if peak > 0 else raw


class ConstantSaliency:
    thread_safe = True

    def __init__(self, value=0.0):
        if not 0.0 <= value <= 1.0:
            raise ValueError("constant saliency must lie in [0, 1]")
        self.value = float(value)
        self.name = f"constant({self.value:g})"

    def predict_saliency(self, image):
        return np.full(check_image(image).shape[:2], self.value)


class CenterBiasSaliency:
    """Isotropic Gaussian centered on the frame; ``sigma`` is a fraction of the short side."""

    name = "center_bias"
    thread_safe = True

    def __init__(self, sigma=0.25):
        self.sigma = float(sigma)

    def predict_saliency(self, image):
        h, w = check_image(image).shape[:2]
        s = self.sigma * min(h, w)
        yy, xx = np.mgrid[0:h, 0:w]
        raw = np.exp(-(((yy - (h - 1) / 2) ** 2 + (xx - (w - 1) / 2) ** 2) / (2 * s * s)))
        return normalize_saliency(raw)


class SpectralResidualSaliency:
    """Spectral-residual saliency (Hou and Zhang, 2007) on the luma channel."""

    name = "spectral_residual"
    thread_safe = True

    def __init__(self, avg_size=3, blur_sigma=None):
        self.avg_size = int(avg_size)
        self.blur_sigma = blur_sigma

    def predict_saliency(self, image):
        from scipy import ndimage

        gray = to_gray(check_image(image))
        spectrum = np.fft.fft2(gray)
        log_amp = np.log(np.abs(spectrum) + 1e-12)
        residual = log_amp - ndimage.uniform_filter(log_amp, self.avg_size, mode="nearest")
        raw = np.abs(np.fft.ifft2(np.exp(residual + 1j * np.angle(spectrum)))) ** 2
        sigma = self.blur_sigma if self.blur_sigma is not None else max(1.0, min(gray.shape) / 32)
        raw = ndimage.gaussian_filter(raw, sigma, mode="nearest")
        return normalize_saliency(raw)


class TorchSaliency:
    """Saliency network returning ``(1, 1, h, w)`` or ``(1, h, w)``; resized to the image."""

    thread_safe = True

    def __init__(self, module, name="torch_saliency", normalize=None, device="cpu"):
        self.module = module.to(device=device, dtype=DTYPE).eval()
        self.name = name
        self.normalize = normalize
        self.device = device

    def predict_saliency(self, image):
        image = check_image(image)
        with torch.no_grad():
            x = _to_tensor(image, self.device)
            if self.normalize is not None:
                x = self.normalize(x)
            out = self.module(x)
            if out.dim() == 3:
                out = out.unsqueeze(1)
            out = F.interpolate(out, size=image.shape[:2], mode="bilinear", align_corners=False)
        return normalize_saliency(out[0, 0].cpu().numpy())


# ---------------------------------------------------------------------------
# Registry
# ---------------------------------------------------------------------------

_IMAGENET_MEAN = (0.485, 0.456, 0.406)
_IMAGENET_STD = (0.229, 0.224, 0.225)


def imagenet_normalize(x):
    mean = torch.tensor(_IMAGENET_MEAN, dtype=x.dtype, device=x.device).view(1, 3, 1, 1)
    std = torch.tensor(_IMAGENET_STD, dtype=x.dtype, device=x.device).view(1, 3, 1, 1)
    return (x - mean) / std


def _require_weights(weights, name):
    from pathlib import Path

    if weights is None:
        raise AdapterLoadError(f"adapter {name!r} needs a weights path")
    if not Path(weights).is_file():
        raise AdapterLoadError(f"weights file for {name!r} not found: {weights}")
    return weights


def _load_state_dict(path):
    ckpt = torch.load(path, map_location="cpu", weights_only=False)
    state = ckpt.get("state_dict", ckpt) if isinstance(ckpt, dict) else ckpt
    return {k.removeprefix("module."): v for k, v in state.items()}


def _resnet50_places365(weights=None, device="cpu", num_classes=365, **_):
    import torchvision

    net = torchvision.models.resnet50(num_classes=num_classes)
    net.load_state_dict(_load_state_dict(_require_weights(weights, "resnet50_places365")))
    return TorchClassifier(net, num_classes, "resnet50_places365", imagenet_normalize, device)


def _nima(weights=None, device="cpu", backbone="mobilenet_v2", **_):
    import torchvision

    if backbone == "mobilenet_v2":
        base = torchvision.models.mobilenet_v2()
        base.classifier = nn.Identity()
        feats = 1280
    elif backbone == "vgg16":
        base = torchvision.models.vgg16()
        base.classifier = nn.Sequential(*list(base.classifier.children())[:-1])
        feats = 4096
    else:
        raise AdapterLoadError(f"unknown NIMA backbone {backbone!r}")
    net = NIMAHead(base, feats)
    net.load_state_dict(_load_state_dict(_require_weights(weights, "nima")))
    net = net.to(device=device, dtype=DTYPE).eval()
    for p in net.parameters():
        p.requires_grad_(False)

    def fn(x):
        if x.shape[-2:] != (224, 224):
            x = F.interpolate(x, size=(224, 224), mode="bilinear", align_corners=False)
        return net(imagenet_normalize(x)).sum()

    return TorchAesthetics(fn, f"nima_{backbone}", device)


def _torchscript(weights, device):
    return torch.jit.load(_require_weights(weights, "torchscript"), map_location=device)


def _torchscript_attack(weights=None, device="cpu", num_classes=365, imagenet_norm=True, **_):
    norm = imagenet_normalize if imagenet_norm else None
    return TorchClassifier(_torchscript(weights, device), num_classes, "torchscript", norm, device)


def _torchscript_saliency(weights=None, device="cpu", imagenet_norm=True, **_):
    norm = imagenet_normalize if imagenet_norm else None
    return TorchSaliency(_torchscript(weights, device), "torchscript", norm, device)


def _torchscript_aesthetics(weights=None, device="cpu", **_):
    mod = _torchscript(weights, device).to(dtype=DTYPE)
    return TorchAesthetics(lambda x: mod(imagenet_normalize(x)).sum(), "torchscript", device)


ATTACK_MODELS: dict[str, Callable] = {
    "linear": lambda seed=0, num_classes=4, **_: linear_classifier(num_classes, seed),
    "tiny_conv": lambda seed=0, weights=None, size=32, **_: reference_conv_classifier(seed, size, weights=weights),
    "resnet50_places365": _resnet50_places365,
    "torchscript": _torchscript_attack,
}
SALIENCY_MODELS: dict[str, Callable] = {
    "constant": lambda value=0.0, **_: ConstantSaliency(value),
    "center_bias": lambda sigma=0.25, **_: CenterBiasSaliency(sigma),
    "spectral_residual": lambda **_: SpectralResidualSaliency(),
    "torchscript": _torchscript_saliency,
}
AESTHETICS_MODELS: dict[str, Callable] = {
    "mean_intensity": lambda **_: mean_intensity_aesthetics(),
    "neg_total_variation": lambda **_: neg_total_variation_aesthetics(),
    "nima": _nima,
    "torchscript": _torchscript_aesthetics,
}
REGISTRY = {"attack": ATTACK_MODELS, "saliency": SALIENCY_MODELS, "aesthetics": AESTHETICS_MODELS}


def load_adapter(role, name, weights=None, device="cpu", seed=0, **options):
    """Instantiate a registered adapter; any failure becomes :class:`AdapterLoadError`."""
    try:
        table = REGISTRY[role]
    except KeyError:
        raise AdapterLoadError(f"unknown adapter role {role!r}") from None
    if name not in table:
        raise AdapterLoadError(f"unknown {role} adapter {name!r}; available: {', '.join(sorted(table))}")
    try:
        return table[name](weights=weights, device=device, seed=seed, **options)
    except AdapterLoadError:
        raise
    except Exception as exc:
        raise AdapterLoadError(f"failed to load {role} adapter {name!r}: {exc}") from exc


class Serialized:
    """Proxy that serializes every call into a single-threaded adapter."""

    def __init__(self, adapter):
        self._adapter = adapter
        self._lock = threading.Lock()
        self.thread_safe = True

    def __getattr__(self, attr):
        value = getattr(self._adapter, attr)
        if not callable(value):
            return value

        def locked(*args, **kwargs):
            with self._lock:
                return value(*args, **kwargs)

        return locked


def serialized(adapter):
    if adapter is None or getattr(adapter, "thread_safe", False):
        return adapter
    return Serialized(adapter)
