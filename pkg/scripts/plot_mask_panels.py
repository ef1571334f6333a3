"""Side-by-side figure of the defence-mask stages and the perturbation it admits.

    python3 scripts/plot_mask_panels.py --image photo.png --eps 0.05 --out panels.png
"""
import argparse

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from scenecloak.core import LabeledImage
from scenecloak.engines import salient_defence
from scenecloak.evaluation import preprocess
from scenecloak.imaging import load_image
from scenecloak.maps import SobelConfig, defence_panels
from scenecloak.models import SpectralResidualSaliency, reference_conv_classifier, top1_predict
from scenecloak.synthetic import make_synthetic_set


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--image", help="input image (default: a synthetic sample)")
    ap.add_argument("--side", type=int, default=128)
    ap.add_argument("--eps", type=float, default=0.05)
    ap.add_argument("--blur-sigma", type=float, default=4.0)
    ap.add_argument("--out", default="panels.png")
    args = ap.parse_args()

    image = load_image(args.image) if args.image else make_synthetic_set(1, size=64, seed=3)[2].image
    image = preprocess(image, args.side)
    model = reference_conv_classifier()
    saliency = SpectralResidualSaliency()
    cfg = SobelConfig(args.blur_sigma)
    panels = defence_panels(image, saliency, cfg)
    item = LabeledImage(image, top1_predict(model, image), "figure")
    res = salient_defence(item, model, saliency, cfg, args.eps)

    shown = [
        ("input", image),
        ("saliency", panels["saliency"]),
        ("blurred Sobel", panels["sobel_blurred"]),
        ("mask", panels["mask"]),
        ("|perturbation|", np.abs(res.perturbation).max(axis=2)),
        ("output", res.modified),
    ]
    fig, axes = plt.subplots(1, len(shown), figsize=(3 * len(shown), 3.2))
    for ax, (title, field) in zip(axes, shown):
        ax.imshow(field, cmap=None if field.ndim == 3 else "gray")
        ax.set_title(title)
        ax.axis("off")
    fig.tight_layout()
    fig.savefig(args.out, dpi=120)
    print(args.out)


if __name__ == "__main__":
    main()
