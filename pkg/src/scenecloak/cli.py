"""Command-line entry point.

    scenecloak perturb --method salient_defence --eps 0.01 --image x.png
    scenecloak maps --image x.png
    scenecloak sweep --config run.yaml
    scenecloak probe --config run.yaml
    scenecloak evaluate --images out/salient_defence/eps_0.01
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import __version__
from .config import dump_config, load_config
from .core import AdapterLoadError, CloakError, ConfigError, DataError, LabeledImage, to_gray
from .engines import Method, apply_method, check_budget
from .evaluation import (
    dumps_json,
    evaluate_directory,
    load_adapters,
    load_items,
    nima_sensitivity_probe,
    preprocess,
    prepare_items,
    run_from_config,
    write_sidecar,
)
from .imaging import load_image, save_gray_png, save_png
from .maps import defence_panels
from .models import REGISTRY, top1_predict

EXIT_USAGE = 2
EXIT_ADAPTER = 3
EXIT_DATA = 4

log = logging.getLogger("scenecloak")


def _overrides(args, mapping):
    out = {}
    for attr, key in mapping.items():
        value = getattr(args, attr, None)
        if value is not None:
            out[key] = value
    return out


COMMON = {"seed": "seed", "output_dir": "output_dir", "workers": "workers", "side": "side"}


def _config(args, extra=None):
    return load_config(args.config, _overrides(args, {**COMMON, **(extra or {})}))


def cmd_perturb(args):
    cfg = _config(args)
    adapters = load_adapters(cfg.adapters, cfg.seed)
    image = load_image(args.image)
    if args.side is not None:
        image = preprocess(image, args.side)
    label = args.label if args.label is not None else top1_predict(adapters.attack, image)
    item = LabeledImage(image, label, Path(args.image).stem)
    method = Method.parse(args.method)
    res = apply_method(method, item, adapters, cfg.method_config, args.eps)
    check_budget(res, image)
    out = Path(cfg.output_dir) / f"{item.identifier}_{method.value}_eps{args.eps:g}.png"
    save_png(res.modified, out)
    write_sidecar(res, item, out.with_suffix(".json"))
    dump_config(cfg, Path(cfg.output_dir) / "effective_config.yaml")
    print(out)
    return 0


def cmd_maps(args):
    cfg = _config(args)
    adapters = load_adapters(cfg.adapters, cfg.seed)
    if adapters.saliency is None:
        raise ConfigError("maps needs a saliency adapter")
    image = load_image(args.image)
    if args.side is not None:
        image = preprocess(image, args.side)
    panels = defence_panels(image, adapters.saliency, cfg.sobel)
    out = Path(cfg.output_dir)
    stem = Path(args.image).stem
    files = {
        "original": (to_gray(image), False),
        "sobel": (panels["sobel_blurred"], True),
        "reverse_saliency": (panels["reverse_saliency"], False),
        "final": (panels["mask"], False),
    }
    for name, (field, normalize) in files.items():
        path = out / f"{stem}_{name}.png"
        save_gray_png(field, path, normalize=normalize)
        print(path)
    return 0


def cmd_sweep(args):
    cfg = _config(args, {"epsilons": "epsilons", "methods": "methods"})
    report = run_from_config(cfg)
    print(f"{len(report.records)} cell(s), {report.computed_cells} computed -> {report.output_dir / 'report.csv'}")
    return 0


def cmd_probe(args):
    cfg = _config(args, {"eps": "probe.epsilon", "n": "probe.n"})
    adapters = load_adapters(cfg.adapters, cfg.seed)
    if adapters.aesthetics is None:
        raise ConfigError("probe needs an aesthetics adapter")
    items = prepare_items(load_items(cfg.dataset, cfg.seed), cfg.side)
    before, after = nima_sensitivity_probe(items, adapters.attack, adapters.aesthetics, cfg.probe.epsilon, cfg.probe.n)
    result = {
        "aesthetics_model": adapters.aesthetics.name,
        "epsilon": cfg.probe.epsilon,
        "n": cfg.probe.n,
        "score_before": before,
        "score_after": after,
        "drop": before - after,
    }
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "probe.json").write_text(dumps_json(result, indent=2))
    dump_config(cfg, out / "effective_config.yaml")
    print(dumps_json(result))
    return 0


def cmd_evaluate(args):
    cfg = _config(args)
    adapters = load_adapters(cfg.adapters, cfg.seed)
    rec = evaluate_directory(args.images, adapters, args.class_map)
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        Path(args.out).write_text(dumps_json(rec.to_json(), indent=2))
    print(dumps_json(rec.row()))
    return 0


def _version_text():
    import torch
    import torchvision

    roles = "; ".join(f"{role}: {', '.join(sorted(table))}" for role, table in REGISTRY.items())
    return f"scenecloak {__version__} (torch {torch.__version__}, torchvision {torchvision.__version__})\nadapters: {roles}"


def build_parser():
    parser = argparse.ArgumentParser(prog="scenecloak", description="Conceal images from scene classifiers with masked FGSM.")
    parser.add_argument("--version", action="version", version=_version_text())
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="YAML run config")
        p.add_argument("--output-dir", dest="output_dir")
        p.add_argument("--seed", type=int)
        p.add_argument("--workers", type=int)
        p.add_argument("--side", type=int, help="resize to side x side before processing")
        return p

    p = common(sub.add_parser("perturb", help="perturb a single image"))
    p.add_argument("--method", required=True, choices=[m.value for m in Method])
    p.add_argument("--eps", type=float, required=True)
    p.add_argument("--image", required=True)
    p.add_argument("--label", type=int, help="ground-truth class (default: model's own prediction)")
    p.set_defaults(func=cmd_perturb)

    p = common(sub.add_parser("maps", help="write the mask construction panels"))
    p.add_argument("--image", required=True)
    p.set_defaults(func=cmd_maps)

    p = common(sub.add_parser("sweep", help="run an epsilon sweep"))
    p.add_argument("--epsilons", type=float, nargs="+")
    p.add_argument("--methods", nargs="+", choices=[m.value for m in Method])
    p.set_defaults(func=cmd_sweep)

    p = common(sub.add_parser("probe", help="aesthetics sensitivity probe"))
    p.add_argument("--eps", type=float)
    p.add_argument("--n", type=int)
    p.set_defaults(func=cmd_probe)

    p = common(sub.add_parser("evaluate", help="score a directory of perturbed images"))
    p.add_argument("--images", required=True)
    p.add_argument("--class-map", dest="class_map")
    p.add_argument("--out", help="write the full record as JSON")
    p.set_defaults(func=cmd_evaluate)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"scenecloak: config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except AdapterLoadError as exc:
        print(f"scenecloak: adapter error: {exc}", file=sys.stderr)
        return EXIT_ADAPTER
    except DataError as exc:
        print(f"scenecloak: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (CloakError, ValueError, OSError) as exc:
        print(f"scenecloak: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
