"""Accuracy and aesthetics vs epsilon for every method on the built-in models.

    python3 scripts/run_reference_sweep.py --config configs/reference.yaml
"""
import argparse

from scenecloak.config import load_config
from scenecloak.evaluation import run_from_config


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--config", default="configs/reference.yaml")
    ap.add_argument("--output-dir")
    ap.add_argument("--workers", type=int)
    args = ap.parse_args()

    overrides = {k: v for k, v in (("output_dir", args.output_dir), ("workers", args.workers)) if v is not None}
    report = run_from_config(load_config(args.config, overrides))

    print(f"{report.n_items} correctly classified images, {report.computed_cells} cell(s) computed")
    print(f"{'method':<28}{'eps':>7}{'top1':>8}{'aesthetics':>12}")
    for rec in report.records:
        print(f"{rec.method:<28}{rec.epsilon:>7g}{rec.top1_accuracy:>8.3f}{rec.mean_aesthetics:>12.4f}")
    print(f"report: {report.output_dir / 'report.csv'}")


if __name__ == "__main__":
    main()
