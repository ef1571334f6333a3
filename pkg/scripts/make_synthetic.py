"""Write the seeded synthetic scene set to disk as a class-per-directory tree.

    python3 scripts/make_synthetic.py data/synthetic --n-per-class 50 --size 64
"""
import argparse
from pathlib import Path

from scenecloak.imaging import save_png
from scenecloak.synthetic import CLASS_NAMES, make_synthetic_set


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("out", type=Path)
    ap.add_argument("--n-per-class", type=int, default=25)
    ap.add_argument("--size", type=int, default=32)
    ap.add_argument("--seed", type=int, default=1)
    args = ap.parse_args()

    for item in make_synthetic_set(args.n_per_class, args.size, args.seed):
        save_png(item.image, args.out / CLASS_NAMES[item.label] / f"{item.identifier}.png")
    # class map in the "<name> <index>" format accepted by --class-map
    lines = [f"{name} {i}" for i, name in enumerate(CLASS_NAMES)]
    (args.out / "classes.txt").write_text("\n".join(lines) + "\n")
    print(f"wrote {args.n_per_class * len(CLASS_NAMES)} images to {args.out}")


if __name__ == "__main__":
    main()
